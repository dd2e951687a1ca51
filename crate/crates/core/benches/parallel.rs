//! Single-thread pool against the default pool on the same workload.
//! Build with `--no-default-features` to measure the sequential fallback.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use disfle::cohort::Covariate;
use disfle::cox::{fit_cox, CoxOptions};
use disfle::design::{build_design, DesignLayout, ModelSpec, TermSpec};
use disfle::episode::split_episodes;
use disfle::validation::{
    generate_synthetic, Baseline, Censoring, Effect, Prevalence, SyntheticConfig,
};

fn workload() -> (Vec<disfle::episode::Episode>, DesignLayout) {
    let config = SyntheticConfig {
        n: 20_000,
        seed: 3,
        birth_years: [1920, 1963],
        censoring: Censoring::Administrative,
        baseline: Baseline::Piecewise {
            breaks: vec![70.0, 85.0],
            rates: vec![0.01, 0.04, 0.12],
        },
        prevalences: vec![Prevalence {
            covariate: Covariate::Smoking,
            levels: vec![0.2, 0.1],
            uniform: false,
        }],
        correlations: vec![],
        effects: vec![Effect {
            covariate: Covariate::Smoking,
            level: 2,
            breaks: vec![],
            hazard_ratios: vec![2.0],
        }],
        interactions: vec![],
        exclusion_rate: 0.0,
        death_share: 0.0,
    };
    let exposures = generate_synthetic(&config).unwrap().exposures;
    let spec = ModelSpec {
        terms: vec![
            TermSpec {
                covariate: Covariate::Sex,
                age_dependent: true,
                reference: None,
            },
            TermSpec {
                covariate: Covariate::Smoking,
                age_dependent: false,
                reference: None,
            },
        ],
        interactions: vec![],
        ..ModelSpec::standard()
    };
    let episodes = split_episodes(&exposures, &spec.grid().unwrap()).unwrap();
    let layout = DesignLayout::with_event_knots(spec, &episodes).unwrap();
    (episodes, layout)
}

fn bench(c: &mut Criterion) {
    let (episodes, layout) = workload();
    let design = build_design(&episodes, &layout).unwrap();
    let pools = [
        (
            "1 thread",
            rayon::ThreadPoolBuilder::new()
                .num_threads(1)
                .build()
                .unwrap(),
        ),
        ("default", rayon::ThreadPoolBuilder::new().build().unwrap()),
    ];
    let mut group = c.benchmark_group("cox");
    group.sample_size(10);
    for (name, pool) in &pools {
        group.bench_with_input(BenchmarkId::new("design", name), &(), |b, _| {
            b.iter(|| pool.install(|| build_design(&episodes, &layout).unwrap()))
        });
        group.bench_with_input(BenchmarkId::new("fit", name), &(), |b, _| {
            b.iter(|| pool.install(|| fit_cox(&design, &CoxOptions::default()).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
