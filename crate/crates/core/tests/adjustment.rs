use std::collections::BTreeMap;

use disfle::adjustment::{
    observed_counts, whole_population_adjust, AdjustmentConfig, AgePyramid, ScalingBand,
};
use disfle::cohort::{Covariate, Exposure, Sex};
use disfle::km::fit_km;
use disfle::validation::{generate_synthetic, Baseline, Censoring, SyntheticConfig};
use disfle::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cohort(seed: u64) -> Vec<Exposure> {
    let c = SyntheticConfig {
        n: 8000,
        seed,
        birth_years: [1920, 1960],
        censoring: Censoring::Administrative,
        baseline: Baseline::Piecewise {
            breaks: vec![70.0, 85.0],
            rates: vec![0.01, 0.04, 0.12],
        },
        prevalences: vec![],
        correlations: vec![],
        effects: vec![],
        interactions: vec![],
        exclusion_rate: 0.0,
        death_share: 0.0,
    };
    generate_synthetic(&c).unwrap().exposures
}

/// Census counts a random multiple of the observed ones, shrinking each year.
fn pyramid(observed: &BTreeMap<(Sex, i32), f64>, seed: u64) -> AgePyramid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = AgePyramid::new();
    for (&(sex, birth_year), &count) in observed {
        let mut n = (count * rng.random_range(1.2..1.9)).round();
        for year in 2010..=2014 {
            p.insert(sex, birth_year, year, n).unwrap();
            n = (n * rng.random_range(0.9..1.0)).round();
        }
    }
    p
}

#[test]
fn added_counts_follow_pyramid_minus_scaled_observed() {
    let obs = cohort(1);
    let counts = observed_counts(&obs);
    let p = pyramid(&counts, 1);
    let config = AdjustmentConfig {
        scaling: 1.4001,
        ..AdjustmentConfig::default()
    };
    let adj = whole_population_adjust(&obs, &counts, &p, &config).unwrap();
    let mut target: BTreeMap<Sex, f64> = BTreeMap::new();
    let mut added: BTreeMap<Sex, usize> = BTreeMap::new();
    for cell in &adj.cells {
        let want = (cell.pyramid - 1.4001 * cell.observed).max(0.0);
        assert_eq!(
            cell.pyramid,
            p.get(cell.sex, cell.birth_year, 2010).unwrap()
        );
        assert_eq!(cell.observed, counts[&(cell.sex, cell.birth_year)]);
        assert_eq!(cell.clamped, cell.pyramid < 1.4001 * cell.observed);
        // rounding remainders carry to the next cohort
        assert!((cell.added as f64 - want).abs() < 1.0, "{cell:?}");
        assert_eq!(cell.censored.iter().sum::<usize>(), cell.added);
        *target.entry(cell.sex).or_default() += want;
        *added.entry(cell.sex).or_default() += cell.added;
    }
    for (sex, t) in target {
        assert!((added[&sex] as f64 - t).abs() <= 0.5 + 1e-9, "{sex:?}");
    }
    assert_eq!(adj.cells.len(), counts.len());
}

#[test]
fn synthetic_attrition_tracks_pyramid() {
    let obs = cohort(2);
    let counts = observed_counts(&obs);
    let p = pyramid(&counts, 2);
    let adj = whole_population_adjust(&obs, &counts, &p, &AdjustmentConfig::default()).unwrap();
    for cell in adj.cells.iter().filter(|c| c.added > 0) {
        let base = p.get(cell.sex, cell.birth_year, 2010).unwrap();
        let mut alive = cell.added;
        for (k, gone) in cell.censored.iter().take(3).enumerate() {
            alive -= gone;
            let want = cell.added as f64
                * p.get(cell.sex, cell.birth_year, 2011 + k as i32).unwrap()
                / base;
            assert!((alive as f64 - want).abs() <= 0.5 + 1e-9, "{cell:?}");
        }
    }
}

#[test]
fn synthetic_rows_are_event_free_and_observed_rows_untouched() {
    let obs = cohort(3);
    let counts = observed_counts(&obs);
    let p = pyramid(&counts, 3);
    let adj = whole_population_adjust(&obs, &counts, &p, &AdjustmentConfig::default()).unwrap();
    assert_eq!(&adj.exposures()[..obs.len()], &obs[..]);
    let synthetic = &adj.exposures()[obs.len()..];
    assert_eq!(synthetic.len(), adj.synthetic());
    assert!(synthetic.iter().all(|e| e.is_synthetic() && !e.event));
    for e in synthetic {
        assert!(counts.contains_key(&(e.covariates.sex, e.birth_year)));
        assert!(50.0 <= e.entry_age && e.entry_age < e.exit_age && e.length() <= 4.0 + 1.0 / 365.0);
    }
    // all cells hold adults past 50 in 2010 so nobody is dropped
    assert_eq!(
        adj.synthetic(),
        adj.cells.iter().map(|c| c.added).sum::<usize>()
    );
    assert!(matches!(
        whole_population_adjust(adj.exposures(), &counts, &p, &AdjustmentConfig::default()),
        Err(Error::AlreadyAdjusted)
    ));
}

#[test]
fn adjusted_curves_lie_above_unadjusted() {
    for seed in 4..7 {
        let obs = cohort(seed);
        let counts = observed_counts(&obs);
        let p = pyramid(&counts, seed);
        let adj = whole_population_adjust(&obs, &counts, &p, &AdjustmentConfig::default()).unwrap();
        let before = fit_km(&obs, &[Covariate::Sex]).unwrap();
        let after = fit_km(adj.exposures(), &[Covariate::Sex]).unwrap();
        for (label, b) in &before {
            let a = &after[label];
            assert_eq!(a.times, b.times);
            for t in &b.times {
                assert!(a.at(*t) >= b.at(*t), "{label} at {t}");
            }
        }
    }
}

#[test]
fn age_bands_override_scaling() {
    let obs = cohort(7);
    let counts = observed_counts(&obs);
    let p = pyramid(&counts, 7);
    let config = AdjustmentConfig {
        bands: vec![ScalingBand {
            from_age: 50,
            to_age: 60,
            scaling: 1.1,
        }],
        ..AdjustmentConfig::default()
    };
    let adj = whole_population_adjust(&obs, &counts, &p, &config).unwrap();
    for cell in &adj.cells {
        let age = 2010 - cell.birth_year;
        let want = if (50..60).contains(&age) {
            1.1
        } else {
            config.scaling
        };
        assert_eq!(cell.scaling, want);
    }
    let bad = AdjustmentConfig {
        scaling: 0.9,
        ..AdjustmentConfig::default()
    };
    assert!(whole_population_adjust(&obs, &counts, &p, &bad)
        .unwrap_err()
        .is_config());
}

#[test]
fn missing_pyramid_cell_is_an_error() {
    let obs = cohort(8);
    let counts = observed_counts(&obs);
    let p = AgePyramid::from_csv("sex,birth_year,count\nF,1950,100\n".as_bytes()).unwrap();
    assert!(matches!(
        whole_population_adjust(&obs, &counts, &p, &AdjustmentConfig::default()),
        Err(Error::MissingPyramidCell { .. })
    ));
}
