use std::collections::HashMap;

use disfle::cohort::{
    apply_exclusions, build_exposures, descriptive_stats, Covariate, EventDictionary,
    ExclusionRules, Exposure, ObservationWindow,
};
use disfle::validation::{
    generate_synthetic, Baseline, Censoring, Correlation, Prevalence, SyntheticConfig,
};

fn config(n: usize, seed: u64) -> SyntheticConfig {
    SyntheticConfig {
        n,
        seed,
        birth_years: [1915, 1963],
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
        death_share: 0.2,
    }
}

#[test]
fn exclusion_report_counts_planted_subjects() {
    for seed in [1, 2, 3] {
        let mut c = config(1000, seed);
        c.exclusion_rate = 0.2;
        let cohort = generate_synthetic(&c).unwrap();
        let dict = EventDictionary::standard();
        let (kept, report) =
            apply_exclusions(cohort.subjects.clone(), &ExclusionRules::standard(), &dict).unwrap();
        let removed: Vec<usize> = report.rows.iter().map(|r| r.removed).collect();
        assert_eq!(removed, cohort.planted.to_vec(), "seed {seed}");
        assert!(report.telescopes());
        assert_eq!(report.rows[0].before, 1000);
        assert_eq!(kept.len(), 1000 - cohort.planted.iter().sum::<usize>());
    }
}

#[test]
fn built_exposures_match_generated_ones() {
    let mut c = config(5000, 4);
    c.exclusion_rate = 0.1;
    let cohort = generate_synthetic(&c).unwrap();
    let dict = EventDictionary::standard();
    let (kept, _) =
        apply_exclusions(cohort.subjects.clone(), &ExclusionRules::standard(), &dict).unwrap();
    let built = build_exposures(&kept, &ObservationWindow::default(), &dict);
    let truth: HashMap<&str, &Exposure> = cohort
        .exposures
        .iter()
        .map(|e| (e.subject_id.as_str(), e))
        .collect();
    assert_eq!(built.exposures.len(), truth.len());
    for e in &built.exposures {
        let t = truth[e.subject_id.as_str()];
        assert_eq!(e.event, t.event, "{}", e.subject_id);
        assert!((e.entry_age - t.entry_age).abs() < 1e-9);
        // dates are whole days
        assert!(
            (e.exit_age - t.exit_age).abs() <= 1.0 / 365.0,
            "{} vs {}",
            e.exit_age,
            t.exit_age
        );
    }
}

#[test]
fn exposure_intervals_stay_inside_window_and_age_band() {
    let cohort = generate_synthetic(&config(20_000, 5)).unwrap();
    let dict = EventDictionary::standard();
    let built = build_exposures(&cohort.subjects, &ObservationWindow::default(), &dict);
    assert_eq!(built.exposures.len() + built.dropped, cohort.subjects.len());
    for e in &built.exposures {
        assert!(
            50.0 <= e.entry_age && e.entry_age < e.exit_age && e.exit_age <= 105.0,
            "{e:?}"
        );
        assert!(e.length() <= 4.0 + 1.0 / 365.0, "{e:?}");
    }
}

#[test]
fn exposure_construction_is_order_independent_and_idempotent() {
    let cohort = generate_synthetic(&config(3000, 6)).unwrap();
    let dict = EventDictionary::standard();
    let w = ObservationWindow::default();
    let forward = build_exposures(&cohort.subjects, &w, &dict).exposures;
    let again = build_exposures(&cohort.subjects, &w, &dict).exposures;
    assert_eq!(forward, again);
    let mut reversed_subjects = cohort.subjects.clone();
    reversed_subjects.reverse();
    let mut reversed = build_exposures(&reversed_subjects, &w, &dict).exposures;
    reversed.reverse();
    assert_eq!(forward, reversed);
}

#[test]
fn planted_correlation_is_recovered() {
    let mut c = config(100_000, 7);
    c.prevalences = vec![
        Prevalence {
            covariate: Covariate::Alcohol,
            levels: vec![0.2, 0.1],
            uniform: false,
        },
        Prevalence {
            covariate: Covariate::Smoking,
            levels: vec![0.15, 0.15],
            uniform: false,
        },
    ];
    c.correlations = vec![Correlation {
        a: Covariate::Alcohol,
        b: Covariate::Smoking,
        rho: 0.22,
    }];
    let cohort = generate_synthetic(&c).unwrap();
    let summary = descriptive_stats(&cohort.exposures).unwrap();
    let r = summary
        .correlation(Covariate::Alcohol, Covariate::Smoking)
        .unwrap();
    assert!((r - 0.22).abs() <= 0.02, "correlation {r}");
}

#[test]
fn summary_table_layout() {
    let cohort = generate_synthetic(&config(2000, 8)).unwrap();
    let summary = descriptive_stats(&cohort.exposures).unwrap();
    assert_eq!(summary.n[0] + summary.n[1], summary.n[2]);
    assert_eq!(summary.n[2], cohort.exposures.len());
    let rows = summary.rows();
    assert_eq!(rows[0].section, "Number of individuals");
    assert_eq!(rows[1].section, "Age at start of exposure");
    assert_eq!(rows[2].section, "Exposure (years)");
    for block in &summary.categories {
        for (_, counts) in &block.counts {
            assert_eq!(counts[0] + counts[1], counts[2]);
        }
        assert_eq!(
            block.counts.iter().map(|(_, c)| c[2]).sum::<usize>(),
            summary.n[2]
        );
    }
    let md = summary.to_markdown();
    assert!(md.starts_with("| | Female | Male | Entire population |"));
    let body = md.lines().take_while(|l| !l.is_empty()).count();
    let sections = rows
        .iter()
        .map(|r| &r.section)
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    assert_eq!(body, 2 + rows.len() + sections);
}
