use std::path::{Path, PathBuf};

use clap::Args;
use disfle::episode::split_episodes;
use disfle::validation::{
    harrell_c, risk_group_calibration, split_train_test, subject_scores, write_calibration,
    DEFAULT_EDGES,
};
use serde::Serialize;

use super::fit::{read_store, FitArtifact};
use super::{into_bytes, params};
use crate::error::{CliError, Result};
use crate::manifest::{load, RunDir, RunManifest};
use crate::store::CohortStore;
use crate::svg::{step_points, Chart, Series};

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    /// Fit artifact written by `fit`.
    #[arg(long)]
    pub fit: PathBuf,
    /// Cohort store the model was trained on.
    #[arg(long)]
    pub store: PathBuf,
    /// Comma-separated upper edges of the linear-predictor classes.
    #[arg(long)]
    pub edges: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct ValidationReport {
    pub manifest: String,
    pub fit_manifest: String,
    pub test_subjects: usize,
    pub c_statistic: f64,
    pub concordant: u64,
    pub discordant: u64,
    pub tied: u64,
    pub comparable: u64,
    pub worst_gap: f64,
}

pub fn parse_edges(text: Option<&str>) -> Result<Vec<f64>> {
    let Some(text) = text else {
        return Ok(DEFAULT_EDGES.to_vec());
    };
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CliError::Usage(format!("--edges: `{s}` is not a number")))
        })
        .collect()
}

/// Scores the held-out partition and compares observed with predicted survival per class.
pub fn execute(
    artifact: &FitArtifact,
    store: &CohortStore,
    edges: &[f64],
    dir: &mut RunDir,
    prefix: &str,
) -> Result<ValidationReport> {
    if artifact.store_manifest != store.manifest {
        return Err(CliError::Data(format!(
            "the fit was trained on cohort store {} but this store is {}",
            artifact.store_manifest, store.manifest
        )));
    }
    let exposures = store.exposures()?;
    let split = split_train_test(
        exposures.iter().map(|e| e.subject_id.as_str()),
        artifact.split.test_fraction,
        artifact.split.seed,
    )?;
    let (_, test) = split.partition(&exposures, |e| e.subject_id.as_str());
    if test.is_empty() {
        return Err(CliError::Data(
            "test partition is empty; refit with --train-frac below 1".into(),
        ));
    }
    let fit = &artifact.fit;
    let episodes = split_episodes(&test, &fit.layout.grid)?;
    let scores = subject_scores(fit, &episodes)?;
    let c = harrell_c(&scores)?;
    let calibration = risk_group_calibration(&fit.baseline, &scores, edges)?;
    dir.write(
        &format!("{prefix}calibration.csv"),
        &into_bytes(|b| write_calibration(&calibration, b))?,
    )?;

    for (k, bin) in calibration.bins.iter().enumerate() {
        let (Some(obs), Some(pred)) = (&bin.observed, &bin.predicted) else {
            continue;
        };
        let end = obs
            .times
            .last()
            .copied()
            .unwrap_or(100.0)
            .max(pred.times.last().copied().unwrap_or(100.0));
        let start = fit.layout.grid.points()[0];
        let series = vec![
            Series {
                name: "observed".into(),
                points: step_points((start, 1.0), &obs.times, &obs.values, end),
                band: None,
                dashed: false,
            },
            Series {
                name: "predicted".into(),
                points: step_points((start, 1.0), &pred.times, &pred.values, end),
                band: None,
                dashed: true,
            },
        ];
        let low = obs
            .values
            .iter()
            .chain(&pred.values)
            .copied()
            .fold(1.0f64, f64::min);
        let title = format!("Linear predictor in {} (n = {})", bin.interval(), bin.count);
        let chart = Chart {
            title: &title,
            x_label: "Age",
            y_label: "Survival",
            x_range: (start, end),
            y_range: ((low * 10.0).floor() / 10.0, 1.0),
            manifest: dir.hash(),
        };
        dir.write(
            &format!("{prefix}calibration_bin{}.svg", k + 1),
            chart.render(&series).as_bytes(),
        )?;
    }

    let report = ValidationReport {
        manifest: dir.hash().to_string(),
        fit_manifest: artifact.manifest.clone(),
        test_subjects: scores.len(),
        c_statistic: c.c,
        concordant: c.concordant,
        discordant: c.discordant,
        tied: c.tied,
        comparable: c.comparable,
        worst_gap: calibration.worst_gap(),
    };
    let json = serde_json::to_vec_pretty(&report).expect("report serializes");
    dir.write(&format!("{prefix}validation.json"), &json)?;
    println!(
        "C-statistic {} on {} held-out subjects",
        c.percent(),
        scores.len()
    );
    Ok(report)
}

pub fn run(args: &ValidateArgs, root: &Path) -> Result<PathBuf> {
    let edges = parse_edges(args.edges.as_deref())?;
    let loaded = load("fit", Some(&args.fit), None)?;
    let artifact = FitArtifact::read(&args.fit, &loaded.bytes)?;
    let (store_input, store) = read_store(&args.store)?;
    let p = params([("edges", format!("{edges:?}"))]);
    let mut dir = RunDir::create(
        root,
        RunManifest::new(
            "validate",
            artifact.split.seed,
            p,
            vec![loaded.input, store_input.input],
        ),
    )?;
    execute(&artifact, &store, &edges, &mut dir, "")?;
    dir.finish()
}
