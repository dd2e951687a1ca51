use std::path::{Path, PathBuf};

use clap::Args;

use super::fit::{self, FitOptions};
use super::indicators::{self, IndicatorOptions};
use super::ingest::{self, IngestInputs};
use super::validate;
use super::{params, BUNDLED_MODEL, BUNDLED_PYRAMID, BUNDLED_SUBJECTS};
use crate::error::Result;
use crate::manifest::{load, RunDir, RunManifest};

#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    /// Subject rows (CSV); the bundled synthetic cohort by default.
    #[arg(long)]
    pub subjects: Option<PathBuf>,
    /// Event dictionary (CSV); the standard one by default
    #[arg(long)]
    pub dictionary: Option<PathBuf>,
    /// Exclusion criteria (TOML); the standard ones by default
    #[arg(long)]
    pub exclusions: Option<PathBuf>,
    /// Model specification (TOML); the bundled one by default.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Age pyramid for the adjusted Kaplan-Meier curves; the bundled one by default.
    #[arg(long)]
    pub pyramid: Option<PathBuf>,
    /// Seed for birth-date imputation and synthetic records.
    #[arg(long = "ingest-seed", default_value_t = 0)]
    pub ingest_seed: u64,
    #[command(flatten)]
    pub fit: FitOptions,
    /// Ratio of the full population to the observed one
    #[arg(long, default_value_t = indicators::DEFAULT_SCALING)]
    pub scaling: f64,
    /// Comma-separated risk-profile names; all standard profiles by default
    #[arg(long)]
    pub profiles: Option<String>,
    /// Horizon of the restricted expectation
    #[arg(long, default_value_t = 100.0)]
    pub tmax: f64,
}

/// ingest → fit → indicators (Kaplan-Meier, adjusted Kaplan-Meier, Cox) → validate, in one run directory.
pub fn run(args: &PipelineArgs, root: &Path) -> Result<PathBuf> {
    let subjects = load("subjects", args.subjects.as_deref(), Some(BUNDLED_SUBJECTS))?;
    let inputs = IngestInputs::load(
        subjects,
        args.dictionary.as_deref(),
        args.exclusions.as_deref(),
    )?;
    let model = load("model", args.model.as_deref(), Some(BUNDLED_MODEL))?;
    let pyramid = load("pyramid", args.pyramid.as_deref(), Some(BUNDLED_PYRAMID))?;
    let spec = args.fit.apply(fit::load_spec(&model)?)?;
    let options = IndicatorOptions {
        adjust: None,
        scaling: args.scaling,
        profiles: args.profiles.clone(),
        tmax: args.tmax,
        seed: args.ingest_seed,
    };
    options.check()?;
    indicators::select_profiles(options.profiles.as_deref())?;
    args.fit.test_fraction()?;

    let mut p = params([("ingest_seed", args.ingest_seed.to_string())]);
    p.extend(
        args.fit
            .params()
            .into_iter()
            .chain(options.params())
            .map(|(k, v)| (k.to_string(), v)),
    );
    let mut all = inputs.manifest_inputs();
    all.extend([model.input.clone(), pyramid.input.clone()]);
    let mut dir = RunDir::create(root, RunManifest::new("pipeline", args.fit.seed, p, all))?;

    let store = ingest::execute(&inputs, args.ingest_seed, false, &mut dir, "ingest/")?;
    indicators::execute_km(&store, None, &options, &mut dir, "km/")?;
    indicators::execute_km(&store, Some(&pyramid), &options, &mut dir, "km-adjusted/")?;
    let artifact = fit::execute(&store, spec, &args.fit, &mut dir, "fit/")?;
    indicators::execute_cox(&artifact, &options, &mut dir, "cox/")?;
    if artifact.split.test_subjects > 0 {
        validate::execute(
            &artifact,
            &store,
            &disfle::validation::DEFAULT_EDGES,
            &mut dir,
            "validate/",
        )?;
    }
    dir.finish()
}
