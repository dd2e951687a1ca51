use std::path::{Path, PathBuf};

use clap::Args;
use disfle::cohort::Covariate;
use disfle::cox::{
    fit_cox, hazard_ratio_curve, write_coefficients, CoxFit, CoxOptions, HazardRatioCurve,
};
use disfle::design::{build_design, BlockKind, DesignLayout, ModelSpec};
use disfle::episode::split_episodes;
use disfle::validation::split_train_test;
use serde::{Deserialize, Serialize};

use super::{csv_bytes, into_bytes, params, source_name};
use crate::error::{CliError, Result};
use crate::manifest::{load, Loaded, RunDir, RunManifest};
use crate::store::CohortStore;
use crate::svg::{Chart, Series};

pub const FORMAT: &str = "disfle-fit";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// Cohort store written by `ingest`.
    #[arg(long)]
    pub store: PathBuf,
    /// Model specification (TOML); the standard model by default.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub options: FitOptions,
}

#[derive(Debug, Clone, Args)]
pub struct FitOptions {
    /// Seed of the train/test split.
    #[arg(long, alias = "split-seed", default_value_t = 0)]
    pub seed: u64,
    /// Share of subjects used for fitting; the rest is held out for validation.
    #[arg(long, default_value_t = 0.6)]
    pub train_frac: f64,
    /// Age-grid step in years (overrides the model file).
    #[arg(long)]
    pub grid_step: Option<f64>,
    /// Spline degrees of freedom (overrides the model file).
    #[arg(long)]
    pub df: Option<usize>,
}

impl FitOptions {
    pub fn test_fraction(&self) -> Result<f64> {
        if !(self.train_frac > 0.0 && self.train_frac <= 1.0) {
            return Err(CliError::Usage(format!(
                "--train-frac must lie in (0, 1], got {}",
                self.train_frac
            )));
        }
        Ok(1.0 - self.train_frac)
    }

    pub fn apply(&self, mut spec: ModelSpec) -> Result<ModelSpec> {
        if let Some(step) = self.grid_step {
            spec.grid.step = step;
        }
        if let Some(df) = self.df {
            spec.df = df;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn params(&self) -> Vec<(&'static str, String)> {
        vec![
            ("train_frac", self.train_frac.to_string()),
            (
                "grid_step",
                self.grid_step.map_or("model".into(), |v| v.to_string()),
            ),
            ("df", self.df.map_or("model".into(), |v| v.to_string())),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub seed: u64,
    pub test_fraction: f64,
    pub train_subjects: usize,
    pub test_subjects: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitArtifact {
    pub format: String,
    pub version: u32,
    pub manifest: String,
    /// Manifest hash of the cohort store the model was trained on.
    pub store_manifest: String,
    pub split: SplitInfo,
    pub fit: CoxFit,
}

impl FitArtifact {
    pub fn read(path: &Path, bytes: &[u8]) -> Result<Self> {
        let a: FitArtifact = serde_json::from_slice(bytes).map_err(|e| CliError::Json {
            path: path.display().to_string(),
            source: e,
        })?;
        if a.format != FORMAT || a.version != VERSION {
            return Err(CliError::Data(format!(
                "{}: not a {FORMAT} version {VERSION} artifact",
                path.display()
            )));
        }
        Ok(a)
    }
}

pub fn load_spec(model: &Loaded) -> Result<ModelSpec> {
    ModelSpec::from_toml(model.text()?).map_err(|e| CliError::in_file(source_name(model), e))
}

pub fn read_store(path: &Path) -> Result<(Loaded, CohortStore)> {
    let loaded = load("store", Some(path), None)?;
    let store = CohortStore::read(path, &loaded.bytes)?;
    Ok((loaded, store))
}

/// Midpoints of the grid cells: the ages at which coefficient curves are reported.
fn cell_midpoints(fit: &CoxFit) -> Vec<f64> {
    fit.layout
        .grid
        .points()
        .windows(2)
        .map(|w| 0.5 * (w[0] + w[1]))
        .collect()
}

fn hazard_ratio_curves(fit: &CoxFit) -> Result<Vec<(Covariate, HazardRatioCurve)>> {
    let ages = cell_midpoints(fit);
    let mut out = Vec::new();
    for b in fit
        .layout
        .blocks
        .iter()
        .filter(|b| b.kind == BlockKind::AgeDependent)
    {
        let [c] = b.covariates[..] else { continue };
        let level = b.levels[0];
        out.push((c, hazard_ratio_curve(fit, c, level, &ages)?));
    }
    Ok(out)
}

fn write_outputs(artifact: &FitArtifact, dir: &mut RunDir, prefix: &str) -> Result<()> {
    let fit = &artifact.fit;
    let json = serde_json::to_vec(artifact).expect("fit serializes");
    dir.write(&format!("{prefix}fit.json"), &json)?;
    let table = fit.coefficient_table();
    dir.write(
        &format!("{prefix}coefficients.csv"),
        &into_bytes(|b| write_coefficients(&table, b))?,
    )?;

    let department: Vec<_> = table
        .iter()
        .filter(|r| r.term == Covariate::Department.name() && r.basis_index.is_none())
        .collect();
    if !department.is_empty() {
        let reference = fit.layout.spec.reference_of(Covariate::Department)?;
        let bytes = csv_bytes(
            &["department", "beta", "se", "hazard_ratio", "lower", "upper"],
            |w| {
                w.write_record([
                    Covariate::Department.level_label(reference),
                    "0".into(),
                    "0".into(),
                    "1".into(),
                    "1".into(),
                    "1".into(),
                ])?;
                for r in &department {
                    w.write_record([
                        r.level.clone(),
                        format!("{:.10}", r.beta),
                        format!("{:.10}", r.se),
                        format!("{:.10}", r.hazard_ratio),
                        format!("{:.10}", (r.beta - 1.959963984540054 * r.se).exp()),
                        format!("{:.10}", (r.beta + 1.959963984540054 * r.se).exp()),
                    ])?;
                }
                Ok(())
            },
        )?;
        dir.write(&format!("{prefix}department_effects.csv"), &bytes)?;
    }

    let curves = hazard_ratio_curves(fit)?;
    if !curves.is_empty() {
        let bytes = csv_bytes(
            &["term", "level", "age", "hazard_ratio", "lower", "upper"],
            |w| {
                for (_, c) in &curves {
                    for i in 0..c.ages.len() {
                        w.write_record([
                            c.term.clone(),
                            c.level.clone(),
                            format!("{:.3}", c.ages[i]),
                            format!("{:.10}", c.ratios[i]),
                            format!("{:.10}", c.lower[i]),
                            format!("{:.10}", c.upper[i]),
                        ])?;
                    }
                }
                Ok(())
            },
        )?;
        dir.write(&format!("{prefix}hazard_ratios.csv"), &bytes)?;
        let mut terms: Vec<Covariate> = curves.iter().map(|(c, _)| *c).collect();
        terms.dedup();
        let grid = fit.layout.grid.points();
        for term in terms {
            let series: Vec<Series> = curves
                .iter()
                .filter(|(c, _)| *c == term)
                .map(|(_, c)| Series {
                    name: format!("{}={}", c.term, c.level),
                    points: c
                        .ages
                        .iter()
                        .copied()
                        .zip(c.ratios.iter().copied())
                        .collect(),
                    band: Some(
                        (0..c.ages.len())
                            .map(|i| (c.ages[i], c.lower[i], c.upper[i]))
                            .collect(),
                    ),
                    dashed: false,
                })
                .collect();
            let top = curves
                .iter()
                .filter(|(c, _)| *c == term)
                .flat_map(|(_, c)| c.upper.iter().copied())
                .fold(1.5f64, f64::max)
                .min(10.0);
            let title = format!("Hazard ratio by age: {term}");
            let chart = Chart {
                title: &title,
                x_label: "Age",
                y_label: "Hazard ratio",
                x_range: (grid[0], grid[grid.len() - 1]),
                y_range: (0.0, top.ceil()),
                manifest: dir.hash(),
            };
            let svg = chart.render(&series);
            dir.write(&format!("{prefix}hr_{}.svg", term.name()), svg.as_bytes())?;
        }
    }
    Ok(())
}

/// Fits the model on the training partition and writes the artifact and tables.
pub fn execute(
    store: &CohortStore,
    spec: ModelSpec,
    options: &FitOptions,
    dir: &mut RunDir,
    prefix: &str,
) -> Result<FitArtifact> {
    let test_fraction = options.test_fraction()?;
    let exposures = store.exposures()?;
    let split = split_train_test(
        exposures.iter().map(|e| e.subject_id.as_str()),
        test_fraction,
        options.seed,
    )?;
    let (train, test) = split.partition(&exposures, |e| e.subject_id.as_str());
    if train.is_empty() {
        return Err(CliError::Data("training partition is empty".into()));
    }
    let episodes = split_episodes(&train, &spec.grid()?)?;
    let layout = DesignLayout::with_event_knots(spec, &episodes)?;
    let design = build_design(&episodes, &layout)?;
    let fit = fit_cox(&design, &CoxOptions::default())?;
    log::info!(
        "fitted {} columns on {} episodes ({} events) in {} iterations",
        fit.beta.len(),
        fit.episodes,
        fit.events,
        fit.convergence.iterations
    );
    let artifact = FitArtifact {
        format: FORMAT.into(),
        version: VERSION,
        manifest: dir.hash().to_string(),
        store_manifest: store.manifest.clone(),
        split: SplitInfo {
            seed: options.seed,
            test_fraction,
            train_subjects: train.len(),
            test_subjects: test.len(),
        },
        fit,
    };
    write_outputs(&artifact, dir, prefix)?;
    Ok(artifact)
}

pub fn run(args: &FitArgs, root: &Path) -> Result<PathBuf> {
    let (store_input, store) = read_store(&args.store)?;
    let model = load(
        "model",
        args.model.as_deref(),
        Some(&ModelSpec::standard().to_toml()),
    )?;
    let spec = args.options.apply(load_spec(&model)?)?;
    let mut p = params([]);
    p.extend(
        args.options
            .params()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v)),
    );
    let manifest = RunManifest::new(
        "fit",
        args.options.seed,
        p,
        vec![store_input.input, model.input],
    );
    let mut dir = RunDir::create(root, manifest)?;
    execute(&store, spec, &args.options, &mut dir, "")?;
    dir.finish()
}
