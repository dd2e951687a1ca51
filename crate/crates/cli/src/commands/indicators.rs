use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use disfle::adjustment::{observed_counts, whole_population_adjust, AdjustmentConfig, AgePyramid};
use disfle::cohort::{Covariate, Sex};
use disfle::indicator::{
    disfle_at, disfle_band_at, disfle_curve, profile_curves, write_disfle, DisfleCurve,
    RiskProfile, START_AGE,
};
use disfle::km::{fit_km, km_confidence, write_curves, BandTransform, StepSurvival};

use super::fit::{read_store, FitArtifact};
use super::{csv_bytes, into_bytes, params, source_name};
use crate::error::{CliError, Result};
use crate::manifest::{load, Loaded, RunDir, RunManifest};
use crate::store::{sex_word, stratum_sex, CohortStore};
use crate::svg::{step_band, step_points, Chart, Series};

pub const SUMMARY_AGES: [f64; 2] = [50.0, 65.0];
pub const DEFAULT_SCALING: f64 = 1.4001;

#[derive(Debug, Clone, Args)]
pub struct IndicatorArgs {
    /// Fit artifact: predicted curves for risk profiles.
    #[arg(long, conflicts_with = "store", required_unless_present = "store")]
    pub fit: Option<PathBuf>,
    /// Cohort store: Kaplan-Meier curves by sex.
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[command(flatten)]
    pub options: IndicatorOptions,
}

#[derive(Debug, Clone, Args)]
pub struct IndicatorOptions {
    /// Age pyramid (CSV) for the whole-population adjustment; Kaplan-Meier only.
    #[arg(long, value_name = "PYRAMID")]
    pub adjust: Option<PathBuf>,
    /// Ratio of the full population to the observed one.
    #[arg(long, default_value_t = DEFAULT_SCALING)]
    pub scaling: f64,
    /// Comma-separated risk-profile names; all standard profiles by default.
    #[arg(long)]
    pub profiles: Option<String>,
    /// Horizon of the restricted expectation.
    #[arg(long, default_value_t = 100.0)]
    pub tmax: f64,
    /// Seed for the birth dates of synthetic individuals.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl IndicatorOptions {
    pub fn params(&self) -> Vec<(&'static str, String)> {
        vec![
            ("scaling", self.scaling.to_string()),
            (
                "profiles",
                self.profiles.clone().unwrap_or_else(|| "standard".into()),
            ),
            ("tmax", self.tmax.to_string()),
        ]
    }

    pub fn check(&self) -> Result<()> {
        if !(self.tmax > START_AGE) {
            return Err(CliError::Usage(format!("--tmax must exceed {START_AGE}")));
        }
        Ok(())
    }
}

pub const ADJUST_WITH_COX: &str =
    "--adjust applies to Kaplan-Meier curves only: synthetic disease-free records carry no covariates and \
     cannot enter the Cox model; use --store instead of --fit";

pub fn select_profiles(names: Option<&str>) -> Result<Vec<RiskProfile>> {
    let all = RiskProfile::standard();
    let Some(names) = names else { return Ok(all) };
    names
        .split(',')
        .map(str::trim)
        .filter(|n| !n.is_empty())
        .map(|n| {
            all.iter().find(|p| p.name() == n).cloned().ok_or_else(|| {
                let known: Vec<String> = all.iter().map(RiskProfile::name).collect();
                CliError::Usage(format!(
                    "unknown profile `{n}`; known: {}",
                    known.join(", ")
                ))
            })
        })
        .collect()
}

/// One labelled survival curve with its Dis-FLE curve.
struct Curve {
    name: String,
    sex: Option<Sex>,
    survival: StepSurvival,
    disfle: DisfleCurve,
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or(String::new(), |v| format!("{v:.digits$}"))
}

fn write_summary(
    curves: &[Curve],
    tmax: f64,
    with_name: bool,
    dir: &mut RunDir,
    prefix: &str,
) -> Result<()> {
    let mut rows = Vec::new();
    for age in SUMMARY_AGES {
        for sex in [Sex::Male, Sex::Female] {
            for c in curves.iter().filter(|c| c.sex == Some(sex)) {
                let value = disfle_at(&c.survival, age, tmax).ok();
                let band = disfle_band_at(&c.survival, age, tmax).ok().flatten();
                rows.push((age, sex, c.name.clone(), value, band));
            }
        }
    }
    let mut header = vec!["Age", "Sex", "Dis-FLE", "lower", "upper"];
    if with_name {
        header.push("Profile");
    }
    let bytes = csv_bytes(&header, |w| {
        for (age, sex, name, v, band) in &rows {
            let mut rec = vec![
                format!("{age}"),
                sex_word(*sex).to_string(),
                fmt_opt(*v, 4),
                fmt_opt(band.map(|b| b.0), 4),
                fmt_opt(band.map(|b| b.1), 4),
            ];
            if with_name {
                rec.push(name.clone());
            }
            w.write_record(rec)?;
        }
        Ok(())
    })?;
    dir.write(&format!("{prefix}summary.csv"), &bytes)?;

    let mut md = String::from(if with_name {
        "| Age | Sex | Dis-FLE | Profile |\n|---:|---|---:|---|\n"
    } else {
        "| Age | Sex | Dis-FLE |\n|---:|---|---:|\n"
    });
    for (age, sex, name, v, _) in &rows {
        let cell = v.map_or("—".to_string(), |v| format!("{v:.1}"));
        if with_name {
            md.push_str(&format!(
                "| {age} | {} | {cell} | {name} |\n",
                sex_word(*sex)
            ));
        } else {
            md.push_str(&format!("| {age} | {} | {cell} |\n", sex_word(*sex)));
        }
    }
    dir.write(&format!("{prefix}summary.md"), md.as_bytes())?;
    Ok(())
}

fn write_curves_and_plots(
    curves: &[Curve],
    tmax: f64,
    title: &str,
    dir: &mut RunDir,
    prefix: &str,
) -> Result<()> {
    let survival: BTreeMap<String, StepSurvival> = curves
        .iter()
        .map(|c| (c.name.clone(), c.survival.clone()))
        .collect();
    dir.write(
        &format!("{prefix}survival.csv"),
        &into_bytes(|b| write_curves(&survival, b))?,
    )?;
    dir.write(
        &format!("{prefix}disfle.csv"),
        &into_bytes(|b| write_disfle(curves.iter().map(|c| (&c.name, &c.survival, &c.disfle)), b))?,
    )?;

    let surv_series: Vec<Series> = curves
        .iter()
        .map(|c| {
            let s = &c.survival;
            let band = match (&s.lower, &s.upper) {
                (Some(l), Some(u)) => Some(step_band((START_AGE, 1.0, 1.0), &s.times, l, u, tmax)),
                _ => None,
            };
            Series {
                name: c.name.clone(),
                points: step_points((START_AGE, 1.0), &s.times, &s.values, tmax),
                band,
                dashed: false,
            }
        })
        .collect();
    let y_low = curves
        .iter()
        .flat_map(|c| {
            c.survival
                .lower
                .as_ref()
                .unwrap_or(&c.survival.values)
                .iter()
                .zip(&c.survival.times)
        })
        .filter(|(_, t)| **t <= tmax)
        .map(|(v, _)| *v)
        .fold(1.0f64, f64::min);
    let chart = Chart {
        title: &format!("{title}: disease-free survival"),
        x_label: "Age",
        y_label: "Probability",
        x_range: (START_AGE, tmax),
        y_range: ((y_low * 10.0).floor() / 10.0, 1.0),
        manifest: dir.hash(),
    };
    let svg = chart.render(&surv_series);
    dir.write(&format!("{prefix}survival.svg"), svg.as_bytes())?;

    let dis_series: Vec<Series> = curves
        .iter()
        .map(|c| {
            let d = &c.disfle;
            let band = match (&d.lower, &d.upper) {
                (Some(l), Some(u)) => {
                    Some((0..d.ages.len()).map(|i| (d.ages[i], l[i], u[i])).collect())
                }
                _ => None,
            };
            Series {
                name: c.name.clone(),
                points: d
                    .ages
                    .iter()
                    .copied()
                    .zip(d.values.iter().copied())
                    .collect(),
                band,
                dashed: false,
            }
        })
        .collect();
    let chart = Chart {
        title: &format!("{title}: disease-free life expectancy"),
        x_label: "Age",
        y_label: "Years",
        x_range: (START_AGE, tmax),
        y_range: (0.0, tmax - START_AGE),
        manifest: dir.hash(),
    };
    let svg = chart.render(&dis_series);
    dir.write(&format!("{prefix}disfle.svg"), svg.as_bytes())?;
    Ok(())
}

/// Kaplan-Meier curves by sex, optionally after whole-population adjustment.
pub fn execute_km(
    store: &CohortStore,
    pyramid: Option<&Loaded>,
    options: &IndicatorOptions,
    dir: &mut RunDir,
    prefix: &str,
) -> Result<()> {
    options.check()?;
    let observed = store.exposures()?;
    let exposures = match pyramid {
        None => observed,
        Some(p) => {
            let pyramid = AgePyramid::from_csv(p.bytes.as_slice())
                .map_err(|e| CliError::in_file(source_name(p), e))?;
            let config = AdjustmentConfig {
                scaling: options.scaling,
                seed: options.seed,
                ..AdjustmentConfig::default()
            };
            let adjusted =
                whole_population_adjust(&observed, &observed_counts(&observed), &pyramid, &config)?;
            let bytes = csv_bytes(
                &[
                    "sex",
                    "birth_year",
                    "pyramid",
                    "observed",
                    "scaling",
                    "added",
                    "clamped",
                ],
                |w| {
                    for c in &adjusted.cells {
                        w.write_record([
                            c.sex.code().to_string(),
                            c.birth_year.to_string(),
                            format!("{}", c.pyramid),
                            format!("{}", c.observed),
                            format!("{}", c.scaling),
                            c.added.to_string(),
                            c.clamped.to_string(),
                        ])?;
                    }
                    Ok(())
                },
            )?;
            dir.write(&format!("{prefix}adjustment.csv"), &bytes)?;
            log::info!(
                "added {} synthetic disease-free records",
                adjusted.synthetic()
            );
            adjusted.into_inner()
        }
    };
    let km = fit_km(&exposures, &[Covariate::Sex])?;
    let mut curves = Vec::new();
    for (name, curve) in &km {
        let survival = km_confidence(curve, 0.95, BandTransform::LogLog)?;
        let disfle = disfle_curve(&survival, START_AGE, options.tmax)?;
        curves.push(Curve {
            name: name.clone(),
            sex: stratum_sex(name),
            survival,
            disfle,
        });
    }
    let title = if pyramid.is_some() {
        "Kaplan-Meier, adjusted"
    } else {
        "Kaplan-Meier"
    };
    write_curves_and_plots(&curves, options.tmax, title, dir, prefix)?;
    write_summary(&curves, options.tmax, false, dir, prefix)
}

/// Predicted curves for risk profiles from a fitted Cox model.
pub fn execute_cox(
    artifact: &FitArtifact,
    options: &IndicatorOptions,
    dir: &mut RunDir,
    prefix: &str,
) -> Result<()> {
    options.check()?;
    let profiles = select_profiles(options.profiles.as_deref())?;
    let map = profile_curves(&artifact.fit, &profiles, options.tmax)?;
    let curves: Vec<Curve> = profiles
        .iter()
        .map(|p| {
            let c = &map[&p.name()];
            Curve {
                name: p.name(),
                sex: Some(p.sex),
                survival: c.survival.clone(),
                disfle: c.disfle.clone(),
            }
        })
        .collect();
    write_curves_and_plots(&curves, options.tmax, "Cox model", dir, prefix)?;
    write_summary(&curves, options.tmax, true, dir, prefix)
}

pub fn run(args: &IndicatorArgs, root: &Path) -> Result<PathBuf> {
    let mut p = params([]);
    p.extend(
        args.options
            .params()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v)),
    );
    match (&args.fit, &args.store) {
        (Some(_), _) if args.options.adjust.is_some() => {
            Err(CliError::Usage(ADJUST_WITH_COX.into()))
        }
        (Some(path), _) => {
            let loaded = load("fit", Some(path), None)?;
            let artifact = FitArtifact::read(path, &loaded.bytes)?;
            p.insert("path".into(), "cox".into());
            let mut dir = RunDir::create(
                root,
                RunManifest::new("indicators", args.options.seed, p, vec![loaded.input]),
            )?;
            execute_cox(&artifact, &args.options, &mut dir, "")?;
            dir.finish()
        }
        (None, Some(path)) => {
            let (loaded, store) = read_store(path)?;
            let pyramid = args
                .options
                .adjust
                .as_deref()
                .map(|a| load("pyramid", Some(a), None))
                .transpose()?;
            let mut inputs = vec![loaded.input];
            inputs.extend(pyramid.as_ref().map(|p| p.input.clone()));
            p.insert("path".into(), "km".into());
            let mut dir = RunDir::create(
                root,
                RunManifest::new("indicators", args.options.seed, p, inputs),
            )?;
            execute_km(&store, pyramid.as_ref(), &args.options, &mut dir, "")?;
            dir.finish()
        }
        (None, None) => Err(CliError::Usage(
            "one of --fit or --store is required".into(),
        )),
    }
}
