use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use disfle::cohort::{write_subjects, EventDictionary};
use disfle::validation::{generate_synthetic, SyntheticConfig};

use super::{csv_bytes, dictionary_csv, into_bytes, params, BUNDLED_SYNTHETIC};
use crate::error::{CliError, Result};
use crate::manifest::{load, RunDir, RunManifest};

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    /// Synthetic cohort description (TOML); the bundled one by default.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the seed of the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the number of subjects.
    #[arg(long)]
    pub n: Option<usize>,
    /// Census count per sex and birth year, as a multiple of the generated head count.
    #[arg(long, default_value_t = 1.8)]
    pub pyramid_factor: f64,
}

/// Yearly death probability of the synthetic census.
fn mortality(age: i32) -> f64 {
    (3e-5 * (0.095 * f64::from(age)).exp()).min(0.5)
}

pub fn run(args: &GenerateArgs, root: &Path) -> Result<PathBuf> {
    let source = load("synthetic", args.config.as_deref(), Some(BUNDLED_SYNTHETIC))?;
    let mut config = SyntheticConfig::from_toml(source.text()?)
        .map_err(|e| CliError::in_file(super::source_name(&source), e))?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(n) = args.n {
        config.n = n;
    }
    config.validate()?;
    if !(args.pyramid_factor >= 0.0 && args.pyramid_factor.is_finite()) {
        return Err(CliError::Usage(
            "--pyramid-factor must be a non-negative number".into(),
        ));
    }
    let manifest = RunManifest::new(
        "generate",
        config.seed,
        params([
            ("n", config.n.to_string()),
            ("pyramid_factor", args.pyramid_factor.to_string()),
        ]),
        vec![source.input.clone()],
    );
    let mut dir = RunDir::create(root, manifest)?;
    let cohort = generate_synthetic(&config)?;

    dir.write(
        "subjects.csv",
        &into_bytes(|b| write_subjects(&cohort.subjects, b))?,
    )?;
    dir.write(
        "dictionary.csv",
        dictionary_csv(&EventDictionary::standard())?.as_bytes(),
    )?;
    dir.write("synthetic.toml", config.to_toml().as_bytes())?;

    let mut heads: BTreeMap<(char, i32), f64> = BTreeMap::new();
    for s in &cohort.subjects {
        *heads
            .entry((s.covariates.sex.code(), s.birth_year))
            .or_default() += 1.0;
    }
    let pyramid = csv_bytes(&["sex", "birth_year", "year", "count"], |w| {
        for ((sex, birth_year), n) in &heads {
            let mut count = (n * args.pyramid_factor).round();
            for year in 2010..=2014 {
                w.write_record([
                    sex.to_string(),
                    birth_year.to_string(),
                    year.to_string(),
                    format!("{count}"),
                ])?;
                count = (count * (1.0 - mortality(year - birth_year))).round();
            }
        }
        Ok(())
    })?;
    dir.write("pyramid.csv", &pyramid)?;

    let planted = csv_bytes(&["criterion", "planted"], |w| {
        for (rule, n) in disfle::cohort::ExclusionRules::standard()
            .criteria
            .iter()
            .zip(cohort.planted)
        {
            w.write_record([rule.label().to_string(), n.to_string()])?;
        }
        Ok(())
    })?;
    dir.write("planted.csv", &planted)?;
    log::info!(
        "generated {} subjects, {} exposures",
        cohort.subjects.len(),
        cohort.exposures.len()
    );
    dir.finish()
}
