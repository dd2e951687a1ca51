use std::path::{Path, PathBuf};

use clap::Args;
use disfle::cohort::{
    apply_exclusions, build_exposures, descriptive_stats, parse_dictionary, parse_subjects,
    EventDictionary, ExclusionReport, ExclusionRules, ObservationWindow,
};

use super::{csv_bytes, dictionary_csv, params, source_name};
use crate::error::{CliError, Result};
use crate::manifest::{load, Loaded, RunDir, RunManifest};
use crate::store::CohortStore;

#[derive(Debug, Clone, Args)]
pub struct IngestArgs {
    /// Discharge-level subject rows (CSV).
    #[arg(long)]
    pub subjects: PathBuf,
    /// Event dictionary (CSV); the standard one by default.
    #[arg(long)]
    pub dictionary: Option<PathBuf>,
    /// Exclusion criteria (TOML); the standard ones by default.
    #[arg(long)]
    pub exclusions: Option<PathBuf>,
    /// Seed for the imputed birth dates.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Drop malformed rows instead of failing.
    #[arg(long)]
    pub skip_invalid: bool,
}

pub struct IngestInputs {
    pub subjects: Loaded,
    pub dictionary: Loaded,
    pub exclusions: Loaded,
}

impl IngestInputs {
    pub fn load(
        subjects: Loaded,
        dictionary: Option<&Path>,
        exclusions: Option<&Path>,
    ) -> Result<Self> {
        let standard_dict = dictionary_csv(&EventDictionary::standard())?;
        let standard_rules = ExclusionRules::standard().to_toml();
        Ok(IngestInputs {
            subjects,
            dictionary: load("dictionary", dictionary, Some(&standard_dict))?,
            exclusions: load("exclusions", exclusions, Some(&standard_rules))?,
        })
    }

    pub fn manifest_inputs(&self) -> Vec<crate::manifest::Input> {
        vec![
            self.subjects.input.clone(),
            self.dictionary.input.clone(),
            self.exclusions.input.clone(),
        ]
    }
}

fn report_csv(report: &ExclusionReport, dropped: usize) -> Result<Vec<u8>> {
    csv_bytes(&["criterion", "before", "removed", "remaining"], |w| {
        for r in &report.rows {
            w.write_record([
                r.criterion.clone(),
                r.before.to_string(),
                r.removed.to_string(),
                r.remaining.to_string(),
            ])?;
        }
        if let Some(last) = report.rows.last() {
            w.write_record([
                "no exposure time in window".to_string(),
                last.remaining.to_string(),
                dropped.to_string(),
                (last.remaining - dropped).to_string(),
            ])?;
        }
        Ok(())
    })
}

/// Parses, excludes and builds exposures; writes the store, report and summary.
pub fn execute(
    inputs: &IngestInputs,
    seed: u64,
    skip_invalid: bool,
    dir: &mut RunDir,
    prefix: &str,
) -> Result<CohortStore> {
    let dict_name = source_name(&inputs.dictionary);
    let dictionary = parse_dictionary(inputs.dictionary.bytes.as_slice())
        .map_err(|e| CliError::in_file(&dict_name, e))?;
    let rules = ExclusionRules::from_toml(inputs.exclusions.text()?)
        .map_err(|e| CliError::in_file(source_name(&inputs.exclusions), e))?;
    let name = source_name(&inputs.subjects);
    let parsed = parse_subjects(inputs.subjects.bytes.as_slice(), &dictionary, seed)
        .map_err(|e| CliError::in_file(&name, e))?;
    for e in &parsed.errors {
        eprintln!("{name}:{}: {}", e.line, e.message);
    }
    if !parsed.errors.is_empty() && !skip_invalid {
        return Err(CliError::Data(format!(
            "{name}: {} malformed row(s); fix them or pass --skip-invalid",
            parsed.errors.len()
        )));
    }
    let n_subjects = parsed.subjects.len();
    let (kept, report) = apply_exclusions(parsed.subjects, &rules, &dictionary)?;
    let built = build_exposures(&kept, &ObservationWindow::default(), &dictionary);

    let store = CohortStore::from_exposures(&built.exposures, dir.hash());
    dir.write(&format!("{prefix}cohort.json"), &store.to_json())?;
    let report_bytes = if n_subjects == 0 {
        csv_bytes(&["criterion", "before", "removed", "remaining"], |_| Ok(()))?
    } else {
        report_csv(&report, built.dropped)?
    };
    dir.write(&format!("{prefix}exclusions.csv"), &report_bytes)?;
    if !built.exposures.is_empty() {
        let summary = descriptive_stats(&built.exposures)?;
        dir.write(
            &format!("{prefix}summary.md"),
            summary.to_markdown().as_bytes(),
        )?;
    }
    log::info!(
        "{n_subjects} subjects, {} excluded, {} exposures ({} without exposure time)",
        report.total_removed(),
        built.exposures.len(),
        built.dropped
    );
    Ok(store)
}

pub fn run(args: &IngestArgs, root: &Path) -> Result<PathBuf> {
    let inputs = IngestInputs::load(
        load("subjects", Some(&args.subjects), None)?,
        args.dictionary.as_deref(),
        args.exclusions.as_deref(),
    )?;
    let manifest = RunManifest::new(
        "ingest",
        args.seed,
        params([("skip_invalid", args.skip_invalid.to_string())]),
        inputs.manifest_inputs(),
    );
    let mut dir = RunDir::create(root, manifest)?;
    execute(&inputs, args.seed, args.skip_invalid, &mut dir, "")?;
    dir.finish()
}
