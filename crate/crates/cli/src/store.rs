//! Columnar cohort store written by `ingest` and read by later commands.

use std::path::Path;

use disfle::cohort::{Covariate, Covariates, Exposure, Provenance, Sex};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const FORMAT: &str = "disfle-cohort";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Columns {
    pub subject_id: Vec<String>,
    pub birth_year: Vec<i32>,
    pub sex: Vec<u8>,
    pub alcohol: Vec<u8>,
    pub obesity: Vec<u8>,
    pub smoking: Vec<u8>,
    pub department: Vec<u8>,
    pub immigration: Vec<u8>,
    pub education: Vec<u8>,
    pub entry_age: Vec<f64>,
    pub exit_age: Vec<f64>,
    pub event: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortStore {
    pub format: String,
    pub version: u32,
    /// Hash of the ingest run that wrote the store.
    pub manifest: String,
    pub rows: usize,
    pub columns: Columns,
}

impl CohortStore {
    pub fn from_exposures(exposures: &[Exposure], manifest: &str) -> Self {
        let mut c = Columns::default();
        for e in exposures {
            let x = &e.covariates;
            c.subject_id.push(e.subject_id.clone());
            c.birth_year.push(e.birth_year);
            c.sex.push(x.sex.level());
            c.alcohol.push(x.alcohol);
            c.obesity.push(x.obesity);
            c.smoking.push(x.smoking);
            c.department.push(x.department);
            c.immigration.push(x.immigration);
            c.education.push(x.education);
            c.entry_age.push(e.entry_age);
            c.exit_age.push(e.exit_age);
            c.event.push(e.event);
        }
        CohortStore {
            format: FORMAT.into(),
            version: VERSION,
            manifest: manifest.into(),
            rows: exposures.len(),
            columns: c,
        }
    }

    pub fn exposures(&self) -> Result<Vec<Exposure>> {
        let c = &self.columns;
        let n = self.rows;
        let lens = [
            c.subject_id.len(),
            c.birth_year.len(),
            c.sex.len(),
            c.alcohol.len(),
            c.obesity.len(),
            c.smoking.len(),
            c.department.len(),
            c.immigration.len(),
            c.education.len(),
            c.entry_age.len(),
            c.exit_age.len(),
            c.event.len(),
        ];
        if lens.iter().any(|l| *l != n) {
            return Err(CliError::Data(format!(
                "cohort store columns disagree with row count {n}"
            )));
        }
        (0..n)
            .map(|i| {
                let covariates = Covariates {
                    sex: if c.sex[i] == 1 {
                        Sex::Male
                    } else {
                        Sex::Female
                    },
                    alcohol: c.alcohol[i],
                    obesity: c.obesity[i],
                    smoking: c.smoking[i],
                    department: c.department[i],
                    immigration: c.immigration[i],
                    education: c.education[i],
                };
                covariates.validate()?;
                if !(c.entry_age[i] < c.exit_age[i]) {
                    return Err(CliError::Data(format!(
                        "cohort store row {i}: entry age not below exit age"
                    )));
                }
                Ok(Exposure {
                    subject_id: c.subject_id[i].clone(),
                    birth_year: c.birth_year[i],
                    covariates,
                    entry_age: c.entry_age[i],
                    exit_age: c.exit_age[i],
                    event: c.event[i],
                    provenance: Provenance::Observed,
                })
            })
            .collect()
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("store serializes")
    }

    pub fn read(path: &Path, bytes: &[u8]) -> Result<Self> {
        let store: CohortStore = serde_json::from_slice(bytes).map_err(|e| CliError::Json {
            path: path.display().to_string(),
            source: e,
        })?;
        if store.format != FORMAT || store.version != VERSION {
            return Err(CliError::Data(format!(
                "{}: expected {FORMAT} version {VERSION}, found {} version {}",
                path.display(),
                store.format,
                store.version
            )));
        }
        Ok(store)
    }
}

/// Sex label used in tables.
pub fn sex_word(sex: Sex) -> &'static str {
    match sex {
        Sex::Male => "Men",
        Sex::Female => "Women",
    }
}

pub fn stratum_sex(label: &str) -> Option<Sex> {
    label
        .split(',')
        .find_map(|p| p.strip_prefix("sex="))
        .and_then(|s| Covariate::Sex.parse_level(s).ok())
        .map(|l| if l == 1 { Sex::Male } else { Sex::Female })
}
