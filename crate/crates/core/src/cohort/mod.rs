//! Subject-level records: ingestion, exclusions, exposure windows and
//! descriptive statistics.

mod exclusion;
mod exposure;
mod parse;
mod stats;

pub use exclusion::{
    apply_exclusions, ExclusionReport, ExclusionRow, ExclusionRule, ExclusionRules,
};
pub use exposure::{build_exposures, ExposureBuild, ObservationWindow};
pub use parse::{
    impute_birth_date, parse_dictionary, parse_subjects, write_subjects, ParsedSubjects, RowError,
};
pub use stats::{
    descriptive_stats, group_thousands, pearson, CohortSummary, Correlation, MedianIqr, SummaryRow,
    GROUPS,
};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Department used as reference level for the geographic effect.
pub const REFERENCE_DEPARTMENT: u8 = 78;
pub const DEPARTMENT_COUNT: u8 = 96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sex {
    #[serde(rename = "F")]
    Female,
    #[serde(rename = "M")]
    Male,
}

impl Sex {
    pub fn code(self) -> char {
        match self {
            Sex::Female => 'F',
            Sex::Male => 'M',
        }
    }

    pub fn level(self) -> u8 {
        match self {
            Sex::Female => 0,
            Sex::Male => 1,
        }
    }
}

impl FromStr for Sex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "F" | "f" => Ok(Sex::Female),
            "M" | "m" => Ok(Sex::Male),
            other => Err(Error::Input(format!("sex must be F or M, got `{other}`"))),
        }
    }
}

/// Covariates recorded per subject, all constant over time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Covariate {
    Sex,
    Alcohol,
    Obesity,
    Smoking,
    Department,
    Immigration,
    Education,
}

impl Covariate {
    pub const ALL: [Covariate; 7] = [
        Covariate::Sex,
        Covariate::Alcohol,
        Covariate::Obesity,
        Covariate::Smoking,
        Covariate::Department,
        Covariate::Immigration,
        Covariate::Education,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Covariate::Sex => "sex",
            Covariate::Alcohol => "alcohol",
            Covariate::Obesity => "obesity",
            Covariate::Smoking => "smoking",
            Covariate::Department => "department",
            Covariate::Immigration => "immigration",
            Covariate::Education => "education",
        }
    }

    /// Admissible levels, in increasing order.
    pub fn levels(self) -> Vec<u8> {
        match self {
            Covariate::Sex => vec![0, 1],
            Covariate::Alcohol | Covariate::Obesity | Covariate::Smoking => vec![0, 1, 2],
            Covariate::Immigration | Covariate::Education => vec![0, 1, 2, 3],
            Covariate::Department => (1..=DEPARTMENT_COUNT).collect(),
        }
    }

    pub fn default_reference(self) -> u8 {
        match self {
            Covariate::Department => REFERENCE_DEPARTMENT,
            _ => 0,
        }
    }

    pub fn level_label(self, level: u8) -> String {
        match self {
            Covariate::Sex => if level == 1 { "M" } else { "F" }.to_string(),
            Covariate::Department => format!("{level:02}"),
            _ => level.to_string(),
        }
    }

    pub fn parse_level(self, label: &str) -> Result<u8> {
        let label = label.trim();
        let level = match self {
            Covariate::Sex => label.parse::<Sex>()?.level(),
            _ => label
                .parse::<u8>()
                .map_err(|_| Error::Input(format!("{}: `{label}` is not a level", self.name())))?,
        };
        if self.levels().contains(&level) {
            Ok(level)
        } else {
            Err(Error::Input(format!(
                "{}: level {label} out of range",
                self.name()
            )))
        }
    }
}

impl fmt::Display for Covariate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Covariate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sex" => Ok(Covariate::Sex),
            "alcohol" => Ok(Covariate::Alcohol),
            "obesity" => Ok(Covariate::Obesity),
            "smoking" | "tobacco" | "smoker" => Ok(Covariate::Smoking),
            "department" => Ok(Covariate::Department),
            "immigration" => Ok(Covariate::Immigration),
            "education" => Ok(Covariate::Education),
            other => Err(Error::UnknownTerm(other.to_string())),
        }
    }
}

/// Covariate values of one subject.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Covariates {
    pub sex: Sex,
    pub alcohol: u8,
    pub obesity: u8,
    pub smoking: u8,
    pub department: u8,
    pub immigration: u8,
    pub education: u8,
}

impl Covariates {
    /// Reference profile: female, no risk behaviour, department 78, lowest quartiles.
    pub fn reference() -> Self {
        Covariates {
            sex: Sex::Female,
            alcohol: 0,
            obesity: 0,
            smoking: 0,
            department: REFERENCE_DEPARTMENT,
            immigration: 0,
            education: 0,
        }
    }

    pub fn level(&self, covariate: Covariate) -> u8 {
        match covariate {
            Covariate::Sex => self.sex.level(),
            Covariate::Alcohol => self.alcohol,
            Covariate::Obesity => self.obesity,
            Covariate::Smoking => self.smoking,
            Covariate::Department => self.department,
            Covariate::Immigration => self.immigration,
            Covariate::Education => self.education,
        }
    }

    pub fn with(mut self, covariate: Covariate, level: u8) -> Self {
        match covariate {
            Covariate::Sex => self.sex = if level == 1 { Sex::Male } else { Sex::Female },
            Covariate::Alcohol => self.alcohol = level,
            Covariate::Obesity => self.obesity = level,
            Covariate::Smoking => self.smoking = level,
            Covariate::Department => self.department = level,
            Covariate::Immigration => self.immigration = level,
            Covariate::Education => self.education = level,
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        for c in Covariate::ALL {
            let level = self.level(c);
            if !c.levels().contains(&level) {
                return Err(Error::Input(format!("{c}: level {level} out of range")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    SevereCondition,
    ExclusionCondition,
    Death,
}

impl FromStr for Severity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "severe_condition" => Ok(Severity::SevereCondition),
            "exclusion_condition" => Ok(Severity::ExclusionCondition),
            "death" => Ok(Severity::Death),
            other => Err(Error::Input(format!("unknown severity class `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictionaryEntry {
    pub code: String,
    pub description: String,
    pub severity: Severity,
}

/// Pre-coded event dictionary.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventDictionary {
    entries: BTreeMap<String, DictionaryEntry>,
}

impl EventDictionary {
    pub fn new(entries: impl IntoIterator<Item = DictionaryEntry>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for e in entries {
            let code = e.code.clone();
            if map.insert(code.clone(), e).is_some() {
                return Err(Error::Config(format!("duplicate event code `{code}`")));
            }
        }
        Ok(EventDictionary { entries: map })
    }

    pub fn get(&self, code: &str) -> Option<&DictionaryEntry> {
        self.entries.get(code)
    }

    pub fn severity(&self, code: &str) -> Option<Severity> {
        self.entries.get(code).map(|e| e.severity)
    }

    pub fn codes_of(&self, severity: Severity) -> impl Iterator<Item = &str> {
        self.entries
            .values()
            .filter(move |e| e.severity == severity)
            .map(|e| e.code.as_str())
    }

    pub fn entries(&self) -> impl Iterator<Item = &DictionaryEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// A dictionary with 36 severe conditions, 7 exclusion conditions and death.
    pub fn standard() -> Self {
        const SEVERE: [&str; 36] = [
            "Heart failure (including cardiac arrest)",
            "Atrial fibrillation",
            "Peripheral arterial disease",
            "Anemia requiring blood transfusion",
            "Chronic kidney disease",
            "Digestive hemorrhage",
            "Septicemia",
            "Thromboembolic disease",
            "Acute respiratory failure",
            "Digestive obstruction",
            "Ischemic stroke",
            "Acute kidney failure",
            "Breast cancer",
            "Metabolic disease",
            "Lung cancer",
            "Chronic respiratory failure",
            "Prostate cancer",
            "Severe dementia",
            "Cancer with poor prognosis",
            "Heart attack",
            "Skull trauma",
            "Colorectal cancer",
            "Epilepsy",
            "Lymphoma",
            "Parkinson's disease",
            "Endocrine disease",
            "Peritonitis",
            "Cancer with good prognosis",
            "Stoma",
            "Decompensated cirrhosis",
            "Physical dependence",
            "Hemorrhagic stroke",
            "Esophageal cancer",
            "Severe non-skull trauma",
            "Other neurological disease",
            "Rare disease at risk of dementia",
        ];
        const EXCLUSION: [&str; 7] = [
            "Paralysis",
            "Coma",
            "Transplant recipient",
            "Birth defect or chromosome abnormality",
            "Primary immunodeficiency",
            "Inherited blood disorder",
            "HIV infection",
        ];
        let mut entries = Vec::new();
        for (i, d) in SEVERE.iter().enumerate() {
            entries.push(DictionaryEntry {
                code: format!("S{:02}", i + 1),
                description: d.to_string(),
                severity: Severity::SevereCondition,
            });
        }
        for (i, d) in EXCLUSION.iter().enumerate() {
            entries.push(DictionaryEntry {
                code: format!("X{:02}", i + 1),
                description: d.to_string(),
                severity: Severity::ExclusionCondition,
            });
        }
        entries.push(DictionaryEntry {
            code: "DEATH".into(),
            description: "Death from any cause".into(),
            severity: Severity::Death,
        });
        EventDictionary::new(entries).expect("standard dictionary codes are unique")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub date: NaiveDate,
    pub code: String,
}

/// One individual with demographics, risk factors and hospital event history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub id: String,
    pub covariates: Covariates,
    pub birth_year: i32,
    pub birth_date: NaiveDate,
    pub events: Vec<EventRecord>,
    pub death_date: Option<NaiveDate>,
    pub censor_date: Option<NaiveDate>,
}

impl Subject {
    /// Earliest death, from the explicit column or a death-class event code.
    pub fn death(&self, dictionary: &EventDictionary) -> Option<NaiveDate> {
        let coded = self
            .events
            .iter()
            .filter(|e| dictionary.severity(&e.code) == Some(Severity::Death))
            .map(|e| e.date)
            .min();
        match (self.death_date, coded) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    #[default]
    Observed,
    Synthetic,
}

/// Disease-free exposure interval of one subject on the age scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exposure {
    pub subject_id: String,
    pub birth_year: i32,
    pub covariates: Covariates,
    pub entry_age: f64,
    pub exit_age: f64,
    pub event: bool,
    #[serde(default)]
    pub provenance: Provenance,
}

impl Exposure {
    pub fn length(&self) -> f64 {
        self.exit_age - self.entry_age
    }

    pub fn is_synthetic(&self) -> bool {
        self.provenance == Provenance::Synthetic
    }
}
