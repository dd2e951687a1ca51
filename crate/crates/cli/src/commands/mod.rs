pub mod fit;
pub mod generate;
pub mod indicators;
pub mod ingest;
pub mod pipeline;
pub mod validate;

use std::collections::BTreeMap;

use disfle::cohort::{EventDictionary, Severity};

use crate::error::Result;
use crate::manifest::Loaded;

pub const BUNDLED_SUBJECTS: &str = include_str!("../../data/subjects.csv");
pub const BUNDLED_PYRAMID: &str = include_str!("../../data/pyramid.csv");
pub const BUNDLED_MODEL: &str = include_str!("../../data/model.toml");
pub const BUNDLED_SYNTHETIC: &str = include_str!("../../data/synthetic.toml");

pub fn severity_label(s: Severity) -> &'static str {
    match s {
        Severity::SevereCondition => "severe_condition",
        Severity::ExclusionCondition => "exclusion_condition",
        Severity::Death => "death",
    }
}

pub fn dictionary_csv(dict: &EventDictionary) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["event_code", "description", "severity_class"])?;
    for e in dict.entries() {
        w.write_record([
            e.code.as_str(),
            e.description.as_str(),
            severity_label(e.severity),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8"))
}

/// Name of the source used in diagnostics.
pub fn source_name(l: &Loaded) -> String {
    l.input
        .path
        .clone()
        .unwrap_or_else(|| format!("<bundled {}>", l.input.role))
}

pub fn params<const N: usize>(pairs: [(&str, String); N]) -> BTreeMap<String, String> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

pub fn csv_bytes<F>(header: &[&str], fill: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> Result<()>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    fill(&mut w)?;
    Ok(w.into_inner().expect("in-memory writer"))
}

pub fn into_bytes<F>(write: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut Vec<u8>) -> disfle::Result<()>,
{
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}
