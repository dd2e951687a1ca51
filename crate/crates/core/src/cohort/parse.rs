use std::collections::HashMap;
use std::io::{Read, Write};

use chrono::NaiveDate;

use super::{Covariate, Covariates, DictionaryEntry, EventDictionary, EventRecord, Sex, Subject};
use crate::calendar::{days_in_year, keyed_uniform, ymd};
use crate::error::{Error, Result};

const REQUIRED: [&str; 11] = [
    "id",
    "sex",
    "birth_year",
    "department",
    "alcohol",
    "obesity",
    "smoking",
    "immigration",
    "education",
    "event_date",
    "event_code",
];

pub const MIN_BIRTH_YEAR: i32 = 1900;
pub const MAX_BIRTH_YEAR: i32 = 1963;

/// A rejected input row.
#[derive(Debug, Clone, PartialEq)]
pub struct RowError {
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedSubjects {
    pub subjects: Vec<Subject>,
    pub errors: Vec<RowError>,
}

/// Fictitious birth date, uniform over the days of `birth_year`.
///
/// The draw is keyed by `(seed, id)` so it is reproducible per subject and
/// independent across subjects.
pub fn impute_birth_date(birth_year: i32, seed: u64, id: &str) -> NaiveDate {
    let days = days_in_year(birth_year);
    let u = keyed_uniform(seed, id, 0xB1D7);
    let offset = ((u * f64::from(days)) as u32).min(days - 1);
    ymd(birth_year, 1, 1) + chrono::Duration::days(i64::from(offset))
}

struct Columns {
    idx: HashMap<&'static str, usize>,
    death: Option<usize>,
    censor: Option<usize>,
}

fn columns(headers: &csv::StringRecord) -> Result<Columns> {
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let mut idx = HashMap::new();
    let mut missing = Vec::new();
    for name in REQUIRED {
        match find(name) {
            Some(i) => {
                idx.insert(name, i);
            }
            None => missing.push(name),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Header(format!(
            "missing column(s): {}",
            missing.join(", ")
        )));
    }
    Ok(Columns {
        idx,
        death: find("death_date"),
        censor: find("censor_date"),
    })
}

fn parse_date(s: &str) -> std::result::Result<Option<NaiveDate>, String> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(None);
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map(Some)
        .map_err(|_| format!("`{s}` is not an ISO-8601 date"))
}

struct Row {
    id: String,
    covariates: Covariates,
    birth_year: i32,
    event: Option<EventRecord>,
    death: Option<NaiveDate>,
    censor: Option<NaiveDate>,
}

fn parse_row(
    rec: &csv::StringRecord,
    cols: &Columns,
    dictionary: &EventDictionary,
) -> std::result::Result<Row, String> {
    let get = |name: &str| rec.get(cols.idx[name]).unwrap_or("").trim();
    let id = get("id");
    if id.is_empty() {
        return Err("empty id".into());
    }
    let sex: Sex = get("sex").parse().map_err(|e: Error| e.to_string())?;
    let birth_year: i32 = get("birth_year")
        .parse()
        .map_err(|_| format!("birth_year `{}` is not an integer", get("birth_year")))?;
    if !(MIN_BIRTH_YEAR..=MAX_BIRTH_YEAR).contains(&birth_year) {
        return Err(format!(
            "birth_year {birth_year} outside {MIN_BIRTH_YEAR}..={MAX_BIRTH_YEAR}"
        ));
    }
    let level = |c: Covariate| -> std::result::Result<u8, String> {
        c.parse_level(get(c.name())).map_err(|e| e.to_string())
    };
    let covariates = Covariates {
        sex,
        alcohol: level(Covariate::Alcohol)?,
        obesity: level(Covariate::Obesity)?,
        smoking: level(Covariate::Smoking)?,
        department: level(Covariate::Department)?,
        immigration: level(Covariate::Immigration)?,
        education: level(Covariate::Education)?,
    };
    let date = parse_date(get("event_date"))?;
    let code = get("event_code");
    let event = match (date, code.is_empty()) {
        (None, true) => None,
        (Some(date), false) => {
            if dictionary.get(code).is_none() {
                return Err(format!("event code `{code}` not in dictionary"));
            }
            if date < ymd(2008, 1, 1) || date > ymd(2013, 12, 31) {
                return Err(format!("event date {date} outside 2008-01-01..2013-12-31"));
            }
            Some(EventRecord {
                date,
                code: code.to_string(),
            })
        }
        _ => return Err("event_date and event_code must be both set or both empty".into()),
    };
    let optional = |i: Option<usize>| -> std::result::Result<Option<NaiveDate>, String> {
        match i {
            Some(i) => parse_date(rec.get(i).unwrap_or("")),
            None => Ok(None),
        }
    };
    Ok(Row {
        id: id.to_string(),
        covariates,
        birth_year,
        event,
        death: optional(cols.death)?,
        censor: optional(cols.censor)?,
    })
}

fn earliest(a: Option<NaiveDate>, b: Option<NaiveDate>) -> Option<NaiveDate> {
    match (a, b) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    }
}

/// Reads discharge-level rows and merges them into one [`Subject`] per id.
///
/// Attributes come from the first valid row of each id; later rows only
/// contribute events and death/censoring dates. Invalid rows are skipped
/// and reported with their line number.
pub fn parse_subjects<R: Read>(
    source: R,
    dictionary: &EventDictionary,
    seed: u64,
) -> Result<ParsedSubjects> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(source);
    let headers = reader.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].trim().is_empty()) {
        return Ok(ParsedSubjects::default());
    }
    let cols = columns(&headers)?;

    let mut out = ParsedSubjects::default();
    let mut index: HashMap<String, usize> = HashMap::new();
    for rec in reader.records() {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                out.errors.push(RowError {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let row = match parse_row(&rec, &cols, dictionary) {
            Ok(r) => r,
            Err(message) => {
                out.errors.push(RowError { line, message });
                continue;
            }
        };
        let slot = *index.entry(row.id.clone()).or_insert_with(|| {
            out.subjects.push(Subject {
                birth_date: impute_birth_date(row.birth_year, seed, &row.id),
                id: row.id.clone(),
                covariates: row.covariates,
                birth_year: row.birth_year,
                events: Vec::new(),
                death_date: None,
                censor_date: None,
            });
            out.subjects.len() - 1
        });
        let subject = &mut out.subjects[slot];
        if let Some(e) = row.event {
            subject.events.push(e);
        }
        subject.death_date = earliest(subject.death_date, row.death);
        subject.censor_date = earliest(subject.censor_date, row.censor);
    }
    for s in &mut out.subjects {
        s.events
            .sort_by(|a, b| a.date.cmp(&b.date).then_with(|| a.code.cmp(&b.code)));
    }
    Ok(out)
}

/// Reads an event dictionary with columns `event_code, description, severity_class`.
pub fn parse_dictionary<R: Read>(source: R) -> Result<EventDictionary> {
    let mut reader = csv::Reader::from_reader(source);
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Header(format!("dictionary lacks column `{name}`")))
    };
    let (ci, di, si) = (
        find("event_code")?,
        find("description")?,
        find("severity_class")?,
    );
    let mut entries = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let severity = rec[si]
            .parse()
            .map_err(|e: Error| Error::Input(format!("dictionary line {line}: {e}")))?;
        entries.push(DictionaryEntry {
            code: rec[ci].trim().to_string(),
            description: rec[di].trim().to_string(),
            severity,
        });
    }
    EventDictionary::new(entries)
}

/// Writes subjects in the input layout: one row per event, or a single
/// event-free row, with `death_date` and `censor_date` columns.
pub fn write_subjects<W: Write>(subjects: &[Subject], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = REQUIRED.to_vec();
    header.extend(["death_date", "censor_date"]);
    w.write_record(&header)?;
    let date = |d: Option<NaiveDate>| d.map(|d| d.to_string()).unwrap_or_default();
    for s in subjects {
        let x = &s.covariates;
        let mut fixed = vec![
            s.id.clone(),
            Covariate::Sex.level_label(x.sex.level()),
            s.birth_year.to_string(),
        ];
        for c in [
            Covariate::Department,
            Covariate::Alcohol,
            Covariate::Obesity,
            Covariate::Smoking,
            Covariate::Immigration,
            Covariate::Education,
        ] {
            fixed.push(c.level_label(x.level(c)));
        }
        let tail = [date(s.death_date), date(s.censor_date)];
        let events: Vec<Option<&EventRecord>> = if s.events.is_empty() {
            vec![None]
        } else {
            s.events.iter().map(Some).collect()
        };
        for e in events {
            let (d, code) = e.map_or((String::new(), String::new()), |e| {
                (e.date.to_string(), e.code.clone())
            });
            w.write_record(
                fixed
                    .iter()
                    .cloned()
                    .chain([d, code])
                    .chain(tail.iter().cloned()),
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Datelike;

    const HEADER: &str =
        "id,sex,birth_year,department,alcohol,obesity,smoking,immigration,education,event_date,event_code\n";

    fn parse(body: &str) -> ParsedSubjects {
        parse_subjects(
            format!("{HEADER}{body}").as_bytes(),
            &EventDictionary::standard(),
            1,
        )
        .unwrap()
    }

    #[test]
    fn write_then_parse_round_trips() {
        let p = parse(
            "7,M,1955,13,1,0,2,1,3,2011-03-01,S01\n\
             7,M,1955,13,1,0,2,1,3,2010-05-01,S02\n\
             8,F,1931,02,0,0,0,0,0,,\n",
        );
        let mut buf = Vec::new();
        write_subjects(&p.subjects, &mut buf).unwrap();
        assert_eq!(p.subjects.len(), 2);
        let again = parse_subjects(buf.as_slice(), &EventDictionary::standard(), 1).unwrap();
        assert!(again.errors.is_empty());
        assert_eq!(again.subjects, p.subjects);
    }

    #[test]
    fn minimal_row() {
        let p = parse("1,F,1950,01,0,0,0,0,0,,\n");
        assert_eq!(p.subjects.len(), 1);
        assert!(p.subjects[0].events.is_empty());
        assert!(p.errors.is_empty());
        assert_eq!(p.subjects[0].covariates.sex, Sex::Female);
    }

    #[test]
    fn rows_merge_by_id() {
        let p = parse(
            "7,M,1955,13,1,0,2,1,3,2011-03-01,S01\n\
             7,M,1955,13,1,0,2,1,3,2010-05-01,S02\n\
             7,M,1955,13,1,0,2,1,3,2012-01-09,S03\n",
        );
        assert_eq!(p.subjects.len(), 1);
        let s = &p.subjects[0];
        assert_eq!(s.events.len(), 3);
        assert_eq!(s.events[0].date, ymd(2010, 5, 1));
    }

    #[test]
    fn out_of_range_category_rejected() {
        let p = parse("1,F,1950,01,5,0,0,0,0,,\n2,F,1950,01,0,0,0,0,0,,\n");
        assert_eq!(p.errors.len(), 1);
        assert_eq!(p.errors[0].line, 2);
        assert_eq!(p.subjects.len(), 1);
        assert_eq!(p.subjects[0].id, "2");
    }

    #[test]
    fn unknown_code_and_bad_dates_rejected() {
        let p = parse(
            "1,F,1950,01,0,0,0,0,0,2011-01-01,NOPE\n\
             2,F,1950,01,0,0,0,0,0,2014-01-01,S01\n\
             3,F,1950,01,0,0,0,0,0,2011-01-01,\n\
             4,F,1850,01,0,0,0,0,0,,\n\
             5,F,1950,97,0,0,0,0,0,,\n",
        );
        assert_eq!(p.errors.len(), 5);
        assert!(p.subjects.is_empty());
    }

    #[test]
    fn malformed_header_is_fatal() {
        let r = parse_subjects("id,sex\n1,F\n".as_bytes(), &EventDictionary::standard(), 0);
        assert!(matches!(r, Err(Error::Header(_))));
    }

    #[test]
    fn empty_input_is_empty_cohort() {
        let p = parse_subjects("".as_bytes(), &EventDictionary::standard(), 0).unwrap();
        assert!(p.subjects.is_empty() && p.errors.is_empty());
    }

    #[test]
    fn optional_death_and_censor_columns() {
        let text = "id,sex,birth_year,department,alcohol,obesity,smoking,immigration,education,event_date,event_code,death_date,censor_date\n\
                    1,F,1950,01,0,0,0,0,0,,,2012-02-02,\n\
                    2,M,1950,01,0,0,0,0,0,,,,2011-06-30\n";
        let p = parse_subjects(text.as_bytes(), &EventDictionary::standard(), 0).unwrap();
        assert_eq!(p.subjects[0].death_date, Some(ymd(2012, 2, 2)));
        assert_eq!(p.subjects[1].censor_date, Some(ymd(2011, 6, 30)));
    }

    #[test]
    fn imputation_is_deterministic_and_in_year() {
        assert_eq!(
            impute_birth_date(1950, 7, "a"),
            impute_birth_date(1950, 7, "a")
        );
        for i in 0..500 {
            let d = impute_birth_date(1952, i, "x");
            assert_eq!(d.year(), 1952);
        }
    }

    #[test]
    fn imputed_months_are_uniform() {
        // Chi-square against the day-weighted uniform month distribution.
        let n = 100_000u64;
        let mut counts = [0u64; 12];
        for i in 0..n {
            let d = impute_birth_date(1950, 11, &i.to_string());
            counts[d.month0() as usize] += 1;
        }
        let month_days = [
            31.0, 28.0, 31.0, 30.0, 31.0, 30.0, 31.0, 31.0, 30.0, 31.0, 30.0, 31.0,
        ];
        let mut chi2 = 0.0;
        for (c, days) in counts.iter().zip(month_days) {
            let p = days / 365.0;
            let expected = n as f64 * p;
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            assert!(
                (*c as f64 - expected).abs() < 3.0 * sigma,
                "month count {c} vs {expected}"
            );
            chi2 += (*c as f64 - expected).powi(2) / expected;
        }
        // 99.9% quantile of chi-square with 11 degrees of freedom.
        assert!(chi2 < 31.26, "chi2 = {chi2}");
    }

    #[test]
    fn dictionary_csv() {
        let d = parse_dictionary(
            "event_code,description,severity_class\nA,x,severe_condition\nB,y,death\n".as_bytes(),
        )
        .unwrap();
        assert_eq!(d.len(), 2);
        assert!(parse_dictionary("event_code,description\nA,x\n".as_bytes()).is_err());
    }
}
