use chrono::NaiveDate;

use super::{EventDictionary, Exposure, Provenance, Severity, Subject};
use crate::calendar::{age_at, anniversary, ymd};

/// Calendar observation window and the age band under study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationWindow {
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub min_age: u32,
    pub max_age: u32,
}

impl Default for ObservationWindow {
    fn default() -> Self {
        ObservationWindow {
            start: ymd(2010, 1, 1),
            end: ymd(2013, 12, 31),
            min_age: 50,
            max_age: 105,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ExposureBuild {
    pub exposures: Vec<Exposure>,
    /// Subjects whose window was empty (exit at or before entry).
    pub dropped: usize,
}

/// Converts each subject into its disease-free exposure interval.
///
/// Entry is the later of the window start and the `min_age` birthday. Exit
/// is the earliest of the first severe condition or death on or after
/// entry, the censoring date, the window end and the `max_age` birthday.
pub fn build_exposures(
    subjects: &[Subject],
    window: &ObservationWindow,
    dictionary: &EventDictionary,
) -> ExposureBuild {
    let mut out = ExposureBuild::default();
    for s in subjects {
        match exposure_of(s, window, dictionary) {
            Some(e) => out.exposures.push(e),
            None => out.dropped += 1,
        }
    }
    out
}

fn exposure_of(
    s: &Subject,
    w: &ObservationWindow,
    dictionary: &EventDictionary,
) -> Option<Exposure> {
    let min_birthday = anniversary(s.birth_date, w.min_age);
    let (entry_date, entry_age) = if min_birthday > w.start {
        (min_birthday, f64::from(w.min_age))
    } else {
        (
            w.start,
            age_at(s.birth_date, w.start).max(f64::from(w.min_age)),
        )
    };
    if entry_date > w.end {
        return None;
    }

    let adverse = s
        .events
        .iter()
        .filter(|e| {
            e.date >= entry_date
                && matches!(
                    dictionary.severity(&e.code),
                    Some(Severity::SevereCondition | Severity::Death)
                )
        })
        .map(|e| e.date)
        .chain(s.death_date)
        .filter(|d| *d >= entry_date)
        .min();
    let max_birthday = anniversary(s.birth_date, w.max_age);
    let censor = [Some(w.end), s.censor_date, Some(max_birthday)]
        .into_iter()
        .flatten()
        .min()?;

    let (exit_date, event) = match adverse {
        Some(d) if d <= censor => (d, true),
        _ => (censor, false),
    };
    let exit_age = if exit_date == max_birthday && !event {
        f64::from(w.max_age)
    } else {
        age_at(s.birth_date, exit_date).min(f64::from(w.max_age))
    };
    if exit_age <= entry_age {
        return None;
    }
    Some(Exposure {
        subject_id: s.id.clone(),
        birth_year: s.birth_year,
        covariates: s.covariates,
        entry_age,
        exit_age,
        event,
        provenance: Provenance::Observed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{Covariates, EventRecord};

    fn subject(birth: NaiveDate, events: &[(NaiveDate, &str)]) -> Subject {
        Subject {
            id: "s".into(),
            covariates: Covariates::reference(),
            birth_year: chrono::Datelike::year(&birth),
            birth_date: birth,
            events: events
                .iter()
                .map(|(d, c)| EventRecord {
                    date: *d,
                    code: c.to_string(),
                })
                .collect(),
            death_date: None,
            censor_date: None,
        }
    }

    fn one(s: Subject) -> Option<Exposure> {
        let b = build_exposures(
            &[s],
            &ObservationWindow::default(),
            &EventDictionary::standard(),
        );
        b.exposures.into_iter().next()
    }

    #[test]
    fn event_free_full_window() {
        let e = one(subject(ymd(1950, 7, 1), &[])).unwrap();
        assert!((e.entry_age - 59.5).abs() < 0.01);
        assert!((e.exit_age - 63.5).abs() < 0.01);
        assert!(!e.event);
        assert!(e.length() <= 4.0 + 1.0 / 365.25);
    }

    #[test]
    fn turns_fifty_mid_window() {
        let e = one(subject(ymd(1962, 6, 1), &[(ymd(2013, 6, 1), "S01")])).unwrap();
        assert_eq!(e.entry_age, 50.0);
        assert!((e.exit_age - 51.0).abs() < 0.01);
        assert!(e.event);
    }

    #[test]
    fn first_adverse_event_wins() {
        let mut s = subject(ymd(1940, 1, 1), &[(ymd(2011, 1, 1), "S05")]);
        s.death_date = Some(ymd(2012, 1, 1));
        let e = one(s).unwrap();
        assert!((e.exit_age - 71.0).abs() < 0.01);
        assert!(e.event);
    }

    #[test]
    fn exclusion_codes_do_not_end_exposure() {
        let e = one(subject(ymd(1940, 1, 1), &[(ymd(2011, 1, 1), "X01")])).unwrap();
        assert!(!e.event);
        assert!((e.exit_age - 74.0).abs() < 0.01);
    }

    #[test]
    fn censoring_before_event() {
        let mut s = subject(ymd(1940, 1, 1), &[(ymd(2012, 1, 1), "S05")]);
        s.censor_date = Some(ymd(2011, 1, 1));
        let e = one(s).unwrap();
        assert!(!e.event);
        assert!((e.exit_age - 71.0).abs() < 0.01);
    }

    #[test]
    fn degenerate_windows_dropped() {
        // Too young to enter before the window closes.
        assert!(one(subject(ymd(1964, 6, 1), &[])).is_none());
        // Event on the entry date.
        assert!(one(subject(ymd(1940, 1, 1), &[(ymd(2010, 1, 1), "S01")])).is_none());
        let b = build_exposures(
            &[subject(ymd(1964, 6, 1), &[]), subject(ymd(1950, 1, 1), &[])],
            &ObservationWindow::default(),
            &EventDictionary::standard(),
        );
        assert_eq!(b.dropped, 1);
        assert_eq!(b.exposures.len(), 1);
    }

    #[test]
    fn capped_at_max_age() {
        let e = one(subject(ymd(1906, 6, 1), &[])).unwrap();
        assert_eq!(e.exit_age, 105.0);
        assert!(one(subject(ymd(1900, 6, 1), &[])).is_none());
    }
}
