use std::collections::BTreeSet;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{EventDictionary, Severity, Subject};
use crate::calendar::{anniversary, ymd};
use crate::error::{Error, Result};

/// One exclusion criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum ExclusionRule {
    /// Any event whose code is listed (directly or through its class) dated
    /// within `[from, to]`. A death-class rule also matches the death column.
    EventsInWindow {
        label: String,
        #[serde(default)]
        classes: Vec<Severity>,
        #[serde(default)]
        codes: Vec<String>,
        from: NaiveDate,
        to: NaiveDate,
    },
    /// Censored (lost to follow-up) strictly before `date`.
    CensoredBefore { label: String, date: NaiveDate },
    /// Observation ends (death, censoring or window end) before reaching `age`.
    ObservationEndsBeforeAge {
        label: String,
        age: u32,
        window_end: NaiveDate,
    },
}

impl ExclusionRule {
    pub fn label(&self) -> &str {
        match self {
            ExclusionRule::EventsInWindow { label, .. }
            | ExclusionRule::CensoredBefore { label, .. }
            | ExclusionRule::ObservationEndsBeforeAge { label, .. } => label,
        }
    }
}

/// Ordered list of exclusion criteria, as read from the declarative config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionRules {
    #[serde(rename = "criterion", default)]
    pub criteria: Vec<ExclusionRule>,
}

impl ExclusionRules {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("exclusion rules: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("exclusion rules serialize")
    }

    /// Two clinical criteria followed by the two data-preparation rules.
    pub fn standard() -> Self {
        ExclusionRules {
            criteria: vec![
                ExclusionRule::EventsInWindow {
                    label: "Severe condition or death observed in 2008-2009".into(),
                    classes: vec![Severity::SevereCondition, Severity::Death],
                    codes: vec![],
                    from: ymd(2008, 1, 1),
                    to: ymd(2009, 12, 31),
                },
                ExclusionRule::EventsInWindow {
                    label: "Other chronic condition observed in 2008-2013".into(),
                    classes: vec![Severity::ExclusionCondition],
                    codes: vec![],
                    from: ymd(2008, 1, 1),
                    to: ymd(2013, 12, 31),
                },
                ExclusionRule::CensoredBefore {
                    label: "Censored before 2010-01-01".into(),
                    date: ymd(2010, 1, 1),
                },
                ExclusionRule::ObservationEndsBeforeAge {
                    label: "Observation ends before age 50".into(),
                    age: 50,
                    window_end: ymd(2013, 12, 31),
                },
            ],
        }
    }

    fn compile(&self, dictionary: &EventDictionary) -> Result<Vec<Compiled>> {
        self.criteria
            .iter()
            .map(|rule| {
                Ok(match rule {
                    ExclusionRule::EventsInWindow {
                        classes,
                        codes,
                        from,
                        to,
                        ..
                    } => {
                        let mut set = BTreeSet::new();
                        for code in codes {
                            if dictionary.get(code).is_none() {
                                return Err(Error::UnknownCode(code.clone()));
                            }
                            set.insert(code.clone());
                        }
                        for class in classes {
                            set.extend(dictionary.codes_of(*class).map(str::to_string));
                        }
                        if from > to {
                            return Err(Error::Config(format!(
                                "rule `{}`: window starts after it ends",
                                rule.label()
                            )));
                        }
                        Compiled::Events {
                            codes: set,
                            death_column: classes.contains(&Severity::Death),
                            from: *from,
                            to: *to,
                        }
                    }
                    ExclusionRule::CensoredBefore { date, .. } => Compiled::CensoredBefore(*date),
                    ExclusionRule::ObservationEndsBeforeAge {
                        age, window_end, ..
                    } => Compiled::EndsBeforeAge {
                        age: *age,
                        window_end: *window_end,
                    },
                })
            })
            .collect()
    }
}

enum Compiled {
    Events {
        codes: BTreeSet<String>,
        death_column: bool,
        from: NaiveDate,
        to: NaiveDate,
    },
    CensoredBefore(NaiveDate),
    EndsBeforeAge {
        age: u32,
        window_end: NaiveDate,
    },
}

impl Compiled {
    fn hits(&self, s: &Subject) -> bool {
        match self {
            Compiled::Events {
                codes,
                death_column,
                from,
                to,
            } => {
                let within = |d: NaiveDate| d >= *from && d <= *to;
                s.events
                    .iter()
                    .any(|e| within(e.date) && codes.contains(&e.code))
                    || (*death_column && s.death_date.is_some_and(within))
            }
            Compiled::CensoredBefore(date) => s.censor_date.is_some_and(|c| c < *date),
            Compiled::EndsBeforeAge { age, window_end } => {
                let mut end = *window_end;
                for d in [s.death_date, s.censor_date].into_iter().flatten() {
                    end = end.min(d);
                }
                end < anniversary(s.birth_date, *age)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionRow {
    pub criterion: String,
    pub before: usize,
    pub removed: usize,
    pub remaining: usize,
}

/// Per-criterion population counts, in the order the criteria were applied.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExclusionReport {
    pub rows: Vec<ExclusionRow>,
}

impl ExclusionReport {
    pub fn telescopes(&self) -> bool {
        self.rows
            .iter()
            .all(|r| r.before - r.removed == r.remaining)
            && self.rows.windows(2).all(|w| w[0].remaining == w[1].before)
    }

    pub fn total_removed(&self) -> usize {
        self.rows.iter().map(|r| r.removed).sum()
    }
}

/// Applies the criteria in order. A subject matching several criteria is
/// counted under the first one only.
pub fn apply_exclusions(
    subjects: Vec<Subject>,
    rules: &ExclusionRules,
    dictionary: &EventDictionary,
) -> Result<(Vec<Subject>, ExclusionReport)> {
    let compiled = rules.compile(dictionary)?;
    let mut remaining = subjects;
    let mut report = ExclusionReport::default();
    for (rule, c) in rules.criteria.iter().zip(&compiled) {
        let before = remaining.len();
        remaining.retain(|s| !c.hits(s));
        report.rows.push(ExclusionRow {
            criterion: rule.label().to_string(),
            before,
            removed: before - remaining.len(),
            remaining: remaining.len(),
        });
    }
    Ok((remaining, report))
}
