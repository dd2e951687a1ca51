//! Whole-population adjustment of exposure for stratified Kaplan-Meier
//! curves: event-free synthetic individuals fill each sex × birth-year cell
//! up to an external age pyramid.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::calendar::ymd;
use crate::cohort::{
    build_exposures, impute_birth_date, Covariates, EventDictionary, Exposure, ObservationWindow,
    Provenance, Sex, Subject,
};
use crate::error::{Error, Result};
use crate::par;

/// Population count by sex, birth year and census year (1 January).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AgePyramid {
    cells: BTreeMap<(Sex, i32, i32), f64>,
}

#[derive(Debug, Deserialize)]
struct PyramidRow {
    sex: String,
    birth_year: i32,
    count: f64,
    year: Option<i32>,
}

impl AgePyramid {
    pub const DEFAULT_YEAR: i32 = 2010;

    pub fn new() -> Self {
        AgePyramid::default()
    }

    pub fn insert(&mut self, sex: Sex, birth_year: i32, year: i32, count: f64) -> Result<()> {
        if !(count >= 0.0) || !count.is_finite() {
            return Err(Error::Input(format!(
                "pyramid count {count} for {}{birth_year}",
                sex.code()
            )));
        }
        if self.cells.insert((sex, birth_year, year), count).is_some() {
            return Err(Error::Input(format!(
                "duplicate pyramid cell {} {birth_year} in {year}",
                sex.code()
            )));
        }
        Ok(())
    }

    /// Reads `sex,birth_year,count` with an optional `year` column (default 2010).
    pub fn from_csv<R: Read>(source: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(source);
        let headers = reader.headers()?.clone();
        for required in ["sex", "birth_year", "count"] {
            if !headers.iter().any(|h| h == required) {
                return Err(Error::Header(format!(
                    "pyramid is missing column `{required}`"
                )));
            }
        }
        let mut out = AgePyramid::new();
        for (line, row) in reader.deserialize::<PyramidRow>().enumerate() {
            let row = row.map_err(|e| Error::Input(format!("pyramid line {}: {e}", line + 2)))?;
            let sex: Sex = row
                .sex
                .parse()
                .map_err(|e| Error::Input(format!("pyramid line {}: {e}", line + 2)))?;
            out.insert(
                sex,
                row.birth_year,
                row.year.unwrap_or(Self::DEFAULT_YEAR),
                row.count,
            )?;
        }
        Ok(out)
    }

    pub fn get(&self, sex: Sex, birth_year: i32, year: i32) -> Option<f64> {
        self.cells.get(&(sex, birth_year, year)).copied()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> impl Iterator<Item = (Sex, i32, i32, f64)> + '_ {
        self.cells.iter().map(|((s, b, y), c)| (*s, *b, *y, *c))
    }
}

/// Scaling override for cohorts whose age on the reference date lies in `[from_age, to_age)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingBand {
    pub from_age: i32,
    pub to_age: i32,
    pub scaling: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustmentConfig {
    pub reference_year: i32,
    pub last_year: i32,
    /// Restores the population removed by exclusions.
    pub scaling: f64,
    #[serde(default)]
    pub bands: Vec<ScalingBand>,
    /// Seed for the birth dates of synthetic individuals.
    #[serde(default)]
    pub seed: u64,
}

impl Default for AdjustmentConfig {
    fn default() -> Self {
        AdjustmentConfig {
            reference_year: 2010,
            last_year: 2013,
            scaling: 18_440_022.0 / 13_170_355.0,
            bands: Vec::new(),
            seed: 0,
        }
    }
}

impl AdjustmentConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |s: f64| s.is_finite() && s >= 1.0;
        if !ok(self.scaling) || self.bands.iter().any(|b| !ok(b.scaling)) {
            return Err(Error::Config("scaling factors must be at least 1".into()));
        }
        if self.last_year < self.reference_year {
            return Err(Error::Config(
                "last year precedes the reference year".into(),
            ));
        }
        Ok(())
    }

    pub fn scaling_for(&self, birth_year: i32) -> f64 {
        let age = self.reference_year - birth_year;
        self.bands
            .iter()
            .find(|b| b.from_age <= age && age < b.to_age)
            .map_or(self.scaling, |b| b.scaling)
    }
}

/// Observed head count per (sex, birth year).
pub fn observed_counts(exposures: &[Exposure]) -> BTreeMap<(Sex, i32), f64> {
    let mut out = BTreeMap::new();
    for e in exposures.iter().filter(|e| !e.is_synthetic()) {
        *out.entry((e.covariates.sex, e.birth_year)).or_insert(0.0) += 1.0;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustmentCell {
    pub sex: Sex,
    pub birth_year: i32,
    pub pyramid: f64,
    pub observed: f64,
    pub scaling: f64,
    pub added: usize,
    /// Cell where scaled observed exceeded the pyramid.
    pub clamped: bool,
    /// Synthetic individuals censored at the end of each year, from the reference year.
    pub censored: Vec<usize>,
}

/// Exposures after whole-population adjustment; only usable for Kaplan-Meier.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjustedExposures {
    exposures: Vec<Exposure>,
    pub cells: Vec<AdjustmentCell>,
}

impl AdjustedExposures {
    pub fn exposures(&self) -> &[Exposure] {
        &self.exposures
    }

    pub fn into_inner(self) -> Vec<Exposure> {
        self.exposures
    }

    pub fn synthetic(&self) -> usize {
        self.exposures.iter().filter(|e| e.is_synthetic()).count()
    }
}

/// Allocates year-end censoring so the surviving synthetic count follows
/// the cohort's attrition in the pyramid; years absent from the pyramid
/// keep everyone.
fn censoring_schedule(
    added: usize,
    sex: Sex,
    birth_year: i32,
    pyramid: &AgePyramid,
    config: &AdjustmentConfig,
) -> Vec<usize> {
    let base = pyramid
        .get(sex, birth_year, config.reference_year)
        .unwrap_or(0.0);
    let mut remaining = added;
    let mut out = Vec::new();
    for year in config.reference_year..config.last_year {
        let next = match pyramid.get(sex, birth_year, year + 1) {
            Some(p) if base > 0.0 => ((added as f64) * p / base).round_ties_even() as usize,
            _ => remaining,
        };
        let keep = remaining.min(next);
        out.push(remaining - keep);
        remaining = keep;
    }
    out.push(remaining);
    out
}

/// Adds `max(0, pyramid − scaling · observed)` event-free synthetic
/// exposures per sex × birth-year cell.
pub fn whole_population_adjust(
    exposures: &[Exposure],
    observed: &BTreeMap<(Sex, i32), f64>,
    pyramid: &AgePyramid,
    config: &AdjustmentConfig,
) -> Result<AdjustedExposures> {
    config.validate()?;
    if exposures.iter().any(Exposure::is_synthetic) {
        return Err(Error::AlreadyAdjusted);
    }
    let mut cells = Vec::new();
    let mut residual: BTreeMap<Sex, f64> = BTreeMap::new();
    for (&(sex, birth_year), &count) in observed {
        let p = pyramid.get(sex, birth_year, config.reference_year).ok_or(
            Error::MissingPyramidCell {
                sex: sex.code(),
                birth_year,
            },
        )?;
        let scaling = config.scaling_for(birth_year);
        let raw = p - scaling * count;
        let clamped = raw < 0.0;
        if clamped {
            log::warn!(
                "scaled observed count exceeds pyramid for {}{birth_year}; adding none",
                sex.code()
            );
        }
        let carry = residual.entry(sex).or_insert(0.0);
        let target = raw.max(0.0) + *carry;
        let added = target.round_ties_even().max(0.0);
        *carry = target - added;
        let added = added as usize;
        cells.push(AdjustmentCell {
            sex,
            birth_year,
            pyramid: p,
            observed: count,
            scaling,
            added,
            clamped,
            censored: censoring_schedule(added, sex, birth_year, pyramid, config),
        });
    }

    let window = ObservationWindow {
        start: ymd(config.reference_year, 1, 1),
        end: ymd(config.last_year, 12, 31),
        ..ObservationWindow::default()
    };
    let dictionary = EventDictionary::new([]).expect("empty dictionary");
    let generated = par::map_slice(&cells, |cell| {
        let mut subjects = Vec::with_capacity(cell.added);
        let mut k = 0;
        for (offset, n) in cell.censored.iter().enumerate() {
            let year = config.reference_year + offset as i32;
            for _ in 0..*n {
                let id = format!("synthetic-{}{}-{k}", cell.sex.code(), cell.birth_year);
                let birth_date = impute_birth_date(cell.birth_year, config.seed, &id);
                subjects.push(Subject {
                    id,
                    covariates: Covariates {
                        sex: cell.sex,
                        ..Covariates::reference()
                    },
                    birth_year: cell.birth_year,
                    birth_date,
                    events: Vec::new(),
                    death_date: None,
                    censor_date: Some(ymd(year, 12, 31)),
                });
                k += 1;
            }
        }
        build_exposures(&subjects, &window, &dictionary).exposures
    });

    let mut out = exposures.to_vec();
    for mut e in generated.into_iter().flatten() {
        e.provenance = Provenance::Synthetic;
        out.push(e);
    }
    Ok(AdjustedExposures {
        exposures: out,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exposure(sex: Sex, birth_year: i32) -> Exposure {
        Exposure {
            subject_id: "o".into(),
            birth_year,
            covariates: Covariates {
                sex,
                ..Covariates::reference()
            },
            entry_age: 55.0,
            exit_age: 59.0,
            event: false,
            provenance: Provenance::Observed,
        }
    }

    #[test]
    fn fills_cell_to_pyramid() {
        let mut pyramid = AgePyramid::new();
        pyramid.insert(Sex::Female, 1950, 2010, 1000.0).unwrap();
        let obs: Vec<Exposure> = (0..500).map(|_| exposure(Sex::Female, 1950)).collect();
        let config = AdjustmentConfig {
            scaling: 1.4,
            ..AdjustmentConfig::default()
        };
        let adj = whole_population_adjust(&obs, &observed_counts(&obs), &pyramid, &config).unwrap();
        assert_eq!(adj.cells[0].added, 300);
        assert_eq!(adj.synthetic(), 300);
        assert!(adj
            .exposures()
            .iter()
            .filter(|e| e.is_synthetic())
            .all(|e| !e.event));
        assert_eq!(&adj.exposures()[..500], &obs[..]);
        assert!(matches!(
            whole_population_adjust(adj.exposures(), &observed_counts(&obs), &pyramid, &config),
            Err(Error::AlreadyAdjusted)
        ));
    }

    #[test]
    fn saturated_and_missing_cells() {
        let mut pyramid = AgePyramid::new();
        pyramid.insert(Sex::Male, 1950, 2010, 700.0).unwrap();
        let obs: Vec<Exposure> = (0..500).map(|_| exposure(Sex::Male, 1950)).collect();
        let config = AdjustmentConfig {
            scaling: 1.4,
            ..AdjustmentConfig::default()
        };
        let adj = whole_population_adjust(&obs, &observed_counts(&obs), &pyramid, &config).unwrap();
        assert_eq!(adj.synthetic(), 0);
        let other = vec![exposure(Sex::Female, 1950)];
        assert!(matches!(
            whole_population_adjust(&other, &observed_counts(&other), &pyramid, &config),
            Err(Error::MissingPyramidCell {
                sex: 'F',
                birth_year: 1950
            })
        ));
    }

    #[test]
    fn residual_carries_across_cohorts() {
        let mut pyramid = AgePyramid::new();
        let mut obs = Vec::new();
        for by in 1940..1944 {
            pyramid.insert(Sex::Female, by, 2010, 10.5).unwrap();
            obs.push(exposure(Sex::Female, by));
        }
        let config = AdjustmentConfig {
            scaling: 1.0,
            ..AdjustmentConfig::default()
        };
        let adj = whole_population_adjust(&obs, &observed_counts(&obs), &pyramid, &config).unwrap();
        let added: Vec<usize> = adj.cells.iter().map(|c| c.added).collect();
        assert_eq!(added.iter().sum::<usize>(), 38);
        assert_eq!(added, vec![10, 9, 10, 9]);
    }

    #[test]
    fn censoring_follows_attrition() {
        let mut pyramid = AgePyramid::new();
        for (year, count) in [(2010, 1000.0), (2011, 900.0), (2012, 850.0)] {
            pyramid.insert(Sex::Female, 1930, year, count).unwrap();
        }
        let obs = vec![exposure(Sex::Female, 1930)];
        let config = AdjustmentConfig {
            scaling: 1.0,
            ..AdjustmentConfig::default()
        };
        let adj = whole_population_adjust(&obs, &observed_counts(&obs), &pyramid, &config).unwrap();
        let cell = &adj.cells[0];
        assert_eq!(cell.added, 999);
        // 999 · 0.9 = 899.1 -> 899; 999 · 0.85 = 849.15 -> 849; no 2013 figure keeps all.
        assert_eq!(cell.censored, vec![100, 50, 0, 849]);
        let by_exit = adj
            .exposures()
            .iter()
            .filter(|e| e.is_synthetic() && e.exit_age < 81.5)
            .count();
        assert!(by_exit >= 100);
    }

    #[test]
    fn pyramid_csv() {
        let p = AgePyramid::from_csv("sex,birth_year,count\nF,1950,10\nM,1950,12\n".as_bytes())
            .unwrap();
        assert_eq!(p.get(Sex::Male, 1950, 2010), Some(12.0));
        let p =
            AgePyramid::from_csv("sex,birth_year,count,year\nF,1950,10,2011\n".as_bytes()).unwrap();
        assert_eq!(p.get(Sex::Female, 1950, 2011), Some(10.0));
        assert!(AgePyramid::from_csv("sex,count\nF,1\n".as_bytes()).is_err());
        assert!(AgePyramid::from_csv("sex,birth_year,count\nF,1950,-1\n".as_bytes()).is_err());
        assert!(
            AgePyramid::from_csv("sex,birth_year,count\nF,1950,1\nF,1950,2\n".as_bytes()).is_err()
        );
    }
}
