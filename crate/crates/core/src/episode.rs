//! Counting-process episodes: exposures partitioned on a fixed age grid.

use serde::{Deserialize, Serialize};

use crate::cohort::{Covariates, Exposure};
use crate::error::{Error, Result};

/// Strictly increasing ages at which age-dependent coefficients may change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeGrid {
    points: Vec<f64>,
}

impl AgeGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.is_empty()
            || points.windows(2).any(|w| w[0] >= w[1])
            || points.iter().any(|p| !p.is_finite())
        {
            return Err(Error::Config(
                "age grid must be non-empty, finite and strictly increasing".into(),
            ));
        }
        Ok(AgeGrid { points })
    }

    /// `from, from + step, …` up to and including `to`.
    pub fn regular(from: f64, to: f64, step: f64) -> Result<Self> {
        if step <= 0.0 || to < from {
            return Err(Error::Config(format!(
                "invalid grid {from}..{to} step {step}"
            )));
        }
        let n = ((to - from) / step + 1e-9).floor() as usize;
        AgeGrid::new((0..=n).map(|i| from + step * i as f64).collect())
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Grid cell anchor for an episode starting at `age`: the largest grid
    /// point not above it (the first point for ages below the grid).
    pub fn anchor_start(&self, age: f64) -> f64 {
        let i = self.points.partition_point(|p| *p <= age);
        self.points[i.saturating_sub(1)]
    }

    /// Grid cell anchor for an event at `age`: cells are left-open, so an
    /// event exactly on a grid point belongs to the cell below it.
    pub fn anchor_event(&self, age: f64) -> f64 {
        let i = self.points.partition_point(|p| *p < age);
        self.points[i.saturating_sub(1)]
    }
}

/// A left-open age interval `(start, stop]` of one subject.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    /// Index of the parent exposure.
    pub subject: usize,
    pub start: f64,
    pub stop: f64,
    pub event: bool,
    pub covariates: Covariates,
}

/// Splits every exposure at the grid points strictly inside it.
///
/// Output is ordered by exposure index, then start age. Only the last
/// episode of a subject can carry the event.
pub fn split_episodes(exposures: &[Exposure], grid: &AgeGrid) -> Result<Vec<Episode>> {
    if exposures.iter().any(Exposure::is_synthetic) {
        return Err(Error::AdjustedInCox);
    }
    let mut out = Vec::with_capacity(exposures.len() * 2);
    for (i, e) in exposures.iter().enumerate() {
        if !(e.entry_age < e.exit_age) {
            return Err(Error::Input(format!(
                "exposure `{}` has exit <= entry",
                e.subject_id
            )));
        }
        let mut start = e.entry_age;
        let first = grid.points.partition_point(|p| *p <= e.entry_age);
        for &cut in grid.points[first..].iter().take_while(|p| **p < e.exit_age) {
            out.push(Episode {
                subject: i,
                start,
                stop: cut,
                event: false,
                covariates: e.covariates,
            });
            start = cut;
        }
        out.push(Episode {
            subject: i,
            start,
            stop: e.exit_age,
            event: e.event,
            covariates: e.covariates,
        });
    }
    Ok(out)
}

/// Unsplit episodes: one per exposure.
pub fn whole_episodes(exposures: &[Exposure]) -> Result<Vec<Episode>> {
    if exposures.iter().any(Exposure::is_synthetic) {
        return Err(Error::AdjustedInCox);
    }
    Ok(exposures
        .iter()
        .enumerate()
        .map(|(i, e)| Episode {
            subject: i,
            start: e.entry_age,
            stop: e.exit_age,
            event: e.event,
            covariates: e.covariates,
        })
        .collect())
}

/// Reassembles `(subject, entry, exit, event)` from contiguous episodes.
pub fn merge_episodes(episodes: &[Episode]) -> Vec<(usize, f64, f64, bool)> {
    let mut out: Vec<(usize, f64, f64, bool)> = Vec::new();
    for ep in episodes {
        match out.last_mut() {
            Some(last) if last.0 == ep.subject && last.2 == ep.start => {
                last.2 = ep.stop;
                last.3 = ep.event;
            }
            _ => out.push((ep.subject, ep.start, ep.stop, ep.event)),
        }
    }
    out
}
