use std::io::Write;

use serde::{Deserialize, Serialize};

use super::SubjectScore;
use crate::cohort::{Covariates, Exposure, Provenance};
use crate::cox::StepCumHazard;
use crate::error::Result;
use crate::km::{km_curve, StepSurvival};

/// Upper edges of the linear-predictor classes `(−∞, 0.2], (0.2, 0.7], …, (1.5, ∞)`.
pub const DEFAULT_EDGES: [f64; 4] = [0.2, 0.7, 1.1, 1.5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_score: Option<f64>,
    pub observed: Option<StepSurvival>,
    pub predicted: Option<StepSurvival>,
    /// Largest |observed − predicted| over the observed event ages.
    pub max_gap: Option<f64>,
}

impl RiskBin {
    pub fn interval(&self) -> String {
        let lo = if self.lower.is_finite() {
            format!("({}", self.lower)
        } else {
            "(-inf".into()
        };
        let hi = if self.upper.is_finite() {
            format!("{}]", self.upper)
        } else {
            "inf)".into()
        };
        format!("{lo}, {hi}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskGroupReport {
    pub edges: Vec<f64>,
    pub bins: Vec<RiskBin>,
}

impl RiskGroupReport {
    pub fn worst_gap(&self) -> f64 {
        self.bins
            .iter()
            .filter_map(|b| b.max_gap)
            .fold(0.0, f64::max)
    }
}

/// Groups subjects by score class and compares each class's Kaplan-Meier
/// curve with `exp(−e^{L̄} Λ₀(t))` at the class-mean score `L̄`.
pub fn risk_group_calibration(
    baseline: &StepCumHazard,
    subjects: &[SubjectScore],
    edges: &[f64],
) -> Result<RiskGroupReport> {
    let mut edges = edges.to_vec();
    edges.sort_by(f64::total_cmp);
    edges.dedup();
    let mut bounds = vec![f64::NEG_INFINITY];
    bounds.extend(&edges);
    bounds.push(f64::INFINITY);

    let mut bins = Vec::new();
    for w in bounds.windows(2) {
        let (lower, upper) = (w[0], w[1]);
        let members: Vec<&SubjectScore> = subjects
            .iter()
            .filter(|s| s.score > lower && s.score <= upper)
            .collect();
        let mut bin = RiskBin {
            lower,
            upper,
            count: members.len(),
            mean_score: None,
            observed: None,
            predicted: None,
            max_gap: None,
        };
        if !members.is_empty() {
            let mean = members.iter().map(|s| s.score).sum::<f64>() / members.len() as f64;
            let exposures: Vec<Exposure> = members
                .iter()
                .map(|s| Exposure {
                    subject_id: String::new(),
                    birth_year: 0,
                    covariates: Covariates::reference(),
                    entry_age: s.entry,
                    exit_age: s.exit,
                    event: s.event,
                    provenance: Provenance::Observed,
                })
                .collect();
            let observed = km_curve(&exposures);
            let r = mean.exp();
            let predicted = StepSurvival::new(
                baseline.times.clone(),
                baseline.cumulative.iter().map(|h| (-r * h).exp()).collect(),
            )?;
            let gap = observed
                .times
                .iter()
                .zip(&observed.values)
                .map(|(t, s)| (s - predicted.at(*t)).abs())
                .fold(0.0, f64::max);
            bin.mean_score = Some(mean);
            bin.max_gap = Some(gap);
            bin.observed = Some(observed);
            bin.predicted = Some(predicted);
        }
        bins.push(bin);
    }
    Ok(RiskGroupReport { edges, bins })
}

/// Per-bin summary with columns `interval,count,mean_score,max_gap`.
pub fn write_calibration<W: Write>(report: &RiskGroupReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["interval", "count", "mean_score", "max_gap"])?;
    for b in &report.bins {
        w.write_record([
            b.interval(),
            b.count.to_string(),
            b.mean_score.map_or(String::new(), |m| format!("{m:.6}")),
            b.max_gap.map_or(String::new(), |g| format!("{g:.6}")),
        ])?;
    }
    w.flush()?;
    Ok(())
}
