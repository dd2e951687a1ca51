//! Cox regression with age-dependent coefficients on episode-split data.

mod engine;
mod predict;

use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::design::{ColumnLabel, DesignLayout, DesignMatrix};
use crate::error::{Error, Result};

pub use engine::{
    evaluate, maximize, Convergence, CoxData, CoxOptions, Estimate, Evaluation, RiskSets,
};
pub use predict::{combined_effect, hazard_ratio_curve, predict_survival, HazardRatioCurve};

/// Breslow cumulative baseline hazard at the reference profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCumHazard {
    pub times: Vec<f64>,
    pub increments: Vec<f64>,
    pub cumulative: Vec<f64>,
    /// Events at each time.
    pub deaths: Vec<f64>,
}

impl StepCumHazard {
    pub fn new(times: Vec<f64>, increments: Vec<f64>, deaths: Vec<f64>) -> Self {
        let mut total = 0.0;
        let cumulative = increments
            .iter()
            .map(|d| {
                total += d;
                total
            })
            .collect();
        StepCumHazard {
            times,
            increments,
            cumulative,
            deaths,
        }
    }

    /// Λ₀(t), right-continuous.
    pub fn at(&self, t: f64) -> f64 {
        let i = self.times.partition_point(|x| *x <= t);
        if i == 0 {
            0.0
        } else {
            self.cumulative[i - 1]
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoxFit {
    pub layout: DesignLayout,
    /// Design columns kept for fitting, in order; `beta` aligns with them.
    pub columns: Vec<usize>,
    pub beta: Vec<f64>,
    /// Row-major inverse information over the kept columns.
    pub covariance: Vec<f64>,
    pub convergence: Convergence,
    pub baseline: StepCumHazard,
    pub episodes: usize,
    pub events: usize,
}

impl CoxFit {
    pub fn labels(&self) -> Vec<&ColumnLabel> {
        self.columns
            .iter()
            .map(|c| &self.layout.labels[*c])
            .collect()
    }

    /// Coefficients over every design column, zero where a column was removed.
    pub fn full_beta(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.layout.width()];
        for (c, b) in self.columns.iter().zip(&self.beta) {
            out[*c] = *b;
        }
        out
    }

    /// Position among the kept columns.
    pub fn kept_index(&self, column: usize) -> Option<usize> {
        self.columns.binary_search(&column).ok()
    }

    pub fn covariance_at(&self, i: usize, j: usize) -> f64 {
        self.covariance[i * self.columns.len() + j]
    }

    /// `cᵀ Σ c` for a contrast over design columns; removed columns carry no variance.
    pub fn contrast_variance(&self, contrast: &[(usize, f64)]) -> f64 {
        let kept: Vec<(usize, f64)> = contrast
            .iter()
            .filter_map(|(c, w)| self.kept_index(*c).map(|k| (k, *w)))
            .collect();
        let mut v = 0.0;
        for (i, wi) in &kept {
            for (j, wj) in &kept {
                v += wi * wj * self.covariance_at(*i, *j);
            }
        }
        v.max(0.0)
    }

    /// Linear predictor of a design row; removed columns contribute zero.
    pub fn linear_predictor(&self, row: &[(usize, f64)]) -> f64 {
        row.iter()
            .filter_map(|(c, v)| self.kept_index(*c).map(|k| self.beta[k] * v))
            .sum()
    }

    pub fn coefficient_table(&self) -> Vec<CoefficientRow> {
        let normal = Normal::standard();
        self.columns
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let label = &self.layout.labels[*c];
                let beta = self.beta[k];
                let se = self.covariance_at(k, k).max(0.0).sqrt();
                let p_value = if se > 0.0 {
                    2.0 * normal.sf((beta / se).abs())
                } else {
                    f64::NAN
                };
                CoefficientRow {
                    term: label.term.clone(),
                    level: label.level.clone(),
                    basis_index: label.basis_index,
                    beta,
                    se,
                    hazard_ratio: beta.exp(),
                    p_value,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub term: String,
    pub level: String,
    pub basis_index: Option<usize>,
    pub beta: f64,
    pub se: f64,
    pub hazard_ratio: f64,
    pub p_value: f64,
}

pub fn write_coefficients<W: Write>(rows: &[CoefficientRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "term",
        "level",
        "basis_index",
        "beta",
        "se",
        "hazard_ratio",
        "p_value",
    ])?;
    for r in rows {
        w.write_record([
            r.term.clone(),
            r.level.clone(),
            r.basis_index.map(|b| b.to_string()).unwrap_or_default(),
            format!("{:.10}", r.beta),
            format!("{:.10}", r.se),
            format!("{:.10}", r.hazard_ratio),
            format!("{:.6e}", r.p_value),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn column_name(label: &ColumnLabel) -> String {
    match label.basis_index {
        Some(j) => format!("{}[{}]#{j}", label.term, label.level),
        None => format!("{}[{}]", label.term, label.level),
    }
}

/// Counting-process data over the given design columns.
pub fn cox_data(design: &DesignMatrix, columns: &[usize]) -> Result<CoxData> {
    let mut position = vec![usize::MAX; design.width()];
    for (k, c) in columns.iter().enumerate() {
        position[*c] = k;
    }
    let rows = (0..design.rows()).map(|i| {
        let (c, v) = design.row(i);
        c.iter()
            .zip(v)
            .filter(|(c, _)| position[**c as usize] != usize::MAX)
            .map(|(c, v)| (position[*c as usize], *v))
            .collect::<Vec<_>>()
    });
    let labels = columns
        .iter()
        .map(|c| column_name(&design.layout.labels[*c]))
        .collect();
    CoxData::from_sparse(
        rows,
        design.start.clone(),
        design.stop.clone(),
        design.event.clone(),
        labels,
    )
}

/// Fits the model, dropping the design's flagged empty columns first.
pub fn fit_cox(design: &DesignMatrix, options: &CoxOptions) -> Result<CoxFit> {
    if design.events() == 0 {
        return Err(Error::NoEvents);
    }
    let columns: Vec<usize> = (0..design.width())
        .filter(|c| !design.empty_columns.contains(c))
        .collect();
    for c in &design.empty_columns {
        log::warn!(
            "dropping empty column {}",
            column_name(&design.layout.labels[*c])
        );
    }
    let data = cox_data(design, &columns)?;
    let est = maximize(&data, options)?;
    let p = columns.len();
    let covariance: Vec<f64> = (0..p * p).map(|i| est.covariance[(i / p, i % p)]).collect();
    let baseline = StepCumHazard::new(
        est.risk_sets.times.clone(),
        est.increments,
        est.risk_sets.deaths.clone(),
    );
    Ok(CoxFit {
        layout: design.layout.clone(),
        columns,
        beta: est.beta,
        covariance,
        convergence: est.convergence,
        baseline,
        episodes: design.rows(),
        events: design.events(),
    })
}

/// Breslow baseline of `design` at the fitted coefficients.
pub fn breslow_baseline(fit: &CoxFit, design: &DesignMatrix) -> Result<StepCumHazard> {
    let data = cox_data(design, &fit.columns)?;
    baseline_at(&data, &fit.beta)
}

/// Breslow baseline at an arbitrary coefficient vector (Nelson-Aalen at zero).
pub fn baseline_at(data: &CoxData, beta: &[f64]) -> Result<StepCumHazard> {
    let rs = RiskSets::new(data)?;
    let ev = evaluate(data, &rs, beta, false)?;
    let increments = ev.hazard_increments(&rs);
    Ok(StepCumHazard::new(rs.times, increments, rs.deaths))
}
