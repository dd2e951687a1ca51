use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::CoxFit;
use crate::cohort::{Covariate, Covariates};
use crate::design::{Block, BlockKind};
use crate::error::{Error, Result};
use crate::km::StepSurvival;

const Z95: f64 = 1.959963984540054;

fn check_seen(fit: &CoxFit, profile: &Covariates) -> Result<()> {
    for b in fit.layout.blocks.iter().filter(|b| b.active(profile)) {
        if (b.first..b.first + b.width).any(|c| fit.kept_index(c).is_none()) {
            return Err(Error::UnseenLevel {
                term: b.term_label(),
                level: b.level_label(),
            });
        }
    }
    Ok(())
}

/// Survival of `profile` over `(from, to]`, conditional on being event-free
/// at `from`, with a pointwise 95% band on the log cumulative hazard.
///
/// The multiplier at event age `u` uses the design row of the grid cell
/// containing `u`.
pub fn predict_survival(
    fit: &CoxFit,
    profile: &Covariates,
    from: f64,
    to: f64,
) -> Result<StepSurvival> {
    profile.validate()?;
    check_seen(fit, profile)?;
    let base = &fit.baseline;
    let p = fit.columns.len();
    let mut rows: BTreeMap<u64, (f64, Vec<(usize, f64)>)> = BTreeMap::new();
    let (mut times, mut values, mut lower, mut upper) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let (mut h, mut var_base) = (0.0, 0.0);
    let mut grad = vec![0.0; p];
    for j in 0..base.times.len() {
        let t = base.times[j];
        if t <= from {
            continue;
        }
        if t > to {
            break;
        }
        let anchor = fit.layout.grid.anchor_event(t);
        let (eta, row) = rows.entry(anchor.to_bits()).or_insert_with(|| {
            let row: Vec<(usize, f64)> = fit
                .layout
                .row(profile, anchor)
                .into_iter()
                .filter_map(|(c, v)| fit.kept_index(c).map(|k| (k, v)))
                .collect();
            (row.iter().map(|(k, v)| fit.beta[*k] * v).sum(), row)
        });
        let r = eta.exp();
        let dh = r * base.increments[j];
        h += dh;
        var_base += dh * dh / base.deaths[j];
        for (k, v) in row.iter() {
            grad[*k] += dh * v;
        }
        let mut var_beta = 0.0;
        for a in 0..p {
            if grad[a] == 0.0 {
                continue;
            }
            for b in 0..p {
                var_beta += grad[a] * grad[b] * fit.covariance_at(a, b);
            }
        }
        let s = (-h).exp();
        let se_log = (var_base + var_beta.max(0.0)).sqrt() / h;
        times.push(t);
        values.push(s);
        lower.push((-h * (Z95 * se_log).exp()).exp());
        upper.push((-h * (-Z95 * se_log).exp()).exp());
    }
    let mut curve = StepSurvival::new(times, values)?;
    curve.lower = Some(lower);
    curve.upper = Some(upper);
    curve.no_events = false;
    Ok(curve)
}

/// Hazard ratio as a function of age with a pointwise 95% Wald band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardRatioCurve {
    pub term: String,
    pub level: String,
    pub ages: Vec<f64>,
    pub ratios: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

fn contrast(fit: &CoxFit, block: &Block, age: f64, out: &mut Vec<(usize, f64)>) {
    match block.kind {
        BlockKind::AgeDependent => {
            let basis = fit.layout.basis.eval(fit.layout.grid.anchor_event(age));
            out.extend(basis.iter().enumerate().map(|(j, v)| (block.first + j, *v)));
        }
        _ => out.push((block.first, 1.0)),
    }
}

fn curve(
    fit: &CoxFit,
    term: String,
    level: String,
    blocks: &[&Block],
    ages: &[f64],
) -> HazardRatioCurve {
    let beta = fit.full_beta();
    let mut out = HazardRatioCurve {
        term,
        level,
        ages: ages.to_vec(),
        ratios: vec![],
        lower: vec![],
        upper: vec![],
    };
    for &a in ages {
        let mut c = Vec::new();
        for b in blocks {
            contrast(fit, b, a, &mut c);
        }
        let eta: f64 = c.iter().map(|(j, v)| beta[*j] * v).sum();
        let se = fit.contrast_variance(&c).sqrt();
        out.ratios.push(eta.exp());
        out.lower.push((eta - Z95 * se).exp());
        out.upper.push((eta + Z95 * se).exp());
    }
    out
}

fn main_block(fit: &CoxFit, covariate: Covariate, level: u8) -> Result<&Block> {
    fit.layout
        .block(covariate, level)
        .ok_or_else(|| Error::UnseenLevel {
            term: covariate.name().into(),
            level: covariate.level_label(level),
        })
}

pub fn hazard_ratio_curve(
    fit: &CoxFit,
    covariate: Covariate,
    level: u8,
    ages: &[f64],
) -> Result<HazardRatioCurve> {
    let b = main_block(fit, covariate, level)?;
    Ok(curve(fit, b.term_label(), b.level_label(), &[b], ages))
}

/// Joint effect of two main-effect levels, optionally with their interaction.
pub fn combined_effect(
    fit: &CoxFit,
    (a, la): (Covariate, u8),
    (b, lb): (Covariate, u8),
    ages: &[f64],
    with_interaction: bool,
) -> Result<HazardRatioCurve> {
    let ba = main_block(fit, a, la)?;
    let bb = main_block(fit, b, lb)?;
    let mut blocks = vec![ba, bb];
    if with_interaction {
        let bi = fit
            .layout
            .interaction(a, la, b, lb)
            .ok_or_else(|| Error::UnseenLevel {
                term: format!("{}:{}", a.name(), b.name()),
                level: format!("{}:{}", a.level_label(la), b.level_label(lb)),
            })?;
        blocks.push(bi);
    }
    let term = format!(
        "{}+{}{}",
        ba.term_label(),
        bb.term_label(),
        if with_interaction { "+interaction" } else { "" }
    );
    let level = format!("{}+{}", ba.level_label(), bb.level_label());
    Ok(curve(fit, term, level, &blocks, ages))
}
