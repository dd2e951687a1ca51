//! Disease-free life expectancy: restricted conditional expectation of the
//! residual event-free time, computed exactly on step survival curves.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::cohort::{Covariate, Covariates, Sex};
use crate::cox::{predict_survival, CoxFit};
use crate::error::{Error, Result};
use crate::km::StepSurvival;
use crate::par;

pub const DEFAULT_T_MAX: f64 = 100.0;
pub const START_AGE: f64 = 50.0;

/// ∫_t^{t_max} of the right-continuous step function that is 1 before
/// `times[0]` and `values[i]` on `[times[i], times[i+1])`.
fn integrate(times: &[f64], values: &[f64], t: f64, t_max: f64) -> f64 {
    let i = times.partition_point(|x| *x <= t);
    let mut level = if i == 0 { 1.0 } else { values[i - 1] };
    let mut from = t;
    let mut total = 0.0;
    for (tau, v) in times[i..].iter().zip(&values[i..]) {
        if *tau >= t_max {
            break;
        }
        total += level * (tau - from);
        from = *tau;
        level = *v;
    }
    total + level * (t_max - from)
}

fn check(curve: &StepSurvival, t: f64, t_max: f64) -> Result<f64> {
    if t >= t_max {
        return Err(Error::BeyondHorizon { age: t, t_max });
    }
    let s = curve.at(t);
    if s <= 0.0 {
        return Err(Error::ZeroSurvival(t));
    }
    Ok(s)
}

/// Expected event-free years in `[t, t_max]` given event-free at `t`.
pub fn disfle_at(curve: &StepSurvival, t: f64, t_max: f64) -> Result<f64> {
    let s = check(curve, t, t_max)?;
    Ok(integrate(&curve.times, &curve.values, t, t_max) / s)
}

/// Envelope obtained by integrating the lower and upper survival bands and
/// dividing by the point estimate at `t`.
pub fn disfle_band_at(curve: &StepSurvival, t: f64, t_max: f64) -> Result<Option<(f64, f64)>> {
    let s = check(curve, t, t_max)?;
    let (Some(lo), Some(hi)) = (&curve.lower, &curve.upper) else {
        return Ok(None);
    };
    let lower = integrate(&curve.times, lo, t, t_max) / s;
    let upper = (integrate(&curve.times, hi, t, t_max) / s).min(t_max - t);
    Ok(Some((lower.min(upper), upper)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisfleCurve {
    pub ages: Vec<f64>,
    pub values: Vec<f64>,
    pub t_max: f64,
    /// Band envelope from the survival band endpoints, when available.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<Vec<f64>>,
}

impl DisfleCurve {
    /// Value at an age on the curve, or `None` if `age` is not an evaluation point.
    pub fn at(&self, age: f64) -> Option<f64> {
        self.ages
            .iter()
            .position(|a| *a == age)
            .map(|i| self.values[i])
    }
}

/// Dis-FLE at `start` and at every event time in `(start, t_max)` with
/// positive survival, closed by `(t_max, 0)`.
pub fn disfle_curve(curve: &StepSurvival, start: f64, t_max: f64) -> Result<DisfleCurve> {
    check(curve, start, t_max)?;
    let k0 = curve.times.partition_point(|x| *x <= start);
    let k1 = curve.times.partition_point(|x| *x < t_max);
    let idx: Vec<usize> = (k0..k1).filter(|i| curve.values[*i] > 0.0).collect();

    let mut ages = vec![start];
    let mut values = vec![disfle_at(curve, start, t_max)?];
    let band = curve.lower.is_some() && curve.upper.is_some();
    let (mut lower, mut upper) = (Vec::new(), Vec::new());
    if band {
        let (l, u) = disfle_band_at(curve, start, t_max)?.expect("band present");
        lower.push(l);
        upper.push(u);
    }
    let point = suffix_integrals(&curve.times, &curve.values, k1, t_max);
    let lo = curve
        .lower
        .as_ref()
        .map(|v| suffix_integrals(&curve.times, v, k1, t_max));
    let hi = curve
        .upper
        .as_ref()
        .map(|v| suffix_integrals(&curve.times, v, k1, t_max));
    for i in idx {
        let t = curve.times[i];
        let s = curve.values[i];
        ages.push(t);
        values.push(point[i] / s);
        if let (Some(lo), Some(hi)) = (&lo, &hi) {
            let u = (hi[i] / s).min(t_max - t);
            lower.push((lo[i] / s).min(u));
            upper.push(u);
        }
    }
    ages.push(t_max);
    values.push(0.0);
    if band {
        lower.push(0.0);
        upper.push(0.0);
    }
    Ok(DisfleCurve {
        ages,
        values,
        t_max,
        lower: band.then_some(lower),
        upper: band.then_some(upper),
    })
}

/// `out[i] = ∫_{times[i]}^{t_max} S` for `i < k1`, accumulated backwards.
fn suffix_integrals(times: &[f64], values: &[f64], k1: usize, t_max: f64) -> Vec<f64> {
    let mut out = vec![0.0; k1];
    let mut acc = 0.0;
    for i in (0..k1).rev() {
        let next = if i + 1 < k1 { times[i + 1] } else { t_max };
        acc += values[i] * (next - times[i]);
        out[i] = acc;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ProfileLabel {
    Lowest,
    Intermediate,
    Highest,
}

impl fmt::Display for ProfileLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProfileLabel::Lowest => "lowest",
            ProfileLabel::Intermediate => "intermediate",
            ProfileLabel::Highest => "highest",
        })
    }
}

pub const BEHAVIOURS: [Covariate; 3] = [Covariate::Smoking, Covariate::Obesity, Covariate::Alcohol];

/// Sex plus the risk behaviours present at category 2; everything else at reference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RiskProfile {
    pub label: ProfileLabel,
    pub sex: Sex,
    pub behaviours: Vec<Covariate>,
}

impl RiskProfile {
    pub fn new(sex: Sex, behaviours: Vec<Covariate>) -> Result<Self> {
        let label = match behaviours.len() {
            0 => ProfileLabel::Lowest,
            1 => ProfileLabel::Intermediate,
            2 => ProfileLabel::Highest,
            n => {
                return Err(Error::InvalidArgument(format!(
                    "risk profile with {n} behaviours"
                )))
            }
        };
        if behaviours.iter().any(|b| !BEHAVIOURS.contains(b)) {
            return Err(Error::InvalidArgument(
                "risk profile behaviours must be smoking, obesity or alcohol".into(),
            ));
        }
        Ok(RiskProfile {
            label,
            sex,
            behaviours,
        })
    }

    pub fn covariates(&self) -> Covariates {
        let base = Covariates {
            sex: self.sex,
            ..Covariates::reference()
        };
        self.behaviours.iter().fold(base, |x, b| x.with(*b, 2))
    }

    pub fn name(&self) -> String {
        let mut s = format!("{}-{}", self.label, self.sex.code());
        for b in &self.behaviours {
            s.push('-');
            s.push_str(b.name());
        }
        s
    }

    /// Two lowest, six intermediate and six highest profiles.
    pub fn standard() -> Vec<RiskProfile> {
        let mut out = Vec::new();
        for sex in [Sex::Female, Sex::Male] {
            out.push(RiskProfile::new(sex, vec![]).expect("valid"));
        }
        for sex in [Sex::Female, Sex::Male] {
            for b in BEHAVIOURS {
                out.push(RiskProfile::new(sex, vec![b]).expect("valid"));
            }
        }
        for sex in [Sex::Female, Sex::Male] {
            for (i, a) in BEHAVIOURS.iter().enumerate() {
                for b in &BEHAVIOURS[i + 1..] {
                    out.push(RiskProfile::new(sex, vec![*a, *b]).expect("valid"));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileCurve {
    pub profile: RiskProfile,
    pub survival: StepSurvival,
    pub disfle: DisfleCurve,
}

/// Predicted survival from age 50 and its Dis-FLE curve for each profile, keyed by name.
pub fn profile_curves(
    fit: &CoxFit,
    profiles: &[RiskProfile],
    t_max: f64,
) -> Result<BTreeMap<String, ProfileCurve>> {
    par::map_slice(profiles, |p| {
        let survival = predict_survival(fit, &p.covariates(), START_AGE, t_max)?;
        let disfle = disfle_curve(&survival, START_AGE, t_max)?;
        Ok((
            p.name(),
            ProfileCurve {
                profile: p.clone(),
                survival,
                disfle,
            },
        ))
    })
    .into_iter()
    .collect()
}

/// Writes `stratum,age,survival,disfle,lower,upper` rows; bands are the Dis-FLE envelope.
pub fn write_disfle<'a, W: Write>(
    curves: impl IntoIterator<Item = (&'a String, &'a StepSurvival, &'a DisfleCurve)>,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["stratum", "age", "survival", "disfle", "lower", "upper"])?;
    for (name, s, d) in curves {
        for (i, (a, v)) in d.ages.iter().zip(&d.values).enumerate() {
            let band =
                |b: &Option<Vec<f64>>| b.as_ref().map_or(String::new(), |b| format!("{:.6}", b[i]));
            let surv = if *a >= d.t_max {
                s.before(*a)
            } else {
                s.at(*a)
            };
            w.write_record([
                name.clone(),
                format!("{a:.6}"),
                format!("{surv:.10}"),
                format!("{v:.6}"),
                band(&d.lower),
                band(&d.upper),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(times: &[f64], values: &[f64]) -> StepSurvival {
        StepSurvival::new(times.to_vec(), values.to_vec()).unwrap()
    }

    #[test]
    fn flat_curve_gives_full_horizon() {
        let s = step(&[], &[]);
        assert_eq!(disfle_at(&s, 50.0, 100.0).unwrap(), 50.0);
        let c = disfle_curve(&step(&[60.0], &[1.0]), 50.0, 100.0).unwrap();
        for (a, v) in c.ages.iter().zip(&c.values) {
            assert_eq!(*v, 100.0 - a);
        }
    }

    #[test]
    fn hand_step_example() {
        let s = step(&[60.0, 80.0], &[0.5, 0.0]);
        assert_eq!(disfle_at(&s, 50.0, 100.0).unwrap(), 20.0);
        assert_eq!(disfle_at(&s, 70.0, 100.0).unwrap(), 10.0);
        assert!(matches!(
            disfle_at(&s, 85.0, 100.0),
            Err(Error::ZeroSurvival(_))
        ));
        assert!(matches!(
            disfle_at(&s, 100.0, 100.0),
            Err(Error::BeyondHorizon { .. })
        ));
    }

    #[test]
    fn curve_matches_direct_sums() {
        let times: Vec<f64> = (1..40).map(|i| 50.0 + 1.3 * i as f64).collect();
        let values: Vec<f64> = (1..40).map(|i| 1.0 - 0.02 * i as f64).collect();
        let s = step(&times, &values);
        let c = disfle_curve(&s, 50.0, 100.0).unwrap();
        assert_eq!(
            c.ages.len(),
            2 + times.iter().filter(|t| **t < 100.0).count()
        );
        for (a, v) in c.ages.iter().zip(&c.values).take(c.ages.len() - 1) {
            let direct = disfle_at(&s, *a, 100.0).unwrap();
            assert!((v - direct).abs() < 1e-12, "{a}: {v} vs {direct}");
            assert!(v + a <= 100.0 + 1e-12);
        }
        assert_eq!(*c.values.last().unwrap(), 0.0);
    }
}
