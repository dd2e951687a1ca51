//! Kaplan-Meier estimation under left truncation and right censoring.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::cohort::{Covariate, Exposure};
use crate::error::{Error, Result};
use crate::par;

/// Right-continuous step survival function, equal to 1 before `times[0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSurvival {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<Vec<f64>>,
    /// Risk-set size and event count at each time (Kaplan-Meier curves only).
    #[serde(default)]
    pub at_risk: Vec<f64>,
    #[serde(default)]
    pub events: Vec<f64>,
    /// Cumulative Greenwood sum `Σ d / (n (n - d))`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub greenwood: Option<Vec<f64>>,
    /// Set when the stratum had no events: the curve is flat at 1.
    #[serde(default)]
    pub no_events: bool,
    #[serde(default)]
    pub n_censored: usize,
}

impl StepSurvival {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::InvalidArgument(
                "times and values differ in length".into(),
            ));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "survival times must increase strictly".into(),
            ));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) || values.windows(2).any(|w| w[1] > w[0])
        {
            return Err(Error::InvalidArgument(
                "survival values must be non-increasing in [0, 1]".into(),
            ));
        }
        Ok(StepSurvival {
            no_events: times.is_empty(),
            times,
            values,
            lower: None,
            upper: None,
            at_risk: Vec::new(),
            events: Vec::new(),
            greenwood: None,
            n_censored: 0,
        })
    }

    /// S(t), right-continuous.
    pub fn at(&self, t: f64) -> f64 {
        let i = self.times.partition_point(|x| *x <= t);
        if i == 0 {
            1.0
        } else {
            self.values[i - 1]
        }
    }

    /// S just before t.
    pub fn before(&self, t: f64) -> f64 {
        let i = self.times.partition_point(|x| *x < t);
        if i == 0 {
            1.0
        } else {
            self.values[i - 1]
        }
    }

    pub fn band_at(&self, t: f64) -> Option<(f64, f64)> {
        let (lo, hi) = (self.lower.as_ref()?, self.upper.as_ref()?);
        let i = self.times.partition_point(|x| *x <= t);
        Some(if i == 0 {
            (1.0, 1.0)
        } else {
            (lo[i - 1], hi[i - 1])
        })
    }

    pub fn event_count(&self) -> usize {
        self.events.iter().sum::<f64>() as usize
    }

    /// Restriction to times up to and including `t_max`.
    pub fn truncated(&self, t_max: f64) -> StepSurvival {
        let k = self.times.partition_point(|x| *x <= t_max);
        let cut = |v: &Vec<f64>| v[..k.min(v.len())].to_vec();
        StepSurvival {
            times: cut(&self.times),
            values: cut(&self.values),
            lower: self.lower.as_ref().map(cut),
            upper: self.upper.as_ref().map(cut),
            at_risk: cut(&self.at_risk),
            events: cut(&self.events),
            greenwood: self.greenwood.as_ref().map(cut),
            no_events: self.no_events,
            n_censored: self.n_censored,
        }
    }
}

/// Product-limit curve of one group of exposures.
///
/// The risk set at an event age `t` holds every exposure with
/// `entry < t <= exit`; all events at `t` enter one factor `1 - d/n`.
pub fn km_curve<'a>(exposures: impl IntoIterator<Item = &'a Exposure>) -> StepSurvival {
    let mut entries = Vec::new();
    let mut exits = Vec::new();
    let mut event_ages = Vec::new();
    let mut censored = 0;
    for e in exposures {
        entries.push(e.entry_age);
        exits.push(e.exit_age);
        if e.event {
            event_ages.push(e.exit_age);
        } else {
            censored += 1;
        }
    }
    entries.sort_by(f64::total_cmp);
    exits.sort_by(f64::total_cmp);
    event_ages.sort_by(f64::total_cmp);

    let mut curve = StepSurvival::new(Vec::new(), Vec::new()).expect("empty curve is valid");
    curve.n_censored = censored;
    let mut greenwood = Vec::new();
    let (mut s, mut g) = (1.0, 0.0);
    let (mut entered, mut left) = (0usize, 0usize);
    let mut i = 0;
    while i < event_ages.len() {
        let t = event_ages[i];
        let mut d = 0usize;
        while i < event_ages.len() && event_ages[i] == t {
            d += 1;
            i += 1;
        }
        while entered < entries.len() && entries[entered] < t {
            entered += 1;
        }
        while left < exits.len() && exits[left] < t {
            left += 1;
        }
        let n = (entered - left) as f64;
        let d = d as f64;
        s *= 1.0 - d / n;
        g += if n > d {
            d / (n * (n - d))
        } else {
            f64::INFINITY
        };
        curve.times.push(t);
        curve.values.push(s);
        curve.at_risk.push(n);
        curve.events.push(d);
        greenwood.push(g);
    }
    curve.no_events = curve.times.is_empty();
    curve.greenwood = Some(greenwood);
    curve
}

/// Stratum label such as `sex=F,smoking=2`, or `all` without strata.
pub fn stratum_label(e: &Exposure, strata: &[Covariate]) -> String {
    if strata.is_empty() {
        return "all".into();
    }
    strata
        .iter()
        .map(|c| format!("{}={}", c.name(), c.level_label(e.covariates.level(*c))))
        .collect::<Vec<_>>()
        .join(",")
}

/// Fits one product-limit curve per stratum, in parallel across strata.
pub fn fit_km(
    exposures: &[Exposure],
    strata: &[Covariate],
) -> Result<BTreeMap<String, StepSurvival>> {
    if exposures.is_empty() {
        return Err(Error::EmptyStratum(if strata.is_empty() {
            "all".into()
        } else {
            "any".into()
        }));
    }
    let mut groups: BTreeMap<String, Vec<&Exposure>> = BTreeMap::new();
    for e in exposures {
        groups.entry(stratum_label(e, strata)).or_default().push(e);
    }
    let groups: Vec<(String, Vec<&Exposure>)> = groups.into_iter().collect();
    let curves = par::map_slice(&groups, |(_, members)| km_curve(members.iter().copied()));
    let out: BTreeMap<String, StepSurvival> =
        groups.into_iter().map(|(k, _)| k).zip(curves).collect();
    for (k, c) in &out {
        if c.no_events {
            log::warn!("stratum {k} has no events; survival is flat at 1");
        }
    }
    Ok(out)
}

/// Transformation used for pointwise confidence bands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandTransform {
    /// Complementary log-log; always inside [0, 1].
    #[default]
    LogLog,
    Log,
    Plain,
}

/// Two-sided standard-normal quantile for confidence `level`.
pub fn normal_quantile(level: f64) -> f64 {
    Normal::standard().inverse_cdf(0.5 + level / 2.0)
}

/// Adds pointwise bands from the Greenwood variance accumulators.
pub fn km_confidence(
    curve: &StepSurvival,
    level: f64,
    transform: BandTransform,
) -> Result<StepSurvival> {
    let g = curve
        .greenwood
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("curve carries no Greenwood accumulators".into()))?;
    if !(0.0 < level && level < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence level {level} outside (0, 1)"
        )));
    }
    let z = normal_quantile(level);
    let mut lower = Vec::with_capacity(g.len());
    let mut upper = Vec::with_capacity(g.len());
    for (s, g) in curve.values.iter().zip(g) {
        let (lo, hi) = if *s <= 0.0 || !g.is_finite() {
            (0.0, 0.0)
        } else if *s >= 1.0 || *g == 0.0 {
            (*s, *s)
        } else {
            match transform {
                BandTransform::LogLog => {
                    let se = g.sqrt() / s.ln().abs();
                    (s.powf((z * se).exp()), s.powf((-z * se).exp()))
                }
                BandTransform::Log => {
                    let se = g.sqrt();
                    (s * (-z * se).exp(), s * (z * se).exp())
                }
                BandTransform::Plain => {
                    let se = s * g.sqrt();
                    (s - z * se, s + z * se)
                }
            }
        };
        lower.push(lo.clamp(0.0, 1.0));
        upper.push(hi.clamp(0.0, 1.0));
    }
    let mut out = curve.clone();
    out.lower = Some(lower);
    out.upper = Some(upper);
    Ok(out)
}

/// Writes curves as CSV with columns `stratum,time,survival,lower,upper`.
pub fn write_curves<W: Write>(curves: &BTreeMap<String, StepSurvival>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["stratum", "time", "survival", "lower", "upper"])?;
    for (k, c) in curves {
        for (i, (t, s)) in c.times.iter().zip(&c.values).enumerate() {
            let band = |b: &Option<Vec<f64>>| {
                b.as_ref()
                    .map_or(String::new(), |v| format!("{:.10}", v[i]))
            };
            w.write_record([
                k.clone(),
                format!("{t:.6}"),
                format!("{s:.10}"),
                band(&c.lower),
                band(&c.upper),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{Covariates, Provenance, Sex};

    fn ex(entry: f64, exit: f64, event: bool) -> Exposure {
        Exposure {
            subject_id: String::new(),
            birth_year: 1950,
            covariates: Covariates::reference(),
            entry_age: entry,
            exit_age: exit,
            event,
            provenance: Provenance::Observed,
        }
    }

    #[test]
    fn uncensored_is_empirical_survival() {
        let c = km_curve(&[ex(0.0, 1.0, true), ex(0.0, 2.0, true), ex(0.0, 3.0, true)]);
        assert_eq!(c.times, vec![1.0, 2.0, 3.0]);
        let expected = [2.0 / 3.0, 1.0 / 3.0, 0.0];
        for (v, e) in c.values.iter().zip(expected) {
            assert!((v - e).abs() < 1e-15);
        }
    }

    #[test]
    fn censoring_reduces_risk_set() {
        let c = km_curve(&[ex(0.0, 1.0, true), ex(0.0, 2.0, false), ex(0.0, 3.0, true)]);
        assert_eq!(c.times, vec![1.0, 3.0]);
        assert!((c.values[0] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(c.at_risk[1], 1.0);
        assert_eq!(c.values[1], 0.0);
        assert_eq!(c.event_count() + c.n_censored, 3);
    }

    #[test]
    fn delayed_entry() {
        let c = km_curve(&[ex(2.0, 4.0, true), ex(0.0, 3.0, true)]);
        assert_eq!(c.at(3.0), 0.5);
        assert_eq!(c.at(4.0), 0.0);
        assert_eq!(c.at_risk, vec![2.0, 1.0]);
        // Entry exactly at an event age is not yet at risk.
        let c = km_curve(&[ex(3.0, 4.0, false), ex(0.0, 3.0, true)]);
        assert_eq!(c.at_risk, vec![1.0]);
    }

    #[test]
    fn strata_and_flat_curves() {
        let mut a = ex(50.0, 52.0, true);
        a.covariates.sex = Sex::Male;
        let b = ex(50.0, 53.0, false);
        let curves = fit_km(&[a, b], &[Covariate::Sex]).unwrap();
        assert_eq!(curves.keys().collect::<Vec<_>>(), vec!["sex=F", "sex=M"]);
        assert!(curves["sex=F"].no_events);
        assert_eq!(curves["sex=F"].at(60.0), 1.0);
        assert!(fit_km(&[], &[]).is_err());
    }

    #[test]
    fn bands() {
        let flat = km_confidence(
            &km_curve(&[ex(0.0, 1.0, false)]),
            0.95,
            BandTransform::LogLog,
        )
        .unwrap();
        assert!(flat.lower.unwrap().is_empty());

        let mut group: Vec<Exposure> = (0..99).map(|_| ex(0.0, 10.0, false)).collect();
        group.push(ex(0.0, 5.0, true));
        let c = km_curve(&group);
        for transform in [
            BandTransform::LogLog,
            BandTransform::Log,
            BandTransform::Plain,
        ] {
            let b = km_confidence(&c, 0.95, transform).unwrap();
            let (lo, hi) = b.band_at(5.0).unwrap();
            assert!(lo <= 0.99 && 0.99 <= hi);
            // Independent evaluation of the Greenwood variance 1 / (100 * 99).
            let var: f64 = 1.0 / (100.0 * 99.0);
            let z: f64 = 1.959963984540054;
            let (elo, ehi) = match transform {
                BandTransform::LogLog => {
                    let se = var.sqrt() / 0.99f64.ln().abs();
                    (0.99f64.powf((z * se).exp()), 0.99f64.powf((-z * se).exp()))
                }
                BandTransform::Log => (
                    0.99 * (-z * var.sqrt()).exp(),
                    (0.99 * (z * var.sqrt()).exp()).min(1.0),
                ),
                BandTransform::Plain => (
                    0.99 - z * 0.99 * var.sqrt(),
                    (0.99 + z * 0.99 * var.sqrt()).min(1.0),
                ),
            };
            assert!((lo - elo).abs() < 1e-12 && (hi - ehi).abs() < 1e-12);
            if transform != BandTransform::LogLog {
                assert!(hi - lo < 0.05, "{transform:?} width {}", hi - lo);
            }
        }

        let zero = km_confidence(
            &km_curve(&[ex(0.0, 1.0, true)]),
            0.95,
            BandTransform::LogLog,
        )
        .unwrap();
        assert_eq!(zero.band_at(1.0), Some((0.0, 0.0)));
    }
}
