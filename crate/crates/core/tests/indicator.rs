use disfle::indicator::{disfle_at, disfle_curve};
use disfle::km::StepSurvival;
use proptest::prelude::*;

/// Jump times on a 1/8-year lattice in (50, 104) with non-increasing values.
fn curve_strategy() -> impl Strategy<Value = StepSurvival> {
    prop::collection::vec((1u32..432, 0.0f64..0.3), 1..40).prop_map(|raw| {
        let mut ticks: Vec<u32> = raw.iter().map(|(t, _)| *t).collect();
        ticks.sort_unstable();
        ticks.dedup();
        let mut s = 1.0;
        let values = ticks
            .iter()
            .zip(&raw)
            .map(|(_, (_, drop))| {
                s *= 1.0 - drop;
                s
            })
            .collect();
        StepSurvival::new(
            ticks.iter().map(|t| 50.0 + f64::from(*t) / 8.0).collect(),
            values,
        )
        .unwrap()
    })
}

/// Left Riemann sum on a 1/64 lattice, exact for lattice-aligned steps.
fn riemann(curve: &StepSurvival, t: f64, t_max: f64) -> f64 {
    let h = 1.0 / 64.0;
    let n = ((t_max - t) / h).round() as usize;
    let sum: f64 = (0..n).map(|k| curve.at(t + k as f64 * h) * h).sum();
    sum / curve.at(t)
}

#[test]
fn exponential_restricted_mean() {
    let d = 1e-4;
    let n = (50.0 / d) as usize;
    let times: Vec<f64> = (1..=n).map(|k| 50.0 + k as f64 * d).collect();
    let values: Vec<f64> = (1..=n).map(|k| (-0.1 * k as f64 * d).exp()).collect();
    let s = StepSurvival::new(times, values).unwrap();
    let exact = (1.0 - (-5.0f64).exp()) / 0.1;
    let v = disfle_at(&s, 50.0, 100.0).unwrap();
    assert!((v - exact).abs() < 1e-3, "{v} vs {exact}");
    assert!((v - 9.933).abs() < 1e-3);
}

proptest! {
    #[test]
    fn matches_riemann_oracle(curve in curve_strategy(), tick in 0u32..200) {
        let t = 50.0 + f64::from(tick) / 8.0;
        prop_assume!(curve.at(t) > 0.0);
        let v = disfle_at(&curve, t, 100.0).unwrap();
        prop_assert!((v - riemann(&curve, t, 100.0)).abs() < 1e-9);
        prop_assert!(v >= 0.0 && v <= 100.0 - t + 1e-12);
    }

    #[test]
    fn dominance(curve in curve_strategy(), shrink in prop::collection::vec(0.0f64..0.2, 40)) {
        let mut factor = 1.0;
        let lower: Vec<f64> = curve.values.iter().zip(&shrink).map(|(v, s)| { factor *= 1.0 - s; v * factor }).collect();
        let s1 = StepSurvival::new(curve.times.clone(), lower).unwrap();
        if s1.at(50.0) > 0.0 {
            prop_assert!(disfle_at(&s1, 50.0, 100.0).unwrap() <= disfle_at(&curve, 50.0, 100.0).unwrap() + 1e-12);
        }
    }

    #[test]
    fn conditioning_identity(curve in curve_strategy(), tick in 0u32..200) {
        let t = 50.0 + f64::from(tick) / 8.0;
        let st = curve.at(t);
        prop_assume!(st > 0.0);
        let k = curve.times.partition_point(|x| *x <= t);
        let renorm = StepSurvival::new(
            curve.times[k..].to_vec(),
            curve.values[k..].iter().map(|v| (v / st).min(1.0)).collect(),
        ).unwrap();
        let a = disfle_at(&curve, t, 100.0).unwrap();
        let b = disfle_at(&renorm, t, 100.0).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn truncation_at_horizon(curve in curve_strategy(), t_max in 60.0f64..100.0) {
        prop_assume!(curve.at(50.0) > 0.0);
        let a = disfle_at(&curve, 50.0, t_max).unwrap();
        let b = disfle_at(&curve.truncated(t_max), 50.0, t_max).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn curve_respects_horizon(curve in curve_strategy()) {
        prop_assume!(curve.at(50.0) > 0.0);
        let c = disfle_curve(&curve, 50.0, 100.0).unwrap();
        for (a, v) in c.ages.iter().zip(&c.values) {
            prop_assert!(*v >= 0.0 && a + v <= 100.0 + 1e-9);
        }
        prop_assert_eq!(*c.ages.last().unwrap(), 100.0);
    }
}
