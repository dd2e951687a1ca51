//! Natural cubic spline basis in truncated-power form on unit-scaled knots.
//!
//! With knots `0 = k_0 < … < k_{K-1} = 1` on the unit scale, the basis is
//! `[1], u, d_j(u) - d_{K-2}(u)` for `j = 0..K-2`, where
//! `d_j(u) = ((u - k_j)^3_+ - (u - k_{K-1})^3_+) / (k_{K-1} - k_j)`.
//! Every column is C² and linear outside the boundary knots. An optional
//! fixed change of basis keeps the span while improving conditioning.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SplineDef", into = "SplineDef")]
pub struct NaturalSpline {
    lower: f64,
    upper: f64,
    interior: Vec<f64>,
    intercept: bool,
    /// All knots on the unit scale, boundaries included.
    unit_knots: Vec<f64>,
    /// Optional row-major `df × df` change of basis applied after evaluation.
    transform: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct SplineDef {
    boundary: (f64, f64),
    interior: Vec<f64>,
    intercept: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    transform: Option<Vec<f64>>,
}

impl TryFrom<SplineDef> for NaturalSpline {
    type Error = Error;

    fn try_from(d: SplineDef) -> Result<Self> {
        let mut s = NaturalSpline::new(d.boundary, d.interior, d.intercept)?;
        if let Some(t) = d.transform {
            if t.len() != s.df() * s.df() {
                return Err(Error::Config("spline transform has the wrong size".into()));
            }
            s.transform = Some(t);
        }
        Ok(s)
    }
}

impl From<NaturalSpline> for SplineDef {
    fn from(s: NaturalSpline) -> Self {
        SplineDef {
            boundary: (s.lower, s.upper),
            interior: s.interior,
            intercept: s.intercept,
            transform: s.transform,
        }
    }
}

fn cube_pos(x: f64) -> f64 {
    if x > 0.0 {
        x * x * x
    } else {
        0.0
    }
}

fn square_pos(x: f64) -> f64 {
    if x > 0.0 {
        x * x
    } else {
        0.0
    }
}

impl NaturalSpline {
    pub fn new(boundary: (f64, f64), interior: Vec<f64>, intercept: bool) -> Result<Self> {
        let (lower, upper) = boundary;
        if !(lower < upper) {
            return Err(Error::Config(format!(
                "spline boundary {lower}..{upper} is empty"
            )));
        }
        let mut prev = lower;
        for &k in &interior {
            if !(k > prev && k < upper) {
                return Err(Error::Config(format!(
                    "interior knots must increase strictly inside ({lower}, {upper})"
                )));
            }
            prev = k;
        }
        let mut spline = NaturalSpline {
            lower,
            upper,
            interior,
            intercept,
            unit_knots: Vec::new(),
            transform: None,
        };
        spline.rebuild();
        if spline.df() < 2 {
            return Err(Error::Config(
                "spline basis needs at least 2 degrees of freedom".into(),
            ));
        }
        Ok(spline)
    }

    /// Places `df - 1 - intercept` interior knots at equally spaced quantiles
    /// of `ages` (restricted to the boundary range).
    pub fn with_quantile_knots(
        ages: &[f64],
        df: usize,
        boundary: (f64, f64),
        intercept: bool,
    ) -> Result<Self> {
        let n_interior = df
            .checked_sub(1 + usize::from(intercept))
            .ok_or_else(|| Error::Config(format!("df = {df} too small for this basis")))?;
        let (lower, upper) = boundary;
        let mut inside: Vec<f64> = ages
            .iter()
            .copied()
            .filter(|a| *a > lower && *a < upper)
            .collect();
        inside.sort_by(f64::total_cmp);
        let mut knots: Vec<f64> = (1..=n_interior)
            .filter_map(|i| {
                if inside.is_empty() {
                    return None;
                }
                let p = i as f64 / (n_interior + 1) as f64;
                let h = (inside.len() - 1) as f64 * p;
                let lo = h.floor() as usize;
                let hi = h.ceil() as usize;
                Some(inside[lo] + (h - lo as f64) * (inside[hi] - inside[lo]))
            })
            .collect();
        knots.dedup();
        let valid = knots.len() == n_interior
            && knots.windows(2).all(|w| w[0] < w[1])
            && knots.iter().all(|k| *k > lower && *k < upper);
        if !valid {
            log::warn!(
                "event ages too concentrated for quantile knots; using equally spaced knots"
            );
            knots = (1..=n_interior)
                .map(|i| lower + (upper - lower) * i as f64 / (n_interior + 1) as f64)
                .collect();
        }
        NaturalSpline::new(boundary, knots, intercept)
    }

    fn rebuild(&mut self) {
        let span = self.upper - self.lower;
        self.unit_knots = std::iter::once(0.0)
            .chain(self.interior.iter().map(|k| (k - self.lower) / span))
            .chain(std::iter::once(1.0))
            .collect();
    }

    pub fn df(&self) -> usize {
        self.interior.len() + 1 + usize::from(self.intercept)
    }

    pub fn boundary(&self) -> (f64, f64) {
        (self.lower, self.upper)
    }

    pub fn interior(&self) -> &[f64] {
        &self.interior
    }

    pub fn has_intercept(&self) -> bool {
        self.intercept
    }

    pub fn to_unit(&self, x: f64) -> f64 {
        (x - self.lower) / (self.upper - self.lower)
    }

    pub fn eval(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.df()];
        self.eval_into(x, &mut out);
        out
    }

    /// Same span with columns orthogonal and of unit mean square over `ages`.
    pub fn orthonormalized(&self, ages: &[f64]) -> Result<Self> {
        let df = self.df();
        if ages.len() < df {
            return Err(Error::Config(format!(
                "{} ages cannot orthonormalize {df} columns",
                ages.len()
            )));
        }
        let mut raw = Vec::with_capacity(ages.len() * df);
        let mut row = vec![0.0; df];
        for &a in ages {
            self.raw_into(a, &mut row);
            raw.extend_from_slice(&row);
        }
        let b = nalgebra::DMatrix::from_row_slice(ages.len(), df, &raw);
        let r = b.qr().r();
        let inv = r.try_inverse().ok_or_else(|| {
            Error::Config("spline columns are dependent at the given ages".into())
        })? * (ages.len() as f64).sqrt();
        let mut out = self.clone();
        out.transform = Some((0..df * df).map(|i| inv[(i / df, i % df)]).collect());
        Ok(out)
    }

    fn apply(&self, raw: &[f64], out: &mut [f64]) {
        match &self.transform {
            None => out.copy_from_slice(raw),
            Some(t) => {
                let df = raw.len();
                for (j, o) in out.iter_mut().enumerate() {
                    *o = (0..df).map(|i| raw[i] * t[i * df + j]).sum();
                }
            }
        }
    }

    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        if self.transform.is_some() {
            let mut raw = vec![0.0; self.df()];
            self.raw_into(x, &mut raw);
            self.apply(&raw, out);
        } else {
            self.raw_into(x, out);
        }
    }

    fn raw_into(&self, x: f64, out: &mut [f64]) {
        let u = self.to_unit(x);
        let k = &self.unit_knots;
        let last = k[k.len() - 1];
        let d = |j: usize| (cube_pos(u - k[j]) - cube_pos(u - last)) / (last - k[j]);
        let offset = usize::from(self.intercept);
        if self.intercept {
            out[0] = 1.0;
        }
        out[offset] = u;
        let tail = d(k.len() - 2);
        for j in 0..k.len() - 2 {
            out[offset + 1 + j] = d(j) - tail;
        }
    }

    /// Derivative of every column with respect to age.
    pub fn derivative(&self, x: f64) -> Vec<f64> {
        let u = self.to_unit(x);
        let k = &self.unit_knots;
        let last = k[k.len() - 1];
        let scale = 1.0 / (self.upper - self.lower);
        let d = |j: usize| 3.0 * (square_pos(u - k[j]) - square_pos(u - last)) / (last - k[j]);
        let offset = usize::from(self.intercept);
        let mut out = vec![0.0; self.df()];
        out[offset] = scale;
        let tail = d(k.len() - 2);
        for j in 0..k.len() - 2 {
            out[offset + 1 + j] = (d(j) - tail) * scale;
        }
        let mut transformed = vec![0.0; out.len()];
        self.apply(&out, &mut transformed);
        transformed
    }
}
