//! Breslow-ties partial likelihood over `(start, stop]` risk sets.
//!
//! Score and information use the identity
//! `Σ_t d_t S2(t)/S0(t) = Σ_k r_k x_k x_kᵀ (H(stop_k) - H(start_k))`, where
//! `H` is the running sum of `d_t / S0(t)`, so the only per-event-time work
//! is the mean vector `S1(t)/S0(t)`. The outer-product terms are reduced
//! row-wise over fixed chunks.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

/// Sparse survival design in counting-process form.
#[derive(Debug, Clone)]
pub struct CoxData {
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
    pub start: Vec<f64>,
    pub stop: Vec<f64>,
    pub event: Vec<bool>,
    pub labels: Vec<String>,
}

impl CoxData {
    /// Builds from sparse rows; entries are sorted by column within a row.
    pub fn from_sparse(
        rows: impl IntoIterator<Item = Vec<(usize, f64)>>,
        start: Vec<f64>,
        stop: Vec<f64>,
        event: Vec<bool>,
        labels: Vec<String>,
    ) -> Result<Self> {
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for mut r in rows {
            r.sort_by_key(|(c, _)| *c);
            for (c, v) in r {
                if c >= labels.len() {
                    return Err(Error::InvalidArgument(format!("column {c} out of range")));
                }
                if v != 0.0 {
                    cols.push(c as u32);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        let n = row_ptr.len() - 1;
        if start.len() != n || stop.len() != n || event.len() != n {
            return Err(Error::InvalidArgument("row data differ in length".into()));
        }
        if start.iter().zip(&stop).any(|(a, b)| !(a < b)) {
            return Err(Error::Input("every row needs start < stop".into()));
        }
        Ok(CoxData {
            row_ptr,
            cols,
            vals,
            start,
            stop,
            event,
            labels,
        })
    }

    /// Builds from dense rows, labelling columns `x1, x2, …`.
    pub fn from_dense(
        rows: &[Vec<f64>],
        start: Vec<f64>,
        stop: Vec<f64>,
        event: Vec<bool>,
    ) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        let labels = (1..=p).map(|j| format!("x{j}")).collect();
        CoxData::from_sparse(
            rows.iter().map(|r| r.iter().copied().enumerate().collect()),
            start,
            stop,
            event,
            labels,
        )
    }

    pub fn rows(&self) -> usize {
        self.start.len()
    }

    pub fn width(&self) -> usize {
        self.labels.len()
    }

    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[r.clone()], &self.vals[r])
    }

    /// Largest absolute value in each column.
    pub fn column_scales(&self) -> Vec<f64> {
        let mut out = vec![0.0f64; self.width()];
        for (c, v) in self.cols.iter().zip(&self.vals) {
            out[*c as usize] = out[*c as usize].max(v.abs());
        }
        out
    }

    pub fn linear_predictor(&self, i: usize, beta: &[f64]) -> f64 {
        let (c, v) = self.row(i);
        c.iter().zip(v).map(|(c, v)| beta[*c as usize] * v).sum()
    }
}

/// Unique event times with tie counts and the per-row index bounds
/// `#{t_m <= start}` and `#{t_m <= stop}`.
#[derive(Debug, Clone)]
pub struct RiskSets {
    pub times: Vec<f64>,
    pub deaths: Vec<f64>,
    by_stop_desc: Vec<usize>,
    by_start_desc: Vec<usize>,
    lo: Vec<u32>,
    hi: Vec<u32>,
}

impl RiskSets {
    pub fn new(data: &CoxData) -> Result<Self> {
        let mut event_ages: Vec<f64> = (0..data.rows())
            .filter(|i| data.event[*i])
            .map(|i| data.stop[i])
            .collect();
        if event_ages.is_empty() {
            return Err(Error::NoEvents);
        }
        event_ages.sort_by(f64::total_cmp);
        let mut times = Vec::new();
        let mut deaths: Vec<f64> = Vec::new();
        for t in event_ages {
            if times.last() == Some(&t) {
                *deaths.last_mut().expect("paired with times") += 1.0;
            } else {
                times.push(t);
                deaths.push(1.0);
            }
        }
        let mut by_stop_desc: Vec<usize> = (0..data.rows()).collect();
        by_stop_desc.sort_by(|a, b| data.stop[*b].total_cmp(&data.stop[*a]).then(a.cmp(b)));
        let mut by_start_desc: Vec<usize> = (0..data.rows()).collect();
        by_start_desc.sort_by(|a, b| data.start[*b].total_cmp(&data.start[*a]).then(a.cmp(b)));
        let count_le = |x: f64| times.partition_point(|t| *t <= x) as u32;
        let lo = data.start.iter().map(|s| count_le(*s)).collect();
        let hi = data.stop.iter().map(|s| count_le(*s)).collect();
        Ok(RiskSets {
            times,
            deaths,
            by_stop_desc,
            by_start_desc,
            lo,
            hi,
        })
    }
}

/// Log partial likelihood with its derivatives at one coefficient vector.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loglik: f64,
    pub score: Vec<f64>,
    /// Observed information (negative Hessian), if requested.
    pub information: Option<DMatrix<f64>>,
    /// Σ e^{xβ} over the risk set at each event time.
    pub risk_sums: Vec<f64>,
}

impl Evaluation {
    pub fn max_score(&self) -> f64 {
        self.score.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    /// Breslow increments `d_t / S0(t)`.
    pub fn hazard_increments(&self, rs: &RiskSets) -> Vec<f64> {
        rs.deaths
            .iter()
            .zip(&self.risk_sums)
            .map(|(d, s)| d / s)
            .collect()
    }
}

/// Neumaier-compensated running sum.
#[derive(Default, Clone, Copy)]
struct Compensated {
    sum: f64,
    c: f64,
}

impl Compensated {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.c
    }
}

pub fn evaluate(
    data: &CoxData,
    rs: &RiskSets,
    beta: &[f64],
    with_information: bool,
) -> Result<Evaluation> {
    let n = data.rows();
    let p = data.width();
    let eta: Vec<f64> = par::map_chunks(n, par::CHUNK, |r| {
        r.map(|i| data.linear_predictor(i, beta))
            .collect::<Vec<_>>()
    })
    .concat();
    let risk: Vec<f64> = eta.iter().map(|e| e.exp()).collect();
    if risk.iter().any(|r| !r.is_finite()) {
        return Err(Error::InvalidArgument("linear predictor overflowed".into()));
    }

    // Descending sweep over event times maintaining S0 and S1.
    let m_count = rs.times.len();
    let mut s0 = Compensated::default();
    let mut s1 = vec![0.0; p];
    let mut risk_sums = vec![0.0; m_count];
    let mut means = if with_information {
        vec![0.0; m_count * p]
    } else {
        Vec::new()
    };
    let (mut added, mut removed) = (0, 0);
    for m in (0..m_count).rev() {
        let t = rs.times[m];
        while added < n && data.stop[rs.by_stop_desc[added]] >= t {
            let k = rs.by_stop_desc[added];
            s0.add(risk[k]);
            if with_information {
                let (c, v) = data.row(k);
                for (c, v) in c.iter().zip(v) {
                    s1[*c as usize] += risk[k] * v;
                }
            }
            added += 1;
        }
        while removed < n && data.start[rs.by_start_desc[removed]] >= t {
            let k = rs.by_start_desc[removed];
            s0.add(-risk[k]);
            if with_information {
                let (c, v) = data.row(k);
                for (c, v) in c.iter().zip(v) {
                    s1[*c as usize] -= risk[k] * v;
                }
            }
            removed += 1;
        }
        let total = s0.value();
        if !(total > 0.0) {
            return Err(Error::EmptyRiskSet(t));
        }
        risk_sums[m] = total;
        if with_information {
            let scale = rs.deaths[m].sqrt() / total;
            for (dst, s) in means[m * p..(m + 1) * p].iter_mut().zip(&s1) {
                *dst = s * scale;
            }
        }
    }

    let mut cumulative = Vec::with_capacity(m_count + 1);
    cumulative.push(0.0);
    let mut h = 0.0;
    for (d, s) in rs.deaths.iter().zip(&risk_sums) {
        h += d / s;
        cumulative.push(h);
    }

    let event_eta: f64 = (0..n).filter(|i| data.event[*i]).map(|i| eta[i]).sum();
    let log_risk: f64 = rs
        .deaths
        .iter()
        .zip(&risk_sums)
        .map(|(d, s)| d * s.ln())
        .sum();
    let loglik = event_eta - log_risk;

    // Row-wise score and first information term.
    let chunk = par::CHUNK.max(n.div_ceil(64));
    let parts = par::map_chunks(n, chunk, |r| {
        let mut score = vec![0.0; p];
        let mut info = if with_information {
            vec![0.0; p * p]
        } else {
            Vec::new()
        };
        for k in r {
            let (c, v) = data.row(k);
            if data.event[k] {
                for (c, v) in c.iter().zip(v) {
                    score[*c as usize] += v;
                }
            }
            let w = risk[k] * (cumulative[rs.hi[k] as usize] - cumulative[rs.lo[k] as usize]);
            if w == 0.0 {
                continue;
            }
            for (a, (ca, va)) in c.iter().zip(v).enumerate() {
                let ca = *ca as usize;
                score[ca] -= w * va;
                if with_information {
                    let wa = w * va;
                    for (cb, vb) in c[a..].iter().zip(&v[a..]) {
                        info[ca * p + *cb as usize] += wa * vb;
                    }
                }
            }
        }
        (score, info)
    });
    let mut score = vec![0.0; p];
    let mut info_upper = vec![0.0; if with_information { p * p } else { 0 }];
    for (s, i) in parts {
        for (a, b) in score.iter_mut().zip(s) {
            *a += b;
        }
        for (a, b) in info_upper.iter_mut().zip(i) {
            *a += b;
        }
    }

    let information = if with_information {
        let mut info = DMatrix::<f64>::zeros(p, p);
        for a in 0..p {
            for b in a..p {
                info[(a, b)] = info_upper[a * p + b];
                info[(b, a)] = info_upper[a * p + b];
            }
        }
        // Subtract Σ_t d_t a_t a_tᵀ, reduced over fixed blocks of event times.
        const BLOCK: usize = 1024;
        let blocks = par::map_chunks(m_count, BLOCK, |r| {
            let rows = r.len();
            let a = DMatrix::from_row_slice(rows, p, &means[r.start * p..r.end * p]);
            a.tr_mul(&a)
        });
        for b in blocks {
            info -= b;
        }
        Some(info)
    } else {
        None
    };

    Ok(Evaluation {
        loglik,
        score,
        information,
        risk_sums,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoxOptions {
    pub max_iterations: usize,
    /// Relative change in log partial likelihood.
    pub loglik_tolerance: f64,
    /// Max-norm of the score.
    pub score_tolerance: f64,
    /// Bound on `|β_j| · max|x_j|`, the largest log-hazard shift a column can
    /// produce; for indicator columns this is `|β_j|`.
    pub divergence_bound: f64,
    pub max_halvings: usize,
}

impl Default for CoxOptions {
    fn default() -> Self {
        CoxOptions {
            max_iterations: 25,
            loglik_tolerance: 1e-9,
            score_tolerance: 1e-6,
            divergence_bound: 15.0,
            max_halvings: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub iterations: usize,
    pub loglik: f64,
    pub loglik_null: f64,
    pub max_score: f64,
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Estimate {
    pub beta: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub convergence: Convergence,
    /// Breslow increments at β̂, aligned with `RiskSets::times`.
    pub increments: Vec<f64>,
    pub risk_sets: RiskSets,
}

/// Columns whose Cholesky pivot collapses given the preceding columns.
fn dependent_columns(info: &DMatrix<f64>) -> Vec<usize> {
    let p = info.nrows();
    let mut l = DMatrix::<f64>::zeros(p, p);
    let mut kept: Vec<usize> = Vec::new();
    let mut dependent = Vec::new();
    for j in 0..p {
        let mut pivot = info[(j, j)];
        for &k in &kept {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        let scale = info[(j, j)].abs().max(f64::MIN_POSITIVE);
        if pivot <= 1e-10 * scale || info[(j, j)] <= 0.0 {
            dependent.push(j);
            continue;
        }
        let root = pivot.sqrt();
        l[(j, j)] = root;
        for i in j + 1..p {
            let mut v = info[(i, j)];
            for &k in &kept {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / root;
        }
        kept.push(j);
    }
    dependent
}

fn cholesky(
    info: &DMatrix<f64>,
    labels: &[String],
) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let dependent = dependent_columns(info);
    if !dependent.is_empty() {
        return Err(Error::SingularInformation {
            columns: dependent.iter().map(|j| labels[*j].clone()).collect(),
        });
    }
    info.clone()
        .cholesky()
        .ok_or_else(|| Error::SingularInformation {
            columns: labels.to_vec(),
        })
}

/// Rejects sign-definite columns that are zero on every event row: their
/// likelihood is monotone and the estimate is infinite.
fn check_event_support(data: &CoxData) -> Result<()> {
    let p = data.width();
    let mut on_events = vec![false; p];
    let mut positive = vec![false; p];
    let mut negative = vec![false; p];
    for i in 0..data.rows() {
        let (c, v) = data.row(i);
        for (c, v) in c.iter().zip(v) {
            let c = *c as usize;
            if *v > 0.0 {
                positive[c] = true;
            } else {
                negative[c] = true;
            }
            if data.event[i] {
                on_events[c] = true;
            }
        }
    }
    for j in 0..p {
        if (positive[j] != negative[j]) && !on_events[j] {
            return Err(Error::MonotoneLikelihood {
                column: data.labels[j].clone(),
                value: f64::INFINITY,
            });
        }
    }
    Ok(())
}

/// Newton-Raphson with step halving on the Breslow log partial likelihood.
pub fn maximize(data: &CoxData, options: &CoxOptions) -> Result<Estimate> {
    let rs = RiskSets::new(data)?;
    check_event_support(data)?;
    let p = data.width();
    let scales = data.column_scales();
    let mut beta = vec![0.0; p];
    let mut current = evaluate(data, &rs, &beta, true)?;
    let loglik_null = current.loglik;
    let mut trace = vec![current.loglik];
    let mut iterations = 0;
    let mut converged = current.max_score() < options.score_tolerance;

    while !converged {
        if iterations == options.max_iterations {
            return Err(Error::NoConvergence { iterations, trace });
        }
        iterations += 1;
        let info = current.information.as_ref().expect("information requested");
        let chol = cholesky(info, &data.labels)?;
        let step = chol.solve(&nalgebra::DVector::from_column_slice(&current.score));

        let mut scale = 1.0;
        let mut halvings = 0;
        let (candidate, next) = loop {
            let candidate: Vec<f64> = beta
                .iter()
                .zip(step.iter())
                .map(|(b, s)| b + scale * s)
                .collect();
            let next = match evaluate(data, &rs, &candidate, true) {
                Ok(e) if e.loglik.is_finite() => Some(e),
                Ok(_) | Err(Error::InvalidArgument(_)) => None,
                Err(e) => return Err(e),
            };
            if let Some(next) = next {
                if next.loglik >= current.loglik - 1e-12 * current.loglik.abs() {
                    break (candidate, next);
                }
            }
            halvings += 1;
            if halvings > options.max_halvings {
                return Err(Error::NoConvergence { iterations, trace });
            }
            scale *= 0.5;
        };

        if let Some((j, b)) = candidate
            .iter()
            .enumerate()
            .find(|(j, b)| b.abs() * scales[*j] > options.divergence_bound)
        {
            return Err(Error::MonotoneLikelihood {
                column: data.labels[j].clone(),
                value: b.abs(),
            });
        }
        let change =
            (next.loglik - current.loglik).abs() / current.loglik.abs().max(f64::MIN_POSITIVE);
        beta = candidate;
        current = next;
        trace.push(current.loglik);
        converged =
            change < options.loglik_tolerance || current.max_score() < options.score_tolerance;
    }

    let info = current.information.as_ref().expect("information requested");
    let covariance = cholesky(info, &data.labels)?.inverse();
    let increments = current.hazard_increments(&rs);
    Ok(Estimate {
        convergence: Convergence {
            iterations,
            loglik: current.loglik,
            loglik_null,
            max_score: current.max_score(),
            trace,
        },
        beta,
        covariance,
        increments,
        risk_sets: rs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> CoxData {
        // Two balanced groups with identical, pairwise-tied event ages.
        let x = vec![
            vec![0.0],
            vec![1.0],
            vec![0.0],
            vec![1.0],
            vec![0.0],
            vec![1.0],
        ];
        CoxData::from_dense(
            &x,
            vec![0.0; 6],
            vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0],
            vec![true; 6],
        )
        .unwrap()
    }

    #[test]
    fn balanced_groups_give_zero() {
        let est = maximize(&tiny(), &CoxOptions::default()).unwrap();
        assert_eq!(est.beta, vec![0.0]);
        assert_eq!(est.convergence.iterations, 0);
    }

    #[test]
    fn null_increments_are_nelson_aalen() {
        let data = CoxData::from_dense(
            &[vec![0.0], vec![0.0], vec![0.0]],
            vec![0.0; 3],
            vec![1.0, 2.0, 3.0],
            vec![true, true, false],
        )
        .unwrap();
        let rs = RiskSets::new(&data).unwrap();
        let ev = evaluate(&data, &rs, &[0.0], false).unwrap();
        assert_eq!(ev.hazard_increments(&rs), vec![1.0 / 3.0, 1.0 / 2.0]);
    }

    #[test]
    fn no_events_is_an_error() {
        let data = CoxData::from_dense(&[vec![1.0]], vec![0.0], vec![1.0], vec![false]).unwrap();
        assert!(matches!(
            maximize(&data, &CoxOptions::default()),
            Err(Error::NoEvents)
        ));
    }

    #[test]
    fn collinear_columns_are_reported() {
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![(i % 3) as f64, 2.0 * (i % 3) as f64])
            .collect();
        let data = CoxData::from_dense(
            &rows,
            vec![0.0; 20],
            (0..20).map(|i| 1.0 + i as f64).collect(),
            vec![true; 20],
        )
        .unwrap();
        match maximize(&data, &CoxOptions::default()) {
            Err(Error::SingularInformation { columns }) => {
                assert_eq!(columns, vec!["x2".to_string()])
            }
            other => panic!("expected singular information, got {other:?}"),
        }
    }

    #[test]
    fn level_without_events_diverges() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![(i % 2) as f64]).collect();
        let data = CoxData::from_dense(
            &rows,
            vec![0.0; 10],
            (0..10).map(|i| 1.0 + i as f64).collect(),
            (0..10).map(|i| i % 2 == 0).collect(),
        )
        .unwrap();
        assert!(matches!(
            maximize(&data, &CoxOptions::default()),
            Err(Error::MonotoneLikelihood { column, .. }) if column == "x1"
        ));
    }

    #[test]
    fn separation_triggers_divergence_guard() {
        // Ordering fully explained by x: every subject with larger x fails first.
        let rows: Vec<Vec<f64>> = (0..12).map(|i| vec![-(i as f64)]).collect();
        let data = CoxData::from_dense(
            &rows,
            vec![0.0; 12],
            (0..12).map(|i| 1.0 + i as f64).collect(),
            vec![true; 12],
        )
        .unwrap();
        let r = maximize(&data, &CoxOptions::default());
        assert!(
            matches!(
                r,
                Err(Error::MonotoneLikelihood { .. }) | Err(Error::NoConvergence { .. })
            ),
            "{r:?}"
        );
    }
}
