use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cox::CoxFit;
use crate::design::build_design;
use crate::episode::Episode;
use crate::error::{Error, Result};

/// One subject's observation span, outcome and risk score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubjectScore {
    pub entry: f64,
    pub exit: f64,
    pub event: bool,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Concordance {
    pub c: f64,
    pub concordant: u64,
    pub discordant: u64,
    pub tied: u64,
    pub comparable: u64,
}

impl Concordance {
    pub fn percent(&self) -> String {
        format!("{:.2}%", 100.0 * self.c)
    }
}

/// Per-subject average of episode linear predictors, in order of first appearance.
pub fn subject_scores(fit: &CoxFit, episodes: &[Episode]) -> Result<Vec<SubjectScore>> {
    let design = build_design(episodes, &fit.layout)?;
    let mut slot: BTreeMap<usize, usize> = BTreeMap::new();
    // (score, first lp, sum of offsets from first, count): exact when a subject's rows agree
    let mut sums: Vec<(SubjectScore, f64, f64, usize)> = Vec::new();
    for i in 0..design.rows() {
        let (c, v) = design.row(i);
        let row: Vec<(usize, f64)> = c.iter().zip(v).map(|(c, v)| (*c as usize, *v)).collect();
        let lp = fit.linear_predictor(&row);
        let k = *slot.entry(design.subject[i]).or_insert_with(|| {
            let blank = SubjectScore {
                entry: f64::INFINITY,
                exit: f64::NEG_INFINITY,
                event: false,
                score: 0.0,
            };
            sums.push((blank, lp, 0.0, 0));
            sums.len() - 1
        });
        let (s, first, offset, n) = &mut sums[k];
        s.entry = s.entry.min(design.start[i]);
        if design.stop[i] > s.exit {
            s.exit = design.stop[i];
            s.event = design.event[i];
        }
        *offset += lp - *first;
        *n += 1;
    }
    Ok(sums
        .into_iter()
        .map(|(mut s, first, offset, n)| {
            s.score = first + offset / n as f64;
            s
        })
        .collect())
}

/// Harrell's C for a fitted model on held-out episodes.
pub fn concordance(fit: &CoxFit, episodes: &[Episode]) -> Result<Concordance> {
    harrell_c(&subject_scores(fit, episodes)?)
}

struct Fenwick {
    tree: Vec<i64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Fenwick {
            tree: vec![0; n + 1],
        }
    }

    fn add(&mut self, i: usize, delta: i64) {
        let mut i = i + 1;
        while i < self.tree.len() {
            self.tree[i] += delta;
            i += i & i.wrapping_neg();
        }
    }

    /// Sum over positions `< i`.
    fn prefix(&self, mut i: usize) -> i64 {
        let mut s = 0;
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Harrell's C under left truncation.
///
/// A pair (i, j) is comparable when i has the event at `T_i`, j is at risk
/// then (`entry_j < T_i <= T_j`), and j is not itself an event at `T_i`.
/// It is concordant when i has the higher score; equal scores count 1/2.
pub fn harrell_c(subjects: &[SubjectScore]) -> Result<Concordance> {
    let n = subjects.len();
    let mut ranks: Vec<f64> = subjects.iter().map(|s| s.score).collect();
    ranks.sort_by(f64::total_cmp);
    ranks.dedup();
    let rank = |x: f64| ranks.partition_point(|r| *r < x);

    let mut by_exit: Vec<usize> = (0..n).collect();
    by_exit.sort_by(|a, b| subjects[*b].exit.total_cmp(&subjects[*a].exit));
    let mut by_entry: Vec<usize> = (0..n).collect();
    by_entry.sort_by(|a, b| subjects[*b].entry.total_cmp(&subjects[*a].entry));
    let mut times: Vec<f64> = subjects
        .iter()
        .filter(|s| s.event)
        .map(|s| s.exit)
        .collect();
    times.sort_by(|a, b| b.total_cmp(a));
    times.dedup();

    let mut tree = Fenwick::new(ranks.len());
    let mut in_tree = vec![false; n];
    let mut size: i64 = 0;
    let (mut added, mut removed) = (0, 0);
    let (mut concordant, mut tied, mut comparable) = (0i64, 0i64, 0i64);
    let mut events: Vec<usize> = (0..n).filter(|k| subjects[*k].event).collect();
    events.sort_by(|a, b| subjects[*b].exit.total_cmp(&subjects[*a].exit));
    let mut q = 0;
    for t in times {
        while added < n && subjects[by_exit[added]].exit >= t {
            let k = by_exit[added];
            if subjects[k].entry < t {
                tree.add(rank(subjects[k].score), 1);
                in_tree[k] = true;
                size += 1;
            }
            added += 1;
        }
        while removed < n && subjects[by_entry[removed]].entry >= t {
            let k = by_entry[removed];
            if in_tree[k] {
                tree.add(rank(subjects[k].score), -1);
                in_tree[k] = false;
                size -= 1;
            }
            removed += 1;
        }
        let mut local: Vec<usize> = Vec::new();
        while q < events.len() && subjects[events[q]].exit == t {
            if in_tree[events[q]] {
                local.push(rank(subjects[events[q]].score));
            }
            q += 1;
        }
        local.sort_unstable();
        let e = local.len() as i64;
        for &r in &local {
            let below = tree.prefix(r) - local.partition_point(|x| *x < r) as i64;
            let same = local.partition_point(|x| *x <= r) - local.partition_point(|x| *x < r);
            let equal = tree.prefix(r + 1) - tree.prefix(r) - same as i64;
            concordant += below;
            tied += equal;
            comparable += size - e;
        }
    }
    if comparable == 0 {
        return Err(Error::NoComparablePairs);
    }
    let discordant = comparable - concordant - tied;
    Ok(Concordance {
        c: (concordant as f64 + 0.5 * tied as f64) / comparable as f64,
        concordant: concordant as u64,
        discordant: discordant as u64,
        tied: tied as u64,
        comparable: comparable as u64,
    })
}
