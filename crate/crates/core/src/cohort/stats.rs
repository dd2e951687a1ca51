use serde::Serialize;

use super::{Covariate, Exposure, Sex};
use crate::error::{Error, Result};

/// Column order of the summary table.
pub const GROUPS: [&str; 3] = ["Female", "Male", "Entire population"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MedianIqr {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryBlock {
    pub covariate: Covariate,
    /// Per level: counts for female, male, all.
    pub counts: Vec<(u8, [usize; 3])>,
}

/// Pairwise correlation between two risk-factor codings; `None` when a
/// column has zero variance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Correlation {
    pub a: Covariate,
    pub b: Covariate,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CohortSummary {
    pub n: [usize; 3],
    pub entry_age: [Option<MedianIqr>; 3],
    pub exposure_years: [Option<MedianIqr>; 3],
    pub categories: Vec<CategoryBlock>,
    pub correlations: Vec<Correlation>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub section: String,
    pub label: String,
    pub cells: [String; 3],
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn median_iqr(mut values: Vec<f64>) -> Option<MedianIqr> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    Some(MedianIqr {
        median: quantile(&values, 0.5),
        q1: quantile(&values, 0.25),
        q3: quantile(&values, 0.75),
    })
}

/// Pearson correlation; `None` if either column is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Presence indicator for behaviours, 0-based quartile for the area proxies.
fn coding(e: &Exposure, c: Covariate) -> f64 {
    let level = e.covariates.level(c);
    match c {
        Covariate::Alcohol | Covariate::Obesity | Covariate::Smoking => {
            f64::from(u8::from(level >= 1))
        }
        _ => f64::from(level),
    }
}

const CORRELATED: [Covariate; 5] = [
    Covariate::Alcohol,
    Covariate::Education,
    Covariate::Immigration,
    Covariate::Obesity,
    Covariate::Smoking,
];

pub fn descriptive_stats(exposures: &[Exposure]) -> Result<CohortSummary> {
    if exposures.is_empty() {
        return Err(Error::InvalidArgument(
            "descriptive statistics need a non-empty cohort".into(),
        ));
    }
    let group = |e: &Exposure| {
        if e.covariates.sex == Sex::Female {
            0
        } else {
            1
        }
    };
    let mut n = [0usize; 3];
    let mut entry: [Vec<f64>; 3] = Default::default();
    let mut length: [Vec<f64>; 3] = Default::default();
    for e in exposures {
        for g in [group(e), 2] {
            n[g] += 1;
            entry[g].push(e.entry_age);
            length[g].push(e.length());
        }
    }
    let [e0, e1, e2] = entry;
    let [l0, l1, l2] = length;

    let categories = [
        Covariate::Obesity,
        Covariate::Alcohol,
        Covariate::Smoking,
        Covariate::Immigration,
        Covariate::Education,
    ]
    .into_iter()
    .map(|c| {
        let counts = c
            .levels()
            .into_iter()
            .map(|level| {
                let mut cells = [0usize; 3];
                for e in exposures.iter().filter(|e| e.covariates.level(c) == level) {
                    cells[group(e)] += 1;
                    cells[2] += 1;
                }
                (level, cells)
            })
            .collect();
        CategoryBlock {
            covariate: c,
            counts,
        }
    })
    .collect();

    let columns: Vec<Vec<f64>> = CORRELATED
        .iter()
        .map(|c| exposures.iter().map(|e| coding(e, *c)).collect())
        .collect();
    let mut correlations = Vec::new();
    for i in 0..CORRELATED.len() {
        for j in i + 1..CORRELATED.len() {
            correlations.push(Correlation {
                a: CORRELATED[i],
                b: CORRELATED[j],
                value: pearson(&columns[i], &columns[j]),
            });
        }
    }

    Ok(CohortSummary {
        n,
        entry_age: [median_iqr(e0), median_iqr(e1), median_iqr(e2)],
        exposure_years: [median_iqr(l0), median_iqr(l1), median_iqr(l2)],
        categories,
        correlations,
    })
}

/// Groups thousands with spaces, e.g. `5 849 485`.
pub fn group_thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(' ');
        }
        out.push(ch);
    }
    out
}

fn fmt_iqr(m: &Option<MedianIqr>) -> String {
    match m {
        Some(m) => format!("{:.1} ({:.1}—{:.1})", m.median, m.q1, m.q3),
        None => "—".into(),
    }
}

fn title(c: Covariate) -> &'static str {
    match c {
        Covariate::Obesity => "Obesity",
        Covariate::Alcohol => "Alcohol",
        Covariate::Smoking => "Smoking",
        Covariate::Immigration => "Immigration",
        Covariate::Education => "Education",
        Covariate::Sex => "Sex",
        Covariate::Department => "Department",
    }
}

impl CohortSummary {
    /// Rows in the layout of the descriptive table: individuals, entry age,
    /// exposure, then one block per categorical variable.
    pub fn rows(&self) -> Vec<SummaryRow> {
        let mut rows = vec![
            SummaryRow {
                section: "Number of individuals".into(),
                label: "n".into(),
                cells: self.n.map(group_thousands),
            },
            SummaryRow {
                section: "Age at start of exposure".into(),
                label: "Median (IQR)".into(),
                cells: [0, 1, 2].map(|g| fmt_iqr(&self.entry_age[g])),
            },
            SummaryRow {
                section: "Exposure (years)".into(),
                label: "Median (IQR)".into(),
                cells: [0, 1, 2].map(|g| fmt_iqr(&self.exposure_years[g])),
            },
        ];
        for block in &self.categories {
            let kind = match block.covariate {
                Covariate::Immigration | Covariate::Education => "Quartile",
                _ => "Category",
            };
            for (level, counts) in &block.counts {
                let cells = [0, 1, 2].map(|g| {
                    let pct = if self.n[g] == 0 {
                        0.0
                    } else {
                        100.0 * counts[g] as f64 / self.n[g] as f64
                    };
                    format!("{} ({pct:.1}%)", group_thousands(counts[g]))
                });
                rows.push(SummaryRow {
                    section: title(block.covariate).into(),
                    label: format!("{kind} {level} (% of pop.)"),
                    cells,
                });
            }
        }
        rows
    }

    pub fn correlation(&self, a: Covariate, b: Covariate) -> Option<f64> {
        self.correlations
            .iter()
            .find(|c| (c.a == a && c.b == b) || (c.a == b && c.b == a))
            .and_then(|c| c.value)
    }

    pub fn to_markdown(&self) -> String {
        let mut out =
            String::from("| | Female | Male | Entire population |\n|---|---:|---:|---:|\n");
        let mut section = String::new();
        for r in self.rows() {
            if r.section != section {
                out.push_str(&format!("| **{}** | | | |\n", r.section));
                section = r.section.clone();
            }
            out.push_str(&format!(
                "| {} | {} | {} | {} |\n",
                r.label, r.cells[0], r.cells[1], r.cells[2]
            ));
        }
        out.push_str(
            "\n| | Education | Immigration | Obesity | Smoking |\n|---|---:|---:|---:|---:|\n",
        );
        for (i, a) in CORRELATED[..4].iter().enumerate() {
            let cells: Vec<String> = CORRELATED[1..]
                .iter()
                .enumerate()
                .map(|(j, b)| {
                    if j < i {
                        String::new()
                    } else {
                        self.correlation(*a, *b)
                            .map_or("—".into(), |v| format!("{v:.2}"))
                    }
                })
                .collect();
            out.push_str(&format!("| {} | {} |\n", title(*a), cells.join(" | ")));
        }
        out
    }
}
