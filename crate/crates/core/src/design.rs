//! Declarative model specification and design-matrix assembly over episodes.

use serde::{Deserialize, Serialize};

use crate::cohort::{Covariate, Covariates};
use crate::episode::{AgeGrid, Episode};
use crate::error::{Error, Result};
use crate::par;
use crate::spline::NaturalSpline;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermSpec {
    pub covariate: Covariate,
    #[serde(default)]
    pub age_dependent: bool,
    /// Reference level label; defaults to the covariate's usual reference.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
}

impl TermSpec {
    pub fn reference_level(&self) -> Result<u8> {
        match &self.reference {
            None => Ok(self.covariate.default_reference()),
            Some(label) => self
                .covariate
                .parse_level(label)
                .map_err(|e| Error::Config(format!("reference of `{}`: {e}", self.covariate))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionSpec {
    pub terms: [Covariate; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub from: f64,
    pub to: f64,
    pub step: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            from: 50.0,
            to: 100.0,
            step: 2.0,
        }
    }
}

fn default_df() -> usize {
    8
}

fn yes() -> bool {
    true
}

/// Terms of the Cox model, their age dependence and reference levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(default = "default_df")]
    pub df: usize,
    #[serde(default)]
    pub grid: GridSpec,
    /// Whether the spline basis spans constants (see [`NaturalSpline`]).
    #[serde(default = "yes")]
    pub spline_intercept: bool,
    #[serde(rename = "term", default)]
    pub terms: Vec<TermSpec>,
    #[serde(rename = "interaction", default)]
    pub interactions: Vec<InteractionSpec>,
}

impl ModelSpec {
    /// Behaviours and sex with age-dependent effects, area covariates
    /// constant, six pairwise constant interactions.
    pub fn standard() -> Self {
        use Covariate::*;
        let term = |c, age_dependent| TermSpec {
            covariate: c,
            age_dependent,
            reference: None,
        };
        ModelSpec {
            df: 8,
            grid: GridSpec::default(),
            spline_intercept: true,
            terms: vec![
                term(Obesity, true),
                term(Alcohol, true),
                term(Smoking, true),
                term(Sex, true),
                term(Department, false),
                term(Immigration, false),
                term(Education, false),
            ],
            interactions: [
                [Obesity, Alcohol],
                [Obesity, Smoking],
                [Alcohol, Smoking],
                [Sex, Obesity],
                [Sex, Alcohol],
                [Sex, Smoking],
            ]
            .into_iter()
            .map(|terms| InteractionSpec { terms })
            .collect(),
        }
    }

    /// Single-term model, handy for synthetic checks.
    pub fn single(covariate: Covariate, age_dependent: bool) -> Self {
        ModelSpec {
            terms: vec![TermSpec {
                covariate,
                age_dependent,
                reference: None,
            }],
            interactions: vec![],
            ..ModelSpec::standard()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ModelSpec =
            toml::from_str(text).map_err(|e| Error::Config(format!("model spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model spec serializes")
    }

    pub fn grid(&self) -> Result<AgeGrid> {
        AgeGrid::regular(self.grid.from, self.grid.to, self.grid.step)
    }

    pub fn reference_of(&self, c: Covariate) -> Result<u8> {
        match self.terms.iter().find(|t| t.covariate == c) {
            Some(t) => t.reference_level(),
            None => Ok(c.default_reference()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.terms.is_empty() {
            return Err(Error::Config("model spec has no terms".into()));
        }
        for (i, t) in self.terms.iter().enumerate() {
            if self.terms[..i].iter().any(|u| u.covariate == t.covariate) {
                return Err(Error::Config(format!("duplicate term `{}`", t.covariate)));
            }
            t.reference_level()?;
        }
        for (i, it) in self.interactions.iter().enumerate() {
            if it.terms[0] == it.terms[1] {
                return Err(Error::Config(format!(
                    "interaction of `{}` with itself",
                    it.terms[0]
                )));
            }
            let same = |o: &InteractionSpec| {
                (o.terms[0] == it.terms[0] && o.terms[1] == it.terms[1])
                    || (o.terms[0] == it.terms[1] && o.terms[1] == it.terms[0])
            };
            if self.interactions[..i].iter().any(same) {
                return Err(Error::Config(format!(
                    "duplicate interaction `{}:{}`",
                    it.terms[0], it.terms[1]
                )));
            }
        }
        if self.df < 2 {
            return Err(Error::Config("df must be at least 2".into()));
        }
        self.grid()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    AgeDependent,
    Constant,
    Interaction,
}

/// Contiguous columns belonging to one (term, level) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub kind: BlockKind,
    pub covariates: Vec<Covariate>,
    pub levels: Vec<u8>,
    pub first: usize,
    pub width: usize,
}

impl Block {
    pub fn term_label(&self) -> String {
        self.covariates
            .iter()
            .map(|c| c.name())
            .collect::<Vec<_>>()
            .join(":")
    }

    pub fn level_label(&self) -> String {
        self.covariates
            .iter()
            .zip(&self.levels)
            .map(|(c, l)| c.level_label(*l))
            .collect::<Vec<_>>()
            .join(":")
    }

    pub fn active(&self, x: &Covariates) -> bool {
        self.covariates
            .iter()
            .zip(&self.levels)
            .all(|(c, l)| x.level(*c) == *l)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnLabel {
    pub term: String,
    pub level: String,
    pub basis_index: Option<usize>,
}

/// Column layout shared by fitting and prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignLayout {
    pub spec: ModelSpec,
    pub basis: NaturalSpline,
    pub grid: AgeGrid,
    pub blocks: Vec<Block>,
    pub labels: Vec<ColumnLabel>,
}

impl DesignLayout {
    pub fn new(spec: ModelSpec, basis: NaturalSpline) -> Result<Self> {
        spec.validate()?;
        let grid = spec.grid()?;
        let df = basis.df();
        let mut blocks = Vec::new();
        let mut next = 0;
        for t in &spec.terms {
            let reference = t.reference_level()?;
            for level in t.covariate.levels().into_iter().filter(|l| *l != reference) {
                let (kind, width) = if t.age_dependent {
                    (BlockKind::AgeDependent, df)
                } else {
                    (BlockKind::Constant, 1)
                };
                blocks.push(Block {
                    kind,
                    covariates: vec![t.covariate],
                    levels: vec![level],
                    first: next,
                    width,
                });
                next += width;
            }
        }
        for it in &spec.interactions {
            let [a, b] = it.terms;
            let (ra, rb) = (spec.reference_of(a)?, spec.reference_of(b)?);
            for la in a.levels().into_iter().filter(|l| *l != ra) {
                for lb in b.levels().into_iter().filter(|l| *l != rb) {
                    blocks.push(Block {
                        kind: BlockKind::Interaction,
                        covariates: vec![a, b],
                        levels: vec![la, lb],
                        first: next,
                        width: 1,
                    });
                    next += 1;
                }
            }
        }
        let mut labels = Vec::with_capacity(next);
        for b in &blocks {
            for j in 0..b.width {
                labels.push(ColumnLabel {
                    term: b.term_label(),
                    level: b.level_label(),
                    basis_index: (b.kind == BlockKind::AgeDependent).then_some(j + 1),
                });
            }
        }
        Ok(DesignLayout {
            spec,
            basis,
            grid,
            blocks,
            labels,
        })
    }

    /// Layout whose interior knots sit at quantiles of the event ages in
    /// `episodes`, with the basis orthonormalized over the grid anchors.
    pub fn with_event_knots(spec: ModelSpec, episodes: &[Episode]) -> Result<Self> {
        let ages: Vec<f64> = episodes
            .iter()
            .filter(|e| e.event)
            .map(|e| e.stop)
            .collect();
        let basis = NaturalSpline::with_quantile_knots(
            &ages,
            spec.df,
            (spec.grid.from, spec.grid.to),
            spec.spline_intercept,
        )?;
        let mut anchors = spec.grid()?.points().to_vec();
        if anchors.len() < 2 * spec.df {
            let (a, b) = (spec.grid.from, spec.grid.to);
            anchors = (0..=50)
                .map(|i| a + (b - a) * f64::from(i) / 50.0)
                .collect();
        }
        DesignLayout::new(spec, basis.orthonormalized(&anchors)?)
    }

    pub fn width(&self) -> usize {
        self.labels.len()
    }

    /// Sparse row for covariates `x` in the grid cell anchored at `anchor`.
    pub fn row(&self, x: &Covariates, anchor: f64) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        let mut basis: Option<Vec<f64>> = None;
        for b in &self.blocks {
            if !b.active(x) {
                continue;
            }
            match b.kind {
                BlockKind::AgeDependent => {
                    let values = basis.get_or_insert_with(|| self.basis.eval(anchor));
                    out.extend(
                        values
                            .iter()
                            .enumerate()
                            .filter(|(_, v)| **v != 0.0)
                            .map(|(j, v)| (b.first + j, *v)),
                    );
                }
                _ => out.push((b.first, 1.0)),
            }
        }
        out
    }

    pub fn block(&self, covariate: Covariate, level: u8) -> Option<&Block> {
        self.blocks.iter().find(|b| {
            b.kind != BlockKind::Interaction && b.covariates[0] == covariate && b.levels[0] == level
        })
    }

    pub fn interaction(&self, a: Covariate, la: u8, b: Covariate, lb: u8) -> Option<&Block> {
        self.blocks.iter().find(|blk| {
            blk.kind == BlockKind::Interaction
                && ((blk.covariates == [a, b] && blk.levels == [la, lb])
                    || (blk.covariates == [b, a] && blk.levels == [lb, la]))
        })
    }
}

/// Sparse (CSR) design over episodes with their `(start, stop]` intervals.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub layout: DesignLayout,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
    pub start: Vec<f64>,
    pub stop: Vec<f64>,
    pub event: Vec<bool>,
    pub subject: Vec<usize>,
    /// Columns with no non-zero entry (level absent from the data).
    pub empty_columns: Vec<usize>,
}

impl DesignMatrix {
    pub fn rows(&self) -> usize {
        self.start.len()
    }

    pub fn width(&self) -> usize {
        self.layout.width()
    }

    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[r.clone()], &self.vals[r])
    }

    pub fn dense_row(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.width()];
        let (c, v) = self.row(i);
        for (c, v) in c.iter().zip(v) {
            out[*c as usize] = *v;
        }
        out
    }

    pub fn events(&self) -> usize {
        self.event.iter().filter(|e| **e).count()
    }

    /// Builds a design from raw parts; `rows` holds sparse entries per row.
    pub fn from_rows(
        layout: DesignLayout,
        rows: Vec<Vec<(usize, f64)>>,
        start: Vec<f64>,
        stop: Vec<f64>,
        event: Vec<bool>,
        subject: Vec<usize>,
    ) -> Result<Self> {
        let n = rows.len();
        if [start.len(), stop.len(), event.len(), subject.len()]
            .iter()
            .any(|l| *l != n)
        {
            return Err(Error::InvalidArgument(
                "design parts differ in length".into(),
            ));
        }
        let width = layout.width();
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut seen = vec![false; width];
        for r in rows {
            for (c, v) in r {
                if c >= width {
                    return Err(Error::InvalidArgument(format!("column {c} out of range")));
                }
                if v != 0.0 {
                    seen[c] = true;
                    cols.push(c as u32);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        let empty_columns = (0..width).filter(|c| !seen[*c]).collect();
        Ok(DesignMatrix {
            layout,
            row_ptr,
            cols,
            vals,
            start,
            stop,
            event,
            subject,
            empty_columns,
        })
    }
}

/// Assembles the design: age-dependent blocks carry the spline basis at the
/// episode's grid-cell anchor, constant blocks and interactions carry
/// indicators.
pub fn build_design(episodes: &[Episode], layout: &DesignLayout) -> Result<DesignMatrix> {
    for e in episodes {
        e.covariates.validate()?;
        if !(e.start < e.stop) {
            return Err(Error::Input(format!(
                "episode of subject {} has stop <= start",
                e.subject
            )));
        }
    }
    let rows = par::map_chunks(episodes.len(), par::CHUNK, |r| {
        episodes[r]
            .iter()
            .map(|e| layout.row(&e.covariates, layout.grid.anchor_start(e.start)))
            .collect::<Vec<_>>()
    })
    .concat();
    DesignMatrix::from_rows(
        layout.clone(),
        rows,
        episodes.iter().map(|e| e.start).collect(),
        episodes.iter().map(|e| e.stop).collect(),
        episodes.iter().map(|e| e.event).collect(),
        episodes.iter().map(|e| e.subject).collect(),
    )
}
