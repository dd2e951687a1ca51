use chrono::{Datelike, Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calendar::{age_at, anniversary, date_at_age, ymd};
use crate::cohort::{
    impute_birth_date, Covariate, Covariates, EventRecord, Exposure, Provenance, Sex, Subject,
};
use crate::error::{Error, Result};
use crate::par;

/// Piecewise-constant function of age: `values[k]` on `[breaks[k-1], breaks[k])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    #[serde(default)]
    pub breaks: Vec<f64>,
    pub values: Vec<f64>,
}

impl Schedule {
    pub fn constant(value: f64) -> Self {
        Schedule {
            breaks: Vec::new(),
            values: vec![value],
        }
    }

    pub fn at(&self, age: f64) -> f64 {
        self.values[self.breaks.partition_point(|b| *b <= age)]
    }

    fn validate(&self, what: &str) -> Result<()> {
        if self.values.len() != self.breaks.len() + 1
            || self.breaks.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::Config(format!(
                "{what}: need increasing breaks and one more value than breaks"
            )));
        }
        if self.values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config(format!(
                "{what}: values must be finite and non-negative"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Baseline {
    Exponential { rate: f64 },
    Piecewise { breaks: Vec<f64>, rates: Vec<f64> },
}

impl Baseline {
    fn schedule(&self) -> Schedule {
        match self {
            Baseline::Exponential { rate } => Schedule::constant(*rate),
            Baseline::Piecewise { breaks, rates } => Schedule {
                breaks: breaks.clone(),
                values: rates.clone(),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Censoring {
    /// End of the four-year window (and the 105th birthday).
    #[default]
    Administrative,
    /// Only the 105th birthday.
    None,
}

/// Level probabilities for the non-reference levels, in level order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prevalence {
    pub covariate: Covariate,
    #[serde(default)]
    pub levels: Vec<f64>,
    /// Uniform over all levels, reference included.
    #[serde(default)]
    pub uniform: bool,
}

/// Target Pearson correlation between the presence indicators (level > 0)
/// of two covariates; `b` is drawn conditionally on `a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub a: Covariate,
    pub b: Covariate,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Effect {
    pub covariate: Covariate,
    pub level: u8,
    #[serde(default)]
    pub breaks: Vec<f64>,
    pub hazard_ratios: Vec<f64>,
}

impl Effect {
    fn schedule(&self) -> Schedule {
        Schedule {
            breaks: self.breaks.clone(),
            values: self.hazard_ratios.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionEffect {
    pub a: Covariate,
    pub level_a: u8,
    pub b: Covariate,
    pub level_b: u8,
    pub hazard_ratio: f64,
}

fn default_birth_years() -> [i32; 2] {
    [1915, 1963]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_birth_years")]
    pub birth_years: [i32; 2],
    #[serde(default)]
    pub censoring: Censoring,
    pub baseline: Baseline,
    #[serde(rename = "prevalence", default)]
    pub prevalences: Vec<Prevalence>,
    #[serde(rename = "correlation", default)]
    pub correlations: Vec<Correlation>,
    #[serde(rename = "effect", default)]
    pub effects: Vec<Effect>,
    #[serde(rename = "interaction", default)]
    pub interactions: Vec<InteractionEffect>,
    /// Share of subjects planted with a violation of one standard exclusion rule.
    #[serde(default)]
    pub exclusion_rate: f64,
    /// Share of events recorded as deaths rather than severe conditions.
    #[serde(default)]
    pub death_share: f64,
}

impl SyntheticConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: SyntheticConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("synthetic config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("synthetic config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.birth_years;
        if lo > hi || lo < 1900 || hi > 1963 {
            return Err(Error::Config(
                "birth years must lie within 1900..=1963".into(),
            ));
        }
        self.baseline.schedule().validate("baseline")?;
        for e in &self.effects {
            e.schedule().validate(&format!("effect {}", e.covariate))?;
            if !e.covariate.levels().contains(&e.level) {
                return Err(Error::Config(format!(
                    "effect {}: no level {}",
                    e.covariate, e.level
                )));
            }
        }
        for p in &self.prevalences {
            let k = p.covariate.levels().len() - 1;
            if !p.uniform
                && (p.levels.len() != k
                    || p.levels.iter().any(|q| !(0.0..=1.0).contains(q))
                    || p.levels.iter().sum::<f64>() > 1.0 + 1e-12)
            {
                return Err(Error::Config(format!(
                    "prevalence of {}: need {k} probabilities summing to at most 1",
                    p.covariate
                )));
            }
        }
        for c in &self.correlations {
            let pa = self.presence(c.a);
            let pb = self.presence(c.b);
            let (p1, p0) = conditional_presence(pa, pb, c.rho);
            if !(0.0..=1.0).contains(&p1) || !(0.0..=1.0).contains(&p0) {
                return Err(Error::Config(format!(
                    "correlation {}~{} = {} unattainable",
                    c.a, c.b, c.rho
                )));
            }
            let ia = self.prevalences.iter().position(|p| p.covariate == c.a);
            let ib = self.prevalences.iter().position(|p| p.covariate == c.b);
            if !matches!((ia, ib), (Some(a), Some(b)) if a < b) {
                return Err(Error::Config(format!(
                    "correlation {}~{}: both need prevalences, `a` first",
                    c.a, c.b
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.exclusion_rate) || !(0.0..=1.0).contains(&self.death_share) {
            return Err(Error::Config("rates must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Probability that the covariate is above its first level.
    fn presence(&self, c: Covariate) -> f64 {
        match self.prevalences.iter().find(|p| p.covariate == c) {
            Some(p) if p.uniform => 1.0 - 1.0 / c.levels().len() as f64,
            Some(p) => p.levels.iter().sum(),
            None => 0.0,
        }
    }
}

fn conditional_presence(pa: f64, pb: f64, rho: f64) -> (f64, f64) {
    let cov = rho * (pa * (1.0 - pa) * pb * (1.0 - pb)).sqrt();
    let p1 = if pa > 0.0 { pb + cov / pa } else { pb };
    let p0 = if pa < 1.0 { pb - cov / (1.0 - pa) } else { pb };
    (p1, p0)
}

/// The data-generating hazard, for oracle comparisons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub config: SyntheticConfig,
}

impl Truth {
    pub fn baseline_hazard(&self, age: f64) -> f64 {
        self.config.baseline.schedule().at(age)
    }

    /// Planted main-effect hazard ratio of one level at `age` (1 if none).
    pub fn hazard_ratio(&self, covariate: Covariate, level: u8, age: f64) -> f64 {
        self.config
            .effects
            .iter()
            .filter(|e| e.covariate == covariate && e.level == level)
            .map(|e| e.schedule().at(age))
            .product()
    }

    pub fn relative_hazard(&self, x: &Covariates, age: f64) -> f64 {
        let main: f64 = self
            .config
            .effects
            .iter()
            .filter(|e| x.level(e.covariate) == e.level)
            .map(|e| e.schedule().at(age))
            .product();
        let inter: f64 = self
            .config
            .interactions
            .iter()
            .filter(|i| x.level(i.a) == i.level_a && x.level(i.b) == i.level_b)
            .map(|i| i.hazard_ratio)
            .product();
        main * inter
    }

    pub fn hazard(&self, x: &Covariates, age: f64) -> f64 {
        self.baseline_hazard(age) * self.relative_hazard(x, age)
    }

    fn breaks(&self) -> Vec<f64> {
        let mut b = self.config.baseline.schedule().breaks;
        for e in &self.config.effects {
            b.extend(&e.breaks);
        }
        b.sort_by(f64::total_cmp);
        b.dedup();
        b
    }

    pub fn cumulative_hazard(&self, x: &Covariates, from: f64, to: f64) -> f64 {
        let breaks = self.breaks();
        let mut a = from;
        let mut total = 0.0;
        while a < to {
            let next = breaks
                .iter()
                .copied()
                .find(|b| *b > a)
                .unwrap_or(f64::INFINITY)
                .min(to);
            total += self.hazard(x, a) * (next - a);
            a = next;
        }
        total
    }

    pub fn survival(&self, x: &Covariates, from: f64, to: f64) -> f64 {
        (-self.cumulative_hazard(x, from, to)).exp()
    }

    /// Age at which the cumulative hazard from `from` reaches `target`, or
    /// infinity if that happens after `cap`.
    fn invert(&self, x: &Covariates, breaks: &[f64], from: f64, target: f64, cap: f64) -> f64 {
        let mut a = from;
        let mut left = target;
        while a < cap {
            let next = breaks
                .iter()
                .copied()
                .find(|b| *b > a)
                .unwrap_or(f64::INFINITY);
            let h = self.hazard(x, a);
            if h > 0.0 && h * (next - a) >= left {
                return a + left / h;
            }
            if next.is_infinite() {
                break;
            }
            left -= h * (next - a);
            a = next;
        }
        f64::INFINITY
    }
}

/// Generated cohort with exact exposures and planted-exclusion counts.
#[derive(Debug, Clone)]
pub struct SyntheticCohort {
    /// Every subject, including those planted to fail an exclusion rule.
    pub subjects: Vec<Subject>,
    /// Exposures of retained subjects on the exact (undiscretised) age scale.
    pub exposures: Vec<Exposure>,
    pub truth: Truth,
    /// Subjects planted against each standard exclusion rule, in rule order.
    pub planted: [usize; 4],
}

const WINDOW_START: (i32, u32, u32) = (2010, 1, 1);
const WINDOW_END: (i32, u32, u32) = (2013, 12, 31);

struct Generated {
    subject: Subject,
    exposure: Option<Exposure>,
    planted: Option<usize>,
}

fn pick_level(rng: &mut ChaCha8Rng, c: Covariate, p: &Prevalence, present: Option<bool>) -> u8 {
    let levels = c.levels();
    if p.uniform {
        let i = match present {
            None => rng.random_range(0..levels.len()),
            Some(false) => 0,
            Some(true) => rng.random_range(1..levels.len()),
        };
        return levels[i];
    }
    let total: f64 = p.levels.iter().sum();
    let present = match present {
        Some(v) => v,
        None => rng.random::<f64>() < total,
    };
    if !present || total == 0.0 {
        return levels[0];
    }
    let mut u = rng.random::<f64>() * total;
    for (k, q) in p.levels.iter().enumerate() {
        if u < *q {
            return levels[k + 1];
        }
        u -= q;
    }
    *levels.last().expect("levels")
}

fn random_day(rng: &mut ChaCha8Rng, from: NaiveDate, to: NaiveDate) -> NaiveDate {
    let span = (to - from).num_days();
    from + Duration::days(rng.random_range(0..=span))
}

fn generate_one(config: &SyntheticConfig, truth: &Truth, breaks: &[f64], i: usize) -> Generated {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(i as u64);
    let id = format!("P{i:07}");
    let [lo, hi] = config.birth_years;
    let mut birth_year = rng.random_range(lo..=hi);

    let mut x = Covariates::reference();
    if !config
        .prevalences
        .iter()
        .any(|p| p.covariate == Covariate::Sex)
    {
        x = x.with(Covariate::Sex, rng.random_bool(0.5) as u8);
    }
    for p in &config.prevalences {
        let forced = config
            .correlations
            .iter()
            .find(|c| c.b == p.covariate)
            .map(|c| {
                let (p1, p0) =
                    conditional_presence(config.presence(c.a), config.presence(c.b), c.rho);
                let q = if x.level(c.a) != c.a.levels()[0] {
                    p1
                } else {
                    p0
                };
                rng.random::<f64>() < q
            });
        x = x.with(p.covariate, pick_level(&mut rng, p.covariate, p, forced));
    }

    let planted =
        (rng.random::<f64>() < config.exclusion_rate).then(|| rng.random_range(0..4usize));
    if planted == Some(3) {
        birth_year = rng.random_range(1961..=1963);
    }
    let birth_date = impute_birth_date(birth_year, config.seed, &id);
    let start = ymd(WINDOW_START.0, WINDOW_START.1, WINDOW_START.2);
    let end = ymd(WINDOW_END.0, WINDOW_END.1, WINDOW_END.2);
    let fifty = anniversary(birth_date, 50);
    let entry_age = if fifty > start {
        50.0
    } else {
        age_at(birth_date, start).max(50.0)
    };
    let cap = match config.censoring {
        Censoring::Administrative => age_at(birth_date, end).min(105.0),
        Censoring::None => 105.0,
    };

    let target = -(1.0 - rng.random::<f64>()).ln();
    let event_age = truth.invert(&x, breaks, entry_age, target, cap);
    let event = event_age <= cap;
    let exit_age = if event { event_age } else { cap };
    let is_death = rng.random::<f64>() < config.death_share;
    let code = if is_death {
        "DEATH".to_string()
    } else {
        format!("S{:02}", rng.random_range(1..=36))
    };

    let mut subject = Subject {
        id: id.clone(),
        covariates: x,
        birth_year,
        birth_date,
        events: Vec::new(),
        death_date: None,
        censor_date: None,
    };
    if event {
        let date = date_at_age(birth_date, event_age);
        if date <= end {
            subject.events.push(EventRecord { date, code });
        }
    }
    match planted {
        Some(0) => subject.events.push(EventRecord {
            date: random_day(&mut rng, ymd(2009, 1, 1), ymd(2009, 12, 31)),
            code: format!("S{:02}", rng.random_range(1..=36)),
        }),
        Some(1) => subject.events.push(EventRecord {
            date: random_day(&mut rng, start, end),
            code: format!("X{:02}", rng.random_range(1..=7)),
        }),
        Some(2) => {
            subject.censor_date = Some(random_day(&mut rng, ymd(2009, 1, 1), ymd(2009, 12, 31)))
        }
        Some(_) => {
            subject.events.clear();
            subject.censor_date = Some(ymd(2010, 6, 30));
        }
        None => {}
    }
    subject
        .events
        .sort_by(|a, b| a.date.cmp(&b.date).then_with(|| a.code.cmp(&b.code)));

    let exposure = (planted.is_none() && exit_age > entry_age && fifty.year() <= WINDOW_END.0)
        .then(|| Exposure {
            subject_id: id,
            birth_year,
            covariates: x,
            entry_age,
            exit_age,
            event,
            provenance: Provenance::Observed,
        });
    Generated {
        subject,
        exposure,
        planted,
    }
}

/// Draws a cohort from the configured hazard by inversion, one independent
/// stream per subject.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticCohort> {
    config.validate()?;
    let truth = Truth {
        config: config.clone(),
    };
    let breaks = truth.breaks();
    let generated = par::map_indexed(config.n, |i| generate_one(config, &truth, &breaks, i));
    let mut cohort = SyntheticCohort {
        subjects: Vec::with_capacity(config.n),
        exposures: Vec::with_capacity(config.n),
        truth,
        planted: [0; 4],
    };
    for g in generated {
        if let Some(r) = g.planted {
            cohort.planted[r] += 1;
        }
        cohort.exposures.extend(g.exposure);
        cohort.subjects.push(g.subject);
    }
    Ok(cohort)
}

impl SyntheticCohort {
    pub fn sex_counts(&self) -> (usize, usize) {
        let m = self
            .exposures
            .iter()
            .filter(|e| e.covariates.sex == Sex::Male)
            .count();
        (self.exposures.len() - m, m)
    }
}
