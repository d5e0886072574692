//! Seeded synthetic cohort with planted feature–outcome effects.
//!
//! The generator emits 108 survey-style columns (Likert items scored 0–3,
//! binaries, a few numeric measures, two nominal items and three free-text
//! answers), a binary login outcome and a three-class message outcome. Both
//! outcomes follow a logistic model in the standardized planted features;
//! the message outcome uses cumulative logits so `P(y ≥ 1)` and `P(y ≥ 2)`
//! share the same linear predictor. Intercepts are chosen so the population
//! expected rates equal the targets; the expectation is exact because every
//! planted feature is discrete and the features are independent.
//!
//! Effect magnitudes are synthetic (logit change per standard deviation).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{write_csv, write_labels, Cell, ColumnKind, ColumnSchema, DataTable, LabelVector, Task, TableBuilder};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded, SeededRng};

pub const N_COLUMNS: usize = 108;
/// Upper bound on the support size of one outcome's linear predictor.
const MAX_SUPPORT: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Login,
    Message,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedEffect {
    pub feature: String,
    pub outcome: Outcome,
    /// +1 raises the outcome, −1 lowers it.
    pub sign: i8,
    pub magnitude: f64,
}

impl PlantedEffect {
    fn new(feature: &str, outcome: Outcome, sign: i8, magnitude: f64) -> Self {
        Self {
            feature: feature.to_string(),
            outcome,
            sign,
            magnitude,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetRates {
    pub login: f64,
    /// Share of the cohort posting exactly one message.
    pub msg1: f64,
    /// Share posting two or more.
    pub msg2plus: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Demographics {
    pub female: f64,
    pub white: f64,
    pub asian: f64,
    pub black: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortSpec {
    pub n: usize,
    pub rates: TargetRates,
    pub demographics: Demographics,
    pub effects: Vec<PlantedEffect>,
    /// Per-column missing rates are drawn uniformly from `[0, missing_max]`.
    pub missing_max: f64,
    /// Columns whose missing rate is drawn from `high_missing_range` instead.
    pub high_missing_columns: Vec<String>,
    pub high_missing_range: (f64, f64),
    /// Coefficient of the product term for consecutive pairs of an
    /// outcome's planted features.
    pub interaction_noise: f64,
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            n: 1673,
            rates: TargetRates {
                login: 0.375,
                msg1: 0.212,
                msg2plus: 0.100,
            },
            demographics: Demographics {
                female: 0.616,
                white: 0.720,
                asian: 0.210,
                black: 0.074,
            },
            effects: default_effects(),
            missing_max: 0.3,
            high_missing_columns: vec!["caregiver".into(), "pet_owner".into()],
            high_missing_range: (0.82, 0.9),
            interaction_noise: 0.25,
            seed: 42,
        }
    }
}

pub fn default_effects() -> Vec<PlantedEffect> {
    vec![
        PlantedEffect::new("chronic_pain", Outcome::Login, 1, 1.0),
        PlantedEffect::new("perceived_stigma", Outcome::Login, -1, 1.0),
        PlantedEffect::new("alcohol_blackouts", Outcome::Login, -1, 1.0),
        PlantedEffect::new("female", Outcome::Message, 1, 1.0),
        PlantedEffect::new("persistent_sadness", Outcome::Message, 1, 1.0),
    ]
}

// ---------------------------------------------------------------------------
// Column catalogue
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
enum Gen {
    Likert([f64; 4]),
    Binary(f64),
    /// Exactly `round(p · n)` ones, placed uniformly.
    ExactBinary(f64),
    Normal { mean: f64, sd: f64, lo: f64, hi: f64, step: f64 },
    Nominal(&'static [f64]),
    Text(&'static [(&'static str, f64, &'static [&'static str])]),
}

impl Gen {
    /// Discrete distribution of the stored value, if it has one.
    fn support(&self) -> Option<Vec<(f64, f64)>> {
        match self {
            Gen::Likert(p) => Some(p.iter().enumerate().map(|(i, &q)| (i as f64, q)).collect()),
            Gen::Binary(p) | Gen::ExactBinary(p) => Some(vec![(0.0, 1.0 - p), (1.0, *p)]),
            _ => None,
        }
    }
}

const PROFILES: [[f64; 4]; 5] = [
    [0.35, 0.30, 0.20, 0.15],
    [0.15, 0.30, 0.35, 0.20],
    [0.50, 0.25, 0.15, 0.10],
    [0.25, 0.25, 0.25, 0.25],
    [0.10, 0.20, 0.35, 0.35],
];

const YEARS: &[&str] = &["freshman", "sophomore", "junior", "senior", "graduate"];
const YEAR_P: &[f64] = &[0.30, 0.25, 0.20, 0.18, 0.07];
const LIVING: &[&str] = &["on_campus", "off_campus", "with_family", "other"];
const LIVING_P: &[f64] = &[0.45, 0.30, 0.20, 0.05];

const MAJORS: &[(&str, f64, &[&str])] = &[
    ("psychology", 0.20, &["psychology", "Psych", "psych major", "Psychology ", "psyc"]),
    ("biology", 0.15, &["biology", "Bio", "biological sciences", "pre-med biology"]),
    ("computer science", 0.14, &["computer science", "CS", "comp sci", "Computer Science and Engineering"]),
    ("business", 0.14, &["business", "Business Administration", "business admin", "marketing"]),
    ("engineering", 0.12, &["engineering", "mechanical engineering", "Electrical Engineering", "civil eng"]),
    ("nursing", 0.10, &["nursing", "Nursing BSN", "pre nursing"]),
    ("english", 0.07, &["english", "English literature", "creative writing"]),
    ("undeclared", 0.08, &["undeclared", "Undecided", "not sure yet", "idk"]),
];

const REFERRALS: &[(&str, f64, &[&str])] = &[
    ("email", 0.40, &["email", "an email", "Email from school", "e-mail invite"]),
    ("friend", 0.20, &["friend", "a friend told me", "my roommate", "friends"]),
    ("flyer", 0.15, &["flyer", "poster on campus", "saw a flyer", "Poster"]),
    ("class", 0.15, &["class", "professor mentioned it", "in class", "my instructor"]),
    ("social media", 0.10, &["instagram", "social media", "Facebook post", "twitter"]),
];

const COPING: &[(&str, f64, &[&str])] = &[
    ("exercise", 0.25, &["exercise", "going to the gym", "running", "working out"]),
    ("talking to friends", 0.25, &["talking to friends", "talk with friends", "hanging out with friends"]),
    ("music", 0.15, &["music", "listening to music", "playing guitar"]),
    ("sleep", 0.10, &["sleep", "sleeping", "taking a nap"]),
    ("gaming", 0.10, &["video games", "gaming", "playing games"]),
    ("nothing", 0.15, &["nothing", "none", "n/a nothing really", "I don't"]),
];

fn likert_block(out: &mut Vec<(ColumnSchema, Gen)>, prefix: &str, n: usize, offset: usize) {
    for i in 0..n {
        out.push(likert(&format!("{prefix}_{}", i + 1), PROFILES[(i + offset) % PROFILES.len()]));
    }
}

fn likert(name: &str, p: [f64; 4]) -> (ColumnSchema, Gen) {
    (ColumnSchema::ordinal(name, ["0", "1", "2", "3"]), Gen::Likert(p))
}

fn binary(name: &str, p: f64) -> (ColumnSchema, Gen) {
    (ColumnSchema::binary(name), Gen::Binary(p))
}

fn columns(demo: &Demographics) -> Vec<(ColumnSchema, Gen)> {
    let mut c = Vec::with_capacity(N_COLUMNS);
    c.push((
        ColumnSchema::numeric("age"),
        Gen::Normal {
            mean: 20.5,
            sd: 2.0,
            lo: 18.0,
            hi: 30.0,
            step: 1.0,
        },
    ));
    c.push((ColumnSchema::binary("female"), Gen::ExactBinary(demo.female)));
    c.push((ColumnSchema::binary("race_white"), Gen::ExactBinary(demo.white)));
    c.push((ColumnSchema::binary("race_asian"), Gen::ExactBinary(demo.asian)));
    c.push((ColumnSchema::binary("race_black"), Gen::ExactBinary(demo.black)));
    c.push(binary("hispanic", 0.12));
    c.push((ColumnSchema::nominal("year_in_school", YEARS.iter().copied()), Gen::Nominal(YEAR_P)));
    c.push((ColumnSchema::nominal("living_situation", LIVING.iter().copied()), Gen::Nominal(LIVING_P)));
    c.push(binary("first_generation", 0.30));
    c.push(binary("international", 0.08));
    c.push(binary("employed", 0.40));

    c.push((ColumnSchema::text("major"), Gen::Text(MAJORS)));
    c.push((ColumnSchema::text("referral_source"), Gen::Text(REFERRALS)));
    c.push((ColumnSchema::text("coping_strategy"), Gen::Text(COPING)));

    c.push(likert("chronic_pain", [0.45, 0.25, 0.18, 0.12]));
    c.push(likert("perceived_stigma", [0.20, 0.30, 0.30, 0.20]));
    c.push(likert("alcohol_blackouts", [0.60, 0.20, 0.12, 0.08]));
    c.push(likert("persistent_sadness", [0.30, 0.30, 0.25, 0.15]));

    let numeric = |name: &str, mean: f64, sd: f64, lo: f64, hi: f64, step: f64| (ColumnSchema::numeric(name), Gen::Normal { mean, sd, lo, hi, step });
    c.push(numeric("sleep_hours", 7.0, 1.2, 3.0, 12.0, 0.5));
    c.push(numeric("gpa", 3.2, 0.45, 0.0, 4.0, 0.01));
    c.push(numeric("weekly_screen_hours", 30.0, 10.0, 0.0, 90.0, 1.0));
    c.push(numeric("days_active_exercise", 3.0, 2.0, 0.0, 7.0, 1.0));

    likert_block(&mut c, "phq", 8, 0);
    likert_block(&mut c, "gad", 7, 1);
    likert_block(&mut c, "pss", 10, 2);
    likert_block(&mut c, "loneliness", 3, 3);
    likert_block(&mut c, "resilience", 6, 4);
    likert_block(&mut c, "help_seeking", 10, 0);
    likert_block(&mut c, "substance", 8, 2);
    likert_block(&mut c, "sleep_quality", 7, 1);
    likert_block(&mut c, "social_support", 12, 3);

    for (name, p) in [
        ("prior_therapy", 0.35),
        ("current_medication", 0.20),
        ("prior_app_use", 0.25),
        ("counseling_aware", 0.70),
        ("lgbtq", 0.15),
        ("disability", 0.10),
        ("athlete", 0.12),
        ("greek_life", 0.15),
        ("financial_aid", 0.55),
        ("commuter", 0.25),
        ("caregiver", 0.08),
        ("rural_hometown", 0.20),
        ("transfer_student", 0.12),
        ("online_courses", 0.40),
        ("pet_owner", 0.30),
    ] {
        c.push(binary(name, p));
    }
    debug_assert_eq!(c.len(), N_COLUMNS);
    c
}

/// Schema of the generated cohort table.
pub fn cohort_schema() -> Vec<ColumnSchema> {
    columns(&CohortSpec::default().demographics).into_iter().map(|(s, _)| s).collect()
}

// ---------------------------------------------------------------------------
// Outcome model
// ---------------------------------------------------------------------------

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// One outcome's linear predictor: centered, scaled planted terms plus
/// products of consecutive planted pairs.
#[derive(Debug, Clone)]
struct Predictor {
    /// (column, raw coefficient, center, sd)
    terms: Vec<(usize, f64, f64, f64)>,
    interaction: f64,
}

impl Predictor {
    fn eta(&self, value: impl Fn(usize) -> f64) -> f64 {
        let z: Vec<f64> = self.terms.iter().map(|&(c, _, mu, sd)| (value(c) - mu) / sd).collect();
        let mut eta: f64 = self.terms.iter().zip(&z).map(|(t, zi)| t.1 * t.3 * zi).sum();
        for pair in z.chunks_exact(2) {
            eta += self.interaction * pair[0] * pair[1];
        }
        eta
    }

    /// Exact distribution of the predictor as (value, probability) atoms.
    fn support(&self, gens: &[Gen]) -> Result<Vec<(f64, f64)>> {
        let dists: Vec<Vec<(f64, f64)>> = self.terms.iter().map(|t| gens[t.0].support().expect("planted columns are discrete")).collect();
        let size = dists.iter().map(Vec::len).try_fold(1usize, |a, n| a.checked_mul(n).filter(|&s| s <= MAX_SUPPORT));
        if size.is_none() {
            return Err(Error::Generator(format!("{} planted features exceed the enumeration budget", self.terms.len())));
        }
        let mut atoms = vec![(Vec::<f64>::new(), 1.0)];
        for d in &dists {
            atoms = atoms
                .into_iter()
                .flat_map(|(vals, p)| {
                    d.iter().filter(|a| a.1 > 0.0).map(move |&(v, q)| {
                        let mut vals = vals.clone();
                        vals.push(v);
                        (vals, p * q)
                    })
                })
                .collect();
        }
        Ok(atoms
            .into_iter()
            .map(|(vals, p)| {
                let lookup: BTreeMap<usize, f64> = self.terms.iter().map(|t| t.0).zip(vals).collect();
                (self.eta(|c| lookup[&c]), p)
            })
            .collect())
    }
}

/// `E[σ(b + η)]` over a discrete predictor distribution.
pub fn expected_rate(intercept: f64, support: &[(f64, f64)]) -> f64 {
    support.iter().map(|&(eta, p)| p * sigmoid(intercept + eta)).sum()
}

/// Intercept `b` with `E[σ(b + η)] = target`, by bisection.
pub fn solve_intercept(target: f64, support: &[(f64, f64)]) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::Generator(format!("rate target {target} is not inside (0, 1)")));
    }
    let (mut lo, mut hi) = (-60.0, 60.0);
    if expected_rate(lo, support) > target || expected_rate(hi, support) < target {
        return Err(Error::Generator(format!("rate target {target} is unreachable within intercept bounds [{lo}, {hi}]")));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if expected_rate(mid, support) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizedRates {
    pub login: f64,
    pub msg1: f64,
    pub msg2plus: f64,
    /// Demographic shares among observed cells.
    pub female: f64,
    pub white: f64,
    pub asian: f64,
    pub black: f64,
}

/// Planted generative model, kept for scoring attribution recovery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub columns: Vec<String>,
    /// Logit change per raw unit; nonzero exactly on planted columns.
    pub login: Vec<f64>,
    pub message: Vec<f64>,
    /// Centers subtracted before applying the coefficients.
    pub centers: Vec<f64>,
    pub login_intercept: f64,
    /// Intercepts of `P(y ≥ 1)` and `P(y ≥ 2)` for the message outcome.
    pub message_cutpoints: [f64; 2],
    pub interaction_noise: f64,
    pub effects: Vec<PlantedEffect>,
    pub missing_rates: Vec<f64>,
    pub realized: RealizedRates,
    pub schema: Vec<ColumnSchema>,
}

impl GroundTruth {
    pub fn coefficients(&self, outcome: Outcome) -> &[f64] {
        match outcome {
            Outcome::Login => &self.login,
            Outcome::Message => &self.message,
        }
    }

    /// Planted (feature, sign) pairs for one outcome, in declaration order.
    pub fn planted(&self, outcome: Outcome) -> Vec<(String, i8)> {
        self.effects.iter().filter(|e| e.outcome == outcome && e.magnitude != 0.0).map(|e| (e.feature.clone(), e.sign)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Cohort {
    pub table: DataTable,
    pub login: LabelVector,
    pub message: LabelVector,
    pub truth: GroundTruth,
}

impl CohortSpec {
    pub fn check(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("`{name}` must lie in [0, 1], got {v}")))
            }
        };
        unit("rates.login", self.rates.login)?;
        unit("rates.msg1", self.rates.msg1)?;
        unit("rates.msg2plus", self.rates.msg2plus)?;
        unit("demographics.female", self.demographics.female)?;
        unit("demographics.white", self.demographics.white)?;
        unit("demographics.asian", self.demographics.asian)?;
        unit("demographics.black", self.demographics.black)?;
        unit("missing_max", self.missing_max)?;
        unit("high_missing_range.0", self.high_missing_range.0)?;
        unit("high_missing_range.1", self.high_missing_range.1)?;
        if self.high_missing_range.0 > self.high_missing_range.1 {
            return Err(Error::Config("`high_missing_range` is reversed".into()));
        }
        if self.n < 2 {
            return Err(Error::Config(format!("`n` must be ≥ 2, got {}", self.n)));
        }
        if !self.interaction_noise.is_finite() {
            return Err(Error::Config("`interaction_noise` must be finite".into()));
        }
        let schema = cohort_schema();
        for name in &self.high_missing_columns {
            if !schema.iter().any(|c| &c.name == name) {
                return Err(Error::Config(format!("`high_missing_columns`: unknown column `{name}`")));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for e in &self.effects {
            let col = schema
                .iter()
                .find(|c| c.name == e.feature)
                .ok_or_else(|| Error::Config(format!("planted feature `{}` is not in the schema", e.feature)))?;
            if !matches!(col.kind, ColumnKind::Ordinal | ColumnKind::Binary) {
                return Err(Error::Config(format!("planted feature `{}` must be an ordinal or binary column", e.feature)));
            }
            if e.sign != 1 && e.sign != -1 {
                return Err(Error::Config(format!("planted feature `{}`: sign must be ±1", e.feature)));
            }
            if !(e.magnitude.is_finite() && e.magnitude >= 0.0) {
                return Err(Error::Config(format!("planted feature `{}`: magnitude must be finite and ≥ 0", e.feature)));
            }
            if !seen.insert((e.feature.clone(), e.outcome)) {
                return Err(Error::Config(format!("planted feature `{}` listed twice for one outcome", e.feature)));
            }
        }
        Ok(())
    }
}

fn draw_column(gen: &Gen, n: usize, rng: &mut SeededRng) -> Vec<Cell> {
    let pick = |rng: &mut SeededRng, probs: &mut dyn Iterator<Item = f64>| -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last = 0;
        for (i, p) in probs.enumerate() {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
        last
    };
    match gen {
        Gen::Likert(p) => (0..n).map(|_| Cell::Value(pick(rng, &mut p.iter().copied()) as f64)).collect(),
        Gen::Binary(p) => (0..n).map(|_| Cell::Value(if rng.random::<f64>() < *p { 1.0 } else { 0.0 })).collect(),
        Gen::ExactBinary(p) => {
            let ones = ((p * n as f64).round() as usize).min(n);
            let mut v = vec![Cell::Value(0.0); n];
            for i in index::sample(rng, n, ones) {
                v[i] = Cell::Value(1.0);
            }
            v
        }
        Gen::Normal { mean, sd, lo, hi, step } => {
            let d = Normal::new(*mean, *sd).expect("catalogue sd is positive");
            (0..n)
                .map(|_| {
                    let v: f64 = d.sample(rng);
                    let v = ((v / step).round() * step).clamp(*lo, *hi);
                    // strip representation noise from the step rounding
                    Cell::Value(format!("{v:.2}").parse().expect("formatted float parses"))
                })
                .collect()
        }
        Gen::Nominal(p) => (0..n).map(|_| Cell::Value(pick(rng, &mut p.iter().copied()) as f64)).collect(),
        Gen::Text(pool) => (0..n)
            .map(|_| {
                let cat = &pool[pick(rng, &mut pool.iter().map(|e| e.1))];
                Cell::Text(cat.2[rng.random_range(0..cat.2.len())].to_string())
            })
            .collect(),
    }
}

fn moments(gen: &Gen) -> (f64, f64) {
    let s = gen.support().expect("planted columns are discrete");
    let mean: f64 = s.iter().map(|(v, p)| v * p).sum();
    let var: f64 = s.iter().map(|(v, p)| p * (v - mean).powi(2)).sum();
    (mean, var.sqrt())
}

/// Draws a cohort; identical specs give identical cohorts.
pub fn generate_cohort(spec: &CohortSpec) -> Result<Cohort> {
    spec.check()?;
    if spec.rates.msg1 + spec.rates.msg2plus >= 1.0 {
        return Err(Error::Generator(format!(
            "message rates {} + {} leave no room for the zero class",
            spec.rates.msg1, spec.rates.msg2plus
        )));
    }
    let cols = columns(&spec.demographics);
    let n = spec.n;
    let names: Vec<String> = cols.iter().map(|c| c.0.name.clone()).collect();
    let gens: Vec<Gen> = cols.iter().map(|c| c.1.clone()).collect();
    let index_of = |name: &str| names.iter().position(|c| c == name).expect("checked against the schema");

    let mut predictors = BTreeMap::new();
    let mut coef = BTreeMap::from([(Outcome::Login, vec![0.0; N_COLUMNS]), (Outcome::Message, vec![0.0; N_COLUMNS])]);
    let mut centers = vec![0.0; N_COLUMNS];
    for outcome in [Outcome::Login, Outcome::Message] {
        let mut terms = Vec::new();
        for e in spec.effects.iter().filter(|e| e.outcome == outcome && e.magnitude != 0.0) {
            let c = index_of(&e.feature);
            let (mu, sd) = moments(&gens[c]);
            if sd == 0.0 {
                return Err(Error::Generator(format!("planted feature `{}` is constant", e.feature)));
            }
            let beta = f64::from(e.sign) * e.magnitude / sd;
            coef.get_mut(&outcome).expect("both outcomes present")[c] = beta;
            centers[c] = mu;
            terms.push((c, beta, mu, sd));
        }
        predictors.insert(outcome, Predictor {
            terms,
            interaction: spec.interaction_noise,
        });
    }
    let login_support = predictors[&Outcome::Login].support(&gens)?;
    let message_support = predictors[&Outcome::Message].support(&gens)?;
    let login_intercept = solve_intercept(spec.rates.login, &login_support)?;
    let cut1 = solve_intercept(spec.rates.msg1 + spec.rates.msg2plus, &message_support)?;
    let cut2 = solve_intercept(spec.rates.msg2plus, &message_support)?;

    // features, column by column
    let mut cells: Vec<Vec<Cell>> = cols
        .iter()
        .map(|(s, g)| draw_column(g, n, &mut seeded(derive_seed(spec.seed, &format!("synth/column/{}", s.name)))))
        .collect();
    let value = |cells: &[Vec<Cell>], r: usize, c: usize| match cells[c][r] {
        Cell::Value(v) => v,
        _ => unreachable!("planted columns hold values"),
    };

    // outcomes from complete values
    let mut rng = seeded(derive_seed(spec.seed, "synth/login"));
    let login: Vec<usize> = (0..n)
        .map(|r| {
            let eta = predictors[&Outcome::Login].eta(|c| value(&cells, r, c));
            usize::from(rng.random::<f64>() < sigmoid(login_intercept + eta))
        })
        .collect();
    let mut rng = seeded(derive_seed(spec.seed, "synth/message"));
    let message: Vec<usize> = (0..n)
        .map(|r| {
            let eta = predictors[&Outcome::Message].eta(|c| value(&cells, r, c));
            let u: f64 = rng.random();
            if u < sigmoid(cut2 + eta) {
                2
            } else if u < sigmoid(cut1 + eta) {
                1
            } else {
                0
            }
        })
        .collect();

    // completely-at-random masks with exact per-column counts
    let mut rate_rng = seeded(derive_seed(spec.seed, "synth/missing-rates"));
    let mut missing_rates = Vec::with_capacity(N_COLUMNS);
    for (c, name) in names.iter().enumerate() {
        let rate = if spec.high_missing_columns.contains(name) {
            let (a, b) = spec.high_missing_range;
            a + (b - a) * rate_rng.random::<f64>()
        } else {
            spec.missing_max * rate_rng.random::<f64>()
        };
        let count = ((rate * n as f64).round() as usize).min(n);
        let mut mrng = seeded(derive_seed(spec.seed, &format!("synth/missing/{name}")));
        for r in index::sample(&mut mrng, n, count) {
            cells[c][r] = Cell::Missing;
        }
        missing_rates.push(count as f64 / n as f64);
    }

    let schema: Vec<ColumnSchema> = cols.into_iter().map(|c| c.0).collect();
    let mut b = TableBuilder::new(schema.clone())?;
    for r in 0..n {
        b.push_row(cells.iter().map(|col| col[r].clone()).collect())?;
    }
    let table = b.finish();
    let login = LabelVector::new(Task::LoginBinary, login)?;
    let message = LabelVector::new(Task::MessageMulticlass, message)?;

    let share = |name: &str| {
        let c = index_of(name);
        let obs = table.observed(c);
        obs.iter().sum::<f64>() / obs.len().max(1) as f64
    };
    let counts = message.class_counts();
    let realized = RealizedRates {
        login: login.labels.iter().sum::<usize>() as f64 / n as f64,
        msg1: counts[1] as f64 / n as f64,
        msg2plus: counts[2] as f64 / n as f64,
        female: share("female"),
        white: share("race_white"),
        asian: share("race_asian"),
        black: share("race_black"),
    };
    let truth = GroundTruth {
        seed: spec.seed,
        columns: names,
        login: coef.remove(&Outcome::Login).expect("present"),
        message: coef.remove(&Outcome::Message).expect("present"),
        centers,
        login_intercept,
        message_cutpoints: [cut1, cut2],
        interaction_noise: spec.interaction_noise,
        effects: spec.effects.clone(),
        missing_rates,
        realized,
        schema,
    };
    Ok(Cohort {
        table,
        login,
        message,
        truth,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortFiles {
    pub features: PathBuf,
    pub labels: PathBuf,
    pub truth: PathBuf,
}

impl CohortFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            features: dir.join("cohort.csv"),
            labels: dir.join("labels.csv"),
            truth: dir.join("ground_truth.json"),
        }
    }
}

/// Writes `cohort.csv`, `labels.csv` and `ground_truth.json` into `dir`.
pub fn write_cohort(dir: &Path, cohort: &Cohort) -> Result<CohortFiles> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = CohortFiles::in_dir(dir);
    write_csv(&files.features, &cohort.table)?;
    write_labels(&files.labels, cohort.table.row_ids(), &[&cohort.login, &cohort.message])?;
    let json = serde_json::to_string_pretty(&cohort.truth)?;
    std::fs::write(&files.truth, json).map_err(|e| Error::io(&files.truth, e))?;
    Ok(files)
}

pub fn read_ground_truth(path: &Path) -> Result<GroundTruth> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&s)?)
}
