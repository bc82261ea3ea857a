//! Synthetic cohorts, responses and event logs from known parameters.
//!
//! Randomness comes from ChaCha8 (`rand_chacha`). Every draw belongs to a
//! stream identified by `(seed ^ domain, student << 32 | item)`, so each
//! student's data can be generated independently and in parallel while the
//! output stays identical for a given seed. Uniforms are `u64 >> 11` scaled
//! by `2^-53`; normals use Box-Muller, `sqrt(-2 ln(1 - u1)) cos(2 pi u2)`.
//!
//! Correctness of the first attempt on (student, item) is the first draw of
//! the response stream in both [`generate_responses`] and
//! [`generate_event_log`]. With one attempt per item and no missingness the
//! two data paths therefore agree cell for cell.

use std::collections::BTreeMap;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{InteractionEvent, StudentExerciseSummary};
use crate::irt::{icc_prob, ItemParameters};
use crate::matrix::ResponseMatrix;
use crate::par;

const COHORT_DOMAIN: u64 = 0x0063_6f68_6f72_7400;
const ITEM_DOMAIN: u64 = 0x0069_7465_6d73_0000;
const RESPONSE_DOMAIN: u64 = 0x0072_6573_7000_0000;
const MISSING_DOMAIN: u64 = 0x006d_6973_7300_0000;

/// Upper bound on attempts per (student, item), keeping timestamps ordered.
pub const MAX_ATTEMPTS_LIMIT: u32 = 1000;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid simulation spec: {0}")]
    InvalidSpec(String),
    #[error("length mismatch: {0} true vs {1} fitted")]
    LengthMismatch(usize, usize),
}

fn stream(seed: u64, domain: u64, student: usize, item: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ domain);
    rng.set_stream(((student as u64) << 32) | item as u64);
    rng
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen();
    let u2: f64 = rng.gen();
    (-2.0 * (1.0 - u1).ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub n_students: usize,
    #[serde(default)]
    pub ability_mean: f64,
    #[serde(default = "one")]
    pub ability_sd: f64,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

impl CohortSpec {
    pub fn new(n_students: usize, seed: u64) -> Self {
        CohortSpec { n_students, ability_mean: 0.0, ability_sd: 1.0, seed }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_students == 0 {
            return Err(SimError::InvalidSpec("n_students must be positive".into()));
        }
        let sd_ok = self.ability_sd > 0.0 && self.ability_sd.is_finite();
        if !sd_ok || !self.ability_mean.is_finite() {
            return Err(SimError::InvalidSpec("ability_sd must be positive and finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStudent {
    pub student_id: String,
    pub theta: f64,
}

fn id_width(n: usize) -> usize {
    n.saturating_sub(1).to_string().len().max(3)
}

/// Student ids are `s` plus a zero-padded index, so id order is index order.
pub fn sample_cohort(spec: &CohortSpec) -> Result<Vec<SimStudent>, SimError> {
    spec.validate()?;
    let width = id_width(spec.n_students);
    Ok(par::map_range(spec.n_students, |s| {
        let mut rng = stream(spec.seed, COHORT_DOMAIN, s, 0);
        SimStudent {
            student_id: format!("s{s:0width$}"),
            theta: spec.ability_mean + spec.ability_sd * standard_normal(&mut rng),
        }
    }))
}

/// An item with the chapter it belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimItem {
    pub item_id: String,
    pub module_id: String,
    pub a: f64,
    pub b: f64,
}

impl SimItem {
    pub fn params(&self) -> ItemParameters {
        ItemParameters::new(self.item_id.clone(), self.a, self.b)
    }
}

/// Random item bank: `a ~ U(a_min, a_max)`, `b ~ U(b_min, b_max)`, items split
/// into `n_modules` contiguous chapters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ItemBankSpec {
    pub n_items: usize,
    pub n_modules: usize,
    pub a_min: f64,
    pub a_max: f64,
    pub b_min: f64,
    pub b_max: f64,
}

impl Default for ItemBankSpec {
    fn default() -> Self {
        ItemBankSpec { n_items: 10, n_modules: 1, a_min: 0.5, a_max: 2.0, b_min: -2.0, b_max: 2.0 }
    }
}

pub fn sample_items(spec: &ItemBankSpec, seed: u64) -> Result<Vec<SimItem>, SimError> {
    if spec.n_items == 0 || spec.n_modules == 0 || spec.n_modules > spec.n_items {
        return Err(SimError::InvalidSpec("need 1 <= n_modules <= n_items".into()));
    }
    if !(spec.a_min <= spec.a_max && spec.b_min <= spec.b_max) {
        return Err(SimError::InvalidSpec("parameter ranges must be ordered".into()));
    }
    let width = id_width(spec.n_items);
    Ok((0..spec.n_items)
        .map(|i| {
            let mut rng = stream(seed, ITEM_DOMAIN, 0, i);
            let ua: f64 = rng.gen();
            let ub: f64 = rng.gen();
            SimItem {
                item_id: format!("ex{i:0width$}"),
                module_id: format!("ch{}", i * spec.n_modules / spec.n_items + 1),
                a: spec.a_min + (spec.a_max - spec.a_min) * ua,
                b: spec.b_min + (spec.b_max - spec.b_min) * ub,
            }
        })
        .collect())
}

/// Bernoulli responses from the 2PL curve. Each cell is missing with
/// probability `missing_rate`.
pub fn generate_responses(
    cohort: &[SimStudent],
    items: &[ItemParameters],
    seed: u64,
    missing_rate: f64,
) -> ResponseMatrix {
    let rows = par::map_range(cohort.len(), |s| {
        items
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut rng = stream(seed, RESPONSE_DOMAIN, s, i);
                let correct = rng.gen::<f64>() < icc_prob(p.a, p.b, cohort[s].theta);
                if missing_rate > 0.0 {
                    let mut miss = stream(seed, MISSING_DOMAIN, s, i);
                    if miss.gen::<f64>() < missing_rate {
                        return None;
                    }
                }
                Some(correct)
            })
            .collect::<Vec<_>>()
    });
    ResponseMatrix::new(
        "sim",
        items.iter().map(|p| p.item_id.clone()).collect(),
        cohort.iter().map(|s| s.student_id.clone()).collect(),
        rows.into_iter().flatten().collect(),
    )
    .expect("ids from cohort and items are unique")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttemptPolicy {
    pub max_attempts: u32,
    /// Probability of trying again after a wrong answer.
    pub retry_prob: f64,
    /// Probability of requesting a hint before each attempt.
    pub hint_propensity: f64,
}

impl Default for AttemptPolicy {
    fn default() -> Self {
        AttemptPolicy { max_attempts: 3, retry_prob: 0.7, hint_propensity: 0.2 }
    }
}

impl AttemptPolicy {
    fn validate(&self) -> Result<(), SimError> {
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        if self.max_attempts == 0 || self.max_attempts > MAX_ATTEMPTS_LIMIT {
            return Err(SimError::InvalidSpec(format!("max_attempts must be in 1..={MAX_ATTEMPTS_LIMIT}")));
        }
        if !unit(self.retry_prob) || !unit(self.hint_propensity) {
            return Err(SimError::InvalidSpec("probabilities must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct BehaviorSpec {
    pub default: AttemptPolicy,
    /// Overrides by item id.
    pub per_item: BTreeMap<String, AttemptPolicy>,
}

impl BehaviorSpec {
    pub fn uniform(policy: AttemptPolicy) -> Self {
        BehaviorSpec { default: policy, per_item: BTreeMap::new() }
    }

    pub fn policy(&self, item_id: &str) -> AttemptPolicy {
        self.per_item.get(item_id).copied().unwrap_or(self.default)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.default.validate()?;
        self.per_item.values().try_for_each(AttemptPolicy::validate)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedLog {
    /// Sorted by student, item, then sequence within the pair.
    pub events: Vec<InteractionEvent>,
    /// Tallies kept while generating, one per (student, item).
    pub tallies: Vec<StudentExerciseSummary>,
}

fn log_epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2020, 9, 1, 0, 0, 0).unwrap()
}

/// Every student works on every item. Before each attempt a hint is requested
/// with the hint propensity; each attempt is correct with the 2PL
/// probability; a correct attempt ends the item, a wrong one is retried with
/// the retry probability up to the attempt cap. Hints do not change the
/// probability of success.
pub fn generate_event_log(
    cohort: &[SimStudent],
    items: &[SimItem],
    behavior: &BehaviorSpec,
    seed: u64,
) -> Result<SimulatedLog, SimError> {
    behavior.validate()?;
    let epoch = log_epoch();
    let n_items = items.len();
    let per_student = par::map_range(cohort.len(), |s| {
        let student = &cohort[s];
        let mut events = Vec::new();
        let mut tallies = Vec::with_capacity(n_items);
        for (i, item) in items.iter().enumerate() {
            let policy = behavior.policy(&item.item_id);
            let p = icc_prob(item.a, item.b, student.theta);
            let mut rng = stream(seed, RESPONSE_DOMAIN, s, i);
            let pair_start = epoch + Duration::seconds(((s * n_items + i) as i64) * 3600);
            let mut seq = 0i64;
            let (mut attempts, mut correct, mut hints) = (0u64, 0u64, 0u64);
            for k in 1..=policy.max_attempts {
                let u_correct: f64 = rng.gen();
                let u_hint: f64 = rng.gen();
                if u_hint < policy.hint_propensity {
                    events.push(InteractionEvent::hint(
                        &student.student_id,
                        &item.item_id,
                        &item.module_id,
                        pair_start + Duration::seconds(seq),
                    ));
                    seq += 1;
                    hints += 1;
                }
                let ok = u_correct < p;
                events.push(InteractionEvent::attempt(
                    &student.student_id,
                    &item.item_id,
                    &item.module_id,
                    pair_start + Duration::seconds(seq),
                    ok,
                ));
                seq += 1;
                attempts += 1;
                correct += u64::from(ok);
                if ok || k == policy.max_attempts || rng.gen::<f64>() >= policy.retry_prob {
                    break;
                }
            }
            tallies.push(StudentExerciseSummary {
                student_id: student.student_id.clone(),
                exercise_id: item.item_id.clone(),
                module_id: item.module_id.clone(),
                n_attempts: attempts,
                n_correct: correct,
                n_wrong: attempts - correct,
                n_hints: hints,
                r: Some(correct as f64 / attempts as f64),
            });
        }
        (events, tallies)
    });
    let mut events = Vec::new();
    let mut tallies = Vec::new();
    for (mut e, mut t) in per_student {
        events.append(&mut e);
        tallies.append(&mut t);
    }
    Ok(SimulatedLog { events, tallies })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamRecovery {
    pub rmse: f64,
    /// Pearson correlation; `None` when either side has zero variance.
    pub correlation: Option<f64>,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryStats {
    pub n_items: usize,
    pub a: ParamRecovery,
    pub b: ParamRecovery,
}

fn param_recovery(truth: &[f64], fitted: &[f64]) -> ParamRecovery {
    let n = truth.len() as f64;
    let sq: f64 = truth.iter().zip(fitted).map(|(t, f)| (f - t) * (f - t)).sum();
    let max_abs_error = truth.iter().zip(fitted).map(|(t, f)| (f - t).abs()).fold(0.0, f64::max);
    let mt = truth.iter().sum::<f64>() / n;
    let mf = fitted.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (t, f) in truth.iter().zip(fitted) {
        sxy += (t - mt) * (f - mf);
        sxx += (t - mt) * (t - mt);
        syy += (f - mf) * (f - mf);
    }
    let correlation = (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0));
    ParamRecovery { rmse: (sq / n).sqrt(), correlation, max_abs_error }
}

/// Per-parameter recovery over aligned lists (entry i of each is the same item).
pub fn recovery_report(truth: &[ItemParameters], fitted: &[ItemParameters]) -> Result<RecoveryStats, SimError> {
    if truth.len() != fitted.len() || truth.is_empty() {
        return Err(SimError::LengthMismatch(truth.len(), fitted.len()));
    }
    let col = |v: &[ItemParameters], f: fn(&ItemParameters) -> f64| v.iter().map(f).collect::<Vec<_>>();
    Ok(RecoveryStats {
        n_items: truth.len(),
        a: param_recovery(&col(truth, |p| p.a), &col(fitted, |p| p.a)),
        b: param_recovery(&col(truth, |p| p.b), &col(fitted, |p| p.b)),
    })
}

/// A complete simulation: cohort, item bank and behavior, all from one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub seed: u64,
    pub cohort: CohortScenario,
    #[serde(default)]
    pub items: ItemsScenario,
    #[serde(default)]
    pub behavior: BehaviorSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortScenario {
    pub n_students: usize,
    #[serde(default)]
    pub ability_mean: f64,
    #[serde(default = "one")]
    pub ability_sd: f64,
}

/// Either a random bank or an explicit list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ItemsScenario {
    List { list: Vec<SimItem> },
    Bank(ItemBankSpec),
}

impl Default for ItemsScenario {
    fn default() -> Self {
        ItemsScenario::Bank(ItemBankSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOutput {
    pub cohort: Vec<SimStudent>,
    pub items: Vec<SimItem>,
    pub log: SimulatedLog,
}

impl Scenario {
    pub fn cohort_spec(&self) -> CohortSpec {
        CohortSpec {
            n_students: self.cohort.n_students,
            ability_mean: self.cohort.ability_mean,
            ability_sd: self.cohort.ability_sd,
            seed: self.seed,
        }
    }

    pub fn run(&self) -> Result<SimulationOutput, SimError> {
        let cohort = sample_cohort(&self.cohort_spec())?;
        let items = match &self.items {
            ItemsScenario::Bank(bank) => sample_items(bank, self.seed)?,
            ItemsScenario::List { list } => {
                if list.is_empty() {
                    return Err(SimError::InvalidSpec("item list is empty".into()));
                }
                let mut ids: Vec<&str> = list.iter().map(|i| i.item_id.as_str()).collect();
                ids.sort_unstable();
                if ids.windows(2).any(|w| w[0] == w[1]) {
                    return Err(SimError::InvalidSpec("duplicate item ids".into()));
                }
                list.clone()
            }
        };
        let log = generate_event_log(&cohort, &items, &self.behavior, self.seed)?;
        Ok(SimulationOutput { cohort, items, log })
    }
}
