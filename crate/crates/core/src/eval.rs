//! Top-N evaluation: HR@n and MRR over sampled candidate sets.
//!
//! Each group test case ranks its held-out item against a seeded sample of
//! non-interacted negatives. Every method requested in one call ranks over
//! the identical candidate list, so method comparisons are never confounded
//! by sampling. Cases are scored independently (in parallel when a rayon
//! pool is configured) and merged in case order, which keeps reports
//! bitwise reproducible at any thread count.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Entity, InteractionStore, TestCase};
use crate::error::{Error, Result};
use crate::model::{Forward, ModelParameters, ScoreMode};
use crate::seeds;

/// Ranking methods: the full model, its two ablations, and the two static
/// aggregation baselines run through the trained user tower.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    /// Full model: attentive member blend plus encoder group vector.
    Siagr,
    /// Encoder group vector only.
    SiagrG,
    /// Attentive member blend only.
    SiagrM,
    /// Mean of member user-tower scores.
    NcfAvg,
    /// Minimum (least misery) of member user-tower scores.
    NcfLm,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Siagr,
        Method::SiagrG,
        Method::SiagrM,
        Method::NcfAvg,
        Method::NcfLm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Siagr => "siagr",
            Method::SiagrG => "siagr-g",
            Method::SiagrM => "siagr-m",
            Method::NcfAvg => "ncf-avg",
            Method::NcfLm => "ncf-lm",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::Invalid(format!(
                    "unknown method {:?}; expected one of siagr, siagr-g, siagr-m, ncf-avg, ncf-lm",
                    s
                ))
            })
    }
}

/// Static member-score aggregation strategies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    /// Average member score.
    Avg,
    /// Least misery: minimum member score.
    Lm,
}

/// Metrics for one method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    /// n → fraction of test cases whose held-out item ranked within top n.
    pub hr: BTreeMap<usize, f64>,
    pub mrr: f64,
}

/// Evaluation results for one model over one test set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub methods: BTreeMap<String, MethodMetrics>,
    /// Group test cases actually ranked.
    pub test_cases: usize,
    /// Cases dropped for lack of enough non-interacted candidate items.
    pub skipped: usize,
    pub eval_negatives: usize,
    pub seed: u64,
    /// SHA-256 of the model configuration the scores came from.
    pub config_hash: String,
}

impl EvalReport {
    /// Writes the report as pretty JSON.
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut body = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Invalid(format!("report serialization failed: {}", e)))?;
        body.push('\n');
        std::fs::write(path, body).map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// Writes a flat `method,metric,n,value` CSV for plotting.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut body = String::from("method,metric,n,value\n");
        for (name, metrics) in &self.methods {
            for (n, value) in &metrics.hr {
                body.push_str(&format!("{},hr,{},{}\n", name, n, value));
            }
            body.push_str(&format!("{},mrr,,{}\n", name, metrics.mrr));
        }
        std::fs::write(path, body).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// Rank of the held-out item among the scored candidates: 1 plus the number
/// of strictly higher scores, plus the number of equal scores on smaller
/// item ids (deterministic tie-break).
pub fn rank_candidates(scores: &BTreeMap<usize, f64>, held_out: usize) -> Result<usize> {
    let target = *scores.get(&held_out).ok_or_else(|| {
        Error::Invalid(format!(
            "held-out item {} is not among the candidates",
            held_out
        ))
    })?;
    let mut rank = 1;
    for (&item, &score) in scores {
        if item == held_out {
            continue;
        }
        if score > target || (score == target && item < held_out) {
            rank += 1;
        }
    }
    Ok(rank)
}

/// Fraction of ranks within the top n.
pub fn hit_ratio(ranks: &[usize], n: usize) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::Invalid("hit ratio over an empty rank list".into()));
    }
    let hits = ranks.iter().filter(|&&r| r <= n).count();
    Ok(hits as f64 / ranks.len() as f64)
}

/// Mean reciprocal rank.
pub fn mrr(ranks: &[usize]) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::Invalid("MRR over an empty rank list".into()));
    }
    let sum: f64 = ranks.iter().map(|&r| 1.0 / r as f64).sum();
    Ok(sum / ranks.len() as f64)
}

/// Member user-tower scores for one (group, item) pair, in member order.
fn member_scores(forward: &mut Forward, members: &[usize], item: usize) -> Result<Vec<f64>> {
    members
        .iter()
        .map(|&u| {
            let var = forward.score_user(u, item)?;
            Ok(forward.tape.scalar_value(var))
        })
        .collect()
}

fn aggregate_scores(scores: &[f64], strategy: Strategy) -> f64 {
    match strategy {
        Strategy::Avg => scores.iter().sum::<f64>() / scores.len() as f64,
        Strategy::Lm => scores.iter().copied().fold(f64::INFINITY, f64::min),
    }
}

/// Static-baseline score: the member user-tower scores aggregated by mean
/// (AVG) or minimum (LM).
pub fn score_baseline(
    forward: &mut Forward,
    members: &[usize],
    item: usize,
    strategy: Strategy,
) -> Result<f64> {
    if members.is_empty() {
        return Err(Error::Invalid("baseline score for an empty group".into()));
    }
    let scores = member_scores(forward, members, item)?;
    Ok(aggregate_scores(&scores, strategy))
}

/// Candidate salt mirrors the split's entity streams: groups on even salts,
/// users on odd, so the two never collide for one base seed.
fn candidate_salt(entity: Entity) -> u64 {
    match entity {
        Entity::Group(g) => g as u64 * 2,
        Entity::User(u) => u as u64 * 2 + 1,
    }
}

/// Draws the candidate list for one test case: `negatives` distinct
/// non-interacted items (never the held-out item) plus the held-out item.
/// Returns `None` when the entity lacks enough non-interacted items.
fn draw_candidates(
    store: &InteractionStore,
    case: &TestCase,
    negatives: usize,
    seed: u64,
) -> Result<Option<Vec<usize>>> {
    let positives = match case.entity {
        Entity::User(u) => store.user_positives(u),
        Entity::Group(g) => store.group_positives(g),
    };
    let eligible = store.n_items() - positives.len();
    // The held-out item is itself non-interacted in the training store, so
    // drawing `negatives` items that avoid it needs one spare.
    if eligible < negatives + 1 {
        return Ok(None);
    }
    let drawn = store.sample_negatives(
        case.entity,
        negatives + 1,
        seeds::mix(seed, candidate_salt(case.entity)),
    )?;
    let mut candidates: Vec<usize> = drawn
        .into_iter()
        .filter(|&item| item != case.held_out)
        .collect();
    candidates.truncate(negatives);
    candidates.push(case.held_out);
    Ok(Some(candidates))
}

/// Scores all candidates for one case under every requested method and
/// returns the held-out rank per method, in `methods` order.
fn rank_case(
    params: &ModelParameters,
    store: &InteractionStore,
    group: usize,
    held_out: usize,
    candidates: &[usize],
    methods: &[Method],
) -> Result<Vec<usize>> {
    let members = store.members(group);
    let mut forward = Forward::new(params);
    let mut encoder_cache = None;
    let need_member_scores = methods
        .iter()
        .any(|m| matches!(m, Method::NcfAvg | Method::NcfLm));
    let mut score_maps: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); methods.len()];
    for &item in candidates {
        let member = if need_member_scores {
            member_scores(&mut forward, members, item)?
        } else {
            Vec::new()
        };
        for (slot, method) in methods.iter().enumerate() {
            let score = match method {
                Method::Siagr | Method::SiagrG | Method::SiagrM => {
                    let mode = match method {
                        Method::Siagr => ScoreMode::Full,
                        Method::SiagrG => ScoreMode::EncoderOnly,
                        _ => ScoreMode::MavenOnly,
                    };
                    let var =
                        forward.score_group_cached(members, item, mode, &mut encoder_cache)?;
                    forward.tape.scalar_value(var)
                }
                Method::NcfAvg => aggregate_scores(&member, Strategy::Avg),
                Method::NcfLm => aggregate_scores(&member, Strategy::Lm),
            };
            score_maps[slot].insert(item, score);
        }
    }
    methods
        .iter()
        .enumerate()
        .map(|(slot, _)| rank_candidates(&score_maps[slot], held_out))
        .collect()
}

/// Evaluates the model on the group test cases.
///
/// Each case draws `eval_negatives` seeded negatives shared by all methods,
/// ranks the held-out item, and aggregates HR@n (for each n in `ns`) and
/// MRR per method. Cases whose entity lacks enough non-interacted items are
/// skipped and counted.
pub fn evaluate(
    params: &ModelParameters,
    store: &InteractionStore,
    cases: &[TestCase],
    methods: &[Method],
    eval_negatives: usize,
    ns: &[usize],
    seed: u64,
) -> Result<EvalReport> {
    if methods.is_empty() {
        return Err(Error::Invalid("no evaluation methods requested".into()));
    }
    if eval_negatives == 0 {
        return Err(Error::Invalid("eval_negatives must be positive".into()));
    }
    if ns.is_empty() {
        return Err(Error::Invalid("no top-n cutoffs requested".into()));
    }
    let group_cases: Vec<&TestCase> = cases
        .iter()
        .filter(|c| matches!(c.entity, Entity::Group(_)))
        .collect();
    if group_cases.is_empty() {
        return Err(Error::Invalid("test set contains no group cases".into()));
    }
    let per_case: Vec<Option<Vec<usize>>> = group_cases
        .par_iter()
        .map(|case| -> Result<Option<Vec<usize>>> {
            let group = match case.entity {
                Entity::Group(g) => g,
                Entity::User(_) => unreachable!("user cases filtered above"),
            };
            match draw_candidates(store, case, eval_negatives, seed)? {
                None => Ok(None),
                Some(candidates) => Ok(Some(rank_case(
                    params,
                    store,
                    group,
                    case.held_out,
                    &candidates,
                    methods,
                )?)),
            }
        })
        .collect::<Result<_>>()?;
    let skipped = per_case.iter().filter(|r| r.is_none()).count();
    let ranked: Vec<&Vec<usize>> = per_case.iter().flatten().collect();
    if ranked.is_empty() {
        return Err(Error::Invalid(format!(
            "all {} group test cases were skipped for lack of candidates",
            skipped
        )));
    }
    if skipped > 0 {
        log::warn!(
            "skipped {} of {} group test cases with too few candidate items",
            skipped,
            group_cases.len()
        );
    }
    let mut method_metrics = BTreeMap::new();
    for (slot, method) in methods.iter().enumerate() {
        let ranks: Vec<usize> = ranked.iter().map(|r| r[slot]).collect();
        let mut hr = BTreeMap::new();
        for &n in ns {
            hr.insert(n, hit_ratio(&ranks, n)?);
        }
        method_metrics.insert(
            method.name().to_string(),
            MethodMetrics {
                hr,
                mrr: mrr(&ranks)?,
            },
        );
    }
    Ok(EvalReport {
        methods: method_metrics,
        test_cases: ranked.len(),
        skipped,
        eval_negatives,
        seed,
        config_hash: config_hash(params),
    })
}

/// SHA-256 (hex) of the model configuration's JSON serialization.
pub fn config_hash(params: &ModelParameters) -> String {
    let body = serde_json::to_string(params.config()).expect("config serializes");
    let digest = Sha256::digest(body.as_bytes());
    let mut hex = String::with_capacity(64);
    for byte in digest {
        hex.push_str(&format!("{:02x}", byte));
    }
    hex
}
