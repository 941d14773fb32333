//! The guardrail core: score an instance and its protected-attribute flip,
//! and when the rounded predictions disagree, balance the original score
//! against model predictions on the nearest synthetic instances from the
//! opposite protected group.
//!
//! The nearest-neighbor distance is Gower-style: squared standardized
//! difference for numeric columns plus a 0/1 mismatch for categorical
//! columns, with the protected and label columns excluded. Rounding is
//! half-up at 0.5 everywhere. When the trigger does not fire the original
//! score passes through bit-identically.

use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{PredictError, Predictor};
use crate::dataset::{ColumnKind, Dataset, Instance, Schema, Standardizer, Value};
use crate::generator::SyntheticPool;
use crate::metrics::round_half_up;

#[derive(Debug, Error)]
pub enum GuardError {
    #[error("augmentation count must be at least 1")]
    ZeroAugmentations,
    #[error("aggregation weight {0} is not in [0, 1]")]
    BadWeight(f64),
    #[error("pool holds {pool} members, fewer than the {t} requested neighbors")]
    PoolTooSmall { pool: usize, t: usize },
    #[error("pool is conditioned on the instance's own protected value {0}")]
    PoolSameGroup(u8),
    #[error("pools must cover both protected values (got {0} and {1})")]
    PoolsNotOpposite(u8, u8),
    #[error("pools use different schemas")]
    PoolSchemaMismatch,
    #[error("model returned score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed dump file: {0}")]
    Csv(#[from] csv::Error),
    #[error("dump row {row}: cannot parse field `{field}`")]
    DumpParse { row: usize, field: &'static str },
}

/// How original and augmentation scores combine into the final score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Aggregation {
    /// weight * original + (1 - weight) * mean(augmentation scores).
    /// A weight of 0.5 halves the original against the augmentation mean.
    WeightedAverage { weight: f64 },
    /// Majority of the rounded scores in {original} + augmentations; ties
    /// fall back to the original score.
    MajorityVote,
}

impl Default for Aggregation {
    fn default() -> Self {
        Aggregation::WeightedAverage { weight: 0.5 }
    }
}

/// Guardrail settings: number of augmentations and the aggregation rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuardrailConfig {
    pub t_augment: usize,
    pub aggregation: Aggregation,
}

impl GuardrailConfig {
    pub fn new(t_augment: usize) -> Result<Self, GuardError> {
        let cfg = GuardrailConfig {
            t_augment,
            aggregation: Aggregation::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_weight(t_augment: usize, weight: f64) -> Result<Self, GuardError> {
        let cfg = GuardrailConfig {
            t_augment,
            aggregation: Aggregation::WeightedAverage { weight },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), GuardError> {
        if self.t_augment == 0 {
            return Err(GuardError::ZeroAugmentations);
        }
        if let Aggregation::WeightedAverage { weight } = self.aggregation {
            if !(0.0..=1.0).contains(&weight) {
                return Err(GuardError::BadWeight(weight));
            }
        }
        Ok(())
    }
}

/// Everything observed while guarding one instance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GuardedPrediction {
    pub original_score: f64,
    pub opposite_score: f64,
    pub triggered: bool,
    /// Model scores of the selected augmentations; empty when not triggered.
    pub tta_scores: Vec<f64>,
    pub final_score: f64,
    /// Whether the rounded final prediction differs from the rounded
    /// original.
    pub flipped: bool,
}

/// The two conditioned pools the guardrail selects augmentations from.
#[derive(Debug, Clone, Serialize)]
pub struct PoolPair {
    unprivileged: SyntheticPool,
    privileged: SyntheticPool,
}

impl PoolPair {
    pub fn new(a: SyntheticPool, b: SyntheticPool) -> Result<Self, GuardError> {
        if a.schema() != b.schema() {
            return Err(GuardError::PoolSchemaMismatch);
        }
        match (a.pa_value(), b.pa_value()) {
            (0, 1) => Ok(PoolPair {
                unprivileged: a,
                privileged: b,
            }),
            (1, 0) => Ok(PoolPair {
                unprivileged: b,
                privileged: a,
            }),
            (x, y) => Err(GuardError::PoolsNotOpposite(x, y)),
        }
    }

    pub fn for_group(&self, pa_value: u8) -> &SyntheticPool {
        if pa_value == 1 {
            &self.privileged
        } else {
            &self.unprivileged
        }
    }

    /// Pool conditioned on the value opposite to the given one.
    pub fn opposite_of(&self, pa_value: u8) -> &SyntheticPool {
        self.for_group(1 - pa_value)
    }
}

/// Copy of the instance with the protected attribute inverted and every
/// other cell bit-identical.
pub fn flip_protected(x: &Instance, schema: &Schema) -> Instance {
    let flipped = 1 - schema.pa_value(x);
    x.with_value(
        schema.protected_col(),
        Value::Cat(schema.protected_category(flipped)),
    )
}

/// True iff the two scores round to different classes under half-up
/// rounding, the signal that the decision may hinge on the protected
/// attribute alone.
pub fn detect_bias(y_hat: f64, y_hat_opposite: f64) -> bool {
    round_half_up(y_hat) != round_half_up(y_hat_opposite)
}

fn mixed_distance(schema: &Schema, std: &Standardizer, a: &Instance, b: &Instance) -> f64 {
    let mut sum = 0.0;
    for (col, column) in schema.columns().iter().enumerate() {
        if col == schema.protected_col() || col == schema.label_col() {
            continue;
        }
        match (&column.kind, a.value(col), b.value(col)) {
            (ColumnKind::Numeric, Value::Num(x), Value::Num(y)) => {
                let zx = std.z(col, *x).unwrap_or(0.0);
                let zy = std.z(col, *y).unwrap_or(0.0);
                sum += (zx - zy) * (zx - zy);
            }
            (ColumnKind::Categorical(_), Value::Cat(x), Value::Cat(y)) => {
                sum += f64::from(x != y);
            }
            _ => {}
        }
    }
    sum.sqrt()
}

/// The `t` pool members closest to `x` under the standardized mixed-type
/// distance, ties broken by ascending pool index. The selected members come
/// back in ascending pool-index order, so requesting the whole pool returns
/// it as stored. The pool must be conditioned on the protected value
/// opposite to `x`.
pub fn nearest_neighbors<'p>(
    x: &Instance,
    pool: &'p SyntheticPool,
    t: usize,
    std: &Standardizer,
) -> Result<Vec<&'p Instance>, GuardError> {
    let schema = pool.schema();
    if pool.pa_value() == schema.pa_value(x) {
        return Err(GuardError::PoolSameGroup(pool.pa_value()));
    }
    if pool.len() < t {
        return Err(GuardError::PoolTooSmall {
            pool: pool.len(),
            t,
        });
    }
    let mut order: Vec<(f64, usize)> = pool
        .members()
        .iter()
        .enumerate()
        .map(|(i, member)| (mixed_distance(schema, std, x, member), i))
        .collect();
    order.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .expect("distances are finite")
            .then(a.1.cmp(&b.1))
    });
    let mut picked: Vec<usize> = order[..t].iter().map(|&(_, i)| i).collect();
    picked.sort_unstable();
    Ok(picked.iter().map(|&i| &pool.members()[i]).collect())
}

/// Combines the original score with the augmentation scores. An empty
/// augmentation set returns the original score unchanged. The weighted
/// average is clamped into the convex hull of its inputs so float rounding
/// can never push the result outside.
pub fn aggregate(y_hat: f64, tta_scores: &[f64], aggregation: &Aggregation) -> f64 {
    if tta_scores.is_empty() {
        return y_hat;
    }
    match aggregation {
        Aggregation::WeightedAverage { weight } => {
            let mean = tta_scores.iter().sum::<f64>() / tta_scores.len() as f64;
            let raw = weight * y_hat + (1.0 - weight) * mean;
            let lo = tta_scores.iter().copied().fold(y_hat, f64::min);
            let hi = tta_scores.iter().copied().fold(y_hat, f64::max);
            raw.clamp(lo, hi)
        }
        Aggregation::MajorityVote => {
            let mut ones = u32::from(round_half_up(y_hat) == 1);
            let mut zeros = u32::from(round_half_up(y_hat) == 0);
            for &s in tta_scores {
                if round_half_up(s) == 1 {
                    ones += 1;
                } else {
                    zeros += 1;
                }
            }
            match ones.cmp(&zeros) {
                std::cmp::Ordering::Greater => 1.0,
                std::cmp::Ordering::Less => 0.0,
                std::cmp::Ordering::Equal => y_hat,
            }
        }
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct PhaseTimer {
    scoring: Duration,
    neighbor_search: Duration,
    aggregation: Duration,
}

fn checked_score<P: Predictor + ?Sized>(
    model: &P,
    x: &Instance,
    timer: &mut PhaseTimer,
) -> Result<f64, GuardError> {
    let start = Instant::now();
    let s = model.score(x)?;
    timer.scoring += start.elapsed();
    if !(0.0..=1.0).contains(&s) {
        return Err(GuardError::ScoreOutOfRange(s));
    }
    Ok(s)
}

fn guard_one<P: Predictor + ?Sized>(
    model: &P,
    x: &Instance,
    pools: &PoolPair,
    cfg: &GuardrailConfig,
    std: &Standardizer,
    timer: &mut PhaseTimer,
) -> Result<GuardedPrediction, GuardError> {
    let schema = pools.for_group(0).schema();
    let original_score = checked_score(model, x, timer)?;
    let opposite = flip_protected(x, schema);
    let opposite_score = checked_score(model, &opposite, timer)?;
    let triggered = detect_bias(original_score, opposite_score);

    let tta_scores = if triggered {
        let pool = pools.opposite_of(schema.pa_value(x));
        let start = Instant::now();
        let neighbors = nearest_neighbors(x, pool, cfg.t_augment, std)?;
        timer.neighbor_search += start.elapsed();
        let mut scores = Vec::with_capacity(neighbors.len());
        for n in neighbors {
            scores.push(checked_score(model, n, timer)?);
        }
        scores
    } else {
        Vec::new()
    };

    let start = Instant::now();
    let final_score = aggregate(original_score, &tta_scores, &cfg.aggregation);
    timer.aggregation += start.elapsed();

    Ok(GuardedPrediction {
        original_score,
        opposite_score,
        triggered,
        tta_scores,
        final_score,
        flipped: round_half_up(final_score) != round_half_up(original_score),
    })
}

/// Guards a single instance: flip, score both versions, trigger check and,
/// if triggered, nearest-neighbor augmentation and aggregation. Pure in its
/// inputs.
pub fn guard_predict<P: Predictor + ?Sized>(
    model: &P,
    x: &Instance,
    pools: &PoolPair,
    cfg: &GuardrailConfig,
    std: &Standardizer,
) -> Result<GuardedPrediction, GuardError> {
    cfg.validate()?;
    let mut timer = PhaseTimer::default();
    guard_one(model, x, pools, cfg, std, &mut timer)
}

/// Wall-clock accounting for a guarded batch.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct BatchStats {
    pub triggered: usize,
    pub flips: usize,
    pub wall: Duration,
    pub scoring: Duration,
    pub neighbor_search: Duration,
    pub aggregation: Duration,
}

/// Guards every row of a test set in order. Row i of the output is exactly
/// `guard_predict` on row i; results do not depend on evaluation order.
pub fn guard_batch<P: Predictor + ?Sized>(
    model: &P,
    test: &Dataset,
    pools: &PoolPair,
    cfg: &GuardrailConfig,
    std: &Standardizer,
) -> Result<(Vec<GuardedPrediction>, BatchStats), GuardError> {
    cfg.validate()?;
    let start = Instant::now();
    let mut timer = PhaseTimer::default();
    let mut predictions = Vec::with_capacity(test.len());
    for x in test.rows() {
        predictions.push(guard_one(model, x, pools, cfg, std, &mut timer)?);
    }
    let stats = BatchStats {
        triggered: predictions.iter().filter(|p| p.triggered).count(),
        flips: predictions.iter().filter(|p| p.flipped).count(),
        wall: start.elapsed(),
        scoring: timer.scoring,
        neighbor_search: timer.neighbor_search,
        aggregation: timer.aggregation,
    };
    Ok((predictions, stats))
}

/// One row of a guarded-prediction dump file.
#[derive(Debug, Clone, PartialEq)]
pub struct DumpRow {
    pub row_id: u64,
    pub original_score: f64,
    pub opposite_score: f64,
    pub triggered: bool,
    pub final_score: f64,
    pub flipped: bool,
}

pub fn write_guarded_dump(
    path: impl AsRef<Path>,
    predictions: &[GuardedPrediction],
) -> Result<(), GuardError> {
    let mut wtr = csv::Writer::from_path(path.as_ref())?;
    wtr.write_record([
        "row_id",
        "original_score",
        "opposite_score",
        "triggered",
        "final_score",
        "flipped",
    ])?;
    for (i, p) in predictions.iter().enumerate() {
        wtr.write_record([
            i.to_string(),
            format!("{}", p.original_score),
            format!("{}", p.opposite_score),
            p.triggered.to_string(),
            format!("{}", p.final_score),
            p.flipped.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_guarded_dump(path: impl AsRef<Path>) -> Result<Vec<DumpRow>, GuardError> {
    let mut rdr = csv::Reader::from_path(path.as_ref())?;
    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let field = |idx: usize, name: &'static str| {
            record
                .get(idx)
                .ok_or(GuardError::DumpParse { row, field: name })
        };
        let parse_f64 = |idx: usize, name: &'static str| -> Result<f64, GuardError> {
            field(idx, name)?
                .parse()
                .map_err(|_| GuardError::DumpParse { row, field: name })
        };
        let parse_bool = |idx: usize, name: &'static str| -> Result<bool, GuardError> {
            field(idx, name)?
                .parse()
                .map_err(|_| GuardError::DumpParse { row, field: name })
        };
        rows.push(DumpRow {
            row_id: field(0, "row_id")?
                .parse()
                .map_err(|_| GuardError::DumpParse {
                    row,
                    field: "row_id",
                })?,
            original_score: parse_f64(1, "original_score")?,
            opposite_score: parse_f64(2, "opposite_score")?,
            triggered: parse_bool(3, "triggered")?,
            final_score: parse_f64(4, "final_score")?,
            flipped: parse_bool(5, "flipped")?,
        });
    }
    Ok(rows)
}
