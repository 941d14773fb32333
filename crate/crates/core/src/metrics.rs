//! Fairness and performance metrics with explicit handling of undefined
//! rates.
//!
//! Equalized odds is the average of the absolute true-positive-rate and
//! false-positive-rate gaps between the privileged and unprivileged groups.
//! Disparate impact is the ratio of positive-decision rates, unprivileged
//! over privileged. A rate whose denominator is zero never silently
//! becomes 0 or 1; it surfaces as [`MetricValue::Undefined`] carrying which
//! group and rate failed, and fold summaries track how many folds were
//! defined.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("input vectors have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("entry {index} is not binary (found {found})")]
    NotBinary { index: usize, found: u8 },
}

/// Half-up rounding of a probability: 1 iff p >= 0.5.
pub fn round_half_up(p: f64) -> u8 {
    u8::from(p >= 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Group {
    Unprivileged,
    Privileged,
}

impl std::fmt::Display for Group {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Group::Unprivileged => write!(f, "unprivileged"),
            Group::Privileged => write!(f, "privileged"),
        }
    }
}

/// Why a metric could not be computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UndefinedReason {
    EmptyGroup(Group),
    NoPositives(Group),
    NoNegatives(Group),
    ZeroPositiveRate(Group),
}

impl std::fmt::Display for UndefinedReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            UndefinedReason::EmptyGroup(g) => write!(f, "{g} group is empty"),
            UndefinedReason::NoPositives(g) => {
                write!(f, "TPR undefined: no ground-truth positives in {g} group")
            }
            UndefinedReason::NoNegatives(g) => {
                write!(f, "FPR undefined: no ground-truth negatives in {g} group")
            }
            UndefinedReason::ZeroPositiveRate(g) => {
                write!(f, "DI undefined: zero positive rate in {g} group")
            }
        }
    }
}

/// A metric that is either a number or explicitly undefined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MetricValue {
    Defined(f64),
    Undefined(UndefinedReason),
}

impl MetricValue {
    pub fn defined(&self) -> Option<f64> {
        match self {
            MetricValue::Defined(v) => Some(*v),
            MetricValue::Undefined(_) => None,
        }
    }

    pub fn expect_defined(&self) -> f64 {
        match self {
            MetricValue::Defined(v) => *v,
            MetricValue::Undefined(r) => panic!("metric undefined: {r}"),
        }
    }
}

/// 2x2 confusion counts for one group.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub true_positives: u64,
    pub false_positives: u64,
    pub true_negatives: u64,
    pub false_negatives: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.true_positives + self.false_positives + self.true_negatives + self.false_negatives
    }

    pub fn positives(&self) -> u64 {
        self.true_positives + self.false_negatives
    }

    pub fn negatives(&self) -> u64 {
        self.false_positives + self.true_negatives
    }
}

/// Confusion counts split by protected-attribute value.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupConfusion {
    pub unprivileged: ConfusionCounts,
    pub privileged: ConfusionCounts,
}

impl GroupConfusion {
    pub fn group(&self, g: Group) -> &ConfusionCounts {
        match g {
            Group::Unprivileged => &self.unprivileged,
            Group::Privileged => &self.privileged,
        }
    }
}

fn check_aligned(a: usize, b: usize) -> Result<(), MetricError> {
    if a != b {
        return Err(MetricError::LengthMismatch(a, b));
    }
    if a == 0 {
        return Err(MetricError::Empty);
    }
    Ok(())
}

fn check_binary(v: &[u8]) -> Result<(), MetricError> {
    for (index, &x) in v.iter().enumerate() {
        if x > 1 {
            return Err(MetricError::NotBinary { index, found: x });
        }
    }
    Ok(())
}

pub fn confusion_by_group(
    labels: &[u8],
    predictions: &[u8],
    pa_values: &[u8],
) -> Result<GroupConfusion, MetricError> {
    check_aligned(labels.len(), predictions.len())?;
    check_aligned(labels.len(), pa_values.len())?;
    check_binary(labels)?;
    check_binary(predictions)?;
    check_binary(pa_values)?;
    let mut gc = GroupConfusion::default();
    for i in 0..labels.len() {
        let counts = if pa_values[i] == 1 {
            &mut gc.privileged
        } else {
            &mut gc.unprivileged
        };
        match (labels[i], predictions[i]) {
            (1, 1) => counts.true_positives += 1,
            (1, 0) => counts.false_negatives += 1,
            (0, 1) => counts.false_positives += 1,
            (0, 0) => counts.true_negatives += 1,
            _ => unreachable!("validated binary"),
        }
    }
    Ok(gc)
}

/// Equalized-odds gaps: eod is exactly (delta_tpr + delta_fpr) / 2 whenever
/// both gaps are defined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OddsGaps {
    pub eod: MetricValue,
    pub delta_tpr: MetricValue,
    pub delta_fpr: MetricValue,
}

pub fn equalized_odds(gc: &GroupConfusion) -> OddsGaps {
    let rate = |num: u64, den: u64| num as f64 / den as f64;
    let tpr = |g: Group| {
        let c = gc.group(g);
        if c.positives() == 0 {
            MetricValue::Undefined(UndefinedReason::NoPositives(g))
        } else {
            MetricValue::Defined(rate(c.true_positives, c.positives()))
        }
    };
    let fpr = |g: Group| {
        let c = gc.group(g);
        if c.negatives() == 0 {
            MetricValue::Undefined(UndefinedReason::NoNegatives(g))
        } else {
            MetricValue::Defined(rate(c.false_positives, c.negatives()))
        }
    };
    let gap = |a: MetricValue, b: MetricValue| match (a, b) {
        (MetricValue::Defined(x), MetricValue::Defined(y)) => MetricValue::Defined((x - y).abs()),
        (MetricValue::Undefined(r), _) | (_, MetricValue::Undefined(r)) => {
            MetricValue::Undefined(r)
        }
    };
    let delta_tpr = gap(tpr(Group::Privileged), tpr(Group::Unprivileged));
    let delta_fpr = gap(fpr(Group::Privileged), fpr(Group::Unprivileged));
    let eod = match (delta_tpr, delta_fpr) {
        (MetricValue::Defined(t), MetricValue::Defined(f)) => {
            MetricValue::Defined(0.5 * (t + f))
        }
        (MetricValue::Undefined(r), _) | (_, MetricValue::Undefined(r)) => {
            MetricValue::Undefined(r)
        }
    };
    OddsGaps {
        eod,
        delta_tpr,
        delta_fpr,
    }
}

/// Ratio of positive-decision rates, unprivileged over privileged. When both
/// rates are zero the groups receive identical treatment and DI is 1.
pub fn disparate_impact(
    predictions: &[u8],
    pa_values: &[u8],
) -> Result<MetricValue, MetricError> {
    check_aligned(predictions.len(), pa_values.len())?;
    check_binary(predictions)?;
    check_binary(pa_values)?;
    let mut pos = [0u64; 2];
    let mut n = [0u64; 2];
    for i in 0..predictions.len() {
        let g = pa_values[i] as usize;
        n[g] += 1;
        pos[g] += u64::from(predictions[i]);
    }
    if n[0] == 0 {
        return Ok(MetricValue::Undefined(UndefinedReason::EmptyGroup(
            Group::Unprivileged,
        )));
    }
    if n[1] == 0 {
        return Ok(MetricValue::Undefined(UndefinedReason::EmptyGroup(
            Group::Privileged,
        )));
    }
    let unpriv_rate = pos[0] as f64 / n[0] as f64;
    let priv_rate = pos[1] as f64 / n[1] as f64;
    if priv_rate == 0.0 {
        if unpriv_rate == 0.0 {
            return Ok(MetricValue::Defined(1.0));
        }
        return Ok(MetricValue::Undefined(UndefinedReason::ZeroPositiveRate(
            Group::Privileged,
        )));
    }
    Ok(MetricValue::Defined(unpriv_rate / priv_rate))
}

pub fn accuracy(labels: &[u8], predictions: &[u8]) -> Result<f64, MetricError> {
    check_aligned(labels.len(), predictions.len())?;
    check_binary(labels)?;
    check_binary(predictions)?;
    let correct = labels
        .iter()
        .zip(predictions)
        .filter(|(y, p)| y == p)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Number of positions where two rounded prediction vectors differ.
pub fn flips(base: &[u8], other: &[u8]) -> Result<u64, MetricError> {
    if base.len() != other.len() {
        return Err(MetricError::LengthMismatch(base.len(), other.len()));
    }
    check_binary(base)?;
    check_binary(other)?;
    Ok(base.iter().zip(other).filter(|(a, b)| a != b).count() as u64)
}

/// All per-fold metrics for one method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricBundle {
    pub accuracy: f64,
    pub eod: MetricValue,
    pub delta_tpr: MetricValue,
    pub delta_fpr: MetricValue,
    pub di: MetricValue,
    pub flips: u64,
}

/// Computes the full bundle for one method on one fold. `base_rounded` is the
/// unmitigated prediction vector the flips count is measured against.
pub fn compute_bundle(
    labels: &[u8],
    rounded: &[u8],
    pa_values: &[u8],
    base_rounded: &[u8],
) -> Result<MetricBundle, MetricError> {
    let gc = confusion_by_group(labels, rounded, pa_values)?;
    let gaps = equalized_odds(&gc);
    Ok(MetricBundle {
        accuracy: accuracy(labels, rounded)?,
        eod: gaps.eod,
        delta_tpr: gaps.delta_tpr,
        delta_fpr: gaps.delta_fpr,
        di: disparate_impact(rounded, pa_values)?,
        flips: flips(base_rounded, rounded)?,
    })
}

/// Mean and population standard deviation over the folds where the metric was
/// defined. `defined` of 0 leaves mean and std unset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStat {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub defined: usize,
    pub total: usize,
}

impl SummaryStat {
    fn over(values: &[MetricValue]) -> SummaryStat {
        let defined: Vec<f64> = values.iter().filter_map(|v| v.defined()).collect();
        if defined.is_empty() {
            return SummaryStat {
                mean: None,
                std: None,
                defined: 0,
                total: values.len(),
            };
        }
        let n = defined.len() as f64;
        let mean = defined.iter().sum::<f64>() / n;
        let var = defined.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        SummaryStat {
            mean: Some(mean),
            std: Some(var.sqrt()),
            defined: defined.len(),
            total: values.len(),
        }
    }

    pub fn mean_or_nan(&self) -> f64 {
        self.mean.unwrap_or(f64::NAN)
    }
}

/// Fold-wise summary of one method's bundles. Flips are summed across folds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BundleSummary {
    pub accuracy: SummaryStat,
    pub eod: SummaryStat,
    pub delta_tpr: SummaryStat,
    pub delta_fpr: SummaryStat,
    pub di: SummaryStat,
    pub flips_total: u64,
}

pub fn summarize_folds(bundles: &[MetricBundle]) -> Result<BundleSummary, MetricError> {
    if bundles.is_empty() {
        return Err(MetricError::Empty);
    }
    let collect = |f: &dyn Fn(&MetricBundle) -> MetricValue| {
        let values: Vec<MetricValue> = bundles.iter().map(f).collect();
        SummaryStat::over(&values)
    };
    Ok(BundleSummary {
        accuracy: collect(&|b| MetricValue::Defined(b.accuracy)),
        eod: collect(&|b| b.eod),
        delta_tpr: collect(&|b| b.delta_tpr),
        delta_fpr: collect(&|b| b.delta_fpr),
        di: collect(&|b| b.di),
        flips_total: bundles.iter().map(|b| b.flips).sum(),
    })
}
