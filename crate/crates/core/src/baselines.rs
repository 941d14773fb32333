//! Comparison post-processors fit on a calibration split: the reject-option
//! rule, which overrides predictions inside a critical band around 0.5 in
//! favor of the unprivileged group, and a deterministic per-group threshold
//! optimizer. Both select their parameters by exhaustive grid search
//! minimizing calibration equalized odds, with a fixed tie-break chain, so
//! refitting on the same data always returns the same policy.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{
    accuracy, confusion_by_group, equalized_odds, round_half_up, MetricError, UndefinedReason,
};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("theta {0} is not inside (0, 0.5)")]
    BadTheta(f64),
    #[error("threshold {0} is not inside [0, 1]")]
    BadThreshold(f64),
    #[error("grid is empty")]
    EmptyGrid,
    #[error("grid resolution must be at least 1")]
    ZeroResolution,
    #[error("input vectors have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("calibration objective undefined: {0}")]
    UndefinedObjective(UndefinedReason),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed policy file: {0}")]
    Parse(#[from] toml::de::Error),
}

/// Critical-region half-width around 0.5.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RejectOptionPolicy {
    pub theta: f64,
}

impl RejectOptionPolicy {
    pub fn new(theta: f64) -> Result<Self, BaselineError> {
        if !(theta > 0.0 && theta < 0.5) {
            return Err(BaselineError::BadTheta(theta));
        }
        Ok(RejectOptionPolicy { theta })
    }
}

/// Per-group decision thresholds: predict favorable iff score >= threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupThresholds {
    pub privileged: f64,
    pub unprivileged: f64,
}

impl GroupThresholds {
    pub fn new(privileged: f64, unprivileged: f64) -> Result<Self, BaselineError> {
        for t in [privileged, unprivileged] {
            if !(0.0..=1.0).contains(&t) {
                return Err(BaselineError::BadThreshold(t));
            }
        }
        Ok(GroupThresholds {
            privileged,
            unprivileged,
        })
    }
}

fn check_scores(scores: &[f64], pa_values: &[u8]) -> Result<(), BaselineError> {
    if scores.len() != pa_values.len() {
        return Err(BaselineError::LengthMismatch(
            scores.len(),
            pa_values.len(),
        ));
    }
    for &s in scores {
        if !(0.0..=1.0).contains(&s) {
            return Err(BaselineError::ScoreOutOfRange(s));
        }
    }
    Ok(())
}

/// Inside the critical region the unprivileged group receives the favorable
/// outcome and the privileged group the unfavorable one; outside it scores
/// round half-up.
pub fn apply_reject_option(
    scores: &[f64],
    pa_values: &[u8],
    policy: &RejectOptionPolicy,
) -> Result<Vec<u8>, BaselineError> {
    check_scores(scores, pa_values)?;
    Ok(scores
        .iter()
        .zip(pa_values)
        .map(|(&s, &g)| {
            if (s - 0.5).abs() < policy.theta {
                1 - g
            } else {
                round_half_up(s)
            }
        })
        .collect())
}

/// Default theta grid {0.01, 0.02, ..., 0.25}.
pub fn default_theta_grid() -> Vec<f64> {
    (1..=25).map(|i| i as f64 / 100.0).collect()
}

/// Picks the grid theta minimizing calibration equalized odds; ties keep the
/// smaller theta.
pub fn fit_reject_option(
    cal_scores: &[f64],
    cal_labels: &[u8],
    cal_pa: &[u8],
    grid: &[f64],
) -> Result<RejectOptionPolicy, BaselineError> {
    check_scores(cal_scores, cal_pa)?;
    if grid.is_empty() {
        return Err(BaselineError::EmptyGrid);
    }
    let mut thetas = grid.to_vec();
    thetas.sort_by(|a, b| a.partial_cmp(b).expect("finite theta"));
    thetas.dedup();
    let mut best: Option<(f64, f64)> = None; // (eod, theta)
    for &theta in &thetas {
        let policy = RejectOptionPolicy::new(theta)?;
        let preds = apply_reject_option(cal_scores, cal_pa, &policy)?;
        let eod = objective_eod(cal_labels, &preds, cal_pa)?;
        let better = match best {
            None => true,
            Some((best_eod, _)) => eod < best_eod,
        };
        if better {
            best = Some((eod, theta));
        }
    }
    let (_, theta) = best.expect("grid verified nonempty");
    RejectOptionPolicy::new(theta)
}

pub fn apply_thresholds(
    scores: &[f64],
    pa_values: &[u8],
    thresholds: &GroupThresholds,
) -> Result<Vec<u8>, BaselineError> {
    check_scores(scores, pa_values)?;
    Ok(scores
        .iter()
        .zip(pa_values)
        .map(|(&s, &g)| {
            let t = if g == 1 {
                thresholds.privileged
            } else {
                thresholds.unprivileged
            };
            u8::from(s >= t)
        })
        .collect())
}

fn objective_eod(labels: &[u8], preds: &[u8], pa: &[u8]) -> Result<f64, BaselineError> {
    let gc = confusion_by_group(labels, preds, pa)?;
    match equalized_odds(&gc).eod {
        crate::metrics::MetricValue::Defined(e) => Ok(e),
        crate::metrics::MetricValue::Undefined(r) => Err(BaselineError::UndefinedObjective(r)),
    }
}

/// Exhaustive search over the (resolution + 1)^2 threshold grid
/// {0, 1/R, ..., 1} per group, minimizing calibration equalized odds. Ties
/// break by higher calibration accuracy, then thresholds closest to 0.5 in
/// L1, then lexicographically by (privileged, unprivileged).
pub fn fit_thresholds(
    cal_scores: &[f64],
    cal_labels: &[u8],
    cal_pa: &[u8],
    grid_resolution: usize,
) -> Result<GroupThresholds, BaselineError> {
    check_scores(cal_scores, cal_pa)?;
    if grid_resolution == 0 {
        return Err(BaselineError::ZeroResolution);
    }
    let r = grid_resolution as f64;
    let grid: Vec<f64> = (0..=grid_resolution).map(|i| i as f64 / r).collect();

    struct Best {
        eod: f64,
        acc: f64,
        l1: f64,
        thresholds: GroupThresholds,
    }
    let mut best: Option<Best> = None;
    for &tp in &grid {
        for &tu in &grid {
            let thresholds = GroupThresholds {
                privileged: tp,
                unprivileged: tu,
            };
            let preds = apply_thresholds(cal_scores, cal_pa, &thresholds)?;
            let eod = objective_eod(cal_labels, &preds, cal_pa)?;
            let acc = accuracy(cal_labels, &preds)?;
            let l1 = (tp - 0.5).abs() + (tu - 0.5).abs();
            // Lexicographic ascending (tp, tu) iteration order means a full
            // tie keeps the earlier candidate.
            let better = match &best {
                None => true,
                Some(b) => {
                    eod < b.eod
                        || (eod == b.eod && acc > b.acc)
                        || (eod == b.eod && acc == b.acc && l1 < b.l1)
                }
            };
            if better {
                best = Some(Best {
                    eod,
                    acc,
                    l1,
                    thresholds,
                });
            }
        }
    }
    Ok(best.expect("grid is nonempty").thresholds)
}

/// Serialized record of the fitted post-processing policies for one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRecord {
    pub method: String,
    pub calibration_seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_grid: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub privileged_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unprivileged_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_resolution: Option<usize>,
}

impl PolicyRecord {
    pub fn reject_option(
        policy: &RejectOptionPolicy,
        grid: &[f64],
        calibration_seed: u64,
    ) -> Self {
        PolicyRecord {
            method: "reject-option".to_string(),
            calibration_seed,
            theta: Some(policy.theta),
            theta_grid: Some(grid.to_vec()),
            privileged_threshold: None,
            unprivileged_threshold: None,
            grid_resolution: None,
        }
    }

    pub fn thresholds(
        thresholds: &GroupThresholds,
        grid_resolution: usize,
        calibration_seed: u64,
    ) -> Self {
        PolicyRecord {
            method: "threshold-opt".to_string(),
            calibration_seed,
            theta: None,
            theta_grid: None,
            privileged_threshold: Some(thresholds.privileged),
            unprivileged_threshold: Some(thresholds.unprivileged),
            grid_resolution: Some(grid_resolution),
        }
    }

    pub fn save(records: &[PolicyRecord], path: impl AsRef<Path>) -> Result<(), BaselineError> {
        #[derive(Serialize)]
        struct File<'a> {
            policy: &'a [PolicyRecord],
        }
        let text = toml::to_string(&File { policy: records }).expect("policies serialize");
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Vec<PolicyRecord>, BaselineError> {
        #[derive(Deserialize)]
        struct File {
            policy: Vec<PolicyRecord>,
        }
        let text = std::fs::read_to_string(path)?;
        let file: File = toml::from_str(&text)?;
        Ok(file.policy)
    }
}
