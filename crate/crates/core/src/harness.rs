//! Experiment runner: k-fold evaluation of the unmitigated baseline, the two
//! comparison post-processors, and the guardrail at each configured
//! augmentation count, with report emission in both an aligned text table
//! and a machine-readable JSON file.
//!
//! Per fold, every fitted artifact (forest, standardizer, pools, baseline
//! policies) consumes training rows only; the test fold is touched solely at
//! evaluation time. The machine-readable report excludes wall-clock timing,
//! so a fixed config and seed reproduce it byte for byte; timing goes to a
//! separate bench report.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{
    apply_reject_option, apply_thresholds, fit_reject_option, fit_thresholds, BaselineError,
    GroupThresholds, RejectOptionPolicy,
};
use crate::classifier::{train_forest, ForestConfig, ForestModel, Predictor};
use crate::dataset::{
    fit_standardizer, kfold_split, load_dataset_delim, DataError, Dataset, Schema, SchemaError,
    Standardizer, DEFAULT_DELIMITER,
};
use crate::generator::{fit_native_sampler, load_external_pool_delim, GeneratorError};
use crate::guardrail::{guard_batch, Aggregation, GuardError, GuardrailConfig, PoolPair};
use crate::metrics::{
    compute_bundle, round_half_up, summarize_folds, MetricBundle, MetricError, SummaryStat,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Pool(#[from] GeneratorError),
    #[error("fold {fold}, {stage}: {message}")]
    Fold {
        fold: usize,
        stage: &'static str,
        message: String,
    },
    #[error("report error: {0}")]
    Report(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    fn fold(fold: usize, stage: &'static str, err: impl std::fmt::Display) -> Self {
        HarnessError::Fold {
            fold,
            stage,
            message: err.to_string(),
        }
    }
}

/// Pool provisioning: generate natively per fold from the training split, or
/// ingest pre-generated files (one per protected value, reused across folds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PoolConfig {
    Native { size: usize },
    External { unprivileged: PathBuf, privileged: PathBuf },
}

/// Optional training-label corruption, applied to each training fold before
/// any fitting: favorable labels in the chosen group flip to unfavorable
/// with the given probability. Test folds are never touched, so metrics are
/// computed against the uncorrupted labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasInjection {
    pub pa_value: u8,
    pub flip_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema_path: PathBuf,
    pub data_path: PathBuf,
    pub delimiter: u8,
    pub folds: usize,
    pub seed: u64,
    pub forest: ForestConfig,
    pub pools: PoolConfig,
    pub aggregation_weight: f64,
    /// Augmentation counts to evaluate, one guard row per value.
    pub sweep: Vec<usize>,
    pub theta_grid: Vec<f64>,
    pub threshold_resolution: usize,
    pub calibration_fraction: f64,
    pub bias_injection: Option<BiasInjection>,
}

impl ExperimentConfig {
    pub fn new(schema_path: impl Into<PathBuf>, data_path: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            schema_path: schema_path.into(),
            data_path: data_path.into(),
            delimiter: DEFAULT_DELIMITER,
            folds: 5,
            seed: 42,
            forest: ForestConfig::default(),
            pools: PoolConfig::Native { size: 1000 },
            aggregation_weight: 0.5,
            sweep: vec![2, 4, 6, 8],
            theta_grid: crate::baselines::default_theta_grid(),
            threshold_resolution: 100,
            calibration_fraction: 0.2,
            bias_injection: None,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.folds < 2 {
            return Err(HarnessError::Config(format!(
                "fold count {} must be at least 2",
                self.folds
            )));
        }
        if self.sweep.is_empty() {
            return Err(HarnessError::Config("sweep set is empty".to_string()));
        }
        if self.sweep.iter().any(|&t| t == 0) {
            return Err(HarnessError::Config(
                "sweep values must be at least 1".to_string(),
            ));
        }
        if !(0.0..=1.0).contains(&self.aggregation_weight) {
            return Err(HarnessError::Config(format!(
                "aggregation weight {} outside [0, 1]",
                self.aggregation_weight
            )));
        }
        if !(self.calibration_fraction > 0.0 && self.calibration_fraction < 1.0) {
            return Err(HarnessError::Config(format!(
                "calibration fraction {} outside (0, 1)",
                self.calibration_fraction
            )));
        }
        if self.threshold_resolution == 0 {
            return Err(HarnessError::Config(
                "threshold grid resolution must be at least 1".to_string(),
            ));
        }
        if self.theta_grid.is_empty() {
            return Err(HarnessError::Config("theta grid is empty".to_string()));
        }
        let max_t = *self.sweep.iter().max().expect("sweep nonempty");
        if let PoolConfig::Native { size } = &self.pools {
            if *size < max_t {
                return Err(HarnessError::Config(format!(
                    "pool size {size} smaller than the largest augmentation count {max_t}"
                )));
            }
        }
        if let Some(b) = &self.bias_injection {
            if b.pa_value > 1 {
                return Err(HarnessError::Config(
                    "bias injection group must be 0 or 1".to_string(),
                ));
            }
            if !(0.0..=1.0).contains(&b.flip_probability) {
                return Err(HarnessError::Config(format!(
                    "bias injection probability {} outside [0, 1]",
                    b.flip_probability
                )));
            }
        }
        Ok(())
    }

    fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        format!("{:016x}", fnv1a64(text.as_bytes()))
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

// Seed streams, combined with the root seed and fold index.
const SEED_KFOLD: u64 = 1;
const SEED_BIAS: u64 = 2;
const SEED_FOREST: u64 = 3;
const SEED_CALIBRATION: u64 = 4;
const SEED_POOL_UNPRIV: u64 = 5;
const SEED_POOL_PRIV: u64 = 6;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

fn derive_seed(root: u64, stream: u64, fold: u64) -> u64 {
    splitmix64(root ^ splitmix64(stream.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(fold)))
}

/// Everything fitted from one training fold. Construction never sees the
/// test fold.
#[derive(Debug, Clone, Serialize)]
pub struct FoldArtifacts {
    pub forest: ForestModel,
    pub standardizer: Standardizer,
    pub pools: PoolPair,
    pub reject: RejectOptionPolicy,
    pub thresholds: GroupThresholds,
    pub calibration_rows: Vec<usize>,
    #[serde(skip)]
    pub pool_generation: Duration,
}

fn inject_bias(train: &Dataset, injection: &BiasInjection, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schema = train.schema();
    let labels: Vec<u8> = train
        .rows()
        .iter()
        .map(|r| {
            let y = schema.label_value(r);
            if y == 1
                && schema.pa_value(r) == injection.pa_value
                && rng.gen::<f64>() < injection.flip_probability
            {
                0
            } else {
                y
            }
        })
        .collect();
    train.with_labels(&labels)
}

/// Fits forest, standardizer, pools and baseline policies on one training
/// fold. `external_pools` carries pre-loaded pools when the config ingests
/// them from files.
pub fn fit_fold_artifacts(
    train: &Dataset,
    cfg: &ExperimentConfig,
    fold: usize,
    external_pools: Option<&PoolPair>,
) -> Result<FoldArtifacts, HarnessError> {
    let stage_err = |stage, e: &dyn std::fmt::Display| HarnessError::fold(fold, stage, e);

    let train = match &cfg.bias_injection {
        Some(injection) => inject_bias(
            train,
            injection,
            derive_seed(cfg.seed, SEED_BIAS, fold as u64),
        ),
        None => train.clone(),
    };

    let forest = train_forest(
        &train,
        &cfg.forest,
        derive_seed(cfg.seed, SEED_FOREST, fold as u64),
    )
    .map_err(|e| stage_err("forest training", &e))?;
    let standardizer = fit_standardizer(&train);

    let pool_start = Instant::now();
    let (pools, pool_generation) = match &cfg.pools {
        PoolConfig::Native { size } => {
            let mut built = Vec::with_capacity(2);
            for (pa, stream) in [(0u8, SEED_POOL_UNPRIV), (1u8, SEED_POOL_PRIV)] {
                let seed = derive_seed(cfg.seed, stream, fold as u64);
                let sampler = fit_native_sampler(&train, pa, seed)
                    .map_err(|e| stage_err("pool fitting", &e))?;
                built.push(
                    sampler
                        .generate(*size, seed)
                        .map_err(|e| stage_err("pool generation", &e))?,
                );
            }
            let privileged = built.pop().expect("two pools");
            let unprivileged = built.pop().expect("two pools");
            let pair = PoolPair::new(unprivileged, privileged)
                .map_err(|e| stage_err("pool pairing", &e))?;
            (pair, pool_start.elapsed())
        }
        PoolConfig::External { .. } => {
            let pair = external_pools
                .ok_or_else(|| {
                    HarnessError::Config("external pools were not loaded".to_string())
                })?
                .clone();
            (pair, Duration::ZERO)
        }
    };

    // Calibration subset: a seeded fraction of the training rows, scored
    // out-of-bag.
    let m = train.len();
    let n_cal = ((cfg.calibration_fraction * m as f64).round() as usize).clamp(1, m);
    let cal_seed = derive_seed(cfg.seed, SEED_CALIBRATION, fold as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(cal_seed);
    let mut indices: Vec<usize> = (0..m).collect();
    for i in 0..n_cal {
        let j = rng.gen_range(i..m);
        indices.swap(i, j);
    }
    let mut calibration_rows = indices[..n_cal].to_vec();
    calibration_rows.sort_unstable();

    let mut cal_scores = Vec::with_capacity(n_cal);
    for &i in &calibration_rows {
        cal_scores.push(
            forest
                .oob_score(train.row(i), i)
                .map_err(|e| stage_err("calibration scoring", &e))?,
        );
    }
    let schema = train.schema();
    let cal_labels: Vec<u8> = calibration_rows
        .iter()
        .map(|&i| schema.label_value(train.row(i)))
        .collect();
    let cal_pa: Vec<u8> = calibration_rows
        .iter()
        .map(|&i| schema.pa_value(train.row(i)))
        .collect();

    let reject = fit_reject_option(&cal_scores, &cal_labels, &cal_pa, &cfg.theta_grid)
        .map_err(|e| stage_err("reject-option fitting", &e))?;
    let thresholds = fit_thresholds(
        &cal_scores,
        &cal_labels,
        &cal_pa,
        cfg.threshold_resolution,
    )
    .map_err(|e| stage_err("threshold fitting", &e))?;

    Ok(FoldArtifacts {
        forest,
        standardizer,
        pools,
        reject,
        thresholds,
        calibration_rows,
        pool_generation,
    })
}

/// Method identity, in report row order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum MethodSpec {
    Guard(usize),
    ThresholdOpt,
    RejectOption,
    Baseline,
}

impl MethodSpec {
    fn name(&self) -> String {
        match self {
            MethodSpec::Guard(t) => format!("guard-{t}"),
            MethodSpec::ThresholdOpt => "threshold-opt".to_string(),
            MethodSpec::RejectOption => "reject-option".to_string(),
            MethodSpec::Baseline => "baseline".to_string(),
        }
    }
}

fn method_order(sweep: &[usize]) -> Vec<MethodSpec> {
    let mut ts: Vec<usize> = sweep.to_vec();
    ts.sort_unstable();
    ts.dedup();
    let mut methods: Vec<MethodSpec> = ts.iter().rev().map(|&t| MethodSpec::Guard(t)).collect();
    methods.push(MethodSpec::ThresholdOpt);
    methods.push(MethodSpec::RejectOption);
    methods.push(MethodSpec::Baseline);
    methods
}

struct FoldEval {
    bundles: Vec<MetricBundle>,
    seconds: Vec<f64>,
    guard_stats: Vec<(usize, crate::guardrail::BatchStats)>,
}

fn evaluate_fold(
    artifacts: &FoldArtifacts,
    test: &Dataset,
    cfg: &ExperimentConfig,
    methods: &[MethodSpec],
    fold: usize,
) -> Result<FoldEval, HarnessError> {
    let labels = test.labels();
    let pa = test.pa_values();

    let scoring_start = Instant::now();
    let mut scores = Vec::with_capacity(test.len());
    for row in test.rows() {
        scores.push(
            artifacts
                .forest
                .score(row)
                .map_err(|e| HarnessError::fold(fold, "baseline scoring", &e))?,
        );
    }
    let scoring_seconds = scoring_start.elapsed().as_secs_f64();
    let base_rounded: Vec<u8> = scores.iter().map(|&s| round_half_up(s)).collect();

    let metric_err = |e: MetricError| HarnessError::fold(fold, "metrics", &e);
    let baseline_err = |e: BaselineError| HarnessError::fold(fold, "baseline apply", &e);
    let guard_err = |e: GuardError| HarnessError::fold(fold, "guarding", &e);

    let mut bundles = Vec::with_capacity(methods.len());
    let mut seconds = Vec::with_capacity(methods.len());
    let mut guard_stats = Vec::new();
    for spec in methods {
        let (rounded, secs) = match spec {
            MethodSpec::Baseline => (base_rounded.clone(), scoring_seconds),
            MethodSpec::RejectOption => {
                let start = Instant::now();
                let preds =
                    apply_reject_option(&scores, &pa, &artifacts.reject).map_err(baseline_err)?;
                (preds, scoring_seconds + start.elapsed().as_secs_f64())
            }
            MethodSpec::ThresholdOpt => {
                let start = Instant::now();
                let preds = apply_thresholds(&scores, &pa, &artifacts.thresholds)
                    .map_err(baseline_err)?;
                (preds, scoring_seconds + start.elapsed().as_secs_f64())
            }
            MethodSpec::Guard(t) => {
                let guard_cfg = GuardrailConfig {
                    t_augment: *t,
                    aggregation: Aggregation::WeightedAverage {
                        weight: cfg.aggregation_weight,
                    },
                };
                let (preds, stats) = guard_batch(
                    &artifacts.forest,
                    test,
                    &artifacts.pools,
                    &guard_cfg,
                    &artifacts.standardizer,
                )
                .map_err(guard_err)?;
                let rounded: Vec<u8> = preds
                    .iter()
                    .map(|p| round_half_up(p.final_score))
                    .collect();
                guard_stats.push((*t, stats));
                (rounded, stats.wall.as_secs_f64())
            }
        };
        bundles.push(compute_bundle(&labels, &rounded, &pa, &base_rounded).map_err(metric_err)?);
        seconds.push(secs);
    }
    Ok(FoldEval {
        bundles,
        seconds,
        guard_stats,
    })
}

/// Run metadata stamped into every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub folds: usize,
    pub samples: usize,
    pub attributes: usize,
    pub dataset: String,
    pub schema: String,
    pub config_hash: String,
}

/// One summary row, fields in table column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: String,
    pub accuracy: SummaryStat,
    pub eod: SummaryStat,
    pub delta_fpr: SummaryStat,
    pub delta_tpr: SummaryStat,
    pub di: SummaryStat,
    pub flips: u64,
}

/// Per-fold detail retained for transparency; deterministic like the rest of
/// the machine-readable report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRow {
    pub fold: usize,
    pub method: String,
    pub metrics: MetricBundle,
}

/// Per-method wall-clock accounting. Not part of the deterministic report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodTiming {
    pub method: String,
    pub total_seconds: f64,
    pub per_fold_seconds: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scoring_seconds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub neighbor_seconds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aggregation_seconds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub triggered: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub samples: usize,
    pub attributes: usize,
    pub folds: usize,
    /// Pool fitting and generation, amortized setup rather than per-instance
    /// guarding cost.
    pub pool_generation_seconds: f64,
    pub methods: Vec<MethodTiming>,
    /// Mean guard time across augmentation counts divided by baseline time.
    pub ratio: f64,
    /// (guard total - baseline total) / triggered count, averaged over
    /// augmentation counts; absent when nothing triggered.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_triggered_overhead_seconds: Option<f64>,
}

/// Full experiment outcome: fold-wise summaries per method plus timing.
/// Serialization covers only the deterministic parts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FairnessReport {
    pub meta: RunMeta,
    pub rows: Vec<MethodRow>,
    pub folds: Vec<FoldRow>,
    #[serde(skip)]
    pub timing: TimingReport,
}

impl FairnessReport {
    pub fn row(&self, method: &str) -> Option<&MethodRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn fold_metric(&self, method: &str, fold: usize) -> Option<&MetricBundle> {
        self.folds
            .iter()
            .find(|f| f.method == method && f.fold == fold)
            .map(|f| &f.metrics)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<FairnessReport, HarnessError> {
    cfg.validate()?;
    let schema = Arc::new(Schema::from_path(&cfg.schema_path)?);
    let data = load_dataset_delim(&cfg.data_path, &schema, cfg.delimiter)?;
    run_experiment_on(cfg, &data)
}

/// Same as [`run_experiment`] but over an already-loaded dataset.
pub fn run_experiment_on(
    cfg: &ExperimentConfig,
    data: &Dataset,
) -> Result<FairnessReport, HarnessError> {
    cfg.validate()?;
    let methods = method_order(&cfg.sweep);
    let max_t = *cfg.sweep.iter().max().expect("sweep nonempty");

    let external = match &cfg.pools {
        PoolConfig::External {
            unprivileged,
            privileged,
        } => {
            let u = load_external_pool_delim(unprivileged, data.schema_arc(), 0, cfg.delimiter)?;
            let p = load_external_pool_delim(privileged, data.schema_arc(), 1, cfg.delimiter)?;
            if u.len() < max_t || p.len() < max_t {
                return Err(HarnessError::Config(format!(
                    "external pools ({} and {} members) must cover the largest augmentation count {max_t}",
                    u.len(),
                    p.len()
                )));
            }
            Some(PoolPair::new(u, p).map_err(|e| HarnessError::Config(e.to_string()))?)
        }
        PoolConfig::Native { .. } => None,
    };

    let splits = kfold_split(data, cfg.folds, derive_seed(cfg.seed, SEED_KFOLD, 0))?;

    let mut per_method_bundles: Vec<Vec<MetricBundle>> =
        vec![Vec::with_capacity(cfg.folds); methods.len()];
    let mut per_method_seconds: Vec<Vec<f64>> = vec![Vec::with_capacity(cfg.folds); methods.len()];
    let mut fold_rows = Vec::with_capacity(cfg.folds * methods.len());
    let mut pool_generation = Duration::ZERO;
    let mut guard_phase_totals: Vec<(usize, f64, f64, f64, usize)> = cfg
        .sweep
        .iter()
        .map(|&t| (t, 0.0, 0.0, 0.0, 0usize))
        .collect();
    guard_phase_totals.sort_by_key(|&(t, ..)| std::cmp::Reverse(t));
    guard_phase_totals.dedup_by_key(|&mut (t, ..)| t);

    for (fold, (train, test)) in splits.iter().enumerate() {
        let artifacts = fit_fold_artifacts(train, cfg, fold, external.as_ref())?;
        pool_generation += artifacts.pool_generation;
        let eval = evaluate_fold(&artifacts, test, cfg, &methods, fold)?;
        for (i, spec) in methods.iter().enumerate() {
            per_method_bundles[i].push(eval.bundles[i]);
            per_method_seconds[i].push(eval.seconds[i]);
            fold_rows.push(FoldRow {
                fold,
                method: spec.name(),
                metrics: eval.bundles[i],
            });
        }
        for (t, stats) in &eval.guard_stats {
            if let Some(entry) = guard_phase_totals.iter_mut().find(|(pt, ..)| pt == t) {
                entry.1 += stats.scoring.as_secs_f64();
                entry.2 += stats.neighbor_search.as_secs_f64();
                entry.3 += stats.aggregation.as_secs_f64();
                entry.4 += stats.triggered;
            }
        }
    }

    let mut rows = Vec::with_capacity(methods.len());
    for (i, spec) in methods.iter().enumerate() {
        let summary = summarize_folds(&per_method_bundles[i])
            .map_err(|e| HarnessError::Report(e.to_string()))?;
        rows.push(MethodRow {
            method: spec.name(),
            accuracy: summary.accuracy,
            eod: summary.eod,
            delta_fpr: summary.delta_fpr,
            delta_tpr: summary.delta_tpr,
            di: summary.di,
            flips: summary.flips_total,
        });
    }

    // Timing rollup.
    let total = |i: usize| per_method_seconds[i].iter().sum::<f64>();
    let baseline_idx = methods
        .iter()
        .position(|m| *m == MethodSpec::Baseline)
        .expect("baseline always present");
    let baseline_total = total(baseline_idx);
    let mut method_timings = Vec::with_capacity(methods.len());
    let mut guard_totals = Vec::new();
    let mut guard_triggered_total = 0usize;
    for (i, spec) in methods.iter().enumerate() {
        let phases = match spec {
            MethodSpec::Guard(t) => guard_phase_totals.iter().find(|(pt, ..)| pt == t),
            _ => None,
        };
        if let MethodSpec::Guard(_) = spec {
            guard_totals.push(total(i));
        }
        if let Some((_, _, _, _, triggered)) = phases {
            guard_triggered_total += *triggered;
        }
        method_timings.push(MethodTiming {
            method: spec.name(),
            total_seconds: total(i),
            per_fold_seconds: per_method_seconds[i].clone(),
            scoring_seconds: phases.map(|p| p.1),
            neighbor_seconds: phases.map(|p| p.2),
            aggregation_seconds: phases.map(|p| p.3),
            triggered: phases.map(|p| p.4),
        });
    }
    let mean_guard = if guard_totals.is_empty() {
        0.0
    } else {
        guard_totals.iter().sum::<f64>() / guard_totals.len() as f64
    };
    let ratio = if baseline_total > 0.0 {
        mean_guard / baseline_total
    } else {
        f64::INFINITY
    };
    let per_triggered = if guard_triggered_total > 0 {
        let extra: f64 = guard_totals.iter().map(|g| g - baseline_total).sum::<f64>();
        Some((extra / guard_totals.len() as f64) / (guard_triggered_total as f64 / guard_totals.len() as f64))
    } else {
        None
    };

    let timing = TimingReport {
        samples: data.len(),
        attributes: data.schema().n_features(),
        folds: cfg.folds,
        pool_generation_seconds: pool_generation.as_secs_f64(),
        methods: method_timings,
        ratio,
        per_triggered_overhead_seconds: per_triggered,
    };

    Ok(FairnessReport {
        meta: RunMeta {
            tool: "fairguard".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: cfg.seed,
            folds: cfg.folds,
            samples: data.len(),
            attributes: data.schema().n_features(),
            dataset: cfg.data_path.display().to_string(),
            schema: cfg.schema_path.display().to_string(),
            config_hash: cfg.hash(),
        },
        rows,
        folds: fold_rows,
        timing,
    })
}

/// Timing-focused run (all folds sequential, like every run here).
pub fn run_bench(cfg: &ExperimentConfig) -> Result<TimingReport, HarnessError> {
    Ok(run_experiment(cfg)?.timing)
}

/// Sensitivity run: the same experiment, reported as one row per
/// augmentation count in ascending order.
pub fn sweep_augmentations(cfg: &ExperimentConfig) -> Result<FairnessReport, HarnessError> {
    let mut report = run_experiment(cfg)?;
    let mut ts: Vec<usize> = cfg.sweep.clone();
    ts.sort_unstable();
    ts.dedup();
    let order: Vec<String> = ts.iter().map(|t| format!("guard-{t}")).collect();
    report.rows = order
        .iter()
        .filter_map(|name| report.rows.iter().find(|r| &r.method == name).cloned())
        .collect();
    report.folds.retain(|f| order.contains(&f.method));
    Ok(report)
}

fn fmt_stat(stat: &SummaryStat, with_std: bool) -> String {
    match stat.mean {
        None => format!("undef (0/{})", stat.total),
        Some(mean) => {
            let mut out = if with_std {
                format!("{:.5} \u{b1} {:.5}", mean, stat.std.unwrap_or(0.0))
            } else {
                format!("{mean:.5}")
            };
            if stat.defined < stat.total {
                out.push_str(&format!(" [{}/{}]", stat.defined, stat.total));
            }
            out
        }
    }
}

/// Aligned text table, one row per method: Accuracy, EOD, dFPR, dTPR, DI,
/// Flips.
pub fn render_table(report: &FairnessReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "dataset {} | {} samples | {} attributes | {} folds | seed {}\n",
        report.meta.dataset,
        report.meta.samples,
        report.meta.attributes,
        report.meta.folds,
        report.meta.seed
    ));
    out.push_str(&format!(
        "{:<16} {:>21} {:>21} {:>10} {:>10} {:>21} {:>7}\n",
        "method", "accuracy", "eod", "dfpr", "dtpr", "di", "flips"
    ));
    for row in &report.rows {
        out.push_str(&format!(
            "{:<16} {:>21} {:>21} {:>10} {:>10} {:>21} {:>7}\n",
            row.method,
            fmt_stat(&row.accuracy, true),
            fmt_stat(&row.eod, true),
            fmt_stat(&row.delta_fpr, false),
            fmt_stat(&row.delta_tpr, false),
            fmt_stat(&row.di, true),
            row.flips
        ));
    }
    out
}

/// Timing table: per-method totals plus the overhead ratio at 0.1 precision.
pub fn render_timing_table(timing: &TimingReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{} samples | {} attributes | {} folds | pool generation {:.3} s\n",
        timing.samples, timing.attributes, timing.folds, timing.pool_generation_seconds
    ));
    out.push_str(&format!(
        "{:<16} {:>10} {:>34}\n",
        "method", "total_s", "per_fold_s"
    ));
    for m in &timing.methods {
        let per_fold = m
            .per_fold_seconds
            .iter()
            .map(|s| format!("{s:.3}"))
            .collect::<Vec<_>>()
            .join(" ");
        out.push_str(&format!(
            "{:<16} {:>10.3} {:>34}\n",
            m.method, m.total_seconds, per_fold
        ));
        if let (Some(sc), Some(nn), Some(ag), Some(tr)) = (
            m.scoring_seconds,
            m.neighbor_seconds,
            m.aggregation_seconds,
            m.triggered,
        ) {
            out.push_str(&format!(
                "{:<16} scoring {:.3} s | neighbors {:.3} s | aggregation {:.3} s | triggered {}\n",
                "", sc, nn, ag, tr
            ));
        }
    }
    out.push_str(&format!("ratio: {:.1}\n", timing.ratio));
    if let Some(o) = timing.per_triggered_overhead_seconds {
        out.push_str(&format!("per-triggered overhead: {o:.6} s\n"));
    }
    out
}

/// Writes the text table and the machine-readable JSON into `out_dir`,
/// returning the written paths.
pub fn emit_report(
    report: &FairnessReport,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>, HarnessError> {
    if report.rows.is_empty() {
        return Err(HarnessError::Report("report has no rows".to_string()));
    }
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let table_path = dir.join("report.txt");
    let json_path = dir.join("report.json");
    std::fs::write(&table_path, render_table(report))?;
    std::fs::write(&json_path, report.to_json())?;
    Ok(vec![table_path, json_path])
}

pub fn emit_bench(
    timing: &TimingReport,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>, HarnessError> {
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let table_path = dir.join("timing.txt");
    let json_path = dir.join("timing.json");
    std::fs::write(&table_path, render_timing_table(timing))?;
    std::fs::write(
        &json_path,
        serde_json::to_string_pretty(timing).expect("timing serializes"),
    )?;
    Ok(vec![table_path, json_path])
}
