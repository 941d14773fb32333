//! Acceptance suite. Each test prints one pass line; a failed assertion
//! marks the criterion red. Criteria needing the full synthetic experiment
//! share one lazily computed run.
//!
//! Criterion 9 consumes user-supplied data when `FAIRGUARD_ACCEPTANCE_DATA`
//! points at a directory holding `schema.toml` and `data.csv`; otherwise it
//! is skipped (advisory, never gating).

mod common;

use std::sync::LazyLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fairguard::baselines::{default_theta_grid, fit_reject_option, fit_thresholds};
use fairguard::classifier::{PredictError, Predictor};
use fairguard::dataset::{fit_standardizer, Dataset, Instance, Value};
use fairguard::generator::{Provenance, SyntheticPool};
use fairguard::guardrail::{
    flip_protected, guard_predict, nearest_neighbors, GuardrailConfig, PoolPair,
};
use fairguard::harness::{
    run_bench, run_experiment, sweep_augmentations, BiasInjection, ExperimentConfig,
    FairnessReport, PoolConfig, TimingReport,
};
use fairguard::metrics::{
    accuracy, confusion_by_group, disparate_impact, equalized_odds, flips, round_half_up,
    MetricValue,
};

use common::{acceptance_schema, oracle, sigmoid, synthetic_dataset, write_inputs};

fn pass(criterion: u32, name: &str) {
    println!("[acceptance] criterion {criterion} ({name}): PASS");
}

struct SharedRun {
    _dir: tempfile::TempDir,
    cfg: ExperimentConfig,
    report: FairnessReport,
    run_seconds: f64,
}

/// The directional-reproduction experiment: 5,000 rows whose label is a
/// logistic function of two legitimate features, with favorable training
/// labels of the unprivileged group flipped to unfavorable with probability
/// 0.3 before each fold's fitting. Defaults elsewhere: 5 folds, 100-tree
/// forest, native pools of 1,000, sweep {2, 4, 6, 8}.
static DEFAULT_RUN: LazyLock<SharedRun> = LazyLock::new(|| {
    let dir = tempfile::tempdir().expect("tempdir");
    let data = synthetic_dataset(5000, 991);
    let (schema_path, data_path) = write_inputs(dir.path(), &data);
    let mut cfg = ExperimentConfig::new(schema_path, data_path);
    cfg.seed = 7;
    cfg.bias_injection = Some(BiasInjection {
        pa_value: 0,
        flip_probability: 0.3,
    });
    let start = Instant::now();
    let report = run_experiment(&cfg).expect("experiment runs");
    SharedRun {
        _dir: dir,
        cfg,
        report,
        run_seconds: start.elapsed().as_secs_f64(),
    }
});

fn assert_metric_matches(name: &str, case: usize, got: MetricValue, want: Option<f64>) {
    match (got, want) {
        (MetricValue::Defined(g), Some(w)) => assert!(
            (g - w).abs() <= 1e-12,
            "case {case}: {name} {g} vs oracle {w}"
        ),
        (MetricValue::Undefined(_), None) => {}
        (got, want) => panic!("case {case}: {name} definedness mismatch: {got:?} vs {want:?}"),
    }
}

#[test]
fn criterion_1_metric_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for case in 0..1000 {
        let m = rng.gen_range(1..=50);
        let labels: Vec<u8> = (0..m).map(|_| rng.gen_range(0..2)).collect();
        let preds: Vec<u8> = (0..m).map(|_| rng.gen_range(0..2)).collect();
        let base: Vec<u8> = (0..m).map(|_| rng.gen_range(0..2)).collect();
        let pa: Vec<u8> = (0..m).map(|_| rng.gen_range(0..2)).collect();

        let gc = confusion_by_group(&labels, &preds, &pa).unwrap();
        let gaps = equalized_odds(&gc);
        assert_metric_matches(
            "eod",
            case,
            gaps.eod,
            oracle::equalized_odds(&labels, &preds, &pa).map(|(e, _, _)| e),
        );
        assert_metric_matches(
            "delta_tpr",
            case,
            gaps.delta_tpr,
            oracle::delta_tpr(&labels, &preds, &pa),
        );
        assert_metric_matches(
            "delta_fpr",
            case,
            gaps.delta_fpr,
            oracle::delta_fpr(&labels, &preds, &pa),
        );
        assert_metric_matches(
            "di",
            case,
            disparate_impact(&preds, &pa).unwrap(),
            oracle::disparate_impact(&preds, &pa),
        );
        let acc = accuracy(&labels, &preds).unwrap();
        assert!((acc - oracle::accuracy(&labels, &preds)).abs() <= 1e-12);
        assert_eq!(flips(&base, &preds).unwrap(), oracle::flips(&base, &preds));
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 10.0, "criterion 1 took {elapsed:.1} s");
    pass(1, "metric oracle equivalence");
}

/// Deterministic stub scorer: a smooth function of the feature cells with an
/// optional protected-attribute shift. The blind variant never reads the
/// protected cell.
struct WaveStub {
    a: f64,
    b: f64,
    pa_shift: f64,
    reads_pa: bool,
}

impl Predictor for WaveStub {
    fn score(&self, x: &Instance) -> Result<f64, PredictError> {
        let num = |i: usize| match x.value(i) {
            Value::Num(v) => *v,
            Value::Cat(c) => f64::from(*c),
        };
        let mut z = (self.a * num(0)).sin() + (self.b * num(1)).cos();
        if self.reads_pa {
            if let Value::Cat(1) = x.value(2) {
                z += self.pa_shift;
            }
        }
        Ok(sigmoid(1.7 * z))
    }
}

#[test]
fn criterion_2_algorithm_invariant_suite() {
    let start = Instant::now();
    let schema = acceptance_schema();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut triggered_seen = 0usize;

    let random_instance = |rng: &mut ChaCha8Rng, pa: u32| {
        Instance::new(vec![
            Value::Num(rng.gen_range(-3.0..3.0)),
            Value::Num(rng.gen_range(-3.0..3.0)),
            Value::Cat(pa),
            Value::Cat(rng.gen_range(0..2)),
        ])
    };

    for case in 0..10_000 {
        let pool_size = rng.gen_range(8..=20);
        let make_pool = |pa: u8, rng: &mut ChaCha8Rng| {
            let members = (0..pool_size)
                .map(|_| random_instance(rng, u32::from(pa)))
                .collect();
            SyntheticPool::new(
                schema.clone(),
                pa,
                members,
                Provenance::Native { seed: case as u64 },
            )
            .unwrap()
        };
        let pools = PoolPair::new(make_pool(0, &mut rng), make_pool(1, &mut rng)).unwrap();

        let basis_rows = (0..12)
            .map(|_| {
                let pa = rng.gen_range(0..2);
                random_instance(&mut rng, pa)
            })
            .collect();
        let std_basis = Dataset::new(schema.clone(), basis_rows).unwrap();
        let standardizer = fit_standardizer(&std_basis);

        let t = rng.gen_range(1..=8);
        let cfg = GuardrailConfig::with_weight(t, rng.gen_range(0.0..=1.0)).unwrap();
        let model = WaveStub {
            a: rng.gen_range(0.2..2.5),
            b: rng.gen_range(0.2..2.5),
            pa_shift: rng.gen_range(-0.8..0.8),
            reads_pa: true,
        };
        let x_pa_pick = rng.gen_range(0..2);
        let x = random_instance(&mut rng, x_pa_pick);

        let p = guard_predict(&model, &x, &pools, &cfg, &standardizer).unwrap();
        assert_eq!(
            p.triggered,
            round_half_up(p.original_score) != round_half_up(p.opposite_score),
            "case {case}: trigger must follow the rounded disagreement"
        );
        if p.triggered {
            triggered_seen += 1;
            assert_eq!(p.tta_scores.len(), t);
            let lo = p.tta_scores.iter().copied().fold(p.original_score, f64::min);
            let hi = p.tta_scores.iter().copied().fold(p.original_score, f64::max);
            assert!(
                p.final_score >= lo && p.final_score <= hi,
                "case {case}: final {} outside hull [{lo}, {hi}]",
                p.final_score
            );
        } else {
            assert!(p.tta_scores.is_empty());
            assert_eq!(
                p.final_score.to_bits(),
                p.original_score.to_bits(),
                "case {case}: no-trigger path must be the exact identity"
            );
        }

        assert_eq!(flip_protected(&flip_protected(&x, &schema), &schema), x);

        let x_pa = schema.pa_value(&x);
        let opposite_pool = pools.opposite_of(x_pa);
        for neighbor in nearest_neighbors(&x, opposite_pool, t, &standardizer).unwrap() {
            assert_eq!(
                schema.pa_value(neighbor),
                1 - x_pa,
                "case {case}: augmentation must carry the opposite protected value"
            );
        }

        let blind = WaveStub {
            a: 1.1,
            b: 0.7,
            pa_shift: 123.0,
            reads_pa: false,
        };
        let pb = guard_predict(&blind, &x, &pools, &cfg, &standardizer).unwrap();
        assert!(!pb.triggered, "case {case}: blind model can never trigger");
        assert_eq!(pb.final_score.to_bits(), pb.original_score.to_bits());
        assert!(!pb.flipped);
    }
    assert!(
        triggered_seen > 500,
        "suite must exercise the triggered path, saw {triggered_seen}"
    );
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 30.0, "criterion 2 took {elapsed:.1} s");
    pass(2, "algorithm invariant suite");
}

/// Random calibration set with every (group, label) cell populated.
fn random_calibration(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<u8>, Vec<u8>) {
    let extra = rng.gen_range(36..=196);
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    let mut pa = Vec::new();
    for g in [0u8, 1] {
        for y in [0u8, 1] {
            scores.push(rng.gen_range(0.0..=1.0));
            labels.push(y);
            pa.push(g);
        }
    }
    for _ in 0..extra {
        scores.push(rng.gen_range(0.0..=1.0));
        labels.push(rng.gen_range(0..2));
        pa.push(rng.gen_range(0..2));
    }
    (scores, labels, pa)
}

#[test]
fn criterion_3_baseline_optimizer_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let grid = default_theta_grid();
    for case in 0..50 {
        let (scores, labels, pa) = random_calibration(&mut rng);

        let got = fit_thresholds(&scores, &labels, &pa, 100).unwrap();
        let want = oracle::fit_thresholds(&scores, &labels, &pa, 100);
        assert_eq!(
            (got.privileged, got.unprivileged),
            want,
            "case {case}: threshold grid search diverged from oracle"
        );

        let got = fit_reject_option(&scores, &labels, &pa, &grid).unwrap();
        let want = oracle::fit_reject_option(&scores, &labels, &pa, &grid);
        assert_eq!(
            got.theta, want,
            "case {case}: reject-option search diverged from oracle"
        );
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "criterion 3 took {elapsed:.1} s");
    pass(3, "baseline optimizer oracle");
}

#[test]
fn criterion_4_end_to_end_bias_reduction() {
    let run = &*DEFAULT_RUN;
    let baseline = run.report.row("baseline").expect("baseline row");
    let guard = run.report.row("guard-8").expect("guard-8 row");
    let eod_base = baseline.eod.mean.expect("baseline eod defined");
    let eod_guard = guard.eod.mean.expect("guard eod defined");
    assert!(
        eod_guard <= 0.8 * eod_base,
        "guard-8 mean EOD {eod_guard:.5} must be at most 0.8x baseline {eod_base:.5}"
    );
    let acc_base = baseline.accuracy.mean.unwrap();
    let acc_guard = guard.accuracy.mean.unwrap();
    assert!(
        acc_base - acc_guard <= 0.02,
        "accuracy drop {:.5} exceeds 2 points",
        acc_base - acc_guard
    );
    assert!(
        run.run_seconds < 180.0,
        "experiment took {:.1} s",
        run.run_seconds
    );
    pass(4, "end-to-end bias reduction");
}

#[test]
fn criterion_5_flips_parsimony() {
    let run = &*DEFAULT_RUN;
    let mut wins = 0;
    for fold in 0..run.cfg.folds {
        let guard = run
            .report
            .fold_metric("guard-8", fold)
            .expect("guard fold metrics");
        let thresh = run
            .report
            .fold_metric("threshold-opt", fold)
            .expect("threshold fold metrics");
        if guard.flips <= thresh.flips {
            wins += 1;
        }
    }
    assert!(
        wins >= 4,
        "guard-8 must flip no more than threshold-opt in at least 4 of 5 folds, won {wins}"
    );
    pass(5, "flips parsimony");
}

#[test]
fn criterion_6_sweep_identical_rows_on_degenerate_pool() {
    let dir = tempfile::tempdir().unwrap();
    let data = synthetic_dataset(1200, 661);
    let (schema_path, data_path) = write_inputs(dir.path(), &data);

    // Degenerate pools: every member identical, so the nearest neighbors of
    // any triggered instance score identically regardless of t.
    let schema = acceptance_schema();
    let member = |pa: u32| {
        Instance::new(vec![
            Value::Num(0.0),
            Value::Num(0.0),
            Value::Cat(pa),
            Value::Cat(0),
        ])
    };
    let pool_paths = [dir.path().join("pool0.csv"), dir.path().join("pool1.csv")];
    for (pa, path) in pool_paths.iter().enumerate() {
        let members: Vec<Instance> = (0..10).map(|_| member(pa as u32)).collect();
        Dataset::new(schema.clone(), members)
            .unwrap()
            .write_to_path(path, b',')
            .unwrap();
    }

    let mut cfg = ExperimentConfig::new(schema_path, data_path);
    cfg.seed = 13;
    cfg.bias_injection = Some(BiasInjection {
        pa_value: 0,
        flip_probability: 0.3,
    });
    cfg.pools = PoolConfig::External {
        unprivileged: pool_paths[0].clone(),
        privileged: pool_paths[1].clone(),
    };
    let report = sweep_augmentations(&cfg).unwrap();
    assert_eq!(report.rows.len(), 4, "sweep must emit one row per t");

    let triggered: usize = report
        .timing
        .methods
        .iter()
        .filter_map(|m| m.triggered)
        .sum();
    assert!(triggered > 0, "degenerate-pool sweep must still trigger");

    let normalized: Vec<String> = report
        .rows
        .iter()
        .map(|row| {
            let mut v = serde_json::to_value(row).unwrap();
            v["method"] = serde_json::Value::String("guard".to_string());
            serde_json::to_string(&v).unwrap()
        })
        .collect();
    for (i, row) in normalized.iter().enumerate().skip(1) {
        assert_eq!(
            row, &normalized[0],
            "row {i} differs from row 0 despite identical augmentation scores"
        );
    }
    pass(6, "sweep rows identical on degenerate pool");
}

#[test]
fn criterion_7_timing_sanity() {
    let run = &*DEFAULT_RUN;
    let timing = run_bench(&run.cfg).unwrap();

    let baseline = timing
        .methods
        .iter()
        .find(|m| m.method == "baseline")
        .expect("baseline timing");
    assert!(baseline.total_seconds > 0.0);

    let triggered: usize = timing.methods.iter().filter_map(|m| m.triggered).sum();
    assert!(triggered > 0, "biased run must trigger instances");
    assert!(
        timing.ratio >= 1.0,
        "guarding does strictly more work than scoring, ratio {}",
        timing.ratio
    );
    let overhead = timing
        .per_triggered_overhead_seconds
        .expect("triggered instances present");
    assert!(
        overhead < 1.0,
        "per-triggered overhead {overhead:.6} s must stay sub-second"
    );

    let json = serde_json::to_string_pretty(&timing).unwrap();
    let parsed: TimingReport = serde_json::from_str(&json).unwrap();
    assert_eq!(parsed, timing, "timing report must round-trip losslessly");
    pass(7, "timing sanity");
}

#[test]
fn criterion_8_full_determinism() {
    let run = &*DEFAULT_RUN;
    let start = Instant::now();
    let again = run_experiment(&run.cfg).unwrap();
    let second_seconds = start.elapsed().as_secs_f64();
    assert_eq!(
        run.report.to_json(),
        again.to_json(),
        "identical config and seed must reproduce the report byte for byte"
    );
    assert!(
        run.run_seconds < 300.0 && second_seconds < 300.0,
        "runs took {:.1} s and {:.1} s",
        run.run_seconds,
        second_seconds
    );
    pass(8, "full determinism");
}

#[test]
fn criterion_9_external_data_advisory() {
    let Ok(dir) = std::env::var("FAIRGUARD_ACCEPTANCE_DATA") else {
        println!(
            "[acceptance] criterion 9 (external data): SKIP \
             (advisory; set FAIRGUARD_ACCEPTANCE_DATA to a directory with schema.toml and data.csv)"
        );
        return;
    };
    let dir = std::path::PathBuf::from(dir);
    let mut cfg = ExperimentConfig::new(dir.join("schema.toml"), dir.join("data.csv"));
    cfg.seed = 7;
    let report = run_experiment(&cfg).unwrap();
    let baseline_eod = report
        .row("baseline")
        .and_then(|r| r.eod.mean)
        .expect("baseline eod defined");
    let best_guard_eod = report
        .rows
        .iter()
        .filter(|r| r.method.starts_with("guard-"))
        .filter_map(|r| r.eod.mean)
        .fold(f64::INFINITY, f64::min);
    assert!(
        best_guard_eod < baseline_eod,
        "best guard EOD {best_guard_eod:.5} must beat baseline {baseline_eod:.5}"
    );
    pass(9, "external data advisory");
}
