//! Shared fixtures and independent oracle implementations for the
//! integration suites. The oracles recompute every quantity from scratch
//! with plain loops and never call into the library paths they check.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use fairguard::dataset::{Column, Dataset, Instance, Schema, Value};

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Two legitimate numeric features, a binary protected attribute and a
/// binary label.
pub fn acceptance_schema() -> Arc<Schema> {
    Arc::new(
        Schema::new(
            vec![
                Column::numeric("f1"),
                Column::numeric("f2"),
                Column::categorical("pa", &["u", "p"]),
                Column::categorical("y", &["neg", "pos"]),
            ],
            ("pa", "p"),
            ("y", "pos"),
        )
        .unwrap(),
    )
}

/// Synthetic task where the true label is a logistic function of the two
/// features and independent of the protected attribute. Group-dependent
/// bias is injected later, at training time only.
pub fn synthetic_dataset(m: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..m)
        .map(|_| {
            let f1: f64 = rng.sample(StandardNormal);
            let f2: f64 = rng.sample(StandardNormal);
            let p = sigmoid(1.8 * f1 + 1.1 * f2);
            let y = u32::from(rng.gen::<f64>() < p);
            let pa = u32::from(rng.gen::<f64>() < 0.5);
            Instance::new(vec![
                Value::Num(f1),
                Value::Num(f2),
                Value::Cat(pa),
                Value::Cat(y),
            ])
        })
        .collect();
    Dataset::new(acceptance_schema(), rows).unwrap()
}

pub fn write_inputs(dir: &Path, data: &Dataset) -> (PathBuf, PathBuf) {
    let schema_path = dir.join("schema.toml");
    let data_path = dir.join("data.csv");
    std::fs::write(&schema_path, data.schema().to_toml_string()).unwrap();
    data.write_to_path(&data_path, b',').unwrap();
    (schema_path, data_path)
}

pub mod oracle {
    //! Brute-force metric and grid-search reimplementations.

    pub fn accuracy(labels: &[u8], preds: &[u8]) -> f64 {
        let mut correct = 0usize;
        for i in 0..labels.len() {
            if labels[i] == preds[i] {
                correct += 1;
            }
        }
        correct as f64 / labels.len() as f64
    }

    pub fn flips(a: &[u8], b: &[u8]) -> u64 {
        let mut n = 0u64;
        for i in 0..a.len() {
            if a[i] != b[i] {
                n += 1;
            }
        }
        n
    }

    fn group_rate(
        labels: &[u8],
        preds: &[u8],
        pa: &[u8],
        group: u8,
        ground_truth: u8,
    ) -> Option<f64> {
        let mut hits = 0u64;
        let mut total = 0u64;
        for i in 0..labels.len() {
            if pa[i] == group && labels[i] == ground_truth {
                total += 1;
                hits += u64::from(preds[i] == 1);
            }
        }
        if total == 0 {
            None
        } else {
            Some(hits as f64 / total as f64)
        }
    }

    /// |TPR gap|; None when either group lacks ground-truth positives.
    pub fn delta_tpr(labels: &[u8], preds: &[u8], pa: &[u8]) -> Option<f64> {
        let p = group_rate(labels, preds, pa, 1, 1)?;
        let u = group_rate(labels, preds, pa, 0, 1)?;
        Some((p - u).abs())
    }

    /// |FPR gap|; None when either group lacks ground-truth negatives.
    pub fn delta_fpr(labels: &[u8], preds: &[u8], pa: &[u8]) -> Option<f64> {
        let p = group_rate(labels, preds, pa, 1, 0)?;
        let u = group_rate(labels, preds, pa, 0, 0)?;
        Some((p - u).abs())
    }

    /// (eod, delta_tpr, delta_fpr); None when any underlying rate is
    /// undefined.
    pub fn equalized_odds(labels: &[u8], preds: &[u8], pa: &[u8]) -> Option<(f64, f64, f64)> {
        let delta_tpr = delta_tpr(labels, preds, pa)?;
        let delta_fpr = delta_fpr(labels, preds, pa)?;
        Some((0.5 * (delta_tpr + delta_fpr), delta_tpr, delta_fpr))
    }

    /// Positive-rate ratio, unprivileged over privileged. None when a group
    /// is empty or the privileged rate is zero while the unprivileged is
    /// not; Some(1.0) when both rates are zero.
    pub fn disparate_impact(preds: &[u8], pa: &[u8]) -> Option<f64> {
        let mut pos = [0u64; 2];
        let mut n = [0u64; 2];
        for i in 0..preds.len() {
            n[pa[i] as usize] += 1;
            pos[pa[i] as usize] += u64::from(preds[i] == 1);
        }
        if n[0] == 0 || n[1] == 0 {
            return None;
        }
        let unpriv = pos[0] as f64 / n[0] as f64;
        let privileged = pos[1] as f64 / n[1] as f64;
        if privileged == 0.0 {
            if unpriv == 0.0 {
                return Some(1.0);
            }
            return None;
        }
        Some(unpriv / privileged)
    }

    /// Exhaustive re-search of the per-group threshold grid with the full
    /// tie-break chain: equalized odds, then accuracy, then L1 proximity to
    /// 0.5, then lexicographic (iteration order keeps earlier candidates on
    /// full ties).
    pub fn fit_thresholds(
        scores: &[f64],
        labels: &[u8],
        pa: &[u8],
        resolution: usize,
    ) -> (f64, f64) {
        let r = resolution as f64;
        let mut best: Option<(f64, f64, f64, (f64, f64))> = None;
        for i in 0..=resolution {
            for j in 0..=resolution {
                let tp = i as f64 / r;
                let tu = j as f64 / r;
                let preds: Vec<u8> = scores
                    .iter()
                    .zip(pa)
                    .map(|(&s, &g)| u8::from(s >= if g == 1 { tp } else { tu }))
                    .collect();
                let (eod, _, _) =
                    equalized_odds(labels, &preds, pa).expect("caller ensures defined rates");
                let acc = accuracy(labels, &preds);
                let l1 = (tp - 0.5).abs() + (tu - 0.5).abs();
                let better = match &best {
                    None => true,
                    Some((be, ba, bl, _)) => {
                        eod < *be
                            || (eod == *be && acc > *ba)
                            || (eod == *be && acc == *ba && l1 < *bl)
                    }
                };
                if better {
                    best = Some((eod, acc, l1, (tp, tu)));
                }
            }
        }
        best.expect("nonempty grid").3
    }

    /// Exhaustive re-search of the reject-option theta grid; ties keep the
    /// smaller theta.
    pub fn fit_reject_option(scores: &[f64], labels: &[u8], pa: &[u8], grid: &[f64]) -> f64 {
        let mut thetas = grid.to_vec();
        thetas.sort_by(|a, b| a.partial_cmp(b).unwrap());
        thetas.dedup();
        let mut best: Option<(f64, f64)> = None;
        for &theta in &thetas {
            let preds: Vec<u8> = scores
                .iter()
                .zip(pa)
                .map(|(&s, &g)| {
                    if (s - 0.5).abs() < theta {
                        1 - g
                    } else {
                        u8::from(s >= 0.5)
                    }
                })
                .collect();
            let (eod, _, _) =
                equalized_odds(labels, &preds, pa).expect("caller ensures defined rates");
            let better = match best {
                None => true,
                Some((be, _)) => eod < be,
            };
            if better {
                best = Some((eod, theta));
            }
        }
        best.expect("nonempty grid").1
    }
}
