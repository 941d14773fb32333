//! Synthetic pool provider: pre-generated instances conditioned on one
//! protected-attribute value, queried later by nearest-neighbor search.
//!
//! Two construction paths share the [`SyntheticPool`] contract. The native
//! sampler bootstraps the matching training group and jitters numeric cells
//! with Gaussian noise at a Silverman-rule bandwidth, occasionally resampling
//! categorical cells from the group marginal. External pools ingest rows
//! produced by any outside generator, in plain dataset file format.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use thiserror::Error;

use crate::dataset::{
    load_dataset_delim, ColumnKind, DataError, Dataset, Instance, Schema, Value, DEFAULT_DELIMITER,
};

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("group with protected value {pa_value} has {found} rows; at least 2 are required")]
    GroupTooSmall { pa_value: u8, found: usize },
    #[error("{count} rows carry a protected value other than {pa_value}")]
    WrongGroupRows { count: usize, pa_value: u8 },
    #[error("pool member {row}: protected value differs from the pool's {pa_value}")]
    MemberWrongGroup { row: usize, pa_value: u8 },
    #[error("pool must contain at least one member")]
    EmptyPool,
    #[error("requested {0} members; count must be at least 1")]
    BadCount(usize),
    #[error("resample probability {0} is not in [0, 1]")]
    BadResampleProbability(f64),
    #[error("pool and reference datasets use different schemas")]
    SchemaMismatch,
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Where a pool's members came from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Provenance {
    Native { seed: u64 },
    External { path: PathBuf },
}

/// Instances all carrying one protected-attribute value.
///
/// The conditioning invariant (every member's protected value equals
/// `pa_value`, every member conforms to the schema) is checked on every
/// construction path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyntheticPool {
    schema: Arc<Schema>,
    pa_value: u8,
    members: Vec<Instance>,
    provenance: Provenance,
}

impl SyntheticPool {
    pub fn new(
        schema: Arc<Schema>,
        pa_value: u8,
        members: Vec<Instance>,
        provenance: Provenance,
    ) -> Result<Self, GeneratorError> {
        if members.is_empty() {
            return Err(GeneratorError::EmptyPool);
        }
        let as_dataset = Dataset::new(Arc::clone(&schema), members)?;
        for (i, member) in as_dataset.rows().iter().enumerate() {
            if schema.pa_value(member) != pa_value {
                return Err(GeneratorError::MemberWrongGroup {
                    row: i + 1,
                    pa_value,
                });
            }
        }
        Ok(SyntheticPool {
            schema,
            pa_value,
            members: as_dataset.rows().to_vec(),
            provenance,
        })
    }

    pub fn schema(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn pa_value(&self) -> u8 {
        self.pa_value
    }

    pub fn members(&self) -> &[Instance] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// View of the members as a dataset, e.g. for writing a pool cache file.
    pub fn as_dataset(&self) -> Dataset {
        Dataset::new(Arc::clone(&self.schema), self.members.clone())
            .expect("pool members are schema-valid")
    }
}

/// Conditional sampler over one training group: seeded bootstrap of the group
/// rows with per-column kernel jitter.
#[derive(Debug, Clone)]
pub struct NativeSampler {
    schema: Arc<Schema>,
    pa_value: u8,
    group_rows: Vec<Instance>,
    /// Per-column Gaussian bandwidth, None for categorical columns.
    bandwidths: Vec<Option<f64>>,
    /// Per-column empirical category frequencies within the group, None for
    /// numeric columns and the protected column.
    marginals: Vec<Option<Vec<f64>>>,
    resample_probability: f64,
    seed: u64,
}

pub const DEFAULT_RESAMPLE_PROBABILITY: f64 = 0.1;

/// Fits the sampler on the training rows whose protected value is
/// `pa_value`. Numeric bandwidths follow Silverman's rule,
/// 1.06 * stddev * count^(-1/5), with the population standard deviation.
pub fn fit_native_sampler(
    train: &Dataset,
    pa_value: u8,
    seed: u64,
) -> Result<NativeSampler, GeneratorError> {
    let schema = train.schema_arc();
    let group_rows: Vec<Instance> = train
        .rows()
        .iter()
        .filter(|r| schema.pa_value(r) == pa_value)
        .cloned()
        .collect();
    if group_rows.len() < 2 {
        return Err(GeneratorError::GroupTooSmall {
            pa_value,
            found: group_rows.len(),
        });
    }
    let n = group_rows.len() as f64;
    let mut bandwidths = Vec::with_capacity(schema.n_columns());
    let mut marginals = Vec::with_capacity(schema.n_columns());
    for (col, column) in schema.columns().iter().enumerate() {
        match &column.kind {
            ColumnKind::Numeric => {
                let mut sum = 0.0;
                for r in &group_rows {
                    if let Value::Num(x) = r.value(col) {
                        sum += x;
                    }
                }
                let mean = sum / n;
                let mut sq = 0.0;
                for r in &group_rows {
                    if let Value::Num(x) = r.value(col) {
                        sq += (x - mean) * (x - mean);
                    }
                }
                let stddev = (sq / n).sqrt();
                bandwidths.push(Some(1.06 * stddev * n.powf(-0.2)));
                marginals.push(None);
            }
            ColumnKind::Categorical(cats) => {
                bandwidths.push(None);
                if col == schema.protected_col() {
                    marginals.push(None);
                } else {
                    let mut freq = vec![0.0; cats.len()];
                    for r in &group_rows {
                        if let Value::Cat(c) = r.value(col) {
                            freq[*c as usize] += 1.0;
                        }
                    }
                    for f in &mut freq {
                        *f /= n;
                    }
                    marginals.push(Some(freq));
                }
            }
        }
    }
    Ok(NativeSampler {
        schema: Arc::clone(schema),
        pa_value,
        group_rows,
        bandwidths,
        marginals,
        resample_probability: DEFAULT_RESAMPLE_PROBABILITY,
        seed,
    })
}

impl NativeSampler {
    pub fn pa_value(&self) -> u8 {
        self.pa_value
    }

    pub fn group_size(&self) -> usize {
        self.group_rows.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn bandwidth(&self, col: usize) -> Option<f64> {
        self.bandwidths[col]
    }

    pub fn resample_probability(&self) -> f64 {
        self.resample_probability
    }

    pub fn with_resample_probability(mut self, p: f64) -> Result<Self, GeneratorError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(GeneratorError::BadResampleProbability(p));
        }
        self.resample_probability = p;
        Ok(self)
    }

    /// Draws `count` members: pick a group row, jitter numeric cells with
    /// zero-mean Gaussian noise at the column bandwidth, independently
    /// resample each non-protected categorical cell from the group marginal
    /// with the configured probability, and force the protected cell to the
    /// conditioning value. Deterministic given the seed.
    pub fn generate(&self, count: usize, seed: u64) -> Result<SyntheticPool, GeneratorError> {
        if count == 0 {
            return Err(GeneratorError::BadCount(count));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pa_col = self.schema.protected_col();
        let pa_cat = self.schema.protected_category(self.pa_value);
        let mut members = Vec::with_capacity(count);
        for _ in 0..count {
            let base = &self.group_rows[rng.gen_range(0..self.group_rows.len())];
            let mut values = Vec::with_capacity(base.len());
            for (col, cell) in base.values().iter().enumerate() {
                let value = match cell {
                    Value::Num(x) => {
                        let bw = self.bandwidths[col].unwrap_or(0.0);
                        if bw > 0.0 {
                            let noise: f64 = rng.sample(StandardNormal);
                            Value::Num(x + noise * bw)
                        } else {
                            Value::Num(*x)
                        }
                    }
                    Value::Cat(c) => {
                        if col == pa_col {
                            Value::Cat(pa_cat)
                        } else if let Some(freq) = &self.marginals[col] {
                            if self.resample_probability > 0.0
                                && rng.gen::<f64>() < self.resample_probability
                            {
                                Value::Cat(sample_category(freq, rng.gen::<f64>()))
                            } else {
                                Value::Cat(*c)
                            }
                        } else {
                            Value::Cat(*c)
                        }
                    }
                };
                values.push(value);
            }
            members.push(Instance::new(values));
        }
        SyntheticPool::new(
            Arc::clone(&self.schema),
            self.pa_value,
            members,
            Provenance::Native { seed },
        )
    }
}

fn sample_category(freq: &[f64], u: f64) -> u32 {
    let mut cumulative = 0.0;
    for (c, f) in freq.iter().enumerate() {
        cumulative += f;
        if u < cumulative {
            return c as u32;
        }
    }
    // Float accumulation can land u just past the final cumulative sum.
    (freq.len() - 1) as u32
}

/// Ingests a pre-generated pool from a dataset-format file. Every row must
/// already carry the conditioning protected value; any violation rejects the
/// whole file with a violation count.
pub fn load_external_pool(
    path: impl AsRef<Path>,
    schema: &Arc<Schema>,
    pa_value: u8,
) -> Result<SyntheticPool, GeneratorError> {
    load_external_pool_delim(path, schema, pa_value, DEFAULT_DELIMITER)
}

pub fn load_external_pool_delim(
    path: impl AsRef<Path>,
    schema: &Arc<Schema>,
    pa_value: u8,
    delimiter: u8,
) -> Result<SyntheticPool, GeneratorError> {
    let d = load_dataset_delim(path.as_ref(), schema, delimiter)?;
    let wrong = d
        .rows()
        .iter()
        .filter(|r| schema.pa_value(r) != pa_value)
        .count();
    if wrong > 0 {
        return Err(GeneratorError::WrongGroupRows {
            count: wrong,
            pa_value,
        });
    }
    SyntheticPool::new(
        Arc::clone(schema),
        pa_value,
        d.rows().to_vec(),
        Provenance::External {
            path: path.as_ref().to_path_buf(),
        },
    )
}

/// Per-column divergence between a pool and a reference dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DivergenceReport {
    pub numeric: Vec<NumericDivergence>,
    pub categorical: Vec<CategoricalDivergence>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NumericDivergence {
    pub column: String,
    /// |mean(pool) - mean(reference)| in reference-stddev units.
    pub mean_gap: f64,
    /// stddev(pool) / stddev(reference); 1 when both are zero.
    pub stddev_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoricalDivergence {
    pub column: String,
    /// Total variation distance between category frequency vectors.
    pub tv_distance: f64,
}

pub fn distribution_report(
    pool: &SyntheticPool,
    reference: &Dataset,
) -> Result<DivergenceReport, GeneratorError> {
    if **pool.schema() != *reference.schema() {
        return Err(GeneratorError::SchemaMismatch);
    }
    let schema = pool.schema();
    let moments = |rows: &[Instance], col: usize| {
        let n = rows.len() as f64;
        let mut sum = 0.0;
        for r in rows {
            if let Value::Num(x) = r.value(col) {
                sum += x;
            }
        }
        let mean = sum / n;
        let mut sq = 0.0;
        for r in rows {
            if let Value::Num(x) = r.value(col) {
                sq += (x - mean) * (x - mean);
            }
        }
        (mean, (sq / n).sqrt())
    };
    let frequencies = |rows: &[Instance], col: usize, cats: usize| {
        let mut freq = vec![0.0; cats];
        for r in rows {
            if let Value::Cat(c) = r.value(col) {
                freq[*c as usize] += 1.0;
            }
        }
        for f in &mut freq {
            *f /= rows.len() as f64;
        }
        freq
    };

    let mut numeric = Vec::new();
    let mut categorical = Vec::new();
    for (col, column) in schema.columns().iter().enumerate() {
        match &column.kind {
            ColumnKind::Numeric => {
                let (pool_mean, pool_std) = moments(pool.members(), col);
                let (ref_mean, ref_std) = moments(reference.rows(), col);
                let diff = (pool_mean - ref_mean).abs();
                let mean_gap = if ref_std > 0.0 {
                    diff / ref_std
                } else if diff == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                };
                let stddev_ratio = if ref_std > 0.0 {
                    pool_std / ref_std
                } else if pool_std == 0.0 {
                    1.0
                } else {
                    f64::INFINITY
                };
                numeric.push(NumericDivergence {
                    column: column.name.clone(),
                    mean_gap,
                    stddev_ratio,
                });
            }
            ColumnKind::Categorical(cats) => {
                let p = frequencies(pool.members(), col, cats.len());
                let q = frequencies(reference.rows(), col, cats.len());
                let tv = 0.5
                    * p.iter()
                        .zip(&q)
                        .map(|(a, b)| (a - b).abs())
                        .sum::<f64>();
                categorical.push(CategoricalDivergence {
                    column: column.name.clone(),
                    tv_distance: tv,
                });
            }
        }
    }
    Ok(DivergenceReport {
        numeric,
        categorical,
    })
}

impl std::fmt::Display for DivergenceReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{:<20} {:>12} {:>14}", "numeric", "mean_gap", "stddev_ratio")?;
        for n in &self.numeric {
            writeln!(
                f,
                "{:<20} {:>12.5} {:>14.5}",
                n.column, n.mean_gap, n.stddev_ratio
            )?;
        }
        writeln!(f, "{:<20} {:>12}", "categorical", "tv_distance")?;
        for c in &self.categorical {
            writeln!(f, "{:<20} {:>12.5}", c.column, c.tv_distance)?;
        }
        Ok(())
    }
}
