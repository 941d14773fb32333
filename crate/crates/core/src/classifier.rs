//! Black-box predictor interface and a native reference classifier: a bagged
//! ensemble of Gini-grown decision trees scoring the favorable class as the
//! mean of reached leaf fractions.
//!
//! The guardrail depends only on [`Predictor`], so any scorer can stand in
//! for the bundled forest, including externally produced score tables.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ColumnKind, Dataset, Instance, Schema, Value};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set has {m} rows, fewer than the minimum leaf size {min_leaf}")]
    TooFewRows { m: usize, min_leaf: usize },
    #[error("forest config requests zero trees")]
    NoTrees,
    #[error("features-per-split fraction {0} is not in (0, 1]")]
    BadFraction(f64),
}

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("instance has {found} cells but the model's schema has {expected}")]
    SchemaMismatch { expected: usize, found: usize },
    #[error("instance cell {column} does not match the model's schema")]
    CellMismatch { column: usize },
    #[error("ensemble contains no trees")]
    EmptyEnsemble,
    #[error("no score recorded for this instance")]
    UnknownInstance,
    #[error("unknown row id {0}")]
    UnknownRow(u64),
}

#[derive(Debug, Error)]
pub enum ScoresError {
    #[error("scores file declares no column `{0}`")]
    MissingColumn(String),
    #[error("row id {id}: probability {value} outside [0, 1]")]
    OutOfRange { id: u64, value: f64 },
    #[error("row {row}: cannot parse `{value}` as {what}")]
    Parse {
        row: usize,
        value: String,
        what: &'static str,
    },
    #[error("duplicate row id {0}")]
    DuplicateId(u64),
    #[error("scores file is empty")]
    Empty,
    #[error("no score for dataset row {0}")]
    MissingScore(usize),
    #[error("rows {a} and {b} are identical instances with different scores")]
    AmbiguousInstance { a: u64, b: u64 },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed delimited file: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("unsupported model file version {0}")]
    Version(u32),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed model file: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Black-box scoring interface: probability of the favorable class.
///
/// Contract: scores lie in [0, 1] and are deterministic for a fixed model.
pub trait Predictor {
    fn score(&self, x: &Instance) -> Result<f64, PredictError>;
}

/// How many candidate features each split considers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FeatureSubset {
    /// ceil(sqrt(n_features)), the usual forest default.
    Sqrt,
    /// ceil(fraction * n_features), clamped to [1, n_features].
    Fraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub feature_subset: FeatureSubset,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            trees: 100,
            max_depth: 12,
            min_leaf: 2,
            feature_subset: FeatureSubset::Sqrt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
enum SplitTest {
    /// Numeric cell <= threshold goes left.
    NumericLe(f64),
    /// Categorical cell equal to the category goes left (one-vs-rest).
    CategoryEq(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf {
        fraction: f64,
    },
    Split {
        column: usize,
        test: SplitTest,
        left: u32,
        right: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Tree {
    nodes: Vec<Node>,
    root: u32,
}

impl Tree {
    fn score(&self, x: &Instance) -> Result<f64, PredictError> {
        let mut at = self.root;
        loop {
            match &self.nodes[at as usize] {
                Node::Leaf { fraction } => return Ok(*fraction),
                Node::Split {
                    column,
                    test,
                    left,
                    right,
                } => {
                    let go_left = match (test, x.value(*column)) {
                        (SplitTest::NumericLe(t), Value::Num(v)) => v <= t,
                        (SplitTest::CategoryEq(c), Value::Cat(v)) => v == c,
                        _ => return Err(PredictError::CellMismatch { column: *column }),
                    };
                    at = if go_left { *left } else { *right };
                }
            }
        }
    }
}

const MODEL_FILE_VERSION: u32 = 1;

/// Bagged decision-tree ensemble. Immutable once trained; `score` is pure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForestModel {
    version: u32,
    schema: Arc<Schema>,
    config: ForestConfig,
    seed: u64,
    trees: Vec<Tree>,
    /// Per-tree bootstrap membership over training rows. Dropped on save;
    /// only freshly trained models answer out-of-bag queries.
    #[serde(skip)]
    in_bag: Vec<Vec<bool>>,
}

impl ForestModel {
    pub fn schema(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    /// Score using only trees whose bootstrap sample missed the given
    /// training row. Falls back to the full ensemble in the vanishingly rare
    /// case that every tree sampled the row, and for loaded models (bag
    /// membership is not persisted).
    pub fn oob_score(&self, x: &Instance, train_row: usize) -> Result<f64, PredictError> {
        if self.in_bag.is_empty() {
            return self.score(x);
        }
        self.check_width(x)?;
        let mut sum = 0.0;
        let mut n = 0usize;
        for (tree, bag) in self.trees.iter().zip(&self.in_bag) {
            if !bag[train_row] {
                sum += tree.score(x)?;
                n += 1;
            }
        }
        if n == 0 {
            return self.score(x);
        }
        Ok(sum / n as f64)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelFileError> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelFileError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelFileError> {
        let model: ForestModel = serde_json::from_str(text)?;
        if model.version != MODEL_FILE_VERSION {
            return Err(ModelFileError::Version(model.version));
        }
        Ok(model)
    }

    fn check_width(&self, x: &Instance) -> Result<(), PredictError> {
        if x.len() != self.schema.n_columns() {
            return Err(PredictError::SchemaMismatch {
                expected: self.schema.n_columns(),
                found: x.len(),
            });
        }
        Ok(())
    }
}

impl Predictor for ForestModel {
    fn score(&self, x: &Instance) -> Result<f64, PredictError> {
        if self.trees.is_empty() {
            return Err(PredictError::EmptyEnsemble);
        }
        self.check_width(x)?;
        let mut sum = 0.0;
        for tree in &self.trees {
            sum += tree.score(x)?;
        }
        Ok(sum / self.trees.len() as f64)
    }
}

/// Trains a bagged forest: each tree fits a bootstrap resample of the
/// training rows with Gini-impurity greedy splits over a random feature
/// subset per node. Deterministic given the seed.
pub fn train_forest(
    train: &Dataset,
    config: &ForestConfig,
    seed: u64,
) -> Result<ForestModel, TrainError> {
    if config.trees == 0 {
        return Err(TrainError::NoTrees);
    }
    if train.len() < config.min_leaf {
        return Err(TrainError::TooFewRows {
            m: train.len(),
            min_leaf: config.min_leaf,
        });
    }
    let schema = train.schema();
    let features: Vec<usize> = (0..schema.n_columns())
        .filter(|&c| c != schema.label_col())
        .collect();
    let per_split = match config.feature_subset {
        FeatureSubset::Sqrt => (features.len() as f64).sqrt().ceil() as usize,
        FeatureSubset::Fraction(f) => {
            if !(f > 0.0 && f <= 1.0) {
                return Err(TrainError::BadFraction(f));
            }
            (f * features.len() as f64).ceil() as usize
        }
    };
    let per_split = per_split.clamp(1, features.len());
    let labels = train.labels();

    let mut root_rng = ChaCha8Rng::seed_from_u64(seed);
    let tree_seeds: Vec<u64> = (0..config.trees).map(|_| root_rng.gen()).collect();

    let mut trees = Vec::with_capacity(config.trees);
    let mut in_bag = Vec::with_capacity(config.trees);
    for tree_seed in tree_seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(tree_seed);
        let m = train.len();
        let mut bag = vec![false; m];
        let mut samples = Vec::with_capacity(m);
        for _ in 0..m {
            let pick = rng.gen_range(0..m);
            bag[pick] = true;
            samples.push(pick);
        }
        let mut builder = TreeBuilder {
            train,
            labels: &labels,
            features: &features,
            per_split,
            config,
            rng,
            nodes: Vec::new(),
        };
        let root = builder.grow(samples, 0);
        trees.push(Tree {
            nodes: builder.nodes,
            root,
        });
        in_bag.push(bag);
    }
    Ok(ForestModel {
        version: MODEL_FILE_VERSION,
        schema: Arc::clone(train.schema_arc()),
        config: *config,
        seed,
        trees,
        in_bag,
    })
}

struct TreeBuilder<'a> {
    train: &'a Dataset,
    labels: &'a [u8],
    features: &'a [usize],
    per_split: usize,
    config: &'a ForestConfig,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

struct Candidate {
    column: usize,
    test: SplitTest,
    weighted_impurity: f64,
}

fn gini(favorable: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let p = favorable as f64 / total as f64;
    let q = 1.0 - p;
    1.0 - p * p - q * q
}

impl TreeBuilder<'_> {
    fn grow(&mut self, samples: Vec<usize>, depth: usize) -> u32 {
        let total = samples.len();
        let favorable = samples.iter().filter(|&&i| self.labels[i] == 1).count();
        let fraction = favorable as f64 / total as f64;
        let parent_gini = gini(favorable, total);
        let stop = depth >= self.config.max_depth
            || favorable == 0
            || favorable == total
            || total < 2 * self.config.min_leaf;
        let candidate = if stop {
            None
        } else {
            self.best_split(&samples, parent_gini)
        };
        match candidate {
            None => {
                self.nodes.push(Node::Leaf { fraction });
                (self.nodes.len() - 1) as u32
            }
            Some(c) => {
                let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
                    samples.iter().partition(|&&i| {
                        match (&c.test, self.train.row(i).value(c.column)) {
                            (SplitTest::NumericLe(t), Value::Num(v)) => v <= t,
                            (SplitTest::CategoryEq(cat), Value::Cat(v)) => v == cat,
                            _ => unreachable!("split kind matches column kind"),
                        }
                    });
                let left = self.grow(left_rows, depth + 1);
                let right = self.grow(right_rows, depth + 1);
                self.nodes.push(Node::Split {
                    column: c.column,
                    test: c.test,
                    left,
                    right,
                });
                (self.nodes.len() - 1) as u32
            }
        }
    }

    fn best_split(&mut self, samples: &[usize], parent_gini: f64) -> Option<Candidate> {
        // Random feature subset, partial Fisher-Yates.
        let mut pool: Vec<usize> = self.features.to_vec();
        for i in 0..self.per_split {
            let j = self.rng.gen_range(i..pool.len());
            pool.swap(i, j);
        }
        let mut best: Option<Candidate> = None;
        for &column in &pool[..self.per_split] {
            let candidate = match &self.train.schema().columns()[column].kind {
                ColumnKind::Numeric => self.best_numeric_split(samples, column),
                ColumnKind::Categorical(cats) => {
                    self.best_categorical_split(samples, column, cats.len())
                }
            };
            if let Some(c) = candidate {
                let better = match &best {
                    None => c.weighted_impurity + 1e-12 < parent_gini,
                    Some(b) => c.weighted_impurity + 1e-12 < b.weighted_impurity,
                };
                if better {
                    best = Some(c);
                }
            }
        }
        best
    }

    fn best_numeric_split(&self, samples: &[usize], column: usize) -> Option<Candidate> {
        let mut pairs: Vec<(f64, u8)> = samples
            .iter()
            .map(|&i| match self.train.row(i).value(column) {
                Value::Num(v) => (*v, self.labels[i]),
                Value::Cat(_) => unreachable!("numeric column"),
            })
            .collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite values"));
        let total = pairs.len();
        let total_fav: usize = pairs.iter().filter(|(_, y)| *y == 1).count();

        let mut best: Option<Candidate> = None;
        let mut left_n = 0usize;
        let mut left_fav = 0usize;
        let mut i = 0;
        while i < total {
            // Advance over a run of equal values so the split keeps them
            // together.
            let v = pairs[i].0;
            while i < total && pairs[i].0 == v {
                left_n += 1;
                left_fav += usize::from(pairs[i].1 == 1);
                i += 1;
            }
            if i == total {
                break;
            }
            let right_n = total - left_n;
            if left_n < self.config.min_leaf || right_n < self.config.min_leaf {
                continue;
            }
            let wi = (left_n as f64 * gini(left_fav, left_n)
                + right_n as f64 * gini(total_fav - left_fav, right_n))
                / total as f64;
            let threshold = 0.5 * (v + pairs[i].0);
            let better = match &best {
                None => true,
                Some(b) => wi + 1e-12 < b.weighted_impurity,
            };
            if better {
                best = Some(Candidate {
                    column,
                    test: SplitTest::NumericLe(threshold),
                    weighted_impurity: wi,
                });
            }
        }
        best
    }

    fn best_categorical_split(
        &self,
        samples: &[usize],
        column: usize,
        n_categories: usize,
    ) -> Option<Candidate> {
        let mut count = vec![0usize; n_categories];
        let mut fav = vec![0usize; n_categories];
        for &i in samples {
            if let Value::Cat(c) = self.train.row(i).value(column) {
                count[*c as usize] += 1;
                fav[*c as usize] += usize::from(self.labels[i] == 1);
            }
        }
        let total = samples.len();
        let total_fav: usize = fav.iter().sum();
        let mut best: Option<Candidate> = None;
        for c in 0..n_categories {
            let left_n = count[c];
            let right_n = total - left_n;
            if left_n < self.config.min_leaf || right_n < self.config.min_leaf {
                continue;
            }
            let wi = (left_n as f64 * gini(fav[c], left_n)
                + right_n as f64 * gini(total_fav - fav[c], right_n))
                / total as f64;
            let better = match &best {
                None => true,
                Some(b) => wi + 1e-12 < b.weighted_impurity,
            };
            if better {
                best = Some(Candidate {
                    column,
                    test: SplitTest::CategoryEq(c as u32),
                    weighted_impurity: wi,
                });
            }
        }
        best
    }
}

/// Score table keyed by row id, loaded from a delimited file with columns
/// `row_id` and `probability`.
#[derive(Debug, Clone)]
pub struct ExternalScores {
    ordered: Vec<(u64, f64)>,
    by_id: HashMap<u64, f64>,
}

pub fn load_external_scores(path: impl AsRef<Path>) -> Result<ExternalScores, ScoresError> {
    let file = std::fs::File::open(path.as_ref())?;
    load_external_scores_reader(file)
}

pub fn load_external_scores_reader(
    reader: impl std::io::Read,
) -> Result<ExternalScores, ScoresError> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b',')
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let id_col = headers
        .iter()
        .position(|h| h == "row_id")
        .ok_or_else(|| ScoresError::MissingColumn("row_id".to_string()))?;
    let p_col = headers
        .iter()
        .position(|h| h == "probability")
        .ok_or_else(|| ScoresError::MissingColumn("probability".to_string()))?;

    let mut ordered = Vec::new();
    let mut by_id = HashMap::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let raw_id = record.get(id_col).unwrap_or("");
        let id: u64 = raw_id.parse().map_err(|_| ScoresError::Parse {
            row,
            value: raw_id.to_string(),
            what: "a row id",
        })?;
        let raw_p = record.get(p_col).unwrap_or("");
        let p: f64 = raw_p.parse().map_err(|_| ScoresError::Parse {
            row,
            value: raw_p.to_string(),
            what: "a probability",
        })?;
        if !(0.0..=1.0).contains(&p) {
            return Err(ScoresError::OutOfRange { id, value: p });
        }
        if by_id.insert(id, p).is_some() {
            return Err(ScoresError::DuplicateId(id));
        }
        ordered.push((id, p));
    }
    if ordered.is_empty() {
        return Err(ScoresError::Empty);
    }
    Ok(ExternalScores { ordered, by_id })
}

impl ExternalScores {
    pub fn len(&self) -> usize {
        self.ordered.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ordered.is_empty()
    }

    pub fn score_row(&self, id: u64) -> Result<f64, PredictError> {
        self.by_id
            .get(&id)
            .copied()
            .ok_or(PredictError::UnknownRow(id))
    }

    /// Binds the table to a dataset whose row positions are the row ids,
    /// yielding a [`Predictor`] that looks scores up by exact instance
    /// identity. Scoring any instance outside the bound set is an error.
    pub fn bind(&self, d: &Dataset) -> Result<TablePredictor, ScoresError> {
        let mut map: HashMap<Vec<CellKey>, (u64, f64)> = HashMap::new();
        for (i, row) in d.rows().iter().enumerate() {
            let id = i as u64;
            let score = self
                .by_id
                .get(&id)
                .copied()
                .ok_or(ScoresError::MissingScore(i))?;
            let key = instance_key(row);
            if let Some((prev_id, prev_score)) = map.get(&key) {
                if *prev_score != score {
                    return Err(ScoresError::AmbiguousInstance { a: *prev_id, b: id });
                }
            }
            map.insert(key, (id, score));
        }
        Ok(TablePredictor { map })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum CellKey {
    Num(u64),
    Cat(u32),
}

fn instance_key(x: &Instance) -> Vec<CellKey> {
    x.values()
        .iter()
        .map(|v| match v {
            Value::Num(f) => CellKey::Num(f.to_bits()),
            Value::Cat(c) => CellKey::Cat(*c),
        })
        .collect()
}

/// Lookup-backed predictor produced by [`ExternalScores::bind`].
#[derive(Debug, Clone)]
pub struct TablePredictor {
    map: HashMap<Vec<CellKey>, (u64, f64)>,
}

impl Predictor for TablePredictor {
    fn score(&self, x: &Instance) -> Result<f64, PredictError> {
        self.map
            .get(&instance_key(x))
            .map(|(_, s)| *s)
            .ok_or(PredictError::UnknownInstance)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Column, Instance, Value};
    use proptest::prelude::*;
    use rand::Rng;

    fn schema_1f() -> Arc<Schema> {
        Arc::new(
            Schema::new(
                vec![
                    Column::numeric("x"),
                    Column::categorical("pa", &["u", "p"]),
                    Column::categorical("y", &["no", "yes"]),
                ],
                ("pa", "p"),
                ("y", "yes"),
            )
            .unwrap(),
        )
    }

    fn row(x: f64, pa: u32, y: u32) -> Instance {
        Instance::new(vec![Value::Num(x), Value::Cat(pa), Value::Cat(y)])
    }

    /// 1-feature dataset, favorable iff x > 0, PA independent of x.
    fn separable(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..n)
            .map(|_| {
                let x: f64 = rng.gen_range(-10.0..10.0);
                row(x, rng.gen_range(0..2), u32::from(x > 0.0))
            })
            .collect();
        Dataset::new(schema_1f(), rows).unwrap()
    }

    #[test]
    fn learns_separable_data() {
        let train = separable(200, 1);
        let config = ForestConfig {
            trees: 16,
            ..Default::default()
        };
        let model = train_forest(&train, &config, 7).unwrap();
        assert!(model.score(&row(5.0, 0, 0)).unwrap() >= 0.95);
        assert!(model.score(&row(-5.0, 0, 0)).unwrap() <= 0.05);

        let held_out = separable(400, 99);
        let mut correct = 0;
        for r in held_out.rows() {
            let pred = u8::from(model.score(r).unwrap() >= 0.5);
            if pred == held_out.schema().label_value(r) {
                correct += 1;
            }
        }
        assert!(correct as f64 / held_out.len() as f64 >= 0.95);
    }

    #[test]
    fn degenerate_single_class_predicts_that_class() {
        let rows = (0..30).map(|i| row(i as f64, 0, 1)).collect();
        let train = Dataset::new(schema_1f(), rows).unwrap();
        let model = train_forest(&train, &ForestConfig::default(), 3).unwrap();
        assert_eq!(model.score(&row(123.0, 1, 0)).unwrap(), 1.0);
        assert_eq!(model.score(&row(-9.0, 0, 0)).unwrap(), 1.0);
    }

    #[test]
    fn training_is_deterministic() {
        let train = separable(150, 5);
        let config = ForestConfig {
            trees: 12,
            ..Default::default()
        };
        let a = train_forest(&train, &config, 11).unwrap();
        let b = train_forest(&train, &config, 11).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        let probe = row(0.37, 1, 0);
        assert_eq!(
            a.score(&probe).unwrap().to_bits(),
            b.score(&probe).unwrap().to_bits()
        );
    }

    #[test]
    fn single_leaf_and_two_tree_means() {
        // max_depth 0 forces a single root leaf holding the favorable
        // fraction of the bootstrap sample.
        let mut rows: Vec<Instance> = Vec::new();
        for i in 0..10 {
            rows.push(row(i as f64, 0, u32::from(i < 7)));
        }
        let train = Dataset::new(schema_1f(), rows).unwrap();
        let config = ForestConfig {
            trees: 1,
            max_depth: 0,
            ..Default::default()
        };
        let model = train_forest(&train, &config, 2).unwrap();
        let s = model.score(&row(0.0, 0, 0)).unwrap();
        assert!((0.0..=1.0).contains(&s));
        assert_eq!(model.n_trees(), 1);

        // Hand-assembled two-tree ensemble: leaves 0.2 and 0.6 average 0.4.
        let model = ForestModel {
            version: MODEL_FILE_VERSION,
            schema: schema_1f(),
            config: ForestConfig::default(),
            seed: 0,
            trees: vec![
                Tree {
                    nodes: vec![Node::Leaf { fraction: 0.2 }],
                    root: 0,
                },
                Tree {
                    nodes: vec![Node::Leaf { fraction: 0.6 }],
                    root: 0,
                },
            ],
            in_bag: Vec::new(),
        };
        assert_eq!(model.score(&row(1.0, 0, 0)).unwrap(), 0.4);
    }

    #[test]
    fn empty_ensemble_and_schema_mismatch_error() {
        let model = ForestModel {
            version: MODEL_FILE_VERSION,
            schema: schema_1f(),
            config: ForestConfig::default(),
            seed: 0,
            trees: Vec::new(),
            in_bag: Vec::new(),
        };
        assert!(matches!(
            model.score(&row(1.0, 0, 0)),
            Err(PredictError::EmptyEnsemble)
        ));

        let train = separable(50, 1);
        let model = train_forest(&train, &ForestConfig::default(), 1).unwrap();
        let narrow = Instance::new(vec![Value::Num(1.0)]);
        assert!(matches!(
            model.score(&narrow),
            Err(PredictError::SchemaMismatch { .. })
        ));
    }

    #[test]
    fn model_file_round_trip_preserves_scores() {
        let train = separable(120, 8);
        let model = train_forest(&train, &ForestConfig::default(), 21).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        model.save(&path).unwrap();
        let loaded = ForestModel::load(&path).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let probe = row(rng.gen_range(-12.0..12.0), rng.gen_range(0..2), 0);
            assert_eq!(
                model.score(&probe).unwrap().to_bits(),
                loaded.score(&probe).unwrap().to_bits()
            );
        }
    }

    #[test]
    fn oob_scores_ignore_in_bag_trees() {
        let train = separable(60, 4);
        let model = train_forest(&train, &ForestConfig::default(), 9).unwrap();
        for i in [0usize, 17, 59] {
            let s = model.oob_score(train.row(i), i).unwrap();
            assert!((0.0..=1.0).contains(&s));
        }
        // Loaded models fall back to the full ensemble.
        let loaded = ForestModel::from_json(&model.to_json()).unwrap();
        let full = loaded.score(train.row(0)).unwrap();
        assert_eq!(loaded.oob_score(train.row(0), 0).unwrap(), full);
    }

    #[test]
    fn train_precondition_errors() {
        let rows = vec![row(1.0, 0, 1)];
        let train = Dataset::new(schema_1f(), rows).unwrap();
        let config = ForestConfig {
            min_leaf: 2,
            ..Default::default()
        };
        assert!(matches!(
            train_forest(&train, &config, 0),
            Err(TrainError::TooFewRows { .. })
        ));
        let config = ForestConfig {
            trees: 0,
            ..Default::default()
        };
        assert!(matches!(
            train_forest(&train, &config, 0),
            Err(TrainError::NoTrees)
        ));
    }

    #[test]
    fn external_scores_load_and_lookup() {
        let table =
            load_external_scores_reader("row_id,probability\n0,0.9\n1,0.1\n".as_bytes()).unwrap();
        assert_eq!(table.score_row(0).unwrap(), 0.9);
        assert_eq!(table.score_row(1).unwrap(), 0.1);
        assert!(matches!(
            table.score_row(5),
            Err(PredictError::UnknownRow(5))
        ));

        let rows = vec![row(1.0, 0, 1), row(2.0, 1, 0)];
        let d = Dataset::new(schema_1f(), rows).unwrap();
        let predictor = table.bind(&d).unwrap();
        assert_eq!(predictor.score(d.row(0)).unwrap(), 0.9);
        assert!(matches!(
            predictor.score(&row(3.0, 0, 0)),
            Err(PredictError::UnknownInstance)
        ));
    }

    #[test]
    fn external_scores_reject_bad_files() {
        let err = load_external_scores_reader("row_id,probability\n0,1.3\n".as_bytes())
            .unwrap_err();
        assert!(matches!(err, ScoresError::OutOfRange { id: 0, .. }));

        let err =
            load_external_scores_reader("row_id,probability\n0,0.5\n0,0.6\n".as_bytes())
                .unwrap_err();
        assert!(matches!(err, ScoresError::DuplicateId(0)));

        let err = load_external_scores_reader("row_id,probability\n".as_bytes()).unwrap_err();
        assert!(matches!(err, ScoresError::Empty));

        let err = load_external_scores_reader("id,probability\n0,0.5\n".as_bytes()).unwrap_err();
        assert!(matches!(err, ScoresError::MissingColumn(_)));
    }

    proptest! {
        #[test]
        fn scores_stay_in_unit_interval(xs in proptest::collection::vec(-50.0f64..50.0, 1..40)) {
            let train = separable(80, 3);
            let config = ForestConfig { trees: 10, ..Default::default() };
            let model = train_forest(&train, &config, 5).unwrap();
            for (i, x) in xs.iter().enumerate() {
                let s = model.score(&row(*x, (i % 2) as u32, 0)).unwrap();
                prop_assert!((0.0..=1.0).contains(&s));
            }
        }
    }
}
