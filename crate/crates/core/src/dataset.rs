//! Schema-validated tabular data: column definitions, file ingestion,
//! z-score standardization and k-fold splitting.
//!
//! Conventions used throughout the crate: the protected attribute is a
//! two-category column whose privileged category encodes as 1, and the label
//! is a two-category column whose favorable category encodes as 1.

use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default cell delimiter for data files.
pub const DEFAULT_DELIMITER: u8 = b',';

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("duplicate column name `{0}`")]
    DuplicateColumn(String),
    #[error("{role} column `{name}` is not declared in the schema")]
    UnknownColumn { role: &'static str, name: String },
    #[error("{role} column `{name}` must be categorical with exactly 2 categories")]
    NotBinaryCategorical { role: &'static str, name: String },
    #[error("{role} value `{value}` is not a category of column `{column}`")]
    UnknownRoleCategory {
        role: &'static str,
        column: String,
        value: String,
    },
    #[error("categorical column `{0}` declares fewer than 2 categories")]
    TooFewCategories(String),
    #[error("categorical column `{column}` repeats category `{value}`")]
    DuplicateCategory { column: String, value: String },
    #[error("protected and label roles must use different columns (both are `{0}`)")]
    SharedRoleColumn(String),
    #[error("schema declares no columns")]
    NoColumns,
    #[error("failed to read schema file: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse schema file: {0}")]
    Parse(#[from] toml::de::Error),
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("data file declares no column `{0}` required by the schema")]
    MissingColumn(String),
    #[error("data file contains no rows")]
    Empty,
    #[error("row {row}, column `{column}`: cannot parse `{value}` as a finite number")]
    BadNumeric {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}, column `{column}`: category `{value}` is not declared in the schema")]
    UnknownCategory {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}, column `{column}`: missing value")]
    MissingValue { row: usize, column: String },
    #[error("row {row}: expected {expected} cells, found {found}")]
    RowWidth {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("fold count {k} out of range for {m} rows (need 2 <= k <= m)")]
    FoldCountOutOfRange { k: usize, m: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed delimited file: {0}")]
    Csv(#[from] csv::Error),
}

/// Column payload: numeric, or categorical over a declared, ordered set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ColumnKind {
    Numeric,
    Categorical(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
}

impl Column {
    pub fn numeric(name: &str) -> Self {
        Column {
            name: name.to_string(),
            kind: ColumnKind::Numeric,
        }
    }

    pub fn categorical(name: &str, categories: &[&str]) -> Self {
        Column {
            name: name.to_string(),
            kind: ColumnKind::Categorical(categories.iter().map(|c| c.to_string()).collect()),
        }
    }
}

/// Column layout plus the protected-attribute and label designations.
///
/// Invariants enforced at construction: unique column names, protected and
/// label columns are distinct two-category categorical columns, and every
/// categorical column declares at least two distinct categories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SchemaFile", into = "SchemaFile")]
pub struct Schema {
    columns: Vec<Column>,
    protected_col: usize,
    privileged_cat: u32,
    label_col: usize,
    favorable_cat: u32,
}

impl Schema {
    /// `protected` is (column name, privileged category); `label` is
    /// (column name, favorable category).
    pub fn new(
        columns: Vec<Column>,
        protected: (&str, &str),
        label: (&str, &str),
    ) -> Result<Self, SchemaError> {
        if columns.is_empty() {
            return Err(SchemaError::NoColumns);
        }
        for (i, c) in columns.iter().enumerate() {
            if columns[..i].iter().any(|o| o.name == c.name) {
                return Err(SchemaError::DuplicateColumn(c.name.clone()));
            }
            if let ColumnKind::Categorical(cats) = &c.kind {
                if cats.len() < 2 {
                    return Err(SchemaError::TooFewCategories(c.name.clone()));
                }
                for (j, cat) in cats.iter().enumerate() {
                    if cats[..j].contains(cat) {
                        return Err(SchemaError::DuplicateCategory {
                            column: c.name.clone(),
                            value: cat.clone(),
                        });
                    }
                }
            }
        }
        let find_role = |role: &'static str, name: &str, value: &str| {
            let idx = columns
                .iter()
                .position(|c| c.name == name)
                .ok_or_else(|| SchemaError::UnknownColumn {
                    role,
                    name: name.to_string(),
                })?;
            match &columns[idx].kind {
                ColumnKind::Categorical(cats) if cats.len() == 2 => {
                    let cat = cats.iter().position(|c| c == value).ok_or_else(|| {
                        SchemaError::UnknownRoleCategory {
                            role,
                            column: name.to_string(),
                            value: value.to_string(),
                        }
                    })?;
                    Ok((idx, cat as u32))
                }
                _ => Err(SchemaError::NotBinaryCategorical {
                    role,
                    name: name.to_string(),
                }),
            }
        };
        let (protected_col, privileged_cat) = find_role("protected", protected.0, protected.1)?;
        let (label_col, favorable_cat) = find_role("label", label.0, label.1)?;
        if protected_col == label_col {
            return Err(SchemaError::SharedRoleColumn(protected.0.to_string()));
        }
        Ok(Schema {
            columns,
            protected_col,
            privileged_cat,
            label_col,
            favorable_cat,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self, SchemaError> {
        let file: SchemaFile = toml::from_str(text)?;
        Schema::try_from(file)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, SchemaError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    /// Diff-stable serialization: key order is fixed by the layout of
    /// [`SchemaFile`] and category order is the declared order.
    pub fn to_toml_string(&self) -> String {
        let file = SchemaFile::from(self.clone());
        toml::to_string(&file).expect("schema serializes")
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn protected_col(&self) -> usize {
        self.protected_col
    }

    pub fn label_col(&self) -> usize {
        self.label_col
    }

    /// Number of feature columns (everything except the label).
    pub fn n_features(&self) -> usize {
        self.columns.len() - 1
    }

    /// Category index within the protected column encoding the given group
    /// (1 = privileged, 0 = unprivileged).
    pub fn protected_category(&self, pa_value: u8) -> u32 {
        if pa_value == 1 {
            self.privileged_cat
        } else {
            1 - self.privileged_cat
        }
    }

    /// Category index within the label column encoding the given outcome
    /// (1 = favorable, 0 = unfavorable).
    pub fn label_category(&self, label: u8) -> u32 {
        if label == 1 {
            self.favorable_cat
        } else {
            1 - self.favorable_cat
        }
    }

    /// Protected-attribute value of an instance: 1 iff privileged.
    pub fn pa_value(&self, x: &Instance) -> u8 {
        match x.value(self.protected_col) {
            Value::Cat(c) => u8::from(*c == self.privileged_cat),
            Value::Num(_) => 0,
        }
    }

    /// Label value of an instance: 1 iff favorable.
    pub fn label_value(&self, x: &Instance) -> u8 {
        match x.value(self.label_col) {
            Value::Cat(c) => u8::from(*c == self.favorable_cat),
            Value::Num(_) => 0,
        }
    }

    fn validate_cell(&self, row: usize, col: usize, v: &Value) -> Result<(), DataError> {
        let column = &self.columns[col];
        match (&column.kind, v) {
            (ColumnKind::Numeric, Value::Num(x)) if x.is_finite() => Ok(()),
            (ColumnKind::Numeric, Value::Num(x)) => Err(DataError::BadNumeric {
                row,
                column: column.name.clone(),
                value: x.to_string(),
            }),
            (ColumnKind::Categorical(cats), Value::Cat(c)) if (*c as usize) < cats.len() => Ok(()),
            (ColumnKind::Categorical(_), Value::Cat(c)) => Err(DataError::UnknownCategory {
                row,
                column: column.name.clone(),
                value: format!("#{c}"),
            }),
            _ => Err(DataError::BadNumeric {
                row,
                column: column.name.clone(),
                value: "wrong cell kind".to_string(),
            }),
        }
    }
}

/// On-disk schema layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SchemaFile {
    columns: Vec<ColumnSpec>,
    protected: ProtectedSpec,
    label: LabelSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ColumnSpec {
    name: String,
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    categories: Option<Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ProtectedSpec {
    column: String,
    privileged: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LabelSpec {
    column: String,
    favorable: String,
}

impl TryFrom<SchemaFile> for Schema {
    type Error = SchemaError;

    fn try_from(file: SchemaFile) -> Result<Self, SchemaError> {
        let mut columns = Vec::with_capacity(file.columns.len());
        for spec in &file.columns {
            let kind = match (spec.kind.as_str(), &spec.categories) {
                ("numeric", _) => ColumnKind::Numeric,
                ("categorical", Some(cats)) => ColumnKind::Categorical(cats.clone()),
                ("categorical", None) => {
                    return Err(SchemaError::TooFewCategories(spec.name.clone()))
                }
                (other, _) => {
                    return Err(SchemaError::UnknownColumn {
                        role: "kind",
                        name: format!("{}: {other}", spec.name),
                    })
                }
            };
            columns.push(Column {
                name: spec.name.clone(),
                kind,
            });
        }
        Schema::new(
            columns,
            (&file.protected.column, &file.protected.privileged),
            (&file.label.column, &file.label.favorable),
        )
    }
}

impl From<Schema> for SchemaFile {
    fn from(schema: Schema) -> Self {
        let columns = schema
            .columns
            .iter()
            .map(|c| match &c.kind {
                ColumnKind::Numeric => ColumnSpec {
                    name: c.name.clone(),
                    kind: "numeric".to_string(),
                    categories: None,
                },
                ColumnKind::Categorical(cats) => ColumnSpec {
                    name: c.name.clone(),
                    kind: "categorical".to_string(),
                    categories: Some(cats.clone()),
                },
            })
            .collect();
        let pa = &schema.columns[schema.protected_col];
        let lab = &schema.columns[schema.label_col];
        let cat_name = |col: &Column, idx: u32| match &col.kind {
            ColumnKind::Categorical(cats) => cats[idx as usize].clone(),
            ColumnKind::Numeric => unreachable!("role columns are categorical"),
        };
        SchemaFile {
            columns,
            protected: ProtectedSpec {
                column: pa.name.clone(),
                privileged: cat_name(pa, schema.privileged_cat),
            },
            label: LabelSpec {
                column: lab.name.clone(),
                favorable: cat_name(lab, schema.favorable_cat),
            },
        }
    }
}

/// A single cell. Categorical cells store the index into the column's
/// declared category list.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Num(f64),
    Cat(u32),
}

/// One row, cell values aligned to the schema's column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance(Vec<Value>);

impl Instance {
    pub fn new(values: Vec<Value>) -> Self {
        Instance(values)
    }

    pub fn values(&self) -> &[Value] {
        &self.0
    }

    pub fn value(&self, col: usize) -> &Value {
        &self.0[col]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Copy of this instance with one cell replaced.
    pub fn with_value(&self, col: usize, v: Value) -> Instance {
        let mut values = self.0.clone();
        values[col] = v;
        Instance(values)
    }
}

/// Immutable table of instances conforming to a [`Schema`]. Always holds at
/// least one row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dataset {
    schema: Arc<Schema>,
    rows: Vec<Instance>,
}

impl Dataset {
    pub fn new(schema: Arc<Schema>, rows: Vec<Instance>) -> Result<Self, DataError> {
        if rows.is_empty() {
            return Err(DataError::Empty);
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != schema.n_columns() {
                return Err(DataError::RowWidth {
                    row: i + 1,
                    expected: schema.n_columns(),
                    found: row.len(),
                });
            }
            for (col, v) in row.values().iter().enumerate() {
                schema.validate_cell(i + 1, col, v)?;
            }
        }
        Ok(Dataset { schema, rows })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn schema_arc(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &Instance {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Instance] {
        &self.rows
    }

    pub fn labels(&self) -> Vec<u8> {
        self.rows.iter().map(|r| self.schema.label_value(r)).collect()
    }

    pub fn pa_values(&self) -> Vec<u8> {
        self.rows.iter().map(|r| self.schema.pa_value(r)).collect()
    }

    /// New dataset keeping only the listed row indices, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        debug_assert!(!indices.is_empty());
        Dataset {
            schema: Arc::clone(&self.schema),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// Dataset with the same features but label cells replaced row-wise.
    pub fn with_labels(&self, labels: &[u8]) -> Dataset {
        assert_eq!(labels.len(), self.rows.len());
        let col = self.schema.label_col();
        let rows = self
            .rows
            .iter()
            .zip(labels)
            .map(|(r, &y)| r.with_value(col, Value::Cat(self.schema.label_category(y))))
            .collect();
        Dataset {
            schema: Arc::clone(&self.schema),
            rows,
        }
    }

    /// Cell rendered back to its file representation. Numeric cells use the
    /// shortest representation that round-trips exactly.
    pub fn render_cell(&self, row: usize, col: usize) -> String {
        match (self.rows[row].value(col), &self.schema.columns()[col].kind) {
            (Value::Num(x), _) => format!("{x}"),
            (Value::Cat(c), ColumnKind::Categorical(cats)) => cats[*c as usize].clone(),
            (Value::Cat(c), ColumnKind::Numeric) => format!("#{c}"),
        }
    }

    pub fn write_to_path(&self, path: impl AsRef<Path>, delimiter: u8) -> Result<(), DataError> {
        let mut wtr = csv::WriterBuilder::new()
            .delimiter(delimiter)
            .from_path(path.as_ref())?;
        wtr.write_record(self.schema.columns().iter().map(|c| c.name.as_str()))?;
        for i in 0..self.rows.len() {
            let record: Vec<String> = (0..self.schema.n_columns())
                .map(|c| self.render_cell(i, c))
                .collect();
            wtr.write_record(&record)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Loads a delimiter-separated file with a header row naming the schema
/// columns (any order; columns not in the schema are ignored).
pub fn load_dataset(path: impl AsRef<Path>, schema: &Arc<Schema>) -> Result<Dataset, DataError> {
    load_dataset_delim(path, schema, DEFAULT_DELIMITER)
}

pub fn load_dataset_delim(
    path: impl AsRef<Path>,
    schema: &Arc<Schema>,
    delimiter: u8,
) -> Result<Dataset, DataError> {
    let file = std::fs::File::open(path.as_ref())?;
    load_dataset_reader(file, schema, delimiter)
}

pub fn load_dataset_reader(
    reader: impl Read,
    schema: &Arc<Schema>,
    delimiter: u8,
) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(DataError::Empty);
    }
    // Position of each schema column in the file.
    let mut positions = Vec::with_capacity(schema.n_columns());
    for column in schema.columns() {
        let pos = headers
            .iter()
            .position(|h| h == column.name)
            .ok_or_else(|| DataError::MissingColumn(column.name.clone()))?;
        positions.push(pos);
    }

    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let mut values = Vec::with_capacity(schema.n_columns());
        for (col, column) in schema.columns().iter().enumerate() {
            let raw = record.get(positions[col]).unwrap_or("");
            if raw.is_empty() {
                return Err(DataError::MissingValue {
                    row,
                    column: column.name.clone(),
                });
            }
            let value = match &column.kind {
                ColumnKind::Numeric => {
                    let parsed: f64 = raw.parse().map_err(|_| DataError::BadNumeric {
                        row,
                        column: column.name.clone(),
                        value: raw.to_string(),
                    })?;
                    if !parsed.is_finite() {
                        return Err(DataError::BadNumeric {
                            row,
                            column: column.name.clone(),
                            value: raw.to_string(),
                        });
                    }
                    Value::Num(parsed)
                }
                ColumnKind::Categorical(cats) => {
                    let idx = cats.iter().position(|c| c == raw).ok_or_else(|| {
                        DataError::UnknownCategory {
                            row,
                            column: column.name.clone(),
                            value: raw.to_string(),
                        }
                    })?;
                    Value::Cat(idx as u32)
                }
            };
            values.push(value);
        }
        rows.push(Instance::new(values));
    }
    if rows.is_empty() {
        return Err(DataError::Empty);
    }
    Ok(Dataset {
        schema: Arc::clone(schema),
        rows,
    })
}

/// Seeded k-fold partition. Row indices are shuffled once, split into k
/// near-equal folds (sizes differ by at most one), and fold i serves as the
/// test split while the rest form the training split. Within each split the
/// original row order is preserved.
pub fn kfold_split(
    d: &Dataset,
    k: usize,
    seed: u64,
) -> Result<Vec<(Dataset, Dataset)>, DataError> {
    let m = d.len();
    if k < 2 || k > m {
        return Err(DataError::FoldCountOutOfRange { k, m });
    }
    let mut indices: Vec<usize> = (0..m).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);

    let base = m / k;
    let extra = m % k;
    let mut folds: Vec<Vec<usize>> = Vec::with_capacity(k);
    let mut cursor = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        let mut test: Vec<usize> = indices[cursor..cursor + size].to_vec();
        test.sort_unstable();
        folds.push(test);
        cursor += size;
    }

    let mut splits = Vec::with_capacity(k);
    for fold in 0..k {
        let test = &folds[fold];
        let mut train: Vec<usize> = Vec::with_capacity(m - test.len());
        for (other, idx) in folds.iter().enumerate() {
            if other != fold {
                train.extend_from_slice(idx);
            }
        }
        train.sort_unstable();
        splits.push((d.subset(&train), d.subset(test)));
    }
    Ok(splits)
}

/// Per-numeric-column z-score transform fitted with the population standard
/// deviation. Zero-variance columns transform to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    stats: Vec<Option<ColumnMoments>>,
    fitted_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMoments {
    pub mean: f64,
    pub stddev: f64,
}

pub fn fit_standardizer(d: &Dataset) -> Standardizer {
    let m = d.len() as f64;
    let stats = d
        .schema()
        .columns()
        .iter()
        .enumerate()
        .map(|(col, column)| match column.kind {
            ColumnKind::Numeric => {
                let mut sum = 0.0;
                for row in d.rows() {
                    if let Value::Num(x) = row.value(col) {
                        sum += x;
                    }
                }
                let mean = sum / m;
                let mut sq = 0.0;
                for row in d.rows() {
                    if let Value::Num(x) = row.value(col) {
                        sq += (x - mean) * (x - mean);
                    }
                }
                Some(ColumnMoments {
                    mean,
                    stddev: (sq / m).sqrt(),
                })
            }
            ColumnKind::Categorical(_) => None,
        })
        .collect();
    Standardizer {
        stats,
        fitted_rows: d.len(),
    }
}

impl Standardizer {
    /// Builds a standardizer from explicit per-column moments (None for
    /// categorical columns), aligned to schema column order.
    pub fn from_parts(stats: Vec<Option<ColumnMoments>>, fitted_rows: usize) -> Self {
        Standardizer { stats, fitted_rows }
    }

    pub fn fitted_rows(&self) -> usize {
        self.fitted_rows
    }

    /// z-score for a numeric column, None for categorical ones.
    pub fn z(&self, col: usize, value: f64) -> Option<f64> {
        self.stats[col].as_ref().map(|m| {
            if m.stddev > 0.0 {
                (value - m.mean) / m.stddev
            } else {
                0.0
            }
        })
    }

    /// Standardized numeric vector of an instance, numeric columns in schema
    /// order.
    pub fn apply(&self, x: &Instance) -> Vec<f64> {
        x.values()
            .iter()
            .enumerate()
            .filter_map(|(col, v)| match v {
                Value::Num(value) => self.z(col, *value),
                Value::Cat(_) => None,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy_schema() -> Arc<Schema> {
        Arc::new(
            Schema::new(
                vec![
                    Column::numeric("age"),
                    Column::categorical("sex", &["f", "m"]),
                    Column::categorical("outcome", &["bad", "good"]),
                ],
                ("sex", "m"),
                ("outcome", "good"),
            )
            .unwrap(),
        )
    }

    fn load_str(text: &str, schema: &Arc<Schema>) -> Result<Dataset, DataError> {
        load_dataset_reader(text.as_bytes(), schema, b',')
    }

    #[test]
    fn loads_rows_aligned_to_schema() {
        let schema = toy_schema();
        let d = load_str(
            "sex,age,outcome\nf,30,good\nm,40,bad\nf,50,good\n",
            &schema,
        )
        .unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.row(0).value(0), &Value::Num(30.0));
        assert_eq!(d.row(1).value(1), &Value::Cat(1));
        assert_eq!(d.labels(), vec![1, 0, 1]);
        assert_eq!(d.pa_values(), vec![0, 1, 0]);
    }

    #[test]
    fn missing_protected_column_is_named() {
        let schema = toy_schema();
        let err = load_str("age,outcome\n30,good\n", &schema).unwrap_err();
        match err {
            DataError::MissingColumn(name) => assert_eq!(name, "sex"),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn undeclared_category_reports_row_and_column() {
        let schema = toy_schema();
        let err = load_str("age,sex,outcome\n30,f,good\n40,X,bad\n", &schema).unwrap_err();
        match err {
            DataError::UnknownCategory { row, column, value } => {
                assert_eq!(row, 2);
                assert_eq!(column, "sex");
                assert_eq!(value, "X");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn bad_numeric_reports_row_and_column() {
        let schema = toy_schema();
        let err = load_str("age,sex,outcome\nthirty,f,good\n", &schema).unwrap_err();
        assert!(matches!(err, DataError::BadNumeric { row: 1, .. }));
        let err = load_str("age,sex,outcome\ninf,f,good\n", &schema).unwrap_err();
        assert!(matches!(err, DataError::BadNumeric { row: 1, .. }));
    }

    #[test]
    fn missing_value_rejected() {
        let schema = toy_schema();
        let err = load_str("age,sex,outcome\n30,,good\n", &schema).unwrap_err();
        assert!(matches!(
            err,
            DataError::MissingValue { row: 1, .. }
        ));
    }

    #[test]
    fn empty_inputs_rejected() {
        let schema = toy_schema();
        assert!(matches!(load_str("", &schema), Err(DataError::Empty)));
        assert!(matches!(
            load_str("age,sex,outcome\n", &schema),
            Err(DataError::Empty)
        ));
    }

    #[test]
    fn schema_invariants_enforced() {
        let dup = Schema::new(
            vec![Column::numeric("a"), Column::numeric("a")],
            ("a", "x"),
            ("a", "y"),
        );
        assert!(matches!(dup, Err(SchemaError::DuplicateColumn(_))));

        let missing = Schema::new(
            vec![Column::categorical("y", &["0", "1"])],
            ("pa", "1"),
            ("y", "1"),
        );
        assert!(matches!(missing, Err(SchemaError::UnknownColumn { .. })));

        let wide = Schema::new(
            vec![
                Column::categorical("pa", &["a", "b", "c"]),
                Column::categorical("y", &["0", "1"]),
            ],
            ("pa", "a"),
            ("y", "1"),
        );
        assert!(matches!(wide, Err(SchemaError::NotBinaryCategorical { .. })));

        let shared = Schema::new(
            vec![Column::categorical("y", &["0", "1"]), Column::numeric("x")],
            ("y", "1"),
            ("y", "1"),
        );
        assert!(matches!(shared, Err(SchemaError::SharedRoleColumn(_))));

        let thin = Schema::new(
            vec![
                Column::categorical("pa", &["a", "b"]),
                Column::categorical("c", &["only"]),
                Column::categorical("y", &["0", "1"]),
            ],
            ("pa", "a"),
            ("y", "1"),
        );
        assert!(matches!(thin, Err(SchemaError::TooFewCategories(_))));
    }

    #[test]
    fn schema_toml_round_trip_is_diff_stable() {
        let schema = toy_schema();
        let text = schema.to_toml_string();
        let reparsed = Schema::from_toml_str(&text).unwrap();
        assert_eq!(*schema, reparsed);
        assert_eq!(text, reparsed.to_toml_string());
    }

    #[test]
    fn dataset_file_round_trip_reproduces_values() {
        let schema = toy_schema();
        let d = load_str(
            "age,sex,outcome\n0.30000000000000004,f,good\n-1e-17,m,bad\n123456.789,f,good\n",
            &schema,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        d.write_to_path(&path, b',').unwrap();
        let reloaded = load_dataset(&path, &schema).unwrap();
        assert_eq!(d, reloaded);
    }

    #[test]
    fn kfold_partitions_cover_disjointly() {
        let schema = toy_schema();
        let rows = (0..10)
            .map(|i| {
                Instance::new(vec![Value::Num(i as f64), Value::Cat(0), Value::Cat(1)])
            })
            .collect();
        let d = Dataset::new(schema, rows).unwrap();
        let splits = kfold_split(&d, 5, 7).unwrap();
        assert_eq!(splits.len(), 5);
        let mut seen = Vec::new();
        for (train, test) in &splits {
            assert_eq!(test.len(), 2);
            assert_eq!(train.len(), 8);
            for row in test.rows() {
                if let Value::Num(x) = row.value(0) {
                    seen.push(*x as i64);
                }
            }
        }
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn kfold_uneven_sizes() {
        let schema = toy_schema();
        let rows = (0..7)
            .map(|i| Instance::new(vec![Value::Num(i as f64), Value::Cat(0), Value::Cat(1)]))
            .collect();
        let d = Dataset::new(schema, rows).unwrap();
        let splits = kfold_split(&d, 3, 1).unwrap();
        let mut sizes: Vec<usize> = splits.iter().map(|(_, t)| t.len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![2, 2, 3]);
        assert!(matches!(
            kfold_split(&d, 8, 1),
            Err(DataError::FoldCountOutOfRange { .. })
        ));
        assert!(matches!(
            kfold_split(&d, 1, 1),
            Err(DataError::FoldCountOutOfRange { .. })
        ));
    }

    #[test]
    fn kfold_is_deterministic_and_seed_sensitive() {
        let schema = toy_schema();
        let rows = (0..9)
            .map(|i| Instance::new(vec![Value::Num(i as f64), Value::Cat(0), Value::Cat(1)]))
            .collect();
        let d = Dataset::new(schema, rows).unwrap();
        let a = kfold_split(&d, 3, 42).unwrap();
        let b = kfold_split(&d, 3, 42).unwrap();
        assert_eq!(a, b);
        let baseline = kfold_split(&d, 3, 0).unwrap();
        let any_differs = (1..=100).any(|seed| kfold_split(&d, 3, seed).unwrap() != baseline);
        assert!(any_differs);
    }

    #[test]
    fn standardizer_matches_hand_computed_zscores() {
        let schema = toy_schema();
        let rows = [1.0, 2.0, 3.0]
            .iter()
            .map(|&x| Instance::new(vec![Value::Num(x), Value::Cat(0), Value::Cat(1)]))
            .collect();
        let d = Dataset::new(schema, rows).unwrap();
        let s = fit_standardizer(&d);
        // Population stddev of {1,2,3} is sqrt(2/3).
        let z = s.z(0, 3.0).unwrap();
        assert!((z - 1.224744871391589).abs() <= 1e-12);
        let applied = s.apply(d.row(2));
        assert_eq!(applied.len(), 1);
        assert!((applied[0] - z).abs() == 0.0);
    }

    #[test]
    fn standardizer_zero_variance_maps_to_zero() {
        let schema = toy_schema();
        let rows = (0..3)
            .map(|_| Instance::new(vec![Value::Num(5.0), Value::Cat(0), Value::Cat(1)]))
            .collect();
        let d = Dataset::new(schema, rows).unwrap();
        let s = fit_standardizer(&d);
        for row in d.rows() {
            assert_eq!(s.apply(row), vec![0.0]);
        }
    }

    proptest! {
        #[test]
        fn standardizer_centers_fitting_data(values in proptest::collection::vec(-1e6f64..1e6, 1..60)) {
            let schema = toy_schema();
            let rows = values
                .iter()
                .map(|&x| Instance::new(vec![Value::Num(x), Value::Cat(0), Value::Cat(1)]))
                .collect();
            let d = Dataset::new(schema, rows).unwrap();
            let s = fit_standardizer(&d);
            let mean: f64 = d.rows().iter().map(|r| s.apply(r)[0]).sum::<f64>() / d.len() as f64;
            prop_assert!(mean.abs() <= 1e-9);
        }

        #[test]
        fn kfold_always_partitions(m in 2usize..40, k in 2usize..10, seed in 0u64..1000) {
            prop_assume!(k <= m);
            let schema = toy_schema();
            let rows = (0..m)
                .map(|i| Instance::new(vec![Value::Num(i as f64), Value::Cat(0), Value::Cat(1)]))
                .collect();
            let d = Dataset::new(schema, rows).unwrap();
            let splits = kfold_split(&d, k, seed).unwrap();
            let mut all: Vec<i64> = Vec::new();
            for (train, test) in &splits {
                prop_assert_eq!(train.len() + test.len(), m);
                prop_assert!(test.len() >= m / k && test.len() <= m / k + 1);
                for row in test.rows() {
                    if let Value::Num(x) = row.value(0) {
                        all.push(*x as i64);
                    }
                }
            }
            all.sort_unstable();
            prop_assert_eq!(all, (0..m as i64).collect::<Vec<_>>());
        }
    }
}
