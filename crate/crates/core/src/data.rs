//! Count datasets: CSV loading with a schema sidecar, dummy coding, the
//! augmented binary-transition expansion, and train/test subsampling.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Declared kind of an input column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeclaredKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnDecl {
    pub name: String,
    pub kind: DeclaredKind,
    /// Levels in coding order. Inferred (sorted) from the data when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<String>>,
    /// Reference level, dropped from the dummy coding. Defaults to the first level.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
}

/// Schema sidecar: the outcome column and the covariates to encode, in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub outcome: String,
    #[serde(default, rename = "column")]
    pub columns: Vec<ColumnDecl>,
}

impl Schema {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Schema treating every CSV column other than `outcome` as numeric.
    pub fn numeric_from_csv(path: impl AsRef<Path>, outcome: &str) -> Result<Self> {
        let table = read_table(path.as_ref())?;
        if table.index(outcome).is_none() {
            return Err(Error::MissingColumn(outcome.to_string()));
        }
        let cols: Vec<&str> = table.headers.iter().map(String::as_str).filter(|h| *h != outcome).collect();
        Ok(Self::numeric(outcome, &cols))
    }

    /// All numeric covariates except the outcome.
    pub fn numeric(outcome: &str, columns: &[&str]) -> Self {
        Schema {
            outcome: outcome.to_string(),
            columns: columns
                .iter()
                .map(|c| ColumnDecl {
                    name: c.to_string(),
                    kind: DeclaredKind::Numeric,
                    levels: None,
                    reference: None,
                })
                .collect(),
        }
    }
}

/// Resolved encoding of one original column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnEncoding {
    Numeric {
        name: String,
    },
    Categorical {
        name: String,
        levels: Vec<String>,
        reference: String,
    },
}

impl ColumnEncoding {
    pub fn name(&self) -> &str {
        match self {
            ColumnEncoding::Numeric { name } | ColumnEncoding::Categorical { name, .. } => name,
        }
    }

    fn output_names(&self) -> Vec<String> {
        match self {
            ColumnEncoding::Numeric { name } => vec![name.clone()],
            ColumnEncoding::Categorical {
                name,
                levels,
                reference,
            } => levels
                .iter()
                .filter(|l| *l != reference)
                .map(|l| format!("{name}:{l}"))
                .collect(),
        }
    }
}

/// Everything needed to encode new rows exactly like the training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoding {
    pub outcome: String,
    pub columns: Vec<ColumnEncoding>,
}

impl Encoding {
    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().flat_map(|c| c.output_names()).collect()
    }

    /// Encode one raw row; `fields` are looked up by column name.
    fn encode_row(
        &self,
        row: usize,
        lookup: &dyn Fn(&str) -> Option<String>,
        out: &mut Vec<f64>,
    ) -> Result<()> {
        for col in &self.columns {
            let raw = lookup(col.name())
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty() && s != "NA")
                .ok_or_else(|| Error::InvalidValue {
                    row,
                    column: col.name().to_string(),
                })?;
            match col {
                ColumnEncoding::Numeric { name } => {
                    let v: f64 = raw.parse().map_err(|_| Error::InvalidValue {
                        row,
                        column: name.clone(),
                    })?;
                    if !v.is_finite() {
                        return Err(Error::InvalidValue {
                            row,
                            column: name.clone(),
                        });
                    }
                    out.push(v);
                }
                ColumnEncoding::Categorical {
                    name,
                    levels,
                    reference,
                } => {
                    if !levels.contains(&raw) {
                        return Err(Error::UnknownLevel {
                            row,
                            column: name.clone(),
                            level: raw,
                        });
                    }
                    for level in levels.iter().filter(|l| *l != reference) {
                        out.push(if *level == raw { 1.0 } else { 0.0 });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Observed counts with their encoded covariate rows.
#[derive(Debug, Clone)]
pub struct CountDataset {
    pub outcomes: Vec<usize>,
    /// n x p, already dummy coded.
    pub covariates: DMatrix<f64>,
    pub column_names: Vec<String>,
    pub encoding: Encoding,
}

impl CountDataset {
    /// Build a dataset from numeric covariates.
    pub fn new(outcomes: Vec<usize>, covariates: DMatrix<f64>, column_names: Vec<String>) -> Result<Self> {
        if covariates.nrows() != outcomes.len() {
            return Err(Error::Dimension {
                expected: outcomes.len(),
                got: covariates.nrows(),
            });
        }
        if covariates.ncols() != column_names.len() {
            return Err(Error::Dimension {
                expected: covariates.ncols(),
                got: column_names.len(),
            });
        }
        check_unique(&column_names)?;
        if covariates.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite covariate value".into()));
        }
        let encoding = Encoding {
            outcome: "y".into(),
            columns: column_names
                .iter()
                .map(|n| ColumnEncoding::Numeric { name: n.clone() })
                .collect(),
        };
        Ok(CountDataset {
            outcomes,
            covariates,
            column_names,
            encoding,
        })
    }

    /// Outcomes only, no covariates.
    pub fn intercept_only(outcomes: Vec<usize>) -> Self {
        let n = outcomes.len();
        CountDataset::new(outcomes, DMatrix::zeros(n, 0), Vec::new()).expect("consistent shapes")
    }

    pub fn n(&self) -> usize {
        self.outcomes.len()
    }

    pub fn p(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.covariates.row(i).iter().copied().collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> CountDataset {
        let covariates = DMatrix::from_fn(indices.len(), self.p(), |r, c| self.covariates[(indices[r], c)]);
        CountDataset {
            outcomes: indices.iter().map(|&i| self.outcomes[i]).collect(),
            covariates,
            column_names: self.column_names.clone(),
            encoding: self.encoding.clone(),
        }
    }

    /// Names of covariates that are constant over the rows.
    pub fn constant_columns(&self) -> Vec<String> {
        (0..self.p())
            .filter(|&j| {
                let col = self.covariates.column(j);
                let first = col[0];
                col.iter().all(|&v| v == first)
            })
            .map(|j| self.column_names[j].clone())
            .collect()
    }
}

fn check_unique(names: &[String]) -> Result<()> {
    let mut seen = HashSet::new();
    for n in names {
        if !seen.insert(n) {
            return Err(Error::Schema(format!("duplicate column name `{n}`")));
        }
    }
    Ok(())
}

fn parse_count(raw: &str, row: usize) -> Result<usize> {
    let bad = || Error::InvalidOutcome {
        row,
        value: raw.to_string(),
    };
    let t = raw.trim();
    if let Ok(v) = t.parse::<i64>() {
        return usize::try_from(v).map_err(|_| bad());
    }
    let v: f64 = t.parse().map_err(|_| bad())?;
    if v.is_finite() && v >= 0.0 && v.fract() == 0.0 && v < 1e15 {
        Ok(v as usize)
    } else {
        Err(bad())
    }
}

struct RawTable {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_table(path: &Path) -> Result<RawTable> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let mut rows = Vec::new();
    for rec in reader.records() {
        rows.push(rec?.iter().map(str::to_string).collect());
    }
    Ok(RawTable { headers, rows })
}

impl RawTable {
    fn index(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }
}

/// Resolve a schema against the table, inferring undeclared categorical levels.
fn resolve_encoding(schema: &Schema, table: &RawTable) -> Result<Encoding> {
    let mut columns = Vec::with_capacity(schema.columns.len());
    for decl in &schema.columns {
        let idx = table
            .index(&decl.name)
            .ok_or_else(|| Error::MissingColumn(decl.name.clone()))?;
        match decl.kind {
            DeclaredKind::Numeric => columns.push(ColumnEncoding::Numeric {
                name: decl.name.clone(),
            }),
            DeclaredKind::Categorical => {
                let levels = match &decl.levels {
                    Some(l) => l.clone(),
                    None => table
                        .rows
                        .iter()
                        .map(|r| r[idx].trim().to_string())
                        .filter(|s| !s.is_empty() && s != "NA")
                        .collect::<BTreeSet<_>>()
                        .into_iter()
                        .collect(),
                };
                if levels.is_empty() {
                    return Err(Error::Schema(format!("column `{}` has no levels", decl.name)));
                }
                let reference = decl.reference.clone().unwrap_or_else(|| levels[0].clone());
                if !levels.contains(&reference) {
                    return Err(Error::Schema(format!(
                        "reference level `{reference}` is not a level of `{}`",
                        decl.name
                    )));
                }
                columns.push(ColumnEncoding::Categorical {
                    name: decl.name.clone(),
                    levels,
                    reference,
                });
            }
        }
    }
    let enc = Encoding {
        outcome: schema.outcome.clone(),
        columns,
    };
    check_unique(&enc.column_names())?;
    Ok(enc)
}

fn encode_table(table: &RawTable, encoding: &Encoding, with_outcome: bool) -> Result<CountDataset> {
    let outcome_idx = if with_outcome {
        Some(
            table
                .index(&encoding.outcome)
                .ok_or_else(|| Error::MissingColumn(encoding.outcome.clone()))?,
        )
    } else {
        None
    };
    for col in &encoding.columns {
        if table.index(col.name()).is_none() {
            return Err(Error::MissingColumn(col.name().to_string()));
        }
    }
    let names = encoding.column_names();
    let p = names.len();
    let n = table.rows.len();
    let mut values = Vec::with_capacity(n * p);
    let mut outcomes = Vec::with_capacity(n);
    for (k, rec) in table.rows.iter().enumerate() {
        let row = k + 1;
        if let Some(oi) = outcome_idx {
            let raw = rec.get(oi).map(String::as_str).unwrap_or("");
            outcomes.push(parse_count(raw, row)?);
        } else {
            outcomes.push(0);
        }
        let lookup = |name: &str| table.index(name).and_then(|i| rec.get(i).cloned());
        encoding.encode_row(row, &lookup, &mut values)?;
    }
    let covariates = DMatrix::from_row_slice(n, p, &values);
    Ok(CountDataset {
        outcomes,
        covariates,
        column_names: names,
        encoding: encoding.clone(),
    })
}

/// Load a count dataset from a CSV file with a header row.
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<CountDataset> {
    let table = read_table(path.as_ref())?;
    if table.index(&schema.outcome).is_none() {
        return Err(Error::MissingColumn(schema.outcome.clone()));
    }
    let encoding = resolve_encoding(schema, &table)?;
    encode_table(&table, &encoding, true)
}

/// Load rows with a fixed training encoding. Without `with_outcome` the
/// outcome column may be absent and outcomes are set to 0.
pub fn load_csv_with_encoding(
    path: impl AsRef<Path>,
    encoding: &Encoding,
    with_outcome: bool,
) -> Result<CountDataset> {
    let table = read_table(path.as_ref())?;
    encode_table(&table, encoding, with_outcome)
}

pub fn max_observed(data: &CountDataset) -> Result<usize> {
    data.outcomes.iter().copied().max().ok_or(Error::EmptyData)
}

/// One binary transition record of the augmented (long-format) data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransitionRecord {
    pub obs: usize,
    pub category: usize,
    /// 1 if the count moved past `category`.
    pub transition: bool,
}

/// Long-format expansion: observation `i` contributes records for
/// categories `0..=Y_i`, coded `(1, ..., 1, 0)`.
#[derive(Debug, Clone)]
pub struct AugmentedDataset<'a> {
    pub data: &'a CountDataset,
    pub records: Vec<TransitionRecord>,
    pub include_covariates: bool,
}

impl<'a> AugmentedDataset<'a> {
    pub fn total_rows(&self) -> usize {
        self.records.len()
    }

    /// Covariate row shared by every record of the observation.
    pub fn covariates(&self, record: &TransitionRecord) -> Option<nalgebra::DMatrixView<'a, f64>> {
        if self.include_covariates {
            let data: &'a CountDataset = self.data;
            Some(data.covariates.rows(record.obs, 1))
        } else {
            None
        }
    }
}

pub fn augment(data: &CountDataset, include_covariates: bool) -> AugmentedDataset<'_> {
    let total: usize = data.outcomes.iter().map(|y| y + 1).sum();
    let mut records = Vec::with_capacity(total);
    for (obs, &y) in data.outcomes.iter().enumerate() {
        for category in 0..=y {
            records.push(TransitionRecord {
                obs,
                category,
                transition: category < y,
            });
        }
    }
    AugmentedDataset {
        data,
        records,
        include_covariates,
    }
}

/// Disjoint train/test index sets, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsampleSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Train set of size round-half-up(`fraction * n`), drawn without replacement.
pub fn subsample(n: usize, fraction: f64, seed: u64) -> Result<SubsampleSplit> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "subsample fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let train = (fraction * n as f64 + 0.5).floor() as usize;
    subsample_sized(n, train, seed)
}

/// Train set of exactly `train_size` indices.
pub fn subsample_sized(n: usize, train_size: usize, seed: u64) -> Result<SubsampleSplit> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 observations, got {n}")));
    }
    if train_size == 0 || train_size >= n {
        return Err(Error::InvalidArgument(format!(
            "train size {train_size} leaves an empty train or test set (n = {n})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let mut train = idx[..train_size].to_vec();
    let mut test = idx[train_size..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(SubsampleSplit { train, test, seed })
}
