//! Blocked two-class datasets, column schemas, and block-level fold assignment.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Delimiter {
    Whitespace,
    Comma,
}

impl Delimiter {
    fn split<'a>(&self, line: &'a str) -> Vec<&'a str> {
        match self {
            Delimiter::Whitespace => line.split_whitespace().collect(),
            Delimiter::Comma => line.split(',').map(str::trim).collect(),
        }
    }

    pub fn separator(&self) -> &'static str {
        match self {
            Delimiter::Whitespace => "\t",
            Delimiter::Comma => ",",
        }
    }
}

/// Column roles of a headerless delimited file.
///
/// Positions are stored 0-based; the textual form (`block=1,case=2,label=3`)
/// is 1-based. Every column that is not a role column is a feature, in file
/// order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub block: usize,
    pub case: Option<usize>,
    pub label: Option<usize>,
    pub delimiter: Delimiter,
    pub header: bool,
    /// Reject labeled files in which some block has no positive case.
    pub require_positive_blocks: bool,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            block: 0,
            case: None,
            label: None,
            delimiter: Delimiter::Whitespace,
            header: false,
            require_positive_blocks: true,
        }
    }
}

impl Schema {
    /// Block id, case id, label, then features, whitespace-delimited.
    pub fn kdd_train() -> Self {
        Schema {
            block: 0,
            case: Some(1),
            label: Some(2),
            ..Schema::default()
        }
    }

    /// Block id, case id, then features.
    pub fn kdd_test() -> Self {
        Schema {
            block: 0,
            case: Some(1),
            label: None,
            ..Schema::default()
        }
    }

    /// Parses `kdd-train`, `kdd-test`, or a `key=value` list separated by
    /// commas or newlines. Keys: `block`, `case`, `label` (1-based column
    /// numbers), `delim` (`whitespace`|`comma`), `header` (`true`|`false`).
    /// Lines starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let trimmed = text.trim();
        match trimmed {
            "kdd-train" => return Ok(Schema::kdd_train()),
            "kdd-test" => return Ok(Schema::kdd_test()),
            _ => {}
        }
        let mut block = None;
        let mut schema = Schema::default();
        let entries = trimmed
            .lines()
            .map(str::trim)
            .filter(|l| !l.starts_with('#'))
            .flat_map(|l| l.split(','))
            .map(str::trim)
            .filter(|e| !e.is_empty());
        for entry in entries {
            let (key, value) = entry
                .split_once('=')
                .ok_or_else(|| Error::Schema(format!("expected key=value, got {entry:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "block" => block = Some(parse_column(key, value)?),
                "case" => schema.case = Some(parse_column(key, value)?),
                "label" => schema.label = Some(parse_column(key, value)?),
                "delim" | "delimiter" => {
                    schema.delimiter = match value {
                        "whitespace" | "ws" | "tab" | "space" => Delimiter::Whitespace,
                        "comma" | "," => Delimiter::Comma,
                        other => return Err(Error::Schema(format!("unknown delimiter {other:?}"))),
                    }
                }
                "header" => {
                    schema.header = value
                        .parse()
                        .map_err(|_| Error::Schema(format!("header must be true/false, got {value:?}")))?
                }
                other => return Err(Error::Schema(format!("unknown schema key {other:?}"))),
            }
        }
        schema.block = block.ok_or_else(|| Error::Schema("missing block column".into()))?;
        schema.check_roles()?;
        Ok(schema)
    }

    /// Like [`Schema::parse`], but reads the text from `arg` when it names an
    /// existing file.
    pub fn from_arg(arg: &str) -> Result<Self> {
        let path = Path::new(arg);
        if path.is_file() {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            Schema::parse(&text)
        } else {
            Schema::parse(arg)
        }
    }

    fn check_roles(&self) -> Result<()> {
        let mut cols = vec![self.block];
        cols.extend(self.case);
        cols.extend(self.label);
        let mut sorted = cols.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != cols.len() {
            return Err(Error::Schema("role columns must be distinct".into()));
        }
        Ok(())
    }

    fn role_columns(&self) -> usize {
        1 + self.case.is_some() as usize + self.label.is_some() as usize
    }
}

fn parse_column(key: &str, value: &str) -> Result<usize> {
    match value.parse::<usize>() {
        Ok(c) if c >= 1 => Ok(c - 1),
        _ => Err(Error::Schema(format!(
            "{key} must be a 1-based column number, got {value:?}"
        ))),
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "block={}", self.block + 1)?;
        if let Some(c) = self.case {
            write!(f, ",case={}", c + 1)?;
        }
        if let Some(l) = self.label {
            write!(f, ",label={}", l + 1)?;
        }
        let delim = match self.delimiter {
            Delimiter::Whitespace => "whitespace",
            Delimiter::Comma => "comma",
        };
        write!(f, ",delim={delim},header={}", self.header)
    }
}

/// Feature matrix, optional binary labels, and block membership.
///
/// Blocks are keyed by their literal identifier and indexed in order of first
/// appearance. Rows keep file order.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockedDataset {
    n_vars: usize,
    features: Vec<f64>,
    labels: Option<Vec<u8>>,
    case_ids: Option<Vec<String>>,
    block_keys: Vec<String>,
    block_of_row: Vec<usize>,
    block_rows: Vec<Vec<usize>>,
}

impl BlockedDataset {
    /// Builds a dataset from row-major features. Checks shapes, finiteness,
    /// and label values; does not require positives per block (see
    /// [`BlockedDataset::check_positive_blocks`]).
    pub fn new(
        block_ids: Vec<String>,
        case_ids: Option<Vec<String>>,
        labels: Option<Vec<u8>>,
        features: Vec<f64>,
        n_vars: usize,
    ) -> Result<Self> {
        let n = block_ids.len();
        if n_vars == 0 {
            return Err(Error::Validation("dataset needs at least one feature".into()));
        }
        if n == 0 {
            return Err(Error::Validation("dataset has no rows".into()));
        }
        if features.len() != n * n_vars {
            return Err(Error::Validation(format!(
                "feature matrix has {} values, expected {n} x {n_vars}",
                features.len()
            )));
        }
        if let Some(ids) = &case_ids {
            if ids.len() != n {
                return Err(Error::Validation("case id count differs from row count".into()));
            }
        }
        if let Some(y) = &labels {
            if y.len() != n {
                return Err(Error::Validation("label count differs from row count".into()));
            }
            if let Some(row) = y.iter().position(|&v| v > 1) {
                return Err(Error::Validation(format!("row {}: label must be 0 or 1", row + 1)));
            }
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "row {}, feature {}: non-finite value",
                pos / n_vars + 1,
                pos % n_vars + 1
            )));
        }

        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut block_keys = Vec::new();
        let mut block_of_row = Vec::with_capacity(n);
        let mut block_rows: Vec<Vec<usize>> = Vec::new();
        for (row, key) in block_ids.iter().enumerate() {
            let b = *index.entry(key.as_str()).or_insert_with(|| {
                block_keys.push(key.clone());
                block_rows.push(Vec::new());
                block_keys.len() - 1
            });
            block_of_row.push(b);
            block_rows[b].push(row);
        }

        Ok(BlockedDataset {
            n_vars,
            features,
            labels,
            case_ids,
            block_keys,
            block_of_row,
            block_rows,
        })
    }

    pub fn n_cases(&self) -> usize {
        self.block_of_row.len()
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn n_blocks(&self) -> usize {
        self.block_keys.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_vars..(i + 1) * self.n_vars]
    }

    pub fn value(&self, row: usize, var: usize) -> f64 {
        self.features[row * self.n_vars + var]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn require_labels(&self) -> Result<&[u8]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::Validation("dataset has no labels".into()))
    }

    pub fn case_ids(&self) -> Option<&[String]> {
        self.case_ids.as_deref()
    }

    /// Case id of a row, or its 1-based row number when the file has none.
    pub fn case_label(&self, row: usize) -> String {
        match &self.case_ids {
            Some(ids) => ids[row].clone(),
            None => (row + 1).to_string(),
        }
    }

    pub fn block_keys(&self) -> &[String] {
        &self.block_keys
    }

    pub fn block_of_row(&self) -> &[usize] {
        &self.block_of_row
    }

    pub fn block_rows(&self) -> &[Vec<usize>] {
        &self.block_rows
    }

    pub fn block_key_of_row(&self, row: usize) -> &str {
        &self.block_keys[self.block_of_row[row]]
    }

    /// Same rows and blocks with new labels.
    pub fn with_labels(&self, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != self.n_cases() {
            return Err(Error::Validation("label count differs from row count".into()));
        }
        if labels.iter().any(|&v| v > 1) {
            return Err(Error::Validation("labels must be 0 or 1".into()));
        }
        Ok(BlockedDataset {
            labels: Some(labels),
            ..self.clone()
        })
    }

    /// Same rows with every feature multiplied column-wise by `scale`.
    pub fn scaled(&self, scale: &[f64]) -> Self {
        assert_eq!(scale.len(), self.n_vars);
        let features = self
            .features
            .chunks(self.n_vars)
            .flat_map(|row| row.iter().zip(scale).map(|(x, s)| x * s))
            .collect();
        BlockedDataset {
            features,
            ..self.clone()
        }
    }

    pub fn positives_in_block(&self, block: usize) -> Option<usize> {
        let y = self.labels.as_ref()?;
        Some(self.block_rows[block].iter().filter(|&&r| y[r] == 1).count())
    }

    /// Blocks (by key) that contain no positive case.
    pub fn empty_blocks(&self) -> Vec<String> {
        (0..self.n_blocks())
            .filter(|&b| self.positives_in_block(b) == Some(0))
            .map(|b| self.block_keys[b].clone())
            .collect()
    }

    /// Requires labels and at least one positive in every block.
    pub fn check_positive_blocks(&self) -> Result<()> {
        self.require_labels()?;
        match self.empty_blocks().first() {
            Some(key) => Err(Error::Validation(format!("block {key:?} has no positive cases"))),
            None => Ok(()),
        }
    }

    /// Keeps only the listed blocks (by index), preserving row order.
    pub fn select_blocks(&self, keep: &[usize]) -> Result<Self> {
        let mut mask = vec![false; self.n_blocks()];
        for &b in keep {
            mask[b] = true;
        }
        let rows: Vec<usize> = (0..self.n_cases())
            .filter(|&r| mask[self.block_of_row[r]])
            .collect();
        BlockedDataset::new(
            rows.iter().map(|&r| self.block_key_of_row(r).to_string()).collect(),
            self.case_ids
                .as_ref()
                .map(|ids| rows.iter().map(|&r| ids[r].clone()).collect()),
            self.labels.as_ref().map(|y| rows.iter().map(|&r| y[r]).collect()),
            rows.iter().flat_map(|&r| self.row(r).iter().copied()).collect(),
            self.n_vars,
        )
    }
}

/// Reads a delimited file according to `schema`.
pub fn load_dataset(path: impl AsRef<Path>, schema: &Schema) -> Result<BlockedDataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);

    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut width = None;
    let mut block_ids = Vec::new();
    let mut case_ids = schema.case.map(|_| Vec::new());
    let mut labels = schema.label.map(|_| Vec::new());
    let mut features = Vec::new();
    let mut skipped_header = !schema.header;

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        if !skipped_header {
            skipped_header = true;
            continue;
        }
        let fields = schema.delimiter.split(&line);
        let w = *width.get_or_insert(fields.len());
        if fields.len() != w {
            return Err(parse_err(
                lineno,
                format!("expected {w} columns, found {}", fields.len()),
            ));
        }
        if w <= schema.role_columns() {
            return Err(parse_err(lineno, "no feature columns".into()));
        }
        for (col, field) in fields.iter().enumerate() {
            if col == schema.block {
                block_ids.push(field.to_string());
            } else if schema.case == Some(col) {
                case_ids.as_mut().unwrap().push(field.to_string());
            } else if schema.label == Some(col) {
                labels.as_mut().unwrap().push(parse_label(field).ok_or_else(|| {
                    parse_err(lineno, format!("label must be 0 or 1, got {field:?}"))
                })?);
            } else {
                let v: f64 = field.parse().map_err(|_| {
                    parse_err(lineno, format!("column {}: not a number: {field:?}", col + 1))
                })?;
                if !v.is_finite() {
                    return Err(Error::Validation(format!(
                        "{}:{lineno}: column {}: non-finite feature value {field:?}",
                        path.display(),
                        col + 1
                    )));
                }
                features.push(v);
            }
        }
        if schema.block >= w || schema.case.is_some_and(|c| c >= w) || schema.label.is_some_and(|c| c >= w) {
            return Err(parse_err(lineno, "role column beyond row width".into()));
        }
    }

    let width = width.ok_or_else(|| Error::Validation(format!("{}: no data rows", path.display())))?;
    let n_vars = width - schema.role_columns();
    let ds = BlockedDataset::new(block_ids, case_ids, labels, features, n_vars)?;
    if schema.require_positive_blocks && ds.labels().is_some() {
        ds.check_positive_blocks()?;
    }
    Ok(ds)
}

fn parse_label(field: &str) -> Option<u8> {
    match field {
        "0" => Some(0),
        "1" => Some(1),
        _ => match field.parse::<f64>() {
            Ok(v) if v == 0.0 => Some(0),
            Ok(v) if v == 1.0 => Some(1),
            _ => None,
        },
    }
}

/// Writes `ds` in the layout described by `schema`. Feature values use the
/// shortest representation that parses back to the same `f64`.
pub fn write_dataset(ds: &BlockedDataset, path: impl AsRef<Path>, schema: &Schema) -> Result<()> {
    let path = path.as_ref();
    if schema.label.is_some() && ds.labels().is_none() {
        return Err(Error::Validation("schema has a label column but dataset is unlabeled".into()));
    }
    let width = ds.n_vars() + schema.role_columns();
    if schema.block >= width
        || schema.case.is_some_and(|c| c >= width)
        || schema.label.is_some_and(|c| c >= width)
    {
        return Err(Error::Schema("role column beyond row width".into()));
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let sep = schema.delimiter.separator();
    let io = |e| Error::io(path, e);
    if schema.header {
        let mut var = 0;
        let names: Vec<String> = (0..width)
            .map(|col| {
                if col == schema.block {
                    "block".into()
                } else if schema.case == Some(col) {
                    "case".into()
                } else if schema.label == Some(col) {
                    "label".into()
                } else {
                    var += 1;
                    format!("x{var}")
                }
            })
            .collect();
        writeln!(out, "{}", names.join(sep)).map_err(io)?;
    }
    for row in 0..ds.n_cases() {
        let mut var = 0;
        let fields: Vec<String> = (0..width)
            .map(|col| {
                if col == schema.block {
                    ds.block_key_of_row(row).to_string()
                } else if schema.case == Some(col) {
                    ds.case_label(row)
                } else if schema.label == Some(col) {
                    ds.labels().unwrap()[row].to_string()
                } else {
                    var += 1;
                    format!("{}", ds.value(row, var - 1))
                }
            })
            .collect();
        writeln!(out, "{}", fields.join(sep)).map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Block-level assignment to `v` cross-validation folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub block_to_fold: BTreeMap<String, usize>,
    pub v: usize,
    pub seed: u64,
}

impl FoldAssignment {
    /// Fold index of each block of `ds`, indexed like `ds.block_keys()`.
    pub fn block_folds(&self, ds: &BlockedDataset) -> Result<Vec<usize>> {
        ds.block_keys()
            .iter()
            .map(|k| {
                self.block_to_fold
                    .get(k)
                    .copied()
                    .ok_or_else(|| Error::Validation(format!("block {k:?} has no fold")))
            })
            .collect()
    }

    /// Number of blocks in each fold.
    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.v];
        for &f in self.block_to_fold.values() {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Sorts block keys, shuffles them with a seeded ChaCha8 stream, and deals
/// them round-robin into `v` folds.
pub fn make_folds(ds: &BlockedDataset, v: usize, seed: u64) -> Result<FoldAssignment> {
    let mut keys: Vec<String> = ds.block_keys().to_vec();
    if v == 0 {
        return Err(Error::InvalidArgument("fold count must be positive".into()));
    }
    if keys.len() < v {
        return Err(Error::InvalidArgument(format!(
            "{} blocks cannot fill {v} folds",
            keys.len()
        )));
    }
    keys.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    keys.shuffle(&mut rng);
    let block_to_fold = keys
        .into_iter()
        .enumerate()
        .map(|(i, k)| (k, i % v))
        .collect();
    Ok(FoldAssignment {
        block_to_fold,
        v,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn blocks_dataset(n_blocks: usize) -> BlockedDataset {
        let ids: Vec<String> = (0..n_blocks).flat_map(|b| [b.to_string(), b.to_string()]).collect();
        let labels = (0..n_blocks).flat_map(|_| [1, 0]).collect();
        let features = (0..2 * n_blocks).map(|i| i as f64).collect();
        BlockedDataset::new(ids, None, Some(labels), features, 1).unwrap()
    }

    #[test]
    fn loads_minimal_file() {
        let f = write_tmp("a 1 0.5 2\na 0 0.1 3\nb 1 0.7 1\nb 0 0.2 0\n");
        let schema = Schema::parse("block=1,label=2").unwrap();
        let ds = load_dataset(f.path(), &schema).unwrap();
        assert_eq!(ds.n_cases(), 4);
        assert_eq!(ds.n_vars(), 2);
        assert_eq!(ds.n_blocks(), 2);
        assert_eq!(ds.labels().unwrap(), &[1, 0, 1, 0]);
        assert_eq!(ds.row(2), &[0.7, 1.0]);
    }

    #[test]
    fn nan_feature_is_validation_error() {
        let f = write_tmp("a 1 NaN\na 0 0.2\n");
        let err = load_dataset(f.path(), &Schema::parse("block=1,label=2").unwrap()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn ragged_row_reports_line() {
        let f = write_tmp("a 1 0.5 2\na 0 0.1\n");
        match load_dataset(f.path(), &Schema::parse("block=1,label=2").unwrap()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn block_without_positive_is_rejected() {
        let f = write_tmp("a 1 0.5\na 0 0.1\nzz 0 0.3\n");
        let err = load_dataset(f.path(), &Schema::parse("block=1,label=2").unwrap()).unwrap_err();
        assert!(err.to_string().contains("zz"), "{err}");

        let mut schema = Schema::parse("block=1,label=2").unwrap();
        schema.require_positive_blocks = false;
        let ds = load_dataset(f.path(), &schema).unwrap();
        assert_eq!(ds.empty_blocks(), vec!["zz".to_string()]);
    }

    #[test]
    fn kdd_layout_with_74_features() {
        let mut text = String::new();
        for (case, label) in [(1, 1), (2, 0)] {
            let feats: Vec<String> = (0..74).map(|j| format!("{}", j as f64 * 0.5)).collect();
            text.push_str(&format!("279 {case} {label} {}\n", feats.join(" ")));
        }
        let f = write_tmp(&text);
        let ds = load_dataset(f.path(), &Schema::kdd_train()).unwrap();
        assert_eq!(ds.n_vars(), 74);
        assert_eq!(ds.case_ids().unwrap(), &["1".to_string(), "2".to_string()]);
    }

    #[test]
    fn comma_schema_with_header() {
        let f = write_tmp("label,x,block\n1,0.25,b1\n0,-1e3,b1\n");
        let schema = Schema::parse("label=1\nblock=3\n# comment\ndelim=comma,header=true").unwrap();
        let ds = load_dataset(f.path(), &schema).unwrap();
        assert_eq!(ds.n_vars(), 1);
        assert_eq!(ds.block_keys(), &["b1".to_string()]);
        assert_eq!(ds.row(1), &[-1000.0]);
    }

    #[test]
    fn schema_rejects_duplicate_roles() {
        assert!(Schema::parse("block=1,label=1").is_err());
        assert!(Schema::parse("label=2").is_err());
        assert!(Schema::parse("block=0").is_err());
    }

    #[test]
    fn block_keys_are_literal_strings() {
        let ds = BlockedDataset::new(
            vec!["01".into(), "1".into()],
            None,
            Some(vec![1, 1]),
            vec![0.0, 1.0],
            1,
        )
        .unwrap();
        assert_eq!(ds.n_blocks(), 2);
    }

    #[test]
    fn folds_one_block_each() {
        let folds = make_folds(&blocks_dataset(10), 10, 3).unwrap();
        assert_eq!(folds.fold_sizes(), vec![1; 10]);
    }

    #[test]
    fn folds_153_blocks_into_ten() {
        let folds = make_folds(&blocks_dataset(153), 10, 42).unwrap();
        let sizes = folds.fold_sizes();
        assert!(sizes.iter().all(|&s| s == 15 || s == 16), "{sizes:?}");
        assert_eq!(sizes.iter().sum::<usize>(), 153);
    }

    #[test]
    fn folds_are_deterministic() {
        let ds = blocks_dataset(37);
        assert_eq!(make_folds(&ds, 10, 9).unwrap(), make_folds(&ds, 10, 9).unwrap());
    }

    #[test]
    fn too_few_blocks_for_folds() {
        assert!(make_folds(&blocks_dataset(3), 4, 0).is_err());
    }

    #[test]
    fn write_then_load_round_trips() {
        let ds = BlockedDataset::new(
            vec!["x".into(), "x".into(), "y".into()],
            Some(vec!["c1".into(), "c2".into(), "c3".into()]),
            Some(vec![1, 0, 1]),
            vec![0.1, 1.0 / 3.0, -2.5e-300, 7.0, f64::MAX, f64::MIN_POSITIVE],
            2,
        )
        .unwrap();
        let schema = Schema::kdd_train();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_dataset(&ds, f.path(), &schema).unwrap();
        let back = load_dataset(f.path(), &schema).unwrap();
        assert_eq!(back, ds);
    }
}
