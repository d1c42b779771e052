//! Tabular ingestion and binarization.
//!
//! Binary columns pass through, categorical columns are one-hot encoded and
//! numerical columns are compared against quantile thresholds, giving a
//! thermometer code (`x <= t_1`, `x <= t_2`, ... with ascending `t`). Negated
//! conditions are never materialized as extra columns because the rules layer
//! learns negation through negative weights.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of quantile thresholds per numerical column (deciles).
pub const DEFAULT_THRESHOLDS: usize = 9;

const DATASET_MAGIC: &[u8; 8] = b"DRNBIN\0\0";
const DATASET_VERSION: u32 = 1;
const SCHEMA_VERSION: u32 = 1;

/// A CSV table held as trimmed strings.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        let mut rows = Vec::new();
        for record in rdr.records() {
            let record = record?;
            rows.push(record.iter().map(str::to_owned).collect());
        }
        Ok(RawTable { headers, rows })
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(std::io::BufReader::new(file)).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_owned()))
    }

    pub fn column<'a>(&'a self, idx: usize) -> impl Iterator<Item = &'a str> + 'a {
        self.rows.iter().map(move |r| r.get(idx).map(String::as_str).unwrap_or(""))
    }

    /// New table holding only the listed rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> RawTable {
        RawTable {
            headers: self.headers.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Binary,
    Categorical,
    Numerical,
    Target,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

fn default_schema_version() -> u32 {
    SCHEMA_VERSION
}

fn default_missing() -> Vec<String> {
    vec![String::new(), "?".to_owned()]
}

/// Column kinds plus the target declaration. Table columns not listed here
/// are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    #[serde(default = "default_schema_version")]
    pub version: u32,
    pub target: String,
    /// Target value mapped to 1. When absent, the larger of the two values
    /// (numerically if both parse, else lexicographically) is positive.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive_label: Option<String>,
    /// Cell values treated as missing.
    #[serde(default = "default_missing")]
    pub missing: Vec<String>,
    pub columns: Vec<ColumnSpec>,
}

impl Schema {
    pub fn from_json(text: &str) -> Result<Self> {
        let schema: Schema = serde_json::from_str(text)?;
        if schema.version != SCHEMA_VERSION {
            return Err(Error::Version { what: "schema", found: schema.version, expected: SCHEMA_VERSION });
        }
        let targets = schema.columns.iter().filter(|c| c.kind == ColumnKind::Target).count();
        if targets != 1 {
            return Err(Error::TargetCount(targets));
        }
        if !schema.columns.iter().any(|c| c.kind == ColumnKind::Target && c.name == schema.target) {
            return Err(Error::Invalid(format!("target `{}` is not the column marked as target", schema.target)));
        }
        Ok(schema)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    fn is_missing(&self, cell: &str) -> bool {
        self.missing.iter().any(|m| m == cell)
    }

    /// Checks column presence and the target column, returning the resolved
    /// target mapping.
    pub fn resolve_target(&self, table: &RawTable) -> Result<TargetSpec> {
        for col in &self.columns {
            table.column_index(&col.name)?;
        }
        let idx = table.column_index(&self.target)?;
        let values = distinct_in_order(table.column(idx).filter(|c| !self.is_missing(c)));
        if values.len() != 2 {
            return Err(Error::NonBinaryTarget { column: self.target.clone(), found: values.len() });
        }
        let positive = match &self.positive_label {
            Some(p) if values.contains(p) => p.clone(),
            Some(p) => {
                return Err(Error::Invalid(format!("positive label `{p}` does not occur in column `{}`", self.target)))
            }
            None => larger_value(&values[0], &values[1]).to_owned(),
        };
        let negative = values.into_iter().find(|v| *v != positive).expect("two distinct values");
        Ok(TargetSpec { column: self.target.clone(), positive, negative })
    }
}

/// Target column name and the two class values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub column: String,
    pub positive: String,
    pub negative: String,
}

fn distinct_in_order<'a>(cells: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for c in cells {
        if seen.insert(c) {
            out.push(c.to_owned());
        }
    }
    out
}

fn larger_value<'a>(a: &'a str, b: &'a str) -> &'a str {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => {
            if y > x {
                b
            } else {
                a
            }
        }
        _ => {
            if b > a {
                b
            } else {
                a
            }
        }
    }
}

/// Guesses column kinds. Columns with at most two distinct non-missing values
/// are binary, columns whose values all parse as numbers are numerical, and
/// everything else is categorical. The target is never guessed.
pub fn infer_schema(table: &RawTable, target: &str) -> Result<Schema> {
    if table.is_empty() {
        return Err(Error::EmptyTable);
    }
    let missing = default_missing();
    let mut columns = Vec::with_capacity(table.headers.len());
    for (idx, name) in table.headers.iter().enumerate() {
        let kind = if name == target {
            ColumnKind::Target
        } else {
            let present: Vec<&str> = table.column(idx).filter(|c| !missing.iter().any(|m| m == c)).collect();
            let distinct = distinct_in_order(present.iter().copied());
            if distinct.len() <= 2 {
                ColumnKind::Binary
            } else if present.iter().all(|c| c.parse::<f64>().is_ok()) {
                ColumnKind::Numerical
            } else {
                ColumnKind::Categorical
            }
        };
        columns.push(ColumnSpec { name: name.clone(), kind });
    }
    let schema = Schema {
        version: SCHEMA_VERSION,
        target: target.to_owned(),
        positive_label: None,
        missing,
        columns,
    };
    schema.resolve_target(table)?;
    Ok(schema)
}

/// The `j/(T+1)` empirical quantiles for `j = 1..=T`, linearly interpolated
/// between order statistics, deduplicated and ascending.
///
/// Thresholds at or above the column maximum are dropped: they would encode
/// every row as 1. A constant column therefore yields no thresholds.
pub fn quantile_thresholds(values: &[f64], count: usize) -> Vec<f64> {
    let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if sorted.is_empty() || count == 0 {
        return Vec::new();
    }
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let max = sorted[n - 1];
    let mut out: Vec<f64> = Vec::with_capacity(count);
    for j in 1..=count {
        let p = j as f64 / (count + 1) as f64;
        let h = (n - 1) as f64 * p;
        let lo = h.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        let frac = h - lo as f64;
        let q = sorted[lo] + frac * (sorted[hi] - sorted[lo]);
        if q < max && out.last() != Some(&q) {
            out.push(q);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeatureTest {
    /// Binary column; 1 when the cell equals `one`.
    Identity { one: String },
    Equals { value: String },
    Leq { threshold: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinFeature {
    pub column: String,
    pub test: FeatureTest,
    pub label: String,
}

impl BinFeature {
    /// Text for the feature as a condition, or for its negation.
    pub fn describe(&self, negated: bool) -> String {
        match (&self.test, negated) {
            (FeatureTest::Identity { .. }, false) => self.label.clone(),
            (FeatureTest::Identity { .. }, true) => format!("NOT {}", self.label),
            (FeatureTest::Equals { value }, false) => format!("{} = {}", self.column, value),
            (FeatureTest::Equals { value }, true) => format!("{} ≠ {}", self.column, value),
            (FeatureTest::Leq { threshold }, false) => format!("{} ≤ {}", self.column, format_threshold(*threshold)),
            (FeatureTest::Leq { threshold }, true) => format!("{} > {}", self.column, format_threshold(*threshold)),
        }
    }
}

/// Six significant digits, trailing zeros trimmed.
pub fn format_threshold(t: f64) -> String {
    if t == 0.0 || !t.is_finite() {
        return format!("{t}");
    }
    let magnitude = t.abs().log10().floor() as i32;
    let decimals = (5 - magnitude).max(0) as usize;
    let s = format!("{t:.decimals$}");
    let s = if s.contains('.') { s.trim_end_matches('0').trim_end_matches('.').to_owned() } else { s };
    if s == "-0" {
        "0".to_owned()
    } else {
        s
    }
}

/// Ordered binary features with their provenance in the source table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinFeatureMap {
    pub entries: Vec<BinFeature>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<TargetSpec>,
    #[serde(default = "default_missing")]
    pub missing: Vec<String>,
}

impl BinFeatureMap {
    /// Map over already-binary columns named `names` (cells "0"/"1").
    pub fn identity<S: AsRef<str>>(names: &[S]) -> Self {
        BinFeatureMap {
            entries: names
                .iter()
                .map(|n| BinFeature {
                    column: n.as_ref().to_owned(),
                    test: FeatureTest::Identity { one: "1".to_owned() },
                    label: n.as_ref().to_owned(),
                })
                .collect(),
            target: None,
            missing: default_missing(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn encoder(&self, headers: &[String]) -> Result<RowEncoder<'_>> {
        let index_of = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.to_owned()))
        };
        let columns = self.entries.iter().map(|e| index_of(&e.column)).collect::<Result<Vec<_>>>()?;
        // The target may be absent: unlabelled rows can still be encoded.
        let target = self.target.as_ref().and_then(|t| headers.iter().position(|h| *h == t.column));
        Ok(RowEncoder { map: self, columns, target })
    }

    /// One line per binary feature: index, source column and label.
    pub fn listing(&self) -> String {
        let mut out = String::new();
        for (i, e) in self.entries.iter().enumerate() {
            let kind = match e.test {
                FeatureTest::Identity { .. } => "identity",
                FeatureTest::Equals { .. } => "equals",
                FeatureTest::Leq { .. } => "leq",
            };
            let _ = writeln!(out, "{i:>5}  {:<9} {:<24} {}", kind, e.column, e.label);
        }
        if let Some(t) = &self.target {
            let _ = writeln!(out, "target: {} (positive = {}, negative = {})", t.column, t.positive, t.negative);
        }
        out
    }

    fn check_labels(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.label.as_str()) {
                return Err(Error::Invalid(format!("duplicate feature label `{}`", e.label)));
            }
        }
        Ok(())
    }
}

/// Builds the feature map from the fitting table.
pub fn fit_binarizer(table: &RawTable, schema: &Schema, thresholds: usize) -> Result<BinFeatureMap> {
    if table.is_empty() {
        return Err(Error::EmptyTable);
    }
    let target = schema.resolve_target(table)?;
    let mut entries = Vec::new();
    for col in &schema.columns {
        let idx = table.column_index(&col.name)?;
        let present = || table.column(idx).filter(|c| !schema.is_missing(c));
        match col.kind {
            ColumnKind::Target => {}
            ColumnKind::Binary => {
                let values = distinct_in_order(present());
                let one = match values.as_slice() {
                    [] => continue,
                    [v] => v.clone(),
                    [a, b] => larger_value(a, b).to_owned(),
                    _ => {
                        return Err(Error::Invalid(format!(
                            "binary column `{}` has {} distinct values",
                            col.name,
                            values.len()
                        )))
                    }
                };
                let label = if one == "1" { col.name.clone() } else { format!("{} = {}", col.name, one) };
                entries.push(BinFeature { column: col.name.clone(), test: FeatureTest::Identity { one }, label });
            }
            ColumnKind::Categorical => {
                for value in distinct_in_order(present()) {
                    entries.push(BinFeature {
                        column: col.name.clone(),
                        label: format!("{} = {}", col.name, value),
                        test: FeatureTest::Equals { value },
                    });
                }
            }
            ColumnKind::Numerical => {
                let mut values = Vec::new();
                for (row, cell) in table.column(idx).enumerate() {
                    if schema.is_missing(cell) {
                        continue;
                    }
                    let v = parse_number(cell, row, &col.name)?;
                    if v.is_finite() {
                        values.push(v);
                    }
                }
                if values.is_empty() {
                    return Err(Error::NoFiniteValues(col.name.clone()));
                }
                for t in quantile_thresholds(&values, thresholds) {
                    entries.push(BinFeature {
                        column: col.name.clone(),
                        label: format!("{} ≤ {}", col.name, format_threshold(t)),
                        test: FeatureTest::Leq { threshold: t },
                    });
                }
            }
        }
    }
    let mut map = BinFeatureMap { entries, target: Some(target), missing: schema.missing.clone() };
    dedupe_labels(&mut map);
    map.check_labels()?;
    Ok(map)
}

// Rounded threshold labels can collide; fall back to the exact value.
fn dedupe_labels(map: &mut BinFeatureMap) {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for e in &map.entries {
        *counts.entry(e.label.clone()).or_default() += 1;
    }
    for e in &mut map.entries {
        if counts[&e.label] > 1 {
            if let FeatureTest::Leq { threshold } = e.test {
                e.label = format!("{} ≤ {:?}", e.column, threshold);
            }
        }
    }
}

fn parse_number(cell: &str, row: usize, column: &str) -> Result<f64> {
    cell.parse::<f64>().map_err(|_| Error::BadNumber {
        row,
        column: column.to_owned(),
        value: cell.to_owned(),
    })
}

/// A feature map bound to a concrete header layout.
pub struct RowEncoder<'a> {
    map: &'a BinFeatureMap,
    columns: Vec<usize>,
    target: Option<usize>,
}

impl RowEncoder<'_> {
    /// Binary feature vector for one row. `row_index` is used in diagnostics.
    pub fn encode(&self, row: &[String], row_index: usize) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(self.columns.len());
        for (entry, &col) in self.map.entries.iter().zip(&self.columns) {
            let cell = row.get(col).map(String::as_str).unwrap_or("");
            if self.map.missing.iter().any(|m| m == cell) {
                return Err(Error::MissingValue { row: row_index, column: entry.column.clone() });
            }
            let bit = match &entry.test {
                FeatureTest::Identity { one } => cell == one,
                FeatureTest::Equals { value } => cell == value,
                FeatureTest::Leq { threshold } => parse_number(cell, row_index, &entry.column)? <= *threshold,
            };
            out.push(bit as u8);
        }
        Ok(out)
    }

    pub fn label(&self, row: &[String], row_index: usize) -> Result<u8> {
        let Some(target) = &self.map.target else {
            return Err(Error::Invalid("feature map has no target column".to_owned()));
        };
        let Some(col) = self.target else {
            return Err(Error::MissingColumn(target.column.clone()));
        };
        let cell = row.get(col).map(String::as_str).unwrap_or("");
        if self.map.missing.iter().any(|m| m == cell) {
            return Err(Error::MissingValue { row: row_index, column: target.column.clone() });
        }
        if cell == target.positive {
            Ok(1)
        } else if cell == target.negative {
            Ok(0)
        } else {
            Err(Error::Invalid(format!(
                "row {row_index}: target value `{cell}` is neither `{}` nor `{}`",
                target.positive, target.negative
            )))
        }
    }
}

/// Dense N×D binary matrix with labels and feature provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct BinarizedDataset {
    x: Vec<u8>,
    y: Vec<u8>,
    n: usize,
    d: usize,
    pub map: BinFeatureMap,
}

/// Result of encoding a table: the dataset plus rows dropped for missing cells.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub dataset: BinarizedDataset,
    pub rejected: usize,
}

impl BinarizedDataset {
    pub fn new(x: Vec<u8>, y: Vec<u8>, map: BinFeatureMap) -> Result<Self> {
        let d = map.len();
        let n = y.len();
        if x.len() != n * d {
            return Err(Error::Dimension { what: "feature matrix", expected: n * d, got: x.len() });
        }
        if x.iter().chain(&y).any(|&b| b > 1) {
            return Err(Error::Invalid("dataset entries must be 0 or 1".to_owned()));
        }
        Ok(BinarizedDataset { x, y, n, d, map })
    }

    /// Encodes every row of `table`. Rows with a missing referenced cell are
    /// skipped and counted; other cell errors abort.
    pub fn encode_table(table: &RawTable, map: &BinFeatureMap) -> Result<Encoded> {
        let encoder = map.encoder(&table.headers)?;
        let mut x = Vec::with_capacity(table.len() * map.len());
        let mut y = Vec::with_capacity(table.len());
        let mut rejected = 0;
        for (i, row) in table.rows.iter().enumerate() {
            let encoded = encoder.encode(row, i).and_then(|bits| Ok((bits, encoder.label(row, i)?)));
            match encoded {
                Ok((bits, label)) => {
                    x.extend_from_slice(&bits);
                    y.push(label);
                }
                Err(Error::MissingValue { .. }) => rejected += 1,
                Err(e) => return Err(e),
            }
        }
        Ok(Encoded { dataset: BinarizedDataset::new(x, y, map.clone())?, rejected })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u8]> {
        self.x.chunks(self.d.max(1)).take(self.n)
    }

    pub fn labels(&self) -> &[u8] {
        &self.y
    }

    pub fn subset(&self, indices: &[usize]) -> BinarizedDataset {
        let mut x = Vec::with_capacity(indices.len() * self.d);
        let mut y = Vec::with_capacity(indices.len());
        for &i in indices {
            x.extend_from_slice(self.row(i));
            y.push(self.y[i]);
        }
        BinarizedDataset { x, y, n: indices.len(), d: self.d, map: self.map.clone() }
    }

    /// Binary container: magic, version, sizes, JSON feature map, labels
    /// (one byte each) and X packed LSB-first in row-major bit order.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let map_json = serde_json::to_vec(&self.map)?;
        let mut buf = Vec::with_capacity(32 + map_json.len() + self.n + self.x.len() / 8 + 1);
        buf.extend_from_slice(DATASET_MAGIC);
        buf.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.n as u64).to_le_bytes());
        buf.extend_from_slice(&(self.d as u64).to_le_bytes());
        buf.extend_from_slice(&(map_json.len() as u32).to_le_bytes());
        buf.extend_from_slice(&map_json);
        buf.extend_from_slice(&self.y);
        let mut packed = vec![0u8; self.x.len().div_ceil(8)];
        for (k, &bit) in self.x.iter().enumerate() {
            packed[k / 8] |= bit << (k % 8);
        }
        buf.extend_from_slice(&packed);
        w.write_all(&buf).map_err(|e| Error::io("<dataset>", e))
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf).map_err(|e| Error::io("<dataset>", e))?;
        let malformed = |reason: &str| Error::Malformed { what: "dataset file", reason: reason.to_owned() };
        let mut cursor = Cursor { buf: &buf, pos: 0 };
        if cursor.take(8).ok_or_else(|| malformed("truncated header"))? != DATASET_MAGIC {
            return Err(malformed("bad magic"));
        }
        let version = cursor.u32().ok_or_else(|| malformed("truncated header"))?;
        if version != DATASET_VERSION {
            return Err(Error::Version { what: "dataset file", found: version, expected: DATASET_VERSION });
        }
        let n = cursor.u64().ok_or_else(|| malformed("truncated header"))? as usize;
        let d = cursor.u64().ok_or_else(|| malformed("truncated header"))? as usize;
        let map_len = cursor.u32().ok_or_else(|| malformed("truncated header"))? as usize;
        let map: BinFeatureMap =
            serde_json::from_slice(cursor.take(map_len).ok_or_else(|| malformed("truncated feature map"))?)?;
        if map.len() != d {
            return Err(Error::Dimension { what: "feature map", expected: d, got: map.len() });
        }
        let y = cursor.take(n).ok_or_else(|| malformed("truncated labels"))?.to_vec();
        let bits = n.checked_mul(d).ok_or_else(|| malformed("size overflow"))?;
        let packed = cursor.take(bits.div_ceil(8)).ok_or_else(|| malformed("truncated matrix"))?;
        if cursor.pos != buf.len() {
            return Err(malformed("trailing bytes"));
        }
        let x = (0..bits).map(|k| (packed[k / 8] >> (k % 8)) & 1).collect();
        BinarizedDataset::new(x, y, map)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Whether `prefix` starts like a dataset container.
    pub fn has_magic(prefix: &[u8]) -> bool {
        prefix.starts_with(DATASET_MAGIC)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(file)).map_err(|e| e.context(path.display().to_string()))
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(len)?;
        let out = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(out)
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }

    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
}
