//! Typed tables ingested from delimited text.
//!
//! Every cell keeps its original text. Continuous cells additionally carry the
//! parsed value, and only texts that re-render to themselves are accepted as
//! numbers, so writing a table back out reproduces the input cells exactly.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV at row {row}: {message}")]
    Malformed { row: u64, message: String },
    #[error("input is empty (no header row)")]
    Empty,
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("row {row}: expected {expected} cells, found {found}")]
    Arity { row: usize, expected: usize, found: usize },
    #[error("row {row}, column {column:?}: {text:?} is not a decimal number")]
    NotNumeric { row: usize, column: String, text: String },
    #[error("row {row}, column {column:?}: missing value in a continuous column")]
    MissingContinuous { row: usize, column: String },
    #[error("class {class:?} has only {count} row(s); stratified splitting needs at least 2")]
    ClassTooSmall { class: String, count: usize },
    #[error("test fraction must lie strictly between 0 and 1, got {0}")]
    BadFraction(f64),
    #[error("unknown column {0:?}")]
    UnknownColumn(String),
}

pub type Result<T, E = TableError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ColumnKind {
    Categorical,
    Continuous,
}

impl fmt::Display for ColumnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ColumnKind::Categorical => "categorical",
            ColumnKind::Continuous => "continuous",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    BinaryClassification,
    MulticlassClassification,
    Regression,
    None,
}

impl Task {
    pub fn is_classification(self) -> bool {
        matches!(self, Task::BinaryClassification | Task::MulticlassClassification)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::BinaryClassification => "binary",
            Task::MulticlassClassification => "multiclass",
            Task::Regression => "regression",
            Task::None => "none",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "binary" => Ok(Task::BinaryClassification),
            "multiclass" => Ok(Task::MulticlassClassification),
            "regression" => Ok(Task::Regression),
            "none" | "" => Ok(Task::None),
            other => Err(format!("unknown task {other:?} (binary|multiclass|regression|none)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
}

impl Column {
    pub fn new(name: impl Into<String>, kind: ColumnKind) -> Self {
        Column { name: name.into(), kind }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableSchema {
    columns: Vec<Column>,
    target: Option<usize>,
    task: Task,
}

impl TableSchema {
    pub fn new(columns: Vec<Column>) -> Result<Self> {
        if columns.is_empty() {
            return Err(TableError::Schema("a table needs at least one column".into()));
        }
        let mut seen = HashMap::new();
        for (i, c) in columns.iter().enumerate() {
            if c.name.is_empty() {
                return Err(TableError::Schema(format!("column {i} has an empty name")));
            }
            if let Some(prev) = seen.insert(c.name.as_str(), i) {
                return Err(TableError::Schema(format!("duplicate column name {:?} (columns {prev} and {i})", c.name)));
            }
        }
        Ok(TableSchema { columns, target: None, task: Task::None })
    }

    /// Sets the prediction target. Regression needs a continuous target,
    /// classification a categorical one.
    pub fn with_target(mut self, target: Option<usize>, task: Task) -> Result<Self> {
        match (target, task) {
            (None, Task::None) => {}
            (None, t) => return Err(TableError::Schema(format!("task {} requires a target column", t.as_str()))),
            (Some(i), t) => {
                let col =
                    self.columns.get(i).ok_or_else(|| TableError::Schema(format!("target index {i} out of range")))?;
                let ok = match t {
                    Task::Regression => col.kind == ColumnKind::Continuous,
                    Task::BinaryClassification | Task::MulticlassClassification => col.kind == ColumnKind::Categorical,
                    Task::None => true,
                };
                if !ok {
                    return Err(TableError::Schema(format!(
                        "task {} is incompatible with {} target {:?}",
                        t.as_str(),
                        col.kind,
                        col.name
                    )));
                }
            }
        }
        self.target = target;
        self.task = task;
        Ok(self)
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn column(&self, i: usize) -> &Column {
        &self.columns[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn target(&self) -> Option<usize> {
        self.target
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.name.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    text: String,
    value: Option<f64>,
}

impl Cell {
    pub fn text(&self) -> &str {
        &self.text
    }

    /// Parsed value; present exactly for continuous cells.
    pub fn value(&self) -> Option<f64> {
        self.value
    }
}

/// Parses `-?(0|[1-9][0-9]*)(\.[0-9]+)?` and accepts it only if rendering the
/// value with the text's own precision gives the text back.
pub fn parse_decimal(text: &str) -> Option<f64> {
    let body = text.strip_prefix('-').unwrap_or(text);
    let (int, frac) = match body.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (body, None),
    };
    if int.is_empty() || !int.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    if int.len() > 1 && int.starts_with('0') {
        return None;
    }
    let precision = match frac {
        Some(f) if f.is_empty() || !f.bytes().all(|b| b.is_ascii_digit()) => return None,
        Some(f) => f.len(),
        None => 0,
    };
    if int.len() + precision > 15 {
        return None;
    }
    let value: f64 = text.parse().ok()?;
    if !value.is_finite() || format!("{value:.precision$}") != text {
        return None;
    }
    Some(value)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataTable {
    schema: TableSchema,
    rows: Vec<Vec<Cell>>,
}

impl DataTable {
    /// Builds a table from cell texts, validating arity and continuous cells.
    pub fn from_text_rows(schema: TableSchema, rows: Vec<Vec<String>>) -> Result<Self> {
        let mut out = Vec::with_capacity(rows.len());
        for (r, row) in rows.into_iter().enumerate() {
            if row.len() != schema.len() {
                return Err(TableError::Arity { row: r, expected: schema.len(), found: row.len() });
            }
            let mut cells = Vec::with_capacity(row.len());
            for (c, text) in row.into_iter().enumerate() {
                let col = schema.column(c);
                let value = match col.kind {
                    ColumnKind::Categorical => None,
                    ColumnKind::Continuous if text.is_empty() => {
                        return Err(TableError::MissingContinuous { row: r, column: col.name.clone() })
                    }
                    ColumnKind::Continuous => Some(parse_decimal(&text).ok_or_else(|| TableError::NotNumeric {
                        row: r,
                        column: col.name.clone(),
                        text: text.clone(),
                    })?),
                };
                cells.push(Cell { text, value });
            }
            out.push(cells);
        }
        Ok(DataTable { schema, rows: out })
    }

    /// Infers column kinds from the texts, then builds the table.
    pub fn infer(names: Vec<String>, rows: Vec<Vec<String>>) -> Result<Self> {
        for (r, row) in rows.iter().enumerate() {
            if row.len() != names.len() {
                return Err(TableError::Arity { row: r, expected: names.len(), found: row.len() });
            }
        }
        let columns = names
            .into_iter()
            .enumerate()
            .map(|(c, name)| {
                let kind = infer_kind(rows.iter().map(|row| row[c].as_str()));
                Column::new(name, kind)
            })
            .collect();
        DataTable::from_text_rows(TableSchema::new(columns)?, rows)
    }

    pub fn schema(&self) -> &TableSchema {
        &self.schema
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[Cell] {
        &self.rows[i]
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_texts(&self, c: usize) -> impl Iterator<Item = &str> {
        self.rows.iter().map(move |r| r[c].text())
    }

    /// Values of a continuous column (NaN never appears: construction rejects it).
    pub fn column_values(&self, c: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[c].value().unwrap_or(f64::NAN)).collect()
    }

    pub fn text_rows(&self) -> Vec<Vec<String>> {
        self.rows.iter().map(|r| r.iter().map(|c| c.text.clone()).collect()).collect()
    }

    /// New table with the same schema and the rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> DataTable {
        DataTable { schema: self.schema.clone(), rows: indices.iter().map(|&i| self.rows[i].clone()).collect() }
    }

    pub fn with_schema_target(mut self, target: Option<usize>, task: Task) -> Result<Self> {
        self.schema = self.schema.with_target(target, task)?;
        Ok(self)
    }

    /// Applies an old→new rename map to column names and categorical cell texts.
    pub fn renamed(&self, map: &HashMap<String, String>) -> Result<DataTable> {
        let columns = self
            .schema
            .columns
            .iter()
            .map(|c| Column::new(map.get(&c.name).cloned().unwrap_or_else(|| c.name.clone()), c.kind))
            .collect();
        let schema = TableSchema::new(columns)?.with_target(self.schema.target, self.schema.task)?;
        let rows = self
            .rows
            .iter()
            .map(|row| {
                row.iter()
                    .map(|cell| match (cell.value, map.get(&cell.text)) {
                        (None, Some(new)) => Cell { text: new.clone(), value: None },
                        _ => cell.clone(),
                    })
                    .collect()
            })
            .collect();
        Ok(DataTable { schema, rows })
    }

    /// Writes the table as CSV (header + rows) with minimal quoting.
    pub fn write_csv<W: Write>(&self, writer: W, delimiter: u8) -> Result<()> {
        let mut w =
            csv::WriterBuilder::new().delimiter(delimiter).quote_style(csv::QuoteStyle::Necessary).from_writer(writer);
        let map = |e: csv::Error| TableError::Malformed { row: 0, message: e.to_string() };
        w.write_record(self.schema.names()).map_err(map)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|c| c.text.as_str())).map_err(map)?;
        }
        w.flush().map_err(|e| TableError::Malformed { row: 0, message: e.to_string() })?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path, delimiter: u8) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|source| TableError::Io { path: path.to_owned(), source })?;
        self.write_csv(std::io::BufWriter::new(file), delimiter)
    }

    pub fn to_csv_string(&self, delimiter: u8) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, delimiter).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("cells are UTF-8")
    }
}

fn infer_kind<'a>(cells: impl Iterator<Item = &'a str>) -> ColumnKind {
    let mut any = false;
    for text in cells.filter(|t| !t.is_empty()) {
        any = true;
        if parse_decimal(text).is_none() {
            return ColumnKind::Categorical;
        }
    }
    if any {
        ColumnKind::Continuous
    } else {
        ColumnKind::Categorical
    }
}

#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub delimiter: u8,
    pub has_header: bool,
    pub kind_overrides: HashMap<String, ColumnKind>,
    pub target: Option<String>,
    pub task: Option<Task>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions { delimiter: b',', has_header: true, kind_overrides: HashMap::new(), target: None, task: None }
    }
}

pub fn load_csv(path: &Path, options: &CsvOptions) -> Result<DataTable> {
    let file = std::fs::File::open(path).map_err(|source| TableError::Io { path: path.to_owned(), source })?;
    read_csv(std::io::BufReader::new(file), options)
}

pub fn read_csv<R: Read>(reader: R, options: &CsvOptions) -> Result<DataTable> {
    let mut rdr =
        csv::ReaderBuilder::new().delimiter(options.delimiter).has_headers(false).flexible(false).from_reader(reader);
    let mut records = rdr.records();
    let malformed = |e: csv::Error| {
        let row = e.position().map(|p| p.record()).unwrap_or(0);
        TableError::Malformed { row, message: e.to_string() }
    };
    let first = match records.next() {
        None => return Err(TableError::Empty),
        Some(r) => r.map_err(malformed)?,
    };
    let (names, mut rows): (Vec<String>, Vec<Vec<String>>) = if options.has_header {
        (first.iter().map(str::to_owned).collect(), Vec::new())
    } else {
        ((0..first.len()).map(|i| format!("c{i}")).collect(), vec![first.iter().map(str::to_owned).collect()])
    };
    for record in records {
        rows.push(record.map_err(malformed)?.iter().map(str::to_owned).collect());
    }

    // A classification target holds labels even when they look numeric.
    let label_column = options.target.as_deref().filter(|_| options.task.is_some_and(Task::is_classification));
    let columns = names
        .into_iter()
        .enumerate()
        .map(|(c, name)| {
            let kind = options.kind_overrides.get(&name).copied().unwrap_or_else(|| {
                if label_column == Some(name.as_str()) {
                    ColumnKind::Categorical
                } else {
                    infer_kind(rows.iter().map(|r| r[c].as_str()))
                }
            });
            Column::new(name, kind)
        })
        .collect();
    let mut schema = TableSchema::new(columns)?;
    if let Some(target) = &options.target {
        let idx = schema.index_of(target).ok_or_else(|| TableError::UnknownColumn(target.clone()))?;
        let task = match options.task {
            Some(t) => t,
            None => match schema.column(idx).kind {
                ColumnKind::Continuous => Task::Regression,
                ColumnKind::Categorical => {
                    let distinct: std::collections::HashSet<&str> = rows.iter().map(|r| r[idx].as_str()).collect();
                    if distinct.len() <= 2 {
                        Task::BinaryClassification
                    } else {
                        Task::MulticlassClassification
                    }
                }
            },
        };
        schema = schema.with_target(Some(idx), task)?;
    }
    DataTable::from_text_rows(schema, rows)
}

/// Splits rows into (train, test). Classification targets are stratified:
/// each class contributes `round(count * test_fraction)` rows to the test
/// side, capped so that at least one row of every class stays in training.
pub fn split_stratified(table: &DataTable, test_fraction: f64, seed: u64) -> Result<(DataTable, DataTable)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(TableError::BadFraction(test_fraction));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test_idx = Vec::new();
    let stratify = table.schema.task.is_classification() && table.schema.target.is_some();
    if stratify {
        let target = table.schema.target.expect("checked above");
        let mut classes: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, row) in table.rows.iter().enumerate() {
            classes.entry(row[target].text()).or_default().push(i);
        }
        for (class, members) in &classes {
            if members.len() < 2 {
                return Err(TableError::ClassTooSmall { class: class.to_string(), count: members.len() });
            }
        }
        for members in classes.values_mut() {
            members.shuffle(&mut rng);
            let n = stratum_test_count(members.len(), test_fraction);
            test_idx.extend_from_slice(&members[..n]);
        }
    } else {
        let mut all: Vec<usize> = (0..table.len()).collect();
        all.shuffle(&mut rng);
        let n = ((table.len() as f64) * test_fraction).round() as usize;
        test_idx.extend_from_slice(&all[..n.min(table.len())]);
    }
    test_idx.sort_unstable();
    let mut is_test = vec![false; table.len()];
    for &i in &test_idx {
        is_test[i] = true;
    }
    let train_idx: Vec<usize> = (0..table.len()).filter(|&i| !is_test[i]).collect();
    Ok((table.select(&train_idx), table.select(&test_idx)))
}

pub(crate) fn stratum_test_count(count: usize, fraction: f64) -> usize {
    (((count as f64) * fraction).round() as usize).min(count.saturating_sub(1))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub count: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Population variance.
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnStats {
    Categorical {
        counts: BTreeMap<String, usize>,
    },
    /// `None` for an empty table.
    Continuous(Option<Moments>),
}

pub fn column_stats(table: &DataTable, column: usize) -> ColumnStats {
    match table.schema.column(column).kind {
        ColumnKind::Categorical => {
            let mut counts = BTreeMap::new();
            for t in table.column_texts(column) {
                *counts.entry(t.to_owned()).or_insert(0) += 1;
            }
            ColumnStats::Categorical { counts }
        }
        ColumnKind::Continuous => {
            let values = table.column_values(column);
            if values.is_empty() {
                return ColumnStats::Continuous(None);
            }
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let min = values.iter().copied().fold(f64::INFINITY, f64::min);
            let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            ColumnStats::Continuous(Some(Moments { count: values.len(), min, max, mean, variance }))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv(text: &str) -> Result<DataTable> {
        read_csv(text.as_bytes(), &CsvOptions::default())
    }

    #[test]
    fn infers_numeric_and_text_columns() {
        let t = csv("age,job\n32,nurse\n57,clerk\n").unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.schema().column(0), &Column::new("age", ColumnKind::Continuous));
        assert_eq!(t.schema().column(1), &Column::new("job", ColumnKind::Categorical));
        assert_eq!(t.row(0)[0].value(), Some(32.0));
    }

    #[test]
    fn header_only_is_all_categorical() {
        let t = csv("a,b,c\n").unwrap();
        assert!(t.is_empty());
        assert!(t.schema().columns().iter().all(|c| c.kind == ColumnKind::Categorical));
    }

    #[test]
    fn one_bad_number_makes_column_categorical() {
        let mut text = String::from("x\n");
        for i in 0..9 {
            text.push_str(&format!("{i}\n"));
        }
        text.push_str("n/a\n");
        let t = csv(&text).unwrap();
        assert_eq!(t.len(), 10);
        assert_eq!(t.schema().column(0).kind, ColumnKind::Categorical);
    }

    #[test]
    fn ragged_rows_report_row_number() {
        match csv("a,b\n1,2\n3\n") {
            Err(TableError::Malformed { row, .. }) => assert_eq!(row, 2),
            other => panic!("expected malformed error, got {other:?}"),
        }
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(csv(""), Err(TableError::Empty)));
    }

    #[test]
    fn missing_continuous_cell_is_rejected() {
        let err = csv("a,b\n1,x\n,y\n3,z\n").unwrap_err();
        assert!(matches!(err, TableError::MissingContinuous { row: 1, .. }), "{err}");
    }

    #[test]
    fn missing_categorical_cell_is_kept() {
        let t = csv("a,b\n1,x\n2,\n").unwrap();
        assert_eq!(t.row(1)[1].text(), "");
    }

    #[test]
    fn decimal_parsing_requires_exact_rerender() {
        assert_eq!(parse_decimal("3.50"), Some(3.5));
        assert_eq!(parse_decimal("-0.25"), Some(-0.25));
        assert_eq!(parse_decimal("0"), Some(0.0));
        for bad in ["007", ".5", "5.", "1e5", "+3", "", "-", "1.2.3", "12345678901234567"] {
            assert_eq!(parse_decimal(bad), None, "{bad}");
        }
    }

    #[test]
    fn csv_round_trip_preserves_cells() {
        let text = "id,name,score\n1,\"a, b\",0.50\n2,plain,-3\n";
        let t = csv(text).unwrap();
        assert_eq!(t.to_csv_string(b','), text);
    }

    #[test]
    fn custom_delimiter_and_no_header() {
        let opts = CsvOptions { delimiter: b';', has_header: false, ..Default::default() };
        let t = read_csv("1;a\n2;b\n".as_bytes(), &opts).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.schema().column(0).name, "c0");
    }

    #[test]
    fn schema_validation() {
        assert!(TableSchema::new(vec![]).is_err());
        assert!(TableSchema::new(vec![Column::new("", ColumnKind::Categorical)]).is_err());
        let dup = vec![Column::new("a", ColumnKind::Categorical), Column::new("a", ColumnKind::Continuous)];
        assert!(TableSchema::new(dup).is_err());
        let s = TableSchema::new(vec![Column::new("a", ColumnKind::Categorical)]).unwrap();
        assert!(s.clone().with_target(Some(0), Task::Regression).is_err());
        assert!(s.clone().with_target(Some(3), Task::BinaryClassification).is_err());
        assert!(s.with_target(Some(0), Task::BinaryClassification).is_ok());
    }

    #[test]
    fn target_task_is_inferred() {
        let opts = CsvOptions { target: Some("y".into()), ..Default::default() };
        let t = read_csv("x,y\n1,a\n2,b\n".as_bytes(), &opts).unwrap();
        assert_eq!(t.schema().task(), Task::BinaryClassification);
        let t = read_csv("x,y\n1,2.5\n2,3.5\n".as_bytes(), &opts).unwrap();
        assert_eq!(t.schema().task(), Task::Regression);
        let opts = CsvOptions { task: Some(Task::BinaryClassification), ..opts };
        let t = read_csv("x,y\n1,0\n2,1\n".as_bytes(), &opts).unwrap();
        assert_eq!(t.schema().column(1).kind, ColumnKind::Categorical);
        assert_eq!(t.schema().column(0).kind, ColumnKind::Continuous);
    }

    fn classified(labels: &[&str]) -> DataTable {
        let schema =
            TableSchema::new(vec![Column::new("i", ColumnKind::Continuous), Column::new("y", ColumnKind::Categorical)])
                .unwrap()
                .with_target(Some(1), Task::BinaryClassification)
                .unwrap();
        let rows = labels.iter().enumerate().map(|(i, l)| vec![i.to_string(), l.to_string()]).collect();
        DataTable::from_text_rows(schema, rows).unwrap()
    }

    fn class_counts(t: &DataTable) -> BTreeMap<String, usize> {
        match column_stats(t, 1) {
            ColumnStats::Categorical { counts } => counts,
            _ => unreachable!(),
        }
    }

    #[test]
    fn stratified_split_exact_divisibility() {
        let t = classified(&["a", "a", "a", "a", "a", "b", "b", "b", "b", "b"]);
        let (train, test) = split_stratified(&t, 0.2, 1).unwrap();
        assert_eq!(train.len(), 8);
        let counts = class_counts(&test);
        assert_eq!(counts.get("a"), Some(&1));
        assert_eq!(counts.get("b"), Some(&1));
    }

    #[test]
    fn stratified_split_matches_counting_oracle() {
        // Oracle: per class, the number of test rows is the integer nearest to
        // count * fraction, enumerated independently here.
        let t = classified(&["a", "a", "a", "a", "a", "a", "b", "b", "b"]);
        let (_, test) = split_stratified(&t, 0.2, 9).unwrap();
        let counts = class_counts(&test);
        let oracle = |n: usize| -> usize {
            (0..=n)
                .min_by(|&x, &y| {
                    let dx = (x as f64 - n as f64 * 0.2).abs();
                    let dy = (y as f64 - n as f64 * 0.2).abs();
                    dx.partial_cmp(&dy).unwrap()
                })
                .unwrap()
        };
        assert_eq!(counts["a"], oracle(6));
        assert_eq!(counts["b"], oracle(3));
        assert_eq!((counts["a"], counts["b"]), (1, 1));
    }

    #[test]
    fn singleton_class_is_named_in_error() {
        let t = classified(&["a", "a", "a", "lonely"]);
        match split_stratified(&t, 0.2, 0) {
            Err(TableError::ClassTooSmall { class, count: 1 }) => assert_eq!(class, "lonely"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn regression_split_is_plain() {
        let rows = (0..100).map(|i| vec![i.to_string()]).collect();
        let schema = TableSchema::new(vec![Column::new("v", ColumnKind::Continuous)]).unwrap();
        let t = DataTable::from_text_rows(schema, rows).unwrap();
        let (train, test) = split_stratified(&t, 0.2, 5).unwrap();
        assert_eq!((train.len(), test.len()), (80, 20));
        let again = split_stratified(&t, 0.2, 5).unwrap();
        assert_eq!(again.1, test);
    }

    #[test]
    fn stats_for_both_kinds() {
        let t = csv("v,c\n1,a\n2,a\n3,b\n").unwrap();
        match column_stats(&t, 0) {
            ColumnStats::Continuous(Some(m)) => {
                assert_eq!(m.mean, 2.0);
                assert!((m.variance - 2.0 / 3.0).abs() < 1e-15);
                assert_eq!((m.min, m.max), (1.0, 3.0));
            }
            other => panic!("{other:?}"),
        }
        let counts = class_counts(&t);
        assert_eq!(counts, BTreeMap::from([("a".into(), 2), ("b".into(), 1)]));
    }

    #[test]
    fn empty_table_stats_are_marked() {
        let schema = TableSchema::new(vec![Column::new("v", ColumnKind::Continuous)]).unwrap();
        let t = DataTable::from_text_rows(schema, vec![]).unwrap();
        assert_eq!(column_stats(&t, 0), ColumnStats::Continuous(None));
    }

    #[test]
    fn uniform_column_mean_is_near_midpoint() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows = (0..1000).map(|_| vec![format!("{:.4}", rng.random::<f64>())]).collect();
        let schema = TableSchema::new(vec![Column::new("u", ColumnKind::Continuous)]).unwrap();
        let t = DataTable::from_text_rows(schema, rows).unwrap();
        let ColumnStats::Continuous(Some(m)) = column_stats(&t, 0) else { panic!() };
        // Standard error of the mean of U(0,1) over 1000 draws.
        let se = (1.0f64 / 12.0 / 1000.0).sqrt();
        assert!((m.mean - 0.5).abs() < 3.0 * se, "mean {}", m.mean);
    }

    #[test]
    fn rename_map_touches_names_and_categories() {
        let t = csv("Occupation,n\nnurse,1\nclerk,2\n").unwrap();
        let map = HashMap::from([("Occupation".to_string(), "Job".to_string()), ("nurse".into(), "RN".into())]);
        let r = t.renamed(&map).unwrap();
        assert_eq!(r.schema().column(0).name, "Job");
        assert_eq!(r.row(0)[0].text(), "RN");
        assert_eq!(r.row(1)[0].text(), "clerk");
    }

    proptest::proptest! {
        #[test]
        fn split_is_a_partition(n in 4usize..60, frac in 0.05f64..0.95, seed in 0u64..1000) {
            let labels: Vec<&str> = (0..n).map(|i| if i % 2 == 0 { "a" } else { "b" }).collect();
            let t = classified(&labels);
            let (train, test) = split_stratified(&t, frac, seed).unwrap();
            let mut ids: Vec<String> = train.column_texts(0).chain(test.column_texts(0)).map(str::to_owned).collect();
            ids.sort_by_key(|s| s.parse::<usize>().unwrap());
            let expected: Vec<String> = (0..n).map(|i| i.to_string()).collect();
            proptest::prop_assert_eq!(ids, expected);
        }
    }
}
