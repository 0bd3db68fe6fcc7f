//! Row ↔ token-sequence codec.
//!
//! Three textual layouts are supported:
//!
//! * [`SerializationFormat::Verbose`]: `"Age is 32, Job is nurse"`
//! * [`SerializationFormat::Pairs`]: `"Age 32, Job nurse"`
//! * [`SerializationFormat::Compact`]: `"Age 32nurse"`; only the first column
//!   name is kept and column values are delimited purely by position.
//!
//! Compact rows are always middle-padded: every column's token fragment is
//! right-padded to a dataset-wide slot width, so column `i` starts at the same
//! absolute offset in every sequence and generated rows are decoded by slicing.
//!
//! Rows are encoded fragment by fragment (name, connector, value, separator),
//! never by running the greedy matcher over the whole line, so a registered
//! string can not swallow a structural boundary.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::table::{parse_decimal, Cell, ColumnKind, DataTable, TableSchema};
use crate::tokenizer::{TokenId, TokenRegistry, TokenizerError, BOS, EOS, PAD, SEP, SPACE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SerializationFormat {
    /// `name is value` pairs joined by `", "`.
    Verbose,
    /// `name value` pairs joined by `", "`.
    Pairs,
    /// First name, then values only, delimited by a padding layout.
    Compact,
}

impl SerializationFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            SerializationFormat::Verbose => "verbose",
            SerializationFormat::Pairs => "pairs",
            SerializationFormat::Compact => "compact",
        }
    }

    pub fn connector(self) -> &'static str {
        match self {
            SerializationFormat::Verbose => " is ",
            _ => " ",
        }
    }
}

impl std::str::FromStr for SerializationFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "verbose" => Ok(SerializationFormat::Verbose),
            "pairs" => Ok(SerializationFormat::Pairs),
            "compact" => Ok(SerializationFormat::Compact),
            other => Err(format!("unknown format {other:?} (verbose|pairs|compact)")),
        }
    }
}

impl fmt::Display for SerializationFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PaddingStrategy {
    Left,
    Right,
    Middle,
}

impl PaddingStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            PaddingStrategy::Left => "left",
            PaddingStrategy::Right => "right",
            PaddingStrategy::Middle => "middle",
        }
    }
}

impl std::str::FromStr for PaddingStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "left" => Ok(PaddingStrategy::Left),
            "right" => Ok(PaddingStrategy::Right),
            "middle" => Ok(PaddingStrategy::Middle),
            other => Err(format!("unknown padding {other:?} (left|right|middle)")),
        }
    }
}

impl fmt::Display for PaddingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error("{0}")]
    InvalidSettings(String),
    #[error("column order is not a permutation of 0..{0}")]
    BadOrder(usize),
    #[error("the compact format requires the schema's column order")]
    NonIdentityOrder,
    #[error("row has {found} cells, schema has {expected}")]
    Arity { expected: usize, found: usize },
    #[error("column {column}: fragment of {len} tokens overflows its slot of width {width}")]
    SlotOverflow { column: usize, len: usize, width: usize },
    #[error("sequence of {len} tokens exceeds the padding target {target}")]
    TooLong { len: usize, target: usize },
    #[error("cannot compute a padding layout for an empty table")]
    EmptyTable,
    #[error("column {column:?}: text {text:?} would encode a separator token")]
    AmbiguousSeparator { column: String, text: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParseErrorKind {
    UnknownColumn,
    DuplicateColumn,
    MissingColumn,
    BadNumber,
    WrongLength,
    Malformed,
    UnknownCategory,
    ConditionMismatch,
    OutOfRange,
    Truncated,
}

impl ParseErrorKind {
    pub const ALL: [ParseErrorKind; 10] = [
        ParseErrorKind::UnknownColumn,
        ParseErrorKind::DuplicateColumn,
        ParseErrorKind::MissingColumn,
        ParseErrorKind::BadNumber,
        ParseErrorKind::WrongLength,
        ParseErrorKind::Malformed,
        ParseErrorKind::UnknownCategory,
        ParseErrorKind::ConditionMismatch,
        ParseErrorKind::OutOfRange,
        ParseErrorKind::Truncated,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ParseErrorKind::UnknownColumn => "unknown_column",
            ParseErrorKind::DuplicateColumn => "duplicate_column",
            ParseErrorKind::MissingColumn => "missing_column",
            ParseErrorKind::BadNumber => "bad_number",
            ParseErrorKind::WrongLength => "wrong_length",
            ParseErrorKind::Malformed => "malformed",
            ParseErrorKind::UnknownCategory => "unknown_category",
            ParseErrorKind::ConditionMismatch => "condition_mismatch",
            ParseErrorKind::OutOfRange => "out_of_range",
            ParseErrorKind::Truncated => "truncated",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{}: {detail}", kind.as_str())]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub detail: String,
}

impl ParseError {
    pub fn new(kind: ParseErrorKind, detail: impl Into<String>) -> Self {
        ParseError { kind, detail: detail.into() }
    }
}

/// Per-column slot widths for middle padding. Column 0's width counts its
/// name tokens and the following space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaddingLayout {
    widths: Vec<usize>,
    offsets: Vec<usize>,
    total_length: usize,
}

impl PaddingLayout {
    pub fn from_widths(widths: Vec<usize>) -> Self {
        let mut offsets = Vec::with_capacity(widths.len());
        let mut acc = 0;
        for &w in &widths {
            offsets.push(acc);
            acc += w;
        }
        PaddingLayout { widths, offsets, total_length: acc }
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn total_length(&self) -> usize {
        self.total_length
    }

    pub fn slot(&self, column: usize) -> std::ops::Range<usize> {
        self.offsets[column]..self.offsets[column] + self.widths[column]
    }

    /// Human-readable `column  width  offset` report.
    pub fn report(&self, schema: &TableSchema) -> String {
        let mut out = format!("{:<24} {:>6} {:>6}\n", "column", "width", "offset");
        for (i, name) in schema.names().enumerate() {
            out.push_str(&format!("{:<24} {:>6} {:>6}\n", name, self.widths[i], self.offsets[i]));
        }
        out.push_str(&format!("{:<24} {:>6}\n", "total", self.total_length));
        out
    }
}

/// How rows become training sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodecSettings {
    pub format: SerializationFormat,
    pub strategy: PaddingStrategy,
    pub permute: bool,
    /// Whether PAD targets count towards the loss. `None` picks the default:
    /// trained under middle padding, masked otherwise.
    pub train_pads: Option<bool>,
}

impl CodecSettings {
    pub fn new(format: SerializationFormat, strategy: PaddingStrategy, permute: bool) -> Self {
        CodecSettings { format, strategy, permute, train_pads: None }
    }

    pub fn middle() -> Self {
        CodecSettings::new(SerializationFormat::Compact, PaddingStrategy::Middle, false)
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        let compact = self.format == SerializationFormat::Compact;
        let middle = self.strategy == PaddingStrategy::Middle;
        if compact != middle {
            return Err(CodecError::InvalidSettings(
                "the compact format and middle padding must be used together".into(),
            ));
        }
        if middle && self.permute {
            return Err(CodecError::InvalidSettings(
                "middle padding requires a fixed column order (permute off)".into(),
            ));
        }
        Ok(())
    }

    pub fn trains_pads(&self) -> bool {
        self.train_pads.unwrap_or(self.strategy == PaddingStrategy::Middle)
    }
}

fn check_order(order: &[usize], n: usize) -> Result<(), CodecError> {
    let mut seen = vec![false; n];
    if order.len() != n {
        return Err(CodecError::BadOrder(n));
    }
    for &i in order {
        if i >= n || std::mem::replace(&mut seen[i], true) {
            return Err(CodecError::BadOrder(n));
        }
    }
    Ok(())
}

fn check_row<S: AsRef<str>>(row: &[S], schema: &TableSchema) -> Result<(), CodecError> {
    if row.len() != schema.len() {
        return Err(CodecError::Arity { expected: schema.len(), found: row.len() });
    }
    Ok(())
}

impl AsRef<str> for Cell {
    fn as_ref(&self) -> &str {
        self.text()
    }
}

pub fn identity_order(n: usize) -> Vec<usize> {
    (0..n).collect()
}

/// Renders a row as text in the given column order.
pub fn serialize_row<S: AsRef<str>>(
    row: &[S],
    schema: &TableSchema,
    format: SerializationFormat,
    order: &[usize],
) -> Result<String, CodecError> {
    check_row(row, schema)?;
    check_order(order, schema.len())?;
    let mut out = String::new();
    match format {
        SerializationFormat::Compact => {
            if order.iter().enumerate().any(|(i, &c)| i != c) {
                return Err(CodecError::NonIdentityOrder);
            }
            out.push_str(&schema.column(0).name);
            out.push(' ');
            for cell in row {
                out.push_str(cell.as_ref());
            }
        }
        _ => {
            for (k, &c) in order.iter().enumerate() {
                if k > 0 {
                    out.push_str(", ");
                }
                out.push_str(&schema.column(c).name);
                out.push_str(format.connector());
                out.push_str(row[c].as_ref());
            }
        }
    }
    Ok(out)
}

/// Token fragments of a row, one per entry of `order` (no separators).
///
/// Verbose/Pairs fragments are `name connector value`. Compact fragments are
/// `name SPACE value` for column 0 and the bare value for the rest.
pub fn row_fragments<S: AsRef<str>>(
    registry: &TokenRegistry,
    schema: &TableSchema,
    row: &[S],
    format: SerializationFormat,
    order: &[usize],
) -> Result<Vec<Vec<TokenId>>, CodecError> {
    check_row(row, schema)?;
    check_order(order, schema.len())?;
    if format == SerializationFormat::Compact && order.iter().enumerate().any(|(i, &c)| i != c) {
        return Err(CodecError::NonIdentityOrder);
    }
    let mut fragments = Vec::with_capacity(order.len());
    for (k, &c) in order.iter().enumerate() {
        let mut frag = Vec::new();
        let with_name = format != SerializationFormat::Compact || k == 0;
        if with_name {
            encode_checked(registry, schema, c, &schema.column(c).name, &mut frag)?;
            registry.encode_into(format.connector(), &mut frag)?;
        }
        encode_checked(registry, schema, c, row[c].as_ref(), &mut frag)?;
        fragments.push(frag);
    }
    Ok(fragments)
}

fn encode_checked(
    registry: &TokenRegistry,
    schema: &TableSchema,
    column: usize,
    text: &str,
    out: &mut Vec<TokenId>,
) -> Result<(), CodecError> {
    let start = out.len();
    registry.encode_into(text, out)?;
    if out[start..].contains(&SEP) {
        return Err(CodecError::AmbiguousSeparator {
            column: schema.column(column).name.clone(),
            text: text.to_owned(),
        });
    }
    Ok(())
}

/// Unpadded content tokens of a row (no BOS/EOS).
pub fn encode_row<S: AsRef<str>>(
    registry: &TokenRegistry,
    schema: &TableSchema,
    row: &[S],
    format: SerializationFormat,
    order: &[usize],
) -> Result<Vec<TokenId>, CodecError> {
    let fragments = row_fragments(registry, schema, row, format, order)?;
    Ok(join_fragments(&fragments, format))
}

pub fn join_fragments(fragments: &[Vec<TokenId>], format: SerializationFormat) -> Vec<TokenId> {
    let mut out = Vec::with_capacity(fragments.iter().map(|f| f.len() + 1).sum());
    for (k, f) in fragments.iter().enumerate() {
        if k > 0 && format != SerializationFormat::Compact {
            out.push(SEP);
        }
        out.extend_from_slice(f);
    }
    out
}

/// Widths are the per-column maximum compact fragment length over all rows.
pub fn compute_padding_layout(table: &DataTable, registry: &TokenRegistry) -> Result<PaddingLayout, CodecError> {
    if table.is_empty() {
        return Err(CodecError::EmptyTable);
    }
    let schema = table.schema();
    let order = identity_order(schema.len());
    let mut widths = vec![0; schema.len()];
    for row in table.rows() {
        let frags = row_fragments(registry, schema, row, SerializationFormat::Compact, &order)?;
        for (w, f) in widths.iter_mut().zip(&frags) {
            *w = (*w).max(f.len());
        }
    }
    Ok(PaddingLayout::from_widths(widths))
}

#[derive(Debug, Clone, Copy)]
pub enum PadTarget<'a> {
    Layout(&'a PaddingLayout),
    Length(usize),
}

/// Pads fragments into one sequence.
///
/// Middle: every fragment is right-padded inside its slot. Left/Right: the
/// fragments are concatenated as given and PADs are prepended or appended up
/// to the target length.
pub fn pad_sequence(
    fragments: &[Vec<TokenId>],
    strategy: PaddingStrategy,
    target: PadTarget<'_>,
) -> Result<Vec<TokenId>, CodecError> {
    let starts = fragment_starts(fragments, strategy, target)?;
    let total = match target {
        PadTarget::Layout(l) => l.total_length(),
        PadTarget::Length(n) => n,
    };
    let mut out = vec![PAD; total];
    for (f, &s) in fragments.iter().zip(&starts) {
        out[s..s + f.len()].copy_from_slice(f);
    }
    Ok(out)
}

/// Absolute start position of each fragment after padding.
pub fn fragment_starts(
    fragments: &[Vec<TokenId>],
    strategy: PaddingStrategy,
    target: PadTarget<'_>,
) -> Result<Vec<usize>, CodecError> {
    match (strategy, target) {
        (PaddingStrategy::Middle, PadTarget::Layout(layout)) => {
            if fragments.len() != layout.widths().len() {
                return Err(CodecError::Arity { expected: layout.widths().len(), found: fragments.len() });
            }
            for (i, f) in fragments.iter().enumerate() {
                if f.len() > layout.widths()[i] {
                    return Err(CodecError::SlotOverflow { column: i, len: f.len(), width: layout.widths()[i] });
                }
            }
            Ok(layout.offsets().to_vec())
        }
        (PaddingStrategy::Middle, PadTarget::Length(_)) => {
            Err(CodecError::InvalidSettings("middle padding needs a layout".into()))
        }
        (side, target) => {
            let len: usize = fragments.iter().map(Vec::len).sum();
            let target = match target {
                PadTarget::Length(n) => n,
                PadTarget::Layout(l) => l.total_length(),
            };
            if len > target {
                return Err(CodecError::TooLong { len, target });
            }
            let mut pos = if side == PaddingStrategy::Left { target - len } else { 0 };
            let mut starts = Vec::with_capacity(fragments.len());
            for f in fragments {
                starts.push(pos);
                pos += f.len();
            }
            Ok(starts)
        }
    }
}

fn parse_cells(schema: &TableSchema, cells: Vec<Option<String>>) -> Result<Vec<String>, ParseError> {
    let mut out = Vec::with_capacity(cells.len());
    for (c, cell) in cells.into_iter().enumerate() {
        let col = schema.column(c);
        let text = cell.ok_or_else(|| ParseError::new(ParseErrorKind::MissingColumn, col.name.clone()))?;
        if col.kind == ColumnKind::Continuous && parse_decimal(&text).is_none() {
            return Err(ParseError::new(ParseErrorKind::BadNumber, format!("{}: {text:?}", col.name)));
        }
        out.push(text);
    }
    Ok(out)
}

/// Parses `name connector value` fragments (any order) into schema order.
pub fn deserialize_text(
    text: &str,
    schema: &TableSchema,
    format: SerializationFormat,
) -> Result<Vec<String>, ParseError> {
    if format == SerializationFormat::Compact {
        return Err(ParseError::new(ParseErrorKind::Malformed, "compact rows are decoded by position"));
    }
    let mut cells = vec![None; schema.len()];
    for fragment in text.split(", ") {
        assign_fragment(fragment, schema, format, &mut cells)?;
    }
    parse_cells(schema, cells)
}

fn assign_fragment(
    fragment: &str,
    schema: &TableSchema,
    format: SerializationFormat,
    cells: &mut [Option<String>],
) -> Result<(), ParseError> {
    let connector = format.connector();
    let hit = schema
        .columns()
        .iter()
        .enumerate()
        .filter(|(_, col)| {
            fragment.len() >= col.name.len() + connector.len()
                && fragment.starts_with(col.name.as_str())
                && fragment[col.name.len()..].starts_with(connector)
        })
        .max_by_key(|(_, col)| col.name.len());
    let Some((c, col)) = hit else {
        return Err(ParseError::new(ParseErrorKind::UnknownColumn, format!("{fragment:?}")));
    };
    if cells[c].is_some() {
        return Err(ParseError::new(ParseErrorKind::DuplicateColumn, col.name.clone()));
    }
    cells[c] = Some(fragment[col.name.len() + connector.len()..].to_owned());
    Ok(())
}

/// Decodes content tokens (BOS/EOS already removed) into cell texts in schema
/// order. Middle-padded sequences are sliced by the layout; the other formats
/// are split on SEP and matched by column name.
pub fn deserialize_tokens(
    ids: &[TokenId],
    schema: &TableSchema,
    format: SerializationFormat,
    registry: &TokenRegistry,
    layout: Option<&PaddingLayout>,
) -> Result<Vec<String>, ParseError> {
    let decode = |ids: &[TokenId]| {
        registry.decode_tokens(ids).map_err(|e| ParseError::new(ParseErrorKind::Malformed, e.to_string()))
    };
    match format {
        SerializationFormat::Compact => {
            let layout =
                layout.ok_or_else(|| ParseError::new(ParseErrorKind::Malformed, "compact rows need a layout"))?;
            if ids.len() != layout.total_length() {
                return Err(ParseError::new(
                    ParseErrorKind::WrongLength,
                    format!("{} tokens, layout expects {}", ids.len(), layout.total_length()),
                ));
            }
            let mut prefix = registry
                .encode_text(&schema.column(0).name)
                .map_err(|e| ParseError::new(ParseErrorKind::Malformed, e.to_string()))?
                .ids;
            prefix.push(SPACE);
            let mut cells = Vec::with_capacity(schema.len());
            for c in 0..schema.len() {
                let mut slot = &ids[layout.slot(c)];
                if c == 0 {
                    slot = slot.strip_prefix(prefix.as_slice()).ok_or_else(|| {
                        ParseError::new(ParseErrorKind::Malformed, "first slot does not start with the column name")
                    })?;
                }
                let content_len = slot.iter().position(|&t| t == PAD).unwrap_or(slot.len());
                let (content, pads) = slot.split_at(content_len);
                if pads.iter().any(|&t| t != PAD) || content.iter().any(|&t| t == BOS || t == EOS) {
                    return Err(ParseError::new(
                        ParseErrorKind::Malformed,
                        format!("slot of column {:?} is not value-then-padding", schema.column(c).name),
                    ));
                }
                cells.push(Some(decode(content)?));
            }
            parse_cells(schema, cells)
        }
        _ => {
            let mut cells = vec![None; schema.len()];
            let content: Vec<TokenId> = ids.iter().copied().filter(|&t| t != PAD && t != BOS).collect();
            if content.contains(&EOS) {
                return Err(ParseError::new(ParseErrorKind::Malformed, "EOS inside row"));
            }
            for fragment in content.split(|&t| t == SEP) {
                assign_fragment(&decode(fragment)?, schema, format, &mut cells)?;
            }
            parse_cells(schema, cells)
        }
    }
}

/// A framed training sequence and its loss mask. `mask[j]` says whether the
/// prediction of `ids[j + 1]` from the prefix `ids[..=j]` counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingSequence {
    pub ids: Vec<TokenId>,
    pub mask: Vec<bool>,
}

impl TrainingSequence {
    pub fn new(ids: Vec<TokenId>, train_pads: bool) -> Self {
        let mask = ids[1..].iter().map(|&t| train_pads || t != PAD).collect();
        TrainingSequence { ids, mask }
    }
}

/// Everything needed to turn rows into training sequences.
#[derive(Debug, Clone)]
pub struct RowEncoder<'a> {
    pub registry: &'a TokenRegistry,
    pub schema: &'a TableSchema,
    pub settings: CodecSettings,
    pub layout: Option<&'a PaddingLayout>,
}

impl<'a> RowEncoder<'a> {
    pub fn new(
        registry: &'a TokenRegistry,
        schema: &'a TableSchema,
        settings: CodecSettings,
        layout: Option<&'a PaddingLayout>,
    ) -> Result<Self, CodecError> {
        settings.validate()?;
        if settings.strategy == PaddingStrategy::Middle && layout.is_none() {
            return Err(CodecError::InvalidSettings("middle padding needs a layout".into()));
        }
        Ok(RowEncoder { registry, schema, settings, layout })
    }

    /// BOS + content + EOS. Middle content is padded to the layout; Left/Right
    /// padding happens when sequences are batched.
    pub fn frame<S: AsRef<str>>(&self, row: &[S], order: &[usize]) -> Result<Vec<TokenId>, CodecError> {
        let fragments = row_fragments(self.registry, self.schema, row, self.settings.format, order)?;
        let content = match self.settings.strategy {
            PaddingStrategy::Middle => pad_sequence(
                &fragments,
                PaddingStrategy::Middle,
                PadTarget::Layout(self.layout.expect("checked in new")),
            )?,
            _ => join_fragments(&fragments, self.settings.format),
        };
        let mut ids = Vec::with_capacity(content.len() + 2);
        ids.push(BOS);
        ids.extend(content);
        ids.push(EOS);
        Ok(ids)
    }
}

/// Serializes, tokenizes and frames every row for one epoch. With `permute`
/// each row gets a fresh uniformly random column order drawn from
/// `(seed, epoch)`.
pub fn make_training_sequences(
    table: &DataTable,
    registry: &TokenRegistry,
    settings: CodecSettings,
    layout: Option<&PaddingLayout>,
    seed: u64,
    epoch: u64,
) -> Result<Vec<TrainingSequence>, CodecError> {
    let encoder = RowEncoder::new(registry, table.schema(), settings, layout)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut order = identity_order(table.schema().len());
    let train_pads = settings.trains_pads();
    table
        .rows()
        .iter()
        .map(|row| {
            if settings.permute {
                order.shuffle(&mut rng);
            }
            Ok(TrainingSequence::new(encoder.frame(row, &order)?, train_pads))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::Column;
    use crate::tokenizer::build_registry;

    fn age_job_rows(rows: &[(&str, &str)]) -> DataTable {
        let schema = TableSchema::new(vec![
            Column::new("Age", ColumnKind::Continuous),
            Column::new("Job", ColumnKind::Categorical),
        ])
        .unwrap();
        DataTable::from_text_rows(schema, rows.iter().map(|(a, j)| vec![a.to_string(), j.to_string()]).collect())
            .unwrap()
    }

    #[test]
    fn pairs_and_verbose_text() {
        let t = age_job_rows(&[("32", "nurse")]);
        let s = t.schema();
        assert_eq!(serialize_row(t.row(0), s, SerializationFormat::Pairs, &[0, 1]).unwrap(), "Age 32, Job nurse");
        assert_eq!(
            serialize_row(t.row(0), s, SerializationFormat::Verbose, &[1, 0]).unwrap(),
            "Job is nurse, Age is 32"
        );
        assert_eq!(serialize_row(t.row(0), s, SerializationFormat::Compact, &[0, 1]).unwrap(), "Age 32nurse");
        assert_eq!(
            serialize_row(t.row(0), s, SerializationFormat::Compact, &[1, 0]),
            Err(CodecError::NonIdentityOrder)
        );
        assert_eq!(serialize_row(t.row(0), s, SerializationFormat::Pairs, &[0, 0]), Err(CodecError::BadOrder(2)));
    }

    #[test]
    fn compact_tokens_have_no_separator() {
        let t = age_job_rows(&[("32", "nurse")]);
        let r = build_registry(&t, true).unwrap();
        let ids = encode_row(&r, t.schema(), t.row(0), SerializationFormat::Compact, &[0, 1]).unwrap();
        let id = |s: &str| r.id(s).unwrap();
        assert_eq!(ids, vec![id("Age"), SPACE, id("3"), id("2"), id("nurse")]);
    }

    #[test]
    fn encoded_tokens_decode_to_serialized_text() {
        let t = age_job_rows(&[("32", "nurse"), ("7", "clerk")]);
        for compression in [false, true] {
            let r = build_registry(&t, compression).unwrap();
            for format in [SerializationFormat::Verbose, SerializationFormat::Pairs, SerializationFormat::Compact] {
                for row in t.rows() {
                    let ids = encode_row(&r, t.schema(), row, format, &[0, 1]).unwrap();
                    let text = serialize_row(row, t.schema(), format, &[0, 1]).unwrap();
                    assert_eq!(r.decode_tokens(&ids).unwrap(), text);
                }
            }
        }
    }

    #[test]
    fn text_deserialization_accepts_any_order() {
        let t = age_job_rows(&[("32", "nurse")]);
        let s = t.schema();
        assert_eq!(deserialize_text("Age 32, Job nurse", s, SerializationFormat::Pairs).unwrap(), ["32", "nurse"]);
        assert_eq!(
            deserialize_text("Job is nurse, Age is 32", s, SerializationFormat::Verbose).unwrap(),
            ["32", "nurse"]
        );
    }

    #[test]
    fn text_deserialization_errors() {
        let t = age_job_rows(&[("32", "nurse")]);
        let s = t.schema();
        let kind = |text: &str| deserialize_text(text, s, SerializationFormat::Pairs).unwrap_err().kind;
        assert_eq!(kind("Age 32, Pay 3"), ParseErrorKind::UnknownColumn);
        assert_eq!(kind("Age 32, Age 33"), ParseErrorKind::DuplicateColumn);
        assert_eq!(kind("Age 32"), ParseErrorKind::MissingColumn);
        assert_eq!(kind("Age x2, Job nurse"), ParseErrorKind::BadNumber);
    }

    #[test]
    fn layout_is_max_fragment_length() {
        // "4 digits" vs "6 digits" in column 0 after the name.
        let t = age_job_rows(&[("12", "a"), ("1234", "bb")]);
        let r = build_registry(&t, false).unwrap();
        let layout = compute_padding_layout(&t, &r).unwrap();
        // name "Age" (3 chars) + SPACE + up to 4 digits.
        assert_eq!(layout.widths(), &[8, 2]);
        assert_eq!(layout.offsets(), &[0, 8]);
        assert_eq!(layout.total_length(), 10);
    }

    #[test]
    fn single_row_layout_has_no_padding() {
        let t = age_job_rows(&[("32", "nurse")]);
        let r = build_registry(&t, true).unwrap();
        let layout = compute_padding_layout(&t, &r).unwrap();
        let frags = row_fragments(&r, t.schema(), t.row(0), SerializationFormat::Compact, &[0, 1]).unwrap();
        let padded = pad_sequence(&frags, PaddingStrategy::Middle, PadTarget::Layout(&layout)).unwrap();
        assert!(!padded.contains(&PAD));
    }

    #[test]
    fn empty_table_has_no_layout() {
        let t = age_job_rows(&[]);
        let r = build_registry(&t, true).unwrap();
        assert_eq!(compute_padding_layout(&t, &r), Err(CodecError::EmptyTable));
    }

    #[test]
    fn middle_padding_by_definition() {
        let layout = PaddingLayout::from_widths(vec![3, 2]);
        let out =
            pad_sequence(&[vec![10, 11, 12], vec![13]], PaddingStrategy::Middle, PadTarget::Layout(&layout)).unwrap();
        assert_eq!(out, vec![10, 11, 12, 13, PAD]);
        let err = pad_sequence(&[vec![10], vec![13, 14, 15]], PaddingStrategy::Middle, PadTarget::Layout(&layout));
        assert_eq!(err, Err(CodecError::SlotOverflow { column: 1, len: 3, width: 2 }));
    }

    #[test]
    fn right_and_left_padding() {
        let seq = vec![(5..12).collect::<Vec<TokenId>>()];
        let right = pad_sequence(&seq, PaddingStrategy::Right, PadTarget::Length(10)).unwrap();
        assert_eq!(&right[7..], &[PAD, PAD, PAD]);
        let left = pad_sequence(&seq, PaddingStrategy::Left, PadTarget::Length(10)).unwrap();
        assert_eq!(&left[..3], &[PAD, PAD, PAD]);
        assert_eq!(left[3], 5);
        assert!(pad_sequence(&seq, PaddingStrategy::Right, PadTarget::Length(6)).is_err());
    }

    #[test]
    fn middle_slice_decode_inverts_padding() {
        let t = age_job_rows(&[("32", "nurse"), ("7", "clerk"), ("100", "a")]);
        let r = build_registry(&t, true).unwrap();
        let layout = compute_padding_layout(&t, &r).unwrap();
        // Age, SPACE, up to 3 digits | one category token.
        assert_eq!(layout.widths(), &[5, 1]);
        for row in t.rows() {
            let frags = row_fragments(&r, t.schema(), row, SerializationFormat::Compact, &[0, 1]).unwrap();
            let padded = pad_sequence(&frags, PaddingStrategy::Middle, PadTarget::Layout(&layout)).unwrap();
            let back =
                deserialize_tokens(&padded, t.schema(), SerializationFormat::Compact, &r, Some(&layout)).unwrap();
            assert_eq!(back, row.iter().map(|c| c.text().to_owned()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn middle_decoding_rejects_bad_slots() {
        let t = age_job_rows(&[("32", "nurse"), ("7", "clerk")]);
        let r = build_registry(&t, true).unwrap();
        let layout = compute_padding_layout(&t, &r).unwrap();
        let id = |s: &str| r.id(s).unwrap();
        let kind = |ids: &[TokenId]| {
            deserialize_tokens(ids, t.schema(), SerializationFormat::Compact, &r, Some(&layout)).unwrap_err().kind
        };
        assert_eq!(kind(&[id("Age"), SPACE, id("3")]), ParseErrorKind::WrongLength);
        assert_eq!(kind(&[id("Job"), SPACE, id("3"), PAD, id("nurse")]), ParseErrorKind::Malformed);
        assert_eq!(kind(&[id("Age"), SPACE, PAD, id("3"), id("nurse")]), ParseErrorKind::Malformed);
        assert_eq!(kind(&[id("Age"), SPACE, id("3"), id("."), id("nurse")]), ParseErrorKind::BadNumber);
    }

    #[test]
    fn separator_inside_a_cell_is_rejected_without_compression() {
        let schema = TableSchema::new(vec![Column::new("c", ColumnKind::Categorical)]).unwrap();
        let t = DataTable::from_text_rows(schema, vec![vec!["a, b".into()]]).unwrap();
        let plain = build_registry(&t, false).unwrap();
        assert!(matches!(
            encode_row(&plain, t.schema(), t.row(0), SerializationFormat::Pairs, &[0]),
            Err(CodecError::AmbiguousSeparator { .. })
        ));
        // Registered as one token, the value is unambiguous.
        let compressed = build_registry(&t, true).unwrap();
        let ids = encode_row(&compressed, t.schema(), t.row(0), SerializationFormat::Pairs, &[0]).unwrap();
        let back = deserialize_tokens(&ids, t.schema(), SerializationFormat::Pairs, &compressed, None).unwrap();
        assert_eq!(back, ["a, b"]);
    }

    #[test]
    fn settings_validation() {
        use PaddingStrategy::*;
        use SerializationFormat::*;
        assert!(CodecSettings::new(Compact, Middle, false).validate().is_ok());
        assert!(CodecSettings::new(Compact, Middle, true).validate().is_err());
        assert!(CodecSettings::new(Pairs, Middle, false).validate().is_err());
        assert!(CodecSettings::new(Compact, Right, false).validate().is_err());
        assert!(CodecSettings::new(Verbose, Left, true).validate().is_ok());
    }

    #[test]
    fn training_sequences_frame_and_mask() {
        let t = age_job_rows(&[("32", "nurse"), ("7", "clerk"), ("100", "a")]);
        let r = build_registry(&t, true).unwrap();
        let settings = CodecSettings::new(SerializationFormat::Pairs, PaddingStrategy::Right, false);
        let seqs = make_training_sequences(&t, &r, settings, None, 0, 0).unwrap();
        assert_eq!(seqs.len(), 3);
        for (seq, row) in seqs.iter().zip(t.rows()) {
            assert_eq!(seq.ids[0], BOS);
            assert_eq!(*seq.ids.last().unwrap(), EOS);
            assert_eq!(seq.mask.len(), seq.ids.len() - 1);
            let text = serialize_row(row, t.schema(), SerializationFormat::Pairs, &[0, 1]).unwrap();
            assert_eq!(r.decode_tokens(&seq.ids).unwrap(), text);
        }

        let layout = compute_padding_layout(&t, &r).unwrap();
        let seqs = make_training_sequences(&t, &r, CodecSettings::middle(), Some(&layout), 0, 0).unwrap();
        for seq in &seqs {
            assert_eq!(seq.ids.len(), layout.total_length() + 2);
            assert!(seq.mask.iter().all(|&m| m), "pads are trained under middle padding");
        }
        let mut masked = CodecSettings::middle();
        masked.train_pads = Some(false);
        let seqs = make_training_sequences(&t, &r, masked, Some(&layout), 0, 0).unwrap();
        assert!(seqs.iter().any(|s| s.mask.iter().any(|&m| !m)));
    }

    #[test]
    fn permutation_is_seeded() {
        let t = age_job_rows(&[("32", "nurse"), ("7", "clerk"), ("100", "a"), ("5", "b")]);
        let r = build_registry(&t, true).unwrap();
        let settings = CodecSettings::new(SerializationFormat::Pairs, PaddingStrategy::Right, true);
        let a = make_training_sequences(&t, &r, settings, None, 42, 3).unwrap();
        let b = make_training_sequences(&t, &r, settings, None, 42, 3).unwrap();
        assert_eq!(a, b);
        assert!(CodecSettings::new(SerializationFormat::Compact, PaddingStrategy::Middle, true).validate().is_err());
    }
}
