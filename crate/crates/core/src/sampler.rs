//! Autoregressive row generation, prompting and validity filtering.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::codec::{
    deserialize_tokens, CodecError, CodecSettings, PaddingLayout, ParseError, ParseErrorKind, SerializationFormat,
};
use crate::model::infer::Generator;
use crate::model::{LmModel, ModelError};
use crate::table::{parse_decimal, ColumnKind, DataTable, TableError, TableSchema};
use crate::tokenizer::{TokenId, TokenRegistry, BOS, EOS, PAD, SEP, SPACE};

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("invalid sampling request: {0}")]
    Spec(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Table(#[from] TableError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingSpec {
    pub n_rows: usize,
    pub temperature: f64,
    /// Argmax decoding; the temperature is ignored.
    pub greedy: bool,
    /// Cap on generated tokens per row; `None` fills the context.
    pub max_new_tokens: Option<usize>,
    /// `(column, value)` pairs every row must carry.
    pub condition: Vec<(String, String)>,
    pub seed: u64,
    /// Attempt cap; `None` means ten attempts per requested row.
    pub max_attempts: Option<usize>,
    /// Reject continuous values outside the training range.
    pub range_check: bool,
}

impl Default for SamplingSpec {
    fn default() -> Self {
        SamplingSpec {
            n_rows: 100,
            temperature: 1.0,
            greedy: false,
            max_new_tokens: None,
            condition: Vec::new(),
            seed: 0,
            max_attempts: None,
            range_check: false,
        }
    }
}

impl SamplingSpec {
    pub fn attempt_cap(&self) -> usize {
        self.max_attempts.unwrap_or(10 * self.n_rows)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SynthesisReport {
    pub requested: usize,
    pub accepted: usize,
    pub attempts: usize,
    pub rejections: BTreeMap<ParseErrorKind, usize>,
}

impl SynthesisReport {
    pub fn rejected(&self) -> usize {
        self.rejections.values().sum()
    }

    /// False when the attempt cap ran out before enough rows were accepted.
    pub fn complete(&self) -> bool {
        self.accepted >= self.requested
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.attempts == 0 {
            return 0.0;
        }
        self.accepted as f64 / self.attempts as f64
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "requested: {}", self.requested);
        let _ = writeln!(out, "accepted: {}", self.accepted);
        let _ = writeln!(out, "attempts: {}", self.attempts);
        let _ = writeln!(out, "status: {}", if self.complete() { "complete" } else { "attempt cap exhausted" });
        for kind in ParseErrorKind::ALL {
            let _ = writeln!(out, "rejected.{}: {}", kind.as_str(), self.rejections.get(&kind).copied().unwrap_or(0));
        }
        out
    }
}

/// Everything sampling needs from a checkpoint.
#[derive(Debug, Clone, Copy)]
pub struct SynthesisContext<'a> {
    pub model: &'a LmModel<f32>,
    pub registry: &'a TokenRegistry,
    pub schema: &'a TableSchema,
    pub settings: CodecSettings,
    pub layout: Option<&'a PaddingLayout>,
    /// Per-column training `(min, max)` for continuous columns.
    pub ranges: &'a [Option<(f64, f64)>],
}

/// Token-level decoding options.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decoding {
    pub temperature: f64,
    pub greedy: bool,
    /// Stop on EOS, or after this many new tokens.
    pub max_new_tokens: usize,
    /// Fixed-length mode: EOS is never emitted and exactly `max_new_tokens`
    /// tokens are produced.
    pub exact_length: bool,
}

fn pick(logits: &[f32], banned: &[TokenId], d: &Decoding, rng: &mut ChaCha8Rng) -> TokenId {
    let allowed = |i: usize| !banned.contains(&(i as TokenId));
    if d.greedy {
        let mut best = None;
        for (i, &l) in logits.iter().enumerate() {
            if allowed(i) && best.is_none_or(|(_, b)| l > b) {
                best = Some((i, l));
            }
        }
        return best.map_or(PAD, |(i, _)| i as TokenId);
    }
    let inv_t = 1.0 / d.temperature;
    let max = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| allowed(i))
        .map(|(_, &l)| l as f64 * inv_t)
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits
        .iter()
        .enumerate()
        .map(|(i, &l)| if allowed(i) { (l as f64 * inv_t - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i as TokenId;
        }
        u -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0) as TokenId
}

/// Extends `prompt` token by token. Returns the prompt plus everything
/// generated; a sampled EOS is included.
pub fn sample_tokens(
    model: &LmModel<f32>,
    prompt: &[TokenId],
    decoding: &Decoding,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<TokenId>, SampleError> {
    let mut generator = Generator::new(model);
    sample_with(&mut generator, prompt, decoding, rng)
}

fn sample_with(
    generator: &mut Generator<'_, f32>,
    prompt: &[TokenId],
    decoding: &Decoding,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<TokenId>, SampleError> {
    if prompt.is_empty() {
        return Err(SampleError::Spec("the prompt must hold at least BOS".into()));
    }
    if !decoding.greedy && !(decoding.temperature > 0.0 && decoding.temperature.is_finite()) {
        return Err(SampleError::Spec(format!("temperature {} must be positive", decoding.temperature)));
    }
    let banned: &[TokenId] = if decoding.exact_length { &[BOS, EOS] } else { &[BOS, PAD] };
    generator.reset();
    let mut out = prompt.to_vec();
    let mut logits = generator.feed(prompt)?.to_vec();
    let context = generator.context_length();
    for k in 0..decoding.max_new_tokens {
        let next = pick(&logits, banned, decoding, rng);
        out.push(next);
        if next == EOS || k + 1 == decoding.max_new_tokens || out.len() > context {
            break;
        }
        logits = generator.step(next)?.to_vec();
    }
    Ok(out)
}

/// Token prompt for one row.
fn build_prompt(
    ctx: &SynthesisContext<'_>,
    condition: &[(usize, String)],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<TokenId>, SampleError> {
    let reg = ctx.registry;
    let format = ctx.settings.format;
    let mut prompt = vec![BOS];
    match format {
        SerializationFormat::Compact => {
            let layout = ctx.layout.ok_or_else(|| SampleError::Spec("checkpoint has no padding layout".into()))?;
            reg.encode_into(&ctx.schema.column(0).name, &mut prompt).map_err(CodecError::from)?;
            prompt.push(SPACE);
            for (c, value) in condition {
                reg.encode_into(value, &mut prompt).map_err(CodecError::from)?;
                let slot_end = 1 + layout.slot(*c).end;
                if prompt.len() > slot_end {
                    return Err(SampleError::Spec(format!(
                        "condition value {value:?} does not fit column {:?}",
                        ctx.schema.column(*c).name
                    )));
                }
                prompt.resize(slot_end, PAD);
            }
        }
        _ => {
            if condition.is_empty() {
                // Fixed-order training always starts with the first column.
                let c = if ctx.settings.permute { rng.random_range(0..ctx.schema.len()) } else { 0 };
                reg.encode_into(&ctx.schema.column(c).name, &mut prompt).map_err(CodecError::from)?;
                reg.encode_into(format.connector(), &mut prompt).map_err(CodecError::from)?;
            } else {
                for (c, value) in condition {
                    reg.encode_into(&ctx.schema.column(*c).name, &mut prompt).map_err(CodecError::from)?;
                    reg.encode_into(format.connector(), &mut prompt).map_err(CodecError::from)?;
                    reg.encode_into(value, &mut prompt).map_err(CodecError::from)?;
                    prompt.push(SEP);
                }
            }
        }
    }
    Ok(prompt)
}

fn resolve_condition(ctx: &SynthesisContext<'_>, spec: &SamplingSpec) -> Result<Vec<(usize, String)>, SampleError> {
    let mut out = Vec::with_capacity(spec.condition.len());
    for (name, value) in &spec.condition {
        let c = ctx
            .schema
            .index_of(name)
            .ok_or_else(|| SampleError::Spec(format!("condition column {name:?} is not in the schema")))?;
        if out.iter().any(|(k, _)| *k == c) {
            return Err(SampleError::Spec(format!("column {name:?} is conditioned twice")));
        }
        let col = ctx.schema.column(c);
        if col.kind == ColumnKind::Continuous && parse_decimal(value).is_none() {
            return Err(SampleError::Spec(format!("condition value {value:?} for {name:?} is not numeric")));
        }
        if col.kind == ColumnKind::Categorical && ctx.registry.compression() {
            if let Some(known) = ctx.registry.categories(name) {
                if !known.contains(value) {
                    return Err(SampleError::Spec(format!("{value:?} is not a known category of {name:?}")));
                }
            }
        }
        if value.contains(", ") {
            return Err(SampleError::Spec(format!("condition value {value:?} contains the separator")));
        }
        out.push((c, value.clone()));
    }
    if !ctx.settings.permute {
        // Without permutation training only a schema-order prefix can be a prompt.
        out.sort_by_key(|(c, _)| *c);
        if out.iter().enumerate().any(|(i, (c, _))| i != *c) {
            return Err(SampleError::Spec(
                "this checkpoint was trained in a fixed column order; condition columns must form a prefix of the schema"
                    .into(),
            ));
        }
    }
    Ok(out)
}

/// Decodes and validates one generated sequence.
fn accept(
    ctx: &SynthesisContext<'_>,
    condition: &[(usize, String)],
    ids: &[TokenId],
    range_check: bool,
) -> Result<Vec<String>, ParseError> {
    let content = match ctx.settings.format {
        SerializationFormat::Compact => {
            let total = ctx.layout.map_or(0, PaddingLayout::total_length);
            ids.get(1..1 + total)
                .ok_or_else(|| ParseError::new(ParseErrorKind::WrongLength, format!("{} tokens", ids.len())))?
        }
        _ => match ids.last() {
            Some(&EOS) => &ids[1..ids.len() - 1],
            _ => return Err(ParseError::new(ParseErrorKind::Truncated, "no end-of-row token")),
        },
    };
    let cells = deserialize_tokens(content, ctx.schema, ctx.settings.format, ctx.registry, ctx.layout)?;
    for (c, cell) in cells.iter().enumerate() {
        let col = ctx.schema.column(c);
        if col.kind == ColumnKind::Categorical && ctx.registry.compression() {
            if let Some(known) = ctx.registry.categories(&col.name) {
                if !known.contains(cell) {
                    return Err(ParseError::new(ParseErrorKind::UnknownCategory, format!("{}: {cell:?}", col.name)));
                }
            }
        }
        if range_check && col.kind == ColumnKind::Continuous {
            if let (Some(Some((lo, hi))), Some(v)) = (ctx.ranges.get(c), parse_decimal(cell)) {
                if v < *lo || v > *hi {
                    return Err(ParseError::new(ParseErrorKind::OutOfRange, format!("{}: {cell}", col.name)));
                }
            }
        }
    }
    for (c, value) in condition {
        if &cells[*c] != value {
            return Err(ParseError::new(
                ParseErrorKind::ConditionMismatch,
                format!("{}: {:?}", ctx.schema.column(*c).name, cells[*c]),
            ));
        }
    }
    Ok(cells)
}

fn row_seed(master: u64, attempt: usize) -> u64 {
    master ^ (attempt as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Samples rows until `n_rows` are accepted or the attempt cap is reached.
/// A short table with `report.complete() == false` signals exhaustion.
pub fn synthesize(
    ctx: &SynthesisContext<'_>,
    spec: &SamplingSpec,
) -> Result<(DataTable, SynthesisReport), SampleError> {
    ctx.settings.validate()?;
    let condition = resolve_condition(ctx, spec)?;
    let context = ctx.model.config.context_length;
    let middle = ctx.settings.format == SerializationFormat::Compact;
    if middle && ctx.layout.is_none() {
        return Err(SampleError::Spec("checkpoint has no padding layout".into()));
    }
    if ctx.ranges.len() != ctx.schema.len() && spec.range_check {
        return Err(SampleError::Spec("checkpoint has no training ranges".into()));
    }
    let mut report = SynthesisReport { requested: spec.n_rows, ..SynthesisReport::default() };
    let mut rows = Vec::with_capacity(spec.n_rows);
    let mut generator = Generator::new(ctx.model);
    let cap = spec.attempt_cap();
    while report.accepted < spec.n_rows && report.attempts < cap {
        let mut rng = ChaCha8Rng::seed_from_u64(row_seed(spec.seed, report.attempts));
        report.attempts += 1;
        let prompt = build_prompt(ctx, &condition, &mut rng)?;
        let decoding = if middle {
            let total = ctx.layout.map_or(0, PaddingLayout::total_length);
            if total + 1 > context {
                return Err(SampleError::Spec(format!("layout of {total} tokens exceeds the context")));
            }
            Decoding {
                temperature: spec.temperature,
                greedy: spec.greedy,
                max_new_tokens: 1 + total - prompt.len(),
                exact_length: true,
            }
        } else {
            if prompt.len() >= context {
                return Err(SampleError::Spec("prompt fills the whole context".into()));
            }
            let room = context - prompt.len() + 1;
            Decoding {
                temperature: spec.temperature,
                greedy: spec.greedy,
                max_new_tokens: spec.max_new_tokens.map_or(room, |m| m.min(room)),
                exact_length: false,
            }
        };
        let ids = if decoding.max_new_tokens == 0 {
            prompt
        } else {
            sample_with(&mut generator, &prompt, &decoding, &mut rng)?
        };
        match accept(ctx, &condition, &ids, spec.range_check) {
            Ok(cells) => {
                rows.push(cells);
                report.accepted += 1;
            }
            Err(e) => {
                log::debug!("rejected attempt {}: {e}", report.attempts);
                *report.rejections.entry(e.kind).or_insert(0) += 1;
            }
        }
    }
    let table = DataTable::from_text_rows(ctx.schema.clone(), rows)?;
    Ok((table, report))
}
