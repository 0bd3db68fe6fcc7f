//! Single-file checkpoints and the warm-start workflows built on them.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! b"TBLA"  u32 version
//! section*6, each: u64 byte length, payload
//!   config      u64 vocab, context, layers, heads, d_model, d_ff; f32 dropout;
//!               u8 init tag (0 random: u64 seed | 1 checkpoint: str)
//!   registry    u8 compression; u64 n, str*n tokens; u64 n, str*n names;
//!               u64 n, (str column, u64 m, str*m categories)*n
//!   format      u8 format, u8 strategy, u8 permute, u8 train_pads (0 default,
//!               1 off, 2 on); u8 has_schema [schema]; u64 n, (u8 has, f64 lo,
//!               f64 hi)*n continuous ranges
//!   layout      u8 present, u64 n, u64*n widths
//!   provenance  u64 n, (str dataset, u64 epochs)*n
//!   weights     u64 n, f32*n in `Weights::tensors` order
//! str = u64 byte length + UTF-8 bytes
//! schema = u64 n, (str name, u8 kind)*n, u8 has_target, u64 target, u8 task
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::codec::{
    compute_padding_layout, CodecError, CodecSettings, PaddingLayout, PaddingStrategy, SerializationFormat,
    TrainingSequence,
};
use crate::model::train::{train, SequenceSource, TableSequences, TrainReport, TrainSettings};
use crate::model::{InitSpec, LmConfig, LmModel, ModelError, Weights};
use crate::sampler::{synthesize, SampleError, SamplingSpec, SynthesisContext, SynthesisReport};
use crate::table::{column_stats, Column, ColumnKind, ColumnStats, DataTable, TableError, TableSchema, Task};
use crate::tokenizer::{TokenRegistry, TokenizerError};

pub const MAGIC: &[u8; 4] = b"TBLA";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("incompatible checkpoint version {found} (this build reads version {supported})")]
    IncompatibleVersion { found: u32, supported: u32 },
    #[error("registry conflict: {0}")]
    Registry(#[from] TokenizerError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProvenanceEntry {
    pub dataset: String,
    pub epochs: usize,
}

impl ProvenanceEntry {
    pub fn new(dataset: impl Into<String>, epochs: usize) -> Self {
        ProvenanceEntry { dataset: dataset.into(), epochs }
    }
}

/// A model together with everything needed to encode and decode its rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: LmModel<f32>,
    pub registry: TokenRegistry,
    pub settings: CodecSettings,
    /// Schema of the last training table; absent for combined pre-training.
    pub schema: Option<TableSchema>,
    /// Training `(min, max)` of each continuous column of `schema`.
    pub ranges: Vec<Option<(f64, f64)>>,
    pub layout: Option<PaddingLayout>,
    pub provenance: Vec<ProvenanceEntry>,
}

impl Checkpoint {
    pub fn synthesis_context(&self) -> Result<SynthesisContext<'_>, StoreError> {
        let schema = self.schema.as_ref().ok_or_else(|| {
            StoreError::Invalid("checkpoint has no table schema; fine-tune it on a table first".into())
        })?;
        Ok(SynthesisContext {
            model: &self.model,
            registry: &self.registry,
            schema,
            settings: self.settings,
            layout: self.layout.as_ref(),
            ranges: &self.ranges,
        })
    }

    pub fn synthesize(&self, spec: &SamplingSpec) -> Result<(DataTable, SynthesisReport), StoreError> {
        Ok(synthesize(&self.synthesis_context()?, spec)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for section in [
            encode_config(&self.model.config),
            encode_registry(&self.registry),
            encode_format(self),
            encode_layout(self.layout.as_ref()),
            encode_provenance(&self.provenance),
            encode_weights(&self.model.weights),
        ] {
            out.extend_from_slice(&(section.len() as u64).to_le_bytes());
            out.extend_from_slice(&section);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, StoreError> {
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(StoreError::Corrupt("missing magic header".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(StoreError::IncompatibleVersion { found: version, supported: VERSION });
        }
        let mut outer = Reader::new(&bytes[8..]);
        let mut sections = Vec::with_capacity(6);
        for name in ["config", "registry", "format", "layout", "provenance", "weights"] {
            let len = outer.len_prefix(name)?;
            sections.push(Reader::new(outer.take(len, name)?));
        }
        outer.finish("file")?;
        let [mut cfg, mut reg, mut fmt, mut lay, mut prov, mut wts]: [Reader<'_>; 6] =
            sections.try_into().map_err(|_| StoreError::Corrupt("section count".into()))?;

        let config = decode_config(&mut cfg)?;
        cfg.finish("config")?;
        config.validate().map_err(|e| StoreError::Corrupt(e.to_string()))?;
        let registry = decode_registry(&mut reg)?;
        reg.finish("registry")?;
        let (settings, schema, ranges) = decode_format(&mut fmt)?;
        fmt.finish("format")?;
        let layout = decode_layout(&mut lay)?;
        lay.finish("layout")?;
        let provenance = decode_provenance(&mut prov)?;
        prov.finish("provenance")?;
        let n = wts.u64("weights")? as usize;
        if n != config.num_params() {
            return Err(StoreError::Corrupt(format!(
                "{n} parameters stored, configuration needs {}",
                config.num_params()
            )));
        }
        let raw = wts.take(n.checked_mul(4).ok_or_else(|| StoreError::Corrupt("weights size".into()))?, "weights")?;
        wts.finish("weights")?;
        let flat: Vec<f32> = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
        let weights = Weights::from_flat(&config, &flat).map_err(|e| StoreError::Corrupt(e.to_string()))?;
        if registry.len() != config.vocab_size {
            return Err(StoreError::Corrupt(format!(
                "registry has {} tokens, model vocabulary is {}",
                registry.len(),
                config.vocab_size
            )));
        }
        if settings.strategy == PaddingStrategy::Middle && layout.is_none() {
            return Err(StoreError::Corrupt("middle padding without a layout".into()));
        }
        Ok(Checkpoint { model: LmModel { config, weights }, registry, settings, schema, ranges, layout, provenance })
    }

    /// Writes to a temporary sibling and renames it into place.
    pub fn save(&self, path: &Path) -> Result<(), StoreError> {
        let io = |source| StoreError::Io { path: path.to_owned(), source };
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = PathBuf::from(tmp);
        {
            let mut f = fs::File::create(&tmp).map_err(io)?;
            f.write_all(&self.to_bytes()).map_err(io)?;
            f.sync_all().map_err(io)?;
        }
        fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, StoreError> {
        let bytes = fs::read(path).map_err(|source| StoreError::Io { path: path.to_owned(), source })?;
        Self::from_bytes(&bytes)
    }
}

fn put_u8(out: &mut Vec<u8>, v: u8) {
    out.push(v);
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u64(out, s.len() as u64);
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], StoreError> {
        if self.buf.len() - self.pos < n {
            return Err(StoreError::Corrupt(format!("truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, StoreError> {
        Ok(self.take(1, what)?[0])
    }

    fn u64(&mut self, what: &str) -> Result<u64, StoreError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f32(&mut self, what: &str) -> Result<f32, StoreError> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self, what: &str) -> Result<f64, StoreError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    /// A length or count that must fit in the remaining bytes.
    fn len_prefix(&mut self, what: &str) -> Result<usize, StoreError> {
        let n = self.u64(what)?;
        if n > (self.buf.len() - self.pos) as u64 {
            return Err(StoreError::Corrupt(format!("{what} length {n} exceeds the remaining data")));
        }
        Ok(n as usize)
    }

    fn usize(&mut self, what: &str) -> Result<usize, StoreError> {
        usize::try_from(self.u64(what)?).map_err(|_| StoreError::Corrupt(format!("{what} out of range")))
    }

    fn bool(&mut self, what: &str) -> Result<bool, StoreError> {
        match self.u8(what)? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(StoreError::Corrupt(format!("{what}: bad flag {v}"))),
        }
    }

    fn str(&mut self, what: &str) -> Result<String, StoreError> {
        let n = self.len_prefix(what)?;
        String::from_utf8(self.take(n, what)?.to_vec()).map_err(|_| StoreError::Corrupt(format!("{what}: not UTF-8")))
    }

    fn strings(&mut self, what: &str) -> Result<Vec<String>, StoreError> {
        let n = self.len_prefix(what)?;
        (0..n).map(|_| self.str(what)).collect()
    }

    fn finish(&self, what: &str) -> Result<(), StoreError> {
        if self.pos != self.buf.len() {
            return Err(StoreError::Corrupt(format!("{} trailing bytes after {what}", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn encode_config(c: &LmConfig) -> Vec<u8> {
    let mut out = Vec::new();
    for v in [c.vocab_size, c.context_length, c.n_layers, c.n_heads, c.d_model, c.d_ff] {
        put_u64(&mut out, v as u64);
    }
    out.extend_from_slice(&c.dropout.to_le_bytes());
    match &c.init {
        InitSpec::Random { seed } => {
            put_u8(&mut out, 0);
            put_u64(&mut out, *seed);
        }
        InitSpec::FromCheckpoint(r) => {
            put_u8(&mut out, 1);
            put_str(&mut out, r);
        }
    }
    out
}

fn decode_config(r: &mut Reader<'_>) -> Result<LmConfig, StoreError> {
    let mut dims = [0usize; 6];
    for d in &mut dims {
        *d = r.usize("config")?;
        if *d > 1 << 24 {
            return Err(StoreError::Corrupt(format!("implausible model dimension {d}")));
        }
    }
    let dropout = r.f32("dropout")?;
    let init = match r.u8("init")? {
        0 => InitSpec::Random { seed: r.u64("seed")? },
        1 => InitSpec::FromCheckpoint(r.str("init")?),
        t => return Err(StoreError::Corrupt(format!("unknown init tag {t}"))),
    };
    Ok(LmConfig {
        vocab_size: dims[0],
        context_length: dims[1],
        n_layers: dims[2],
        n_heads: dims[3],
        d_model: dims[4],
        d_ff: dims[5],
        dropout,
        init,
    })
}

fn encode_registry(reg: &TokenRegistry) -> Vec<u8> {
    let mut out = Vec::new();
    put_u8(&mut out, reg.compression() as u8);
    put_u64(&mut out, reg.len() as u64);
    for t in reg.tokens() {
        put_str(&mut out, t);
    }
    put_u64(&mut out, reg.registered_names().len() as u64);
    for n in reg.registered_names() {
        put_str(&mut out, n);
    }
    put_u64(&mut out, reg.all_categories().len() as u64);
    for (col, cats) in reg.all_categories() {
        put_str(&mut out, col);
        put_u64(&mut out, cats.len() as u64);
        for c in cats {
            put_str(&mut out, c);
        }
    }
    out
}

fn decode_registry(r: &mut Reader<'_>) -> Result<TokenRegistry, StoreError> {
    let compression = r.bool("compression")?;
    let tokens = r.strings("tokens")?;
    let names = r.strings("names")?.into_iter().collect();
    let n = r.len_prefix("categories")?;
    let mut categories = std::collections::BTreeMap::new();
    for _ in 0..n {
        let col = r.str("category column")?;
        let cats = r.strings("categories")?.into_iter().collect();
        categories.insert(col, cats);
    }
    TokenRegistry::from_parts(tokens, compression, names, categories).map_err(StoreError::Corrupt)
}

fn format_tag(f: SerializationFormat) -> u8 {
    match f {
        SerializationFormat::Verbose => 0,
        SerializationFormat::Pairs => 1,
        SerializationFormat::Compact => 2,
    }
}

fn strategy_tag(s: PaddingStrategy) -> u8 {
    match s {
        PaddingStrategy::Left => 0,
        PaddingStrategy::Right => 1,
        PaddingStrategy::Middle => 2,
    }
}

fn task_tag(t: Task) -> u8 {
    match t {
        Task::None => 0,
        Task::BinaryClassification => 1,
        Task::MulticlassClassification => 2,
        Task::Regression => 3,
    }
}

fn encode_format(ck: &Checkpoint) -> Vec<u8> {
    let s = &ck.settings;
    let mut out = vec![
        format_tag(s.format),
        strategy_tag(s.strategy),
        s.permute as u8,
        match s.train_pads {
            None => 0,
            Some(false) => 1,
            Some(true) => 2,
        },
    ];
    match &ck.schema {
        None => put_u8(&mut out, 0),
        Some(schema) => {
            put_u8(&mut out, 1);
            put_u64(&mut out, schema.len() as u64);
            for col in schema.columns() {
                put_str(&mut out, &col.name);
                put_u8(&mut out, (col.kind == ColumnKind::Continuous) as u8);
            }
            put_u8(&mut out, schema.target().is_some() as u8);
            put_u64(&mut out, schema.target().unwrap_or(0) as u64);
            put_u8(&mut out, task_tag(schema.task()));
        }
    }
    put_u64(&mut out, ck.ranges.len() as u64);
    for r in &ck.ranges {
        let (has, lo, hi) = r.map_or((0, 0.0, 0.0), |(lo, hi)| (1, lo, hi));
        put_u8(&mut out, has);
        out.extend_from_slice(&lo.to_le_bytes());
        out.extend_from_slice(&hi.to_le_bytes());
    }
    out
}

type FormatSection = (CodecSettings, Option<TableSchema>, Vec<Option<(f64, f64)>>);

fn decode_format(r: &mut Reader<'_>) -> Result<FormatSection, StoreError> {
    let format = match r.u8("format")? {
        0 => SerializationFormat::Verbose,
        1 => SerializationFormat::Pairs,
        2 => SerializationFormat::Compact,
        t => return Err(StoreError::Corrupt(format!("unknown format tag {t}"))),
    };
    let strategy = match r.u8("strategy")? {
        0 => PaddingStrategy::Left,
        1 => PaddingStrategy::Right,
        2 => PaddingStrategy::Middle,
        t => return Err(StoreError::Corrupt(format!("unknown padding tag {t}"))),
    };
    let permute = r.bool("permute")?;
    let train_pads = match r.u8("train_pads")? {
        0 => None,
        1 => Some(false),
        2 => Some(true),
        t => return Err(StoreError::Corrupt(format!("bad train_pads tag {t}"))),
    };
    let settings = CodecSettings { format, strategy, permute, train_pads };
    settings.validate().map_err(|e| StoreError::Corrupt(e.to_string()))?;
    let schema = if r.bool("schema flag")? {
        let n = r.len_prefix("schema")?;
        let mut cols = Vec::with_capacity(n);
        for _ in 0..n {
            let name = r.str("column name")?;
            let kind = if r.bool("column kind")? { ColumnKind::Continuous } else { ColumnKind::Categorical };
            cols.push(Column::new(name, kind));
        }
        let has_target = r.bool("target flag")?;
        let target = r.usize("target")?;
        let task = match r.u8("task")? {
            0 => Task::None,
            1 => Task::BinaryClassification,
            2 => Task::MulticlassClassification,
            3 => Task::Regression,
            t => return Err(StoreError::Corrupt(format!("unknown task tag {t}"))),
        };
        let schema = TableSchema::new(cols)
            .and_then(|s| s.with_target(has_target.then_some(target), task))
            .map_err(|e| StoreError::Corrupt(e.to_string()))?;
        Some(schema)
    } else {
        None
    };
    let n = r.len_prefix("ranges")?;
    let mut ranges = Vec::with_capacity(n);
    for _ in 0..n {
        let has = r.bool("range flag")?;
        let (lo, hi) = (r.f64("range")?, r.f64("range")?);
        ranges.push(has.then_some((lo, hi)));
    }
    Ok((settings, schema, ranges))
}

fn encode_layout(layout: Option<&PaddingLayout>) -> Vec<u8> {
    let mut out = Vec::new();
    match layout {
        None => put_u8(&mut out, 0),
        Some(l) => {
            put_u8(&mut out, 1);
            put_u64(&mut out, l.widths().len() as u64);
            for &w in l.widths() {
                put_u64(&mut out, w as u64);
            }
        }
    }
    out
}

fn decode_layout(r: &mut Reader<'_>) -> Result<Option<PaddingLayout>, StoreError> {
    if !r.bool("layout flag")? {
        return Ok(None);
    }
    let n = r.len_prefix("layout")?;
    let widths = (0..n).map(|_| r.usize("width")).collect::<Result<Vec<_>, _>>()?;
    Ok(Some(PaddingLayout::from_widths(widths)))
}

fn encode_provenance(p: &[ProvenanceEntry]) -> Vec<u8> {
    let mut out = Vec::new();
    put_u64(&mut out, p.len() as u64);
    for e in p {
        put_str(&mut out, &e.dataset);
        put_u64(&mut out, e.epochs as u64);
    }
    out
}

fn decode_provenance(r: &mut Reader<'_>) -> Result<Vec<ProvenanceEntry>, StoreError> {
    let n = r.len_prefix("provenance")?;
    (0..n).map(|_| Ok(ProvenanceEntry { dataset: r.str("dataset")?, epochs: r.usize("epochs")? })).collect()
}

fn encode_weights(w: &Weights<f32>) -> Vec<u8> {
    let flat = w.flatten();
    let mut out = Vec::with_capacity(8 + 4 * flat.len());
    put_u64(&mut out, flat.len() as u64);
    for x in flat {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

/// Continuous `(min, max)` per column, `None` for categorical columns.
pub fn training_ranges(table: &DataTable) -> Vec<Option<(f64, f64)>> {
    (0..table.schema().len())
        .map(|c| match column_stats(table, c) {
            ColumnStats::Continuous(Some(m)) => Some((m.min, m.max)),
            _ => None,
        })
        .collect()
}

/// How rows are encoded and the model shaped for a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub codec: CodecSettings,
    pub compression: bool,
    /// Architecture; the vocabulary size is replaced by the registry size.
    pub lm: LmConfig,
    pub train: TrainSettings,
}

fn layout_for(
    table: &DataTable,
    registry: &TokenRegistry,
    codec: CodecSettings,
) -> Result<Option<PaddingLayout>, StoreError> {
    codec.validate()?;
    Ok(match codec.strategy {
        PaddingStrategy::Middle => Some(compute_padding_layout(table, registry)?),
        _ => None,
    })
}

fn fit(
    mut model: LmModel<f32>,
    table: &DataTable,
    registry: TokenRegistry,
    codec: CodecSettings,
    train_settings: &TrainSettings,
) -> Result<(LmModel<f32>, Option<PaddingLayout>, TrainReport, TokenRegistry), StoreError> {
    let layout = layout_for(table, &registry, codec)?;
    let mut source = TableSequences::new(table, &registry, codec, layout.as_ref(), train_settings.seed);
    let report = train(&mut model, &mut source, train_settings)?;
    Ok((model, layout, report, registry))
}

/// Random-init training on one table.
pub fn train_new(table: &DataTable, name: &str, spec: &RunSpec) -> Result<(Checkpoint, TrainReport), StoreError> {
    let registry = TokenRegistry::build(&[table], spec.compression, None)?;
    let config = LmConfig { vocab_size: registry.len(), ..spec.lm.clone() };
    let model = LmModel::init(config)?;
    let (model, layout, report, registry) = fit(model, table, registry, spec.codec, &spec.train)?;
    let ck = Checkpoint {
        model,
        registry,
        settings: spec.codec,
        schema: Some(table.schema().clone()),
        ranges: training_ranges(table),
        layout,
        provenance: vec![ProvenanceEntry::new(name, spec.train.epochs)],
    };
    Ok((ck, report))
}

/// Continues training `base` on a new table. The registry defaults to `base`'s
/// extended with the table's strings; a supplied one must extend `base`'s.
pub fn fine_tune(
    base: &Checkpoint,
    base_ref: &str,
    table: &DataTable,
    name: &str,
    registry: Option<TokenRegistry>,
    codec: CodecSettings,
    train_settings: &TrainSettings,
) -> Result<(Checkpoint, TrainReport), StoreError> {
    let registry = match registry {
        Some(r) => r,
        None => TokenRegistry::build(&[table], base.registry.compression(), Some(&base.registry))?,
    };
    registry.check_extends(&base.registry)?;
    let mut model = base.model.resized(registry.len(), base.model.config.context_length, train_settings.seed)?;
    model.config.init = InitSpec::FromCheckpoint(base_ref.to_owned());
    let (model, layout, mut report, registry) = fit(model, table, registry, codec, train_settings)?;
    report.warm_start = Some(base_ref.to_owned());
    let mut provenance = base.provenance.clone();
    provenance.push(ProvenanceEntry::new(name, train_settings.epochs));
    let ck = Checkpoint {
        model,
        registry,
        settings: codec,
        schema: Some(table.schema().clone()),
        ranges: training_ranges(table),
        layout,
        provenance,
    };
    Ok((ck, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RegistryPolicy {
    /// One registry grown append-only across the chain.
    #[default]
    Shared,
    /// A fresh registry per task; only the transformer body carries over and
    /// token embeddings are re-initialized.
    Isolated,
}

impl RegistryPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            RegistryPolicy::Shared => "shared",
            RegistryPolicy::Isolated => "isolated",
        }
    }
}

impl std::str::FromStr for RegistryPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "shared" => Ok(RegistryPolicy::Shared),
            "isolated" => Ok(RegistryPolicy::Isolated),
            other => Err(format!("unknown registry policy {other:?} (shared|isolated)")),
        }
    }
}

pub enum ChainStart {
    Random,
    Checkpoint { checkpoint: Box<Checkpoint>, reference: String },
}

pub struct ChainTask<'a> {
    pub name: String,
    pub table: &'a DataTable,
    pub epochs: usize,
}

/// Keeps everything but the token embedding of `from`.
fn transplant_body(from: &LmModel<f32>, vocab_size: usize, seed: u64) -> Result<LmModel<f32>, StoreError> {
    let config = LmConfig { vocab_size, init: InitSpec::Random { seed }, ..from.config.clone() };
    let mut model = LmModel::init(config)?;
    let wte = std::mem::take(&mut model.weights.wte);
    model.weights = Weights { wte, ..from.weights.clone() };
    Ok(model)
}

/// Trains task after task, each warm-starting from the previous checkpoint.
/// With `save_dir`, checkpoint `k` is written as `{k:02}-{name}.ckpt`.
pub fn chain_fine_tune(
    start: ChainStart,
    tasks: &[ChainTask<'_>],
    policy: RegistryPolicy,
    spec: &RunSpec,
    save_dir: Option<&Path>,
) -> Result<Vec<(Checkpoint, TrainReport)>, StoreError> {
    // Resolve every registry up front so conflicts abort before any training.
    let (mut prev, mut prev_ref) = match start {
        ChainStart::Random => (None, String::new()),
        ChainStart::Checkpoint { checkpoint, reference } => (Some(*checkpoint), reference),
    };
    let compression = prev.as_ref().map_or(spec.compression, |c| c.registry.compression());
    let mut registries = Vec::with_capacity(tasks.len());
    for task in tasks {
        let reg = match policy {
            RegistryPolicy::Isolated => TokenRegistry::build(&[task.table], compression, None)?,
            RegistryPolicy::Shared => {
                let base = registries.last().or(prev.as_ref().map(|c| &c.registry));
                let reg = TokenRegistry::build(&[task.table], compression, base)?;
                if let Some(base) = base {
                    reg.check_extends(base)?;
                }
                reg
            }
        };
        registries.push(reg);
    }

    let mut out: Vec<(Checkpoint, TrainReport)> = Vec::with_capacity(tasks.len());
    for (k, (task, registry)) in tasks.iter().zip(registries).enumerate() {
        let train_settings = TrainSettings { epochs: task.epochs, ..spec.train.clone() };
        let (ck, report) = match (&prev, policy) {
            (None, _) => {
                let config = LmConfig { vocab_size: registry.len(), ..spec.lm.clone() };
                let model = LmModel::init(config)?;
                let (model, layout, report, registry) = fit(model, task.table, registry, spec.codec, &train_settings)?;
                let ck = Checkpoint {
                    model,
                    registry,
                    settings: spec.codec,
                    schema: Some(task.table.schema().clone()),
                    ranges: training_ranges(task.table),
                    layout,
                    provenance: vec![ProvenanceEntry::new(&task.name, task.epochs)],
                };
                (ck, report)
            }
            (Some(base), RegistryPolicy::Shared) => {
                fine_tune(base, &prev_ref, task.table, &task.name, Some(registry), spec.codec, &train_settings)?
            }
            (Some(base), RegistryPolicy::Isolated) => {
                let mut model = transplant_body(&base.model, registry.len(), train_settings.seed)?;
                model.config.init = InitSpec::FromCheckpoint(prev_ref.clone());
                let (model, layout, mut report, registry) =
                    fit(model, task.table, registry, spec.codec, &train_settings)?;
                report.warm_start = Some(prev_ref.clone());
                let mut provenance = base.provenance.clone();
                provenance.push(ProvenanceEntry::new(&task.name, task.epochs));
                let ck = Checkpoint {
                    model,
                    registry,
                    settings: spec.codec,
                    schema: Some(task.table.schema().clone()),
                    ranges: training_ranges(task.table),
                    layout,
                    provenance,
                };
                (ck, report)
            }
        };
        prev_ref = format!("chain[{k}]:{}", task.name);
        if let Some(dir) = save_dir {
            let path = dir.join(format!("{k:02}-{}.ckpt", task.name));
            ck.save(&path)?;
            prev_ref = path.display().to_string();
        }
        prev = Some(ck.clone());
        out.push((ck, report));
    }
    Ok(out)
}

/// The union of several tables' sequences, re-encoded every epoch.
struct UnionSequences<'a> {
    parts: Vec<TableSequences<'a>>,
}

impl SequenceSource for UnionSequences<'_> {
    fn sequences(&mut self, epoch: usize) -> Result<Vec<TrainingSequence>, ModelError> {
        let mut all = Vec::new();
        for p in &mut self.parts {
            all.extend(p.sequences(epoch)?);
        }
        Ok(all)
    }

    fn left_padded(&self) -> bool {
        self.parts.first().is_some_and(|p| p.left_padded())
    }
}

/// One model over the shuffled union of every table's rows, with a registry
/// covering all of them. Middle padding is per table and therefore refused.
pub fn combined_pretrain(
    tables: &[(&str, &DataTable)],
    spec: &RunSpec,
) -> Result<(Checkpoint, TrainReport), StoreError> {
    spec.codec.validate()?;
    if spec.codec.strategy == PaddingStrategy::Middle {
        return Err(StoreError::Invalid(
            "combined pre-training needs a name-carrying format, not middle padding".into(),
        ));
    }
    if tables.is_empty() {
        return Err(StoreError::Model(ModelError::NoData));
    }
    let refs: Vec<&DataTable> = tables.iter().map(|(_, t)| *t).collect();
    let registry = TokenRegistry::build(&refs, spec.compression, None)?;
    let config = LmConfig { vocab_size: registry.len(), ..spec.lm.clone() };
    let mut model = LmModel::init(config)?;
    let mut source = UnionSequences {
        parts: tables
            .iter()
            .enumerate()
            .map(|(i, (_, t))| {
                TableSequences::new(t, &registry, spec.codec, None, spec.train.seed.wrapping_add(i as u64))
            })
            .collect(),
    };
    let report = train(&mut model, &mut source, &spec.train)?;
    let ck = Checkpoint {
        model,
        registry,
        settings: spec.codec,
        schema: None,
        ranges: Vec::new(),
        layout: None,
        provenance: vec![ProvenanceEntry::new("combined", spec.train.epochs)],
    };
    Ok((ck, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    pub candidate: String,
    pub first_epoch_loss: f64,
    pub final_loss: f64,
}

/// Fine-tunes every candidate on `table` and orders them by final loss,
/// lowest first.
pub fn rank_foundations(
    candidates: &[(String, Checkpoint)],
    table: &DataTable,
    name: &str,
    train_settings: &TrainSettings,
) -> Result<Vec<Ranking>, StoreError> {
    let mut out = Vec::with_capacity(candidates.len());
    for (cand, ck) in candidates {
        let (_, report) = fine_tune(ck, cand, table, name, None, ck.settings, train_settings)?;
        out.push(Ranking {
            candidate: cand.clone(),
            first_epoch_loss: report.epochs.first().map_or(report.initial_loss, |e| e.mean_loss),
            final_loss: report.final_loss,
        });
    }
    out.sort_by(|a, b| a.final_loss.total_cmp(&b.final_loss));
    Ok(out)
}
