//! Sequence-length and per-epoch training-time comparisons between encoding
//! configurations.

use std::fmt::Write as _;

use crate::codec::{
    compute_padding_layout, identity_order, CodecSettings, PaddingStrategy, RowEncoder, SerializationFormat,
};
use crate::model::train::{train, TableSequences, TrainSettings};
use crate::model::{LmConfig, LmModel};
use crate::store::StoreError;
use crate::table::DataTable;
use crate::tokenizer::TokenRegistry;

/// One encoding under test.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub label: String,
    pub codec: CodecSettings,
    pub compression: bool,
}

impl BenchConfig {
    pub fn new(label: &str, codec: CodecSettings, compression: bool) -> Self {
        BenchConfig { label: label.to_owned(), codec, compression }
    }

    /// `name is value` text over a character vocabulary.
    pub fn verbose_plain() -> Self {
        Self::new("verbose", CodecSettings::new(SerializationFormat::Verbose, PaddingStrategy::Right, false), false)
    }

    /// `name value` text with names and categories as single tokens.
    pub fn pairs_compressed() -> Self {
        Self::new(
            "pairs+compression",
            CodecSettings::new(SerializationFormat::Pairs, PaddingStrategy::Right, false),
            true,
        )
    }

    pub fn compact_middle() -> Self {
        Self::new("compact+middle", CodecSettings::middle(), true)
    }

    pub fn standard() -> Vec<Self> {
        vec![Self::verbose_plain(), Self::pairs_compressed(), Self::compact_middle()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LengthStats {
    /// Longest encoded row, excluding BOS and EOS. Exact over all rows.
    pub max: usize,
    pub mean: f64,
    pub vocab: usize,
}

/// Encodes every row in schema order and measures the token counts.
pub fn sequence_lengths(table: &DataTable, config: &BenchConfig) -> Result<LengthStats, StoreError> {
    config.codec.validate()?;
    let registry = TokenRegistry::build(&[table], config.compression, None)?;
    let layout = match config.codec.strategy {
        PaddingStrategy::Middle => Some(compute_padding_layout(table, &registry)?),
        _ => None,
    };
    let encoder = RowEncoder::new(&registry, table.schema(), config.codec, layout.as_ref())?;
    let order = identity_order(table.schema().len());
    let (mut max, mut total) = (0usize, 0usize);
    for row in table.rows() {
        let n = encoder.frame(row, &order)?.len() - 2;
        max = max.max(n);
        total += n;
    }
    Ok(LengthStats { max, mean: total as f64 / table.len().max(1) as f64, vocab: registry.len() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Timing {
    /// Median over the measured epochs.
    pub seconds_per_epoch: f64,
    pub rows_per_second: f64,
    pub epoch_seconds: Vec<f64>,
}

/// Trains `warmup + measured` epochs from random init and takes the median
/// wall time of the measured ones.
pub fn time_epochs(
    table: &DataTable,
    config: &BenchConfig,
    lm: &LmConfig,
    train_settings: &TrainSettings,
    warmup: usize,
    measured: usize,
) -> Result<Timing, StoreError> {
    if measured == 0 {
        return Err(StoreError::Invalid("at least one measured epoch is needed".into()));
    }
    let registry = TokenRegistry::build(&[table], config.compression, None)?;
    let layout = match config.codec.strategy {
        PaddingStrategy::Middle => Some(compute_padding_layout(table, &registry)?),
        _ => None,
    };
    let mut model = LmModel::init(LmConfig { vocab_size: registry.len(), ..lm.clone() })?;
    let settings = TrainSettings { epochs: warmup + measured, ..train_settings.clone() };
    let mut source = TableSequences::new(table, &registry, config.codec, layout.as_ref(), settings.seed);
    let report = train(&mut model, &mut source, &settings)?;
    let mut secs: Vec<f64> = report.epochs[warmup..].iter().map(|e| e.seconds).collect();
    let epoch_seconds = secs.clone();
    secs.sort_by(f64::total_cmp);
    let mid = secs.len() / 2;
    let median = if secs.len() % 2 == 1 { secs[mid] } else { (secs[mid - 1] + secs[mid]) / 2.0 };
    Ok(Timing { seconds_per_epoch: median, rows_per_second: table.len() as f64 / median, epoch_seconds })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub config: BenchConfig,
    pub lengths: LengthStats,
    pub timing: Option<Timing>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub dataset: String,
    pub rows: Vec<BenchRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSettings {
    pub lm: LmConfig,
    pub train: TrainSettings,
    pub warmup_epochs: usize,
    pub measured_epochs: usize,
    /// Skip training and report lengths only.
    pub lengths_only: bool,
}

impl Default for BenchSettings {
    fn default() -> Self {
        BenchSettings {
            lm: LmConfig::tiny(0),
            train: TrainSettings::default(),
            warmup_epochs: 1,
            measured_epochs: 3,
            lengths_only: false,
        }
    }
}

/// Runs every configuration on the same table and model shape. The context
/// length is raised to fit the longest encoding if needed.
pub fn run_benchmark(
    dataset: &str,
    table: &DataTable,
    configs: &[BenchConfig],
    settings: &BenchSettings,
) -> Result<BenchReport, StoreError> {
    if configs.len() < 2 {
        return Err(StoreError::Invalid("a benchmark compares at least two configurations".into()));
    }
    let lengths = configs.iter().map(|c| sequence_lengths(table, c)).collect::<Result<Vec<_>, _>>()?;
    let longest = lengths.iter().map(|l| l.max).max().unwrap_or(0) + 1;
    let lm = LmConfig { context_length: settings.lm.context_length.max(longest), ..settings.lm.clone() };
    let mut rows = Vec::new();
    for (config, lengths) in configs.iter().zip(lengths) {
        let timing = if settings.lengths_only {
            None
        } else {
            log::info!("timing {}", config.label);
            Some(time_epochs(table, config, &lm, &settings.train, settings.warmup_epochs, settings.measured_epochs)?)
        };
        rows.push(BenchRow { config: config.clone(), lengths, timing });
    }
    Ok(BenchReport { dataset: dataset.to_owned(), rows })
}

fn reduction(base: f64, x: f64) -> f64 {
    if base == 0.0 {
        0.0
    } else {
        100.0 * (base - x) / base
    }
}

impl BenchReport {
    pub const CSV_HEADER: &'static str =
        "config,format,compression,padding,max_len,mean_len,vocab,seconds_per_epoch,rows_per_second";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            let c = &r.config;
            let (s, rps) = r
                .timing
                .as_ref()
                .map(|t| (format!("{:.6}", t.seconds_per_epoch), format!("{:.2}", t.rows_per_second)))
                .unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.3},{},{s},{rps}",
                c.label,
                c.codec.format,
                c.compression,
                c.codec.strategy,
                r.lengths.max,
                r.lengths.mean,
                r.lengths.vocab
            );
        }
        out
    }

    /// Aligned table; reductions are relative to the first configuration.
    pub fn to_text(&self) -> String {
        let mut out = format!("dataset: {}\n", self.dataset);
        let Some(base) = self.rows.first() else { return out };
        let w = self.rows.iter().map(|r| r.config.label.len()).max().unwrap_or(6).max(6);
        let _ = writeln!(
            out,
            "{:<w$}  {:>7}  {:>8}  {:>8}  {:>9}  {:>8}",
            "config", "max_len", "len_red%", "mean_len", "s/epoch", "time_red%"
        );
        for r in &self.rows {
            let (s, red) = match (&r.timing, &base.timing) {
                (Some(t), Some(b)) => (
                    format!("{:.4}", t.seconds_per_epoch),
                    format!("{:.1}", reduction(b.seconds_per_epoch, t.seconds_per_epoch)),
                ),
                _ => ("-".into(), "-".into()),
            };
            let _ = writeln!(
                out,
                "{:<w$}  {:>7}  {:>8.1}  {:>8.2}  {:>9}  {:>8}",
                r.config.label,
                r.lengths.max,
                reduction(base.lengths.max as f64, r.lengths.max as f64),
                r.lengths.mean,
                s,
                red
            );
        }
        out
    }

    pub fn row(&self, label: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.config.label == label)
    }
}
