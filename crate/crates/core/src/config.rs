//! Run configuration files.
//!
//! Grammar, one item per line:
//!
//! ```text
//! line     := blank | comment | section | entry
//! comment  := ('#' | ';') any*
//! section  := '[' name ']'
//! entry    := key '=' value
//! ```
//!
//! Keys and section names are trimmed ASCII; values are trimmed and may be
//! empty (meaning "unset" for optional keys). Entries before the first
//! section header belong to no section and are rejected. `[chain]` accepts
//! repeated `task` keys; any other repeated key is an error. `--set
//! section.key=value` overrides are applied after the file, in order.
//!
//! Sections and keys:
//!
//! * `[data]` `path`, `dataset` (generated shape: loan, adult, insurance,
//!   planted), `rows`, `seed`, `delimiter`, `target`, `task`, `kinds`
//!   (`Name:continuous, Other:categorical`), `test_fraction`
//! * `[codec]` `format`, `padding`, `compression`, `permute`, `train_pads`
//! * `[model]` `preset` (tiny, desk), `context_length`, `n_layers`,
//!   `n_heads`, `d_model`, `d_ff`, `dropout`, `seed`
//! * `[train]` `epochs`, `batch_size`, `lr`, `beta1`, `beta2`, `eps`,
//!   `warmup_frac`, `grad_clip` (`none` disables), `seed`
//! * `[sample]` `rows`, `temperature`, `greedy`, `max_new_tokens`,
//!   `condition` (`Col=value; Col2=value`), `seed`, `max_attempts`,
//!   `range_check`
//! * `[output]` `dir`
//! * `[chain]` `start` (`random` or a checkpoint path), `policy` (shared,
//!   isolated), `task` (`name, source, epochs` where source is a CSV path or
//!   a generated shape written `shape:rows:seed`)
//! * `[bench]` `configs` (comma list of verbose, pairs+compression,
//!   compact+middle), `warmup`, `measured`, `lengths_only`

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::bench::BenchConfig;
use crate::codec::{CodecSettings, PaddingStrategy, SerializationFormat};
use crate::datasets::Shape;
use crate::model::train::TrainSettings;
use crate::model::{InitSpec, LmConfig};
use crate::sampler::SamplingSpec;
use crate::store::{RegistryPolicy, RunSpec};
use crate::table::{ColumnKind, CsvOptions, Task};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("{key} = {value:?}: {message}")]
    BadValue { key: String, value: String, message: String },
    #[error("duplicate key {0:?}")]
    Duplicate(String),
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Invalid(String),
}

const KEYS: &[&str] = &[
    "data.path",
    "data.dataset",
    "data.rows",
    "data.seed",
    "data.delimiter",
    "data.target",
    "data.task",
    "data.kinds",
    "data.test_fraction",
    "codec.format",
    "codec.padding",
    "codec.compression",
    "codec.permute",
    "codec.train_pads",
    "model.preset",
    "model.context_length",
    "model.n_layers",
    "model.n_heads",
    "model.d_model",
    "model.d_ff",
    "model.dropout",
    "model.seed",
    "train.epochs",
    "train.batch_size",
    "train.lr",
    "train.beta1",
    "train.beta2",
    "train.eps",
    "train.warmup_frac",
    "train.grad_clip",
    "train.seed",
    "sample.rows",
    "sample.temperature",
    "sample.greedy",
    "sample.max_new_tokens",
    "sample.condition",
    "sample.seed",
    "sample.max_attempts",
    "sample.range_check",
    "output.dir",
    "chain.start",
    "chain.policy",
    "chain.task",
    "bench.configs",
    "bench.warmup",
    "bench.measured",
    "bench.lengths_only",
];

/// Parsed `key = value` entries with fully qualified keys.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
    tasks: Vec<String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut raw = RawConfig::default();
        let mut section: Option<String> = None;
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| ConfigError::Syntax {
                    line: line_no,
                    message: "section header needs a closing ']'".into(),
                })?;
                section = Some(name.trim().to_ascii_lowercase());
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: line_no,
                message: format!("expected `key = value`, got {line:?}"),
            })?;
            let sec = section.as_deref().ok_or_else(|| ConfigError::Syntax {
                line: line_no,
                message: "entry before the first [section]".into(),
            })?;
            raw.insert(&format!("{sec}.{}", k.trim().to_ascii_lowercase()), v.trim(), false)
                .map_err(|e| ConfigError::Syntax { line: line_no, message: e.to_string() })?;
        }
        Ok(raw)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_owned(), source })?;
        Self::parse(&text)
    }

    fn insert(&mut self, key: &str, value: &str, overwrite: bool) -> Result<(), ConfigError> {
        if !KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey(key.to_owned()));
        }
        if key == "chain.task" {
            self.tasks.push(value.to_owned());
            return Ok(());
        }
        if self.values.insert(key.to_owned(), value.to_owned()).is_some() && !overwrite {
            return Err(ConfigError::Duplicate(key.to_owned()));
        }
        Ok(())
    }

    /// Applies a `section.key=value` override.
    pub fn set(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError::Invalid(format!("override {assignment:?} is not section.key=value")))?;
        self.insert(&k.trim().to_ascii_lowercase(), v.trim(), true)
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str).filter(|v| !v.is_empty())
    }

    fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(v) => parse_value(key, v),
        }
    }

    fn parse_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key).map(|v| parse_value(key, v)).transpose()
    }
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| ConfigError::BadValue { key: key.into(), value: v.into(), message: e.to_string() })
}

fn parse_bool(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(ConfigError::BadValue { key: key.into(), value: v.into(), message: "expected true or false".into() }),
    }
}

impl RawConfig {
    fn bool_or(&self, key: &str, default: bool) -> Result<bool, ConfigError> {
        self.get(key).map_or(Ok(default), |v| parse_bool(key, v))
    }
}

/// Where a table comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Csv(PathBuf),
    Generated { shape: Shape, rows: usize, seed: u64 },
}

impl DataSource {
    /// `path.csv` or `shape:rows:seed`.
    pub fn parse(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        if parts.len() == 3 {
            if let Ok(shape) = parts[0].parse::<Shape>() {
                let rows = parts[1].parse().map_err(|e| format!("rows {:?}: {e}", parts[1]))?;
                let seed = parts[2].parse().map_err(|e| format!("seed {:?}: {e}", parts[2]))?;
                return Ok(DataSource::Generated { shape, rows, seed });
            }
        }
        if s.trim().is_empty() {
            return Err("empty data source".into());
        }
        Ok(DataSource::Csv(PathBuf::from(s.trim())))
    }

    pub fn label(&self) -> String {
        match self {
            DataSource::Csv(p) => p.display().to_string(),
            DataSource::Generated { shape, rows, seed } => format!("{}:{rows}:{seed}", shape.as_str()),
        }
    }

    pub fn name(&self) -> String {
        match self {
            DataSource::Csv(p) => p.file_stem().map_or_else(|| "data".into(), |s| s.to_string_lossy().into_owned()),
            DataSource::Generated { shape, .. } => shape.as_str().to_owned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub source: Option<DataSource>,
    pub delimiter: u8,
    pub target: Option<String>,
    pub task: Option<Task>,
    pub kinds: Vec<(String, ColumnKind)>,
    pub test_fraction: Option<f64>,
}

impl DataConfig {
    pub fn csv_options(&self) -> CsvOptions {
        CsvOptions {
            delimiter: self.delimiter,
            has_header: true,
            kind_overrides: self.kinds.iter().cloned().collect::<HashMap<_, _>>(),
            target: self.target.clone(),
            task: self.task,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainTaskConfig {
    pub name: String,
    pub source: DataSource,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainConfig {
    /// `None` starts from random init.
    pub start: Option<PathBuf>,
    pub policy: RegistryPolicy,
    pub tasks: Vec<ChainTaskConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchPlan {
    pub configs: Vec<BenchConfig>,
    pub warmup: usize,
    pub measured: usize,
    pub lengths_only: bool,
}

/// Everything a command needs, resolved from a config file and overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: DataConfig,
    pub run: RunSpec,
    pub sample: SamplingSpec,
    pub output: Option<PathBuf>,
    pub chain: ChainConfig,
    pub bench: BenchPlan,
}

/// `Name:continuous, Other:categorical`.
pub fn parse_kinds(key: &str, v: &str) -> Result<Vec<(String, ColumnKind)>, ConfigError> {
    let bad = |m: &str| ConfigError::BadValue { key: key.into(), value: v.into(), message: m.into() };
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let (name, kind) = item.rsplit_once(':').ok_or_else(|| bad("expected Name:kind"))?;
            let kind = match kind.trim().to_ascii_lowercase().as_str() {
                "continuous" | "numeric" => ColumnKind::Continuous,
                "categorical" => ColumnKind::Categorical,
                _ => return Err(bad("kind must be continuous or categorical")),
            };
            Ok((name.trim().to_owned(), kind))
        })
        .collect()
}

/// `Col=value; Col2=value`.
pub fn parse_condition(v: &str) -> Result<Vec<(String, String)>, String> {
    v.split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            item.split_once('=')
                .map(|(c, x)| (c.trim().to_owned(), x.trim().to_owned()))
                .ok_or_else(|| format!("condition {item:?} is not Column=value"))
        })
        .collect()
}

fn bench_config(label: &str) -> Result<BenchConfig, String> {
    match label.trim() {
        "verbose" => Ok(BenchConfig::verbose_plain()),
        "pairs+compression" => Ok(BenchConfig::pairs_compressed()),
        "compact+middle" => Ok(BenchConfig::compact_middle()),
        other => Err(format!("unknown bench config {other:?} (verbose|pairs+compression|compact+middle)")),
    }
}

impl RunConfig {
    pub fn from_raw(raw: &RawConfig) -> Result<Self, ConfigError> {
        let source = match (raw.get("data.path"), raw.get("data.dataset")) {
            (Some(_), Some(_)) => {
                return Err(ConfigError::Invalid("set either data.path or data.dataset, not both".into()))
            }
            (Some(p), None) => Some(DataSource::Csv(PathBuf::from(p))),
            (None, Some(d)) => Some(DataSource::Generated {
                shape: parse_value("data.dataset", d)?,
                rows: raw.parse_or("data.rows", 1000)?,
                seed: raw.parse_or("data.seed", 0)?,
            }),
            (None, None) => None,
        };
        let delimiter = match raw.get("data.delimiter") {
            None => b',',
            Some("\\t") | Some("tab") => b'\t',
            Some(d) if d.len() == 1 => d.as_bytes()[0],
            Some(d) => {
                return Err(ConfigError::BadValue {
                    key: "data.delimiter".into(),
                    value: d.into(),
                    message: "expected one character".into(),
                })
            }
        };
        let data = DataConfig {
            source,
            delimiter,
            target: raw.get("data.target").map(str::to_owned),
            task: raw.parse_opt("data.task")?,
            kinds: raw.get("data.kinds").map_or(Ok(Vec::new()), |v| parse_kinds("data.kinds", v))?,
            test_fraction: raw.parse_opt("data.test_fraction")?,
        };

        let format: SerializationFormat = raw.parse_or("codec.format", SerializationFormat::Compact)?;
        let default_padding =
            if format == SerializationFormat::Compact { PaddingStrategy::Middle } else { PaddingStrategy::Right };
        let mut codec = CodecSettings::new(
            format,
            raw.parse_or("codec.padding", default_padding)?,
            raw.bool_or("codec.permute", format != SerializationFormat::Compact)?,
        );
        codec.train_pads = raw.get("codec.train_pads").map(|v| parse_bool("codec.train_pads", v)).transpose()?;
        codec.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;

        let preset = raw.get("model.preset").unwrap_or("tiny");
        let base = match preset {
            "tiny" => LmConfig::tiny(0),
            "desk" => LmConfig::desk(0),
            other => {
                return Err(ConfigError::BadValue {
                    key: "model.preset".into(),
                    value: other.into(),
                    message: "expected tiny or desk".into(),
                })
            }
        };
        let lm = LmConfig {
            vocab_size: 0,
            context_length: raw.parse_or("model.context_length", base.context_length)?,
            n_layers: raw.parse_or("model.n_layers", base.n_layers)?,
            n_heads: raw.parse_or("model.n_heads", base.n_heads)?,
            d_model: raw.parse_or("model.d_model", base.d_model)?,
            d_ff: raw.parse_or("model.d_ff", base.d_ff)?,
            dropout: raw.parse_or("model.dropout", base.dropout)?,
            init: InitSpec::Random { seed: raw.parse_or("model.seed", 0)? },
        };
        LmConfig { vocab_size: 1, ..lm.clone() }.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;

        let d = TrainSettings::default();
        let grad_clip = match raw.get("train.grad_clip") {
            None => d.grad_clip,
            Some(v) if v.eq_ignore_ascii_case("none") => None,
            Some(v) => Some(parse_value("train.grad_clip", v)?),
        };
        let train = TrainSettings {
            epochs: raw.parse_or("train.epochs", d.epochs)?,
            batch_size: raw.parse_or("train.batch_size", d.batch_size)?,
            lr: raw.parse_or("train.lr", d.lr)?,
            beta1: raw.parse_or("train.beta1", d.beta1)?,
            beta2: raw.parse_or("train.beta2", d.beta2)?,
            eps: raw.parse_or("train.eps", d.eps)?,
            warmup_frac: raw.parse_or("train.warmup_frac", d.warmup_frac)?,
            grad_clip,
            seed: raw.parse_or("train.seed", d.seed)?,
        };
        if train.batch_size == 0 {
            return Err(ConfigError::Invalid("train.batch_size must be positive".into()));
        }

        let s = SamplingSpec::default();
        let sample = SamplingSpec {
            n_rows: raw.parse_or("sample.rows", s.n_rows)?,
            temperature: raw.parse_or("sample.temperature", s.temperature)?,
            greedy: raw.bool_or("sample.greedy", s.greedy)?,
            max_new_tokens: raw.parse_opt("sample.max_new_tokens")?,
            condition: match raw.get("sample.condition") {
                None => Vec::new(),
                Some(v) => parse_condition(v).map_err(|m| ConfigError::BadValue {
                    key: "sample.condition".into(),
                    value: v.into(),
                    message: m,
                })?,
            },
            seed: raw.parse_or("sample.seed", s.seed)?,
            max_attempts: raw.parse_opt("sample.max_attempts")?,
            range_check: raw.bool_or("sample.range_check", s.range_check)?,
        };

        let start = match raw.get("chain.start") {
            None => None,
            Some(v) if v.eq_ignore_ascii_case("random") => None,
            Some(v) => Some(PathBuf::from(v)),
        };
        let tasks = raw
            .tasks
            .iter()
            .map(|t| {
                let bad = |m: String| ConfigError::BadValue { key: "chain.task".into(), value: t.clone(), message: m };
                let parts: Vec<&str> = t.split(',').map(str::trim).collect();
                if parts.len() != 3 {
                    return Err(bad("expected `name, source, epochs`".into()));
                }
                Ok(ChainTaskConfig {
                    name: parts[0].to_owned(),
                    source: DataSource::parse(parts[1]).map_err(bad)?,
                    epochs: parts[2].parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let chain = ChainConfig { start, policy: raw.parse_or("chain.policy", RegistryPolicy::Shared)?, tasks };

        let configs = match raw.get("bench.configs") {
            None => BenchConfig::standard(),
            Some(v) => v
                .split(',')
                .map(bench_config)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|m| ConfigError::BadValue { key: "bench.configs".into(), value: v.into(), message: m })?,
        };
        let bench = BenchPlan {
            configs,
            warmup: raw.parse_or("bench.warmup", 1)?,
            measured: raw.parse_or("bench.measured", 3)?,
            lengths_only: raw.bool_or("bench.lengths_only", false)?,
        };

        Ok(RunConfig {
            data,
            run: RunSpec { codec, compression: raw.bool_or("codec.compression", true)?, lm, train },
            sample,
            output: raw.get("output.dir").map(PathBuf::from),
            chain,
            bench,
        })
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Self::from_raw(&RawConfig::parse(text)?)
    }

    /// Loads `path` (if any) and applies `overrides` in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut raw = match path {
            Some(p) => RawConfig::load(p)?,
            None => RawConfig::default(),
        };
        for o in overrides {
            raw.set(o)?;
        }
        Self::from_raw(&raw)
    }

    /// Fully resolved configuration; parsing it gives back `self`.
    pub fn to_text(&self) -> String {
        let mut o = String::new();
        let opt = |v: Option<String>| v.unwrap_or_default();
        let d = &self.data;
        o.push_str("[data]\n");
        match &d.source {
            Some(DataSource::Csv(p)) => {
                let _ = writeln!(o, "path = {}", p.display());
            }
            Some(DataSource::Generated { shape, rows, seed }) => {
                let _ = writeln!(o, "dataset = {}\nrows = {rows}\nseed = {seed}", shape.as_str());
            }
            None => {}
        }
        let delim = if d.delimiter == b'\t' { "tab".to_owned() } else { (d.delimiter as char).to_string() };
        let _ = writeln!(o, "delimiter = {delim}");
        let _ = writeln!(o, "target = {}", opt(d.target.clone()));
        let _ = writeln!(o, "task = {}", opt(d.task.map(|t| t.as_str().to_owned())));
        let kinds: Vec<String> = d.kinds.iter().map(|(n, k)| format!("{n}:{k}")).collect();
        let _ = writeln!(o, "kinds = {}", kinds.join(", "));
        let _ = writeln!(o, "test_fraction = {}", opt(d.test_fraction.map(|f| f.to_string())));

        let c = &self.run.codec;
        let _ = writeln!(
            o,
            "\n[codec]\nformat = {}\npadding = {}\ncompression = {}\npermute = {}\ntrain_pads = {}",
            c.format,
            c.strategy,
            self.run.compression,
            c.permute,
            opt(c.train_pads.map(|b| b.to_string()))
        );

        let m = &self.run.lm;
        let seed = match &m.init {
            InitSpec::Random { seed } => *seed,
            InitSpec::FromCheckpoint(_) => 0,
        };
        let _ = writeln!(
            o,
            "\n[model]\ncontext_length = {}\nn_layers = {}\nn_heads = {}\nd_model = {}\nd_ff = {}\ndropout = {}\nseed = {seed}",
            m.context_length, m.n_layers, m.n_heads, m.d_model, m.d_ff, m.dropout
        );

        let t = &self.run.train;
        let _ = writeln!(
            o,
            "\n[train]\nepochs = {}\nbatch_size = {}\nlr = {}\nbeta1 = {}\nbeta2 = {}\neps = {}\nwarmup_frac = {}\ngrad_clip = {}\nseed = {}",
            t.epochs,
            t.batch_size,
            t.lr,
            t.beta1,
            t.beta2,
            t.eps,
            t.warmup_frac,
            t.grad_clip.map_or_else(|| "none".to_owned(), |g| g.to_string()),
            t.seed
        );

        let s = &self.sample;
        let cond: Vec<String> = s.condition.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let _ = writeln!(
            o,
            "\n[sample]\nrows = {}\ntemperature = {}\ngreedy = {}\nmax_new_tokens = {}\ncondition = {}\nseed = {}\nmax_attempts = {}\nrange_check = {}",
            s.n_rows,
            s.temperature,
            s.greedy,
            opt(s.max_new_tokens.map(|v| v.to_string())),
            cond.join("; "),
            s.seed,
            opt(s.max_attempts.map(|v| v.to_string())),
            s.range_check
        );

        let _ = writeln!(o, "\n[output]\ndir = {}", opt(self.output.as_ref().map(|p| p.display().to_string())));

        let ch = &self.chain;
        let _ = writeln!(
            o,
            "\n[chain]\nstart = {}\npolicy = {}",
            ch.start.as_ref().map_or_else(|| "random".to_owned(), |p| p.display().to_string()),
            ch.policy.as_str()
        );
        for task in &ch.tasks {
            let _ = writeln!(o, "task = {}, {}, {}", task.name, task.source.label(), task.epochs);
        }

        let b = &self.bench;
        let labels: Vec<&str> = b.configs.iter().map(|c| c.label.as_str()).collect();
        let _ = writeln!(
            o,
            "\n[bench]\nconfigs = {}\nwarmup = {}\nmeasured = {}\nlengths_only = {}",
            labels.join(", "),
            b.warmup,
            b.measured,
            b.lengths_only
        );
        o
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "
# toy run
[data]
dataset = planted
rows = 50

[codec]
format = pairs
padding = right
permute = true

[train]
epochs = 2
lr = 0.001

[sample]
condition = Color=red; Shape=circle

[chain]
task = a, loan:30:1, 2
task = b, data/b.csv, 1
";

    #[test]
    fn parses_sections_and_defaults() {
        let c = RunConfig::parse(SAMPLE).unwrap();
        assert_eq!(c.data.source, Some(DataSource::Generated { shape: Shape::Planted, rows: 50, seed: 0 }));
        assert_eq!(c.run.codec.format, SerializationFormat::Pairs);
        assert!(c.run.codec.permute && c.run.compression);
        assert_eq!(c.run.train.epochs, 2);
        assert_eq!(c.run.train.batch_size, 32);
        assert_eq!(c.sample.condition, vec![("Color".into(), "red".into()), ("Shape".into(), "circle".into())]);
        assert_eq!(c.chain.tasks.len(), 2);
        assert_eq!(c.chain.tasks[1].source, DataSource::Csv("data/b.csv".into()));
        assert_eq!(c.run.lm.d_model, 64);
    }

    #[test]
    fn resolved_text_round_trips() {
        let c = RunConfig::parse(SAMPLE).unwrap();
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
        let d = RunConfig::parse("").unwrap();
        assert_eq!(RunConfig::parse(&d.to_text()).unwrap(), d);
    }

    #[test]
    fn compact_defaults_to_middle_padding() {
        let c = RunConfig::parse("[codec]\nformat = compact\n").unwrap();
        assert_eq!(c.run.codec, CodecSettings::middle());
    }

    #[test]
    fn bad_input_is_rejected() {
        assert!(matches!(
            RunConfig::parse("[codec]\nformat = compact\npermute = true\n"),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            RunConfig::parse("[codec]\nformat = pairs\npadding = middle\n"),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(RunConfig::parse("x = 1\n"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(RunConfig::parse("[train]\nepochs\n"), Err(ConfigError::Syntax { line: 2, .. })));
        assert!(matches!(RunConfig::parse("[train]\nepoch = 3\n"), Err(ConfigError::Syntax { .. })));
        assert!(matches!(RunConfig::parse("[train]\nepochs = x\n"), Err(ConfigError::BadValue { .. })));
        assert!(matches!(RunConfig::parse("[train]\nepochs = 1\nepochs = 2\n"), Err(ConfigError::Syntax { .. })));
    }

    #[test]
    fn overrides_apply_in_order() {
        let mut raw = RawConfig::parse(SAMPLE).unwrap();
        raw.set("train.epochs=5").unwrap();
        raw.set("train.epochs = 7").unwrap();
        assert_eq!(RunConfig::from_raw(&raw).unwrap().run.train.epochs, 7);
        assert!(matches!(raw.set("train.nope=1"), Err(ConfigError::UnknownKey(_))));
        assert!(raw.set("novalue").is_err());
    }
}
