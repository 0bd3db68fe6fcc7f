//! The `tabsynth` command line.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::bench::{run_benchmark, BenchReport, BenchSettings};
use crate::codec::{compute_padding_layout, identity_order, PaddingStrategy, RowEncoder};
use crate::config::{parse_condition, parse_kinds, ConfigError, DataConfig, DataSource, RunConfig};
use crate::datasets::Shape;
use crate::eval::utility::EvalReport;
use crate::eval::MetricError;
use crate::model::train::{TrainReport, TrainSettings};
use crate::store::{chain_fine_tune, train_new, ChainStart, ChainTask, Checkpoint, RunSpec, StoreError};
use crate::table::{load_csv, split_stratified, CsvOptions, DataTable, TableError, Task};
use crate::tokenizer::TokenRegistry;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config or inputs: exit code 2.
    #[error("{0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    /// Anything that went wrong while running a valid request: exit code 1.
    #[error("{stage}: {message}")]
    Stage { stage: &'static str, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Stage { .. } => 1,
        }
    }

    fn stage(stage: &'static str) -> impl FnOnce(StoreError) -> CliError {
        move |e| match e {
            StoreError::Codec(_) | StoreError::Invalid(_) => CliError::Usage(format!("{stage}: {e}")),
            StoreError::Model(crate::model::ModelError::TooLong { .. }) => CliError::Usage(format!("{stage}: {e}")),
            StoreError::Model(crate::model::ModelError::Config(_)) => CliError::Usage(format!("{stage}: {e}")),
            e => CliError::Stage { stage, message: e.to_string() },
        }
    }
}

fn io_err<'a>(stage: &'static str, path: &'a Path) -> impl FnOnce(std::io::Error) -> CliError + 'a {
    move |e| CliError::Stage { stage, message: format!("{}: {e}", path.display()) }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "tabsynth",
    version,
    about = "Synthesize tabular data with a small transformer trained on serialized rows"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Run configuration file.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Override a config entry, e.g. `--set train.epochs=3`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Run directory; overrides `output.dir`.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model from random init and write a run directory.
    Train(ConfigArgs),
    /// Sample rows from a checkpoint as CSV.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(short = 'n', long, default_value_t = 100)]
        rows: usize,
        /// `Column=value`; repeatable.
        #[arg(long)]
        condition: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long)]
        greedy: bool,
        #[arg(long)]
        max_attempts: Option<usize>,
        #[arg(long)]
        max_new_tokens: Option<usize>,
        /// Reject continuous values outside the training range.
        #[arg(long)]
        range_check: bool,
        /// Output CSV; stdout when absent. A `.report.txt` is written beside it.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Compare synthetic rows with real ones.
    Evaluate {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        synth: PathBuf,
        /// Held-out real rows for ML utility.
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        target: Option<String>,
        /// binary, multiclass or regression.
        #[arg(long)]
        task: Option<Task>,
        /// Column kind overrides: `Name:categorical, Other:continuous`.
        #[arg(long)]
        kinds: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Compare sequence lengths and per-epoch time across encodings.
    Benchmark(ConfigArgs),
    /// Fine-tune a sequence of tasks, each starting from the previous model.
    Chain {
        #[command(flatten)]
        args: ConfigArgs,
        /// Also train every task from random init for comparison.
        #[arg(long)]
        compare_random: bool,
    },
    /// Print a checkpoint's registry and layout, or a config's serialized corpus.
    Inspect {
        #[arg(long, conflicts_with = "config")]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        args: ConfigArgs,
        /// Rows of serialized corpus to print.
        #[arg(long, default_value_t = 5)]
        limit: usize,
    },
    /// Write a generated dataset as CSV.
    Generate {
        /// loan, adult, insurance or planted.
        #[arg(long)]
        dataset: Shape,
        #[arg(long, default_value_t = 1000)]
        rows: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        out: PathBuf,
    },
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(summary) => {
            print!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs one command and returns the text to print on success.
pub fn run(command: Command) -> Result<String> {
    match command {
        Command::Train(a) => cmd_train(&a),
        Command::Sample {
            checkpoint,
            rows,
            condition,
            seed,
            temperature,
            greedy,
            max_attempts,
            max_new_tokens,
            range_check,
            out,
        } => {
            let mut cond = Vec::new();
            for c in &condition {
                cond.extend(parse_condition(c).map_err(CliError::Usage)?);
            }
            let spec = crate::sampler::SamplingSpec {
                n_rows: rows,
                temperature,
                greedy,
                max_new_tokens,
                condition: cond,
                seed,
                max_attempts,
                range_check,
            };
            cmd_sample(&checkpoint, &spec, out.as_deref())
        }
        Command::Evaluate { real, synth, test, target, task, kinds, seed, out } => {
            let kind_overrides = match kinds {
                Some(k) => parse_kinds("--kinds", &k)?.into_iter().collect(),
                None => Default::default(),
            };
            let opts = CsvOptions { target, task, kind_overrides, ..CsvOptions::default() };
            cmd_evaluate(&real, &synth, test.as_deref(), &opts, seed, out.as_deref())
        }
        Command::Benchmark(a) => cmd_benchmark(&a),
        Command::Chain { args, compare_random } => cmd_chain(&args, compare_random),
        Command::Inspect { checkpoint, args, limit } => cmd_inspect(checkpoint.as_deref(), &args, limit),
        Command::Generate { dataset, rows, seed, out } => {
            let t = dataset.generate(rows, seed).map_err(|e| CliError::Usage(e.to_string()))?;
            t.save_csv(&out, b',').map_err(|e| CliError::Stage { stage: "generate", message: e.to_string() })?;
            Ok(format!("wrote {} rows to {}\n", t.len(), out.display()))
        }
    }
}

fn load_config(a: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(a.config.as_deref(), &a.overrides)?;
    if let Some(o) = &a.out {
        cfg.output = Some(o.clone());
    }
    Ok(cfg)
}

fn table_err(e: TableError) -> CliError {
    match e {
        TableError::Io { .. } => CliError::Usage(e.to_string()),
        e => CliError::Usage(format!("data: {e}")),
    }
}

/// Reads a CSV path relative to the config file's directory when not absolute.
pub fn load_source(source: &DataSource, data: &DataConfig, base: Option<&Path>) -> Result<DataTable> {
    match source {
        DataSource::Csv(p) => {
            let path = match base {
                Some(b) if p.is_relative() => b.join(p),
                _ => p.clone(),
            };
            load_csv(&path, &data.csv_options()).map_err(table_err)
        }
        DataSource::Generated { shape, rows, seed } => shape.generate(*rows, *seed).map_err(table_err),
    }
}

fn config_base(a: &ConfigArgs) -> Option<PathBuf> {
    a.config.as_ref().and_then(|c| c.parent().map(Path::to_path_buf))
}

fn primary_table(cfg: &RunConfig, a: &ConfigArgs) -> Result<(String, DataTable)> {
    let source =
        cfg.data.source.as_ref().ok_or_else(|| CliError::Usage("no data: set data.path or data.dataset".into()))?;
    Ok((source.name(), load_source(source, &cfg.data, config_base(a).as_deref())?))
}

fn out_dir(cfg: &RunConfig, default: &str) -> Result<PathBuf> {
    let dir = cfg.output.clone().unwrap_or_else(|| PathBuf::from("runs").join(default));
    fs::create_dir_all(&dir).map_err(io_err("output", &dir))?;
    Ok(dir)
}

/// Files written into a run directory, recorded in `manifest.txt`.
struct Manifest {
    dir: PathBuf,
    command: &'static str,
    files: Vec<String>,
}

impl Manifest {
    fn new(dir: &Path, command: &'static str) -> Self {
        Manifest { dir: dir.to_owned(), command, files: Vec::new() }
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(io_err("output", &path))?;
        self.files.push(name.to_owned());
        Ok(())
    }

    fn record(&mut self, name: &str) {
        self.files.push(name.to_owned());
    }

    fn finish(mut self, extra: &[(&str, String)]) -> Result<PathBuf> {
        let mut text = format!("command: {}\nversion: {}\n", self.command, env!("CARGO_PKG_VERSION"));
        for (k, v) in extra {
            let _ = writeln!(text, "{k}: {v}");
        }
        text.push_str("files:\n");
        self.files.push("manifest.txt".into());
        for f in &self.files {
            let _ = writeln!(text, "  {f}");
        }
        let path = self.dir.join("manifest.txt");
        fs::write(&path, text).map_err(io_err("output", &path))?;
        Ok(self.dir)
    }
}

fn train_summary(report: &TrainReport) -> String {
    format!(
        "epochs: {}\ninitial_loss: {:.6}\nfinal_loss: {:.6}\nseconds: {:.3}\n",
        report.epochs.len(),
        report.initial_loss,
        report.final_loss,
        report.total_seconds()
    )
}

fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    ck.save(path).map_err(|e| CliError::Stage { stage: "checkpoint", message: e.to_string() })
}

fn cmd_train(a: &ConfigArgs) -> Result<String> {
    let cfg = load_config(a)?;
    let (name, table) = primary_table(&cfg, a)?;
    let dir = out_dir(&cfg, &format!("train-{name}"))?;
    let mut manifest = Manifest::new(&dir, "train");
    manifest.write("config.ini", &cfg.to_text())?;
    let train_table = match cfg.data.test_fraction {
        Some(f) => {
            let (train, test) = split_stratified(&table, f, cfg.run.train.seed).map_err(table_err)?;
            for (file, t) in [("train.csv", &train), ("test.csv", &test)] {
                t.save_csv(&dir.join(file), b',')
                    .map_err(|e| CliError::Stage { stage: "output", message: e.to_string() })?;
                manifest.record(file);
            }
            train
        }
        None => table,
    };
    let (ck, report) = train_new(&train_table, &name, &cfg.run).map_err(CliError::stage("train"))?;
    save_checkpoint(&ck, &dir.join("model.ckpt"))?;
    manifest.record("model.ckpt");
    manifest.write("train_log.csv", &report.to_csv())?;
    manifest.write("registry.tsv", &ck.registry.to_tsv())?;
    if let (Some(layout), Some(schema)) = (&ck.layout, &ck.schema) {
        manifest.write("layout.txt", &layout.report(schema))?;
    }
    let summary = format!("dataset: {name}\nrows: {}\n{}", train_table.len(), train_summary(&report));
    manifest.write("report.txt", &summary)?;
    let dir = manifest.finish(&[("dataset", name), ("seed", cfg.run.train.seed.to_string())])?;
    Ok(format!("{summary}run_dir: {}\n", dir.display()))
}

fn cmd_sample(checkpoint: &Path, spec: &crate::sampler::SamplingSpec, out: Option<&Path>) -> Result<String> {
    if !checkpoint.exists() {
        return Err(CliError::Usage(format!("checkpoint {} does not exist", checkpoint.display())));
    }
    let ck = Checkpoint::load(checkpoint).map_err(|e| CliError::Usage(format!("checkpoint: {e}")))?;
    let (rows, report) = ck.synthesize(spec).map_err(|e| match e {
        StoreError::Sample(crate::sampler::SampleError::Spec(m)) => CliError::Usage(format!("sample: {m}")),
        StoreError::Invalid(m) => CliError::Usage(format!("sample: {m}")),
        e => CliError::Stage { stage: "sample", message: e.to_string() },
    })?;
    let csv = rows.to_csv_string(b',');
    match out {
        Some(path) => {
            fs::write(path, &csv).map_err(io_err("output", path))?;
            let rp = path.with_extension("report.txt");
            fs::write(&rp, report.to_text()).map_err(io_err("output", &rp))?;
            Ok(report.to_text())
        }
        None => {
            eprint!("{}", report.to_text());
            Ok(csv)
        }
    }
}

fn read_eval_table(path: &Path, opts: &CsvOptions) -> Result<DataTable> {
    load_csv(path, opts).map_err(table_err)
}

fn cmd_evaluate(
    real: &Path,
    synth: &Path,
    test: Option<&Path>,
    opts: &CsvOptions,
    seed: u64,
    out: Option<&Path>,
) -> Result<String> {
    let real_t = read_eval_table(real, opts)?;
    // The synthetic and test tables must use the real table's schema, not
    // whatever inference would make of them.
    let reread = |p: &Path| -> Result<DataTable> {
        let t = read_eval_table(p, &CsvOptions::default())?;
        let names: Vec<&str> = t.schema().names().collect();
        let real_names: Vec<&str> = real_t.schema().names().collect();
        if names != real_names {
            return Err(CliError::Usage(format!("{}: columns {names:?} differ from {real_names:?}", p.display())));
        }
        DataTable::from_text_rows(real_t.schema().clone(), t.text_rows()).map_err(table_err)
    };
    let synth_t = reread(synth)?;
    let test_t = test.map(reread).transpose()?;
    let label = |p: &Path| p.display().to_string();
    let report = EvalReport::compute(
        (&label(real), &label(synth), test.map(label).as_deref()),
        &real_t,
        &synth_t,
        test_t.as_ref(),
        seed,
    )
    .map_err(|e| match e {
        MetricError::SchemaMismatch(_) | MetricError::Task(_) | MetricError::TooFew { .. } => {
            CliError::Usage(format!("evaluate: {e}"))
        }
        e => CliError::Stage { stage: "evaluate", message: e.to_string() },
    })?;
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(io_err("output", dir))?;
        let mut m = Manifest::new(dir, "evaluate");
        m.write("eval.csv", &report.to_csv())?;
        m.write("eval.txt", &report.to_text())?;
        m.finish(&[("seed", seed.to_string())])?;
    }
    Ok(report.to_text())
}

fn cmd_benchmark(a: &ConfigArgs) -> Result<String> {
    let cfg = load_config(a)?;
    let (name, table) = primary_table(&cfg, a)?;
    let dir = out_dir(&cfg, &format!("benchmark-{name}"))?;
    let mut m = Manifest::new(&dir, "benchmark");
    m.write("config.ini", &cfg.to_text())?;
    let settings = BenchSettings {
        lm: cfg.run.lm.clone(),
        train: cfg.run.train.clone(),
        warmup_epochs: cfg.bench.warmup,
        measured_epochs: cfg.bench.measured,
        lengths_only: cfg.bench.lengths_only,
    };
    let report: BenchReport =
        run_benchmark(&name, &table, &cfg.bench.configs, &settings).map_err(CliError::stage("benchmark"))?;
    m.write("bench.csv", &report.to_csv())?;
    m.write("bench.txt", &report.to_text())?;
    m.finish(&[("dataset", name)])?;
    Ok(report.to_text())
}

fn cmd_chain(a: &ConfigArgs, compare_random: bool) -> Result<String> {
    let cfg = load_config(a)?;
    if cfg.chain.tasks.is_empty() {
        return Err(CliError::Usage("chain needs at least one [chain] task entry".into()));
    }
    let base = config_base(a);
    let tables = cfg
        .chain
        .tasks
        .iter()
        .map(|t| load_source(&t.source, &cfg.data, base.as_deref()))
        .collect::<Result<Vec<_>>>()?;
    let tasks: Vec<ChainTask<'_>> = cfg
        .chain
        .tasks
        .iter()
        .zip(&tables)
        .map(|(t, table)| ChainTask { name: t.name.clone(), table, epochs: t.epochs })
        .collect();
    let start = match &cfg.chain.start {
        None => ChainStart::Random,
        Some(p) => {
            let path = match &base {
                Some(b) if p.is_relative() => b.join(p),
                _ => p.clone(),
            };
            let ck = Checkpoint::load(&path).map_err(|e| CliError::Usage(format!("chain.start: {e}")))?;
            ChainStart::Checkpoint { checkpoint: Box::new(ck), reference: path.display().to_string() }
        }
    };
    let dir = out_dir(&cfg, "chain")?;
    let mut m = Manifest::new(&dir, "chain");
    m.write("config.ini", &cfg.to_text())?;
    let ck_dir = dir.join("checkpoints");
    fs::create_dir_all(&ck_dir).map_err(io_err("output", &ck_dir))?;
    let results =
        chain_fine_tune(start, &tasks, cfg.chain.policy, &cfg.run, Some(&ck_dir)).map_err(CliError::stage("chain"))?;
    let mut csv = String::from("task,epochs,warm_start,initial_loss,first_epoch_loss,final_loss");
    if compare_random {
        csv.push_str(",random_first_epoch_loss,random_final_loss");
    }
    csv.push('\n');
    for (k, (task, (_, report))) in tasks.iter().zip(&results).enumerate() {
        m.record(&format!("checkpoints/{k:02}-{}.ckpt", task.name));
        let first = report.epochs.first().map_or(f64::NAN, |e| e.mean_loss);
        let _ = write!(
            csv,
            "{},{},{},{:.6},{:.6},{:.6}",
            task.name,
            task.epochs,
            report.warm_start.as_deref().unwrap_or("random"),
            report.initial_loss,
            first,
            report.final_loss
        );
        if compare_random {
            let spec =
                RunSpec { train: TrainSettings { epochs: task.epochs, ..cfg.run.train.clone() }, ..cfg.run.clone() };
            let (_, r) = train_new(task.table, &task.name, &spec).map_err(CliError::stage("chain"))?;
            let _ = write!(csv, ",{:.6},{:.6}", r.epochs.first().map_or(f64::NAN, |e| e.mean_loss), r.final_loss);
        }
        csv.push('\n');
    }
    m.write("chain_losses.csv", &csv)?;
    m.finish(&[("tasks", tasks.len().to_string()), ("policy", cfg.chain.policy.as_str().to_owned())])?;
    Ok(csv)
}

fn render_ids(registry: &TokenRegistry, ids: &[u32]) -> String {
    ids.iter().map(|&i| registry.token(i).unwrap_or("?").escape_default().to_string()).collect::<Vec<_>>().join("|")
}

fn cmd_inspect(checkpoint: Option<&Path>, a: &ConfigArgs, limit: usize) -> Result<String> {
    let mut out = String::new();
    if let Some(path) = checkpoint {
        let ck = Checkpoint::load(path).map_err(|e| CliError::Usage(format!("checkpoint: {e}")))?;
        let c = &ck.model.config;
        let _ = writeln!(
            out,
            "format: {}\npadding: {}\npermute: {}\ncompression: {}\nvocab: {}\ncontext: {}\nlayers: {}\nheads: {}\nd_model: {}\nd_ff: {}\nparams: {}\ninit: {}",
            ck.settings.format,
            ck.settings.strategy,
            ck.settings.permute,
            ck.registry.compression(),
            c.vocab_size,
            c.context_length,
            c.n_layers,
            c.n_heads,
            c.d_model,
            c.d_ff,
            ck.model.num_params(),
            c.init
        );
        for p in &ck.provenance {
            let _ = writeln!(out, "provenance: {} ({} epochs)", p.dataset, p.epochs);
        }
        if let (Some(layout), Some(schema)) = (&ck.layout, &ck.schema) {
            out.push_str("\nlayout:\n");
            out.push_str(&layout.report(schema));
        }
        out.push_str("\nregistry:\n");
        out.push_str(&ck.registry.to_tsv());
        return Ok(out);
    }
    if a.config.is_none() && a.overrides.is_empty() {
        return Err(CliError::Usage("inspect needs --checkpoint or a data config".into()));
    }
    let cfg = load_config(a)?;
    let (_, table) = primary_table(&cfg, a)?;
    let registry =
        TokenRegistry::build(&[&table], cfg.run.compression, None).map_err(|e| CliError::Usage(e.to_string()))?;
    let layout = match cfg.run.codec.strategy {
        PaddingStrategy::Middle => {
            Some(compute_padding_layout(&table, &registry).map_err(|e| CliError::Usage(e.to_string()))?)
        }
        _ => None,
    };
    let enc = RowEncoder::new(&registry, table.schema(), cfg.run.codec, layout.as_ref())
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let _ = writeln!(out, "rows: {}\nvocab: {}", table.len(), registry.len());
    if let Some(l) = &layout {
        out.push_str(&l.report(table.schema()));
    }
    let order = identity_order(table.schema().len());
    for row in table.rows().iter().take(limit) {
        let ids = enc.frame(row, &order).map_err(|e| CliError::Usage(e.to_string()))?;
        let _ = writeln!(out, "{:>4}  {}", ids.len(), render_ids(&registry, &ids));
    }
    Ok(out)
}
