//! Command-line front end.
//!
//! Configuration precedence is defaults, then `--config <file>` (a JSON
//! training configuration, missing fields take defaults), then flags. The
//! effective configuration is written next to every run's outputs.
//!
//! Exit codes: 0 success, 2 usage, schema or I/O error, 3 numerical failure,
//! 4 sweep where every cell of some method failed.

pub mod output;
pub mod sweep;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::cpt::{train, Method, PruneThreshold, TrainConfig};
use crate::data::{gen_synthetic, load_dataset, save_dataset, split, GroupedDataset, SynthConfig};
use crate::metrics::{evaluate, hypervolume2d, normalize_minmax, RefPoint};
use crate::objectives::ReferenceVector;
use crate::paramspace::ParamVector;
use crate::{Error, Result};

use output::{read_json, write_json, RunOutputs};
use sweep::{collect_manifests, default_references, run_sweep, write_reports, SweepSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_PARTIAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "cpt", version, about = "Controllable Pareto trade-offs between accuracy and group fairness")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic grouped dataset.
    GenData(GenDataArgs),
    /// Train one configuration.
    Train(TrainArgs),
    /// Train every method × reference × seed cell and report.
    Sweep(SweepArgs),
    /// Evaluate saved parameters on a dataset.
    Eval(EvalArgs),
    /// Hypervolume of a point set or of a sweep's front table.
    Hypervolume(HypervolumeArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, default_value = "conflict")]
    pub preset: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(short = 'o', long = "output")]
    pub output: PathBuf,
    /// Counts per (attribute, label) cell, attribute-major.
    #[arg(long, value_delimiter = ',')]
    pub n_per_group: Option<Vec<usize>>,
    #[arg(long)]
    pub num_labels: Option<usize>,
    #[arg(long)]
    pub input_dim: Option<usize>,
    #[arg(long)]
    pub mean_separation: Option<f64>,
    #[arg(long)]
    pub group_shift: Option<f64>,
    #[arg(long)]
    pub label_noise: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Held-out file; when absent `--data` is split.
    #[arg(long)]
    pub test_data: Option<PathBuf>,
    #[arg(long, default_value_t = 0.25)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
}

/// Flags shared by `train` and `sweep`.
#[derive(Debug, Args, Default)]
pub struct CommonTrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub beta_fair: Option<f64>,
    #[arg(long)]
    pub beta_acc: Option<f64>,
    #[arg(long)]
    pub beta_kl: Option<f64>,
    #[arg(long)]
    pub psi: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_decay: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long, value_parser = parse_prune_mode)]
    pub prune_threshold_mode: Option<PruneThreshold>,
    #[arg(long)]
    pub scalar_weight: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub common: CommonTrainArgs,
    #[arg(long = "ref", value_parser = parse_reference)]
    pub reference: Option<ReferenceVector>,
    #[arg(long, value_parser = parse_method)]
    pub method: Option<Method>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Required unless `--report-only`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub test_data: Option<PathBuf>,
    #[arg(long, default_value_t = 0.25)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    #[command(flatten)]
    pub common: CommonTrainArgs,
    /// Semicolon-separated list such as `2,1;1,1`; defaults to the six standard references.
    #[arg(long, value_parser = parse_reference_list)]
    pub refs: Option<ReferenceList>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0u64, 1, 2, 3])]
    pub seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',', value_parser = parse_method, default_values = ["cpt", "scalarization"])]
    pub methods: Vec<Method>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Rebuild the tables from the cells already under `--out-dir`.
    #[arg(long)]
    pub report_only: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitChoice {
    All,
    Train,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitChoice::All)]
    pub split: SplitChoice,
    #[arg(long, default_value_t = 0.25)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HypervolumeArgs {
    /// CSV with header `x,y`, or a sweep `front.csv`.
    pub input: PathBuf,
    #[arg(long = "ref", value_parser = parse_pair, default_value = "2,1")]
    pub reference: (f64, f64),
    /// Min-max normalize both axes first (always on for front tables).
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceList(pub Vec<ReferenceVector>);

fn parse_pair(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected `a,b`, got `{s}`"))?;
    let a: f64 = a.trim().parse().map_err(|_| format!("invalid number `{a}`"))?;
    let b: f64 = b.trim().parse().map_err(|_| format!("invalid number `{b}`"))?;
    Ok((a, b))
}

fn parse_reference(s: &str) -> std::result::Result<ReferenceVector, String> {
    let (a, b) = parse_pair(s)?;
    ReferenceVector::new(a, b).map_err(|e| e.to_string())
}

fn parse_reference_list(s: &str) -> std::result::Result<ReferenceList, String> {
    s.split(';')
        .filter(|p| !p.trim().is_empty())
        .map(parse_reference)
        .collect::<std::result::Result<Vec<_>, _>>()
        .map(ReferenceList)
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_prune_mode(s: &str) -> std::result::Result<PruneThreshold, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl CommonTrainArgs {
    /// Defaults, then the config file, then these flags.
    pub fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => read_json::<TrainConfig>(path)?,
            None => TrainConfig::default(),
        };
        macro_rules! set {
            ($flag:expr => $field:expr) => {
                if let Some(v) = $flag {
                    $field = v;
                }
            };
        }
        set!(self.gamma => cfg.gamma);
        set!(self.beta_fair => cfg.betas.fair);
        set!(self.beta_acc => cfg.betas.acc);
        set!(self.beta_kl => cfg.betas.kl);
        set!(self.psi => cfg.psi);
        set!(self.lr => cfg.lr);
        set!(self.lr_decay => cfg.lr_decay);
        set!(self.momentum => cfg.momentum);
        set!(self.epochs => cfg.epochs);
        set!(self.batch_size => cfg.batch_size);
        set!(self.hidden_dim => cfg.hidden_dim);
        set!(self.prune_threshold_mode => cfg.prune_threshold);
        if self.scalar_weight.is_some() {
            cfg.scalar_weight = self.scalar_weight;
        }
        Ok(cfg)
    }
}

impl TrainArgs {
    pub fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = self.common.resolve()?;
        if let Some(r) = self.reference {
            cfg.reference = r;
        }
        if let Some(m) = self.method {
            cfg.method = m;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Training and held-out sets described by the data flags.
pub fn load_splits(args: &DataArgs) -> Result<(GroupedDataset, GroupedDataset)> {
    let full = load_dataset(&args.data, None)?;
    match &args.test_data {
        Some(path) => {
            let test = load_dataset(path, Some(full.dim()))?;
            Ok((full, test))
        }
        None => split(&full, args.test_fraction, args.split_seed),
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Numerical { .. } => EXIT_NUMERICAL,
        _ => EXIT_USAGE,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::GenData(a) => cmd_gen_data(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Hypervolume(a) => cmd_hypervolume(&a),
    }
}

pub fn cmd_gen_data(args: &GenDataArgs) -> Result<i32> {
    let mut cfg = SynthConfig::preset(&args.preset, args.seed)?;
    if let Some(n) = &args.n_per_group {
        cfg.n_per_group = n.clone();
    }
    if let Some(v) = args.num_labels {
        cfg.num_labels = v;
    }
    if let Some(v) = args.input_dim {
        cfg.input_dim = v;
    }
    if let Some(v) = args.mean_separation {
        cfg.mean_separation = v;
    }
    if let Some(v) = args.group_shift {
        cfg.group_shift = v;
    }
    if let Some(v) = args.label_noise {
        cfg.label_noise = v;
    }
    let ds = gen_synthetic(&cfg)?;
    let provenance = serde_json::json!({
        "generator": "synthetic",
        "preset": args.preset,
        "config": cfg,
    });
    save_dataset(&ds, &args.output, provenance)?;
    println!("wrote {} rows to {}", ds.len(), args.output.display());
    println!("attribute,label,count");
    for ((a, y), n) in ds.group_counts() {
        println!("{a},{y},{n}");
    }
    Ok(EXIT_OK)
}

pub fn cmd_train(args: &TrainArgs) -> Result<i32> {
    let cfg = args.resolve()?;
    let (train_set, test_set) = load_splits(&args.data)?;
    let start = Instant::now();
    let (params, trace) = train(&train_set, &cfg)?;
    let train_metrics = evaluate(&params, &train_set)?;
    let test_metrics = evaluate(&params, &test_set)?;
    let manifest = RunOutputs {
        cfg: &cfg,
        params: &params,
        trace: &trace,
        dataset: &args.data.data,
        elapsed: start.elapsed(),
        train_metrics,
        test_metrics,
    }
    .write(&args.out_dir)?;
    println!(
        "{} {} seed {}: {} steps, test accuracy {:.4}, eodd {:.4}, l_fair {:.6}, l_acc {:.6}",
        cfg.method,
        cfg.reference,
        cfg.seed,
        manifest.steps,
        test_metrics.accuracy,
        test_metrics.eodd,
        test_metrics.l_fair,
        test_metrics.l_acc
    );
    println!("outputs in {}", args.out_dir.display());
    Ok(EXIT_OK)
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<i32> {
    let root = &args.out_dir;
    if !args.report_only {
        let data = DataArgs {
            data: args
                .data
                .clone()
                .ok_or_else(|| Error::Config("--data is required unless --report-only".into()))?,
            test_data: args.test_data.clone(),
            test_fraction: args.test_fraction,
            split_seed: args.split_seed,
        };
        let spec = SweepSpec {
            references: args.refs.clone().map_or_else(default_references, |r| r.0),
            seeds: args.seeds.clone(),
            methods: args.methods.clone(),
            base: args.common.resolve()?,
        };
        spec.validate()?;
        write_json(&root.join("sweep.json"), &spec)?;
        let (train_set, test_set) = load_splits(&data)?;
        let jobs = args
            .jobs
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        let results = run_sweep(&spec, &train_set, &test_set, &data.data, root, jobs)?;
        let mut failed_methods = Vec::new();
        for &m in &spec.methods {
            let cells: Vec<_> = results.iter().filter(|(c, _)| c.method == m).collect();
            let failures = cells.iter().filter(|(_, r)| r.is_err()).count();
            if failures > 0 {
                log::warn!("{m}: {failures} of {} cells failed", cells.len());
            }
            if failures == cells.len() {
                failed_methods.push(m);
            }
        }
        let points: Vec<_> = results
            .iter()
            .filter_map(|(_, r)| r.as_ref().ok().map(|m| m.front_point.clone()))
            .collect();
        write_reports(root, &points)?;
        print_tables(root)?;
        if !failed_methods.is_empty() {
            let names: Vec<_> = failed_methods.iter().map(|m| m.name()).collect();
            eprintln!("error: every cell failed for: {}", names.join(", "));
            return Ok(EXIT_PARTIAL);
        }
        return Ok(EXIT_OK);
    }
    let points: Vec<_> = collect_manifests(root)?.into_iter().map(|m| m.front_point).collect();
    if points.is_empty() {
        return Err(Error::Schema(format!("no finished cells under {}", root.display())));
    }
    write_reports(root, &points)?;
    print_tables(root)?;
    Ok(EXIT_OK)
}

fn print_tables(root: &Path) -> Result<()> {
    for name in ["report.csv", "hypervolume.csv"] {
        let path = root.join(name);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        println!("{name}:\n{text}");
    }
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<i32> {
    let params: ParamVector = read_json(&args.params)?;
    let full = load_dataset(&args.data, Some(params.config().input_dim))?;
    let ds = match args.split {
        SplitChoice::All => full,
        SplitChoice::Train => split(&full, args.test_fraction, args.split_seed)?.0,
        SplitChoice::Test => split(&full, args.test_fraction, args.split_seed)?.1,
    };
    let m = evaluate(&params, &ds)?;
    println!("accuracy {}", m.accuracy);
    println!("eodd {}", m.eodd);
    println!("l_fair {}", m.l_fair);
    println!("l_acc {}", m.l_acc);
    if let Some(path) = &args.json {
        write_json(path, &m)?;
    }
    Ok(EXIT_OK)
}

pub fn cmd_hypervolume(args: &HypervolumeArgs) -> Result<i32> {
    let text = fs::read_to_string(&args.input).map_err(|e| Error::io(&args.input, e))?;
    let reference = RefPoint::new(args.reference.0, args.reference.1);
    if text.starts_with(sweep::FRONT_HEADER) {
        let points = sweep::parse_front_csv(&text)?;
        print!("{}", sweep::hypervolume_csv(&points, reference));
        return Ok(EXIT_OK);
    }
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("x,y") {
        return Err(Error::Schema("expected header `x,y` or a sweep front table".into()));
    }
    let mut points = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let p = parse_pair(line).map_err(|msg| Error::Parse { line: i + 2, msg })?;
        points.push(p);
    }
    if args.normalize {
        points = normalize_minmax(&points);
    }
    println!("{}", hypervolume2d(&points, reference));
    Ok(EXIT_OK)
}
