//! Command-line front end.
//!
//! Every subcommand writes its report to the given writer and returns a
//! process exit code: 0 ok, 1 check failure, 2 usage/config/I-O error,
//! 3 non-finite loss during training.
//!
//! `train` reads a `key = value` config file. Flags given on the command
//! line override the file, and the file overrides built-in defaults.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::gradcheck::{op_suite, tolerance};
use crate::autodiff::Precision;
use crate::dataset::{gather, generate, load, Dataset, FactorSpec};
use crate::eval::{
    chunk_size_ablation, evaluate_probes, evaluate_retrieval, probes_tsv, shortcut_report, transfer_grid, write_ppm,
    DEFAULT_PAIRS,
};
use crate::mixing::{cycle_gradient_check, Toggles};
use crate::models::{load_checkpoint, ChunkLayout};
use crate::trainer::{ablation_suite, train, AblationRow, TrainConfig, TrainError, TrainOptions, CHECKPOINT_FILE, LOG_FILE};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "chunkmix", version, about = "Chunked feature mixing autoencoders on a synthetic sprite set")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the synthetic dataset to disk.
    GenData(GenDataArgs),
    /// Train one model from a config file.
    Train(TrainArgs),
    /// Retrieval, probe and shortcut reports for a checkpoint.
    Eval(EvalArgs),
    /// Attribute-transfer grid as a PPM image.
    Grid(GridArgs),
    /// Train and score every ablation row over several seeds.
    Ablate(AblateArgs),
    /// Average best-chunk mAP of the full model per chunk size.
    ChunkSizes(ChunkSizesArgs),
    /// Finite-difference check of every op and of the full mixing cycle.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, default_value = "data")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Jittered copies of every factor combination.
    #[arg(long, default_value_t = 25)]
    pub copies: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// [default: 1]
    #[arg(long)]
    pub lambda_m: Option<f64>,
    /// [default: 1]
    #[arg(long)]
    pub lambda_g: Option<f64>,
    /// [default: 1]
    #[arg(long)]
    pub lambda_c: Option<f64>,
    /// Comma list of mix_cycle, plain_recon, gan, cls [default: mix_cycle,gan,cls]
    #[arg(long)]
    pub toggles: Option<String>,
    /// [default: 4]
    #[arg(long)]
    pub chunks: Option<usize>,
    /// [default: 8]
    #[arg(long)]
    pub chunk_dim: Option<usize>,
    /// [default: 40]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// [default: 32]
    #[arg(long)]
    pub batch: Option<usize>,
    /// [default: 0.0002]
    #[arg(long)]
    pub lr: Option<f64>,
    /// [default: 0.5]
    #[arg(long)]
    pub beta1: Option<f64>,
    /// [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// f64 or f32 [default: f64]
    #[arg(long)]
    pub precision: Option<String>,
    /// Dataset directory [default: data]
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory for checkpoint and log [default: run]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Record elapsed milliseconds in the log instead of 0.
    #[arg(long)]
    pub wall_time: bool,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "data")]
    pub data: PathBuf,
    /// Only the linear probe accuracies.
    #[arg(long)]
    pub probe: bool,
    /// Only the per-chunk retrieval table.
    #[arg(long)]
    pub retrieval: bool,
    /// Only the shortcut diagnostic.
    #[arg(long)]
    pub shortcut: bool,
    /// Image pairs drawn for the shortcut diagnostic.
    #[arg(long, default_value_t = DEFAULT_PAIRS)]
    pub pairs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory receiving one TSV per report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "data")]
    pub data: PathBuf,
    /// Chunk taken from the column sources.
    #[arg(long, default_value_t = 0)]
    pub chunk: usize,
    #[arg(long, default_value_t = 8)]
    pub rows: usize,
    #[arg(long, default_value_t = 8)]
    pub cols: usize,
    /// Seed for picking source images from the test split.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Explicit test-split indices for the row sources (overrides --rows).
    #[arg(long, value_delimiter = ',')]
    pub row_indices: Option<Vec<usize>>,
    /// Explicit test-split indices for the column sources (overrides --cols).
    #[arg(long, value_delimiter = ',')]
    pub col_indices: Option<Vec<usize>>,
    #[arg(long, default_value = "grid.ppm")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long, default_value = "data")]
    pub data: PathBuf,
    #[arg(long, default_value = "1,2,3", value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Subset of method rows, e.g. "AE,MIX+C+G" [default: all eight]
    #[arg(long, value_delimiter = ',')]
    pub rows: Option<Vec<String>>,
    #[arg(long, default_value_t = 40)]
    pub epochs: usize,
    /// Directory receiving the TSV reports.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ChunkSizesArgs {
    #[arg(long, default_value = "data")]
    pub data: PathBuf,
    #[arg(long, default_value = "2,4,8,16,32", value_delimiter = ',')]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 4)]
    pub chunks: usize,
    #[arg(long, default_value_t = 40)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// f64 or f32
    #[arg(long, default_value = "f64")]
    pub precision: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Failure carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        let code = match e {
            TrainError::NonFinite { .. } => EXIT_NUMERIC,
            _ => EXIT_USAGE,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

macro_rules! usage_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::usage(e.to_string())
            }
        }
    )*};
}

usage_from!(
    crate::dataset::DatasetError,
    crate::models::ModelError,
    crate::eval::EvalError,
    crate::mixing::MixError,
    crate::autodiff::AutodiffError
);

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::usage(format!("{}: {e}", path.display()))
}

/// Training settings plus the data and output locations.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: PathBuf,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            data: PathBuf::from("data"),
            out: PathBuf::from("run"),
        }
    }
}

pub const CONFIG_KEYS: [&str; 14] = [
    "lambda_m",
    "lambda_g",
    "lambda_c",
    "toggles",
    "chunks",
    "chunk_dim",
    "epochs",
    "batch",
    "lr",
    "beta1",
    "seed",
    "precision",
    "data",
    "out",
];

pub fn parse_toggles(s: &str) -> Result<Toggles, String> {
    let mut t = Toggles {
        mix_cycle: false,
        plain_recon: false,
        gan: false,
        cls: false,
    };
    for name in s.split(',').map(str::trim).filter(|n| !n.is_empty()) {
        match name {
            "mix_cycle" => t.mix_cycle = true,
            "plain_recon" => t.plain_recon = true,
            "gan" => t.gan = true,
            "cls" => t.cls = true,
            other => return Err(format!("unknown toggle {other:?}")),
        }
    }
    Ok(t)
}

pub fn parse_precision(s: &str) -> Result<Precision, String> {
    match s.trim() {
        "f64" | "64" => Ok(Precision::F64),
        "f32" | "32" => Ok(Precision::F32),
        other => Err(format!("unknown precision {other:?}, expected f64 or f32")),
    }
}

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("{key}: cannot parse {v:?}"))
        }
        let t = &mut self.train;
        match key {
            "lambda_m" => t.weights.lambda_m = num(key, value)?,
            "lambda_g" => t.weights.lambda_g = num(key, value)?,
            "lambda_c" => t.weights.lambda_c = num(key, value)?,
            "toggles" => t.toggles = parse_toggles(value)?,
            "chunks" => t.layout.chunks = num(key, value)?,
            "chunk_dim" => t.layout.dim = num(key, value)?,
            "epochs" => t.epochs = num(key, value)?,
            "batch" => t.batch = num(key, value)?,
            "lr" => t.adam.lr = num(key, value)?,
            "beta1" => t.adam.beta1 = num(key, value)?,
            "seed" => t.seed = num(key, value)?,
            "precision" => t.precision = parse_precision(value)?,
            "data" => self.data = PathBuf::from(value),
            "out" => self.out = PathBuf::from(value),
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Parses config text. Blank lines and lines starting with `#` are
    /// skipped; later lines win.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| CliError::usage(format!("config line {}: {msg}", i + 1));
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, found {line:?}")))?;
            cfg.set(k.trim(), v.trim()).map_err(err)?;
        }
        Ok(cfg)
    }
}

impl TrainArgs {
    /// Flag overrides as `key = value` pairs, in config key order.
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut v = Vec::new();
        let mut push = |k: &'static str, s: Option<String>| {
            if let Some(s) = s {
                v.push((k, s));
            }
        };
        push("lambda_m", self.lambda_m.map(|x| x.to_string()));
        push("lambda_g", self.lambda_g.map(|x| x.to_string()));
        push("lambda_c", self.lambda_c.map(|x| x.to_string()));
        push("toggles", self.toggles.clone());
        push("chunks", self.chunks.map(|x| x.to_string()));
        push("chunk_dim", self.chunk_dim.map(|x| x.to_string()));
        push("epochs", self.epochs.map(|x| x.to_string()));
        push("batch", self.batch.map(|x| x.to_string()));
        push("lr", self.lr.map(|x| x.to_string()));
        push("beta1", self.beta1.map(|x| x.to_string()));
        push("seed", self.seed.map(|x| x.to_string()));
        push("precision", self.precision.clone());
        push("data", self.data.as_ref().map(|p| p.display().to_string()));
        push("out", self.out.as_ref().map(|p| p.display().to_string()));
        v
    }
}

/// Resolves the effective config and the text echoed into the checkpoint:
/// the file verbatim, then one line per flag override.
pub fn resolve_train_config(args: &TrainArgs) -> Result<(RunConfig, String), CliError> {
    let mut echo = match &args.config {
        Some(path) => std::fs::read_to_string(path).map_err(|e| io_error(path, e))?,
        None => String::new(),
    };
    if !echo.is_empty() && !echo.ends_with('\n') {
        echo.push('\n');
    }
    let mut cfg = RunConfig::parse(&echo)?;
    for (k, v) in args.overrides() {
        cfg.set(k, &v).map_err(|m| CliError::usage(format!("--{}: {m}", k.replace('_', "-"))))?;
        let _ = writeln!(echo, "{k} = {v}");
    }
    if cfg.train.layout.chunks == 0 || cfg.train.layout.dim == 0 {
        return Err(CliError::usage("chunks and chunk_dim must be positive"));
    }
    cfg.train.validate()?;
    Ok((cfg, echo))
}

fn gen_data(a: &GenDataArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let data = generate(&FactorSpec::default(), a.seed, a.copies)?;
    data.write(&a.out)?;
    let m = &data.manifest;
    let _ = writeln!(
        out,
        "wrote {} images ({} train, {} test) to {}",
        m.train_count + m.test_count,
        m.train_count,
        m.test_count,
        a.out.display()
    );
    let _ = write!(out, "{}", m.to_text());
    Ok(())
}

fn train_cmd(a: &TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (cfg, echo) = resolve_train_config(a)?;
    let data = load(&cfg.data)?;
    let options = TrainOptions {
        out_dir: Some(cfg.out.clone()),
        config_echo: Some(echo),
        wall_time: a.wall_time,
        progress: !a.quiet,
    };
    let outcome = train(&cfg.train, data.train.images(), &options)?;
    if let Some(last) = outcome.log.last() {
        let _ = writeln!(out, "{}", crate::trainer::LOG_HEADER);
        let _ = writeln!(out, "{}", last.to_tsv());
    }
    let _ = writeln!(
        out,
        "checkpoint {}\nlog {}",
        cfg.out.join(CHECKPOINT_FILE).display(),
        cfg.out.join(LOG_FILE).display()
    );
    Ok(())
}

fn write_report(dir: Option<&Path>, name: &str, text: &str) -> Result<(), CliError> {
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| io_error(&path, e))?;
    }
    Ok(())
}

fn eval_cmd(a: &EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let params = load_checkpoint(&a.checkpoint)?.params;
    let data = load(&a.data)?;
    let all = !(a.probe || a.retrieval || a.shortcut);
    let dir = a.out.as_deref();
    if all || a.retrieval {
        let t = evaluate_retrieval(&params, &data)?;
        let text = t.to_tsv();
        let _ = write!(out, "{text}");
        let _ = writeln!(out, "average\t{:.4}", t.average());
        write_report(dir, "retrieval.tsv", &text)?;
    }
    if all || a.probe {
        let text = probes_tsv(&evaluate_probes(&params, &data)?);
        let _ = write!(out, "{text}");
        write_report(dir, "probes.tsv", &text)?;
    }
    if all || a.shortcut {
        let r = shortcut_report(&params, data.test.images(), a.pairs, a.seed)?;
        let text = r.to_tsv();
        let _ = write!(out, "{text}");
        let _ = writeln!(out, "dead_chunks\t{}", r.dead_count());
        write_report(dir, "shortcut.tsv", &text)?;
    }
    Ok(())
}

fn pick(data: &Dataset, explicit: &Option<Vec<usize>>, count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>, CliError> {
    let n = data.test.len();
    match explicit {
        Some(idx) => {
            if let Some(bad) = idx.iter().find(|&&i| i >= n) {
                return Err(CliError::usage(format!("index {bad} out of range 0..{n}")));
            }
            Ok(idx.clone())
        }
        None => {
            if count == 0 || count > n {
                return Err(CliError::usage(format!("need 1..={n} sources, got {count}")));
            }
            Ok(sample(rng, n, count).into_vec())
        }
    }
}

fn grid_cmd(a: &GridArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let params = load_checkpoint(&a.checkpoint)?.params;
    if a.chunk >= params.layout().chunks {
        return Err(CliError::usage(format!(
            "chunk {} out of range 0..{}",
            a.chunk,
            params.layout().chunks
        )));
    }
    let data = load(&a.data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let rows = pick(&data, &a.row_indices, a.rows, &mut rng)?;
    let cols = pick(&data, &a.col_indices, a.cols, &mut rng)?;
    let images = data.test.images();
    let grid = transfer_grid(&params, &gather(images, &rows), &gather(images, &cols), a.chunk)?;
    write_ppm(&a.out, &grid)?;
    let s = grid.shape();
    let _ = writeln!(out, "wrote {}x{} grid to {}", s[2], s[1], a.out.display());
    Ok(())
}

fn ablate_cmd(a: &AblateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let data = load(&a.data)?;
    let rows = match &a.rows {
        None => AblationRow::ALL.to_vec(),
        Some(names) => names
            .iter()
            .map(|n| AblationRow::from_name(n.trim()).ok_or_else(|| CliError::usage(format!("unknown method {n:?}"))))
            .collect::<Result<_, _>>()?,
    };
    let base = TrainConfig {
        epochs: a.epochs,
        ..TrainConfig::default()
    };
    let mut dead = String::from("method\tseed\tdead_chunks\n");
    let mut failure = None;
    let report = ablation_suite(&data, &rows, &a.seeds, &base, |r| {
        eprintln!("{}\tseed {}\tavg {:.4}", r.row.name(), r.seed, r.table.average());
        match shortcut_report(&r.params, data.test.images(), DEFAULT_PAIRS, r.seed) {
            Ok(s) => {
                let _ = writeln!(dead, "{}\t{}\t{}", r.row.name(), r.seed, s.dead_count());
            }
            Err(e) => failure = Some(e),
        }
    })?;
    if let Some(e) = failure {
        return Err(e.into());
    }
    let table = report.to_tsv();
    let _ = write!(out, "{table}");
    let dir = a.out.as_deref();
    write_report(dir, "ablation.tsv", &table)?;
    write_report(dir, "ablation_per_seed.tsv", &report.per_seed_tsv())?;
    write_report(dir, "dead_chunks.tsv", &dead)?;
    Ok(())
}

fn chunk_sizes_cmd(a: &ChunkSizesArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let data = load(&a.data)?;
    let base = TrainConfig {
        epochs: a.epochs,
        seed: a.seed,
        layout: ChunkLayout::new(a.chunks, 1)?,
        ..TrainConfig::default()
    };
    let curve = chunk_size_ablation(&data, &a.sizes, &base, |d, m| eprintln!("d={d}\tavg {m:.4}"))?;
    let text = curve.to_tsv();
    let _ = write!(out, "{text}");
    let _ = writeln!(out, "plateau_gap\t{:.4}", curve.plateau_gap());
    write_report(a.out.as_deref(), "chunk_sizes.tsv", &text)?;
    Ok(())
}

fn gradcheck_cmd(a: &GradcheckArgs, out: &mut dyn Write) -> Result<bool, CliError> {
    let precision = parse_precision(&a.precision).map_err(CliError::usage)?;
    let tol = tolerance(precision);
    let mut ok = true;
    let _ = writeln!(out, "op\tmax_rel_err\tresult");
    let mut line = |out: &mut dyn Write, name: &str, err: f64| {
        let pass = err < tol;
        ok &= pass;
        let _ = writeln!(out, "{name}\t{err:.3e}\t{}", if pass { "PASS" } else { "FAIL" });
    };
    for c in op_suite(a.seed, precision)? {
        line(out, c.name, c.max_rel_err);
    }
    if precision == Precision::F64 {
        line(out, "full_cycle", cycle_gradient_check(a.seed)?);
    }
    let _ = writeln!(out, "tolerance\t{tol:.0e}\t{}", if ok { "PASS" } else { "FAIL" });
    Ok(ok)
}

/// Runs the command line `args` (program name first) and returns the
/// process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            if code == EXIT_OK {
                let _ = write!(out, "{e}");
            } else {
                eprint!("{e}");
            }
            return code;
        }
    };
    let result = match &cli.command {
        Command::GenData(a) => gen_data(a, out),
        Command::Train(a) => train_cmd(a, out),
        Command::Eval(a) => eval_cmd(a, out),
        Command::Grid(a) => grid_cmd(a, out),
        Command::Ablate(a) => ablate_cmd(a, out),
        Command::ChunkSizes(a) => chunk_sizes_cmd(a, out),
        Command::Gradcheck(a) => match gradcheck_cmd(a, out) {
            Ok(true) => Ok(()),
            Ok(false) => Err(CliError {
                code: EXIT_CHECK,
                message: "gradient check failed".into(),
            }),
            Err(e) => Err(e),
        },
    };
    let _ = out.flush();
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
