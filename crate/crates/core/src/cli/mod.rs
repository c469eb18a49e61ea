//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime failures.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::bench::{run_bench, CellBudget};
use crate::error::{Error, Result};
use crate::geometry::{build_mask, pairwise_distances, Mesh};
use crate::network::{build_cupnet, build_regnet, ArchConfig, ArchKind};
use crate::synthcup::{sample_dataset, Dataset};
use crate::training::{dataset_tables, stratified_split, train, Split, Standardizer};

mod config;

pub use config::{ArchitectureSection, BenchSection, CliConfig, TrainingSection};

#[derive(Debug, Parser)]
#[command(name = "cupnet", version, about = "Geometry-pruned networks for mesh regression")]
pub struct Cli {
    /// JSON configuration file; flags override its values [default: built-in defaults]
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Master seed for data generation, splitting, initialization and training [default: 0]
    #[arg(long, global = true, value_name = "S")]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cup dataset directory
    Gen(GenArgs),
    /// Inspect the pruning mask of a mesh
    Mask(MaskArgs),
    /// Parameter counts of both architectures and the parity width
    Parity(ParityArgs),
    /// Train one network and write a checkpoint
    Train(TrainArgs),
    /// Run the repeated-run benchmark grid
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Number of samples
    #[arg(long, value_name = "N", default_value_t = 2000)]
    pub n: usize,
    /// Radial grid count of the blank [default: 21]
    #[arg(long)]
    pub radial_count: Option<usize>,
    /// Angular grid count of the blank [default: 10]
    #[arg(long)]
    pub angular_count: Option<usize>,
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    /// Mesh CSV with header x,y,z
    #[arg(long, value_name = "FILE")]
    pub mesh: PathBuf,
    /// Pruning threshold [default: architecture.alpha = 5]
    #[arg(long, value_name = "A")]
    pub alpha: Option<f64>,
    /// Write kept (i, j) pairs to this CSV file
    #[arg(long, value_name = "FILE")]
    pub export: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ParityArgs {
    /// Mesh CSV with header x,y,z (alternatively give --m and --c-alpha)
    #[arg(long, value_name = "FILE", conflicts_with_all = ["m", "c_alpha"])]
    pub mesh: Option<PathBuf>,
    /// Pruning threshold [default: architecture.alpha = 5]
    #[arg(long, value_name = "A")]
    pub alpha: Option<f64>,
    /// Depth [default: architecture.h = 2]
    #[arg(long, value_name = "H")]
    pub h: Option<usize>,
    /// Input size [default: architecture.k = 9]
    #[arg(long, value_name = "K")]
    pub k: Option<usize>,
    /// Points per segment, used with --c-alpha instead of a mesh
    #[arg(long, value_name = "M", requires = "c_alpha")]
    pub m: Option<usize>,
    /// Mask count c(alpha), used with --m instead of a mesh
    #[arg(long, value_name = "C", requires = "m")]
    pub c_alpha: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct TrainingFlags {
    /// Training epochs [default: 200]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Adam learning rate [default: 0.001]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Mini-batch size [default: 32]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Dropout rate after inner layers [default: 0.2]
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Fraction of samples in the stratified test split [default: 0.1]
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// Record test R² every this many epochs, 0 = only at the end [default: 0]
    #[arg(long)]
    pub val_every: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory written by `gen`
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Architecture: cupnet or regnet [default: cupnet]
    #[arg(long)]
    pub arch: Option<ArchKind>,
    /// Depth [default: 2]
    #[arg(long)]
    pub h: Option<usize>,
    /// Pruning threshold [default: 5]
    #[arg(long)]
    pub alpha: Option<f64>,
    #[command(flatten)]
    pub training: TrainingFlags,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Dataset directory written by `gen`
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Comma-separated depths [default: 1,2,3,4,5,6,7]
    #[arg(long, value_delimiter = ',')]
    pub h_values: Option<Vec<usize>>,
    /// Comma-separated pruning thresholds [default: 1,2.5,5,10,25,50]
    #[arg(long, value_delimiter = ',')]
    pub alpha_values: Option<Vec<f64>>,
    /// Comma-separated architectures [default: cupnet,regnet]
    #[arg(long, value_delimiter = ',')]
    pub archs: Option<Vec<ArchKind>>,
    /// Repeated runs per cell [default: 10]
    #[arg(long)]
    pub runs: Option<usize>,
    /// Worker threads, 0 = number of processors [default: 0]
    #[arg(long)]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub training: TrainingFlags,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

impl clap::ValueEnum for ArchKind {
    fn value_variants<'a>() -> &'a [Self] {
        &[ArchKind::CupNet, ArchKind::RegNet]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(self.as_str()))
    }
}

fn effective_config(cli: &Cli) -> Result<CliConfig> {
    let mut cfg = match &cli.config {
        Some(path) => CliConfig::load(path)?,
        None => CliConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn apply_training_flags(cfg: &mut CliConfig, flags: &TrainingFlags) {
    let t = &mut cfg.training;
    if let Some(v) = flags.epochs {
        t.epochs = v;
    }
    if let Some(v) = flags.lr {
        t.learning_rate = v;
    }
    if let Some(v) = flags.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = flags.dropout {
        t.dropout_rate = v;
    }
    if let Some(v) = flags.test_fraction {
        t.test_fraction = v;
    }
    if let Some(v) = flags.val_every {
        t.val_every = v;
    }
}

fn cmd_gen(mut cfg: CliConfig, args: &GenArgs) -> Result<()> {
    if let Some(v) = args.radial_count {
        cfg.generator.radial_count = v;
    }
    if let Some(v) = args.angular_count {
        cfg.generator.angular_count = v;
    }
    let ds = sample_dataset(&cfg.generator, args.n, cfg.seed)?;
    ds.save(&args.out)?;
    cfg.echo(&args.out)?;
    let [good, defect, cracked] = ds.class_counts();
    println!("wrote {} samples (m = {}) to {}", ds.len(), ds.m(), args.out.display());
    println!("classes: good = {good}, defect = {defect}, cracked = {cracked}");
    Ok(())
}

fn cmd_mask(cfg: CliConfig, args: &MaskArgs) -> Result<()> {
    let mesh = Mesh::read_csv(&args.mesh)?;
    let alpha = args.alpha.unwrap_or(cfg.architecture.alpha);
    let mask = build_mask(&pairwise_distances(&mesh), alpha)?;
    let (lo, hi) = mask.degree_range();
    println!("m = {}", mask.dim());
    println!("alpha = {alpha}");
    println!("c(alpha) = {}", mask.count());
    println!("density = {}", mask.density());
    println!("row degree min = {lo}");
    println!("row degree max = {hi}");
    if let Some(path) = &args.export {
        mask.write_csv(path)?;
        println!("exported {} pairs to {}", mask.count(), path.display());
    }
    Ok(())
}

fn cmd_parity(cfg: CliConfig, args: &ParityArgs) -> Result<()> {
    let alpha = args.alpha.unwrap_or(cfg.architecture.alpha);
    let h = args.h.unwrap_or(cfg.architecture.h);
    let k = args.k.unwrap_or(cfg.architecture.k);
    let (m, c_alpha) = match (&args.mesh, args.m, args.c_alpha) {
        (Some(path), _, _) => {
            let mesh = Mesh::read_csv(path)?;
            let mask = build_mask(&pairwise_distances(&mesh), alpha)?;
            (mesh.len(), mask.count())
        }
        (None, Some(m), Some(c)) => (m, c),
        _ => return Err(Error::InvalidInput("give either --mesh or both --m and --c-alpha".into())),
    };
    let b = CellBudget::compute(k, m, h, c_alpha)?;
    println!("m = {m}");
    println!("k = {k}");
    println!("h = {h}");
    if args.mesh.is_some() {
        println!("alpha = {alpha}");
    }
    println!("c(alpha) = {}", b.c_alpha);
    println!("n_cup = {}", b.n_cup);
    println!("s = {}", b.s);
    println!("n_ref = {}", b.n_ref);
    println!("gap = {}", b.n_ref - b.n_cup);
    Ok(())
}

fn split_dataset(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Split, Split, Standardizer)> {
    let tables = dataset_tables(ds)?;
    let (train_idx, test_idx) = stratified_split(&ds.labels(), test_fraction, seed)?;
    let raw_train = Split {
        inputs: tables.inputs.select(&train_idx),
        targets: tables.targets.select(&train_idx),
    };
    let raw_test = Split {
        inputs: tables.inputs.select(&test_idx),
        targets: tables.targets.select(&test_idx),
    };
    let st = Standardizer::fit(&raw_train)?;
    Ok((st.transform(&raw_train), st.transform(&raw_test), st))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::io(path, e))
}

fn cmd_train(mut cfg: CliConfig, args: &TrainArgs) -> Result<()> {
    if let Some(v) = args.arch {
        cfg.architecture.arch = v;
    }
    if let Some(v) = args.h {
        cfg.architecture.h = v;
    }
    if let Some(v) = args.alpha {
        cfg.architecture.alpha = v;
    }
    apply_training_flags(&mut cfg, &args.training);

    let ds = Dataset::load(&args.data)?;
    let arch = &cfg.architecture;
    let tcfg = cfg.training.train_config(cfg.seed);
    let (train_split, test_split, st) = split_dataset(&ds, cfg.training.test_fraction, cfg.seed)?;

    let mask = Arc::new(build_mask(&pairwise_distances(&ds.base_mesh), arch.alpha)?);
    let budget = CellBudget::compute(ds.k(), ds.m(), arch.h, mask.count())?;
    let mut acfg = ArchConfig::new(ds.k(), ds.m(), arch.h, arch.alpha);
    acfg.dropout_rate = tcfg.dropout_rate;
    let mut net = match arch.arch {
        ArchKind::CupNet => build_cupnet(&acfg, mask, cfg.seed)?,
        ArchKind::RegNet => {
            acfg.s = Some(budget.s as usize);
            build_regnet(&acfg, cfg.seed)?
        }
    };
    let history = train(&mut net, &train_split, Some(&test_split), &tcfg)?;

    cfg.echo(&args.out)?;
    net.save(&args.out.join("checkpoint"))?;
    history.write_csv(&args.out.join("history.csv"))?;
    write_json(
        &args.out.join("standardizer.json"),
        &serde_json::json!({
            "input_mean": st.input_mean(),
            "input_std": st.input_std(),
            "output_mean": st.output_mean(),
            "output_std": st.output_std(),
        }),
    )?;
    let r2 = history.final_r2.unwrap_or(f64::NAN);
    write_json(
        &args.out.join("metrics.json"),
        &serde_json::json!({
            "architecture": arch.arch,
            "h": arch.h,
            "alpha": arch.alpha,
            "param_count": net.param_count(),
            "budget": budget,
            "final_train_loss": history.epochs.last().map(|e| e.train_loss),
            "test_r2": r2,
        }),
    )?;
    println!("{} (h = {}, alpha = {}): {} parameters", arch.arch, arch.h, arch.alpha, net.param_count());
    println!("test R2 = {r2}");
    Ok(())
}

fn cmd_bench(mut cfg: CliConfig, args: &BenchArgs) -> Result<()> {
    if let Some(v) = &args.h_values {
        cfg.bench.h_values = v.clone();
    }
    if let Some(v) = &args.alpha_values {
        cfg.bench.alpha_values = v.clone();
    }
    if let Some(v) = &args.archs {
        cfg.bench.architectures = v.clone();
    }
    if let Some(v) = args.runs {
        cfg.bench.runs = v;
    }
    if let Some(v) = args.jobs {
        cfg.bench.jobs = v;
    }
    apply_training_flags(&mut cfg, &args.training);

    let ds = Dataset::load(&args.data)?;
    let jobs = match cfg.bench.jobs {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    };
    let report = run_bench(&ds, &cfg.bench_plan(), jobs)?;
    report.write(&args.out)?;
    cfg.echo(&args.out)?;
    print!("{}", report.to_markdown());
    let failures = report.failures().len();
    if failures > 0 {
        eprintln!("{failures} run(s) failed; see meta.json");
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    let cfg = effective_config(cli)?;
    match &cli.command {
        Command::Gen(a) => cmd_gen(cfg, a),
        Command::Mask(a) => cmd_mask(cfg, a),
        Command::Parity(a) => cmd_parity(cfg, a),
        Command::Train(a) => cmd_train(cfg, a),
        Command::Bench(a) => cmd_bench(cfg, a),
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidInput(_) => 1,
                _ => 2,
            }
        }
    }
}
