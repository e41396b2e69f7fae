use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rfdisent::classify::{classify_compare, CnnConfig};
use rfdisent::generate::{
    factor_index, paired_plans, resample_factor, swap_factors, write_resample_outputs, write_swap_outputs, CodePool,
    SwapPlan,
};
use rfdisent::metrics::{evaluate, MetricConfig, ReprDataset};
use rfdisent::synth::{synth_dataset, Dataset, SynthConfig};
use rfdisent::train::{export_representations, load_checkpoint, train, TrainConfig};
use rfdisent::{Error, Result};

const SEED_ENV: &str = "RFD_SEED";

#[derive(Parser)]
#[command(name = "rfdisent", about = "Factor-disentangled representations for RF signals", disable_version_flag = true)]
struct Cli {
    /// Print version and build configuration.
    #[arg(short = 'V', long)]
    version: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic factor-labelled dataset.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compute the metric suite on exported representations.
    Eval {
        #[arg(long)]
        repr: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        bins: Option<usize>,
        #[arg(long)]
        votes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Export factor codes of a dataset.
    ExportRepr {
        #[command(flatten)]
        io: ModelInput,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare the full model, the classification-only model and separate CNNs.
    Classify {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Swap factor codes between two signals and regenerate.
    Swap {
        #[command(flatten)]
        io: ModelInput,
        #[arg(long)]
        src: usize,
        #[arg(long)]
        dst: usize,
        /// Comma-separated factors taken from `dst`; `all` runs the twelve pair plans.
        #[arg(long, default_value = "rff")]
        factors: String,
        #[arg(long)]
        t_start: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Resample one factor code from its class pool and regenerate.
    Resample {
        #[command(flatten)]
        io: ModelInput,
        #[arg(long)]
        factor: String,
        #[arg(long)]
        class: usize,
        /// Comma-separated signal ids; defaults to the first 16.
        #[arg(long)]
        signals: Option<String>,
        #[arg(long)]
        t_start: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args)]
struct ModelInput {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
}

/// Explicit flag, then `RFD_SEED`, then the configured value.
fn resolve_seed(flag: Option<u64>, configured: u64) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
        Err(_) => Ok(configured),
    }
}

fn parse_ids(list: &str) -> Result<Vec<usize>> {
    list.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad signal id `{s}`")))
        })
        .collect()
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth { config, out, seed } => {
            let mut cfg = match &config {
                Some(p) => SynthConfig::from_file(p)?,
                None => SynthConfig::default(),
            };
            cfg.seed = resolve_seed(seed, cfg.seed)?;
            let ds = synth_dataset(&cfg)?;
            ds.save(&out)?;
            println!(
                "synth: {} signals of length {} ({}x{}x{} classes) -> {}",
                ds.len(),
                ds.length,
                ds.cardinalities[0],
                ds.cardinalities[1],
                ds.cardinalities[2],
                out.display()
            );
        }
        Command::Train { config, dataset, checkpoint, trace, epochs, seed } => {
            let mut cfg = match &config {
                Some(p) => TrainConfig::from_file(p)?,
                None => TrainConfig::default(),
            };
            cfg.dataset = dataset.or(cfg.dataset);
            cfg.checkpoint = checkpoint.or(cfg.checkpoint);
            cfg.trace = trace.or(cfg.trace);
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            cfg.seed = resolve_seed(seed, cfg.seed)?;
            if cfg.checkpoint.is_none() {
                return Err(Error::Config("no checkpoint path given".into()));
            }
            let out = train(&cfg, |r| {
                eprintln!("epoch {:>3}  total {:.5}  rc {:.5}  ce {:.5}", r.epoch, r.total, r.terms.rc, r.terms.ce)
            })?;
            let last = out.trace.last().map_or(f64::NAN, |r| r.total);
            println!(
                "train: {} epochs, {} parameters, final loss {last:.6} -> {}",
                cfg.epochs,
                out.model.num_scalars(),
                cfg.checkpoint.as_deref().unwrap_or(Path::new("")).display()
            );
        }
        Command::Eval { repr, out, bins, votes, seed } => {
            let r = ReprDataset::load(&repr)?;
            if r.is_small() {
                eprintln!("warning: {} representations is below 10x the largest class count", r.len());
            }
            let mut cfg = MetricConfig::default();
            cfg.bins = bins.unwrap_or(cfg.bins);
            cfg.votes = votes.unwrap_or(cfg.votes);
            cfg.seed = resolve_seed(seed, cfg.seed)?;
            let rep = evaluate(&r, &cfg)?;
            if !rep.is_finite() {
                return Err(Error::NonFinite { op: "metric evaluation" });
            }
            rep.save(&out)?;
            println!(
                "eval: z_diff {:.4} modularity {:.4} dcimig {:.4} apa {:.4} -> {}",
                rep.z_diff,
                rep.modularity,
                rep.dcimig,
                rep.apa_mean(),
                out.display()
            );
        }
        Command::ExportRepr { io, out } => {
            let (model, _) = load_checkpoint(&io.ckpt)?;
            let ds = Dataset::load(&io.dataset)?;
            let r = export_representations(&model, &ds)?;
            r.save(&out)?;
            println!("export-repr: {} x {} codes -> {}", r.len(), r.dim(), out.display());
        }
        Command::Classify { config, dataset, out, epochs, seed } => {
            let mut cfg = match &config {
                Some(p) => TrainConfig::from_file(p)?,
                None => TrainConfig::default(),
            };
            cfg.dataset = dataset.or(cfg.dataset);
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            cfg.seed = resolve_seed(seed, cfg.seed)?;
            let path = cfg
                .dataset
                .clone()
                .ok_or_else(|| Error::Config("no dataset path given".into()))?;
            let ds = Dataset::load(&path)?;
            let cnn = CnnConfig {
                epochs: cfg.epochs,
                batch_size: cfg.batch_size,
                learning_rate: cfg.learning_rate,
                seed: cfg.seed,
                ..CnnConfig::default()
            };
            let report = classify_compare(&ds, &cfg, &cnn)?;
            report.save(&out)?;
            let avg = |v| report.average(v).unwrap_or(f64::NAN);
            println!(
                "classify: average accuracy full {:.4}, lc_only {:.4}, separate {:.4} -> {}",
                avg("full"),
                avg("lc_only"),
                avg("separate"),
                out.display()
            );
        }
        Command::Swap { io, src, dst, factors, t_start, out, seed } => {
            let (model, _) = load_checkpoint(&io.ckpt)?;
            let ds = Dataset::load(&io.dataset)?;
            let t = t_start.unwrap_or((model.schedule().steps() / 2).max(1));
            let plans = if factors == "all" {
                paired_plans(src, dst, t)
            } else {
                let f = factors.split(',').map(|s| factor_index(s.trim())).collect::<Result<Vec<_>>>()?;
                vec![SwapPlan::taking(src, dst, &f, t)]
            };
            let seed = resolve_seed(seed, model.config().seed)?;
            let signals = swap_factors(&model, &ds, &plans, seed)?;
            write_swap_outputs(&out, &ds, &plans, &signals)?;
            println!("swap: {} generated signals -> {}", signals.len(), out.display());
        }
        Command::Resample { io, factor, class, signals, t_start, out, seed } => {
            let (model, _) = load_checkpoint(&io.ckpt)?;
            let ds = Dataset::load(&io.dataset)?;
            let f = factor_index(&factor)?;
            if class >= ds.cardinalities[f] {
                return Err(Error::Config(format!("{factor} has {} classes", ds.cardinalities[f])));
            }
            let rows = match signals {
                Some(s) => parse_ids(&s)?,
                None => (0..ds.len().min(16)).collect(),
            };
            let t = t_start.unwrap_or(model.schedule().steps());
            let seed = resolve_seed(seed, model.config().seed)?;
            let pool = CodePool::fit(&model, &ds)?;
            let generated = resample_factor(&model, &ds, &rows, f, class, &pool, t, seed)?;
            write_resample_outputs(&out, &ds, &rows, f, class, t, &generated)?;
            println!("resample: {} generated signals -> {}", generated.len(), out.display());
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numeric() {
        4
    } else if e.is_config() || matches!(e, Error::Contract(_)) {
        2
    } else {
        3
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.version {
        let profile = if cfg!(debug_assertions) { "debug" } else { "release" };
        println!("rfdisent {} ({profile}, f64 training)", env!("CARGO_PKG_VERSION"));
        return ExitCode::SUCCESS;
    }
    let Some(cmd) = cli.command else {
        eprintln!("error: no subcommand given, see --help");
        return ExitCode::from(2);
    };
    match run(cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
