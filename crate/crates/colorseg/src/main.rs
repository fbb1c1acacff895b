//! Command-line front end: parses flags, merges them over the config file
//! (flags win), and dispatches to the command implementations. Every error
//! prints one `error[CODE]: message` line and exits nonzero.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use colorseg::commands;
use colorseg::config::{parse_connectivity, parse_merge_metric, RunConfig};
use colorseg::dataset::parse_kind;
use colorseg::error::{CliError, Result};

#[derive(Parser)]
#[command(
    name = "colorseg",
    about = "Instance segmentation by coloring: train, predict, evaluate, sweep",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Key=value config file; command-line flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master RNG seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train a coloring network on a dataset directory
    Train(TrainArgs),
    /// Segment images with a trained checkpoint
    Predict(PredictArgs),
    /// Compare predicted label maps against ground truth
    Eval(EvalArgs),
    /// Grid-search size/merge thresholds on a labeled validation set
    Sweep(SweepArgs),
    /// Generate a synthetic dataset
    GenData(GenDataArgs),
    /// Render 16-bit label maps to color PNGs
    Render(RenderArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset directory (images/ + labels/)
    #[arg(long)]
    data: PathBuf,
    /// Resume from an existing checkpoint
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    iters: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    /// Halo margin in pixels
    #[arg(long)]
    margin: Option<f64>,
    /// Halo weight in the color-assignment score
    #[arg(long)]
    mu: Option<f64>,
    /// Total color count including background
    #[arg(long)]
    colors: Option<u8>,
    #[arg(long)]
    batch: Option<usize>,
    /// Loss weight of background pixels
    #[arg(long)]
    bg_weight: Option<f64>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    base_channels: Option<usize>,
    /// Per-channel feature normalization in every conv block
    #[arg(long)]
    batchnorm: bool,
    /// Random rotation/flip augmentation
    #[arg(long)]
    augment: bool,
    #[arg(long)]
    checkpoint_every: Option<u64>,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory of numbered images (or a dataset directory)
    #[arg(long)]
    input: PathBuf,
    /// Minimum component size in pixels
    #[arg(long)]
    tau: Option<usize>,
    /// Merge radius for same-color components
    #[arg(long)]
    rho: Option<f64>,
    /// minset | hausdorff
    #[arg(long)]
    merge_metric: Option<String>,
    /// 4 | 8
    #[arg(long)]
    connectivity: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Predicted label maps (directory or dataset directory)
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth label maps
    #[arg(long)]
    truth: PathBuf,
    /// Write report.txt under --out
    #[arg(long)]
    write_report: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Labeled validation dataset directory
    #[arg(long)]
    data: PathBuf,
    /// Size thresholds: comma list (0,5,10) or range lo..hi:step
    #[arg(long, default_value = "0..95:5")]
    tau: String,
    /// Merge radii: comma list or range lo..hi:step
    #[arg(long, default_value = "0..36:4")]
    rho: String,
    /// minset | hausdorff
    #[arg(long)]
    merge_metric: Option<String>,
    /// 4 | 8
    #[arg(long)]
    connectivity: Option<String>,
    /// Write sweep.csv under --out
    #[arg(long)]
    write_grid: bool,
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    common: Common,
    /// blobs | rods | occluded
    #[arg(long)]
    kind: String,
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long)]
    min_instances: Option<usize>,
    #[arg(long)]
    max_instances: Option<usize>,
    #[arg(long)]
    min_size: Option<f64>,
    #[arg(long)]
    max_size: Option<f64>,
    /// true lets instances touch/overlap, false keeps them separated
    #[arg(long)]
    overlap: Option<bool>,
    #[arg(long)]
    min_gap: Option<f64>,
    /// Additive Gaussian noise standard deviation
    #[arg(long)]
    noise: Option<f64>,
    /// 1 (gray) or 3
    #[arg(long)]
    channels: Option<usize>,
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    common: Common,
    /// A label-map file or a directory of numbered label maps
    #[arg(long)]
    labels: PathBuf,
}

fn merged_config(common: &Common) -> Result<RunConfig> {
    let mut run = RunConfig::default();
    if let Some(path) = &common.config {
        run.load_file(path)?;
    }
    if let Some(seed) = common.seed {
        run.seed = seed;
    }
    Ok(run)
}

/// Parses a grid spec: `a,b,c` or `lo..hi:step` (inclusive of `hi` when it
/// lands on the step lattice).
fn parse_grid<T: Copy + std::str::FromStr + PartialOrd + std::ops::AddAssign>(
    spec: &str,
    what: &str,
) -> Result<Vec<T>> {
    let bad = || CliError::Config(format!("cannot parse {what} grid `{spec}`"));
    if let Some((range, step)) = spec.split_once(':') {
        let (lo, hi) = range.split_once("..").ok_or_else(bad)?;
        let lo: T = lo.trim().parse().map_err(|_| bad())?;
        let hi: T = hi.trim().parse().map_err(|_| bad())?;
        let step: T = step.trim().parse().map_err(|_| bad())?;
        let mut out = Vec::new();
        let mut v = lo;
        while v <= hi {
            out.push(v);
            let before = v;
            v += step;
            if !(v > before) {
                return Err(bad()); // zero/negative step would never finish
            }
        }
        if out.is_empty() {
            return Err(bad());
        }
        Ok(out)
    } else {
        let vals: std::result::Result<Vec<T>, _> =
            spec.split(',').map(|s| s.trim().parse()).collect();
        let vals = vals.map_err(|_| bad())?;
        if vals.is_empty() {
            return Err(bad());
        }
        Ok(vals)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let mut run = merged_config(&args.common)?;
            if let Some(v) = args.iters {
                run.iters = v;
            }
            if let Some(v) = args.lr {
                run.lr = v;
            }
            if let Some(v) = args.margin {
                run.margin = v;
            }
            if let Some(v) = args.mu {
                run.mu = v;
            }
            if let Some(v) = args.colors {
                run.colors = v;
            }
            if let Some(v) = args.batch {
                run.batch = v;
            }
            if let Some(v) = args.bg_weight {
                run.background_weight = v;
            }
            if let Some(v) = args.depth {
                run.depth = v;
            }
            if let Some(v) = args.base_channels {
                run.base_channels = v;
            }
            if args.batchnorm {
                run.batchnorm = true;
            }
            if args.augment {
                run.augment = true;
            }
            if let Some(v) = args.checkpoint_every {
                run.checkpoint_every = v;
            }
            run.validate()?;
            commands::cmd_train(&run, &args.data, &args.common.out, args.resume.as_deref())
        }
        Command::Predict(args) => {
            let mut run = merged_config(&args.common)?;
            if let Some(v) = args.tau {
                run.tau = v;
            }
            if let Some(v) = args.rho {
                run.rho = v;
            }
            if let Some(v) = &args.merge_metric {
                run.merge_metric = parse_merge_metric(v)?;
            }
            if let Some(v) = &args.connectivity {
                run.connectivity = parse_connectivity(v)?;
            }
            run.validate()?;
            commands::cmd_predict(&run, &args.checkpoint, &args.input, &args.common.out)
        }
        Command::Eval(args) => {
            let out = args.write_report.then_some(args.common.out.as_path());
            commands::cmd_eval(&args.pred, &args.truth, out)
        }
        Command::Sweep(args) => {
            let mut run = merged_config(&args.common)?;
            if let Some(v) = &args.merge_metric {
                run.merge_metric = parse_merge_metric(v)?;
            }
            if let Some(v) = &args.connectivity {
                run.connectivity = parse_connectivity(v)?;
            }
            run.validate()?;
            let taus: Vec<usize> = parse_grid(&args.tau, "tau")?;
            let rhos: Vec<f64> = parse_grid(&args.rho, "rho")?;
            let out = args.write_grid.then_some(args.common.out.as_path());
            commands::cmd_sweep(&run, &args.checkpoint, &args.data, &taus, &rhos, out)
        }
        Command::GenData(args) => {
            let cfg = scene_config(&args)?;
            commands::cmd_gen_data(&args.common.out, &cfg, args.count)
        }
        Command::Render(args) => commands::cmd_render(&args.labels, &args.common.out),
    }
}

/// Builds a SceneConfig from gen-data flags over the blob defaults.
fn scene_config(args: &GenDataArgs) -> Result<colorseg_core::synth::SceneConfig> {
    let mut cfg = colorseg_core::synth::SceneConfig::blobs(args.height, args.width);
    cfg.kind = parse_kind(&args.kind)?;
    if let Some(v) = args.min_instances {
        cfg.min_instances = v;
    }
    if let Some(v) = args.max_instances {
        cfg.max_instances = v;
    }
    if let Some(v) = args.min_size {
        cfg.min_size = v;
    }
    if let Some(v) = args.max_size {
        cfg.max_size = v;
    }
    if let Some(v) = args.overlap {
        cfg.allow_overlap = v;
    }
    if let Some(v) = args.min_gap {
        cfg.min_gap = v;
    }
    if let Some(v) = args.noise {
        cfg.noise = v;
    }
    if let Some(v) = args.channels {
        cfg.channels = v;
    }
    if let Some(seed) = args.common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{err}");
            ExitCode::FAILURE
        }
    }
}
