use clap::{Args, Parser, Subcommand, ValueEnum};
use momnet::cli::{self, Baseline, EvalRequest, Subset};
use momnet::config::{DataSource, EvalConfig, RunConfig, SEED_ENV};
use momnet::metrics::{render_markdown, HausdorffVariant};
use momnet::momentum::BackpropMode;
use momnet::network::NetworkDescriptor;
use momnet::verify::VerifyOptions;
use momnet::{DType, Error, Result};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "momnet", version, about = "Momentum residual networks: train, evaluate, verify, profile")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a run config and report test metrics.
    Train(TrainArgs),
    /// Score a checkpoint (or a fixed baseline) on a dataset.
    Eval(EvalArgs),
    /// Run the built-in property suites.
    Verify(VerifyArgs),
    /// Tabulate retained activations against depth for both backprop modes.
    Memprofile(MemArgs),
    /// Print a default run config.
    Init {
        #[arg(value_enum, default_value = "segmentation")]
        task: TaskArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Segmentation,
    Classification,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `out_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, required_unless_present = "baseline")]
    checkpoint: Option<PathBuf>,
    /// Take the data source and split seed from this run config.
    #[arg(long, conflicts_with = "data_dir")]
    config: Option<PathBuf>,
    /// Evaluate every sample in a sample directory.
    #[arg(long, required_unless_present = "config")]
    data_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    subset: Subset,
    #[arg(long, value_enum)]
    baseline: Option<Baseline>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, value_enum)]
    hd: Option<HdArg>,
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum HdArg {
    Max,
    Hd95,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Stored,
    Reversible,
}

impl From<ModeArg> for BackpropMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Stored => BackpropMode::Stored,
            ModeArg::Reversible => BackpropMode::Reversible,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DTypeArg {
    F32,
    F64,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, default_value_t = 10)]
    depth: usize,
    #[arg(long, value_enum, default_value = "f64")]
    dtype: DTypeArg,
    #[arg(long, default_value_t = 100)]
    cases: usize,
    #[arg(long, default_value_t = 20)]
    seeds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MemArgs {
    /// Network descriptor JSON, or a run config containing one; defaults to the segmentation preset.
    #[arg(long)]
    descriptor: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16")]
    depths: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    batch: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn env_seed() -> Option<String> {
    std::env::var(SEED_ENV).ok()
}

fn train(args: TrainArgs) -> Result<bool> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let mut cfg = cfg.with_env_seed(env_seed().as_deref())?;
    if let Some(out) = args.out {
        cfg.out_dir = out;
    }
    let out = cfg.out_dir.clone();
    let report = cli::cmd_train(&cfg, &out)?;
    let o = &report.outcome;
    println!(
        "trained {} epochs ({} steps), best epoch {:?}{}",
        o.history.len(),
        o.steps,
        o.best_epoch,
        if o.stopped_early { ", stopped early" } else { "" }
    );
    print!("{}", render_markdown(std::slice::from_ref(&report.test)));
    println!("outputs in {}", out.display());
    Ok(true)
}

fn eval(args: EvalArgs) -> Result<bool> {
    let (data, split_seed, subset, mut eval) = match (&args.config, &args.data_dir) {
        (Some(path), _) => {
            let cfg = RunConfig::load(path)?;
            (cfg.data, cfg.split_seed, args.subset, cfg.eval)
        }
        (None, Some(dir)) => (DataSource::Dir { path: dir.clone() }, 0, Subset::All, EvalConfig::default()),
        (None, None) => return Err(Error::config("data", "pass --config or --data-dir")),
    };
    if let Some(t) = args.threshold {
        eval.threshold = t;
    }
    if let Some(hd) = args.hd {
        eval.hd_variant = match hd {
            HdArg::Max => HausdorffVariant::Max,
            HdArg::Hd95 => HausdorffVariant::Hd95,
        };
    }
    let req = EvalRequest {
        checkpoint: args.checkpoint,
        data,
        subset,
        split_seed,
        baseline: args.baseline,
        eval,
        label: args.name,
    };
    let row = cli::cmd_eval(&req)?;
    let rows = [row];
    print!("{}", render_markdown(&rows));
    if let Some(out) = args.out {
        cli::write_report(&rows, &out, "eval")?;
    }
    Ok(true)
}

fn verify(args: VerifyArgs) -> Result<bool> {
    let opts = VerifyOptions {
        gamma: args.gamma,
        mode: args.mode.map(Into::into),
        depth: args.depth,
        dtype: match args.dtype {
            DTypeArg::F32 => DType::F32,
            DTypeArg::F64 => DType::F64,
        },
        cases: args.cases,
        seeds: args.seeds,
        seed: args.seed,
    };
    let report = cli::cmd_verify(&opts);
    print!("{}", report.render());
    if let Some(out) = args.out {
        std::fs::create_dir_all(&out)?;
        std::fs::write(out.join("verify.json"), serde_json::to_string_pretty(&report)?)?;
    }
    Ok(report.all_passed())
}

fn memprofile(args: MemArgs) -> Result<bool> {
    let desc = match &args.descriptor {
        None => RunConfig::segmentation_default().network,
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            match serde_json::from_str::<NetworkDescriptor>(&text) {
                Ok(d) => d,
                Err(_) => RunConfig::from_json(&text)?.network,
            }
        }
    };
    let cmp = cli::cmd_memprofile(&desc, args.batch, &args.depths, args.out.as_deref())?;
    println!("state size S = {}", cmp.state_size);
    print!("{}", cmp.to_markdown());
    Ok(true)
}

fn main() -> ExitCode {
    let outcome = match Cli::parse().command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Verify(a) => verify(a),
        Command::Memprofile(a) => memprofile(a),
        Command::Init { task } => {
            let cfg = match task {
                TaskArg::Segmentation => RunConfig::segmentation_default(),
                TaskArg::Classification => RunConfig::classification_default(),
            };
            cfg.to_json().map(|j| {
                println!("{j}");
                true
            })
        }
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("momnet: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
