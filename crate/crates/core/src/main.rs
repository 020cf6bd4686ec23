use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use segbayes::decoder::{BoxPrompt, DecoderDims, DecoderModel};
use segbayes::pipeline::{train_sokan, write_trace, TrainConfig};
use segbayes::sokan::{positive_ratio, prune, HyperMapVariant, PruneReport, DEFAULT_KEEP};
use segbayes::toolkit::model_io::{load_model, save_model};
use segbayes::toolkit::{
    bench_latency, binarize, dice, expand_box, load_dataset, read_pgm, write_phantom_set, write_pgm, DatasetItem,
    PhantomConfig, TensorContainer,
};
use segbayes::tvbi::{collect_tokens, compute_token_stats, deterministic_mask, infer_parallel, TokenStats};
use segbayes::{Error, Result, Tensor};

#[derive(Parser)]
#[command(name = "segbayes", version, about = "Token-sampling uncertainty and spline hyper-maps for a toy mask decoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a fresh seeded model.
    Init(InitArgs),
    /// Generate a phantom dataset.
    Synth(SynthArgs),
    /// Token statistics over a dataset.
    Stats(StatsArgs),
    /// Mean mask and uncertainty for one image.
    Infer(InferArgs),
    /// Self-supervised spline training.
    Train(TrainArgs),
    /// Per-channel positive ratios and ranking.
    Analyze(AnalyzeArgs),
    /// Keep the top channels of a report.
    Prune(PruneArgs),
    /// Dice against dataset masks, CSV on stdout.
    Eval(EvalArgs),
    /// Inference latency on a phantom.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    Kan,
    Mlp,
}

#[derive(Args)]
struct InitArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "kan")]
    variant: Variant,
    /// Purely random weights instead of the dark-region prior.
    #[arg(long)]
    random: bool,
    #[arg(long, default_value_t = DecoderDims::default().token_dim)]
    token_dim: usize,
    #[arg(long, default_value_t = DecoderDims::default().channels)]
    channels: usize,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 256)]
    size: usize,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    expand: usize,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    stats: PathBuf,
    #[arg(long)]
    image: PathBuf,
    /// Prompt box `x0,y0,x1,y1` (half-open).
    #[arg(long, conflicts_with = "mask", required_unless_present = "mask")]
    r#box: Option<String>,
    /// Derive the box from a mask image.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    expand: usize,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Writes `PREFIX_mean.pgm` and `PREFIX_unc.pgm` (uncertainty times 2).
    #[arg(long)]
    out: String,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 2000)]
    iters: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    k_train: usize,
    #[arg(long, default_value_t = 1)]
    batch: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_KEEP)]
    keep: usize,
    #[arg(long, default_value_t = 10)]
    expand: usize,
}

#[derive(Args)]
struct PruneArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    report: PathBuf,
    #[arg(long, default_value_t = DEFAULT_KEEP)]
    keep: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Score the Monte-Carlo mean mask instead of the deterministic one.
    #[arg(long, requires = "k")]
    stats: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 10)]
    expand: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    stats: PathBuf,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 256)]
    size: usize,
    #[arg(long, default_value_t = 50)]
    reps: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::InvalidInput(_) => 2,
                Error::Format(_) | Error::Io(_) => 3,
                Error::Numeric(_) => 4,
            })
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Init(a) => {
            let dims = DecoderDims {
                token_dim: a.token_dim,
                channels: a.channels,
                ..DecoderDims::default()
            };
            if dims.token_dim == 0 || dims.channels == 0 {
                return Err(Error::InvalidInput("dimensions must be positive".into()));
            }
            let variant = match a.variant {
                Variant::Kan => HyperMapVariant::Kan,
                Variant::Mlp => HyperMapVariant::PlainMlp,
            };
            let model = if a.random {
                DecoderModel::random(dims, a.seed, variant)
            } else {
                DecoderModel::intensity_prior(dims, a.seed, variant)
            };
            save_model(&a.out, &model)
        }
        Command::Synth(a) => {
            if a.count == 0 {
                return Err(Error::InvalidInput("count must be positive".into()));
            }
            write_phantom_set(&a.out, &PhantomConfig::sized(a.size), a.count, a.seed)
        }
        Command::Stats(a) => {
            let model = load_model(&a.model)?;
            let items = prompted(&load_dataset(&a.data)?, a.expand);
            let stats = compute_token_stats(&collect_tokens(&model, &items)?)?;
            stats.to_container().write(&a.out)
        }
        Command::Infer(a) => {
            let model = load_model(&a.model)?;
            let stats = read_stats(&a.stats)?;
            let image = read_pgm(&a.image)?;
            let prompt = match (&a.r#box, &a.mask) {
                (Some(b), _) => parse_box(b)?,
                (None, Some(m)) => expand_box(&read_pgm(m)?, a.expand)?,
                (None, None) => unreachable!("clap requires one of --box and --mask"),
            };
            let pred = infer_parallel(&model, &image, &prompt, &stats, a.k, a.seed)?;
            if !(pred.mean_mask.all_finite() && pred.uncertainty.all_finite()) {
                return Err(Error::Numeric("non-finite mask values".into()));
            }
            write_pgm(format!("{}_mean.pgm", a.out), &pred.mean_mask)?;
            write_pgm(format!("{}_unc.pgm", a.out), &pred.uncertainty.scale(2.0))
        }
        Command::Train(a) => {
            let model = load_model(&a.model)?;
            let items: Vec<(Tensor, Tensor)> = load_dataset(&a.data)?
                .into_iter()
                .map(|it| {
                    let region = it.mask.unwrap_or_else(|| Tensor::zeros(it.image.shape()));
                    (it.image, region)
                })
                .collect();
            let config = TrainConfig {
                learning_rate: a.lr,
                max_iterations: a.iters,
                seed: a.seed,
                k_train: a.k_train,
                batch_size: a.batch,
                ..TrainConfig::default()
            };
            let out = train_sokan(&model, &items, &config)?;
            save_model(&a.out, &out.model)?;
            if let Some(path) = a.trace {
                write_trace(io::BufWriter::new(fs::File::create(path)?), &out.trace)?;
            }
            Ok(())
        }
        Command::Analyze(a) => {
            let model = load_model(&a.model)?;
            let items = prompted(&load_dataset(&a.data)?, a.expand);
            let report = positive_ratio(&model, &items, a.keep)?;
            fs::write(&a.out, report.to_csv())?;
            Ok(())
        }
        Command::Prune(a) => {
            let model = load_model(&a.model)?;
            let report = PruneReport::from_csv(&fs::read_to_string(&a.report)?, a.keep)?;
            save_model(&a.out, &prune(&model, &report)?)
        }
        Command::Eval(a) => {
            let model = load_model(&a.model)?;
            let stats = a.stats.as_ref().map(read_stats).transpose()?;
            let items = load_dataset(&a.data)?;
            let mut out = io::stdout().lock();
            writeln!(out, "image,dice")?;
            let mut scores = Vec::new();
            for item in &items {
                let Some(gt) = &item.mask else { continue };
                let prompt = item.prompt(a.expand);
                let prob = match &stats {
                    Some(s) => infer_parallel(&model, &item.image, &prompt, s, a.k.unwrap_or(10), a.seed)?.mean_mask,
                    None => deterministic_mask(&model, &item.image, &prompt)?,
                };
                let d = dice(&binarize(&prob), gt)?;
                writeln!(out, "{},{d}", item.name)?;
                scores.push(d);
            }
            if scores.is_empty() {
                return Err(Error::Format("dataset has no masks to score against".into()));
            }
            writeln!(out, "mean,{}", scores.iter().sum::<f64>() / scores.len() as f64)?;
            Ok(())
        }
        Command::Bench(a) => {
            let model = load_model(&a.model)?;
            let stats = read_stats(&a.stats)?;
            let r = bench_latency(&model, &stats, a.k, a.size, a.reps)?;
            println!("size,k,reps,mean_s,p50_s,p95_s");
            println!("{},{},{},{:.6},{:.6},{:.6}", a.size, a.k, a.reps, r.mean, r.p50, r.p95);
            Ok(())
        }
    }
}

fn prompted(items: &[DatasetItem], expand: usize) -> Vec<(Tensor, BoxPrompt)> {
    items.iter().map(|it| (it.image.clone(), it.prompt(expand))).collect()
}

fn read_stats(path: &PathBuf) -> Result<TokenStats> {
    TokenStats::from_container(&TensorContainer::read(path)?)
}

fn parse_box(text: &str) -> Result<BoxPrompt> {
    let v: Vec<usize> = text
        .split(',')
        .map(|s| s.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::InvalidInput(format!("box {text:?} is not x0,y0,x1,y1")))?;
    match v[..] {
        [x0, y0, x1, y1] => Ok(BoxPrompt::new(x0, y0, x1, y1)),
        _ => Err(Error::InvalidInput(format!("box {text:?} needs four values"))),
    }
}
