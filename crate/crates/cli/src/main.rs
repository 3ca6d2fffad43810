use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use osnbias_core::mlp::Model;
use osnbias_core::pipeline::{execute, Outcome, Overrides, PipelineConfig, Stage, Target};
use osnbias_core::synth::{generate_population, SynthConfig, SynthFormat};
use osnbias_core::{AttitudeMode, Bias, CorrelationMethod};

#[derive(Parser)]
#[command(
    name = "osnbias",
    version,
    about = "Detect biased users from their behavior"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read posts and profiles into the per-user table.
    Ingest(StageArgs),
    /// Score every post with the lexicon.
    Score(StageArgs),
    /// Aggregate attitudes and assign bias labels.
    Label(StageArgs),
    /// Build features and correlation matrices.
    Correlate(StageArgs),
    /// Split, balance and train the network.
    Train(StageArgs),
    /// Evaluate a trained network on the held-out split.
    Evaluate {
        #[command(flatten)]
        stage: StageArgs,
        /// Model file written by an earlier `train`; retrains when omitted.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Run every stage in order.
    Pipeline(StageArgs),
    /// Generate a synthetic population with planted bias.
    Synth(SynthArgs),
}

#[derive(Args)]
struct StageArgs {
    /// Pipeline config (TOML).
    #[arg(long, short)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Where artifacts go; relative to the working directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Width of the normal band in standard deviations.
    #[arg(long)]
    k: Option<f64>,
    /// Average post scores instead of summing them.
    #[arg(long)]
    mean_attitude: bool,
    /// Predict positive against negative among biased users only.
    #[arg(long)]
    among_biased: bool,
    #[arg(long, value_enum)]
    method: Option<Method>,
    /// Hidden layer sizes, e.g. `--hidden 4,3`.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    max_epochs: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Pearson,
    Spearman,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    YelpLike,
    TweetLike,
}

#[derive(Args)]
struct SynthArgs {
    /// Synth config (TOML); flags below take precedence.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    n_users: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Share of users drawn from the biased tails.
    #[arg(long)]
    bias_fraction: Option<f64>,
    /// Planted effect as `feature=value`; repeatable.
    #[arg(long = "effect", value_parser = parse_effect)]
    effects: Vec<(String, f64)>,
    #[arg(long)]
    noise_sd: Option<f64>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    #[arg(long, short)]
    out: PathBuf,
}

fn parse_effect(s: &str) -> Result<(String, f64), String> {
    let (name, value) = s
        .split_once('=')
        .ok_or_else(|| format!("expected feature=value, got `{s}`"))?;
    let value: f64 = value
        .trim()
        .parse()
        .map_err(|e| format!("bad effect size `{value}`: {e}"))?;
    Ok((name.trim().to_string(), value))
}

impl StageArgs {
    fn load(&self) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::load(&self.config)?;
        let output_dir = match &self.output_dir {
            Some(d) if d.is_relative() => Some(std::env::current_dir()?.join(d)),
            other => other.clone(),
        };
        cfg.apply(&Overrides {
            seed: self.seed,
            output_dir,
            k: self.k,
            mode: self.mean_attitude.then_some(AttitudeMode::Mean),
            target: self.among_biased.then_some(Target::AmongBiased),
            method: self.method.map(|m| match m {
                Method::Pearson => CorrelationMethod::Pearson,
                Method::Spearman => CorrelationMethod::Spearman,
            }),
            hidden: self.hidden.clone(),
            max_epochs: self.max_epochs,
        });
        Ok(cfg)
    }
}

fn run_stages(args: &StageArgs, stages: &[Stage], model: Option<&Path>) -> Result<()> {
    let cfg = args.load()?;
    let model = match model {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Some(
                Model::from_json(&text)
                    .with_context(|| format!("loading model {}", p.display()))?,
            )
        }
        None => None,
    };
    let outcome = execute(cfg, stages, model)?;
    quiet_pipe(print_outcome(&outcome))
}

fn print_outcome(o: &Outcome) -> io::Result<()> {
    let mut out = io::stdout().lock();
    if let Some(l) = &o.labeled {
        writeln!(
            out,
            "users {}  normal {}  overly_positive {}  overly_negative {}",
            l.records.len(),
            l.count(Bias::Normal),
            l.count(Bias::OverlyPositive),
            l.count(Bias::OverlyNegative)
        )?;
    }
    if let Some(e) = &o.evaluated {
        writeln!(
            out,
            "balanced accuracy {:.2}%  plain accuracy {:.2}%",
            e.summary.balanced_accuracy, e.summary.plain_accuracy
        )?;
    }
    for (subset, why) in &o.skipped_subsets {
        writeln!(out, "skipped subset {}: {why}", subset.as_str())?;
    }
    writeln!(
        out,
        "wrote {} artifacts to {}",
        o.artifacts.len(),
        o.output_dir.display()
    )
}

fn run_synth(args: &SynthArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str::<SynthConfig>(&text)
                .with_context(|| format!("parsing {}", p.display()))?
        }
        None => SynthConfig::default(),
    };
    if let Some(n) = args.n_users {
        cfg.n_users = n;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(f) = args.bias_fraction {
        cfg.target_bias_fraction = f;
    }
    for (name, value) in &args.effects {
        if !["nr", "li", "nfr", "nfo"].contains(&name.as_str()) {
            bail!("unknown feature `{name}` in --effect (expected nr, li, nfr or nfo)");
        }
        cfg.effect_sizes.insert(name.clone(), *value);
    }
    if let Some(sd) = args.noise_sd {
        cfg.noise_sd = sd;
    }
    if let Some(f) = args.format {
        cfg.format = match f {
            Format::YelpLike => SynthFormat::YelpLike,
            Format::TweetLike => SynthFormat::TweetLike,
        };
    }
    let out = generate_population(&cfg, &args.out)?;
    quiet_pipe(writeln!(
        io::stdout(),
        "generated {} users, {} posts, {:.2}% biased in {}",
        out.n_users,
        out.n_posts,
        100.0 * out.truth.biased_fraction(),
        args.out.display()
    ))
}

/// A closed stdout (`osnbias ... | head`) is not an error.
fn quiet_pipe(r: io::Result<()>) -> Result<()> {
    match r {
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest(a) => run_stages(a, &[Stage::Ingest], None),
        Command::Score(a) => run_stages(a, &[Stage::Score], None),
        Command::Label(a) => run_stages(a, &[Stage::Label], None),
        Command::Correlate(a) => run_stages(a, &[Stage::Correlate], None),
        Command::Train(a) => run_stages(a, &[Stage::Train], None),
        Command::Evaluate { stage, model } => {
            run_stages(stage, &[Stage::Evaluate], model.as_deref())
        }
        Command::Pipeline(a) => run_stages(a, &Stage::ALL, None),
        Command::Synth(a) => run_synth(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
