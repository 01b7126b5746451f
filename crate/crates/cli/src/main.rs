use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gesturegen::commands::{self, GenerateRequest};
use gesturegen::generator::SchedulePolicy;
use gesturegen::{ErrorCategory, ModeChangeLabel, RunConfig};

/// Relative output paths are resolved under this directory when it is set.
const OUTPUT_ROOT_ENV: &str = "GESTUREGEN_OUTPUT_DIR";

#[derive(Parser)]
#[command(name = "gesturegen", version, about = "Speech-driven 2D gesture generation")]
struct Cli {
    #[command(flatten)]
    settings: Settings,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Settings {
    /// TOML run configuration, layered over the built-in defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one setting, e.g. `--set train.epochs=50`. Repeatable;
    /// applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset with scripted posture switches.
    MakeToy {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Turn landmark and audio files into train/val/test sample files.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train both branches on a preprocessed dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate motion for an audio file from a checkpoint.
    Generate(GenerateArgs),
    /// Score a checkpoint, or the ground truth, on a split file.
    Evaluate {
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Score the reference motion itself (baselines only).
        #[arg(long)]
        ground_truth: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Exchange the rhythmic dynamics of two landmark files.
    SwapDemo {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        out_a: PathBuf,
        #[arg(long)]
        out_b: PathBuf,
    },
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// WAV file or waveform container.
    #[arg(long)]
    audio: PathBuf,
    /// Output landmark file, or a directory when `--count` is given.
    #[arg(long)]
    out: PathBuf,
    /// Word timings (`word<TAB>start<TAB>end` per line) for the keyword policy.
    #[arg(long)]
    transcript: Option<PathBuf>,
    #[arg(long, value_enum)]
    policy: Option<Policy>,
    /// Comma-separated 0/1 labels for the explicit policy.
    #[arg(long, value_delimiter = ',')]
    labels: Option<Vec<u8>>,
    #[arg(long)]
    speaker: Option<String>,
    /// Landmark file whose last clip conditions the first step.
    #[arg(long)]
    initial_pose: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Generate this many consecutive seeds and report their diversity.
    #[arg(long)]
    count: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    Keyword,
    FixedInterval,
    Explicit,
}

impl From<Policy> for SchedulePolicy {
    fn from(p: Policy) -> Self {
        match p {
            Policy::Keyword => SchedulePolicy::Keyword,
            Policy::FixedInterval => SchedulePolicy::FixedInterval,
            Policy::Explicit => SchedulePolicy::Explicit,
        }
    }
}

/// A bad invocation that clap cannot see, e.g. a flag that does not apply.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if let Some(err) = cause.downcast_ref::<gesturegen::Error>() {
            return match err.category() {
                ErrorCategory::Usage => 1,
                ErrorCategory::Data => 2,
                ErrorCategory::Numeric => 3,
            };
        }
    }
    2
}

fn output_path(p: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if p.is_relative() && !root.is_empty() => Path::new(&root).join(p),
        _ => p.to_path_buf(),
    }
}

fn run_config(settings: &Settings) -> anyhow::Result<RunConfig> {
    let base = match &settings.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let cfg = RunConfig::with_overrides(&base, &settings.overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Commands that start from a checkpoint take their settings from it.
fn reject_config_file(settings: &Settings, command: &str) -> anyhow::Result<()> {
    if settings.config.is_some() {
        bail!(UsageError(format!("{command} reads its settings from the checkpoint; use --set to adjust them")));
    }
    Ok(())
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("value serializes"));
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let settings = &cli.settings;
    match cli.command {
        Command::MakeToy { out, seed } => {
            let cfg = run_config(settings)?;
            let out = output_path(&out);
            let script = commands::cmd_make_toy(&cfg, seed, &out)?;
            let switches: usize = script.segments.iter().map(|s| s.switches.iter().filter(|&&b| b).count()).sum();
            println!("wrote {} segments ({switches} posture switches) to {}", script.segments.len(), out.display());
        }
        Command::Preprocess { input, out } => {
            let cfg = run_config(settings)?;
            let out = output_path(&out);
            let manifest = commands::cmd_preprocess(&input, &out, &cfg)?;
            println!(
                "train/val/test samples: {}/{}/{}; {} skipped inputs; written to {}",
                manifest.counts[0],
                manifest.counts[1],
                manifest.counts[2],
                manifest.issues.len(),
                out.display()
            );
            for issue in &manifest.issues {
                eprintln!("skipped {}: {}", issue.segment_id, issue.message);
            }
        }
        Command::Train { data, out } => {
            let cfg = run_config(settings)?;
            let out = output_path(&out);
            let summary = commands::cmd_train(&data, &out, &cfg)?;
            print_json(&summary);
        }
        Command::Generate(args) => {
            reject_config_file(settings, "generate")?;
            let explicit = args
                .labels
                .as_ref()
                .map(|ls| ls.iter().map(|&b| ModeChangeLabel::from_bit(b)).collect::<Result<Vec<_>, _>>())
                .transpose()?;
            let req = GenerateRequest {
                transcript: args.transcript,
                policy: args.policy.map(Into::into),
                explicit,
                speaker: args.speaker,
                initial_pose: args.initial_pose,
                seed: args.seed,
            };
            let out = output_path(&args.out);
            match args.count {
                Some(count) => {
                    let summary = commands::cmd_generate_batch(
                        &args.checkpoint,
                        &args.audio,
                        &req,
                        &settings.overrides,
                        count,
                        &out,
                    )?;
                    print_json(&summary);
                }
                None => {
                    let meta = commands::cmd_generate(&args.checkpoint, &args.audio, &req, &settings.overrides, &out)?;
                    print_json(&meta);
                }
            }
        }
        Command::Evaluate { split, checkpoint, ground_truth, out } => {
            reject_config_file(settings, "evaluate")?;
            if checkpoint.is_none() && !ground_truth {
                bail!(UsageError("evaluate needs --checkpoint or --ground-truth".into()));
            }
            let out = output_path(&out);
            let report = commands::cmd_evaluate(checkpoint.as_deref(), &split, &settings.overrides, ground_truth, &out)
                .with_context(|| format!("evaluating {}", split.display()))?;
            print_json(&report);
        }
        Command::SwapDemo { a, b, out_a, out_b } => {
            let (out_a, out_b) = (output_path(&out_a), output_path(&out_b));
            commands::cmd_swap_demo(&a, &b, &out_a, &out_b)?;
            println!("wrote {} and {}", out_a.display(), out_b.display());
        }
    }
    Ok(())
}
