use std::path::PathBuf;
use std::process::ExitCode;

use cgap2_cli::{
    cmd_ablate, cmd_classify_stream, cmd_eval, cmd_generate, cmd_train, Axis, CliError, CliResult, RunConfig,
    TrainPhase,
};
use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "cgap2", version, about = "Anticipatory gesture recognition from synthetic multi-view video")]
struct Cli {
    /// JSON run configuration; omitted fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for data, initialisation and batching.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Config override `key.path=value`, repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render the synthetic dataset into --out.
    Generate {
        #[arg(long)]
        overwrite: bool,
    },
    /// Run one training phase, or all three in order.
    Train {
        #[arg(long, value_enum)]
        phase: TrainPhase,
        /// Checkpoint to resume from (defaults to the previous phase's in --out).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Per-class MPJPE and classifier accuracy on the validation split.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Phase-1 sweep over gap, context length or temporal depth.
    Ablate {
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated sweep values.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<usize>>,
        /// Phase-0 checkpoint shared by every cell; trained once if absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Classify every window of one sequence in stream order.
    ClassifyStream {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Sequence id; defaults to the first validation sequence.
        #[arg(long)]
        sequence: Option<usize>,
        #[arg(long, default_value_t = 1)]
        hop: usize,
    },
}

fn config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg = cfg.with_overrides(&cli.set)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = Some(out.clone());
    }
    cfg.resolve()
}

fn threads() -> CliResult<()> {
    if let Ok(raw) = std::env::var("CGAP2_THREADS") {
        let n: usize = raw
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Usage(format!("CGAP2_THREADS={raw:?} is not a positive integer")))?;
        cgap2_tensor::exec::init_threads(n);
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    threads()?;
    let cfg = config(&cli)?;
    match cli.command {
        Command::Generate { overwrite } => {
            let m = cmd_generate(&cfg, overwrite)?;
            println!("wrote {} sequences to {}", m.sequences.len(), cfg.out_dir()?.display());
        }
        Command::Train { phase, checkpoint } => {
            for r in cmd_train(&cfg, phase, checkpoint.as_deref())? {
                println!(
                    "{}: final val {} {:.4} after {} epochs",
                    r.phase.name(),
                    r.metric,
                    r.final_metric(),
                    r.epochs.len()
                );
            }
        }
        Command::Eval { checkpoint } => {
            let s = cmd_eval(&cfg, checkpoint.as_deref())?;
            print!("{}", s.pose.to_csv());
            println!(
                "accuracy {:.4} (historical only {:.4}, chance {:.4})",
                s.accuracy, s.historical_only_accuracy, s.chance
            );
        }
        Command::Ablate { axis, values, checkpoint } => {
            let r = cmd_ablate(&cfg, axis, values.as_deref(), checkpoint.as_deref())?;
            print!("{}", r.summary_csv());
        }
        Command::ClassifyStream { checkpoint, sequence, hop } => {
            let r = cmd_classify_stream(&cfg, &checkpoint, sequence, hop)?;
            println!(
                "sequence {} (class {}): {} windows, {:.1} windows/s",
                r.sequence,
                r.class_id,
                r.rows.len(),
                r.windows_per_second
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
