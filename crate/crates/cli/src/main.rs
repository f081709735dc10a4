//! `proglab`: simulate, prepare, train, baseline, evaluate, saliency, report.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use proglab_core::training::Scheme;
use proglab_core::{Error, ErrorKind, Result};

use commands::{Baseline, EvaluateArgs, PrepareArgs, SaliencyArgs, TrainArgs, Truth};
use manifest::Run;

#[derive(Parser, Debug)]
#[command(name = "proglab", version, about = "Weakly supervised progression detection on synthetic cohorts")]
struct Cli {
    /// Override every config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for batch evaluation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Suppress progress output.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SchemeArg {
    Noisepu,
    Regcon,
    Plain,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Noisepu => Scheme::Noisepu,
            SchemeArg::Regcon => Scheme::Regcon,
            SchemeArg::Plain => Scheme::Plain,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BaselineArg {
    Ols,
    Gpa,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TruthArg {
    Simulator,
    Gpa,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum HeadArg {
    Pu,
    Noise,
    Main,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic cohort.
    Simulate {
        /// TOML simulator config (schema "proglab-sim/1"); defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override a config value, e.g. `--set noise_sd=2.0`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Window a cohort, attach GPA labels and split by subject.
    Prepare {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long, value_enum, default_value = "noisepu")]
        scheme: SchemeArg,
        #[arg(long, default_value_t = 5)]
        tau: usize,
        /// Train,validation,test ratios, e.g. `0.7,0.15,0.15`.
        #[arg(long, value_delimiter = ',', num_args = 3)]
        split: Option<Vec<f64>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a prepared dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// TOML training config (schema "proglab-train/1").
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override a config value, e.g. `--set optimizer.lr=0.005`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        /// Name used in evaluation reports (default: the scheme).
        #[arg(long)]
        name: Option<String>,
        /// Continue from the run directory's checkpoint.
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score the test partition with a clinical baseline.
    Baseline {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        which: BaselineArg,
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare runs on the test partition at matched specificity.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.95)]
        target_specificity: f64,
        /// Confidence level of the reported intervals.
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[arg(long, value_enum, default_value = "simulator")]
        truth: TruthArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Input-gradient saliency map of one observation.
    Saliency {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        partition: String,
        /// Observation key `subject:eye:window` (default: first in partition).
        #[arg(long)]
        key: Option<String>,
        #[arg(long, value_enum)]
        head: Option<HeadArg>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-render an evaluation report from its JSON.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

pub struct Global {
    pub seed: Option<u64>,
    pub quiet: bool,
}

pub fn info(g: &Global, msg: &str) {
    if !g.quiet {
        eprintln!("{msg}");
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numerical => 4,
    }
}

fn dispatch(g: &Global, command: &Command) -> Result<()> {
    let (name, out) = match command {
        Command::Simulate { out, .. } => ("simulate", out),
        Command::Prepare { out, .. } => ("prepare", out),
        Command::Train { out, .. } => ("train", out),
        Command::Baseline { out, .. } => ("baseline", out),
        Command::Evaluate { out, .. } => ("evaluate", out),
        Command::Saliency { out, .. } => ("saliency", out),
        Command::Report { out, .. } => ("report", out),
    };
    let mut run = Run::new(out, name)?;
    let outcome = match command {
        Command::Simulate { config, sets, .. } => commands::simulate(g, &mut run, config.as_deref(), sets),
        Command::Prepare { cohort, scheme, tau, split, .. } => {
            let split = split.as_ref().map(|s| [s[0], s[1], s[2]]);
            commands::prepare(g, &mut run, &PrepareArgs { cohort, scheme: (*scheme).into(), tau: *tau, split })
        }
        Command::Train { data, config, sets, name, resume, .. } => commands::train(
            g,
            &mut run,
            &TrainArgs { data, config: config.as_deref(), sets, name: name.as_deref(), resume: *resume },
        ),
        Command::Baseline { data, which, name, .. } => {
            let which = match which {
                BaselineArg::Ols => Baseline::Ols,
                BaselineArg::Gpa => Baseline::Gpa,
            };
            commands::baseline(g, &mut run, data, which, name.as_deref())
        }
        Command::Evaluate { data, runs, target_specificity, level, truth, .. } => {
            let truth = match truth {
                TruthArg::Simulator => Truth::Simulator,
                TruthArg::Gpa => Truth::Gpa,
            };
            commands::evaluate(
                g,
                &mut run,
                &EvaluateArgs { data, runs, target_specificity: *target_specificity, level: *level, truth },
            )
        }
        Command::Saliency { checkpoint, data, partition, key, head, .. } => {
            let head = head.map(|h| match h {
                HeadArg::Pu => proglab_core::nnet::Head::Pu,
                HeadArg::Noise => proglab_core::nnet::Head::Noise,
                HeadArg::Main => proglab_core::nnet::Head::Main,
            });
            commands::saliency_cmd(g, &mut run, &SaliencyArgs { checkpoint, data, partition, key: key.as_deref(), head })
        }
        Command::Report { input, .. } => commands::report(g, &mut run, input),
    };
    run.finish(&outcome)?;
    outcome
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: --threads: {e}");
            return ExitCode::from(2);
        }
    }
    let g = Global { seed: cli.seed, quiet: cli.quiet };
    match dispatch(&g, &cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
