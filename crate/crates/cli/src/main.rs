//! Command-line front end: train, stylize, reconstruct, gradcheck, and
//! eval-separation, with the exit-code contract 0 = success, 1 = usage,
//! 2 = configuration, 3 = runtime/numeric failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use peerstyle::config::RunConfig;
use peerstyle::runner::{self, GradScope};
use peerstyle::{AppError, Result};

#[derive(Parser)]
#[command(name = "peerstyle", version, about = "Peer-regularized arbitrary style transfer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run or resume training, writing a log, manifest, and checkpoints.
    Train {
        /// Configuration file (TOML). Missing keys take desk-scale defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for the log, manifest, and checkpoints.
        #[arg(long, default_value = "run")]
        out: PathBuf,
        /// Master seed, overriding the configuration file.
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many steps in this invocation (smoke-run cap).
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Apply the style of one image to the content of another.
    Stylize {
        #[arg(long)]
        checkpoint: PathBuf,
        content: PathBuf,
        style: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct an image through self-transfer, optionally zeroing a
    /// latent part to probe what it carries.
    Reconstruct {
        #[arg(long)]
        checkpoint: PathBuf,
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Zero the content part of the recombined code before decoding.
        #[arg(long)]
        zero_content: bool,
        /// Zero the style parts of the recombined code before decoding.
        #[arg(long)]
        zero_style: bool,
    },
    /// Check analytic gradients against central finite differences.
    Gradcheck {
        /// Which suite to run.
        #[arg(value_enum, default_value_t = ScopeArg::All)]
        scope: ScopeArg,
    },
    /// Report intra-class and inter-class style-code distances.
    EvalSeparation {
        /// Configuration file naming the dataset (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Score this checkpoint; without one, the untrained network.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Images drawn per style class.
        #[arg(long, default_value_t = 8)]
        samples: usize,
        /// Seed for drawing the evaluation images.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    Op,
    Network,
    Loss,
    All,
}

impl From<ScopeArg> for GradScope {
    fn from(s: ScopeArg) -> GradScope {
        match s {
            ScopeArg::Op => GradScope::Op,
            ScopeArg::Network => GradScope::Network,
            ScopeArg::Loss => GradScope::Loss,
            ScopeArg::All => GradScope::All,
        }
    }
}

fn load_config(path: Option<&PathBuf>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, out, seed, resume, steps } => {
            let cfg = load_config(config.as_ref(), seed)?;
            let summary = runner::run_train(&cfg, &out, resume.as_deref(), steps, false)?;
            println!(
                "trained steps {}..{} of {}; checkpoint {}",
                summary.start_step,
                summary.end_step,
                summary.total_steps,
                summary.checkpoint_path.display()
            );
            Ok(())
        }
        Command::Stylize { checkpoint, content, style, out } => {
            runner::run_stylize(&checkpoint, &content, &style, &out)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Reconstruct { checkpoint, image, out, zero_content, zero_style } => {
            runner::run_reconstruct(&checkpoint, &image, &out, zero_content, zero_style)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Gradcheck { scope } => {
            if runner::run_gradcheck(scope.into(), false)? {
                Ok(())
            } else {
                Err(AppError::Runtime(String::from("gradient check failed")))
            }
        }
        Command::EvalSeparation { config, checkpoint, samples, seed } => {
            let cfg = load_config(config.as_ref(), None)?;
            let (intra, inter) =
                runner::run_eval_separation(&cfg, checkpoint.as_deref(), samples, seed)?;
            println!("intra {intra:.6} inter {inter:.6} ratio {:.6}", inter / intra.max(1e-12));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    // clap's own error exit code is 2; the contract reserves 2 for
    // configuration problems, so usage errors are mapped by hand.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            let code = if e.use_stderr() { 1 } else { 0 };
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
