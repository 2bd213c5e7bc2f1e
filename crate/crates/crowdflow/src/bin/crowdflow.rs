//! Command-line front end. All logic lives in the library; this binary
//! parses arguments, loads the config, and dispatches.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 numerical degeneracy.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crowdflow::commands::{
    cmd_eval_count, cmd_eval_track, cmd_gradcheck, cmd_simulate, cmd_track, cmd_train, CommandOpts,
};
use crowdflow::config::Config;
use crowdflow::Error;

#[derive(Parser)]
#[command(
    name = "crowdflow",
    about = "Video-level crowd counting and tracking on synthetic moving-camera scenes",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Key-value configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for per-clip parallelism; 1 guarantees bitwise
    /// reproducible outputs.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Emit per-pair solver diagnostics as JSON lines.
    #[arg(long)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scenes and rendered clips.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the matcher on rendered clips.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory holding clip_* subdirectories.
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint file to write.
        #[arg(long)]
        out: PathBuf,
        /// Resume from an existing checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Verify pipeline gradients against finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Central-difference step size.
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
    },
    /// Evaluate video-level counting on rendered clips.
    EvalCount {
        #[command(flatten)]
        common: Common,
        /// Trained checkpoint; optional with --oracle.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Bypass the learned matcher and use ground-truth identities.
        #[arg(long)]
        oracle: bool,
    },
    /// Produce tracks for every clip.
    Track {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Bypass the learned matcher and use ground-truth identities.
        #[arg(long)]
        oracle: bool,
    },
    /// Score a predicted track file against a ground-truth track file.
    EvalTrack {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(common: &Common) -> crowdflow::Result<Config> {
    match &common.config {
        Some(path) => Config::load(path),
        None => Ok(Config::default()),
    }
}

fn opts(common: &Common, oracle: bool) -> CommandOpts {
    CommandOpts {
        seed: common.seed,
        threads: common.threads,
        verbose: common.verbose,
        oracle,
    }
}

fn run(cli: Cli) -> crowdflow::Result<()> {
    match cli.command {
        Command::Simulate { common, out } => {
            let cfg = load_config(&common)?;
            let manifest = cmd_simulate(&cfg, &out, &opts(&common, false))?;
            println!(
                "simulated {} clip(s) into {}",
                manifest.config.clips,
                out.display()
            );
        }
        Command::Train {
            common,
            data,
            out,
            resume,
        } => {
            let cfg = load_config(&common)?;
            let ckpt = cmd_train(&cfg, &data, &out, resume.as_deref(), &opts(&common, false))?;
            println!("trained to step {} -> {}", ckpt.step, out.display());
        }
        Command::Gradcheck { common, eps } => {
            let cfg = load_config(&common)?;
            cmd_gradcheck(&cfg, eps, &opts(&common, false))?;
        }
        Command::EvalCount {
            common,
            checkpoint,
            data,
            out,
            oracle,
        } => {
            let cfg = load_config(&common)?;
            let report = cmd_eval_count(
                &cfg,
                checkpoint.as_deref(),
                &data,
                &out,
                &opts(&common, oracle),
            )?;
            println!(
                "mae {:.3} rmse {:.3} wrae {:.2}% miae {:.3} moae {:.3}",
                report.mae, report.rmse, report.wrae_percent, report.miae, report.moae
            );
        }
        Command::Track {
            common,
            checkpoint,
            data,
            out,
            oracle,
        } => {
            let cfg = load_config(&common)?;
            let files = cmd_track(
                &cfg,
                checkpoint.as_deref(),
                &data,
                &out,
                &opts(&common, oracle),
            )?;
            println!("wrote {} track file(s) into {}", files.len(), out.display());
        }
        Command::EvalTrack {
            common,
            pred,
            gt,
            out,
        } => {
            let cfg = load_config(&common)?;
            let report = cmd_eval_track(&cfg, &pred, &gt, &out, &opts(&common, false))?;
            println!(
                "mota {:.3} idf1 {:.3} idsw {} fp {} fn {}",
                report.mota,
                report.idf1,
                report.id_switches,
                report.false_positives,
                report.false_negatives
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let code = match &err {
                Error::Config(_) => 1,
                Error::Degenerate(_) => 3,
                _ => 2,
            };
            ExitCode::from(code as u8)
        }
    }
}
