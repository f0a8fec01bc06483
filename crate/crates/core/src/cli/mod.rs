//! Command-line front end: subcommands, config files, checkpoints and the
//! CSV and PGM artifacts they emit.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::error::Error;

pub use checkpoint::{checkpoint_bytes, load_checkpoint, model_from_checkpoint, save_checkpoint};
pub use commands::{
    cmd_encode, cmd_eval, cmd_generate, cmd_reconstruct, cmd_train, cmd_verify_ot, EvalFlags,
    Metric, Split, VerifyOptions, VerifyReport,
};
pub use config::{DatasetSource, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_VERIFY: i32 = 5;

/// Environment variable that overrides a config's `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "SWAE_OUTPUT_DIR";

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => EXIT_CONFIG,
        Error::NonFinite(_) => EXIT_NUMERIC,
        Error::Dimension(_)
        | Error::Size(_)
        | Error::Idx(_)
        | Error::Checkpoint(_)
        | Error::Io { .. } => EXIT_DATA,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "swae",
    version,
    about = "Train and evaluate symmetric Wasserstein autoencoders"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train from a config file; writes model.ckpt and metrics.csv.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Sample from the prior and decode.
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Originals beside reconstructions for the first test samples.
    Reconstruct {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Latent codes of a split as CSV, for scatter plots.
    Encode {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
        #[arg(long)]
        out: PathBuf,
    },
    /// Append one metric row to a CSV.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        metric: Metric,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 0.3)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        targets: usize,
        #[arg(long, default_value_t = 100)]
        points: usize,
        #[arg(long, default_value_t = 500)]
        n_gen: usize,
        #[arg(long, default_value_t = 2)]
        p: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check that joint and split transport costs agree on random instances.
    VerifyOt {
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long, default_value_t = 4)]
        dim_x: usize,
        #[arg(long, default_value_t = 2)]
        dim_z: usize,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        p: u32,
        #[arg(long, default_value_t = 0.0, hide = true)]
        perturb: f64,
    },
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(command: Command) -> crate::Result<i32> {
    match command {
        Command::Train { config } => {
            let over = std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from);
            let o = cmd_train(&config, over.as_deref())?;
            println!(
                "{} steps, checkpoint {}",
                o.log.steps,
                o.checkpoint.display()
            );
        }
        Command::Generate { ckpt, n, seed, out } => cmd_generate(&ckpt, n, seed, &out)?,
        Command::Reconstruct {
            ckpt,
            config,
            n,
            out,
        } => cmd_reconstruct(&ckpt, &config, n, &out)?,
        Command::Encode {
            ckpt,
            config,
            split,
            out,
        } => cmd_encode(&ckpt, &config, split, &out)?,
        Command::Eval {
            ckpt,
            config,
            metric,
            k,
            sigma,
            seed,
            targets,
            points,
            n_gen,
            p,
            out,
        } => {
            let flags = EvalFlags {
                k,
                sigma,
                seed,
                targets,
                points,
                n_gen,
                p,
            };
            let r = cmd_eval(&ckpt, &config, metric, &flags, &out)?;
            println!("{} = {}", r.metric, r.value);
        }
        Command::VerifyOt {
            n,
            dim_x,
            dim_z,
            trials,
            seed,
            p,
            perturb,
        } => {
            let r = cmd_verify_ot(&VerifyOptions {
                n,
                dim_x,
                dim_z,
                trials,
                seed,
                p,
                perturb,
            })?;
            println!("trials {} max gap {:e}", r.gaps.len(), r.max_gap);
            if !r.passed() {
                eprintln!(
                    "verification failed: gap {:e} exceeds {:e}",
                    r.max_gap,
                    commands::VERIFY_TOLERANCE
                );
                return Ok(EXIT_VERIFY);
            }
        }
    }
    Ok(EXIT_OK)
}
