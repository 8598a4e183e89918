//! Argument parsing and dispatch for the `eqgs` binary.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::checkpoint::config_path;
use crate::commands::{cmd_eval, cmd_generate, cmd_register, cmd_train, format_epoch, report_tsv, similarity_csv, EvalPaths, RegisterInput};
use crate::config::Config;
use crate::selfcheck::run_all;
use crate::{CliError, Result};

#[derive(Parser)]
#[command(name = "eqgs", version, about = "Equivariant graph registration of sparse point clouds")]
pub struct Cli {
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Writes a synthetic dataset.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        overlap: Option<f64>,
    },
    /// Trains a model and writes a checkpoint.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continues from this checkpoint, including optimizer state.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Registers a source cloud onto a target cloud.
    Register {
        #[arg(long)]
        checkpoint: PathBuf,
        src: PathBuf,
        tar: PathBuf,
        #[arg(long)]
        src_descriptors: Option<PathBuf>,
        #[arg(long)]
        tar_descriptors: Option<PathBuf>,
        /// Writes the similarity matrix as CSV, each row led by its 0/1
        /// validity flag.
        #[arg(long)]
        dump_similarity: Option<PathBuf>,
    },
    /// Evaluates a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        profile: Option<String>,
        /// Metric table (TSV); stdout when omitted.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Per-pair metrics (CSV).
        #[arg(long)]
        pairs: Option<PathBuf>,
        /// Directory receiving one similarity CSV per pair.
        #[arg(long)]
        dump_similarity: Option<PathBuf>,
    },
    /// Runs the property suite.
    Selfcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_config(file: Option<&Path>, fallback: Option<&Path>, overrides: &[String]) -> Result<Config> {
    let mut c = match (file, fallback) {
        (Some(f), _) => Config::from_file(f)?,
        (None, Some(f)) => Config::from_file(f)?,
        _ => Config::default(),
    };
    c.apply_overrides(overrides)?;
    Ok(c)
}

fn set(c: &mut Config, key: &str, v: Option<impl ToString>) -> Result<()> {
    match v {
        Some(v) => c.set(key, &v.to_string()).map_err(CliError::Usage),
        None => Ok(()),
    }
}

/// Runs one parsed invocation, writing regular output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let file = cli.config.as_deref();
    match cli.command {
        Command::Generate { out: dir, count, seed, overlap } => {
            let mut c = load_config(file, None, &cli.overrides)?;
            set(&mut c, "seed", seed)?;
            set(&mut c, "overlap", overlap)?;
            for line in cmd_generate(&c, &dir, count)? {
                emit(out, &line)?;
            }
        }
        Command::Train {
            dataset,
            out: ckpt,
            resume,
            epochs,
            seed,
        } => {
            let sidecar = resume.as_deref().map(config_path);
            let mut c = load_config(file, sidecar.as_deref(), &cli.overrides)?;
            set(&mut c, "epochs", epochs)?;
            set(&mut c, "seed", seed)?;
            let mut written = Ok(());
            cmd_train(&c, &dataset, &ckpt, resume.as_deref(), |s| {
                if written.is_ok() {
                    written = emit(out, &format_epoch(s));
                }
            })?;
            written?;
        }
        Command::Register {
            checkpoint,
            src,
            tar,
            src_descriptors,
            tar_descriptors,
            dump_similarity,
        } => {
            let input = RegisterInput {
                checkpoint: &checkpoint,
                src: &src,
                tar: &tar,
                src_descriptors: src_descriptors.as_deref(),
                tar_descriptors: tar_descriptors.as_deref(),
            };
            let (r, lines) = cmd_register(&input)?;
            for line in lines {
                emit(out, &line)?;
            }
            if let Some(p) = dump_similarity {
                std::fs::write(&p, similarity_csv(&r)).map_err(|e| CliError::Io { path: p, source: e })?;
            }
            if !r.rank.registrable {
                return Err(CliError::Unregistrable(format!(
                    "effective rank {} with {} valid similarity rows",
                    r.rank.rank,
                    r.similarity.valid_count()
                )));
            }
        }
        Command::Eval {
            checkpoint,
            dataset,
            profile,
            report,
            pairs,
            dump_similarity,
        } => {
            let mut c = load_config(file, None, &cli.overrides)?;
            set(&mut c, "profile", profile)?;
            let paths = EvalPaths {
                report: report.as_deref(),
                pairs: pairs.as_deref(),
                similarity_dir: dump_similarity.as_deref(),
            };
            let r = cmd_eval(&checkpoint, &dataset, &c, &paths)?;
            if report.is_none() {
                out.write_all(report_tsv(&r.report).as_bytes()).map_err(|e| CliError::io("<stdout>", e))?;
            }
        }
        Command::Selfcheck { seed } => {
            load_config(file, None, &cli.overrides)?;
            let outcomes = run_all(seed);
            for o in &outcomes {
                emit(out, &o.to_string())?;
            }
            let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name).collect();
            if !failed.is_empty() {
                return Err(CliError::CheckFailed(failed.join(", ")));
            }
        }
    }
    Ok(())
}

fn emit(out: &mut dyn Write, line: &str) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| CliError::io("<stdout>", e))
}

/// Worker count requested through `EQGS_THREADS`; unset or unparsable
/// values leave the default pool alone, zero means one.
pub fn thread_cap(value: Option<&str>) -> Option<usize> {
    value.and_then(|v| v.trim().parse::<usize>().ok()).map(|n| n.max(1))
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Errors go to `err` as one `error: …` line.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = err.write_all(text.as_bytes());
                1
            } else {
                let _ = out.write_all(text.as_bytes());
                0
            };
        }
    };
    match run(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
