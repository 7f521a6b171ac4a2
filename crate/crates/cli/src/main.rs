//! `sdm`: train, sweep, sample, evaluate and report sparse diffusion runs.
//!
//! Failures print a single line `error[<category>]: <message>` to stderr and
//! exit with status 1 (status 2 for usage errors).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sdm_core::experiments::record::emit_metrics;
use sdm_core::experiments::run::{generate_samples, resume_experiment, run_experiment};
use sdm_core::experiments::sweep::report_csv;
use sdm_core::experiments::{load_checkpoint, load_config, load_grid, report, run_sweep, SampleSet};
use sdm_core::metrics::quality_report;
use sdm_core::{Error, Result, Rng};

#[derive(Parser)]
#[command(name = "sdm", version, about = "Sparse-to-sparse diffusion model training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration, then sample and evaluate it.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory [default: runs/<run name>].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from a checkpoint instead of starting fresh; `--config` must match it.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run the cross-product of a grid file.
    Sweep {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Draw DDIM samples from a checkpoint.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        steps: usize,
        #[arg(long, default_value_t = 0.0)]
        eta: f64,
        /// Sampling seed [default: the checkpoint's seed].
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "samples.bin")]
        out: PathBuf,
    },
    /// Fréchet distance and KID between two sample files.
    Eval {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long, default_value_t = 500)]
        kid_block: usize,
    },
    /// Aggregate a sweep directory into report.csv.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Train { config, out, resume } => {
            let config = load_config(&config)?;
            let artifacts = match resume {
                Some(path) => {
                    let checkpoint = load_checkpoint(&path)?;
                    if checkpoint.config != config {
                        return Err(Error::Config(format!(
                            "{} was written for a different config",
                            path.display()
                        )));
                    }
                    resume_experiment(&checkpoint)?
                }
                None => run_experiment(&config)?,
            };
            let dir = out.unwrap_or_else(|| PathBuf::from("runs").join(config.run_name()));
            emit_metrics(&artifacts.record, Some(&artifacts.samples), &dir)?;
            artifacts.checkpoint.save(dir.join("checkpoint.sdmc"))?;
            let r = &artifacts.record;
            let frechet = r.frechet().map_or("n/a".to_string(), |f| format!("{f:.6}"));
            println!(
                "{}: frechet {frechet}, params {:.4}x, train flops {:.4}x, {:.1}s -> {}",
                r.name,
                r.params.ratio,
                r.flops.train_ratio,
                r.wall_clock.train_secs,
                dir.display()
            );
        }
        Command::Sweep { grid, out, jobs } => {
            let grid = load_grid(&grid)?;
            let runs = run_sweep(&grid, &out, jobs)?;
            let failed: Vec<_> = runs.iter().filter(|r| r.outcome.is_err()).collect();
            for r in &failed {
                eprintln!("{}: {}", r.dir.display(), r.outcome.as_ref().err().unwrap());
            }
            println!(
                "{} runs, {} failed; summary in {}",
                runs.len(),
                failed.len(),
                out.join("summary.csv").display()
            );
        }
        Command::Sample {
            checkpoint,
            n,
            steps,
            eta,
            seed,
            out,
        } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            let mut rng = Rng::new(seed.unwrap_or(ckpt.config.seed));
            let samples = generate_samples(
                &ckpt.model,
                &ckpt.standardization,
                &ckpt.config,
                n,
                steps,
                eta,
                &mut rng,
            )?;
            samples.save(&out)?;
            println!("{} samples of shape {:?} -> {}", n, &samples.shape[1..], out.display());
        }
        Command::Eval {
            samples,
            reference,
            kid_block,
        } => {
            let a = SampleSet::load(&samples)?;
            let b = SampleSet::load(&reference)?;
            if a.shape[1..] != b.shape[1..] {
                return Err(Error::Dimension(format!(
                    "sample shapes {:?} and {:?} differ",
                    &a.shape[1..],
                    &b.shape[1..]
                )));
            }
            let q = quality_report(&a.values, &b.values, a.dim(), kid_block)?;
            println!("{}", serde_json::to_string_pretty(&q)?);
        }
        Command::Report { dir } => {
            let rows = report(&dir)?;
            print!("{}", report_csv(&rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e)
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) =>
        {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("error[usage]: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.category(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
