use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cpmu_core::conformal::CalibrationRecord;
use cpmu_core::cpmu::{format_trace, unlearn};
use cpmu_core::data::write_dataset;
use cpmu_core::harness::{
    apply_method, cpmu_config, load_data, prepare, run_ablation, run_experiment, ExperimentConfig,
    Method, Sweep,
};
use cpmu_core::metrics::{evaluate_all, evaluation_calibration};
use cpmu_core::model::{read_params, write_params};
use cpmu_core::{Error, Result};

/// Conformal unlearning experiments on synthetic data.
#[derive(Parser)]
#[command(name = "cpmu", version)]
struct Cli {
    /// Experiment config (key=value lines); defaults apply otherwise.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Write the dataset of one seed.
    GenData,
    /// Train the original model of one seed.
    Train,
    /// Apply the configured method to a trained model.
    Unlearn {
        /// Original model; defaults to `theta_o_seed<s>.params` in the output directory.
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Calibrate and write the metric report of a model.
    Evaluate {
        /// Model to evaluate; defaults to `theta_u_seed<s>.params`.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Original model used to rebuild the split; defaults to `theta_o_seed<s>.params`.
        #[arg(long)]
        original: Option<PathBuf>,
        /// Compare against a stored calibration record.
        #[arg(long)]
        audit: Option<PathBuf>,
    },
    /// Run every seed and write per-seed and aggregate tables.
    Experiment,
    /// Sweep one setting over a grid.
    Ablation {
        /// c, alpha, lambda or reg_norm.
        #[arg(long)]
        sweep: String,
        /// Comma-separated grid values.
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<String>,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p).map_err(|e| match e {
            Error::Io(io) => Error::config("--config", format!("{}: {io}", p.display())),
            other => other,
        })?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn written(path: &Path) {
    println!("wrote {}", path.display());
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let seed = cfg.seeds[0];
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir)?;
    let theta_o_path = dir.join(format!("theta_o_seed{seed}.params"));
    let theta_u_path = dir.join(format!("theta_u_seed{seed}.params"));

    match cli.verb {
        Verb::GenData => {
            let path = dir.join(format!("data_seed{seed}.txt"));
            write_dataset(&path, &load_data(&cfg, seed)?)?;
            written(&path);
        }
        Verb::Train => {
            let p = prepare(&cfg, seed, None)?;
            write_params(&theta_o_path, &p.theta_o)?;
            written(&theta_o_path);
        }
        Verb::Unlearn { params } => {
            let theta_o = read_params(params.as_deref().unwrap_or(&theta_o_path))?;
            let p = prepare(&cfg, seed, Some(&theta_o))?;
            if cfg.method == Method::Cpmu {
                let (theta_u, trace) = unlearn(
                    &p.theta_o,
                    &p.bundle.unlearning_data(),
                    &cpmu_config(&cfg, seed),
                )?;
                write_params(&theta_u_path, &theta_u)?;
                let trace_path = dir.join(format!("trace_seed{seed}.tsv"));
                fs::write(&trace_path, format_trace(&trace))?;
                written(&trace_path);
            } else {
                write_params(&theta_u_path, &apply_method(&cfg, &p)?.theta_u)?;
            }
            written(&theta_u_path);
        }
        Verb::Evaluate {
            params,
            original,
            audit,
        } => {
            let model = read_params(params.as_deref().unwrap_or(&theta_u_path))?;
            let original_path = original.unwrap_or(theta_o_path);
            let theta_o = if original_path.exists() {
                read_params(&original_path)?
            } else {
                model.clone()
            };
            let p = prepare(&cfg, seed, Some(&theta_o))?;
            let stored = match &audit {
                Some(a) => Some(CalibrationRecord::parse(&fs::read_to_string(a)?)?),
                None => None,
            };
            let alpha = cfg.eval.alpha;
            for (c, d) in cfg.eval.pairs() {
                let report = evaluate_all(&model, &p.bundle, alpha, c, d)?;
                let path = dir.join(format!("metrics_seed{seed}_c{c}_d{d}.txt"));
                fs::write(&path, report.to_kv_text(false))?;
                written(&path);
            }
            let record = evaluation_calibration(&model, &p.bundle, alpha)?.record();
            let path = dir.join(format!("calibration_seed{seed}.txt"));
            fs::write(&path, record.to_text())?;
            written(&path);
            if let Some(stored) = stored {
                let same = stored.alpha == record.alpha
                    && stored.n == record.n
                    && stored.q_hat == record.q_hat
                    && stored.nearest_id == record.nearest_id;
                if !same {
                    return Err(Error::Format(format!(
                        "audit mismatch: stored q_hat={} nearest_id={}, recomputed q_hat={} nearest_id={}",
                        stored.q_hat, stored.nearest_id, record.q_hat, record.nearest_id
                    )));
                }
                println!(
                    "audit ok: q_hat={} nearest_id={}",
                    record.q_hat, record.nearest_id
                );
            }
        }
        Verb::Experiment => {
            let res = run_experiment(&cfg)?;
            for s in &res.seeds {
                for r in &s.reports {
                    println!(
                        "seed {} c={} d={} h_ce={:.4} beta_hat={}",
                        s.seed, r.c, r.d, r.h_ce, r.beta_hat
                    );
                }
            }
            written(&res.output_dir.join("aggregate.csv"));
        }
        Verb::Ablation { sweep, grid } => {
            let sweep: Sweep = sweep.parse()?;
            let res = run_ablation(&cfg, sweep, &grid)?;
            written(&res.path);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config { .. } => 2,
                ref e if e.is_numeric() => 3,
                _ => 1,
            })
        }
    }
}
