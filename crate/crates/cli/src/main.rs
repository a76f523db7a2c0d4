//! `scaling-path`: solve scaling paths, train networks, and run α/β sweeps.
//!
//! Exit status 0 on success, 2 on usage or input errors, 1 on solver failures;
//! failures print one JSON object `{"error": kind, "message": text}` on stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use scaling_path::experiment::{
    compare_dirs, run_sweep, solve_at, surface_from_file, write_solution, write_surface, write_training, Scale,
    SweepConfig,
};
use scaling_path::gd_trainer::{init_from_grid, train};
use scaling_path::io::fmt_f64;
use scaling_path::Result;

#[derive(Parser, Debug)]
#[command(name = "scaling-path", version, about = "Scaling paths of two-layer ReLU networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// JSON configuration; defaults are used for absent fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir` of the configuration).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve at one scale; 0 gives the rich limit and `inf` the kernel limit.
    SolvePath {
        #[arg(long)]
        alpha: String,
        #[command(flatten)]
        common: Common,
    },
    /// The rich (minimal total mass) limit.
    Rich {
        #[command(flatten)]
        common: Common,
    },
    /// The kernel limit: tangent-kernel interpolation.
    Ntk {
        #[command(flatten)]
        common: Common,
    },
    /// Train the finite network from the grid initialization at scale β.
    TrainGd {
        #[arg(long)]
        beta: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Run the α/β comparison sweep.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a stored measure (or kernel coefficients) on a square grid.
    Eval {
        #[arg(long)]
        solution: PathBuf,
        #[arg(long)]
        resolution: usize,
        /// Output CSV; defaults to `surface.csv` next to the solution.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Compare a stored scaling-path solution with a stored training run.
    Compare {
        #[arg(long)]
        vp: PathBuf,
        #[arg(long)]
        gd: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>, out: Option<&Path>) -> Result<SweepConfig> {
    let mut cfg = match path {
        Some(p) => SweepConfig::load(p)?,
        None => SweepConfig::default(),
    };
    if let Some(o) = out {
        cfg.output_dir = o.to_path_buf();
    }
    Ok(cfg)
}

fn solve_and_write(common: &Common, alpha: Scale) -> Result<serde_json::Value> {
    let cfg = load_config(common.config.as_deref(), common.out.as_deref())?;
    let data = cfg.dataset()?;
    let p = cfg.p_grid()?;
    let grid = cfg.solve_grid(&p)?;
    let sol = solve_at(&cfg, &data, &p, &grid, alpha, None)?;
    write_solution(&cfg.output_dir, &cfg, alpha, &sol)?;
    Ok(serde_json::json!({
        "alpha": alpha,
        "objective": sol.value(),
        "status": sol.status(cfg.feasibility_tol),
        "output_dir": cfg.output_dir,
    }))
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    match cli.command {
        Command::SolvePath { alpha, common } => solve_and_write(&common, alpha.parse()?),
        Command::Rich { common } => solve_and_write(&common, Scale::Finite(0.0)),
        Command::Ntk { common } => solve_and_write(&common, Scale::Infinite),
        Command::TrainGd { beta, common } => {
            let cfg = load_config(common.config.as_deref(), common.out.as_deref())?;
            let data = cfg.dataset()?;
            let p = cfg.p_grid()?;
            let grid = cfg.solve_grid(&p)?;
            let result = train(&init_from_grid(&p, beta)?, &data, &cfg.gd)?;
            write_training(&cfg.output_dir, grid, &result)?;
            Ok(serde_json::json!({
                "beta": beta,
                "converged": result.converged,
                "iterations": result.iterations,
                "final_loss": result.history.last().copied(),
                "output_dir": cfg.output_dir,
            }))
        }
        Command::Sweep { common } => {
            let cfg = load_config(common.config.as_deref(), common.out.as_deref())?;
            let out = run_sweep(&cfg)?;
            let failed = out.records.iter().filter(|r| r.status != "ok").count();
            Ok(serde_json::json!({
                "cells": out.records.len(),
                "cells_with_issues": failed,
                "output_dir": cfg.output_dir,
            }))
        }
        Command::Eval {
            solution,
            resolution,
            output,
            config,
        } => {
            let cfg = load_config(config.as_deref(), None)?;
            let rows = surface_from_file(&cfg, &solution, resolution)?;
            let target = output.unwrap_or_else(|| {
                solution
                    .parent()
                    .map_or_else(|| PathBuf::from("surface.csv"), |d| d.join("surface.csv"))
            });
            write_surface(&target, &rows)?;
            Ok(serde_json::json!({ "rows": rows.len(), "output": target }))
        }
        Command::Compare { vp, gd, config } => {
            let cfg = load_config(config.as_deref(), None)?;
            let r = compare_dirs(&cfg, &vp, &gd)?;
            Ok(serde_json::json!({
                "alpha": r.alpha,
                "beta": r.beta,
                "vp_value": fmt_f64(r.vp_value),
                "gd_value": fmt_f64(r.gd_value),
                "gap": fmt_f64(r.gap),
                "status": r.status,
            }))
        }
    }
}

fn fail(kind: &str, message: String, code: u8) -> ExitCode {
    eprintln!("{}", serde_json::json!({ "error": kind, "message": message }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            return fail("usage", e.to_string().trim().to_string(), 2);
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.kind(), e.to_string(), if e.is_usage() { 2 } else { 1 }),
    }
}
