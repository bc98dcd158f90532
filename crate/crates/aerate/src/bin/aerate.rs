//! Command-line front end: single trials, replication benches, table
//! rendering of emitted reports, and hyperparameter sweeps.
//!
//! Exit codes: 0 success, 2 configuration error (bad file, bad key, bad
//! report), 3 bench completed with failed cells.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use aerate::config::{load_file, load_grid, resolve_grid, ConfigError, Overrides};
use aerate::engine::run_trial;
use aerate::harness::{
    emit_report, parse_report, render_table, run_bench, sensitivity_sweep, AggregateReport,
};
use aerate::testing::TestMode;

#[derive(Parser)]
#[command(
    name = "aerate",
    version,
    about = "Adaptive experiment simulator for average treatment effect estimation"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a single trial and print its trajectory.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the configured trial seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Use the generated covariate table for surface datasets.
        #[arg(long)]
        synthetic_ihdp: bool,
    },
    /// Run the Monte Carlo bench and write a CSV report.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the configured replication count.
        #[arg(long)]
        reps: Option<usize>,
        /// Override the worker count (0 = all cores, 1 = sequential).
        #[arg(long)]
        workers: Option<usize>,
        /// Override the configured base seed source.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        synthetic_ihdp: bool,
    },
    /// Render an emitted CSV report as an aligned table.
    Table {
        #[arg(long)]
        report: PathBuf,
    },
    /// Cross-product bench over a hyperparameter grid file.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        /// Write the swept report here instead of printing the table.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        synthetic_ihdp: bool,
    },
}

fn config_fail(e: ConfigError) -> ExitCode {
    eprintln!("config error: {e}");
    ExitCode::from(2)
}

fn report_outcome(report: &AggregateReport) -> ExitCode {
    if report.failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        for f in &report.failed {
            eprintln!("failed cell {}: {} trial(s), first: {}", f.cell, f.failures, f.diagnostic);
        }
        ExitCode::from(3)
    }
}

fn cmd_run(config: PathBuf, seed: Option<u64>, synthetic_ihdp: bool) -> ExitCode {
    let ov = Overrides { seed, synthetic_ihdp, ..Default::default() };
    let setup = match load_file(&config).and_then(|f| f.resolve_trial(&ov)) {
        Ok(s) => s,
        Err(e) => return config_fail(e),
    };
    let result = match run_trial(&setup.trial, &setup.dataset) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("trial failed: {e}");
            return ExitCode::FAILURE;
        }
    };
    println!("# design={} estimator={} seed={}", setup.trial.design, setup.trial.estimator, setup.trial.seed);
    println!("t,action,pi,theta,sigma_sq,lil_boundary");
    for (i, rec) in result.trajectory.iter().enumerate() {
        let b = rec
            .lil_boundary
            .map(|q| format!("{q:.4}"))
            .unwrap_or_else(|| "-".to_string());
        println!("{},{},{:.6},{:.6},{:.6},{b}", i + 1, rec.action, rec.pi1, rec.theta, rec.sigma_sq);
    }
    let est = &result.final_estimates;
    println!("# true_ate {:.6}", result.true_ate);
    println!(
        "# final a2ipw {:.6} adaipw {:.6} ma2ipw {:.6} dm {:.6} sigma_hat_sq {:.6}",
        est.a2ipw, est.adaipw, est.ma2ipw, est.dm, result.sigma_hat_sq
    );
    println!("# lil rejected={} stop={}", result.lil_rejected, result.lil_stopping_time);
    for look in &result.bf_looks {
        println!("# bf look t={} p={:.6} rejected={}", look.round, look.p_value, look.rejected);
    }
    println!("# bf rejected={} stop={}", result.bf_rejected, result.bf_stopping_time);
    if setup.trial.stop_on_reject {
        let stopped = match setup.trial.test.mode {
            TestMode::Lil => result.lil_rejected,
            TestMode::Bonferroni => result.bf_rejected,
            TestMode::Fixed => false,
        };
        println!("# early_stop={stopped}");
    }
    ExitCode::SUCCESS
}

fn cmd_bench(
    config: PathBuf,
    out: PathBuf,
    reps: Option<usize>,
    workers: Option<usize>,
    seed: Option<u64>,
    synthetic_ihdp: bool,
) -> ExitCode {
    let ov = Overrides { seed, reps, workers, synthetic_ihdp };
    let cfg = match load_file(&config).and_then(|f| f.resolve_bench(&ov)) {
        Ok(c) => c,
        Err(e) => return config_fail(e),
    };
    let report = match run_bench(&cfg) {
        Ok(r) => r,
        Err(e) => return config_fail(e.into()),
    };
    if let Err(e) = emit_report(&report, &out) {
        eprintln!("cannot write {}: {e}", out.display());
        return ExitCode::FAILURE;
    }
    println!(
        "{} rows ({} cells x {} horizons, {} reps) -> {}",
        report.rows.len(),
        cfg.cells.len(),
        cfg.horizons.len(),
        cfg.reps,
        out.display()
    );
    report_outcome(&report)
}

fn cmd_table(report: PathBuf) -> ExitCode {
    match parse_report(&report) {
        Ok(r) => {
            print!("{}", render_table(&r));
            ExitCode::SUCCESS
        }
        Err(e) => config_fail(e.into()),
    }
}

fn cmd_sweep(
    config: PathBuf,
    grid: PathBuf,
    out: Option<PathBuf>,
    workers: Option<usize>,
    synthetic_ihdp: bool,
) -> ExitCode {
    let ov = Overrides { workers, synthetic_ihdp, ..Default::default() };
    let setup = load_file(&config)
        .and_then(|f| f.resolve_bench(&ov))
        .and_then(|cfg| {
            let g = load_grid(&grid).and_then(|g| resolve_grid(&g, &cfg.base))?;
            Ok((cfg, g))
        });
    let (cfg, grid) = match setup {
        Ok(s) => s,
        Err(e) => return config_fail(e),
    };
    let report = match sensitivity_sweep(&cfg, &grid) {
        Ok(r) => r,
        Err(e) => return config_fail(e.into()),
    };
    match out {
        Some(path) => {
            if let Err(e) = emit_report(&report, &path) {
                eprintln!("cannot write {}: {e}", path.display());
                return ExitCode::FAILURE;
            }
            println!("{} rows over {} grid point(s) -> {}", report.rows.len(), grid.len(), path.display());
        }
        None => print!("{}", render_table(&report)),
    }
    report_outcome(&report)
}

fn main() -> ExitCode {
    match Cli::parse().cmd {
        Cmd::Run { config, seed, synthetic_ihdp } => cmd_run(config, seed, synthetic_ihdp),
        Cmd::Bench { config, out, reps, workers, seed, synthetic_ihdp } => {
            cmd_bench(config, out, reps, workers, seed, synthetic_ihdp)
        }
        Cmd::Table { report } => cmd_table(report),
        Cmd::Sweep { config, grid, out, workers, synthetic_ihdp } => {
            cmd_sweep(config, grid, out, workers, synthetic_ihdp)
        }
    }
}
