//! Command-line surface. Exit codes: 0 success, 1 invalid input, 2 runtime
//! failure (non-finite state, oracle mismatch, I/O), 3 when
//! `check-stability` finds a failing step.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::config::{export_config, parse_config};
use crate::error::{ExperimentError, IoError, ModelError};
use crate::experiments::{
    builtin, capacity_gap_study, convergence_study, kappa_sweep, run_all, CAPACITY_GAP_MU1, CONVERGENCE_N,
    SWEEP_ETA_TILDE, SWEEP_H, SWEEP_KAPPAS,
};
use crate::oracle::oracle_smallcase;
use crate::output::{write_capacity_gap, write_convergence, write_kappa_sweep, write_plot_script, write_trajectory, CsvRecorder};
use crate::scenario::Scenario;
use crate::simulate::{simulate, Trajectory};

pub const OUT_DIR_ENV: &str = "PRODLINE_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "prodline", version, about = "Serial production line simulation with Lyapunov-based boundary feedback")]
pub struct Cli {
    /// Output directory for CSV files and plot scripts.
    #[arg(long, global = true, env = OUT_DIR_ENV, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario file and write its trajectory CSV.
    Simulate { config: PathBuf },
    /// Decay rate and error-norm convergence table.
    Converge {
        #[arg(long, default_value_t = 1.0)]
        v: f64,
        #[arg(long, default_value_t = 0.575)]
        eta: f64,
        /// Processor counts N (h = 1/(2N)).
        #[arg(long, value_delimiter = ',', default_values_t = CONVERGENCE_N)]
        n: Vec<usize>,
    },
    /// Mixed-law runs for a list of gains with eta = -ln(kappa)/l.
    SweepKappa {
        #[arg(long, value_delimiter = ',', default_values_t = SWEEP_KAPPAS)]
        kappas: Vec<f64>,
        #[arg(long, default_value_t = SWEEP_H)]
        h: f64,
        #[arg(long, default_value_t = 30.0)]
        horizon: f64,
        #[arg(long, default_value_t = SWEEP_ETA_TILDE)]
        eta_tilde: f64,
    },
    /// Run a scenario file and fail unless every step's residual passes.
    CheckStability { config: PathBuf },
    /// Run a built-in scenario (fig3-kink, fig4-lf-vs-mf, fig5-increasing-queue, fig7-capacity-gap).
    Scenario {
        name: String,
        #[arg(long, default_value_t = 1)]
        stride: usize,
    },
    /// Write the runs of a built-in scenario as editable config files.
    ExportScenario { name: String },
    /// Compare the engine against the hand-written small-case oracle.
    Oracle,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error("stability residual fails at k = {k} (residual {residual:.6e}, tolerance {tolerance:.3e})")]
    Unstable { k: usize, residual: f64, tolerance: f64 },
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Experiment(e.into())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(IoError::Parse { .. } | IoError::Validation { .. }) => 1,
            CliError::Io(_) => 2,
            CliError::Experiment(ExperimentError::UnknownScenario(_)) => 1,
            CliError::Experiment(ExperimentError::Model(ModelError::Validation(_) | ModelError::InvalidParameter(_))) => 1,
            CliError::Experiment(_) => 2,
            CliError::Unstable { .. } => 3,
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> IoError {
    IoError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn ensure_dir(dir: &Path) -> Result<(), IoError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn summarize(out: &mut dyn Write, name: &str, traj: &Trajectory) {
    let v = traj.lyapunov();
    let (first, last) = (v[0], v[v.len() - 1]);
    let kink = traj.kink();
    let _ = writeln!(out, "{name}: V(0) = {first:.6e}, V(T) = {last:.6e}");
    if kink.increment > 0.0 {
        let _ = writeln!(out, "{name}: largest increase of V at k = {} ({:.3e})", kink.k, kink.increment);
    }
    match traj.first_failing_step() {
        Some(r) => {
            let _ = writeln!(out, "{name}: residual first fails at k = {}", r.k);
        }
        None => {
            let _ = writeln!(out, "{name}: residual passes at every step");
        }
    }
}

/// Runs a scenario while streaming its CSV to `dir/<name>.csv`.
fn run_to_csv(scenario: &Scenario, dir: &Path, stride: usize) -> Result<(Trajectory, String), CliError> {
    let prepared = scenario.prepare().map_err(ModelError::from)?;
    for w in &prepared.warnings {
        eprintln!("warning: {}: {w}", scenario.name);
    }
    let file = format!("{}.csv", scenario.name);
    let path = dir.join(&file);
    let sink = std::fs::File::create(&path).map_err(|e| io_err(&path, e))?;
    let mut rec = CsvRecorder::new(std::io::BufWriter::new(sink), stride);
    let traj = simulate(&prepared.run, prepared.initial, &mut rec)?;
    rec.finish()?.flush().map_err(|e| io_err(&path, e))?;
    Ok((traj, file))
}

pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    let out_dir = cli.out;
    match cli.command {
        Command::Simulate { config } => {
            let scenario = parse_config(&config)?;
            let dir = scenario.output.dir.as_ref().map_or(out_dir, PathBuf::from);
            ensure_dir(&dir)?;
            let (traj, file) = run_to_csv(&scenario, &dir, scenario.output.stride)?;
            write_plot_script(&dir, &scenario.name, std::slice::from_ref(&file))?;
            let _ = writeln!(stdout, "wrote {}", dir.join(file).display());
            summarize(stdout, &scenario.name, &traj);
        }
        Command::CheckStability { config } => {
            let scenario = parse_config(&config)?;
            let traj = scenario.run()?;
            summarize(stdout, &scenario.name, &traj);
            if let Some(r) = traj.first_failing_step() {
                return Err(CliError::Unstable {
                    k: r.k,
                    residual: r.terms.residual(),
                    tolerance: r.tolerance,
                });
            }
        }
        Command::Converge { v, eta, n } => {
            ensure_dir(&out_dir)?;
            let rows = convergence_study(v, eta, &n)?;
            let path = out_dir.join(format!("convergence_v{v}.csv"));
            write_convergence(&rows, &path)?;
            let _ = writeln!(stdout, "{:>6} {:>10} {:>8} {:>10} {:>6} {:>10} {:>6}", "N", "h", "nu", "inf", "rate", "L2", "rate");
            let rate = |r: Option<f64>| r.map_or("-".to_string(), |x| format!("{x:.2}"));
            for r in &rows {
                let _ = writeln!(
                    stdout,
                    "{:>6} {:>10.6} {:>8.4} {:>10.4} {:>6} {:>10.4} {:>6}",
                    r.n,
                    r.h,
                    r.nu,
                    r.err_inf,
                    rate(r.rate_inf),
                    r.err_l2,
                    rate(r.rate_l2)
                );
            }
            let _ = writeln!(stdout, "wrote {}", path.display());
        }
        Command::SweepKappa {
            kappas,
            h,
            horizon,
            eta_tilde,
        } => {
            ensure_dir(&out_dir)?;
            let rows = kappa_sweep(&kappas, h, horizon, eta_tilde)?;
            let path = out_dir.join("kappa_sweep.csv");
            write_kappa_sweep(&rows, &path)?;
            for r in &rows {
                let _ = writeln!(
                    stdout,
                    "kappa = {:<6} V(T)/V(0) = {:.2e}  eta = {:.4}  eta_tilde = {:.4}  nu = {:.4}",
                    r.kappa, r.ratio, r.eta, r.eta_tilde, r.nu
                );
            }
            let _ = writeln!(stdout, "wrote {}", path.display());
        }
        Command::Scenario { name, stride } => {
            let scenarios = builtin(&name)?;
            let dir = out_dir.join(&name);
            ensure_dir(&dir)?;
            let runs = run_all(scenarios)?;
            let mut files = Vec::new();
            for run in &runs {
                let file = format!("{}.csv", run.scenario.name);
                write_trajectory(&run.trajectory, &dir.join(&file), stride)?;
                summarize(stdout, &run.scenario.name, &run.trajectory);
                files.push(file);
            }
            if name == "fig7-capacity-gap" {
                let study = capacity_gap_study(&CAPACITY_GAP_MU1)?;
                write_capacity_gap(&study, &dir.join("capacity_gap.csv"))?;
            }
            let script = write_plot_script(&dir, &name, &files)?;
            let _ = writeln!(stdout, "wrote {} CSV files and {}", files.len(), script.display());
        }
        Command::ExportScenario { name } => {
            ensure_dir(&out_dir)?;
            for s in builtin(&name)? {
                let path = out_dir.join(format!("{}.toml", s.name));
                std::fs::write(&path, export_config(&s)).map_err(|e| io_err(&path, e))?;
                let _ = writeln!(stdout, "wrote {}", path.display());
            }
        }
        Command::Oracle => {
            let report = oracle_smallcase()?;
            let _ = writeln!(
                stdout,
                "oracle: {} values agree (max relative difference {:.1e}; reversed summation {:.1e})",
                report.comparisons, report.max_rel_diff, report.permuted_rel_diff
            );
        }
    }
    Ok(())
}
