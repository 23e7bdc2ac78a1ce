//! CSV output for trajectories and studies, plus a generated matplotlib
//! script to plot them.
//!
//! Trajectory columns: `k,t,V,V1,V2,V_up,residual,verdict,u1,q_1..q_m,f_out_1..f_out_m`.
//! Floats are written as `{:.16e}` (17 significant digits, exact round trip).
//! Fields describing the step to the next level are empty on the last row.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::IoError;
use crate::experiments::{CapacityGapRun, ConvergenceRow, KappaRow};
use crate::simulate::{Recorder, StepRecord, Trajectory};

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub fn trajectory_header(m: usize) -> Vec<String> {
    let mut h: Vec<String> = ["k", "t", "V", "V1", "V2", "V_up", "residual", "verdict", "u1"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((1..=m).map(|e| format!("q_{e}")));
    h.extend((1..=m).map(|e| format!("f_out_{e}")));
    h
}

fn trajectory_row(r: &StepRecord) -> Vec<String> {
    let mut row = vec![
        r.k.to_string(),
        fmt_f64(r.t),
        fmt_f64(r.lyapunov.v),
        fmt_f64(r.lyapunov.v1),
        fmt_f64(r.lyapunov.v2),
        fmt_opt(r.v_up),
        fmt_opt(r.residual.map(|s| s.terms.residual())),
        r.residual
            .map(|s| if s.passed { "pass" } else { "fail" }.to_string())
            .unwrap_or_default(),
        fmt_opt(r.control),
    ];
    row.extend(r.queues.iter().map(|&q| fmt_f64(q)));
    row.extend(r.outflows.iter().map(|&f| fmt_f64(f)));
    row
}

/// Streams trajectory rows to CSV, keeping every `stride`-th level and the
/// last one.
pub struct CsvRecorder<W: Write> {
    writer: csv::Writer<W>,
    stride: usize,
    header_written: bool,
    error: Option<csv::Error>,
}

impl<W: Write> CsvRecorder<W> {
    pub fn new(sink: W, stride: usize) -> Self {
        Self {
            writer: csv::Writer::from_writer(sink),
            stride: stride.max(1),
            header_written: false,
            error: None,
        }
    }

    fn write(&mut self, r: &StepRecord) -> Result<(), csv::Error> {
        if !self.header_written {
            self.writer.write_record(trajectory_header(r.queues.len()))?;
            self.header_written = true;
        }
        let last = r.control.is_none();
        if r.k.is_multiple_of(self.stride) || last {
            self.writer.write_record(trajectory_row(r))?;
        }
        Ok(())
    }

    /// Flushes and returns the sink, or the first write error.
    pub fn finish(mut self) -> Result<W, IoError> {
        if let Some(e) = self.error.take() {
            return Err(e.into());
        }
        self.writer
            .into_inner()
            .map_err(|e| IoError::Csv(csv::Error::from(e.into_error())))
    }
}

impl<W: Write> Recorder for CsvRecorder<W> {
    fn record(&mut self, record: &StepRecord) {
        if self.error.is_none() {
            if let Err(e) = self.write(record) {
                self.error = Some(e);
            }
        }
    }
}

fn create(path: &Path) -> Result<File, IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| IoError::Io {
            path: dir.display().to_string(),
            source,
        })?;
    }
    File::create(path).map_err(|source| IoError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_trajectory(traj: &Trajectory, path: &Path, stride: usize) -> Result<(), IoError> {
    let mut rec = CsvRecorder::new(create(path)?, stride);
    for r in &traj.records {
        rec.record(r);
    }
    rec.finish()?.flush().map_err(|source| IoError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// One trajectory row read back from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub k: usize,
    pub t: f64,
    pub v: f64,
    pub v1: f64,
    pub v2: f64,
    pub v_up: Option<f64>,
    pub residual: Option<f64>,
    pub passed: Option<bool>,
    pub u1: Option<f64>,
    pub queues: Vec<f64>,
    pub outflows: Vec<f64>,
}

fn bad(path: &str, message: String) -> IoError {
    IoError::Parse {
        path: path.to_string(),
        message,
    }
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryRow>, IoError> {
    let shown = path.display().to_string();
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    let m = header
        .len()
        .checked_sub(9)
        .filter(|n| n % 2 == 0)
        .ok_or_else(|| bad(&shown, format!("unexpected column count {}", header.len())))?
        / 2;
    if header.iter().ne(trajectory_header(m).iter().map(String::as_str)) {
        return Err(bad(&shown, "unexpected trajectory header".into()));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let num = |c: usize| -> Result<f64, IoError> {
            rec[c]
                .parse::<f64>()
                .map_err(|e| bad(&shown, format!("line {line}, column {}: {e}", &header[c])))
        };
        let opt = |c: usize| -> Result<Option<f64>, IoError> {
            if rec[c].is_empty() {
                Ok(None)
            } else {
                num(c).map(Some)
            }
        };
        let passed = match &rec[7] {
            "" => None,
            "pass" => Some(true),
            "fail" => Some(false),
            other => return Err(bad(&shown, format!("line {line}: bad verdict `{other}`"))),
        };
        rows.push(TrajectoryRow {
            k: rec[0]
                .parse()
                .map_err(|e| bad(&shown, format!("line {line}, column k: {e}")))?,
            t: num(1)?,
            v: num(2)?,
            v1: num(3)?,
            v2: num(4)?,
            v_up: opt(5)?,
            residual: opt(6)?,
            passed,
            u1: opt(8)?,
            queues: (9..9 + m).map(num).collect::<Result<_, _>>()?,
            outflows: (9 + m..9 + 2 * m).map(num).collect::<Result<_, _>>()?,
        });
    }
    Ok(rows)
}

fn write_table(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush().map_err(|source| IoError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub const CONVERGENCE_HEADER: [&str; 7] = ["N", "h", "nu", "err_inf", "rate_inf", "err_l2", "rate_l2"];

pub fn write_convergence(rows: &[ConvergenceRow], path: &Path) -> Result<(), IoError> {
    let rows = rows
        .iter()
        .map(|r| {
            vec![
                r.n.to_string(),
                fmt_f64(r.h),
                fmt_f64(r.nu),
                fmt_f64(r.err_inf),
                fmt_opt(r.rate_inf),
                fmt_f64(r.err_l2),
                fmt_opt(r.rate_l2),
            ]
        })
        .collect();
    write_table(path, &CONVERGENCE_HEADER, rows)
}

pub const KAPPA_HEADER: [&str; 5] = ["kappa", "ratio", "eta", "eta_tilde", "nu"];

pub fn write_kappa_sweep(rows: &[KappaRow], path: &Path) -> Result<(), IoError> {
    let rows = rows
        .iter()
        .map(|r| [r.kappa, r.ratio, r.eta, r.eta_tilde, r.nu].map(fmt_f64).to_vec())
        .collect();
    write_table(path, &KAPPA_HEADER, rows)
}

pub const CAPACITY_GAP_HEADER: [&str; 5] = ["mu1", "law", "kink_k", "kink_increment", "envelope_excess"];

pub fn write_capacity_gap(runs: &[CapacityGapRun], path: &Path) -> Result<(), IoError> {
    let rows = runs
        .iter()
        .map(|r| {
            vec![
                fmt_f64(r.mu1),
                r.law.to_string(),
                r.kink.k.to_string(),
                fmt_f64(r.kink.increment),
                fmt_f64(r.envelope_excess),
            ]
        })
        .collect();
    write_table(path, &CAPACITY_GAP_HEADER, rows)
}

/// A matplotlib script plotting `V`, `V_up` (log scale) and `u1` for each
/// trajectory CSV next to it.
pub fn plot_script(title: &str, trajectories: &[String]) -> String {
    let files = trajectories
        .iter()
        .map(|f| format!("    {f:?},"))
        .collect::<Vec<_>>()
        .join("\n");
    format!(
        r#"#!/usr/bin/env python3
# Plots for {title}. Run from the directory holding the CSV files.
import csv
import os
import sys

import matplotlib.pyplot as plt

FILES = [
{files}
]


def column(rows, name):
    return [float(r[name]) if r[name] else float("nan") for r in rows]


def main():
    here = os.path.dirname(os.path.abspath(__file__))
    fig, (ax_v, ax_u) = plt.subplots(1, 2, figsize=(11, 4))
    for name in FILES:
        with open(os.path.join(here, name), newline="") as fh:
            rows = list(csv.DictReader(fh))
        t = column(rows, "t")
        label = os.path.splitext(name)[0]
        ax_v.semilogy(t, column(rows, "V"), label=label + " V")
        ax_v.semilogy(t, column(rows, "V_up"), "--", label=label + " V_up")
        ax_u.plot(t, column(rows, "u1"), label=label)
    ax_v.set_xlabel("t")
    ax_v.set_ylabel("Lyapunov function")
    ax_u.set_xlabel("t")
    ax_u.set_ylabel("inflow control u1")
    for ax in (ax_v, ax_u):
        ax.legend(fontsize="small")
    fig.suptitle({title:?})
    fig.tight_layout()
    out = os.path.join(here, "plot.png")
    fig.savefig(out, dpi=150)
    if "--show" in sys.argv:
        plt.show()
    print(out)


if __name__ == "__main__":
    main()
"#
    )
}

pub fn write_plot_script(dir: &Path, title: &str, trajectories: &[String]) -> Result<PathBuf, IoError> {
    let path = dir.join("plot.py");
    let mut f = create(&path)?;
    f.write_all(plot_script(title, trajectories).as_bytes())
        .map_err(|source| IoError::Io {
            path: path.display().to_string(),
            source,
        })?;
    Ok(path)
}
