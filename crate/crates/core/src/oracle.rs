//! Independent check of the engine on a tiny fixed case: two processors, two
//! cells each, four steps, written out scalar by scalar without loops over
//! processors or cells.

use crate::discretization::{step, CouplingMode};
use crate::error::ExperimentError;
use crate::lyapunov::{discrete_v, LyapunovWeights};
use crate::network::{validate_network, GridSpec, NetworkSpec, ValidatedConfig};
use crate::state::SimState;

pub const ORACLE_REL_TOL: f64 = 1e-12;

/// Inputs of the hand-transcribed case.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleCase {
    pub velocities: [f64; 2],
    pub capacities: [f64; 2],
    pub length: f64,
    pub h: f64,
    pub tau: f64,
    /// `[f_{1,0}, f_{1,1}, f_{2,0}, f_{2,1}]`
    pub flux: [f64; 4],
    pub queue2: f64,
    pub controls: [f64; 4],
    pub p: [f64; 2],
    pub eta: [f64; 2],
    pub c: [f64; 2],
    pub eta_tilde: [f64; 2],
}

impl OracleCase {
    /// Uneven speeds, loaded second queue that drains and clamps, and one
    /// control above `mu_1`.
    pub fn fixed() -> Self {
        Self {
            velocities: [1.0, 0.8],
            capacities: [5.0, 3.0],
            length: 0.5,
            h: 0.25,
            tau: 0.2,
            flux: [2.0, 0.5, 1.0, 2.5],
            queue2: 0.4,
            controls: [4.0, 6.0, 1.5, 0.0],
            p: [1.0, 2.0],
            eta: [0.5, 0.3],
            c: [1.5, 0.7],
            eta_tilde: [0.4, 0.6],
        }
    }

    pub fn zero() -> Self {
        Self {
            flux: [0.0; 4],
            queue2: 0.0,
            controls: [0.0; 4],
            ..Self::fixed()
        }
    }

    fn config(&self) -> Result<ValidatedConfig, ExperimentError> {
        let net = NetworkSpec::new(self.velocities.to_vec(), self.capacities.to_vec(), self.length);
        let grid = GridSpec::new(self.h, self.tau, 4.0 * self.tau);
        Ok(validate_network(&net, &grid).map_err(crate::error::ModelError::from)?)
    }

    fn weights(&self) -> LyapunovWeights {
        LyapunovWeights {
            p: self.p.to_vec(),
            eta: self.eta.to_vec(),
            c: self.c.to_vec(),
            eta_tilde: self.eta_tilde.to_vec(),
        }
    }
}

/// Every intermediate value of one level, flattened in a fixed order.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Level {
    g_in: [f64; 2],
    g_out: [f64; 2],
    flux: [f64; 4],
    queues: [f64; 2],
    v1: f64,
    v2: f64,
}

const NAMES: [&str; 14] = [
    "g_in_1", "g_in_2", "g_out_1", "g_out_2", "f_1_0", "f_1_1", "f_2_0", "f_2_1", "q_1", "q_2", "V1", "V2", "V", "V1_permuted",
];

fn straight_line(case: &OracleCase) -> Vec<Level> {
    let [v1, v2] = case.velocities;
    let [mu1, mu2] = case.capacities;
    let (h, tau, l) = (case.h, case.tau, case.length);
    let lam1 = v1 * tau / h;
    let lam2 = v2 * tau / h;
    // cell centers (j + 1/2) h, shifted by l on the second processor
    let x10 = 0.5 * h;
    let x11 = 1.5 * h;
    let x20 = l + 0.5 * h;
    let x21 = l + 1.5 * h;

    let [mut f10, mut f11, mut f20, mut f21] = case.flux;
    let mut q1 = 0.0;
    let mut q2 = case.queue2;
    let mut out = Vec::new();
    for k in 0..=4 {
        let t = k as f64 * tau;
        let w10 = case.p[0] * (-case.eta[0] * x10).exp();
        let w11 = case.p[0] * (-case.eta[0] * x11).exp();
        let w20 = case.p[1] * (-case.eta[1] * x20).exp();
        let w21 = case.p[1] * (-case.eta[1] * x21).exp();
        let lyap1 = h * (f10 * f10 * w10 + f11 * f11 * w11 + f20 * f20 * w20 + f21 * f21 * w21);
        let lyap2 = q1 * q1 * case.c[0] * (-case.eta_tilde[0] * v1 * t).exp()
            + q2 * q2 * case.c[1] * (-case.eta_tilde[1] * v2 * t).exp();

        let (mut gin, mut gout) = ([f64::NAN; 2], [f64::NAN; 2]);
        if k < 4 {
            let u = case.controls[k].max(0.0).min(mu1);
            let gin2 = f11;
            let gout2 = if q2 == 0.0 { f11.min(mu2) } else { mu2 };
            gin = [u, gin2];
            gout = [u, gout2];

            let n10 = f10 - lam1 * (f10 - u);
            let n11 = f11 - lam1 * (f11 - f10);
            let n20 = f20 - lam2 * (f20 - gout2);
            let n21 = f21 - lam2 * (f21 - f20);
            let nq1 = q1 + tau * (gin[0] - gout[0]);
            let nq2 = (q2 + tau * (gin2 - gout2)).max(0.0);
            out.push(Level {
                g_in: gin,
                g_out: gout,
                flux: [f10, f11, f20, f21],
                queues: [q1, q2],
                v1: lyap1,
                v2: lyap2,
            });
            (f10, f11, f20, f21, q1, q2) = (n10, n11, n20, n21, nq1, nq2);
        } else {
            out.push(Level {
                g_in: gin,
                g_out: gout,
                flux: [f10, f11, f20, f21],
                queues: [q1, q2],
                v1: lyap1,
                v2: lyap2,
            });
        }
    }
    out
}

/// Outcome of an oracle comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleReport {
    pub comparisons: usize,
    /// Largest relative difference between engine and oracle.
    pub max_rel_diff: f64,
    /// Largest relative difference between `V1` summed in engine order and in
    /// reversed order.
    pub permuted_rel_diff: f64,
}

fn rel_diff(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn reversed_v1(state: &SimState, weights: &LyapunovWeights, cfg: &ValidatedConfig) -> f64 {
    let mut sum = 0.0;
    for e in (0..state.processors()).rev() {
        for j in (0..state.cells()).rev() {
            let f = state.flux[e][j];
            sum += f * f * weights.spatial_weight(e, cfg.cell_center_unchecked(e, j));
        }
    }
    sum * cfg.h()
}

/// Runs the engine and the straight-line oracle on `case` and compares every
/// boundary flux, cell value, queue and energy term at every level.
pub fn run_oracle(case: &OracleCase) -> Result<OracleReport, ExperimentError> {
    let cfg = case.config()?;
    let weights = case.weights();
    let expected = straight_line(case);
    let [a, b, c, d] = case.flux;
    let mut state = SimState::new(vec![vec![a, b], vec![c, d]], vec![0.0, case.queue2]);

    let mut report = OracleReport {
        comparisons: 0,
        max_rel_diff: 0.0,
        permuted_rel_diff: 0.0,
    };
    for (k, level) in expected.iter().enumerate() {
        let sample = discrete_v(&state, &weights, &cfg);
        let mut engine = vec![f64::NAN; 4];
        let next = if k < 4 {
            let (next, diag) = step(&state, case.controls[k], &cfg, CouplingMode::Hard)?;
            engine = vec![diag.boundary.g_in[0], diag.boundary.g_in[1], diag.boundary.g_out[0], diag.boundary.g_out[1]];
            Some(next)
        } else {
            None
        };
        engine.extend(state.flux.iter().flatten());
        engine.extend(&state.queues);
        engine.extend([sample.v1, sample.v2, sample.v]);
        let permuted = reversed_v1(&state, &weights, &cfg);
        engine.push(permuted);

        let mut oracle = vec![level.g_in[0], level.g_in[1], level.g_out[0], level.g_out[1]];
        oracle.extend(level.flux);
        oracle.extend(level.queues);
        oracle.extend([level.v1, level.v2, level.v1 + level.v2, level.v1]);

        for ((name, &got), &want) in NAMES.iter().zip(&engine).zip(&oracle) {
            if got.is_nan() && want.is_nan() {
                continue;
            }
            let diff = rel_diff(got, want);
            if diff.is_nan() || diff > ORACLE_REL_TOL {
                return Err(ExperimentError::OracleMismatch {
                    quantity: format!("{name} at k = {k}"),
                    engine: got,
                    oracle: want,
                });
            }
            report.comparisons += 1;
            report.max_rel_diff = report.max_rel_diff.max(diff);
        }
        report.permuted_rel_diff = report.permuted_rel_diff.max(rel_diff(sample.v1, permuted));

        match next {
            Some(next) => state = next,
            None => break,
        }
    }
    Ok(report)
}

/// The fixed small case.
pub fn oracle_smallcase() -> Result<OracleReport, ExperimentError> {
    run_oracle(&OracleCase::fixed())
}
