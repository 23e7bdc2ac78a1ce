//! Built-in scenarios and batch studies: the kink comparison, the decay-rate
//! convergence table, the gain sweep and the capacity-gap study.

use rayon::prelude::*;

use crate::discretization::CouplingMode;
use crate::error::{ExperimentError, ModelError};
use crate::feedback::{kappa_bound, FeedbackLaw};
use crate::lyapunov::{decay_rate_parts, LyapunovWeights};
use crate::network::{CoordConvention, GridSpec, NetworkSpec};
use crate::scenario::{FluxInit, InitialData, OutputOptions, Scenario};
use crate::simulate::{Kink, Trajectory};

pub const BUILTIN_NAMES: [&str; 4] = ["fig3-kink", "fig4-lf-vs-mf", "fig5-increasing-queue", "fig7-capacity-gap"];

/// First-capacity values of the capacity-gap study.
pub const CAPACITY_GAP_MU1: [f64; 4] = [5.0, 6.0, 8.0, 10.0];

/// Processor counts of the convergence table (`N = 1/(2h)`).
pub const CONVERGENCE_N: [usize; 6] = [10, 50, 100, 200, 400, 800];

pub const SWEEP_KAPPAS: [f64; 4] = [0.1, 0.25, 0.5, 0.75];
pub const SWEEP_ETA_TILDE: f64 = 0.5752;
pub const SWEEP_H: f64 = 0.00125;

#[allow(clippy::too_many_arguments)]
fn two_processor(
    name: &str,
    velocity: f64,
    mu: [f64; 2],
    flux: [f64; 2],
    queues: [f64; 2],
    eta: f64,
    eta_tilde: f64,
    h: f64,
    horizon: f64,
    law: FeedbackLaw,
) -> Scenario {
    let network = NetworkSpec::uniform(velocity, mu.to_vec(), 0.5);
    let grid = GridSpec::with_cfl(h, 1.0, horizon, &network);
    Scenario {
        name: name.into(),
        network,
        grid,
        initial: InitialData {
            flux: FluxInit::Constant(flux.to_vec()),
            queues: queues.to_vec(),
        },
        weights: LyapunovWeights::uniform(2, eta, eta_tilde),
        law,
        coupling: CouplingMode::Hard,
        coords: CoordConvention::Interface,
        output: OutputOptions::default(),
    }
}

/// Three processors with capacities 10, 9, 8 started at capacity.
pub fn kink_scenario(law: FeedbackLaw) -> Scenario {
    let network = NetworkSpec::uniform(1.0, vec![10.0, 9.0, 8.0], 1.0);
    Scenario {
        name: format!("fig3-kink-{}", law.name()),
        grid: GridSpec::new(0.01, 0.01, 50.0),
        network,
        initial: InitialData {
            flux: FluxInit::Constant(vec![10.0, 9.0, 8.0]),
            queues: vec![0.0; 3],
        },
        weights: LyapunovWeights::uniform(3, 0.1, 0.1),
        law,
        coupling: CouplingMode::Hard,
        coords: CoordConvention::Interface,
        output: OutputOptions::default(),
    }
}

/// Two processors, loaded second queue (`q_2(0) = 1`), `mu = (6, 4)`.
pub fn loaded_queue_scenario(law: FeedbackLaw, velocity: f64, eta: f64, eta_tilde: f64, h: f64) -> Scenario {
    let name = format!("fig4-{}", law.name());
    two_processor(&name, velocity, [6.0, 4.0], [4.0, 4.0], [0.0, 1.0], eta, eta_tilde, h, 30.0, law)
}

pub fn increasing_queue_scenario(law: FeedbackLaw) -> Scenario {
    let name = format!("fig5-increasing-queue-{}", law.name());
    two_processor(&name, 1.0, [6.0, 4.0], [6.0, 4.0], [0.0, 0.0], 0.2, 0.2, 0.01, 30.0, law)
}

pub fn capacity_gap_scenario(mu1: f64, law: FeedbackLaw) -> Scenario {
    let name = format!("fig7-capacity-gap-mu{mu1}-{}", law.name());
    two_processor(&name, 1.0, [mu1, 4.0], [mu1, 4.0], [0.0, 0.0], 0.2, 0.2, 0.01, 30.0, law)
}

/// The runs making up a named built-in scenario.
pub fn builtin(name: &str) -> Result<Vec<Scenario>, ExperimentError> {
    let k02 = kappa_bound(0.2, 0.5);
    let k05 = kappa_bound(0.5, 0.5);
    Ok(match name {
        "fig3-kink" => vec![
            kink_scenario(FeedbackLaw::Linear { kappa: 0.1 }),
            kink_scenario(FeedbackLaw::Mixed { kappa: 0.1 }),
        ],
        "fig4-lf-vs-mf" => vec![
            loaded_queue_scenario(FeedbackLaw::Linear { kappa: 0.5 }, 1.0, 0.5, 0.5, 0.01),
            loaded_queue_scenario(FeedbackLaw::Mixed { kappa: k05 }, 1.0, 0.5, 0.5, 0.01),
        ],
        "fig5-increasing-queue" => vec![increasing_queue_scenario(FeedbackLaw::Mixed { kappa: k02 })],
        "fig7-capacity-gap" => CAPACITY_GAP_MU1
            .iter()
            .flat_map(|&mu1| {
                [
                    capacity_gap_scenario(mu1, FeedbackLaw::Linear { kappa: k02 }),
                    capacity_gap_scenario(mu1, FeedbackLaw::Mixed { kappa: k02 }),
                ]
            })
            .collect(),
        other => return Err(ExperimentError::UnknownScenario(other.to_string())),
    })
}

#[derive(Debug, Clone)]
pub struct BuiltinRun {
    pub scenario: Scenario,
    pub trajectory: Trajectory,
}

/// Runs every variant of a built-in scenario; runs execute in parallel and
/// are returned in declaration order.
pub fn run_builtin(name: &str) -> Result<Vec<BuiltinRun>, ExperimentError> {
    run_all(builtin(name)?)
}

pub fn run_all(scenarios: Vec<Scenario>) -> Result<Vec<BuiltinRun>, ExperimentError> {
    scenarios
        .into_par_iter()
        .map(|scenario| {
            let trajectory = scenario.run()?;
            Ok(BuiltinRun { scenario, trajectory })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub n: usize,
    pub h: f64,
    pub nu: f64,
    pub err_inf: f64,
    pub rate_inf: Option<f64>,
    pub err_l2: f64,
    pub rate_l2: Option<f64>,
}

fn rate(prev: (usize, f64), cur: (usize, f64)) -> f64 {
    (prev.1 / cur.1).ln() / (cur.0 as f64 / prev.0 as f64).ln()
}

/// Decay rate and `||V_up - V||` along refinements `N = 1/(2h)` of the
/// loaded-queue scenario under the mixed law, with `eta = eta~`, CFL number 1
/// and the gain at its bound `exp(-eta l)`.
///
/// `||.||_inf = max_k |V_up^k - V^k|`, `||.||_L2 = sqrt(sum_k tau (V_up^k - V^k)^2)`
/// over `T = 30`.
pub fn convergence_study(velocity: f64, eta: f64, ns: &[usize]) -> Result<Vec<ConvergenceRow>, ExperimentError> {
    let kappa = kappa_bound(eta, 0.5);
    let results: Vec<(usize, f64, f64, f64, f64)> = ns
        .par_iter()
        .map(|&n| {
            let h = 0.5 / n as f64;
            let scenario = loaded_queue_scenario(FeedbackLaw::Mixed { kappa }, velocity, eta, eta, h);
            let traj = scenario.run()?;
            let nu = traj.decay.ok_or(ModelError::DecayRate(0.0))?.nu;
            let (inf, l2) = traj.bound_gap_norms().ok_or(ModelError::DecayRate(0.0))?;
            Ok((n, h, nu, inf, l2))
        })
        .collect::<Result<_, ExperimentError>>()?;

    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(results.len());
    for (i, &(n, h, nu, err_inf, err_l2)) in results.iter().enumerate() {
        let prev = i.checked_sub(1).map(|p| results[p]);
        rows.push(ConvergenceRow {
            n,
            h,
            nu,
            err_inf,
            rate_inf: prev.map(|p| rate((p.0, p.3), (n, err_inf))),
            err_l2,
            rate_l2: prev.map(|p| rate((p.0, p.4), (n, err_l2))),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KappaRow {
    pub kappa: f64,
    /// `V^T / V^0`.
    pub ratio: f64,
    pub eta: f64,
    pub eta_tilde: f64,
    pub nu: f64,
}

/// Mixed-law runs of the loaded-queue scenario with `eta = -ln(kappa)/l`, so
/// that each gain sits exactly at its bound.
pub fn kappa_sweep(kappas: &[f64], h: f64, horizon: f64, eta_tilde: f64) -> Result<Vec<KappaRow>, ExperimentError> {
    let length = 0.5;
    kappas
        .par_iter()
        .map(|&kappa| {
            if !(kappa > 0.0 && kappa < 1.0) {
                return Err(ModelError::InvalidParameter(format!("kappa must lie in (0, 1), got {kappa}")).into());
            }
            let eta = -kappa.ln() / length;
            let mut scenario = loaded_queue_scenario(FeedbackLaw::Mixed { kappa }, 1.0, eta, eta_tilde, h);
            scenario.grid.horizon = horizon;
            scenario.name = format!("kappa-sweep-{kappa}");
            let traj = scenario.run()?;
            let v = traj.lyapunov();
            let nu = decay_rate_parts(&scenario.network.velocities, &scenario.weights, h, scenario.grid.tau).nu;
            Ok(KappaRow {
                kappa,
                ratio: v[v.len() - 1] / v[0],
                eta,
                eta_tilde,
                nu,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct CapacityGapRun {
    pub mu1: f64,
    pub law: &'static str,
    /// Largest one-step increase of `V`.
    pub kink: Kink,
    /// `max_k V^k / V_up^k - 1`: overshoot above the guaranteed envelope.
    pub envelope_excess: f64,
    pub trajectory: Trajectory,
}

/// Linear and mixed law for each first capacity, second capacity 4, flux
/// started at capacity and empty queues.
pub fn capacity_gap_study(mu1s: &[f64]) -> Result<Vec<CapacityGapRun>, ExperimentError> {
    let kappa = kappa_bound(0.2, 0.5);
    let scenarios: Vec<(f64, Scenario)> = mu1s
        .iter()
        .flat_map(|&mu1| {
            [
                (mu1, capacity_gap_scenario(mu1, FeedbackLaw::Linear { kappa })),
                (mu1, capacity_gap_scenario(mu1, FeedbackLaw::Mixed { kappa })),
            ]
        })
        .collect();
    scenarios
        .into_par_iter()
        .map(|(mu1, scenario)| {
            let trajectory = scenario.run()?;
            Ok(CapacityGapRun {
                mu1,
                law: scenario.law.name(),
                kink: trajectory.kink(),
                envelope_excess: trajectory.envelope_excess().unwrap_or(f64::NAN),
                trajectory,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_scenario() {
        assert!(matches!(builtin("fig9"), Err(ExperimentError::UnknownScenario(_))));
    }

    #[test]
    fn builtins_prepare_cleanly() {
        for name in BUILTIN_NAMES {
            for s in builtin(name).unwrap() {
                let p = s.prepare().unwrap();
                assert_eq!(p.run.config.cfl_ratio(), 1.0, "{}", s.name);
            }
        }
    }

    #[test]
    fn increasing_queue_is_damped() {
        let runs = run_builtin("fig5-increasing-queue").unwrap();
        let traj = &runs[0].trajectory;
        let q = traj.queue(1);
        let peak = q.iter().copied().fold(0.0, f64::max);
        assert!(peak > 0.5);
        assert_eq!(*q.last().unwrap(), 0.0);
        let v = traj.lyapunov();
        assert!(v[v.len() - 1] / v[0] < 1e-2);
        assert!(traj.increasing_steps(1e-10).is_empty());
    }

    #[test]
    fn capacity_gap_behaviour() {
        let runs = capacity_gap_study(&CAPACITY_GAP_MU1).unwrap();
        let linear: Vec<_> = runs.iter().filter(|r| r.law == "linear").collect();
        for pair in linear.windows(2) {
            assert!(pair[1].envelope_excess > pair[0].envelope_excess);
        }
        for r in runs.iter().filter(|r| r.law == "mixed") {
            assert!(r.trajectory.increasing_steps(1e-10).is_empty(), "mu1 = {}", r.mu1);
            assert!(r.envelope_excess <= 1e-12);
        }
        // linear law holds u = 4 kappa while the queue drains
        let kappa = kappa_bound(0.2, 0.5);
        for r in &linear {
            let early: Vec<f64> = r.trajectory.controls().into_iter().take(40).collect();
            assert!(early.iter().all(|&u| (u - 4.0 * kappa).abs() < 1e-12));
        }
    }

    #[test]
    fn rates_use_refinement_ratio() {
        assert!((rate((10, 0.0754), (50, 0.0151)) - 0.99).abs() < 0.01);
    }
}
