//! One explicit time step of the coupled line: left-sided upwind transport
//! in every processor, queue coupling at the processor inlets, and explicit
//! Euler for the queue loads.

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::network::ValidatedConfig;
use crate::state::SimState;

pub const DEFAULT_EPSILON: f64 = 1e-6;

/// How a queue releases material into its processor.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CouplingMode {
    /// Pass-through capped at `mu_e` for an empty queue, exactly `mu_e` otherwise.
    #[default]
    Hard,
    /// `min(mu_e, q_e / epsilon)` for a non-empty queue; an empty queue still
    /// passes the upstream outflow through (capped at `mu_e`).
    Smoothed { epsilon: f64 },
}

impl CouplingMode {
    pub fn validate(&self) -> Result<(), ModelError> {
        match *self {
            CouplingMode::Smoothed { epsilon } if !(epsilon > 0.0 && epsilon.is_finite()) => Err(
                ModelError::InvalidParameter(format!("smoothing epsilon must be > 0, got {epsilon}")),
            ),
            _ => Ok(()),
        }
    }
}

/// Queue outflow `g_out,e` into processor `e >= 1` given the upstream
/// outflow and the current queue load.
pub fn queue_outflow(upstream: f64, queue: f64, capacity: f64, mode: CouplingMode) -> f64 {
    if queue == 0.0 {
        return upstream.min(capacity);
    }
    match mode {
        CouplingMode::Hard => capacity,
        CouplingMode::Smoothed { epsilon } => capacity.min(queue / epsilon),
    }
}

/// `g_out,e` for processor `e` (0-based, `e >= 1`) read from time-level data.
pub fn coupling_outflow(
    state: &SimState,
    e: usize,
    capacities: &[f64],
    mode: CouplingMode,
) -> Result<f64, ModelError> {
    if e == 0 {
        return Err(ModelError::IndexOutOfRange(
            "processor 1 is fed by the control input, not by a queue".into(),
        ));
    }
    if e >= state.processors() {
        return Err(ModelError::IndexOutOfRange(format!(
            "processor {} (network has {})",
            e + 1,
            state.processors()
        )));
    }
    Ok(queue_outflow(
        state.outflow(e - 1),
        state.queues[e],
        capacities[e],
        mode,
    ))
}

/// Inflow into and outflow out of every queue at one time level.
///
/// `g_out[e]` is also the ghost value `f_{e,-1}` of processor `e`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryFluxes {
    pub g_in: Vec<f64>,
    pub g_out: Vec<f64>,
}

/// Boundary fluxes for control `u` at processor 1. Processor 1 has no
/// active queue: `g_in,1 = g_out,1 = u`.
pub fn boundary_fluxes(state: &SimState, control: f64, capacities: &[f64], mode: CouplingMode) -> BoundaryFluxes {
    let m = state.processors();
    let mut g_in = Vec::with_capacity(m);
    let mut g_out = Vec::with_capacity(m);
    g_in.push(control);
    g_out.push(control);
    for (e, &cap) in capacities.iter().enumerate().take(m).skip(1) {
        let upstream = state.outflow(e - 1);
        g_in.push(upstream);
        g_out.push(queue_outflow(upstream, state.queues[e], cap, mode));
    }
    BoundaryFluxes { g_in, g_out }
}

/// Upwind update of one processor row with CFL number `lambda = v*tau/h`.
pub fn upwind_row(cells: &[f64], ghost: f64, lambda: f64, out: &mut [f64]) {
    debug_assert_eq!(cells.len(), out.len());
    let mut left = ghost;
    for (new, &f) in out.iter_mut().zip(cells) {
        *new = f - lambda * (f - left);
        left = f;
    }
}

/// New interior flux field for all processors; `ghosts[e]` is `f_{e,-1}`.
pub fn upwind_step(flux: &[Vec<f64>], ghosts: &[f64], cfg: &ValidatedConfig) -> Vec<Vec<f64>> {
    let ratio = cfg.tau() / cfg.h();
    flux.iter()
        .zip(ghosts)
        .zip(&cfg.network().velocities)
        .map(|((row, &ghost), &v)| {
            let mut out = vec![0.0; row.len()];
            upwind_row(row, ghost, v * ratio, &mut out);
            out
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueueUpdate {
    pub queues: Vec<f64>,
    /// Processors whose Euler update went negative and was clamped to 0.
    pub clamped: Vec<usize>,
}

/// Explicit Euler step `q + tau*(g_in - g_out)`, clamped at zero.
pub fn queue_step(queues: &[f64], g_in: &[f64], g_out: &[f64], tau: f64) -> QueueUpdate {
    let mut clamped = Vec::new();
    let queues = queues
        .iter()
        .zip(g_in.iter().zip(g_out))
        .enumerate()
        .map(|(e, (&q, (&gi, &go)))| {
            let next = q + tau * (gi - go);
            if next < 0.0 {
                clamped.push(e);
                0.0
            } else {
                next
            }
        })
        .collect();
    QueueUpdate { queues, clamped }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    pub requested_control: f64,
    pub applied_control: f64,
    pub control_clamped: bool,
    pub clamped_queues: Vec<usize>,
    pub boundary: BoundaryFluxes,
}

/// Advances `state` from level `k` to `k+1`.
///
/// Order: the control is clamped to `[0, mu_1]`; boundary fluxes and ghost
/// values are taken from level-`k` data; then the upwind and queue updates
/// both read level `k` only.
pub fn step(
    state: &SimState,
    control: f64,
    cfg: &ValidatedConfig,
    mode: CouplingMode,
) -> Result<(SimState, StepDiagnostics), ModelError> {
    if control.is_nan() {
        return Err(ModelError::NonFiniteState {
            e: 0,
            j: -1,
            k: state.k,
        });
    }
    let capacities = &cfg.network().capacities;
    let applied = control.clamp(0.0, capacities[0]);
    let boundary = boundary_fluxes(state, applied, capacities, mode);
    let flux = upwind_step(&state.flux, &boundary.g_out, cfg);
    let update = queue_step(&state.queues, &boundary.g_in, &boundary.g_out, cfg.tau());

    let next = SimState {
        flux,
        ghosts: boundary.g_out.clone(),
        queues: update.queues,
        k: state.k + 1,
    };
    if let Some((e, j)) = next.first_non_finite() {
        return Err(ModelError::NonFiniteState { e, j, k: next.k });
    }
    Ok((
        next,
        StepDiagnostics {
            requested_control: control,
            applied_control: applied,
            control_clamped: applied != control,
            clamped_queues: update.clamped,
            boundary,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{validate_network, GridSpec, NetworkSpec};
    use proptest::prelude::*;

    fn cfg(mu: Vec<f64>, l: f64, h: f64, tau: f64) -> ValidatedConfig {
        let net = NetworkSpec::uniform(1.0, mu, l);
        validate_network(&net, &GridSpec::new(h, tau, 1.0)).unwrap()
    }

    fn with_queue(outflow_1: f64, q2: f64) -> SimState {
        SimState::new(vec![vec![outflow_1], vec![0.0]], vec![0.0, q2])
    }

    #[test]
    fn hard_coupling_branches() {
        let mu = [6.0, 4.0];
        assert_eq!(coupling_outflow(&with_queue(3.0, 0.0), 1, &mu, CouplingMode::Hard).unwrap(), 3.0);
        assert_eq!(coupling_outflow(&with_queue(3.0, 0.5), 1, &mu, CouplingMode::Hard).unwrap(), 4.0);
        assert_eq!(coupling_outflow(&with_queue(5.0, 0.0), 1, &mu, CouplingMode::Hard).unwrap(), 4.0);
    }

    #[test]
    fn smoothed_coupling() {
        let mu = [6.0, 4.0];
        let mode = CouplingMode::Smoothed { epsilon: 0.01 };
        assert_eq!(coupling_outflow(&with_queue(3.0, 0.5), 1, &mu, mode).unwrap(), 4.0);
        assert_eq!(coupling_outflow(&with_queue(3.0, 0.02), 1, &mu, mode).unwrap(), 2.0);
        // empty queue keeps the pass-through branch
        assert_eq!(coupling_outflow(&with_queue(3.0, 0.0), 1, &mu, mode).unwrap(), 3.0);
        assert!(CouplingMode::Smoothed { epsilon: 0.0 }.validate().is_err());
    }

    #[test]
    fn first_processor_has_no_queue_coupling() {
        let err = coupling_outflow(&with_queue(1.0, 0.0), 0, &[6.0, 4.0], CouplingMode::Hard);
        assert!(matches!(err, Err(ModelError::IndexOutOfRange(_))));
    }

    #[test]
    fn upwind_examples() {
        let mut out = [0.0; 3];
        upwind_row(&[1.0, 2.0, 3.0], 7.0, 1.0, &mut out);
        assert_eq!(out, [7.0, 1.0, 2.0]);
        let mut out = [0.0; 2];
        upwind_row(&[2.0, 4.0], 0.0, 0.5, &mut out);
        assert_eq!(out, [1.0, 3.0]);
        let mut out = [0.0; 4];
        upwind_row(&[2.5; 4], 2.5, 0.37, &mut out);
        assert_eq!(out, [2.5; 4]);
    }

    #[test]
    fn queue_examples() {
        assert_eq!(queue_step(&[1.0], &[4.0], &[4.0], 0.01).queues, vec![1.0]);
        let up = queue_step(&[0.0], &[6.0], &[4.0], 0.01);
        assert!((up.queues[0] - 0.02).abs() < 1e-15);
        assert!(up.clamped.is_empty());
        let up = queue_step(&[0.001], &[0.0], &[4.0], 0.01);
        assert_eq!(up.queues, vec![0.0]);
        assert_eq!(up.clamped, vec![0]);
    }

    #[test]
    fn zero_state_is_fixed() {
        let c = cfg(vec![6.0, 4.0], 0.5, 0.05, 0.05);
        let s = SimState::zeros(&c);
        let (next, _) = step(&s, 0.0, &c, CouplingMode::Hard).unwrap();
        assert!(next.is_zero());
        assert_eq!(next.k, 1);
    }

    #[test]
    fn queue_feeds_capacity_downstream() {
        let c = cfg(vec![6.0, 4.0], 0.5, 0.05, 0.05);
        let s = SimState::constant(&c, &[4.0, 4.0], &[0.0, 1.0]);
        let (next, diag) = step(&s, 0.0, &c, CouplingMode::Hard).unwrap();
        assert_eq!(next.flux[0][0], 0.0);
        assert!(next.flux[0][1..].iter().all(|&f| f == 4.0));
        assert!(next.flux[1].iter().all(|&f| f == 4.0));
        assert_eq!(next.queues[1], 1.0);
        assert_eq!(diag.boundary.g_out, vec![0.0, 4.0]);
    }

    #[test]
    fn bottleneck_grows_queue() {
        let c = cfg(vec![6.0, 4.0], 0.5, 0.05, 0.05);
        let s = SimState::constant(&c, &[6.0, 4.0], &[0.0, 0.0]);
        let (next, _) = step(&s, 6.0, &c, CouplingMode::Hard).unwrap();
        assert!((next.queues[1] - 0.05 * 2.0).abs() < 1e-15);
        assert_eq!(next.queues[0], 0.0);
    }

    #[test]
    fn control_is_clamped_to_first_capacity() {
        let c = cfg(vec![6.0, 4.0], 0.5, 0.05, 0.05);
        let s = SimState::zeros(&c);
        let (next, diag) = step(&s, 9.0, &c, CouplingMode::Hard).unwrap();
        assert!(diag.control_clamped);
        assert_eq!(diag.applied_control, 6.0);
        assert_eq!(next.flux[0][0], 6.0);
        assert!(step(&s, f64::NAN, &c, CouplingMode::Hard).is_err());
    }

    #[test]
    fn non_finite_flux_is_located() {
        let c = cfg(vec![6.0, 4.0], 0.5, 0.05, 0.05);
        let mut s = SimState::zeros(&c);
        s.flux[1][3] = f64::INFINITY;
        let err = step(&s, 0.0, &c, CouplingMode::Hard).unwrap_err();
        assert_eq!(err, ModelError::NonFiniteState { e: 1, j: 3, k: 1 });
    }

    proptest! {
        #[test]
        fn upwind_is_monotone(
            cells in proptest::collection::vec(0.0f64..10.0, 1..40),
            ghost in 0.0f64..10.0,
            lambda in 0.0f64..=1.0,
        ) {
            let mut out = vec![0.0; cells.len()];
            upwind_row(&cells, ghost, lambda, &mut out);
            let hi = cells.iter().copied().fold(ghost, f64::max);
            let lo = cells.iter().copied().fold(ghost, f64::min);
            for &f in &out {
                prop_assert!(f >= lo - 1e-12 && f <= hi + 1e-12);
            }
        }

        #[test]
        fn mass_plus_queues_is_conserved(
            f1 in proptest::collection::vec(0.0f64..6.0, 10),
            f2 in proptest::collection::vec(0.0f64..4.0, 10),
            q2 in 0.5f64..3.0,
            u in 0.0f64..6.0,
            v in 0.2f64..1.0,
        ) {
            let net = NetworkSpec::new(vec![v, 1.0], vec![6.0, 4.0], 0.5);
            let c = validate_network(&net, &GridSpec::new(0.05, 0.05, 1.0)).unwrap();
            let s = SimState::new(vec![f1, f2], vec![0.0, q2]);
            let (next, diag) = step(&s, u, &c, CouplingMode::Hard).unwrap();
            prop_assume!(diag.clamped_queues.is_empty());
            let mass = |st: &SimState| -> f64 {
                st.flux.iter().zip(&net.velocities)
                    .map(|(row, &v)| row.iter().sum::<f64>() * c.h() / v)
                    .sum::<f64>() + st.queues.iter().sum::<f64>()
            };
            let expected = c.tau() * (u - s.outflow(1));
            prop_assert!((mass(&next) - mass(&s) - expected).abs() < 1e-12);
        }
    }
}
