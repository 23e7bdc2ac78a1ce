//! Boundary control at the first processor.
//!
//! Three laws are available: a prescribed open-loop inflow, the linear law
//! `u = kappa * f_{m,N-1}`, and the mixed law. The mixed law uses the
//! largest inflow that keeps the boundary/queue residual `S2 + Z2`
//! nonpositive while any queue is loaded, and falls back to the linear law
//! once every queue has drained.

use serde::{Deserialize, Serialize};

use crate::discretization::{boundary_fluxes, queue_outflow, BoundaryFluxes, CouplingMode};
use crate::error::ModelError;
use crate::lyapunov::{boundary_terms, LyapunovWeights};
use crate::network::{BoundaryCoords, NetworkSpec, ValidatedConfig};
use crate::state::SimState;

/// Prescribed inflow `f_in(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InflowProfile {
    Constant(f64),
    /// `(t, value)` knots, linearly interpolated and held constant outside.
    Table(Vec<(f64, f64)>),
}

impl InflowProfile {
    pub fn value_at(&self, t: f64) -> f64 {
        match self {
            InflowProfile::Constant(v) => *v,
            InflowProfile::Table(knots) => {
                let Some(&(t0, v0)) = knots.first() else {
                    return 0.0;
                };
                if t <= t0 {
                    return v0;
                }
                for pair in knots.windows(2) {
                    let ((ta, va), (tb, vb)) = (pair[0], pair[1]);
                    if t == tb {
                        return vb;
                    }
                    if t < tb {
                        return if tb > ta { va + (vb - va) * (t - ta) / (tb - ta) } else { vb };
                    }
                }
                knots.last().map_or(0.0, |k| k.1)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeedbackLaw {
    OpenLoop(InflowProfile),
    Linear { kappa: f64 },
    /// Queue-aware law; `kappa` is the linear gain used once all queues are empty.
    Mixed { kappa: f64 },
}

impl FeedbackLaw {
    pub fn name(&self) -> &'static str {
        match self {
            FeedbackLaw::OpenLoop(_) => "open-loop",
            FeedbackLaw::Linear { .. } => "linear",
            FeedbackLaw::Mixed { .. } => "mixed",
        }
    }

    pub fn kappa(&self) -> Option<f64> {
        match *self {
            FeedbackLaw::Linear { kappa } | FeedbackLaw::Mixed { kappa } => Some(kappa),
            FeedbackLaw::OpenLoop(_) => None,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            FeedbackLaw::Linear { kappa } | FeedbackLaw::Mixed { kappa } if !(*kappa > 0.0 && kappa.is_finite()) => {
                Err(ModelError::InvalidParameter(format!("kappa must be > 0, got {kappa}")))
            }
            FeedbackLaw::OpenLoop(InflowProfile::Constant(v)) if !(*v >= 0.0 && v.is_finite()) => {
                Err(ModelError::InvalidParameter(format!("inflow must be >= 0, got {v}")))
            }
            FeedbackLaw::OpenLoop(InflowProfile::Table(knots))
                if knots.iter().any(|(t, v)| !t.is_finite() || !(*v >= 0.0 && v.is_finite()))
                    || knots.windows(2).any(|p| p[1].0 < p[0].0) =>
            {
                Err(ModelError::InvalidParameter(
                    "inflow table needs finite, nondecreasing times and nonnegative values".into(),
                ))
            }
            _ => Ok(()),
        }
    }

    /// Warning text when the gain exceeds `exp(-eta l)`; such a gain voids
    /// the guarantee of the empty-queue regime but is still allowed.
    pub fn gain_warning(&self, weights: &LyapunovWeights, length: f64) -> Option<String> {
        let kappa = self.kappa()?;
        let eta = weights.eta.iter().copied().fold(f64::INFINITY, f64::min);
        let bound = kappa_bound(eta, length);
        (kappa > bound).then(|| format!("kappa = {kappa} exceeds exp(-eta l) = {bound:.6}; decay is not guaranteed"))
    }
}

/// Everything a law needs besides the state.
#[derive(Debug, Clone)]
pub struct ControlContext<'a> {
    pub cfg: &'a ValidatedConfig,
    pub weights: &'a LyapunovWeights,
    pub coords: &'a BoundaryCoords,
    pub mode: CouplingMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    OpenLoop,
    Linear,
    /// Mixed law while at least one queue is loaded.
    Queue,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Control {
    pub value: f64,
    pub regime: Regime,
}

impl FeedbackLaw {
    /// Control `u_1^k` for the given state, clamped to `[0, mu_1]`.
    pub fn control(&self, state: &SimState, ctx: &ControlContext<'_>) -> Control {
        let mu1 = ctx.cfg.network().capacities[0];
        match self {
            FeedbackLaw::OpenLoop(profile) => Control {
                value: profile.value_at(ctx.cfg.time(state.k)).clamp(0.0, mu1),
                regime: Regime::OpenLoop,
            },
            FeedbackLaw::Linear { kappa } => Control {
                value: linear_control(*kappa, state.outflow(state.processors() - 1)).clamp(0.0, mu1),
                regime: Regime::Linear,
            },
            FeedbackLaw::Mixed { kappa } => mixed_control(state, *kappa, ctx),
        }
    }
}

/// Largest linear gain `exp(-eta l)` for which the empty-queue regime is
/// guaranteed to decay.
pub fn kappa_bound(eta: f64, length: f64) -> f64 {
    (-eta * length).exp()
}

pub fn linear_control(kappa: f64, outflow: f64) -> f64 {
    kappa * outflow
}

/// Upper bound `Y^k` on `u^2` such that the boundary/queue residual stays
/// nonpositive.
///
/// The control only enters the residual through the inflow term of processor
/// 1, `v_1 p_1 u^2 exp(-eta_1 x_in,1)`, so `Y^k` is the residual at `u = 0`
/// divided by that weight, with opposite sign. For two processors with unit
/// velocities and weights this is
///
/// ```text
/// Y = f1^2 e^{-eta l} + f2^2 e^{-2 eta l} - mu2^2 e^{-eta l}
///     - (2 q2 (f1 - mu2) + tau (f1 - mu2)^2) e^{-eta~ (t_k + tau)}
/// ```
///
/// For more processors the same construction sums one term per queue.
pub fn mixed_bound_y(state: &SimState, ctx: &ControlContext<'_>) -> f64 {
    let cfg = ctx.cfg;
    let boundary = boundary_fluxes(state, 0.0, &cfg.network().capacities, ctx.mode);
    let (s2, z2) = boundary_terms(
        &state.outflows(),
        &boundary,
        &state.queues,
        ctx.weights,
        cfg,
        ctx.coords,
        cfg.time(state.k),
    );
    let inflow_weight = cfg.network().velocities[0] * ctx.weights.spatial_weight(0, ctx.coords.inflow[0]);
    -(s2 + z2) / inflow_weight
}

/// Mixed law: linear gain while every queue `e >= 2` is exactly empty,
/// `sqrt(max(Y^k, 0))` otherwise; clamped to `[0, mu_1]`.
pub fn mixed_control(state: &SimState, kappa: f64, ctx: &ControlContext<'_>) -> Control {
    let mu1 = ctx.cfg.network().capacities[0];
    if state.queues.iter().skip(1).all(|&q| q == 0.0) {
        return Control {
            value: linear_control(kappa, state.outflow(state.processors() - 1)).clamp(0.0, mu1),
            regime: Regime::Linear,
        };
    }
    Control {
        value: mixed_bound_y(state, ctx).max(0.0).sqrt().min(mu1),
        regime: Regime::Queue,
    }
}

/// Continuous-time bound `X(t)` on `u_1(t)^2`, using the smoothed queue
/// outflow. Each processor is measured in its own coordinate `[0, l]`.
/// Requires equal velocities; `p_e = c_e = 1` is assumed.
pub fn continuous_bound_x(
    outflows: &[f64],
    queues: &[f64],
    network: &NetworkSpec,
    eta: f64,
    eta_tilde: f64,
    epsilon: f64,
    t: f64,
) -> Result<f64, ModelError> {
    let v = network.velocities[0];
    if network.velocities.iter().any(|&w| w != v) {
        return Err(ModelError::AssumptionViolated(
            "the continuous bound needs equal processor velocities".into(),
        ));
    }
    let mode = CouplingMode::Smoothed { epsilon };
    let space = (-eta * network.length).exp();
    let time = (-eta_tilde * v * t).exp();
    let mut x: f64 = outflows.iter().map(|f| f * f * space).sum();
    for e in 1..network.processors() {
        let release = queue_outflow(outflows[e - 1], queues[e], network.capacities[e], mode);
        x -= release * release;
        x -= 2.0 / v * queues[e] * outflows[e - 1] * time;
        x += 2.0 / v * queues[e] * release * time;
    }
    Ok(x)
}

/// Constant inflow matrix `G` with `g_in = G f(., l)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InflowMatrix {
    pub entries: Vec<Vec<f64>>,
}

impl InflowMatrix {
    /// Serial line with the last outflow fed back with gain `kappa`.
    pub fn serial(m: usize, kappa: f64) -> Self {
        let mut entries = vec![vec![0.0; m]; m];
        entries[0][m - 1] = kappa;
        for e in 1..m {
            entries[e][e - 1] = 1.0;
        }
        Self { entries }
    }

    pub fn apply(&self, outflows: &[f64]) -> Vec<f64> {
        self.entries
            .iter()
            .map(|row| row.iter().zip(outflows).map(|(g, f)| g * f).sum())
            .collect()
    }

    /// `G^T diag(inflow) G - diag(outflow)`.
    pub fn stability_matrix(&self, inflow: &[f64], outflow: &[f64]) -> Vec<Vec<f64>> {
        let m = self.entries.len();
        let mut out = vec![vec![0.0; m]; m];
        for (a, row) in out.iter_mut().enumerate() {
            for (b, cell) in row.iter_mut().enumerate() {
                *cell = (0..m)
                    .map(|i| self.entries[i][a] * inflow[i] * self.entries[i][b])
                    .sum();
            }
            row[a] -= outflow[a];
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemidefiniteReport {
    pub lambda1: f64,
    pub lambda2: f64,
    pub negative_semidefinite: bool,
}

/// Eigenvalues of `G^T P_0 Lambda G - P_{N-1} Lambda` for the two-processor
/// serial line. The matrix is diagonal, so the eigenvalues are its entries.
pub fn semidefinite_check(
    kappa: f64,
    weights: &LyapunovWeights,
    cfg: &ValidatedConfig,
    coords: &BoundaryCoords,
) -> Result<SemidefiniteReport, ModelError> {
    if cfg.processors() != 2 {
        return Err(ModelError::UnsupportedShape(format!(
            "inflow-matrix test needs 2 processors, got {}",
            cfg.processors()
        )));
    }
    let v = &cfg.network().velocities;
    let inflow = |e: usize| v[e] * weights.spatial_weight(e, coords.inflow[e]);
    let outflow = |e: usize| v[e] * weights.spatial_weight(e, coords.outflow[e]);
    let lambda1 = inflow(1) - outflow(0);
    let lambda2 = kappa * kappa * inflow(0) - outflow(1);
    Ok(SemidefiniteReport {
        lambda1,
        lambda2,
        negative_semidefinite: lambda1 <= 0.0 && lambda2 <= 0.0,
    })
}

/// Boundary fluxes the scheme would use with control `u`; exposed for
/// residual checks of arbitrary controls.
pub fn boundary_for(state: &SimState, u: f64, ctx: &ControlContext<'_>) -> BoundaryFluxes {
    boundary_fluxes(state, u, &ctx.cfg.network().capacities, ctx.mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lyapunov::stability_residual;
    use crate::network::{validate_network, CoordConvention, GridSpec};
    use proptest::prelude::*;

    fn cfg(mu: Vec<f64>, l: f64, h: f64) -> ValidatedConfig {
        validate_network(&NetworkSpec::uniform(1.0, mu, l), &GridSpec::new(h, h, 1.0)).unwrap()
    }

    fn round4(x: f64) -> f64 {
        (x * 1e4).round() / 1e4
    }

    #[test]
    fn gain_bounds() {
        assert_eq!(round4(kappa_bound(0.5, 0.5)), 0.7788);
        assert_eq!(round4(kappa_bound(0.2, 0.5)), 0.9048);
        assert_eq!(kappa_bound(0.0, 0.5), 1.0);
    }

    #[test]
    fn linear_examples() {
        assert_eq!(linear_control(0.5, 4.0), 2.0);
        assert_eq!(linear_control(0.7788, 0.0), 0.0);
        assert_eq!(round4(linear_control(kappa_bound(0.2, 0.5), 4.0)), 3.6193);
    }

    /// Hand transcription of the two-processor bound with unit weights.
    #[allow(clippy::too_many_arguments)]
    fn y_two_processors(f1: f64, f2: f64, q2: f64, mu2: f64, eta: f64, et: f64, l: f64, t: f64, tau: f64) -> f64 {
        let time = (-et * t).exp() * (-et * tau).exp();
        f1 * f1 * (-eta * l).exp() + f2 * f2 * (-eta * 2.0 * l).exp()
            - mu2 * mu2 * (-eta * l).exp()
            - 2.0 * q2 * (f1 - mu2) * time
            - tau * (f1 - mu2).powi(2) * time
    }

    fn state_with(c: &ValidatedConfig, f1: f64, f2: f64, q2: f64, k: usize) -> SimState {
        let mut s = SimState::constant(c, &[f1, f2], &[0.0, q2]);
        s.k = k;
        s
    }

    #[test]
    fn mixed_bound_matches_hand_formula() {
        let c = cfg(vec![6.0, 4.0], 0.5, 0.01);
        let w = LyapunovWeights::uniform(2, 0.5, 0.5);
        let coords = c.boundary_coords(CoordConvention::Interface);
        let ctx = ControlContext { cfg: &c, weights: &w, coords: &coords, mode: CouplingMode::Hard };
        for &(f1, f2, q2, k) in &[(4.0, 4.0, 1.0, 0), (3.1, 2.2, 0.4, 37), (5.5, 0.3, 2.0, 500)] {
            let s = state_with(&c, f1, f2, q2, k);
            let y = mixed_bound_y(&s, &ctx);
            let expected = y_two_processors(f1, f2, q2, 4.0, 0.5, 0.5, 0.5, c.time(k), c.tau());
            assert!((y - expected).abs() < 1e-12, "{y} vs {expected}");
        }
        // at f1 = mu2 the queue terms vanish and Y = 16 e^{-1/2}
        let y = mixed_bound_y(&state_with(&c, 4.0, 4.0, 1.0, 0), &ctx);
        assert_eq!(round4(y), 9.7045);
    }

    #[test]
    fn empty_line_with_loaded_queue_has_negative_bound() {
        let c = cfg(vec![6.0, 4.0], 0.5, 0.01);
        let w = LyapunovWeights::uniform(2, 0.5, 0.5);
        let coords = c.boundary_coords(CoordConvention::Interface);
        let ctx = ControlContext { cfg: &c, weights: &w, coords: &coords, mode: CouplingMode::Hard };
        let s = state_with(&c, 0.0, 0.0, 1.0, 0);
        assert!(mixed_bound_y(&s, &ctx) < 0.0);
        assert_eq!(mixed_control(&s, 0.7788, &ctx).value, 0.0);
    }

    #[test]
    fn mixed_control_examples() {
        let c = cfg(vec![6.0, 4.0], 0.5, 0.01);
        let w = LyapunovWeights::uniform(2, 0.5, 0.5);
        let coords = c.boundary_coords(CoordConvention::Interface);
        let ctx = ControlContext { cfg: &c, weights: &w, coords: &coords, mode: CouplingMode::Hard };
        let kappa = kappa_bound(0.5, 0.5);
        let linear = mixed_control(&state_with(&c, 1.0, 4.0, 0.0, 3), kappa, &ctx);
        assert_eq!(linear.regime, Regime::Linear);
        assert_eq!(round4(linear.value), 3.1152);
        let queued = mixed_control(&state_with(&c, 4.0, 4.0, 1.0, 0), kappa, &ctx);
        assert_eq!(queued.regime, Regime::Queue);
        assert_eq!(round4(queued.value), 3.1152);
    }

    #[test]
    fn continuous_bound_examples() {
        let net = NetworkSpec::uniform(1.0, vec![6.0, 4.0], 1.0);
        assert_eq!(continuous_bound_x(&[0.0, 0.0], &[0.0, 0.0], &net, 0.5, 0.5, 1e-6, 0.0).unwrap(), 0.0);
        let x = continuous_bound_x(&[4.0, 4.0], &[0.0, 1.0], &net, 0.5, 0.5, 1e-6, 0.0).unwrap();
        assert!((x - (32.0 * (-0.5f64).exp() - 16.0)).abs() < 1e-12);
        assert_eq!(round4(x), 3.4090);
        let uneven = NetworkSpec::new(vec![1.0, 0.5], vec![6.0, 4.0], 1.0);
        assert!(continuous_bound_x(&[1.0, 1.0], &[0.0, 0.0], &uneven, 0.5, 0.5, 1e-6, 0.0).is_err());
    }

    #[test]
    fn discrete_bound_tends_to_continuous_bound() {
        // Local coordinates per processor make the two bounds comparable.
        let l = 0.5;
        let (f1, f2, q2, t, eta) = (3.3, 2.1, 0.8, 0.7, 0.4);
        let net = NetworkSpec::uniform(1.0, vec![6.0, 4.0], l);
        let x = continuous_bound_x(&[f1, f2], &[0.0, q2], &net, eta, eta, 1e-9, t).unwrap();
        let mut prev_gap = f64::INFINITY;
        for &h in &[0.1, 0.01, 0.001, 0.0001] {
            let c = validate_network(&net, &GridSpec::new(h, h, 1.0)).unwrap();
            let w = LyapunovWeights::uniform(2, eta, eta);
            let coords = BoundaryCoords { inflow: vec![0.0, 0.0], outflow: vec![l, l] };
            let ctx = ControlContext { cfg: &c, weights: &w, coords: &coords, mode: CouplingMode::Hard };
            let mut s = SimState::constant(&c, &[f1, f2], &[0.0, q2]);
            s.k = (t / h).round() as usize;
            let gap = (mixed_bound_y(&s, &ctx) - x).abs();
            assert!(gap < prev_gap);
            prev_gap = gap;
        }
        assert!(prev_gap < 1e-3);
    }

    #[test]
    fn eigenvalues_of_serial_inflow_matrix() {
        let c = cfg(vec![6.0, 4.0], 0.5, 0.01);
        let w = LyapunovWeights::uniform(2, 0.5, 0.5);
        let coords = c.boundary_coords(CoordConvention::Interface);
        let rep = semidefinite_check(0.5, &w, &c, &coords).unwrap();
        assert_eq!(rep.lambda1, 0.0);
        assert!((rep.lambda2 - (0.25 - (-0.5f64).exp())).abs() < 1e-15);
        assert_eq!(round4(rep.lambda2), -0.3565);
        assert!(rep.negative_semidefinite);
        let at_bound = semidefinite_check(kappa_bound(0.5, 0.5), &w, &c, &coords).unwrap();
        assert!(at_bound.lambda2.abs() < 1e-12);

        let three = cfg(vec![6.0, 4.0, 3.0], 0.5, 0.01);
        assert!(matches!(
            semidefinite_check(0.5, &LyapunovWeights::uniform(3, 0.5, 0.5), &three, &three.boundary_coords(CoordConvention::Interface)),
            Err(ModelError::UnsupportedShape(_))
        ));
    }

    #[test]
    fn stability_matrix_is_diagonal_with_the_eigenvalues() {
        let g = InflowMatrix::serial(2, 0.6);
        assert_eq!(g.entries, vec![vec![0.0, 0.6], vec![1.0, 0.0]]);
        assert_eq!(g.apply(&[2.0, 5.0]), vec![3.0, 2.0]);
        let (a, b) = ([1.3, 0.9], [0.8, 0.4]);
        let s = g.stability_matrix(&a, &b);
        assert_eq!(s[0][1], 0.0);
        assert_eq!(s[1][0], 0.0);
        assert!((s[0][0] - (a[1] - b[0])).abs() < 1e-15);
        assert!((s[1][1] - (0.36 * a[0] - b[1])).abs() < 1e-15);
    }

    #[test]
    fn open_loop_profile() {
        let p = InflowProfile::Table(vec![(0.0, 1.0), (2.0, 3.0)]);
        assert_eq!(p.value_at(-1.0), 1.0);
        assert_eq!(p.value_at(1.0), 2.0);
        assert_eq!(p.value_at(5.0), 3.0);
        assert!(FeedbackLaw::OpenLoop(InflowProfile::Table(vec![(1.0, 1.0), (0.0, 1.0)])).validate().is_err());
        assert!(FeedbackLaw::Linear { kappa: 0.0 }.validate().is_err());
    }

    fn arb_state() -> impl Strategy<Value = (Vec<Vec<f64>>, f64, usize)> {
        (
            proptest::collection::vec(proptest::collection::vec(0.0f64..6.0, 50), 2),
            0.0f64..3.0,
            0usize..3000,
        )
    }

    proptest! {
        #[test]
        fn mixed_equals_linear_without_queues((flux, _q, k) in arb_state(), kappa in 0.05f64..1.0) {
            let c = cfg(vec![6.0, 4.0], 0.5, 0.01);
            let w = LyapunovWeights::uniform(2, 0.5, 0.5);
            let coords = c.boundary_coords(CoordConvention::Interface);
            let ctx = ControlContext { cfg: &c, weights: &w, coords: &coords, mode: CouplingMode::Hard };
            let mut s = SimState::new(flux, vec![0.0, 0.0]);
            s.k = k;
            let mixed = FeedbackLaw::Mixed { kappa }.control(&s, &ctx);
            let linear = FeedbackLaw::Linear { kappa }.control(&s, &ctx);
            prop_assert_eq!(mixed.value, linear.value);
        }

        #[test]
        fn mixed_control_satisfies_residual((flux, q, k) in arb_state()) {
            let c = cfg(vec![6.0, 4.0], 0.5, 0.01);
            let w = LyapunovWeights::uniform(2, 0.5, 0.5);
            let coords = c.boundary_coords(CoordConvention::Interface);
            let ctx = ControlContext { cfg: &c, weights: &w, coords: &coords, mode: CouplingMode::Hard };
            let mut s = SimState::new(flux, vec![0.0, q.max(1e-3)]);
            s.k = k;
            let y = mixed_bound_y(&s, &ctx);
            prop_assume!(y >= 0.0);
            let u = mixed_control(&s, 0.7788, &ctx).value;
            let rep = stability_residual(&s, &boundary_for(&s, u, &ctx), &w, &c, &coords);
            prop_assert!(rep.passed, "residual {}", rep.terms.residual());
        }
    }

    #[test]
    fn zero_state_gives_zero_control() {
        let c = cfg(vec![6.0, 4.0], 0.5, 0.01);
        let w = LyapunovWeights::uniform(2, 0.5, 0.5);
        let coords = c.boundary_coords(CoordConvention::Interface);
        let ctx = ControlContext { cfg: &c, weights: &w, coords: &coords, mode: CouplingMode::Hard };
        let s = SimState::zeros(&c);
        assert_eq!(FeedbackLaw::Mixed { kappa: 0.7 }.control(&s, &ctx).value, 0.0);
        assert_eq!(FeedbackLaw::Linear { kappa: 0.7 }.control(&s, &ctx).value, 0.0);
    }
}
