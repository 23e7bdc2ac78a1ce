//! Discrete Lyapunov function, decay rates and the per-step stability
//! residual.
//!
//! ```text
//! V^k = sum_{e,j} (f_{e,j})^2 p_e exp(-eta_e x_{e,j}) h  +  sum_e (q_e)^2 c_e exp(-eta~_e v_e t_k)
//! ```
//!
//! One step of the scheme changes `V` by `tau * (C1 + C2)`. Under the CFL
//! condition `C1 <= S1 + S2` and `C2 = Z1 + Z2` (unclamped queues), with
//! `S1 + Z1 <= -nu V^k`. The boundary/queue part `S2 + Z2` is what a
//! feedback law has to keep nonpositive.

use crate::discretization::BoundaryFluxes;
use crate::error::ModelError;
use crate::network::{BoundaryCoords, NetworkSpec, ValidatedConfig};
use crate::state::SimState;

/// Band applied to `S2 + Z2 <= 0`: `RESIDUAL_REL_TOL * max(1, V^k)`.
pub const RESIDUAL_REL_TOL: f64 = 1e-10;

/// Per-processor weights of the spatial factor `p_e exp(-eta_e x)` and the
/// temporal factor `c_e exp(-eta~_e v_e t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovWeights {
    pub p: Vec<f64>,
    pub eta: Vec<f64>,
    pub c: Vec<f64>,
    pub eta_tilde: Vec<f64>,
}

impl LyapunovWeights {
    /// `p_e = c_e = 1`, `eta_e = eta`, `eta~_e = eta_tilde`.
    pub fn uniform(m: usize, eta: f64, eta_tilde: f64) -> Self {
        Self {
            p: vec![1.0; m],
            eta: vec![eta; m],
            c: vec![1.0; m],
            eta_tilde: vec![eta_tilde; m],
        }
    }

    /// `p` and `c` must be positive; the exponents may be zero (unweighted).
    pub fn validate(&self, m: usize) -> Result<(), ModelError> {
        for (name, values, allow_zero) in [
            ("p", &self.p, false),
            ("eta", &self.eta, true),
            ("c", &self.c, false),
            ("eta_tilde", &self.eta_tilde, true),
        ] {
            if values.len() != m {
                return Err(ModelError::InvalidParameter(format!(
                    "{name} has {} entries, expected {m}",
                    values.len()
                )));
            }
            for (e, &w) in values.iter().enumerate() {
                let ok = w.is_finite() && if allow_zero { w >= 0.0 } else { w > 0.0 };
                if !ok {
                    return Err(ModelError::InvalidParameter(format!(
                        "{name}_{} = {w} is not admissible",
                        e + 1
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn is_uniform(&self) -> bool {
        let same = |v: &[f64]| v.windows(2).all(|w| w[0] == w[1]);
        same(&self.p) && same(&self.eta) && same(&self.c) && same(&self.eta_tilde)
    }

    /// Temporal factor `c_e exp(-eta~_e v_e t)`.
    pub fn queue_weight(&self, e: usize, velocity: f64, t: f64) -> f64 {
        self.c[e] * (-self.eta_tilde[e] * velocity * t).exp()
    }

    pub fn spatial_weight(&self, e: usize, x: f64) -> f64 {
        self.p[e] * (-self.eta[e] * x).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovSample {
    pub k: usize,
    pub v: f64,
    pub v1: f64,
    pub v2: f64,
}

/// Cell-center weights `p_e exp(-eta_e x_{e,j})`, cached for repeated
/// evaluation along a trajectory.
#[derive(Debug, Clone)]
pub struct SpatialWeights {
    table: Vec<Vec<f64>>,
}

impl SpatialWeights {
    pub fn new(weights: &LyapunovWeights, cfg: &ValidatedConfig) -> Self {
        let table = (0..cfg.processors())
            .map(|e| {
                (0..cfg.cells())
                    .map(|j| weights.spatial_weight(e, cfg.cell_center_unchecked(e, j)))
                    .collect()
            })
            .collect();
        Self { table }
    }

    pub fn get(&self, e: usize, j: usize) -> f64 {
        self.table[e][j]
    }

    fn extremes(&self) -> (f64, f64) {
        self.table
            .iter()
            .flatten()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &w| (lo.min(w), hi.max(w)))
    }
}

pub(crate) fn sample_with(
    state: &SimState,
    spatial: &SpatialWeights,
    weights: &LyapunovWeights,
    cfg: &ValidatedConfig,
) -> LyapunovSample {
    let h = cfg.h();
    let t = cfg.time(state.k);
    let v1 = state
        .flux
        .iter()
        .enumerate()
        .map(|(e, row)| {
            row.iter()
                .enumerate()
                .map(|(j, f)| f * f * spatial.get(e, j))
                .sum::<f64>()
        })
        .sum::<f64>()
        * h;
    let v2 = state
        .queues
        .iter()
        .zip(&cfg.network().velocities)
        .enumerate()
        .map(|(e, (q, &v))| q * q * weights.queue_weight(e, v, t))
        .sum::<f64>();
    LyapunovSample {
        k: state.k,
        v: v1 + v2,
        v1,
        v2,
    }
}

/// `V^k` at the state's own time `t_k = k*tau`.
pub fn discrete_v(state: &SimState, weights: &LyapunovWeights, cfg: &ValidatedConfig) -> LyapunovSample {
    sample_with(state, &SpatialWeights::new(weights, cfg), weights, cfg)
}

/// Discrete decay rate `nu = min(nu1, nu2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayRate {
    pub nu: f64,
    pub nu1: f64,
    pub nu2: f64,
}

/// `nu1 = min_e v_e (1 - exp(-eta_e h)) / h`,
/// `nu2 = max_e(v_e) min_e (1 - exp(-eta~_e v_e tau)) / h`.
pub fn decay_rate_parts(velocities: &[f64], weights: &LyapunovWeights, h: f64, tau: f64) -> DecayRate {
    let vmax = velocities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let nu1 = velocities
        .iter()
        .zip(&weights.eta)
        .map(|(&v, &eta)| v * -(-eta * h).exp_m1())
        .fold(f64::INFINITY, f64::min)
        / h;
    let nu2 = vmax
        * velocities
            .iter()
            .zip(&weights.eta_tilde)
            .map(|(&v, &et)| -(-et * v * tau).exp_m1())
            .fold(f64::INFINITY, f64::min)
        / h;
    DecayRate {
        nu: nu1.min(nu2),
        nu1,
        nu2,
    }
}

/// Decay rate of the discrete scheme; rejects `tau*nu` outside `(0, 1]`.
pub fn decay_rate(cfg: &ValidatedConfig, weights: &LyapunovWeights) -> Result<DecayRate, ModelError> {
    let rate = decay_rate_parts(&cfg.network().velocities, weights, cfg.h(), cfg.tau());
    let tn = cfg.tau() * rate.nu;
    if !(tn > 0.0 && tn <= 1.0) {
        return Err(ModelError::DecayRate(tn));
    }
    Ok(rate)
}

/// Continuous-limit rate `min_e v_e min(eta_e, eta~_e)`; equals
/// `min(eta, eta~) min_e v_e` for uniform weights.
pub fn analytic_decay_rate(weights: &LyapunovWeights, network: &NetworkSpec) -> f64 {
    network
        .velocities
        .iter()
        .enumerate()
        .map(|(e, &v)| v * weights.eta[e].min(weights.eta_tilde[e]))
        .fold(f64::INFINITY, f64::min)
}

/// `V_up^k = V^0 exp(-nu tau k)`.
pub fn upper_bound(v0: f64, nu: f64, tau: f64, k: usize) -> f64 {
    v0 * (-nu * tau * k as f64).exp()
}

/// `sqrt(sum f^2 h + sum q^2)`.
pub fn discrete_norm(state: &SimState, h: f64) -> f64 {
    let fsq: f64 = state.flux.iter().flatten().map(|f| f * f).sum();
    let qsq: f64 = state.queues.iter().map(|q| q * q).sum();
    (fsq * h + qsq).sqrt()
}

/// Constants with `lower * ||(f,q)||_h^2 <= V^k <= upper * ||(f,q)||_h^2`.
pub fn norm_constants(weights: &LyapunovWeights, cfg: &ValidatedConfig, t: f64) -> (f64, f64) {
    norm_constants_with(&SpatialWeights::new(weights, cfg), weights, cfg, t)
}

fn norm_constants_with(spatial: &SpatialWeights, weights: &LyapunovWeights, cfg: &ValidatedConfig, t: f64) -> (f64, f64) {
    let (mut lo, mut hi) = spatial.extremes();
    for (e, &v) in cfg.network().velocities.iter().enumerate() {
        let w = weights.queue_weight(e, v, t);
        lo = lo.min(w);
        hi = hi.max(w);
    }
    (lo, hi)
}

/// The four terms bounding `(V^{k+1} - V^k)/tau` at step `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualSample {
    pub s1: f64,
    pub s2: f64,
    pub z1: f64,
    pub z2: f64,
}

impl ResidualSample {
    pub fn residual(&self) -> f64 {
        self.s2 + self.z2
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualReport {
    pub k: usize,
    pub terms: ResidualSample,
    pub tolerance: f64,
    pub passed: bool,
    pub norm_lower: f64,
    pub norm_upper: f64,
}

/// `S2 + Z2` for the given outflows and boundary fluxes.
///
/// `S2 = sum_e v_e p_e (g_out,e^2 exp(-eta_e x_in,e) - f_{e,N-1}^2 exp(-eta_e x_out,e))`,
/// `Z2 = sum_e (2 q_e d_e + tau d_e^2) c_e exp(-eta~_e v_e (t_k + tau))` with
/// `d_e = g_in,e - g_out,e`.
pub fn boundary_terms(
    outflows: &[f64],
    boundary: &BoundaryFluxes,
    queues: &[f64],
    weights: &LyapunovWeights,
    cfg: &ValidatedConfig,
    coords: &BoundaryCoords,
    t: f64,
) -> (f64, f64) {
    let tau = cfg.tau();
    let mut s2 = 0.0;
    let mut z2 = 0.0;
    for (e, &v) in cfg.network().velocities.iter().enumerate() {
        let inflow = boundary.g_out[e];
        s2 += v
            * (inflow * inflow * weights.spatial_weight(e, coords.inflow[e])
                - outflows[e] * outflows[e] * weights.spatial_weight(e, coords.outflow[e]));
        let d = boundary.g_in[e] - inflow;
        z2 += (2.0 * queues[e] * d + tau * d * d) * weights.queue_weight(e, v, t + tau);
    }
    (s2, z2)
}

/// Evaluates all four decomposition terms at level `k` and the verdict
/// `S2 + Z2 <= RESIDUAL_REL_TOL * max(1, V^k)`.
pub fn stability_residual(
    state: &SimState,
    boundary: &BoundaryFluxes,
    weights: &LyapunovWeights,
    cfg: &ValidatedConfig,
    coords: &BoundaryCoords,
) -> ResidualReport {
    ResidualMonitor::new(weights, cfg, coords.clone()).evaluate(state, boundary)
}

/// Residual evaluation with cached weights.
#[derive(Debug, Clone)]
pub struct ResidualMonitor {
    weights: LyapunovWeights,
    spatial: SpatialWeights,
    cfg: ValidatedConfig,
    coords: BoundaryCoords,
}

impl ResidualMonitor {
    pub fn new(weights: &LyapunovWeights, cfg: &ValidatedConfig, coords: BoundaryCoords) -> Self {
        Self {
            weights: weights.clone(),
            spatial: SpatialWeights::new(weights, cfg),
            cfg: cfg.clone(),
            coords,
        }
    }

    pub fn sample(&self, state: &SimState) -> LyapunovSample {
        sample_with(state, &self.spatial, &self.weights, &self.cfg)
    }

    pub fn evaluate(&self, state: &SimState, boundary: &BoundaryFluxes) -> ResidualReport {
        let cfg = &self.cfg;
        let (h, tau) = (cfg.h(), cfg.tau());
        let t = cfg.time(state.k);
        let velocities = &cfg.network().velocities;

        let s1 = state
            .flux
            .iter()
            .enumerate()
            .map(|(e, row)| {
                let weighted: f64 = row
                    .iter()
                    .enumerate()
                    .map(|(j, f)| f * f * self.spatial.get(e, j))
                    .sum();
                velocities[e] * (-self.weights.eta[e] * h).exp_m1() * weighted
            })
            .sum();
        let z1 = state
            .queues
            .iter()
            .enumerate()
            .map(|(e, q)| {
                let v = velocities[e];
                q * q * self.weights.queue_weight(e, v, t) * (-self.weights.eta_tilde[e] * v * tau).exp_m1() / tau
            })
            .sum();
        let (s2, z2) = boundary_terms(
            &state.outflows(),
            boundary,
            &state.queues,
            &self.weights,
            cfg,
            &self.coords,
            t,
        );
        let terms = ResidualSample { s1, s2, z1, z2 };
        let v = self.sample(state).v;
        let tolerance = RESIDUAL_REL_TOL * v.max(1.0);
        let (norm_lower, norm_upper) = norm_constants_with(&self.spatial, &self.weights, cfg, t);
        ResidualReport {
            k: state.k,
            terms,
            tolerance,
            passed: terms.residual() <= tolerance,
            norm_lower,
            norm_upper,
        }
    }
}

/// `C1` and `C2`: the flux and queue parts of `(V^{k+1} - V^k)/tau`,
/// evaluated from the two time levels.
pub fn proof_terms(before: &SimState, after: &SimState, weights: &LyapunovWeights, cfg: &ValidatedConfig) -> (f64, f64) {
    let spatial = SpatialWeights::new(weights, cfg);
    let (h, tau) = (cfg.h(), cfg.tau());
    let c1 = before
        .flux
        .iter()
        .zip(&after.flux)
        .enumerate()
        .map(|(e, (old, new))| {
            old.iter()
                .zip(new)
                .enumerate()
                .map(|(j, (a, b))| (b * b - a * a) * spatial.get(e, j))
                .sum::<f64>()
        })
        .sum::<f64>()
        * h
        / tau;
    let (t0, t1) = (cfg.time(before.k), cfg.time(after.k));
    let c2 = before
        .queues
        .iter()
        .zip(&after.queues)
        .zip(&cfg.network().velocities)
        .enumerate()
        .map(|(e, ((a, b), &v))| b * b * weights.queue_weight(e, v, t1) - a * a * weights.queue_weight(e, v, t0))
        .sum::<f64>()
        / tau;
    (c1, c2)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayConvergenceRow {
    pub h: f64,
    pub nu: f64,
    pub error: f64,
    /// `error(h) / error(previous h)`; `None` for the first row.
    pub ratio: Option<f64>,
}

/// Discrete decay rate against its continuous limit along a sequence of
/// space steps, with `tau = h / max_e v_e`.
pub fn decay_convergence(weights: &LyapunovWeights, network: &NetworkSpec, hs: &[f64]) -> Vec<DecayConvergenceRow> {
    let limit = analytic_decay_rate(weights, network);
    let vmax = network.max_velocity();
    let mut prev: Option<f64> = None;
    hs.iter()
        .map(|&h| {
            let rate = decay_rate_parts(&network.velocities, weights, h, h / vmax);
            let error = (rate.nu - limit).abs();
            let ratio = prev.map(|p| error / p);
            prev = Some(error);
            DecayConvergenceRow {
                h,
                nu: rate.nu,
                error,
                ratio,
            }
        })
        .collect()
}
