//! Runs the scheme over the horizon with a feedback law and records the
//! Lyapunov series and the per-step stability residual.

use crate::discretization::{step, CouplingMode};
use crate::error::ModelError;
use crate::feedback::{ControlContext, FeedbackLaw, Regime};
use crate::lyapunov::{decay_rate, upper_bound, DecayRate, LyapunovSample, LyapunovWeights, ResidualMonitor, ResidualReport};
use crate::network::{CoordConvention, ValidatedConfig};
use crate::state::SimState;

/// Everything that determines a trajectory apart from the initial state.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub config: ValidatedConfig,
    pub weights: LyapunovWeights,
    pub law: FeedbackLaw,
    pub coupling: CouplingMode,
    pub coords: CoordConvention,
}

/// One time level. The control, residual and clamp fields describe the step
/// from this level to the next and are absent on the final level.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub t: f64,
    pub lyapunov: LyapunovSample,
    pub v_up: Option<f64>,
    pub control: Option<f64>,
    pub regime: Option<Regime>,
    pub residual: Option<ResidualReport>,
    pub control_clamped: bool,
    pub clamped_queues: Vec<usize>,
    pub queues: Vec<f64>,
    pub outflows: Vec<f64>,
}

/// Sink for streamed records.
pub trait Recorder {
    fn record(&mut self, record: &StepRecord);
}

#[derive(Debug, Default)]
pub struct NullRecorder;

impl Recorder for NullRecorder {
    fn record(&mut self, _record: &StepRecord) {}
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub records: Vec<StepRecord>,
    pub final_state: SimState,
    pub decay: Option<DecayRate>,
    pub tau: f64,
}

/// Largest one-step increase of `V`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kink {
    /// Step `k` maximizing `V^{k+1} - V^k`.
    pub k: usize,
    /// `max(0, V^{k+1} - V^k)`; zero exactly when `V` never increases.
    pub increment: f64,
}

impl Trajectory {
    pub fn lyapunov(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.lyapunov.v).collect()
    }

    pub fn controls(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.control).collect()
    }

    pub fn queue(&self, e: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.queues[e]).collect()
    }

    pub fn upper_bounds(&self) -> Option<Vec<f64>> {
        self.records.iter().map(|r| r.v_up).collect()
    }

    pub fn kink(&self) -> Kink {
        let v = self.lyapunov();
        let (k, inc) = v
            .windows(2)
            .enumerate()
            .map(|(k, w)| (k, w[1] - w[0]))
            .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
        Kink { k, increment: inc.max(0.0) }
    }

    /// Steps with `V^{k+1} > V^k + tol * max(1, V^k)`.
    pub fn increasing_steps(&self, tol: f64) -> Vec<usize> {
        self.lyapunov()
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[1] > w[0] + tol * w[0].max(1.0))
            .map(|(k, _)| k)
            .collect()
    }

    /// `max_k V^k / V_up^k`.
    pub fn max_bound_ratio(&self) -> Option<f64> {
        self.records
            .iter()
            .map(|r| r.v_up.map(|up| if up > 0.0 { r.lyapunov.v / up } else { 1.0 }))
            .try_fold(f64::NEG_INFINITY, |acc, x| x.map(|x| acc.max(x)))
    }

    /// How far `V` rises above the guaranteed envelope, `max_k V^k/V_up^k - 1`.
    pub fn envelope_excess(&self) -> Option<f64> {
        self.max_bound_ratio().map(|r| r - 1.0)
    }

    /// `(max_k |V_up^k - V^k|, sqrt(sum_k tau (V_up^k - V^k)^2))`.
    pub fn bound_gap_norms(&self) -> Option<(f64, f64)> {
        let ups = self.upper_bounds()?;
        let (mut inf, mut sq) = (0.0f64, 0.0);
        for (r, up) in self.records.iter().zip(ups) {
            let d = up - r.lyapunov.v;
            inf = inf.max(d.abs());
            sq += self.tau * d * d;
        }
        Some((inf, sq.sqrt()))
    }

    pub fn first_failing_step(&self) -> Option<&ResidualReport> {
        self.records
            .iter()
            .filter_map(|r| r.residual.as_ref())
            .find(|rep| !rep.passed)
    }

    pub fn all_residuals_pass(&self) -> bool {
        self.first_failing_step().is_none()
    }
}

/// Advances `initial` through all `K` time levels.
///
/// Aborts with [`ModelError::NonFiniteState`] on the first non-finite value.
pub fn simulate(run: &RunConfig, initial: SimState, recorder: &mut dyn Recorder) -> Result<Trajectory, ModelError> {
    let cfg = &run.config;
    initial.check_shape(cfg)?;
    if let Some((e, j)) = initial.first_non_finite() {
        return Err(ModelError::NonFiniteState { e, j, k: initial.k });
    }
    run.weights.validate(cfg.processors())?;
    run.law.validate()?;
    run.coupling.validate()?;

    let coords = cfg.boundary_coords(run.coords);
    let monitor = ResidualMonitor::new(&run.weights, cfg, coords.clone());
    let ctx = ControlContext {
        cfg,
        weights: &run.weights,
        coords: &coords,
        mode: run.coupling,
    };
    let decay = decay_rate(cfg, &run.weights).ok();
    let levels = cfg.time_levels();

    let mut records = Vec::with_capacity(levels);
    let mut state = initial;
    let k0 = state.k;
    let mut v0 = None;
    loop {
        let sample = monitor.sample(&state);
        let v_start = *v0.get_or_insert(sample.v);
        let v_up = decay.map(|d| upper_bound(v_start, d.nu, cfg.tau(), state.k - k0));
        let mut record = StepRecord {
            k: state.k,
            t: cfg.time(state.k),
            lyapunov: sample,
            v_up,
            control: None,
            regime: None,
            residual: None,
            control_clamped: false,
            clamped_queues: Vec::new(),
            queues: state.queues.clone(),
            outflows: state.outflows(),
        };
        if state.k - k0 + 1 >= levels {
            recorder.record(&record);
            records.push(record);
            break;
        }
        let control = run.law.control(&state, &ctx);
        let (next, diag) = step(&state, control.value, cfg, run.coupling)?;
        record.control = Some(diag.applied_control);
        record.regime = Some(control.regime);
        record.control_clamped = diag.control_clamped;
        record.clamped_queues = diag.clamped_queues;
        record.residual = Some(monitor.evaluate(&state, &diag.boundary));
        recorder.record(&record);
        records.push(record);
        state = next;
    }
    Ok(Trajectory {
        records,
        final_state: state,
        decay,
        tau: cfg.tau(),
    })
}
