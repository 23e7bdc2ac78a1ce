use crate::discretization::CouplingMode;
use crate::error::{ConfigIssue, ModelError, ValidationError};
use crate::feedback::FeedbackLaw;
use crate::lyapunov::LyapunovWeights;
use crate::network::{validate_network, CoordConvention, GridSpec, NetworkSpec, ValidatedConfig};
use crate::simulate::{simulate, NullRecorder, Recorder, RunConfig, Trajectory};
use crate::state::SimState;

#[derive(Debug, Clone, PartialEq)]
pub enum FluxInit {
    /// One constant per processor.
    Constant(Vec<f64>),
    /// Explicit cell values per processor.
    Table(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialData {
    pub flux: FluxInit,
    pub queues: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputOptions {
    /// Keep every `stride`-th trajectory row (the last row is always kept).
    pub stride: usize,
    pub dir: Option<String>,
}

impl Default for OutputOptions {
    fn default() -> Self {
        Self { stride: 1, dir: None }
    }
}

/// A complete, self-contained experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub network: NetworkSpec,
    pub grid: GridSpec,
    pub initial: InitialData,
    pub weights: LyapunovWeights,
    pub law: FeedbackLaw,
    pub coupling: CouplingMode,
    pub coords: CoordConvention,
    pub output: OutputOptions,
}

/// A scenario ready to run, plus non-fatal findings.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub run: RunConfig,
    pub initial: SimState,
    pub warnings: Vec<String>,
}

impl Scenario {
    /// Validates the grid, weights, law and initial data.
    ///
    /// The first queue must start empty: processor 1 is fed directly by the
    /// control, so its queue can never fill. Initial flux above capacity is
    /// reported as a warning.
    pub fn prepare(&self) -> Result<Prepared, ValidationError> {
        let mut issues = Vec::new();
        let cfg = validate_network(&self.network, &self.grid);
        let m = self.network.processors();

        if let Err(e) = self.weights.validate(m) {
            issues.push(ConfigIssue::InitialData { detail: e.to_string() });
        }
        for err in [self.law.validate(), self.coupling.validate()] {
            if let Err(ModelError::InvalidParameter(detail)) = err {
                issues.push(ConfigIssue::InitialData { detail });
            }
        }
        if self.output.stride == 0 {
            issues.push(ConfigIssue::NonPositiveParameter {
                name: "output.stride".into(),
                value: 0.0,
            });
        }
        if self.initial.queues.len() != m {
            issues.push(ConfigIssue::ShapeMismatch {
                name: "initial.queues".into(),
                expected: m,
                found: self.initial.queues.len(),
            });
        } else {
            for (e, &q) in self.initial.queues.iter().enumerate() {
                if !(q >= 0.0 && q.is_finite()) {
                    issues.push(ConfigIssue::InitialData {
                        detail: format!("q_{} = {q} must be finite and >= 0", e + 1),
                    });
                }
            }
            if self.initial.queues.first().is_some_and(|&q| q != 0.0) {
                issues.push(ConfigIssue::InitialData {
                    detail: "q_1 must be 0: the first processor is fed by the control".into(),
                });
            }
        }

        let cfg = match cfg {
            Ok(cfg) => cfg,
            Err(ValidationError(mut more)) => {
                more.extend(issues);
                return Err(ValidationError(more));
            }
        };
        let flux = self.initial_flux(&cfg, &mut issues);
        if !issues.is_empty() {
            return Err(ValidationError(issues));
        }
        let flux = flux.expect("flux is present when no issue was recorded");

        let mut warnings = Vec::new();
        for (e, row) in flux.iter().enumerate() {
            let mu = self.network.capacities[e];
            if row.iter().any(|&f| f > mu) {
                warnings.push(format!(
                    "initial flux on processor {} exceeds its capacity {mu}; transport is treated as linear",
                    e + 1
                ));
            }
        }
        if let Some(w) = self.law.gain_warning(&self.weights, self.network.length) {
            warnings.push(w);
        }

        Ok(Prepared {
            run: RunConfig {
                config: cfg,
                weights: self.weights.clone(),
                law: self.law.clone(),
                coupling: self.coupling,
                coords: self.coords,
            },
            initial: SimState::new(flux, self.initial.queues.clone()),
            warnings,
        })
    }

    fn initial_flux(&self, cfg: &ValidatedConfig, issues: &mut Vec<ConfigIssue>) -> Option<Vec<Vec<f64>>> {
        let (m, n) = (cfg.processors(), cfg.cells());
        let flux: Vec<Vec<f64>> = match &self.initial.flux {
            FluxInit::Constant(values) => {
                if values.len() != m {
                    issues.push(ConfigIssue::ShapeMismatch {
                        name: "initial.flux".into(),
                        expected: m,
                        found: values.len(),
                    });
                    return None;
                }
                values.iter().map(|&f| vec![f; n]).collect()
            }
            FluxInit::Table(rows) => {
                if rows.len() != m || rows.iter().any(|r| r.len() != n) {
                    issues.push(ConfigIssue::InitialData {
                        detail: format!("flux table must be {m} rows of {n} cells"),
                    });
                    return None;
                }
                rows.clone()
            }
        };
        if flux.iter().flatten().any(|f| !(f.is_finite() && *f >= 0.0)) {
            issues.push(ConfigIssue::InitialData {
                detail: "initial flux must be finite and >= 0".into(),
            });
            return None;
        }
        Some(flux)
    }

    pub fn run(&self) -> Result<Trajectory, ModelError> {
        self.run_with(&mut NullRecorder)
    }

    pub fn run_with(&self, recorder: &mut dyn Recorder) -> Result<Trajectory, ModelError> {
        let prepared = self.prepare()?;
        simulate(&prepared.run, prepared.initial, recorder)
    }
}
