//! TOML scenario files.
//!
//! ```toml
//! name = "loaded-queue"
//!
//! [network]
//! v = 1.0            # scalar or one value per processor
//! mu = [6.0, 4.0]
//! l = 0.5
//!
//! [grid]
//! h = 0.01
//! cfl = 1.0          # or tau = 0.01
//! T = 30.0
//!
//! [initial]
//! flux = [4.0, 4.0]  # or flux_cells = [[...], [...]]
//! queues = [0.0, 1.0]
//!
//! [lyapunov]
//! eta = 0.5
//! eta_tilde = 0.5
//!
//! [feedback]
//! kind = "mixed"     # "linear", "mixed" or "open-loop"
//! kappa = 0.7788
//!
//! [simulation]
//! coupling = "hard"  # or "smoothed" with epsilon
//! coordinates = "interface"
//!
//! [output]
//! stride = 10
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::discretization::{CouplingMode, DEFAULT_EPSILON};
use crate::error::IoError;
use crate::feedback::{FeedbackLaw, InflowProfile};
use crate::lyapunov::LyapunovWeights;
use crate::network::{CoordConvention, GridSpec, NetworkSpec};
use crate::scenario::{FluxInit, InitialData, OutputOptions, Scenario};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum PerProcessor {
    Scalar(f64),
    List(Vec<f64>),
}

impl PerProcessor {
    fn expand(&self, m: usize) -> Vec<f64> {
        match self {
            PerProcessor::Scalar(x) => vec![*x; m],
            PerProcessor::List(v) => v.clone(),
        }
    }

    fn compact(values: &[f64]) -> Self {
        match values {
            [first, rest @ ..] if rest.iter().all(|x| x.to_bits() == first.to_bits()) => PerProcessor::Scalar(*first),
            _ => PerProcessor::List(values.to_vec()),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    name: Option<String>,
    network: NetworkSection,
    grid: GridSection,
    initial: InitialSection,
    lyapunov: LyapunovSection,
    feedback: FeedbackSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    simulation: Option<SimulationSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    output: Option<OutputSection>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    m: Option<usize>,
    v: PerProcessor,
    mu: Vec<f64>,
    l: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridSection {
    h: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cfl: Option<f64>,
    #[serde(rename = "T", alias = "horizon")]
    horizon: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InitialSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    flux: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    flux_cells: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    queues: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LyapunovSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    p: Option<PerProcessor>,
    eta: PerProcessor,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    c: Option<PerProcessor>,
    eta_tilde: PerProcessor,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeedbackSection {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    inflow: Option<InflowProfile>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulationSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    coupling: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    coordinates: Option<CoordConvention>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dir: Option<String>,
}

fn parse_error(path: &str, message: impl Into<String>) -> IoError {
    IoError::Parse {
        path: path.to_string(),
        message: message.into(),
    }
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of the first `key = ...` assignment, for provenance in messages.
fn line_of_key(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|line| {
        let line = line.trim_start();
        line.strip_prefix(key)
            .is_some_and(|rest| rest.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

/// Best match for an unknown key among the expected ones.
fn suggest<'a>(unknown: &str, expected: impl IntoIterator<Item = &'a str>) -> Option<&'a str> {
    expected
        .into_iter()
        .map(|cand| (cand, strsim::jaro_winkler(unknown, cand)))
        .filter(|(_, score)| *score >= 0.7)
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(cand, _)| cand)
}

/// Adds "did you mean" to serde's unknown-field messages.
fn describe_toml_error(text: &str, err: &toml::de::Error) -> String {
    let msg = err.message().trim().to_string();
    let mut out = match err.span() {
        Some(span) => format!("line {}: {msg}", line_of_offset(text, span.start)),
        None => msg.clone(),
    };
    if let Some(rest) = msg.strip_prefix("unknown field `") {
        if let Some((unknown, tail)) = rest.split_once('`') {
            let expected = tail
                .split('`')
                .skip(1)
                .step_by(2)
                .collect::<Vec<_>>();
            if let Some(best) = suggest(unknown, expected) {
                out.push_str(&format!("; did you mean `{best}`?"));
            }
        }
    }
    out
}

fn check_finite(text: &str, path: &str, name: &str, values: &[f64]) -> Result<(), IoError> {
    if values.iter().all(|x| x.is_finite()) {
        return Ok(());
    }
    let key = name.rsplit('.').next().unwrap_or(name);
    let at = line_of_key(text, key).map_or(String::new(), |l| format!("line {l}: "));
    Err(parse_error(path, format!("{at}{name} must be a finite decimal")))
}

/// Parses a scenario from TOML text; `path` is used in messages only.
///
/// The result is fully validated: `prepare` must succeed.
pub fn parse_config_str(text: &str, path: &str) -> Result<Scenario, IoError> {
    let file: FileConfig = toml::from_str(text).map_err(|e| parse_error(path, describe_toml_error(text, &e)))?;
    let scenario = into_scenario(file, text, path)?;
    scenario.prepare().map_err(|source| IoError::Validation {
        path: path.to_string(),
        source,
    })?;
    Ok(scenario)
}

pub fn parse_config(path: &Path) -> Result<Scenario, IoError> {
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| IoError::Io {
        path: shown.clone(),
        source,
    })?;
    parse_config_str(&text, &shown)
}

fn into_scenario(file: FileConfig, text: &str, path: &str) -> Result<Scenario, IoError> {
    let net = &file.network;
    let m = net.m.unwrap_or(net.mu.len());
    if m == 0 {
        return Err(parse_error(path, "network needs at least one processor"));
    }
    let velocities = net.v.expand(m);
    check_finite(text, path, "network.v", &velocities)?;
    check_finite(text, path, "network.mu", &net.mu)?;
    check_finite(text, path, "network.l", &[net.l])?;
    let network = NetworkSpec::new(velocities, net.mu.clone(), net.l);

    let g = &file.grid;
    check_finite(text, path, "grid.h", &[g.h])?;
    check_finite(text, path, "grid.T", &[g.horizon])?;
    let grid = match (g.tau, g.cfl) {
        (Some(tau), None) => {
            check_finite(text, path, "grid.tau", &[tau])?;
            GridSpec::new(g.h, tau, g.horizon)
        }
        (None, Some(cfl)) => {
            check_finite(text, path, "grid.cfl", &[cfl])?;
            if cfl.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) || g.h <= 0.0 || network.max_velocity() <= 0.0 {
                // leave the rejection to grid validation
                GridSpec::new(g.h, cfl * g.h / network.max_velocity(), g.horizon)
            } else {
                GridSpec::with_cfl(g.h, cfl, g.horizon, &network)
            }
        }
        (Some(_), Some(_)) => return Err(parse_error(path, "grid: give either tau or cfl, not both")),
        (None, None) => return Err(parse_error(path, "grid: one of tau or cfl is required")),
    };

    let init = &file.initial;
    let flux = match (&init.flux, &init.flux_cells) {
        (Some(c), None) => {
            check_finite(text, path, "initial.flux", c)?;
            FluxInit::Constant(c.clone())
        }
        (None, Some(rows)) => {
            for row in rows {
                check_finite(text, path, "initial.flux_cells", row)?;
            }
            FluxInit::Table(rows.clone())
        }
        (Some(_), Some(_)) => return Err(parse_error(path, "initial: give either flux or flux_cells, not both")),
        (None, None) => FluxInit::Constant(vec![0.0; m]),
    };
    let queues = init.queues.clone().unwrap_or_else(|| vec![0.0; m]);
    check_finite(text, path, "initial.queues", &queues)?;

    let ly = &file.lyapunov;
    let weights = LyapunovWeights {
        p: ly.p.as_ref().map_or(vec![1.0; m], |p| p.expand(m)),
        eta: ly.eta.expand(m),
        c: ly.c.as_ref().map_or(vec![1.0; m], |c| c.expand(m)),
        eta_tilde: ly.eta_tilde.expand(m),
    };
    for (name, values) in [
        ("lyapunov.p", &weights.p),
        ("lyapunov.eta", &weights.eta),
        ("lyapunov.c", &weights.c),
        ("lyapunov.eta_tilde", &weights.eta_tilde),
    ] {
        check_finite(text, path, name, values)?;
    }

    let fb = &file.feedback;
    let need_kappa = || {
        let kappa = fb
            .kappa
            .ok_or_else(|| parse_error(path, format!("feedback: kind `{}` requires kappa", fb.kind)))?;
        check_finite(text, path, "feedback.kappa", &[kappa])?;
        Ok::<f64, IoError>(kappa)
    };
    let law = match fb.kind.as_str() {
        "linear" => FeedbackLaw::Linear { kappa: need_kappa()? },
        "mixed" => FeedbackLaw::Mixed { kappa: need_kappa()? },
        "open-loop" => {
            let profile = fb.inflow.clone().unwrap_or(InflowProfile::Constant(0.0));
            let values: Vec<f64> = match &profile {
                InflowProfile::Constant(v) => vec![*v],
                InflowProfile::Table(k) => k.iter().flat_map(|&(t, v)| [t, v]).collect(),
            };
            check_finite(text, path, "feedback.inflow", &values)?;
            FeedbackLaw::OpenLoop(profile)
        }
        other => {
            let mut msg = format!("feedback: unknown kind `{other}`");
            if let Some(best) = suggest(other, ["linear", "mixed", "open-loop"]) {
                msg.push_str(&format!("; did you mean `{best}`?"));
            }
            return Err(parse_error(path, msg));
        }
    };

    let sim = file.simulation.unwrap_or_default();
    let coupling = match sim.coupling.as_deref().unwrap_or("hard") {
        "hard" => {
            if sim.epsilon.is_some() {
                return Err(parse_error(path, "simulation: epsilon only applies to smoothed coupling"));
            }
            CouplingMode::Hard
        }
        "smoothed" => {
            let epsilon = sim.epsilon.unwrap_or(DEFAULT_EPSILON);
            check_finite(text, path, "simulation.epsilon", &[epsilon])?;
            CouplingMode::Smoothed { epsilon }
        }
        other => {
            let mut msg = format!("simulation: unknown coupling `{other}`");
            if let Some(best) = suggest(other, ["hard", "smoothed"]) {
                msg.push_str(&format!("; did you mean `{best}`?"));
            }
            return Err(parse_error(path, msg));
        }
    };

    let out = file.output.unwrap_or_default();
    Ok(Scenario {
        name: file.name.unwrap_or_else(|| "scenario".into()),
        network,
        grid,
        initial: InitialData { flux, queues },
        weights,
        law,
        coupling,
        coords: sim.coordinates.unwrap_or_default(),
        output: OutputOptions {
            stride: out.stride.unwrap_or(1),
            dir: out.dir,
        },
    })
}

/// Serializes a scenario so that `parse_config_str(export_config(s))`
/// reproduces `s` exactly. The time step is always written as `tau`.
pub fn export_config(s: &Scenario) -> String {
    let (flux, flux_cells) = match &s.initial.flux {
        FluxInit::Constant(c) => (Some(c.clone()), None),
        FluxInit::Table(t) => (None, Some(t.clone())),
    };
    let (kind, kappa, inflow) = match &s.law {
        FeedbackLaw::OpenLoop(p) => ("open-loop", None, Some(p.clone())),
        FeedbackLaw::Linear { kappa } => ("linear", Some(*kappa), None),
        FeedbackLaw::Mixed { kappa } => ("mixed", Some(*kappa), None),
    };
    let (coupling, epsilon) = match s.coupling {
        CouplingMode::Hard => ("hard", None),
        CouplingMode::Smoothed { epsilon } => ("smoothed", Some(epsilon)),
    };
    let file = FileConfig {
        name: Some(s.name.clone()),
        network: NetworkSection {
            m: Some(s.network.processors()),
            v: PerProcessor::compact(&s.network.velocities),
            mu: s.network.capacities.clone(),
            l: s.network.length,
        },
        grid: GridSection {
            h: s.grid.h,
            tau: Some(s.grid.tau),
            cfl: None,
            horizon: s.grid.horizon,
        },
        initial: InitialSection {
            flux,
            flux_cells,
            queues: Some(s.initial.queues.clone()),
        },
        lyapunov: LyapunovSection {
            p: Some(PerProcessor::compact(&s.weights.p)),
            eta: PerProcessor::compact(&s.weights.eta),
            c: Some(PerProcessor::compact(&s.weights.c)),
            eta_tilde: PerProcessor::compact(&s.weights.eta_tilde),
        },
        feedback: FeedbackSection {
            kind: kind.into(),
            kappa,
            inflow,
        },
        simulation: Some(SimulationSection {
            coupling: Some(coupling.into()),
            epsilon,
            coordinates: Some(s.coords),
        }),
        output: Some(OutputSection {
            stride: Some(s.output.stride),
            dir: s.output.dir.clone(),
        }),
    };
    toml::to_string_pretty(&file).expect("scenario serializes to TOML")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{builtin, BUILTIN_NAMES};

    const BASE: &str = r#"
name = "two"

[network]
v = 1.0
mu = [6.0, 4.0]
l = 0.5

[grid]
h = 0.05
cfl = 1.0
T = 1.0

[initial]
flux = [4.0, 4.0]
queues = [0.0, 1.0]

[lyapunov]
eta = 0.5
eta_tilde = 0.5

[feedback]
kind = "mixed"
kappa = 0.7
"#;

    fn parse(text: &str) -> Result<Scenario, IoError> {
        parse_config_str(text, "test.toml")
    }

    #[test]
    fn parses_minimal_file() {
        let s = parse(BASE).unwrap();
        assert_eq!(s.network.velocities, vec![1.0, 1.0]);
        assert_eq!(s.grid.tau, 0.05);
        assert_eq!(s.weights.p, vec![1.0, 1.0]);
        assert_eq!(s.law, FeedbackLaw::Mixed { kappa: 0.7 });
        assert_eq!(s.coupling, CouplingMode::Hard);
        assert_eq!(s.output.stride, 1);
    }

    #[test]
    fn builtins_round_trip() {
        for name in BUILTIN_NAMES {
            for s in builtin(name).unwrap() {
                let text = export_config(&s);
                assert_eq!(parse(&text).unwrap(), s, "{}\n{text}", s.name);
            }
        }
    }

    #[test]
    fn round_trip_keeps_tables_and_smoothing() {
        let mut s = parse(BASE).unwrap();
        s.initial.flux = FluxInit::Table(vec![vec![0.1 + 0.2; 10], vec![1.0 / 3.0; 10]]);
        s.law = FeedbackLaw::OpenLoop(InflowProfile::Table(vec![(0.0, 1.0), (0.5, 2.5)]));
        s.coupling = CouplingMode::Smoothed { epsilon: 1e-3 };
        s.coords = CoordConvention::VirtualCell;
        s.weights.p = vec![1.0, 2.0];
        s.output.stride = 7;
        assert_eq!(parse(&export_config(&s)).unwrap(), s);
    }

    #[test]
    fn unknown_key_is_an_error_with_suggestion() {
        let text = BASE.replace("v = 1.0", "velocty = 1.0");
        let msg = parse(&text).unwrap_err().to_string();
        assert!(msg.contains("velocty"), "{msg}");
        assert!(msg.contains("line 5"), "{msg}");
        let text = BASE.replace("eta_tilde = 0.5", "eta_tilda = 0.5");
        let msg = parse(&text).unwrap_err().to_string();
        assert!(msg.contains("did you mean `eta_tilde`"), "{msg}");
    }

    #[test]
    fn misspelled_feedback_kind_is_suggested() {
        let msg = parse(&BASE.replace("\"mixed\"", "\"mixd\"")).unwrap_err().to_string();
        assert!(msg.contains("did you mean `mixed`"), "{msg}");
    }

    #[test]
    fn cfl_violation_names_the_ratio() {
        let text = BASE.replace("cfl = 1.0", "tau = 0.1");
        match parse(&text).unwrap_err() {
            IoError::Validation { source, .. } => {
                assert!((source.cfl_ratio().unwrap() - 2.0).abs() < 1e-12);
                assert!(source.to_string().contains("CFL"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn non_finite_values_are_rejected_with_line() {
        let msg = parse(&BASE.replace("l = 0.5", "l = nan")).unwrap_err().to_string();
        assert!(msg.contains("line 7") && msg.contains("network.l"), "{msg}");
        let msg = parse(&BASE.replace("kappa = 0.7", "kappa = inf")).unwrap_err().to_string();
        assert!(msg.contains("feedback.kappa"), "{msg}");
    }

    #[test]
    fn tau_and_cfl_are_exclusive() {
        let text = BASE.replace("cfl = 1.0", "cfl = 1.0\ntau = 0.05");
        assert!(parse(&text).unwrap_err().to_string().contains("either tau or cfl"));
    }

    #[test]
    fn negative_initial_queue_is_a_validation_error() {
        let text = BASE.replace("queues = [0.0, 1.0]", "queues = [0.0, -1.0]");
        assert!(matches!(parse(&text), Err(IoError::Validation { .. })));
    }
}
