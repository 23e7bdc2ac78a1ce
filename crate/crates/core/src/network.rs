//! Serial production line geometry: processors, grid, and coordinates.
//!
//! Processors are indexed from 0 in code. Processor `e` occupies the global
//! interval `[e*l, (e+1)*l]`; its cell `j` is centered at `e*l + (j + 1/2)*h`.

use serde::{Deserialize, Serialize};

use crate::error::{ConfigIssue, ModelError, ValidationError};

/// Relative tolerance used when checking `N*h = l` and `(K-1)*tau = T`.
const GRID_REL_TOL: f64 = 1e-9;

/// The serial line: per-processor velocity and capacity, uniform length.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub velocities: Vec<f64>,
    pub capacities: Vec<f64>,
    pub length: f64,
}

impl NetworkSpec {
    pub fn new(velocities: Vec<f64>, capacities: Vec<f64>, length: f64) -> Self {
        Self {
            velocities,
            capacities,
            length,
        }
    }

    /// `m` processors, all with the same velocity.
    pub fn uniform(velocity: f64, capacities: Vec<f64>, length: f64) -> Self {
        let velocities = vec![velocity; capacities.len()];
        Self::new(velocities, capacities, length)
    }

    pub fn processors(&self) -> usize {
        self.velocities.len()
    }

    pub fn max_velocity(&self) -> f64 {
        self.velocities.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_velocity(&self) -> f64 {
        self.velocities.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Space step, time step and horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub h: f64,
    pub tau: f64,
    pub horizon: f64,
}

impl GridSpec {
    pub fn new(h: f64, tau: f64, horizon: f64) -> Self {
        Self { h, tau, horizon }
    }

    /// Picks `tau = cfl * h / max_e(v_e)`. The result is nudged down by at
    /// most a few ulps so that the CFL ratio never exceeds `cfl` in floating
    /// point.
    pub fn with_cfl(h: f64, cfl: f64, horizon: f64, network: &NetworkSpec) -> Self {
        let vmax = network.max_velocity();
        let mut tau = cfl * h / vmax;
        for _ in 0..8 {
            if vmax * tau / h <= cfl {
                break;
            }
            tau = tau.next_down();
        }
        Self { h, tau, horizon }
    }
}

/// Which positions the boundary terms of the stability residual, the
/// mixed-law bound and the inflow-matrix test are evaluated at.
///
/// The Lyapunov sum itself always uses cell centers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoordConvention {
    /// Inflow at `e*l`, outflow at `(e+1)*l`.
    #[default]
    Interface,
    /// Inflow at the first cell center, outflow at the last cell center.
    CellCenter,
    /// Inflow at the first cell center, outflow at the center of the virtual
    /// cell `N` just past the processor end. With these positions the
    /// boundary term bounds the summation-by-parts remainder of the upwind
    /// energy exactly.
    VirtualCell,
}

/// Inflow and outflow coordinates of every processor for one convention.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryCoords {
    pub inflow: Vec<f64>,
    pub outflow: Vec<f64>,
}

/// A network/grid pair that passed validation, with derived counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedConfig {
    network: NetworkSpec,
    grid: GridSpec,
    cells: usize,
    steps: usize,
    cfl_ratio: f64,
}

impl ValidatedConfig {
    pub fn network(&self) -> &NetworkSpec {
        &self.network
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn processors(&self) -> usize {
        self.network.processors()
    }

    /// Cells per processor, `N = l / h`.
    pub fn cells(&self) -> usize {
        self.cells
    }

    /// Number of time levels `K`, with `(K-1)*tau = T`.
    pub fn time_levels(&self) -> usize {
        self.steps
    }

    pub fn cfl_ratio(&self) -> f64 {
        self.cfl_ratio
    }

    pub fn h(&self) -> f64 {
        self.grid.h
    }

    pub fn tau(&self) -> f64 {
        self.grid.tau
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.grid.tau
    }

    pub fn cell_center(&self, e: usize, j: usize) -> Result<f64, ModelError> {
        cell_center(e, j, &self.network, &self.grid)
    }

    pub(crate) fn cell_center_unchecked(&self, e: usize, j: usize) -> f64 {
        e as f64 * self.network.length + (j as f64 + 0.5) * self.grid.h
    }

    pub fn inflow_coordinate(&self, e: usize) -> f64 {
        e as f64 * self.network.length
    }

    pub fn outflow_coordinate(&self, e: usize) -> f64 {
        (e + 1) as f64 * self.network.length
    }

    pub fn boundary_coords(&self, convention: CoordConvention) -> BoundaryCoords {
        let m = self.processors();
        let n = self.cells;
        let (inflow, outflow) = match convention {
            CoordConvention::Interface => (
                (0..m).map(|e| self.inflow_coordinate(e)).collect(),
                (0..m).map(|e| self.outflow_coordinate(e)).collect(),
            ),
            CoordConvention::CellCenter => (
                (0..m).map(|e| self.cell_center_unchecked(e, 0)).collect(),
                (0..m).map(|e| self.cell_center_unchecked(e, n - 1)).collect(),
            ),
            CoordConvention::VirtualCell => (
                (0..m).map(|e| self.cell_center_unchecked(e, 0)).collect(),
                (0..m).map(|e| self.cell_center_unchecked(e, n)).collect(),
            ),
        };
        BoundaryCoords { inflow, outflow }
    }
}

/// Global coordinate of the center of cell `j` on processor `e` (both 0-based).
pub fn cell_center(e: usize, j: usize, network: &NetworkSpec, grid: &GridSpec) -> Result<f64, ModelError> {
    let m = network.processors();
    let n = cell_count(network.length, grid.h).ok_or_else(|| {
        ModelError::IndexOutOfRange(format!(
            "length {} is not a multiple of h = {}",
            network.length, grid.h
        ))
    })?;
    if e >= m {
        return Err(ModelError::IndexOutOfRange(format!(
            "processor {e} (network has {m})"
        )));
    }
    if j >= n {
        return Err(ModelError::IndexOutOfRange(format!("cell {j} (processor has {n})")));
    }
    Ok(e as f64 * network.length + (j as f64 + 0.5) * grid.h)
}

fn cell_count(length: f64, h: f64) -> Option<usize> {
    if !(length > 0.0 && h > 0.0) {
        return None;
    }
    let n = (length / h).round();
    if n < 1.0 || (n * h - length).abs() > GRID_REL_TOL * length {
        return None;
    }
    Some(n as usize)
}

/// Checks positivity, shape, `N*h = l`, `(K-1)*tau = T` and the CFL condition,
/// collecting every violation.
pub fn validate_network(network: &NetworkSpec, grid: &GridSpec) -> Result<ValidatedConfig, ValidationError> {
    let mut issues = Vec::new();
    let m = network.processors();

    if m == 0 {
        issues.push(ConfigIssue::NonPositiveParameter {
            name: "m".into(),
            value: 0.0,
        });
    }
    if network.capacities.len() != m {
        issues.push(ConfigIssue::ShapeMismatch {
            name: "mu".into(),
            expected: m,
            found: network.capacities.len(),
        });
    }
    let mut positive = |name: String, value: f64| {
        if !value.is_finite() {
            issues.push(ConfigIssue::NonFiniteParameter { name });
        } else if value <= 0.0 {
            issues.push(ConfigIssue::NonPositiveParameter { name, value });
        }
    };
    for (e, &v) in network.velocities.iter().enumerate() {
        positive(format!("v_{}", e + 1), v);
    }
    for (e, &mu) in network.capacities.iter().enumerate() {
        positive(format!("mu_{}", e + 1), mu);
    }
    positive("l".into(), network.length);
    positive("h".into(), grid.h);
    positive("tau".into(), grid.tau);
    positive("T".into(), grid.horizon);

    if !issues.is_empty() {
        return Err(ValidationError(issues));
    }

    let cells = cell_count(network.length, grid.h);
    if cells.is_none() {
        issues.push(ConfigIssue::GridMismatch {
            detail: format!(
                "l = {} is not an integer multiple of h = {}",
                network.length, grid.h
            ),
        });
    }
    let levels = (grid.horizon / grid.tau).round();
    if (levels * grid.tau - grid.horizon).abs() > GRID_REL_TOL * grid.horizon.max(grid.tau) {
        issues.push(ConfigIssue::GridMismatch {
            detail: format!(
                "T = {} is not an integer multiple of tau = {}",
                grid.horizon, grid.tau
            ),
        });
    }
    let cfl_ratio = network.max_velocity() * grid.tau / grid.h;
    if cfl_ratio > 1.0 {
        issues.push(ConfigIssue::CflViolation { ratio: cfl_ratio });
    }

    match cells {
        Some(cells) if issues.is_empty() => Ok(ValidatedConfig {
            network: network.clone(),
            grid: *grid,
            cells,
            steps: levels as usize + 1,
            cfl_ratio,
        }),
        _ => Err(ValidationError(issues)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_line() -> NetworkSpec {
        NetworkSpec::new(vec![1.0, 1.0], vec![6.0, 4.0], 0.5)
    }

    #[test]
    fn reference_setting_is_valid_at_cfl_one() {
        let cfg = validate_network(&two_line(), &GridSpec::new(0.01, 0.01, 30.0)).unwrap();
        assert_eq!(cfg.cfl_ratio(), 1.0);
        assert_eq!(cfg.cells(), 50);
        assert_eq!(cfg.time_levels(), 3001);
    }

    #[test]
    fn cfl_violation_reports_ratio() {
        let err = validate_network(&two_line(), &GridSpec::new(0.01, 0.02, 30.0)).unwrap_err();
        assert_eq!(err.cfl_ratio(), Some(2.0));
    }

    #[test]
    fn zero_capacity_is_named() {
        let net = NetworkSpec::new(vec![1.0, 1.0], vec![6.0, 0.0], 0.5);
        let err = validate_network(&net, &GridSpec::new(0.01, 0.01, 30.0)).unwrap_err();
        assert!(err.issues().iter().any(|i| matches!(
            i,
            ConfigIssue::NonPositiveParameter { name, .. } if name == "mu_2"
        )));
    }

    #[test]
    fn every_violation_is_listed() {
        let net = NetworkSpec::new(vec![1.0, 1.0], vec![6.0, 4.0], 0.5);
        let err = validate_network(&net, &GridSpec::new(0.03, 0.06, 30.0)).unwrap_err();
        assert_eq!(err.issues().len(), 2, "{err}");
    }

    #[test]
    fn length_not_multiple_of_h() {
        let err = validate_network(&two_line(), &GridSpec::new(0.3, 0.3, 3.0)).unwrap_err();
        assert!(matches!(err.issues()[0], ConfigIssue::GridMismatch { .. }));
    }

    #[test]
    fn cell_centers() {
        let net = two_line();
        let grid = GridSpec::new(0.05, 0.05, 1.0);
        assert!((cell_center(0, 0, &net, &grid).unwrap() - 0.025).abs() < 1e-15);
        assert!((cell_center(1, 0, &net, &grid).unwrap() - 0.525).abs() < 1e-15);
        assert!((cell_center(1, 9, &net, &grid).unwrap() - 0.975).abs() < 1e-15);
        assert!(cell_center(2, 0, &net, &grid).is_err());
        assert!(cell_center(0, 10, &net, &grid).is_err());
    }

    #[test]
    fn cfl_constructor_never_exceeds_bound() {
        for &v in &[0.3, 0.5, 0.7, 1.0, 1.3] {
            for &h in &[0.1, 0.05, 0.01, 0.00125, 0.000625] {
                let net = NetworkSpec::uniform(v, vec![1.0], 0.5);
                let g = GridSpec::with_cfl(h, 1.0, 1.0, &net);
                assert!(v * g.tau / g.h <= 1.0);
                assert!((g.tau - h / v).abs() <= 1e-14 * g.tau);
            }
        }
    }

    #[test]
    fn boundary_coordinates() {
        let cfg = validate_network(&two_line(), &GridSpec::new(0.05, 0.05, 1.0)).unwrap();
        let iface = cfg.boundary_coords(CoordConvention::Interface);
        assert_eq!(iface.inflow, vec![0.0, 0.5]);
        assert_eq!(iface.outflow, vec![0.5, 1.0]);
        let cc = cfg.boundary_coords(CoordConvention::CellCenter);
        assert!((cc.outflow[1] - 0.975).abs() < 1e-15);
        let vc = cfg.boundary_coords(CoordConvention::VirtualCell);
        assert!((vc.outflow[0] - 0.525).abs() < 1e-15);
    }
}
