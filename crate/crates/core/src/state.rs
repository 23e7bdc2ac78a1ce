use crate::error::ModelError;
use crate::network::ValidatedConfig;

/// Flux per processor and cell, ghost inflow values and queue loads at one
/// time level.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    /// `flux[e][j]` for processor `e`, interior cell `j` in `0..N`.
    pub flux: Vec<Vec<f64>>,
    /// Ghost cell `j = -1` of each processor; holds the boundary inflow
    /// applied in the most recent step.
    pub ghosts: Vec<f64>,
    pub queues: Vec<f64>,
    pub k: usize,
}

impl SimState {
    pub fn new(flux: Vec<Vec<f64>>, queues: Vec<f64>) -> Self {
        let m = flux.len();
        Self {
            flux,
            ghosts: vec![0.0; m],
            queues,
            k: 0,
        }
    }

    pub fn zeros(cfg: &ValidatedConfig) -> Self {
        let m = cfg.processors();
        Self::new(vec![vec![0.0; cfg.cells()]; m], vec![0.0; m])
    }

    /// Spatially constant flux on every processor.
    pub fn constant(cfg: &ValidatedConfig, flux: &[f64], queues: &[f64]) -> Self {
        Self::new(
            flux.iter().map(|&f| vec![f; cfg.cells()]).collect(),
            queues.to_vec(),
        )
    }

    pub fn processors(&self) -> usize {
        self.flux.len()
    }

    pub fn cells(&self) -> usize {
        self.flux.first().map_or(0, Vec::len)
    }

    /// `f_{e,N-1}`, the outflow of processor `e`.
    pub fn outflow(&self, e: usize) -> f64 {
        *self.flux[e].last().expect("processor without cells")
    }

    pub fn outflows(&self) -> Vec<f64> {
        (0..self.processors()).map(|e| self.outflow(e)).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.flux.iter().flatten().all(|&f| f == 0.0) && self.queues.iter().all(|&q| q == 0.0)
    }

    pub(crate) fn check_shape(&self, cfg: &ValidatedConfig) -> Result<(), ModelError> {
        let (m, n) = (cfg.processors(), cfg.cells());
        if self.flux.len() != m || self.flux.iter().any(|row| row.len() != n) {
            return Err(ModelError::InvalidParameter(format!(
                "state shape does not match {m} processors x {n} cells"
            )));
        }
        if self.queues.len() != m || self.ghosts.len() != m {
            return Err(ModelError::InvalidParameter(format!(
                "state needs {m} queues and ghost cells"
            )));
        }
        Ok(())
    }

    /// First non-finite flux or queue value, as `(e, j)` with `j = -1` for
    /// ghosts and `j = -2` for queues.
    pub(crate) fn first_non_finite(&self) -> Option<(usize, isize)> {
        for (e, row) in self.flux.iter().enumerate() {
            if let Some(j) = row.iter().position(|f| !f.is_finite()) {
                return Some((e, j as isize));
            }
        }
        if let Some(e) = self.ghosts.iter().position(|g| !g.is_finite()) {
            return Some((e, -1));
        }
        self.queues
            .iter()
            .position(|q| !q.is_finite())
            .map(|e| (e, -2))
    }
}
