//! Mixture model over vertex and edge strata, fitted by generalized EM.
//!
//! Stratum `i < n0` is an isotropic Gaussian around vertex `i`; stratum
//! `n0 + k` is the Gaussian blur of the uniform measure on edge `k`. Only the
//! vertex coordinates and the mixing weights are fitted; the noise scale is
//! fixed by the caller.

mod density;
mod fit;

pub use density::{
    edge_density_quadrature, edge_log_density, edge_log_density_quadrature, edge_log_density_status,
    vertex_log_density, DensityStatus, LOG_DENSITY_FLOOR,
};
pub use fit::{
    em_fit, grad_vertices, initialize, log_likelihood, m_step, observed_log_likelihood, responsibilities,
    update_mixing, EStep, EmConfig, FitReport, MStepConfig, MStepOutcome, ObjectiveStep,
};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Shape of the mixture: how many strata of each kind, which vertices bound
/// each edge, and the per-stratum noise scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrataModel {
    n0: usize,
    dim: usize,
    edge_endpoints: Vec<(usize, usize)>,
    sigma: Vec<f64>,
}

impl StrataModel {
    /// Shared noise scale for every stratum.
    pub fn new(n0: usize, dim: usize, edge_endpoints: Vec<(usize, usize)>, sigma: f64) -> Result<Self> {
        let n = n0 + edge_endpoints.len();
        Self::with_sigmas(n0, dim, edge_endpoints, vec![sigma; n])
    }

    pub fn with_sigmas(n0: usize, dim: usize, edge_endpoints: Vec<(usize, usize)>, sigma: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::usage("model dimension must be positive"));
        }
        if n0 + edge_endpoints.len() == 0 {
            return Err(Error::usage("model needs at least one stratum"));
        }
        for (k, &(a, b)) in edge_endpoints.iter().enumerate() {
            if a >= n0 || b >= n0 || a == b {
                return Err(Error::usage(format!("edge stratum {k} has invalid endpoints ({a}, {b})")));
            }
        }
        if sigma.len() != n0 + edge_endpoints.len() {
            return Err(Error::usage("one sigma per stratum required"));
        }
        if let Some(s) = sigma.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::usage(format!("sigma must be positive and finite, got {s}")));
        }
        Ok(Self {
            n0,
            dim,
            edge_endpoints,
            sigma,
        })
    }

    pub fn n0(&self) -> usize {
        self.n0
    }

    pub fn n1(&self) -> usize {
        self.edge_endpoints.len()
    }

    pub fn n_strata(&self) -> usize {
        self.n0 + self.edge_endpoints.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn edge_endpoints(&self) -> &[(usize, usize)] {
        &self.edge_endpoints
    }

    pub fn sigma(&self, stratum: usize) -> f64 {
        self.sigma[stratum]
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigma
    }
}

/// Snapshot of the fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmState {
    /// Vertex coordinates, one row per vertex stratum.
    pub v: Vec<Vec<f64>>,
    /// Mixing weights, one per stratum.
    pub pi: Vec<f64>,
    /// Responsibilities, row-major `|P| x N`.
    pub a: Vec<f64>,
    /// Expected complete-data log-likelihood per sample at `(v, pi, a)`.
    pub loglik: f64,
}

impl EmState {
    pub fn responsibility_row(&self, point: usize) -> &[f64] {
        let n = self.pi.len();
        &self.a[point * n..(point + 1) * n]
    }

    pub fn num_points(&self) -> usize {
        if self.pi.is_empty() {
            0
        } else {
            self.a.len() / self.pi.len()
        }
    }
}
