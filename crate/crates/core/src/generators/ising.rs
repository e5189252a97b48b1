use rand::Rng;
use serde::{Deserialize, Serialize};

use super::seeded_rng;
use crate::error::{Error, Result};
use crate::factor_graph::{
    ising_field_log_potential, ising_pair_log_potential, FactorDecl, FactorGraph, VariableDecl,
};

/// Parameters of a random attractive `n x n` grid Ising model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsingSpec {
    pub n: usize,
    pub f_max: f64,
    pub c_max: f64,
    pub seed: u64,
}

impl IsingSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidArgument(format!("grid side must be >= 2, got {}", self.n)));
        }
        if !(self.f_max > 0.0 && self.c_max > 0.0) {
            return Err(Error::InvalidArgument("f_max and c_max must be positive".into()));
        }
        Ok(())
    }
}

/// Grid edges `(i, j)` with `i < j`: for each node in row-major order, its
/// right neighbor then its lower neighbor.
pub(crate) fn grid_edges(n: usize) -> Vec<(usize, usize)> {
    let mut edges = Vec::with_capacity(2 * n * (n - 1));
    for r in 0..n {
        for c in 0..n {
            let i = r * n + c;
            if c + 1 < n {
                edges.push((i, i + 1));
            }
            if r + 1 < n {
                edges.push((i, i + n));
            }
        }
    }
    edges
}

/// Samples the coupling scale `c ~ U[0, c_max)`, field scale
/// `f ~ U[0, f_max)`, fields `J_i ~ U[-f, f)` and couplings `J_ij ~ U[0, c)`,
/// in that order.
///
/// Factors `0..n²` are the unary fields of variables `0..n²` (row-major);
/// the pairwise couplings follow in [`grid_edges`] order. State 0 is spin
/// `-1`, state 1 is spin `+1`.
pub fn sample_ising(spec: &IsingSpec) -> Result<FactorGraph> {
    spec.validate()?;
    let mut rng = seeded_rng(spec.seed);
    let c = spec.c_max * rng.gen::<f64>();
    let f = spec.f_max * rng.gen::<f64>();
    let n_vars = spec.n * spec.n;
    let fields: Vec<f64> = (0..n_vars).map(|_| -f + 2.0 * f * rng.gen::<f64>()).collect();
    let edges = grid_edges(spec.n);
    let couplings: Vec<f64> = edges.iter().map(|_| c * rng.gen::<f64>()).collect();

    let variables = (0..n_vars).map(|i| VariableDecl::new(i, 2)).collect();
    let mut factors = Vec::with_capacity(n_vars + edges.len());
    for (i, &j) in fields.iter().enumerate() {
        factors.push(FactorDecl::from_log_potentials(i, vec![i], ising_field_log_potential(j)));
    }
    for (&(a, b), &j) in edges.iter().zip(&couplings) {
        let id = factors.len();
        factors.push(FactorDecl::from_log_potentials(id, vec![a, b], ising_pair_log_potential(j)));
    }
    FactorGraph::new(variables, factors)
}
