use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::seeded_rng;
use crate::error::{Error, Result};
use crate::factor_graph::{FactorDecl, FactorGraph, VariableDecl};

/// Edge probabilities are clamped into `[c, 1 - c]` before they become
/// potentials, so non-edges never produce zero factors.
pub const SBM_EDGE_PROB_CLAMP: f64 = 1e-6;

/// A stochastic block model over `n` nodes and `C = class_probs.len()`
/// classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SbmSpec {
    pub n: usize,
    pub class_probs: Vec<f64>,
    /// Symmetric `C x C` matrix of edge probabilities.
    pub edge_probs: Vec<Vec<f64>>,
    pub seed: u64,
}

impl SbmSpec {
    /// Two communities with priors `(.75, .25)`, within-class edge
    /// probability `.93` and between-class `.067`.
    pub fn two_community(n: usize, seed: u64) -> Self {
        Self {
            n,
            class_probs: vec![0.75, 0.25],
            edge_probs: vec![vec![0.93, 0.067], vec![0.067, 0.93]],
            seed,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_probs.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.num_classes();
        if self.n == 0 {
            return Err(Error::InvalidArgument("SBM needs at least one node".into()));
        }
        if c < 2 {
            return Err(Error::InvalidArgument(
                "SBM needs at least two classes (variables have cardinality >= 2)".into(),
            ));
        }
        if self.class_probs.iter().any(|p| !(0.0..=1.0).contains(p))
            || (self.class_probs.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::InvalidArgument("class probabilities must form a distribution".into()));
        }
        if self.edge_probs.len() != c || self.edge_probs.iter().any(|row| row.len() != c) {
            return Err(Error::InvalidArgument(format!("edge probability matrix must be {c}x{c}")));
        }
        for i in 0..c {
            for j in 0..c {
                let e = self.edge_probs[i][j];
                if !(0.0..=1.0).contains(&e) || e != self.edge_probs[j][i] {
                    return Err(Error::InvalidArgument(
                        "edge probabilities must be symmetric and within [0, 1]".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// A sampled SBM and the factor graph of its class posterior.
#[derive(Clone, Debug)]
pub struct SbmSample {
    pub classes: Vec<usize>,
    /// Sampled edges `(m, n)` with `m < n`, in lexicographic order.
    pub edges: Vec<(usize, usize)>,
    pub graph: FactorGraph,
}

/// Samples node classes, then every pair `(m, n)`, `m < n`, lexicographically.
///
/// The graph has one `C`-state variable per node, a unary factor with the
/// class priors per node (factors `0..n`), and a pairwise factor for every
/// node pair whose table is `e_ij` for sampled edges and `1 - e_ij`
/// otherwise.
pub fn build_sbm_factor_graph(spec: &SbmSpec) -> Result<SbmSample> {
    spec.validate()?;
    let c = spec.num_classes();
    let mut rng = seeded_rng(spec.seed);
    let classes: Vec<usize> = (0..spec.n)
        .map(|_| {
            let u = rng.gen::<f64>();
            let mut acc = 0.0;
            spec.class_probs
                .iter()
                .position(|&p| {
                    acc += p;
                    u < acc
                })
                .unwrap_or(c - 1)
        })
        .collect();
    let mut edges = Vec::new();
    let mut pairs = Vec::new();
    for m in 0..spec.n {
        for n in (m + 1)..spec.n {
            let present = rng.gen::<f64>() < spec.edge_probs[classes[m]][classes[n]];
            if present {
                edges.push((m, n));
            }
            pairs.push((m, n, present));
        }
    }

    let clamp = |e: f64| e.clamp(SBM_EDGE_PROB_CLAMP, 1.0 - SBM_EDGE_PROB_CLAMP);
    let variables = (0..spec.n).map(|i| VariableDecl::new(i, c)).collect();
    let mut factors = Vec::with_capacity(spec.n + pairs.len());
    for m in 0..spec.n {
        let prior = ArrayD::from_shape_vec(IxDyn(&[c]), spec.class_probs.clone()).expect("C entries");
        factors.push(FactorDecl::from_potentials(m, vec![m], prior));
    }
    for (m, n, present) in pairs {
        let table: Vec<f64> = (0..c * c)
            .map(|k| {
                let e = clamp(spec.edge_probs[k / c][k % c]);
                if present {
                    e
                } else {
                    1.0 - e
                }
            })
            .collect();
        let id = factors.len();
        factors.push(FactorDecl::from_flat(id, vec![m, n], &[c, c], table)?);
    }
    Ok(SbmSample { classes, edges, graph: FactorGraph::new(variables, factors)? })
}
