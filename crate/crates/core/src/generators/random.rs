use ndarray::{ArrayD, IxDyn};
use rand::seq::index::sample;
use rand::Rng;

use super::{seeded_rng, SeedRng};
use crate::error::{Error, Result};
use crate::factor_graph::{FactorDecl, FactorGraph, VariableDecl};

/// Shape of randomly drawn test graphs.
#[derive(Clone, Copy, Debug)]
pub struct RandomGraphSpec {
    pub num_vars: usize,
    pub min_cardinality: usize,
    pub max_cardinality: usize,
    /// Log potentials are drawn from `[-log_scale, log_scale)`.
    pub log_scale: f64,
}

impl RandomGraphSpec {
    pub fn new(num_vars: usize) -> Self {
        Self { num_vars, min_cardinality: 2, max_cardinality: 3, log_scale: 1.0 }
    }

    fn validate(&self) -> Result<()> {
        if self.num_vars == 0 || self.min_cardinality < 2 || self.max_cardinality < self.min_cardinality {
            return Err(Error::InvalidArgument(format!("bad random graph spec {self:?}")));
        }
        Ok(())
    }
}

fn draw_variables(spec: &RandomGraphSpec, rng: &mut SeedRng) -> Vec<VariableDecl> {
    (0..spec.num_vars)
        .map(|i| VariableDecl::new(i, rng.gen_range(spec.min_cardinality..=spec.max_cardinality)))
        .collect()
}

fn draw_factor(id: usize, scope: Vec<usize>, vars: &[VariableDecl], scale: f64, rng: &mut SeedRng) -> FactorDecl {
    let shape: Vec<usize> = scope.iter().map(|&v| vars[v].cardinality).collect();
    let n = shape.iter().product();
    let logs = (0..n).map(|_| scale * (2.0 * rng.gen::<f64>() - 1.0)).collect();
    FactorDecl::from_log_potentials(id, scope, ArrayD::from_shape_vec(IxDyn(&shape), logs).expect("shape"))
}

/// A connected tree-structured factor graph with strictly positive
/// potentials.
///
/// Variables are attached one at a time to an earlier variable through a
/// pairwise factor, or two at a time through a ternary factor; roughly half
/// the variables also get a unary factor.
pub fn random_tree(spec: RandomGraphSpec, seed: u64) -> Result<FactorGraph> {
    spec.validate()?;
    let mut rng = seeded_rng(seed);
    let vars = draw_variables(&spec, &mut rng);
    let mut scopes: Vec<Vec<usize>> = Vec::new();
    let mut next = 1;
    while next < spec.num_vars {
        let anchor = rng.gen_range(0..next);
        if next + 1 < spec.num_vars && rng.gen::<f64>() < 0.25 {
            scopes.push(vec![next, anchor, next + 1]);
            next += 2;
        } else if rng.gen::<bool>() {
            scopes.push(vec![anchor, next]);
            next += 1;
        } else {
            scopes.push(vec![next, anchor]);
            next += 1;
        }
    }
    for v in 0..spec.num_vars {
        if spec.num_vars == 1 || rng.gen::<bool>() {
            scopes.push(vec![v]);
        }
    }
    let factors = scopes
        .into_iter()
        .enumerate()
        .map(|(id, s)| draw_factor(id, s, &vars, spec.log_scale, &mut rng))
        .collect();
    FactorGraph::new(vars, factors)
}

/// A random, usually loopy, factor graph: one unary factor per variable plus
/// `num_factors` factors over random scopes of 2 to `max_arity` distinct
/// variables.
pub fn random_factor_graph(spec: RandomGraphSpec, num_factors: usize, max_arity: usize, seed: u64) -> Result<FactorGraph> {
    spec.validate()?;
    if max_arity < 2 || max_arity > spec.num_vars {
        return Err(Error::InvalidArgument(format!("max arity {max_arity} for {} variables", spec.num_vars)));
    }
    let mut rng = seeded_rng(seed);
    let vars = draw_variables(&spec, &mut rng);
    let mut scopes: Vec<Vec<usize>> = (0..spec.num_vars).map(|v| vec![v]).collect();
    for _ in 0..num_factors {
        let k = rng.gen_range(2..=max_arity);
        scopes.push(sample(&mut rng, spec.num_vars, k).into_vec());
    }
    let factors = scopes
        .into_iter()
        .enumerate()
        .map(|(id, s)| draw_factor(id, s, &vars, spec.log_scale, &mut rng))
        .collect();
    FactorGraph::new(vars, factors)
}
