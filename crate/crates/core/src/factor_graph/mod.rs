//! Discrete factor graphs with log-domain dense factor tensors.
//!
//! Factors are stored twice: the exp-domain potentials exactly as supplied
//! (so file round-trips are value-exact) and their natural log, with zero
//! potentials clamped to [`LOG_ZERO`]. Message passing only ever reads the
//! clamped log tensor.

mod isomorphism;
mod json;

pub use isomorphism::{apply_isomorphism, random_isomorphism, Isomorphism};
pub use json::{from_json_str, read_json, to_json_string, write_json};

use std::ops::Range;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logspace::{clamp_log, LOG_ZERO};

/// Default cap on factor arity.
pub const DEFAULT_MAX_ARITY: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableDecl {
    pub id: usize,
    pub cardinality: usize,
}

impl VariableDecl {
    pub fn new(id: usize, cardinality: usize) -> Self {
        Self { id, cardinality }
    }
}

/// A factor over an ordered scope of variables.
///
/// Dimension `k` of the tensors corresponds to variable `scope[k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorDecl {
    pub id: usize,
    pub scope: Vec<usize>,
    potentials: ArrayD<f64>,
    log_potential: ArrayD<f64>,
}

impl FactorDecl {
    /// Factor from non-negative exp-domain potentials.
    pub fn from_potentials(id: usize, scope: Vec<usize>, potentials: ArrayD<f64>) -> Self {
        let log_potential = potentials.mapv(|p| clamp_log(p.ln()));
        Self { id, scope, potentials, log_potential }
    }

    /// Factor from log potentials; `-inf` entries become zero potentials.
    pub fn from_log_potentials(id: usize, scope: Vec<usize>, log_potential: ArrayD<f64>) -> Self {
        let potentials = log_potential.mapv(|l| if l <= LOG_ZERO { 0.0 } else { l.exp() });
        let log_potential = log_potential.mapv(clamp_log);
        Self { id, scope, potentials, log_potential }
    }

    /// Factor from a flat row-major list of exp-domain potentials.
    pub fn from_flat(id: usize, scope: Vec<usize>, shape: &[usize], flat: Vec<f64>) -> Result<Self> {
        let potentials = ArrayD::from_shape_vec(IxDyn(shape), flat).map_err(|e| {
            Error::ShapeMismatch(format!("factor {id}: {e}"))
        })?;
        Ok(Self::from_potentials(id, scope, potentials))
    }

    pub fn arity(&self) -> usize {
        self.scope.len()
    }

    pub fn potentials(&self) -> &ArrayD<f64> {
        &self.potentials
    }

    /// Log potentials with zeros clamped to [`LOG_ZERO`].
    pub fn log_potential(&self) -> &ArrayD<f64> {
        &self.log_potential
    }

    /// Log potentials with clamped entries mapped back to `-inf`.
    pub fn exact_log_potential(&self) -> ArrayD<f64> {
        self.log_potential.mapv(|l| if l <= LOG_ZERO { f64::NEG_INFINITY } else { l })
    }

    /// Sets every entry selected by `pred` (called with the multi-index) to a
    /// zero potential.
    pub(crate) fn zero_entries<F: Fn(&[usize]) -> bool>(&mut self, pred: F) {
        let shape = self.potentials.shape().to_vec();
        let (potentials, log_potential) = (&mut self.potentials, &mut self.log_potential);
        for_each_index(&shape, |idx| {
            if pred(idx) {
                potentials[IxDyn(idx)] = 0.0;
                log_potential[IxDyn(idx)] = LOG_ZERO;
            }
        });
    }

    pub(crate) fn map_tensors<F: Fn(&ArrayD<f64>) -> ArrayD<f64>>(&self, id: usize, scope: Vec<usize>, f: F) -> Self {
        Self {
            id,
            scope,
            potentials: f(&self.potentials),
            log_potential: f(&self.log_potential),
        }
    }
}

/// One directed-edge slot: the `position`-th scope entry of `factor`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Edge {
    pub factor: usize,
    pub position: usize,
    pub variable: usize,
}

/// A validated, immutable factor graph.
///
/// Edges are numbered factor-major: the edges of factor `a` occupy the
/// contiguous range [`FactorGraph::factor_edges`], in scope order.
#[derive(Clone, Debug)]
pub struct FactorGraph {
    variables: Vec<VariableDecl>,
    factors: Vec<FactorDecl>,
    max_arity: usize,
    adjacency: Vec<Vec<(usize, usize)>>,
    edges: Vec<Edge>,
    factor_edge_start: Vec<usize>,
    variable_edges: Vec<Vec<usize>>,
    components: usize,
}

impl PartialEq for FactorGraph {
    fn eq(&self, other: &Self) -> bool {
        self.variables == other.variables && self.factors == other.factors
    }
}

impl FactorGraph {
    /// Validates and indexes a factor graph with the default arity cap.
    pub fn new(variables: Vec<VariableDecl>, factors: Vec<FactorDecl>) -> Result<Self> {
        Self::with_max_arity(variables, factors, DEFAULT_MAX_ARITY)
    }

    pub fn with_max_arity(
        variables: Vec<VariableDecl>,
        factors: Vec<FactorDecl>,
        max_arity: usize,
    ) -> Result<Self> {
        for (pos, v) in variables.iter().enumerate() {
            if v.id != pos {
                return Err(Error::NonContiguousVariables { expected: pos, found: v.id });
            }
            if v.cardinality < 2 {
                return Err(Error::BadCardinality { var: v.id, cardinality: v.cardinality });
            }
        }
        for (pos, f) in factors.iter().enumerate() {
            if f.id != pos {
                return Err(Error::NonContiguousFactors { expected: pos, found: f.id });
            }
            if f.arity() > max_arity {
                return Err(Error::ArityExceeded { factor: f.id, arity: f.arity(), max: max_arity });
            }
            let mut seen = Vec::with_capacity(f.arity());
            for &var in &f.scope {
                if var >= variables.len() {
                    return Err(Error::UnknownVariable { factor: f.id, var });
                }
                if seen.contains(&var) {
                    return Err(Error::DuplicateVariable { factor: f.id, var });
                }
                seen.push(var);
            }
            let expected: Vec<usize> = f.scope.iter().map(|&v| variables[v].cardinality).collect();
            if f.potentials.shape() != expected.as_slice() {
                return Err(Error::ShapeMismatch(format!(
                    "factor {} has tensor shape {:?} but scope cardinalities {:?}",
                    f.id,
                    f.potentials.shape(),
                    expected
                )));
            }
            if let Some(&bad) = f.potentials.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
                return Err(Error::InvalidPotential { factor: f.id, value: bad });
            }
            if f.log_potential.iter().any(|l| !l.is_finite()) {
                return Err(Error::InvalidPotential { factor: f.id, value: f64::NAN });
            }
        }

        let mut adjacency = vec![Vec::new(); variables.len()];
        let mut variable_edges = vec![Vec::new(); variables.len()];
        let mut edges = Vec::new();
        let mut factor_edge_start = Vec::with_capacity(factors.len() + 1);
        for f in &factors {
            factor_edge_start.push(edges.len());
            for (position, &variable) in f.scope.iter().enumerate() {
                adjacency[variable].push((f.id, position));
                variable_edges[variable].push(edges.len());
                edges.push(Edge { factor: f.id, position, variable });
            }
        }
        factor_edge_start.push(edges.len());

        let components = count_components(variables.len(), &factors);
        Ok(Self {
            variables,
            factors,
            max_arity,
            adjacency,
            edges,
            factor_edge_start,
            variable_edges,
            components,
        })
    }

    pub fn num_variables(&self) -> usize {
        self.variables.len()
    }

    pub fn num_factors(&self) -> usize {
        self.factors.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn variables(&self) -> &[VariableDecl] {
        &self.variables
    }

    pub fn factors(&self) -> &[FactorDecl] {
        &self.factors
    }

    pub fn factor(&self, a: usize) -> &FactorDecl {
        &self.factors[a]
    }

    pub fn cardinality(&self, var: usize) -> usize {
        self.variables[var].cardinality
    }

    pub fn max_cardinality(&self) -> usize {
        self.variables.iter().map(|v| v.cardinality).max().unwrap_or(0)
    }

    pub fn max_arity(&self) -> usize {
        self.max_arity
    }

    /// Largest arity actually present.
    pub fn largest_factor_arity(&self) -> usize {
        self.factors.iter().map(FactorDecl::arity).max().unwrap_or(0)
    }

    /// Number of factors containing `var`.
    pub fn degree(&self, var: usize) -> usize {
        self.adjacency[var].len()
    }

    /// `(factor, position)` pairs for every factor containing `var`.
    pub fn adjacency(&self, var: usize) -> &[(usize, usize)] {
        &self.adjacency[var]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> Edge {
        self.edges[e]
    }

    pub fn factor_edges(&self, a: usize) -> Range<usize> {
        self.factor_edge_start[a]..self.factor_edge_start[a + 1]
    }

    pub fn variable_edges(&self, var: usize) -> &[usize] {
        &self.variable_edges[var]
    }

    /// Id of the edge joining factor `a` and its scope position `position`.
    pub fn edge_id(&self, a: usize, position: usize) -> usize {
        self.factor_edge_start[a] + position
    }

    /// Connected components of the bipartite graph; isolated variables count
    /// as their own component.
    pub fn num_components(&self) -> usize {
        self.components
    }

    pub fn is_connected(&self) -> bool {
        self.components <= 1
    }

    /// Product of all cardinalities as a float (it can overflow `usize`).
    pub fn state_space_size(&self) -> f64 {
        self.variables.iter().map(|v| v.cardinality as f64).product()
    }

    /// True when the bipartite variable/factor graph has no cycles.
    pub fn is_forest(&self) -> bool {
        self.edges.len() + self.components == self.variables.len() + self.factors.len()
    }

    /// For a forest, the largest number of factors on a path feeding any
    /// factor-to-variable message; undamped parallel BP is exact after this
    /// many iterations. `None` for graphs with cycles.
    pub fn tree_height(&self) -> Option<usize> {
        if !self.is_forest() {
            return None;
        }
        let mut memo = vec![None; self.edges.len()];
        Some((0..self.edges.len()).map(|e| self.fac_to_var_depth(e, &mut memo)).max().unwrap_or(0))
    }

    fn fac_to_var_depth(&self, e: usize, memo: &mut [Option<usize>]) -> usize {
        if let Some(d) = memo[e] {
            return d;
        }
        let a = self.edges[e].factor;
        let mut deepest = 0;
        for j in self.factor_edges(a) {
            if j == e {
                continue;
            }
            let var = self.edges[j].variable;
            for &c in &self.variable_edges[var] {
                if c != j {
                    deepest = deepest.max(self.fac_to_var_depth(c, memo));
                }
            }
        }
        memo[e] = Some(deepest + 1);
        deepest + 1
    }

    pub(crate) fn into_parts(self) -> (Vec<VariableDecl>, Vec<FactorDecl>, usize) {
        (self.variables, self.factors, self.max_arity)
    }
}

fn count_components(n_vars: usize, factors: &[FactorDecl]) -> usize {
    let mut parent: Vec<usize> = (0..n_vars).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut scopeless = 0;
    for f in factors {
        match f.scope.split_first() {
            None => scopeless += 1,
            Some((&first, rest)) => {
                for &v in rest {
                    let (ra, rb) = (find(&mut parent, first), find(&mut parent, v));
                    if ra != rb {
                        parent[ra] = rb;
                    }
                }
            }
        }
    }
    let roots = (0..n_vars).filter(|&v| find(&mut parent, v) == v).count();
    roots + scopeless
}

/// Pairwise Ising coupling `exp(J x_i x_j)` between two spins, states
/// `0 -> -1` and `1 -> +1`, in log domain.
pub fn ising_pair_log_potential(coupling: f64) -> ArrayD<f64> {
    ArrayD::from_shape_vec(IxDyn(&[2, 2]), vec![coupling, -coupling, -coupling, coupling])
        .expect("2x2 shape")
}

/// Unary Ising field `exp(J x_i)` in log domain.
pub fn ising_field_log_potential(field: f64) -> ArrayD<f64> {
    ArrayD::from_shape_vec(IxDyn(&[2]), vec![-field, field]).expect("length-2 shape")
}

/// Row-major multi-index iterator over a tensor shape.
pub(crate) fn for_each_index<F: FnMut(&[usize])>(shape: &[usize], mut f: F) {
    if shape.iter().any(|&s| s == 0) {
        return;
    }
    let mut idx = vec![0usize; shape.len()];
    loop {
        f(&idx);
        let mut k = shape.len();
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < shape[k] {
                break;
            }
            idx[k] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary_vars(n: usize) -> Vec<VariableDecl> {
        (0..n).map(|i| VariableDecl::new(i, 2)).collect()
    }

    #[test]
    fn minimal_graph() {
        let f = FactorDecl::from_flat(0, vec![0], &[2], vec![1.0, 1.0]).unwrap();
        let g = FactorGraph::new(binary_vars(1), vec![f]).unwrap();
        assert_eq!(g.degree(0), 1);
        assert_eq!(g.num_edges(), 1);
        assert!(g.is_connected());
    }

    #[test]
    fn duplicate_scope_rejected() {
        let f = FactorDecl::from_flat(0, vec![0, 0], &[2, 2], vec![1.0; 4]).unwrap();
        assert!(matches!(
            FactorGraph::new(binary_vars(1), vec![f]),
            Err(Error::DuplicateVariable { factor: 0, var: 0 })
        ));
    }

    #[test]
    fn ising_coupling_logs() {
        let j: f64 = 1.0;
        let pot = ArrayD::from_shape_vec(
            IxDyn(&[2, 2]),
            vec![j.exp(), (-j).exp(), (-j).exp(), j.exp()],
        )
        .unwrap();
        let f = FactorDecl::from_potentials(0, vec![0, 1], pot);
        let g = FactorGraph::new(binary_vars(2), vec![f]).unwrap();
        let logs: Vec<f64> = g.factor(0).log_potential().iter().copied().collect();
        for (got, want) in logs.iter().zip([1.0, -1.0, -1.0, 1.0]) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_and_sign_errors() {
        let f = FactorDecl::from_flat(0, vec![0, 1], &[2, 3], vec![1.0; 6]).unwrap();
        assert!(matches!(FactorGraph::new(binary_vars(2), vec![f]), Err(Error::ShapeMismatch(_))));
        let f = FactorDecl::from_flat(0, vec![0], &[2], vec![1.0, -0.5]).unwrap();
        assert!(matches!(FactorGraph::new(binary_vars(1), vec![f]), Err(Error::InvalidPotential { .. })));
        let f = FactorDecl::from_flat(0, vec![3], &[2], vec![1.0, 1.0]).unwrap();
        assert!(matches!(FactorGraph::new(binary_vars(1), vec![f]), Err(Error::UnknownVariable { .. })));
    }

    #[test]
    fn zero_potentials_are_clamped() {
        let f = FactorDecl::from_flat(0, vec![0], &[2], vec![0.0, 1.0]).unwrap();
        let g = FactorGraph::new(binary_vars(1), vec![f]).unwrap();
        assert_eq!(g.factor(0).log_potential()[[0]], LOG_ZERO);
        assert!(g.factor(0).log_potential().iter().all(|l| l.is_finite()));
        assert_eq!(g.factor(0).exact_log_potential()[[0]], f64::NEG_INFINITY);
    }

    #[test]
    fn arity_cap_enforced() {
        let f = FactorDecl::from_flat(0, vec![0, 1, 2], &[2, 2, 2], vec![1.0; 8]).unwrap();
        assert!(matches!(
            FactorGraph::with_max_arity(binary_vars(3), vec![f], 2),
            Err(Error::ArityExceeded { arity: 3, max: 2, .. })
        ));
    }

    #[test]
    fn adjacency_transposes_scopes() {
        let f0 = FactorDecl::from_flat(0, vec![0, 1], &[2, 2], vec![1.0; 4]).unwrap();
        let f1 = FactorDecl::from_flat(1, vec![2, 0], &[2, 2], vec![1.0; 4]).unwrap();
        let g = FactorGraph::new(binary_vars(4), vec![f0, f1]).unwrap();
        assert_eq!(g.adjacency(0), &[(0, 0), (1, 1)]);
        assert_eq!(g.degree(3), 0);
        assert_eq!(g.num_components(), 2);
        let degree_sum: usize = (0..4).map(|v| g.degree(v)).sum();
        let arity_sum: usize = g.factors().iter().map(FactorDecl::arity).sum();
        assert_eq!(degree_sum, arity_sum);
        for (e, edge) in g.edges().iter().enumerate() {
            assert_eq!(g.edge_id(edge.factor, edge.position), e);
            assert!(g.variable_edges(edge.variable).contains(&e));
        }
    }
}
