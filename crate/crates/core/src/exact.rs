//! Exact partition functions and model counts at desk scale.
//!
//! Both routes read the *unclamped* log potentials, so a factor graph whose
//! every assignment hits a zero potential reports `is_zero` rather than a
//! large negative number.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::factor_graph::FactorGraph;
use crate::generators::CnfFormula;

/// Default cap on enumerated states and elimination table sizes.
pub const DEFAULT_STATE_CAP: f64 = 16_777_216.0;

/// Largest CNF handled by [`brute_force_model_count`].
pub const MAX_COUNT_VARIABLES: usize = 24;

/// `ln Z` of a factor graph or `ln(#models)` of a formula.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExactResult {
    /// Natural log; `-inf` exactly when `is_zero`.
    pub ln_z: f64,
    pub is_zero: bool,
}

impl ExactResult {
    pub fn from_ln(ln_z: f64) -> Self {
        if ln_z == f64::NEG_INFINITY {
            Self::zero()
        } else {
            Self { ln_z, is_zero: false }
        }
    }

    pub fn zero() -> Self {
        Self { ln_z: f64::NEG_INFINITY, is_zero: true }
    }
}

/// Running logsumexp that never materializes exp-domain totals.
#[derive(Clone, Copy, Debug)]
struct LseAccumulator {
    max: f64,
    scaled_sum: f64,
}

impl LseAccumulator {
    const EMPTY: Self = Self { max: f64::NEG_INFINITY, scaled_sum: 0.0 };

    #[inline]
    fn push(&mut self, v: f64) {
        if v == f64::NEG_INFINITY {
            return;
        }
        if v > self.max {
            self.scaled_sum = self.scaled_sum * (self.max - v).exp() + 1.0;
            self.max = v;
        } else {
            self.scaled_sum += (v - self.max).exp();
        }
    }

    fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.scaled_sum.ln()
        }
    }
}

/// Flattened unclamped factor tables plus per-factor strides indexed by
/// variable.
struct FlatFactors {
    tables: Vec<Vec<f64>>,
    strides: Vec<Vec<(usize, usize)>>,
}

impl FlatFactors {
    fn new(g: &FactorGraph) -> Self {
        let mut tables = Vec::with_capacity(g.num_factors());
        let mut strides = Vec::with_capacity(g.num_factors());
        for f in g.factors() {
            let exact = f.exact_log_potential();
            tables.push(exact.iter().copied().collect());
            let mut s = vec![(0, 0); f.arity()];
            let mut acc = 1;
            for k in (0..f.arity()).rev() {
                s[k] = (f.scope[k], acc);
                acc *= g.cardinality(f.scope[k]);
            }
            strides.push(s);
        }
        Self { tables, strides }
    }

    #[inline]
    fn log_weight(&self, assignment: &[usize]) -> f64 {
        let mut total = 0.0;
        for (table, strides) in self.tables.iter().zip(&self.strides) {
            let idx: usize = strides.iter().map(|&(v, s)| assignment[v] * s).sum();
            total += table[idx];
        }
        total
    }
}

fn check_cap(size: f64, cap: f64) -> Result<()> {
    if size > cap {
        Err(Error::CapExceeded { size, cap })
    } else {
        Ok(())
    }
}

fn odometer(cards: &[usize], mut visit: impl FnMut(&[usize])) {
    let mut x = vec![0usize; cards.len()];
    loop {
        visit(&x);
        let mut k = cards.len();
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            x[k] += 1;
            if x[k] < cards[k] {
                break;
            }
            x[k] = 0;
        }
    }
}

pub fn brute_force_ln_z(g: &FactorGraph) -> Result<ExactResult> {
    brute_force_ln_z_with_cap(g, DEFAULT_STATE_CAP)
}

/// Enumerates every joint assignment.
pub fn brute_force_ln_z_with_cap(g: &FactorGraph, cap: f64) -> Result<ExactResult> {
    check_cap(g.state_space_size(), cap)?;
    let flat = FlatFactors::new(g);
    let cards: Vec<usize> = g.variables().iter().map(|v| v.cardinality).collect();
    let mut acc = LseAccumulator::EMPTY;
    odometer(&cards, |x| acc.push(flat.log_weight(x)));
    Ok(ExactResult::from_ln(acc.value()))
}

/// Exact log marginals `ln p(x_i)` for every variable, by enumeration.
/// Returns `None` for a zero partition function.
pub fn brute_force_log_marginals(g: &FactorGraph) -> Result<Option<Vec<Vec<f64>>>> {
    check_cap(g.state_space_size(), DEFAULT_STATE_CAP)?;
    let flat = FlatFactors::new(g);
    let cards: Vec<usize> = g.variables().iter().map(|v| v.cardinality).collect();
    let mut total = LseAccumulator::EMPTY;
    let mut per_value: Vec<Vec<LseAccumulator>> =
        cards.iter().map(|&c| vec![LseAccumulator::EMPTY; c]).collect();
    odometer(&cards, |x| {
        let w = flat.log_weight(x);
        total.push(w);
        for (acc, &xi) in per_value.iter_mut().zip(x) {
            acc[xi].push(w);
        }
    });
    let ln_z = total.value();
    if ln_z == f64::NEG_INFINITY {
        return Ok(None);
    }
    Ok(Some(
        per_value
            .iter()
            .map(|accs| accs.iter().map(|a| a.value() - ln_z).collect())
            .collect(),
    ))
}

/// Log-domain table over an ordered variable list, row-major.
#[derive(Clone, Debug)]
struct LogTable {
    vars: Vec<usize>,
    cards: Vec<usize>,
    data: Vec<f64>,
}

impl LogTable {
    fn strides_in(&self, union: &[usize]) -> Vec<usize> {
        // stride of each union variable inside this table (0 if absent)
        let mut own = vec![0; self.vars.len()];
        let mut acc = 1;
        for k in (0..self.vars.len()).rev() {
            own[k] = acc;
            acc *= self.cards[k];
        }
        union
            .iter()
            .map(|v| self.vars.iter().position(|w| w == v).map_or(0, |k| own[k]))
            .collect()
    }
}

fn product_and_sum_out(tables: &[LogTable], var: usize, var_card: usize, cap: f64) -> Result<LogTable> {
    let union: Vec<usize> = tables
        .iter()
        .flat_map(|t| t.vars.iter().copied())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let card_of = |v: usize| -> usize {
        if v == var {
            return var_card;
        }
        tables
            .iter()
            .find_map(|t| t.vars.iter().position(|&w| w == v).map(|k| t.cards[k]))
            .expect("union variable comes from some table")
    };
    let cards: Vec<usize> = union.iter().map(|&v| card_of(v)).collect();
    check_cap(cards.iter().map(|&c| c as f64).product(), cap)?;

    let keep: Vec<usize> = (0..union.len()).filter(|&k| union[k] != var).collect();
    let out_vars: Vec<usize> = keep.iter().map(|&k| union[k]).collect();
    let out_cards: Vec<usize> = keep.iter().map(|&k| cards[k]).collect();
    let mut out_strides = vec![0; union.len()];
    let mut acc = 1;
    for &k in keep.iter().rev() {
        out_strides[k] = acc;
        acc *= cards[k];
    }
    let mut accs = vec![LseAccumulator::EMPTY; acc];
    let table_strides: Vec<Vec<usize>> = tables.iter().map(|t| t.strides_in(&union)).collect();
    odometer(&cards, |x| {
        let mut w = 0.0;
        for (t, s) in tables.iter().zip(&table_strides) {
            let idx: usize = x.iter().zip(s).map(|(a, b)| a * b).sum();
            w += t.data[idx];
        }
        let o: usize = x.iter().zip(&out_strides).map(|(a, b)| a * b).sum();
        accs[o].push(w);
    });
    Ok(LogTable {
        vars: out_vars,
        cards: out_cards,
        data: accs.iter().map(LseAccumulator::value).collect(),
    })
}

pub fn variable_elimination_ln_z(g: &FactorGraph, order: &[usize]) -> Result<ExactResult> {
    variable_elimination_ln_z_with_cap(g, order, DEFAULT_STATE_CAP)
}

/// Sum-product variable elimination in the caller's order.
pub fn variable_elimination_ln_z_with_cap(g: &FactorGraph, order: &[usize], cap: f64) -> Result<ExactResult> {
    let mut seen = vec![false; g.num_variables()];
    if order.len() != g.num_variables()
        || order.iter().any(|&v| v >= seen.len() || std::mem::replace(&mut seen[v], true))
    {
        return Err(Error::InvalidArgument(
            "elimination order must be a permutation of all variables".into(),
        ));
    }
    let mut pool: Vec<LogTable> = g
        .factors()
        .iter()
        .map(|f| LogTable {
            vars: f.scope.clone(),
            cards: f.scope.iter().map(|&v| g.cardinality(v)).collect(),
            data: f.exact_log_potential().iter().copied().collect(),
        })
        .collect();
    let mut constant = 0.0;
    for &var in order {
        let (touching, rest): (Vec<_>, Vec<_>) = pool.into_iter().partition(|t| t.vars.contains(&var));
        pool = rest;
        if touching.is_empty() {
            constant += (g.cardinality(var) as f64).ln();
            continue;
        }
        pool.push(product_and_sum_out(&touching, var, g.cardinality(var), cap)?);
    }
    let total = pool.iter().fold(constant, |acc, t| {
        debug_assert!(t.vars.is_empty());
        acc + t.data[0]
    });
    Ok(ExactResult::from_ln(total))
}

/// Greedy min-degree elimination order over the variable interaction graph.
/// Ties go to the lowest id.
pub fn min_degree_order(g: &FactorGraph) -> Vec<usize> {
    let n = g.num_variables();
    let mut neighbors: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for f in g.factors() {
        for &a in &f.scope {
            for &b in &f.scope {
                if a != b {
                    neighbors[a].insert(b);
                }
            }
        }
    }
    let mut eliminated = vec![false; n];
    let mut order = Vec::with_capacity(n);
    for _ in 0..n {
        let v = (0..n)
            .filter(|&v| !eliminated[v])
            .min_by_key(|&v| (neighbors[v].len(), v))
            .expect("at least one variable remains");
        eliminated[v] = true;
        order.push(v);
        let nb: Vec<usize> = neighbors[v].iter().copied().collect();
        for &a in &nb {
            neighbors[a].remove(&v);
            for &b in &nb {
                if a != b {
                    neighbors[a].insert(b);
                }
            }
        }
    }
    order
}

/// Exact `ln Z` using variable elimination in min-degree order.
pub fn exact_ln_z(g: &FactorGraph) -> Result<ExactResult> {
    variable_elimination_ln_z(g, &min_degree_order(g))
}

/// `ln(#satisfying assignments)` by enumerating all `2^n` assignments.
pub fn brute_force_model_count(cnf: &CnfFormula) -> Result<ExactResult> {
    let n = cnf.num_vars();
    if n > MAX_COUNT_VARIABLES {
        return Err(Error::CapExceeded {
            size: 2f64.powi(n as i32),
            cap: 2f64.powi(MAX_COUNT_VARIABLES as i32),
        });
    }
    // (positive mask, negative mask) per clause
    let masks: Vec<(u32, u32)> = cnf
        .clauses()
        .iter()
        .map(|c| {
            c.iter().fold((0u32, 0u32), |(p, q), &lit| {
                let bit = 1u32 << (lit.unsigned_abs() - 1);
                if lit > 0 {
                    (p | bit, q)
                } else {
                    (p, q | bit)
                }
            })
        })
        .collect();
    let count = (0u32..(1u32 << n))
        .filter(|&x| masks.iter().all(|&(p, q)| (x & p) != 0 || (!x & q) != 0))
        .count();
    Ok(if count == 0 {
        ExactResult::zero()
    } else {
        ExactResult::from_ln((count as f64).ln())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor_graph::{ising_pair_log_potential, FactorDecl, VariableDecl};
    use crate::generators::{cnf_to_factor_graph, parse_dimacs};
    use ndarray::{ArrayD, IxDyn};

    fn binary(n: usize) -> Vec<VariableDecl> {
        (0..n).map(|i| VariableDecl::new(i, 2)).collect()
    }

    #[test]
    fn single_unit_factor() {
        let f = FactorDecl::from_flat(0, vec![0], &[2], vec![1.0, 1.0]).unwrap();
        let g = FactorGraph::new(binary(1), vec![f]).unwrap();
        let r = brute_force_ln_z(&g).unwrap();
        assert!((r.ln_z - 2f64.ln()).abs() < 1e-12);
        assert!(!r.is_zero);
    }

    #[test]
    fn two_spin_coupling() {
        let f = FactorDecl::from_log_potentials(0, vec![0, 1], ising_pair_log_potential(1.0));
        let g = FactorGraph::new(binary(2), vec![f]).unwrap();
        let want = (2.0 * 1f64.exp() + 2.0 * (-1f64).exp()).ln();
        assert!((want - 1.820075).abs() < 1e-6);
        assert!((brute_force_ln_z(&g).unwrap().ln_z - want).abs() < 1e-12);
        assert!((variable_elimination_ln_z(&g, &[1, 0]).unwrap().ln_z - want).abs() < 1e-12);
    }

    #[test]
    fn contradiction_is_zero() {
        let cnf = parse_dimacs("p cnf 1 2\n1 0\n-1 0\n").unwrap();
        let g = cnf_to_factor_graph(&cnf, 5).unwrap();
        assert!(brute_force_ln_z(&g).unwrap().is_zero);
        assert!(exact_ln_z(&g).unwrap().is_zero);
        assert!(brute_force_model_count(&cnf).unwrap().is_zero);
    }

    #[test]
    fn factorless_graph_is_uniform() {
        let g = FactorGraph::new(binary(5), vec![]).unwrap();
        let r = variable_elimination_ln_z(&g, &[0, 1, 2, 3, 4]).unwrap();
        assert!((r.ln_z - 5.0 * 2f64.ln()).abs() < 1e-12);
        assert!((brute_force_ln_z(&g).unwrap().ln_z - r.ln_z).abs() < 1e-12);
    }

    #[test]
    fn model_counts() {
        let or2 = parse_dimacs("p cnf 2 1\n1 2 0\n").unwrap();
        assert!((brute_force_model_count(&or2).unwrap().ln_z - 3f64.ln()).abs() < 1e-12);
        let empty = parse_dimacs("p cnf 3 0\n").unwrap();
        assert!((brute_force_model_count(&empty).unwrap().ln_z - 8f64.ln()).abs() < 1e-12);
        let g = cnf_to_factor_graph(&or2, 5).unwrap();
        assert!((brute_force_ln_z(&g).unwrap().ln_z - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn caps_are_enforced() {
        let g = FactorGraph::new(binary(30), vec![]).unwrap();
        assert!(matches!(brute_force_ln_z(&g), Err(Error::CapExceeded { .. })));
        let big = parse_dimacs("p cnf 30 0\n").unwrap();
        assert!(brute_force_model_count(&big).is_err());
    }

    #[test]
    fn bad_order_rejected() {
        let g = FactorGraph::new(binary(3), vec![]).unwrap();
        assert!(variable_elimination_ln_z(&g, &[0, 1]).is_err());
        assert!(variable_elimination_ln_z(&g, &[0, 1, 1]).is_err());
    }

    #[test]
    fn elimination_matches_enumeration_on_mixed_cardinalities() {
        let vars = vec![VariableDecl::new(0, 3), VariableDecl::new(1, 2), VariableDecl::new(2, 4)];
        let t = ArrayD::from_shape_vec(IxDyn(&[3, 2, 4]), (0..24).map(|x| 0.1 + x as f64 * 0.37 % 2.0).collect()).unwrap();
        let factors = vec![
            FactorDecl::from_potentials(0, vec![0, 1, 2], t),
            FactorDecl::from_flat(1, vec![2, 0], &[4, 3], (0..12).map(|x| 1.0 + (x % 5) as f64).collect()).unwrap(),
        ];
        let g = FactorGraph::new(vars, factors).unwrap();
        let bf = brute_force_ln_z(&g).unwrap().ln_z;
        for order in [[0, 1, 2], [2, 1, 0], [1, 0, 2]] {
            assert!((variable_elimination_ln_z(&g, &order).unwrap().ln_z - bf).abs() < 1e-9);
        }
    }

    #[test]
    fn marginals_sum_to_one() {
        let f = FactorDecl::from_log_potentials(0, vec![0, 1], ising_pair_log_potential(0.3));
        let u = FactorDecl::from_flat(1, vec![0], &[2], vec![1.0, 3.0]).unwrap();
        let g = FactorGraph::new(binary(2), vec![f, u]).unwrap();
        let m = brute_force_log_marginals(&g).unwrap().unwrap();
        for lm in &m {
            assert!(crate::logspace::lse(lm).abs() < 1e-12);
        }
        assert!((m[0][1].exp() - 0.75).abs() < 1e-12);
    }
}
