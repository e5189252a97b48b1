use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};
use crate::factor_graph::{FactorDecl, FactorGraph};
use crate::logspace::lse;

/// Conditions `var = value` by zeroing every entry of every factor touching
/// `var` that disagrees with `value`.
///
/// A variable outside every factor scope gets a new indicator factor
/// appended, since there is nothing else to zero.
pub fn fix_variable(g: &FactorGraph, var: usize, value: usize) -> Result<FactorGraph> {
    if var >= g.num_variables() {
        return Err(Error::InvalidArgument(format!("no variable {var}")));
    }
    let cardinality = g.cardinality(var);
    if value >= cardinality {
        return Err(Error::ValueOutOfRange { var, value, cardinality });
    }
    let (variables, mut factors, max_arity) = g.clone().into_parts();
    let mut touched = false;
    for f in factors.iter_mut() {
        if let Some(pos) = f.scope.iter().position(|&v| v == var) {
            touched = true;
            f.zero_entries(|idx| idx[pos] != value);
        }
    }
    if !touched {
        let mut indicator = vec![0.0; cardinality];
        indicator[value] = 1.0;
        let id = factors.len();
        let t = ArrayD::from_shape_vec(IxDyn(&[cardinality]), indicator).expect("1-d indicator");
        factors.push(FactorDecl::from_potentials(id, vec![var], t));
    }
    FactorGraph::with_max_arity(variables, factors, max_arity)
}

/// Log marginals `ln Z_v - ln Σ_u Z_u` from the log partition functions of
/// a graph with one variable fixed to each of its values in turn.
pub fn marginals_from_partitions(ln_z_per_value: &[f64]) -> Result<Vec<f64>> {
    if ln_z_per_value.is_empty() {
        return Err(Error::Empty("partition list"));
    }
    let total = lse(ln_z_per_value);
    if total == f64::NEG_INFINITY {
        return Err(Error::AllZeroPartitions);
    }
    Ok(ln_z_per_value.iter().map(|&z| z - total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::brute_force_ln_z;
    use crate::factor_graph::{ising_pair_log_potential, VariableDecl};

    fn chain() -> FactorGraph {
        let vars = (0..3).map(|i| VariableDecl::new(i, 2)).collect();
        let factors = vec![
            FactorDecl::from_log_potentials(0, vec![0, 1], ising_pair_log_potential(0.8)),
            FactorDecl::from_log_potentials(1, vec![1, 2], ising_pair_log_potential(-0.4)),
            FactorDecl::from_flat(2, vec![1], &[2], vec![1.0, 2.0]).unwrap(),
        ];
        FactorGraph::new(vars, factors).unwrap()
    }

    #[test]
    fn total_probability_identity() {
        let g = chain();
        let full = brute_force_ln_z(&g).unwrap().ln_z;
        for var in 0..3 {
            let parts: Vec<f64> = (0..2)
                .map(|v| brute_force_ln_z(&fix_variable(&g, var, v).unwrap()).unwrap().ln_z)
                .collect();
            assert!((lse(&parts) - full).abs() < 1e-9);
        }
    }

    #[test]
    fn conflicting_fixes_zero_the_partition() {
        let g = chain();
        let g = fix_variable(&fix_variable(&g, 1, 0).unwrap(), 1, 1).unwrap();
        assert!(brute_force_ln_z(&g).unwrap().is_zero);
    }

    #[test]
    fn single_variable_fix_selects_its_potential() {
        let f = FactorDecl::from_flat(0, vec![0], &[3], vec![1.0, 5.0, 2.0]).unwrap();
        let g = FactorGraph::new(vec![VariableDecl::new(0, 3)], vec![f]).unwrap();
        let fixed = fix_variable(&g, 0, 1).unwrap();
        assert!((brute_force_ln_z(&fixed).unwrap().ln_z - 5f64.ln()).abs() < 1e-12);
        assert!(matches!(fix_variable(&g, 0, 3), Err(Error::ValueOutOfRange { .. })));
    }

    #[test]
    fn isolated_variable_gets_indicator() {
        let g = FactorGraph::new(vec![VariableDecl::new(0, 2), VariableDecl::new(1, 2)], vec![]).unwrap();
        let fixed = fix_variable(&g, 1, 0).unwrap();
        assert!((brute_force_ln_z(&fixed).unwrap().ln_z - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn marginal_recovery() {
        let m = marginals_from_partitions(&[0.3, 0.3]).unwrap();
        assert!(m.iter().all(|x| (x - 0.5f64.ln()).abs() < 1e-15));
        let m = marginals_from_partitions(&[0.0, f64::NEG_INFINITY]).unwrap();
        assert_eq!(m, vec![0.0, f64::NEG_INFINITY]);
        let m = marginals_from_partitions(&[3f64.ln(), 0.0]).unwrap();
        assert!((m[0] - 0.75f64.ln()).abs() < 1e-15);
        assert!((m[1] - 0.25f64.ln()).abs() < 1e-15);
        assert!(matches!(marginals_from_partitions(&[f64::NEG_INFINITY; 2]), Err(Error::AllZeroPartitions)));
        assert!(marginals_from_partitions(&[]).is_err());
    }
}
