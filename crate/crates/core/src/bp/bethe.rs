use ndarray::ArrayD;

use super::MessageState;
use crate::factor_graph::FactorGraph;
use crate::logspace::{add_along_axis, log_normalize_in_place, log_normalized, plogp};

/// Normalized log beliefs for every variable and factor.
#[derive(Clone, Debug, PartialEq)]
pub struct BeliefSet {
    pub variable_beliefs: Vec<Vec<f64>>,
    pub factor_beliefs: Vec<ArrayD<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BetheTerms {
    pub u_bethe: f64,
    pub h_bethe: f64,
    pub f_bethe: f64,
    pub ln_z_estimate: f64,
}

impl BetheTerms {
    pub fn new(u_bethe: f64, h_bethe: f64) -> Self {
        let f_bethe = u_bethe - h_bethe;
        Self { u_bethe, h_bethe, f_bethe, ln_z_estimate: -f_bethe }
    }
}

pub fn compute_beliefs(g: &FactorGraph, msgs: &MessageState) -> BeliefSet {
    let variable_beliefs = (0..g.num_variables())
        .map(|i| {
            let mut b = vec![0.0; g.cardinality(i)];
            for &e in g.variable_edges(i) {
                for (x, m) in b.iter_mut().zip(&msgs.fac_to_var[e]) {
                    *x += m;
                }
            }
            log_normalized(&b)
        })
        .collect();
    let factor_beliefs = (0..g.num_factors())
        .map(|a| {
            let mut t = g.factor(a).log_potential().clone();
            for (k, e) in g.factor_edges(a).enumerate() {
                add_along_axis(&mut t, &msgs.var_to_fac[e], k);
            }
            let flat = t.as_slice_mut().expect("standard layout");
            log_normalize_in_place(flat);
            t
        })
        .collect();
    BeliefSet { variable_beliefs, factor_beliefs }
}

/// Bethe average energy, entropy and free energy of `beliefs`.
pub fn bethe_free_energy(g: &FactorGraph, beliefs: &BeliefSet) -> BetheTerms {
    let mut u = 0.0;
    let mut h = 0.0;
    for (a, b) in beliefs.factor_beliefs.iter().enumerate() {
        for (&lb, &lf) in b.iter().zip(g.factor(a).log_potential().iter()) {
            let p = lb.exp();
            if p != 0.0 {
                u -= p * lf;
            }
            h -= plogp(lb);
        }
    }
    for (i, b) in beliefs.variable_beliefs.iter().enumerate() {
        let w = g.degree(i) as f64 - 1.0;
        h += w * b.iter().map(|&lb| plogp(lb)).sum::<f64>();
    }
    BetheTerms::new(u, h)
}
