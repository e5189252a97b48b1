use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{FactorDecl, FactorGraph, VariableDecl};
use crate::error::{Error, Result};

/// Relabeling witness between two factor graphs.
///
/// Variable `i` of the source becomes `var_perm[i]`, factor `a` becomes
/// `factor_perm[a]`, and scope position `k` of factor `a` becomes position
/// `local_perms[a][k]` of factor `factor_perm[a]`. Factor tensors are
/// transposed to match.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Isomorphism {
    pub var_perm: Vec<usize>,
    pub factor_perm: Vec<usize>,
    pub local_perms: Vec<Vec<usize>>,
}

fn invert(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

fn is_permutation(perm: &[usize]) -> bool {
    let mut seen = vec![false; perm.len()];
    perm.iter().all(|&p| p < perm.len() && !std::mem::replace(&mut seen[p], true))
}

impl Isomorphism {
    pub fn identity(g: &FactorGraph) -> Self {
        Self {
            var_perm: (0..g.num_variables()).collect(),
            factor_perm: (0..g.num_factors()).collect(),
            local_perms: g.factors().iter().map(|f| (0..f.arity()).collect()).collect(),
        }
    }

    /// Checks that every component is a bijection of the right size for `g`.
    pub fn validate(&self, g: &FactorGraph) -> Result<()> {
        if self.var_perm.len() != g.num_variables() || !is_permutation(&self.var_perm) {
            return Err(Error::IsomorphismMismatch("variable permutation".into()));
        }
        if self.factor_perm.len() != g.num_factors() || !is_permutation(&self.factor_perm) {
            return Err(Error::IsomorphismMismatch("factor permutation".into()));
        }
        if self.local_perms.len() != g.num_factors() {
            return Err(Error::IsomorphismMismatch("local permutation count".into()));
        }
        for (f, local) in g.factors().iter().zip(&self.local_perms) {
            if local.len() != f.arity() || !is_permutation(local) {
                return Err(Error::IsomorphismMismatch(format!("local permutation of factor {}", f.id)));
            }
        }
        Ok(())
    }

    /// The isomorphism mapping the image graph back onto the source.
    pub fn inverse(&self) -> Self {
        let factor_inv = invert(&self.factor_perm);
        let local_perms = factor_inv.iter().map(|&a| invert(&self.local_perms[a])).collect();
        Self {
            var_perm: invert(&self.var_perm),
            factor_perm: factor_inv,
            local_perms,
        }
    }

    /// Maps each edge id of `source` to the corresponding edge id of
    /// `target = apply_isomorphism(source, self)`.
    pub fn edge_map(&self, source: &FactorGraph, target: &FactorGraph) -> Vec<usize> {
        source
            .edges()
            .iter()
            .map(|e| target.edge_id(self.factor_perm[e.factor], self.local_perms[e.factor][e.position]))
            .collect()
    }
}

/// Relabels `g` under `iso`, permuting tensor dimensions to keep every factor
/// describing the same function of the same (renamed) variables.
pub fn apply_isomorphism(g: &FactorGraph, iso: &Isomorphism) -> Result<FactorGraph> {
    iso.validate(g)?;
    let mut variables = vec![VariableDecl::new(0, 0); g.num_variables()];
    for v in g.variables() {
        let j = iso.var_perm[v.id];
        variables[j] = VariableDecl::new(j, v.cardinality);
    }
    let mut slots: Vec<Option<FactorDecl>> = vec![None; g.num_factors()];
    for f in g.factors() {
        let b = iso.factor_perm[f.id];
        let local = &iso.local_perms[f.id];
        let mut scope = vec![0; f.arity()];
        for (k, &var) in f.scope.iter().enumerate() {
            scope[local[k]] = iso.var_perm[var];
        }
        // new axis l reads old axis k with local[k] = l
        let axes = invert(local);
        slots[b] = Some(f.map_tensors(b, scope, |t| {
            t.clone().permuted_axes(axes.clone()).as_standard_layout().into_owned()
        }));
    }
    let factors = slots.into_iter().map(|f| f.expect("factor permutation is a bijection")).collect();
    FactorGraph::with_max_arity(variables, factors, g.max_arity())
}

/// Uniformly random isomorphism, deterministic per seed.
pub fn random_isomorphism(g: &FactorGraph, seed: u64) -> Isomorphism {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut iso = Isomorphism::identity(g);
    iso.var_perm.shuffle(&mut rng);
    iso.factor_perm.shuffle(&mut rng);
    for local in &mut iso.local_perms {
        local.shuffle(&mut rng);
    }
    iso
}
