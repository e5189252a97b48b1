use ndarray::{ArrayD, IxDyn};
use rand::seq::index::sample;
use rand::Rng;

use super::seeded_rng;
use crate::error::{Error, Result};
use crate::factor_graph::{FactorDecl, FactorGraph, VariableDecl};

/// A CNF formula over variables `1..=num_vars` with DIMACS-style signed
/// literals.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CnfFormula {
    num_vars: usize,
    clauses: Vec<Vec<i32>>,
    dropped_tautologies: usize,
}

impl CnfFormula {
    /// Validates literal ranges, removes repeated literals inside a clause
    /// and drops tautological clauses.
    pub fn new(num_vars: usize, clauses: Vec<Vec<i32>>) -> Result<Self> {
        let mut kept = Vec::with_capacity(clauses.len());
        let mut dropped = 0;
        for clause in clauses {
            let mut lits: Vec<i32> = Vec::with_capacity(clause.len());
            for lit in clause {
                if lit == 0 || lit.unsigned_abs() as usize > num_vars {
                    return Err(Error::InvalidArgument(format!(
                        "literal {lit} out of range for {num_vars} variables"
                    )));
                }
                if !lits.contains(&lit) {
                    lits.push(lit);
                }
            }
            if lits.iter().any(|&l| lits.contains(&-l)) {
                dropped += 1;
            } else {
                kept.push(lits);
            }
        }
        Ok(Self { num_vars, clauses: kept, dropped_tautologies: dropped })
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn clauses(&self) -> &[Vec<i32>] {
        &self.clauses
    }

    pub fn dropped_tautologies(&self) -> usize {
        self.dropped_tautologies
    }
}

/// Parses DIMACS CNF.
///
/// Comment lines (`c ...`, including sampling-set and independent-support
/// annotations) are skipped, clauses may span lines, and a `%` line ends the
/// input. The clause count must match the header.
pub fn parse_dimacs(text: &str) -> Result<CnfFormula> {
    let err = |line: usize, message: String| Error::Dimacs { line, message };
    let mut header: Option<(usize, usize)> = None;
    let mut clauses = Vec::new();
    let mut current: Vec<i32> = Vec::new();
    let mut last_line = 0;
    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        last_line = lineno;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('c') {
            continue;
        }
        if line.starts_with('%') {
            break;
        }
        if line.starts_with('p') {
            if header.is_some() {
                return Err(err(lineno, "duplicate header".into()));
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 4 || parts[0] != "p" || parts[1] != "cnf" {
                return Err(err(lineno, format!("malformed header `{line}`")));
            }
            let nv = parts[2].parse().map_err(|_| err(lineno, "bad variable count".into()))?;
            let nc = parts[3].parse().map_err(|_| err(lineno, "bad clause count".into()))?;
            header = Some((nv, nc));
            continue;
        }
        let (nv, _) = header.ok_or_else(|| err(lineno, "clause before `p cnf` header".into()))?;
        for tok in line.split_whitespace() {
            let lit: i64 = tok.parse().map_err(|_| err(lineno, format!("bad literal `{tok}`")))?;
            if lit == 0 {
                clauses.push(std::mem::take(&mut current));
            } else if lit.unsigned_abs() as usize > nv {
                return Err(err(lineno, format!("literal {lit} exceeds {nv} variables")));
            } else {
                current.push(lit as i32);
            }
        }
    }
    let (nv, nc) = header.ok_or_else(|| err(last_line, "missing `p cnf` header".into()))?;
    if !current.is_empty() {
        return Err(err(last_line, "unterminated clause".into()));
    }
    if clauses.len() != nc {
        return Err(err(last_line, format!("header declares {nc} clauses, found {}", clauses.len())));
    }
    let formula = CnfFormula::new(nv, clauses)?;
    if formula.dropped_tautologies() > 0 {
        log::warn!("dropped {} tautological clauses", formula.dropped_tautologies());
    }
    Ok(formula)
}

/// One binary variable per CNF variable (state 1 = true) and one 0/1 factor
/// per clause over its variables in order of appearance. The partition
/// function is the model count.
pub fn cnf_to_factor_graph(cnf: &CnfFormula, max_arity: usize) -> Result<FactorGraph> {
    let variables = (0..cnf.num_vars()).map(|i| VariableDecl::new(i, 2)).collect();
    let mut factors = Vec::with_capacity(cnf.clauses().len());
    for (id, clause) in cnf.clauses().iter().enumerate() {
        if clause.len() > max_arity {
            return Err(Error::ArityExceeded { factor: id, arity: clause.len(), max: max_arity });
        }
        let scope: Vec<usize> = clause.iter().map(|l| l.unsigned_abs() as usize - 1).collect();
        let size = 1usize << clause.len();
        let table: Vec<f64> = (0..size)
            .map(|flat| {
                // row-major: position k is bit (len - 1 - k)
                let satisfied = clause.iter().enumerate().any(|(k, &lit)| {
                    let state = (flat >> (clause.len() - 1 - k)) & 1;
                    (lit > 0) == (state == 1)
                });
                if satisfied {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let t = ArrayD::from_shape_vec(IxDyn(&vec![2; clause.len()]), table).expect("2^k entries");
        factors.push(FactorDecl::from_potentials(id, scope, t));
    }
    FactorGraph::with_max_arity(variables, factors, max_arity)
}

/// Uniform random `k`-CNF: each clause draws `k` distinct variables and
/// independent signs.
pub fn random_k_cnf(num_vars: usize, num_clauses: usize, k: usize, seed: u64) -> Result<CnfFormula> {
    if k > num_vars {
        return Err(Error::InvalidArgument(format!("clause width {k} exceeds {num_vars} variables")));
    }
    let mut rng = seeded_rng(seed);
    let clauses = (0..num_clauses)
        .map(|_| {
            sample(&mut rng, num_vars, k)
                .into_iter()
                .map(|v| {
                    let lit = v as i32 + 1;
                    if rng.gen::<bool>() {
                        lit
                    } else {
                        -lit
                    }
                })
                .collect()
        })
        .collect();
    CnfFormula::new(num_vars, clauses)
}
