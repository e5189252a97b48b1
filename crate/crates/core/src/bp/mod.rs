//! Damped loopy belief propagation in log space.

mod bethe;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor_graph::FactorGraph;
use crate::logspace::{lse, lse_iter};

pub use bethe::{bethe_free_energy, compute_beliefs, BeliefSet, BetheTerms};

pub const DEFAULT_DAMPING: f64 = 0.5;
pub const DEFAULT_MAX_ITERS: usize = 200;
pub const DEFAULT_TOL: f64 = 1e-5;

/// Stable `ln Σ exp(v_j)`.
pub fn logsumexp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::Empty("logsumexp input"));
    }
    Ok(lse(v))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Parallel,
    Sequential,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BpConfig {
    pub damping: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub schedule: Schedule,
}

impl Default for BpConfig {
    fn default() -> Self {
        Self { damping: DEFAULT_DAMPING, max_iters: DEFAULT_MAX_ITERS, tol: DEFAULT_TOL, schedule: Schedule::Parallel }
    }
}

impl BpConfig {
    pub fn with_damping(damping: f64) -> Self {
        Self { damping, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::InvalidArgument(format!("damping {} not in [0, 1)", self.damping)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!("tolerance {} must be positive", self.tol)));
        }
        Ok(())
    }
}

/// Log-domain messages indexed by edge id. Every vector has logsumexp 0.
#[derive(Clone, Debug, PartialEq)]
pub struct MessageState {
    pub var_to_fac: Vec<Vec<f64>>,
    pub fac_to_var: Vec<Vec<f64>>,
    pub iteration: usize,
}

impl MessageState {
    /// Largest absolute entry change in the factor-to-variable messages.
    pub fn fac_to_var_delta(&self, other: &MessageState) -> f64 {
        max_abs_diff(&self.fac_to_var, &other.fac_to_var)
    }
}

pub(crate) fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

/// Uniform messages on every edge.
pub fn init_messages(g: &FactorGraph) -> MessageState {
    let uniform: Vec<Vec<f64>> = g
        .edges()
        .iter()
        .map(|e| {
            let c = g.cardinality(e.variable);
            vec![-(c as f64).ln(); c]
        })
        .collect();
    MessageState { var_to_fac: uniform.clone(), fac_to_var: uniform, iteration: 0 }
}

pub(crate) fn damp_and_normalize(fresh: &mut [f64], prev: &[f64], alpha: f64) {
    if alpha != 0.0 {
        for (m, &p) in fresh.iter_mut().zip(prev) {
            *m += alpha * (p - *m);
        }
    }
    let z = lse(fresh);
    for m in fresh.iter_mut() {
        *m -= z;
    }
}

/// Undamped, unnormalized `Σ_{c ∈ N(i) \ a} m_{c→i}` for edge `e = (a, i)`.
pub(crate) fn var_to_fac_raw(g: &FactorGraph, fac_to_var: &[Vec<f64>], e: usize) -> Vec<f64> {
    let var = g.edge(e).variable;
    let mut out = vec![0.0; g.cardinality(var)];
    for &c in g.variable_edges(var) {
        if c != e {
            for (o, m) in out.iter_mut().zip(&fac_to_var[c]) {
                *o += m;
            }
        }
    }
    out
}

/// Undamped, unnormalized `LSE_{x_a \ x_i}(φ_a + Σ_{j ∈ N(a) \ i} m_{j→a})`
/// for edge `e = (a, i)`.
pub(crate) fn fac_to_var_raw(g: &FactorGraph, var_to_fac: &[Vec<f64>], e: usize) -> Vec<f64> {
    let edge = g.edge(e);
    let f = g.factor(edge.factor);
    let phi = f.log_potential();
    let shape = phi.shape();
    let first = g.factor_edges(edge.factor).start;
    let keep = edge.position;
    let mut values = Vec::with_capacity(phi.len());
    let mut states = Vec::with_capacity(phi.len());
    let mut idx = vec![0usize; shape.len()];
    for &p in phi.iter() {
        let mut v = p;
        for (k, &x) in idx.iter().enumerate() {
            if k != keep {
                v += var_to_fac[first + k][x];
            }
        }
        values.push(v);
        states.push(idx[keep]);
        for k in (0..shape.len()).rev() {
            idx[k] += 1;
            if idx[k] < shape[k] {
                break;
            }
            idx[k] = 0;
        }
    }
    (0..shape[keep])
        .map(|s| {
            let it = values.iter().zip(&states).filter(move |(_, &st)| st == s).map(|(v, _)| *v);
            lse_iter(it)
        })
        .collect()
}

/// Damped variable-to-factor update of every edge from the previous messages.
pub fn var_to_fac_update(g: &FactorGraph, msgs: &MessageState, alpha: f64) -> Vec<Vec<f64>> {
    (0..g.num_edges())
        .map(|e| {
            let mut m = var_to_fac_raw(g, &msgs.fac_to_var, e);
            damp_and_normalize(&mut m, &msgs.var_to_fac[e], alpha);
            m
        })
        .collect()
}

/// Damped factor-to-variable update of every edge, reading `msgs.var_to_fac`
/// as the current variable-to-factor messages.
pub fn fac_to_var_update(g: &FactorGraph, msgs: &MessageState, alpha: f64) -> Vec<Vec<f64>> {
    (0..g.num_edges())
        .map(|e| {
            let mut m = fac_to_var_raw(g, &msgs.var_to_fac, e);
            damp_and_normalize(&mut m, &msgs.fac_to_var[e], alpha);
            m
        })
        .collect()
}

/// One full iteration under `cfg.schedule`.
pub fn bp_iteration(g: &FactorGraph, msgs: &MessageState, cfg: &BpConfig) -> MessageState {
    let alpha = cfg.damping;
    match cfg.schedule {
        Schedule::Parallel => {
            let var_to_fac = var_to_fac_update(g, msgs, alpha);
            let half = MessageState { var_to_fac, fac_to_var: msgs.fac_to_var.clone(), iteration: msgs.iteration };
            let fac_to_var = fac_to_var_update(g, &half, alpha);
            MessageState { var_to_fac: half.var_to_fac, fac_to_var, iteration: msgs.iteration + 1 }
        }
        Schedule::Sequential => {
            let mut next = msgs.clone();
            for e in 0..g.num_edges() {
                let mut m = var_to_fac_raw(g, &next.fac_to_var, e);
                damp_and_normalize(&mut m, &next.var_to_fac[e], alpha);
                next.var_to_fac[e] = m;
                let mut m = fac_to_var_raw(g, &next.var_to_fac, e);
                damp_and_normalize(&mut m, &next.fac_to_var[e], alpha);
                next.fac_to_var[e] = m;
            }
            next.iteration += 1;
            next
        }
    }
}

#[derive(Clone, Debug)]
pub struct BpResult {
    pub messages: MessageState,
    pub converged: bool,
    pub iterations_run: usize,
    pub delta_trace: Vec<f64>,
}

pub fn run_bp(g: &FactorGraph, cfg: &BpConfig) -> BpResult {
    run_bp_from(g, cfg, init_messages(g))
}

/// Iterates from `start` until the factor-to-variable change drops to
/// `cfg.tol` or `cfg.max_iters` iterations have run.
///
/// Under the sequential schedule a sweep can leave every factor-to-variable
/// message in place while variable-to-factor messages still move, so there
/// the change in both directions is tracked.
pub fn run_bp_from(g: &FactorGraph, cfg: &BpConfig, start: MessageState) -> BpResult {
    let both = cfg.schedule == Schedule::Sequential;
    iterate_to_convergence(cfg, start, both, |m| bp_iteration(g, m, cfg))
}

pub(crate) fn iterate_to_convergence<F>(cfg: &BpConfig, start: MessageState, both: bool, mut step: F) -> BpResult
where
    F: FnMut(&MessageState) -> MessageState,
{
    let mut msgs = start;
    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..cfg.max_iters {
        let next = step(&msgs);
        let mut delta = next.fac_to_var_delta(&msgs);
        if both {
            delta = delta.max(max_abs_diff(&next.var_to_fac, &msgs.var_to_fac));
        }
        trace.push(delta);
        msgs = next;
        if delta <= cfg.tol {
            converged = true;
            break;
        }
    }
    BpResult { messages: msgs, converged, iterations_run: trace.len(), delta_trace: trace }
}

/// Runs BP and returns the Bethe estimate with the raw result.
pub fn bp_ln_z(g: &FactorGraph, cfg: &BpConfig) -> (BetheTerms, BpResult) {
    let res = run_bp(g, cfg);
    let beliefs = compute_beliefs(g, &res.messages);
    (bethe_free_energy(g, &beliefs), res)
}

/// Writes `iteration,max_delta` rows, iterations counted from 1.
pub fn write_delta_trace_csv<W: Write>(mut w: W, trace: &[f64]) -> Result<()> {
    writeln!(w, "iteration,max_delta")?;
    for (i, d) in trace.iter().enumerate() {
        writeln!(w, "{},{:e}", i + 1, d)?;
    }
    Ok(())
}
