//! Tape implementations of the iterative layers.

use std::rc::Rc;

use ndarray::{Array2, IxDyn};

use super::index::GraphIndex;
use super::mlp::Mlp;
use super::{LayerConfig, OperatorConfig};
use crate::autodiff::{BoundParams, Segments, Tape, Var};
use crate::error::Result;

/// Exp-domain floor applied before `ln` in the log-MLP-exp blocks.
pub const LNE_FLOOR: f64 = 1e-30;

/// Learned parts of one layer.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerParams {
    BpnnD { hbar: Option<Mlp> },
    MessageMlp { lne: [Option<Mlp>; 4] },
}

/// Shifts each group so its logsumexp is zero.
pub(crate) fn log_normalize(tape: &mut Tape, x: Var, norm: &Rc<Segments>, bcast: &Rc<Segments>) -> Result<Var> {
    let z = tape.segment_lse(x, norm)?;
    let zb = tape.segment_sum(z, bcast)?;
    tape.sub(x, zb)
}

/// `fresh + α (prev - fresh)`.
pub(crate) fn damp(tape: &mut Tape, fresh: Var, prev: Var, alpha: f64) -> Result<Var> {
    if alpha == 0.0 {
        return Ok(fresh);
    }
    let d = tape.sub(prev, fresh)?;
    let s = tape.scale(d, alpha);
    tape.add(fresh, s)
}

/// `ln(MLP(exp(m)))` applied per edge to message vectors padded to `C_max`.
fn lne_messages(tape: &mut Tape, p: &BoundParams, idx: &GraphIndex, mlp: &Mlp, m: Var) -> Result<Var> {
    let e = tape.exp(m);
    let rows = tape.segment_sum(e, &idx.msg_pad)?;
    let out = mlp.forward(tape, p, rows)?;
    let flat = tape.reshape(out, &[idx.num_edges * idx.c_max])?;
    let back = tape.segment_sum(flat, &idx.msg_unpad)?;
    let c = tape.clamp_min(back, LNE_FLOOR);
    tape.ln(c)
}

/// `ln(MLP(exp(x)))` with a scalar network applied to each entry.
fn lne_entrywise(tape: &mut Tape, p: &BoundParams, mlp: &Mlp, x: Var) -> Result<Var> {
    let n = tape.shape(x)[0];
    let e = tape.exp(x);
    let col = tape.reshape(e, &[n, 1])?;
    let out = mlp.forward(tape, p, col)?;
    let flat = tape.reshape(out, &[n])?;
    let c = tape.clamp_min(flat, LNE_FLOOR);
    tape.ln(c)
}

/// `H(x) = x + H̄(Px) - H̄(0)` with one `H̄` shared by every edge, where `P`
/// subtracts the per-edge mean. Messages are renormalized after the update,
/// so a constant offset in `H̄` is invisible and only the centered part of
/// the difference can carry information.
pub(crate) fn residual_operator(tape: &mut Tape, p: &BoundParams, idx: &GraphIndex, hbar: &Mlp, diff: Var) -> Result<Var> {
    let sums = tape.segment_sum(diff, &idx.msg_norm)?;
    let inv_card = tape.constant(ndarray::Array1::from_iter(idx.edge_cards.iter().map(|&c| 1.0 / c as f64)).into_dyn());
    let means = tape.mul(sums, inv_card)?;
    let spread = tape.segment_sum(means, &idx.msg_bcast)?;
    let centered = tape.sub(diff, spread)?;
    let rows = tape.segment_sum(centered, &idx.msg_pad)?;
    let y = hbar.forward(tape, p, rows)?;
    let zero = tape.constant(Array2::<f64>::zeros((1, idx.c_max)).into_dyn());
    let y0 = hbar.forward(tape, p, zero)?;
    let shifted = tape.sub(y, y0)?;
    let flat = tape.reshape(shifted, &[idx.num_edges * idx.c_max])?;
    let back = tape.segment_sum(flat, &idx.msg_unpad)?;
    tape.add(diff, back)
}

pub(crate) fn apply_operator(
    tape: &mut Tape,
    p: &BoundParams,
    idx: &GraphIndex,
    op: &OperatorConfig,
    hbar: Option<&Mlp>,
    diff: Var,
) -> Result<Var> {
    match (op, hbar) {
        (OperatorConfig::Scalar { alpha }, _) => Ok(tape.scale(diff, *alpha)),
        (OperatorConfig::Residual { .. }, Some(h)) => residual_operator(tape, p, idx, h, diff),
        (OperatorConfig::Residual { .. }, None) => unreachable!("residual operator without parameters"),
    }
}

fn phi(tape: &mut Tape, idx: &GraphIndex) -> Var {
    tape.constant(ndarray::Array1::from(idx.phi.clone()).into_dyn())
}

/// Normalized `LSE_{x_a \ x_i}` over joint entries.
fn fac_to_var_from_joint(tape: &mut Tape, idx: &GraphIndex, joint: Var) -> Result<Var> {
    let raw = tape.segment_lse(joint, &idx.f2v_lse)?;
    log_normalize(tape, raw, &idx.msg_norm, &idx.msg_bcast)
}

/// One layer from `(var_to_fac, fac_to_var)` at iteration `k - 1`.
pub(crate) fn layer_step(
    tape: &mut Tape,
    p: &BoundParams,
    idx: &GraphIndex,
    cfg: &LayerConfig,
    params: &LayerParams,
    v2f_prev: Var,
    f2v_prev: Var,
) -> Result<(Var, Var)> {
    match (cfg, params) {
        (LayerConfig::BpnnD { operator, var_alpha, double_count }, LayerParams::BpnnD { hbar }) => {
            let dc = *double_count;
            let v_raw = tape.segment_sum(f2v_prev, if dc { &idx.v2f_sum_dc } else { &idx.v2f_sum })?;
            let v_damped = damp(tape, v_raw, v2f_prev, *var_alpha)?;
            let v2f = log_normalize(tape, v_damped, &idx.msg_norm, &idx.msg_bcast)?;

            let phi = phi(tape, idx);
            let src = tape.concat(&[phi, v2f], 0)?;
            let joint = tape.segment_sum(src, if dc { &idx.joint_full_dc } else { &idx.joint_full })?;
            let tilde = fac_to_var_from_joint(tape, idx, joint)?;
            let diff = tape.sub(f2v_prev, tilde)?;
            let delta = apply_operator(tape, p, idx, operator, hbar.as_ref(), diff)?;
            let f_raw = tape.add(tilde, delta)?;
            let f2v = log_normalize(tape, f_raw, &idx.msg_norm, &idx.msg_bcast)?;
            Ok((v2f, f2v))
        }
        (LayerConfig::MessageMlp { alpha, double_count, .. }, LayerParams::MessageMlp { lne }) => {
            let dc = *double_count;
            let incoming = match &lne[2] {
                Some(m) => lne_messages(tape, p, idx, m, f2v_prev)?,
                None => f2v_prev,
            };
            let v_raw = tape.segment_sum(incoming, if dc { &idx.v2f_sum_dc } else { &idx.v2f_sum })?;
            let v_damped = damp(tape, v_raw, v2f_prev, *alpha)?;
            let v2f = log_normalize(tape, v_damped, &idx.msg_norm, &idx.msg_bcast)?;

            // LNE_4 then LNE_1 on each incoming message, LNE_2 on their sum
            let mut incoming = v2f;
            for slot in [3, 0] {
                if let Some(m) = &lne[slot] {
                    incoming = lne_messages(tape, p, idx, m, incoming)?;
                }
            }
            let phi = phi(tape, idx);
            let joint = match &lne[1] {
                None => {
                    let src = tape.concat(&[phi, incoming], 0)?;
                    tape.segment_sum(src, if dc { &idx.joint_full_dc } else { &idx.joint_full })?
                }
                Some(m) => {
                    let sums = tape.segment_sum(incoming, if dc { &idx.joint_msgs_dc } else { &idx.joint_msgs })?;
                    let t = lne_entrywise(tape, p, m, sums)?;
                    let ph = tape.segment_sum(phi, &idx.joint_phi)?;
                    tape.add(ph, t)?
                }
            };
            let tilde = fac_to_var_from_joint(tape, idx, joint)?;
            let f_damped = damp(tape, tilde, f2v_prev, *alpha)?;
            let f2v = log_normalize(tape, f_damped, &idx.msg_norm, &idx.msg_bcast)?;
            Ok((v2f, f2v))
        }
        _ => unreachable!("layer parameters are built from their config"),
    }
}

/// Normalized variable and factor log beliefs, flattened.
pub(crate) fn beliefs(tape: &mut Tape, idx: &GraphIndex, v2f: Var, f2v: Var) -> Result<(Var, Var)> {
    let vb = tape.segment_sum(f2v, &idx.var_belief_sum)?;
    let vb = log_normalize(tape, vb, &idx.var_norm, &idx.var_bcast)?;
    let phi = phi(tape, idx);
    let src = tape.concat(&[phi, v2f], 0)?;
    let fb = tape.segment_sum(src, &idx.fac_belief_sum)?;
    let fb = log_normalize(tape, fb, &idx.fac_norm, &idx.fac_bcast)?;
    Ok((vb, fb))
}

pub(crate) fn constant_flat(tape: &mut Tape, v: &[f64]) -> Var {
    tape.constant(ndarray::ArrayD::from_shape_vec(IxDyn(&[v.len()]), v.to_vec()).expect("1-d"))
}
