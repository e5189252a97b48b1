//! Readouts from belief trajectories to a `ln Z` estimate.

use std::rc::Rc;

use itertools::Itertools;

use super::index::GraphIndex;
use super::layers::constant_flat;
use super::mlp::Mlp;
use crate::autodiff::{BoundParams, Segments, Tape, Var};
use crate::error::{Error, Result};

/// Learned Bethe head: one network over variable-belief trajectories and
/// one over factor-belief trajectories.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub var_mlp: Mlp,
    pub factor_mlp: Mlp,
}

/// Gather patterns for the learned head on one graph.
#[derive(Clone, Debug)]
pub(crate) struct HeadIndex {
    var_rows: Rc<Segments>,
    fac_rows: Rc<Segments>,
    row_weights: Vec<f64>,
    var_weights: Vec<f64>,
}

pub(crate) fn var_feature_width(k: usize, c_max: usize) -> usize {
    k * c_max
}

pub(crate) fn factor_grid(c_max: usize, a_max: usize) -> usize {
    c_max.pow(a_max as u32)
}

pub(crate) fn factor_feature_width(k: usize, c_max: usize, a_max: usize) -> usize {
    2 * k * factor_grid(c_max, a_max)
}

impl HeadIndex {
    pub(crate) fn new(idx: &GraphIndex, k: usize, a_max: usize, invariant: bool) -> Result<Self> {
        let c = idx.c_max;
        let v_len = idx.var_len;
        let mut var_index = vec![None; idx.num_vars * k * c];
        for i in 0..idx.num_vars {
            for layer in 0..k {
                for s in 0..idx.var_cards[i] {
                    var_index[(i * k + layer) * c + s] = Some(layer * v_len + idx.var_offsets[i] + s);
                }
            }
        }
        let var_rows = Rc::new(Segments::gather(&var_index, vec![idx.num_vars, k * c], k * v_len)?);

        let grid = factor_grid(c, a_max);
        let p_len = idx.phi.len();
        let width = factor_feature_width(k, c, a_max);
        let mut fac_index = Vec::new();
        let mut row_weights = Vec::new();
        for (a, shape) in idx.fac_shapes.iter().enumerate() {
            let r = shape.len();
            if r > a_max {
                return Err(Error::ArityExceeded { factor: a, arity: r, max: a_max });
            }
            let mut strides = vec![1; r];
            for l in (0..r.saturating_sub(1)).rev() {
                strides[l] = strides[l + 1] * shape[l + 1];
            }
            let perms: Vec<Vec<usize>> =
                if invariant { (0..r).permutations(r).collect() } else { vec![(0..r).collect()] };
            let w = 1.0 / perms.len() as f64;
            for sigma in &perms {
                let mut row = vec![None; width];
                for g in 0..grid {
                    // grid coordinates y_0..y_{A-1}, most significant first
                    let mut rem = g;
                    let mut y = vec![0; a_max];
                    for l in (0..a_max).rev() {
                        y[l] = rem % c;
                        rem /= c;
                    }
                    if y[r..].iter().any(|&v| v != 0) {
                        continue;
                    }
                    // permuted axis l reads original axis sigma[l]
                    let mut flat = 0;
                    let mut valid = true;
                    for l in 0..r {
                        let axis = sigma[l];
                        if y[l] >= shape[axis] {
                            valid = false;
                            break;
                        }
                        flat += y[l] * strides[axis];
                    }
                    if !valid {
                        continue;
                    }
                    for layer in 0..k {
                        for ch in 0..2 {
                            let col = (layer * 2 + ch) * grid + g;
                            row[col] = Some((layer * 2 + ch) * p_len + idx.fac_offsets[a] + flat);
                        }
                    }
                }
                fac_index.extend(row);
                row_weights.push(w);
            }
        }
        let rows = row_weights.len();
        let fac_rows = Rc::new(Segments::gather(&fac_index, vec![rows, width], 2 * k * p_len)?);
        let var_weights = (0..idx.num_vars)
            .flat_map(|i| std::iter::repeat(idx.degrees[i] as f64 - 1.0).take(idx.var_cards[i]))
            .collect();
        Ok(Self { var_rows, fac_rows, row_weights, var_weights })
    }
}

/// `(b ln f, -b ln b)` for flat factor log beliefs.
fn factor_terms(tape: &mut Tape, idx: &GraphIndex, fb: Var) -> Result<(Var, Var)> {
    let b = tape.exp(fb);
    let phi = constant_flat(tape, &idx.phi);
    let blnf = tape.mul(b, phi)?;
    let blnb = tape.mul(b, fb)?;
    Ok((blnf, tape.scale(blnb, -1.0)))
}

/// `(d_i - 1) b_i ln b_i` for flat variable log beliefs.
fn variable_terms(tape: &mut Tape, weights: &[f64], vb: Var) -> Result<Var> {
    let b = tape.exp(vb);
    let blnb = tape.mul(b, vb)?;
    let w = constant_flat(tape, weights);
    tape.mul(blnb, w)
}

/// Plain Bethe estimate `-F` from one set of beliefs.
pub(crate) fn bethe_plain(tape: &mut Tape, idx: &GraphIndex, vb: Var, fb: Var) -> Result<Var> {
    let weights: Vec<f64> = (0..idx.num_vars)
        .flat_map(|i| std::iter::repeat(idx.degrees[i] as f64 - 1.0).take(idx.var_cards[i]))
        .collect();
    let (blnf, neg_blnb) = factor_terms(tape, idx, fb)?;
    let v = variable_terms(tape, &weights, vb)?;
    let fsum = tape.add(blnf, neg_blnb)?;
    let fs = tape.sum_all(fsum);
    let vs = tape.sum_all(v);
    tape.add(fs, vs)
}

/// Learned head over a trajectory of `(variable, factor)` log beliefs.
pub(crate) fn bpnn_b(
    tape: &mut Tape,
    p: &BoundParams,
    idx: &GraphIndex,
    head: &HeadParams,
    hidx: &HeadIndex,
    traj: &[(Var, Var)],
) -> Result<Var> {
    let mut var_parts = Vec::with_capacity(traj.len());
    let mut fac_parts = Vec::with_capacity(2 * traj.len());
    for &(vb, fb) in traj {
        var_parts.push(variable_terms(tape, &hidx.var_weights, vb)?);
        let (blnf, neg_blnb) = factor_terms(tape, idx, fb)?;
        fac_parts.push(blnf);
        fac_parts.push(neg_blnb);
    }
    let var_src = tape.concat(&var_parts, 0)?;
    let var_rows = tape.segment_sum(var_src, &hidx.var_rows)?;
    let var_out = head.var_mlp.forward(tape, p, var_rows)?;
    let var_total = tape.sum_all(var_out);

    let fac_src = tape.concat(&fac_parts, 0)?;
    let fac_rows = tape.segment_sum(fac_src, &hidx.fac_rows)?;
    let fac_out = head.factor_mlp.forward(tape, p, fac_rows)?;
    let n = hidx.row_weights.len();
    let fac_out = tape.reshape(fac_out, &[n])?;
    let w = constant_flat(tape, &hidx.row_weights);
    let weighted = tape.mul(fac_out, w)?;
    let fac_total = tape.sum_all(weighted);
    tape.add(var_total, fac_total)
}
