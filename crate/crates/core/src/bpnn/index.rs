use std::rc::Rc;

use crate::autodiff::Segments;
use crate::bp::{BeliefSet, MessageState};
use crate::error::{Error, Result};
use crate::factor_graph::{for_each_index, FactorGraph};
use ndarray::{ArrayD, IxDyn};

/// Flat layouts and gather patterns that let one tape operation process
/// every edge, entry or factor of a graph at once.
///
/// Messages live in a vector of length `msg_len`, edge by edge in edge-id
/// order; factor log potentials in a vector of length `phi_len`, factor by
/// factor, row-major. A "joint" entry pairs an edge `(a, i)` with one entry
/// of `φ_a`, and is where the factor-to-variable sums are formed.
#[derive(Clone, Debug)]
pub struct GraphIndex {
    pub(crate) num_vars: usize,
    pub(crate) num_factors: usize,
    pub(crate) num_edges: usize,
    pub(crate) c_max: usize,
    pub(crate) msg_offsets: Vec<usize>,
    pub(crate) msg_len: usize,
    pub(crate) edge_cards: Vec<usize>,
    pub(crate) phi: Vec<f64>,
    pub(crate) fac_offsets: Vec<usize>,
    pub(crate) fac_shapes: Vec<Vec<usize>>,
    pub(crate) var_cards: Vec<usize>,
    pub(crate) var_offsets: Vec<usize>,
    pub(crate) var_len: usize,
    pub(crate) degrees: Vec<usize>,
    /// per edge, over messages
    pub(crate) msg_norm: Rc<Segments>,
    /// entry to its edge
    pub(crate) msg_bcast: Rc<Segments>,
    pub(crate) v2f_sum: Rc<Segments>,
    pub(crate) v2f_sum_dc: Rc<Segments>,
    /// over `[φ; var_to_fac]`
    pub(crate) joint_full: Rc<Segments>,
    pub(crate) joint_full_dc: Rc<Segments>,
    /// over `var_to_fac` only
    pub(crate) joint_msgs: Rc<Segments>,
    pub(crate) joint_msgs_dc: Rc<Segments>,
    /// over `φ` only
    pub(crate) joint_phi: Rc<Segments>,
    pub(crate) f2v_lse: Rc<Segments>,
    pub(crate) msg_pad: Rc<Segments>,
    pub(crate) msg_unpad: Rc<Segments>,
    pub(crate) var_belief_sum: Rc<Segments>,
    pub(crate) var_norm: Rc<Segments>,
    pub(crate) var_bcast: Rc<Segments>,
    /// over `[φ; var_to_fac]`
    pub(crate) fac_belief_sum: Rc<Segments>,
    pub(crate) fac_norm: Rc<Segments>,
    pub(crate) fac_bcast: Rc<Segments>,
}

fn rc(s: Result<Segments>) -> Result<Rc<Segments>> {
    s.map(Rc::new)
}

impl GraphIndex {
    /// Fails if a variable has more than `c_max` states.
    pub fn new(g: &FactorGraph, c_max: usize) -> Result<Self> {
        if g.max_cardinality() > c_max {
            return Err(Error::InvalidArgument(format!(
                "cardinality {} exceeds model C_max {c_max}",
                g.max_cardinality()
            )));
        }
        let num_edges = g.num_edges();
        let edge_cards: Vec<usize> = g.edges().iter().map(|e| g.cardinality(e.variable)).collect();
        let mut msg_offsets = Vec::with_capacity(num_edges + 1);
        let mut acc = 0;
        for &c in &edge_cards {
            msg_offsets.push(acc);
            acc += c;
        }
        msg_offsets.push(acc);
        let msg_len = acc;

        let mut phi = Vec::new();
        let mut fac_offsets = Vec::with_capacity(g.num_factors() + 1);
        let mut fac_shapes = Vec::with_capacity(g.num_factors());
        for f in g.factors() {
            fac_offsets.push(phi.len());
            fac_shapes.push(f.log_potential().shape().to_vec());
            phi.extend(f.log_potential().iter().copied());
        }
        fac_offsets.push(phi.len());
        let phi_len = phi.len();

        let var_cards: Vec<usize> = g.variables().iter().map(|v| v.cardinality).collect();
        let mut var_offsets = Vec::with_capacity(var_cards.len() + 1);
        let mut acc = 0;
        for &c in &var_cards {
            var_offsets.push(acc);
            acc += c;
        }
        var_offsets.push(acc);
        let var_len = acc;
        let degrees = (0..g.num_variables()).map(|i| g.degree(i)).collect();

        let entry = |e: usize, s: usize| msg_offsets[e] + s;
        let per_edge: Vec<Vec<usize>> = (0..num_edges).map(|e| (msg_offsets[e]..msg_offsets[e + 1]).collect()).collect();
        let owner: Vec<Option<usize>> =
            (0..num_edges).flat_map(|e| std::iter::repeat(Some(e)).take(edge_cards[e])).collect();

        let v2f = |dc: bool| -> Vec<Vec<usize>> {
            let mut out = Vec::with_capacity(msg_len);
            for (e, edge) in g.edges().iter().enumerate() {
                for s in 0..edge_cards[e] {
                    out.push(
                        g.variable_edges(edge.variable)
                            .iter()
                            .filter(|&&c| dc || c != e)
                            .map(|&c| entry(c, s))
                            .collect(),
                    );
                }
            }
            out
        };

        let mut joint_full = Vec::new();
        let mut joint_full_dc = Vec::new();
        let mut joint_msgs = Vec::new();
        let mut joint_msgs_dc = Vec::new();
        let mut joint_phi = Vec::new();
        let mut f2v_lse: Vec<Vec<usize>> = vec![Vec::new(); msg_len];
        for (e, edge) in g.edges().iter().enumerate() {
            let a = edge.factor;
            let first = g.factor_edges(a).start;
            let keep = edge.position;
            let mut flat = 0;
            for_each_index(&fac_shapes[a], |x| {
                let p = fac_offsets[a] + flat;
                let msgs: Vec<usize> = (0..x.len()).filter(|&k| k != keep).map(|k| entry(first + k, x[k])).collect();
                let msgs_dc: Vec<usize> = (0..x.len()).map(|k| entry(first + k, x[k])).collect();
                f2v_lse[entry(e, x[keep])].push(joint_phi.len());
                joint_full.push(std::iter::once(p).chain(msgs.iter().map(|&m| phi_len + m)).collect::<Vec<_>>());
                joint_full_dc.push(std::iter::once(p).chain(msgs_dc.iter().map(|&m| phi_len + m)).collect::<Vec<_>>());
                joint_msgs.push(msgs);
                joint_msgs_dc.push(msgs_dc);
                joint_phi.push(vec![p]);
                flat += 1;
            });
        }
        let joint_len = joint_phi.len();

        let c = c_max;
        let mut pad = vec![None; num_edges * c];
        for e in 0..num_edges {
            for s in 0..edge_cards[e] {
                pad[e * c + s] = Some(entry(e, s));
            }
        }
        let unpad: Vec<Option<usize>> =
            (0..num_edges).flat_map(|e| (0..edge_cards[e]).map(move |s| Some(e * c + s))).collect();

        let mut var_belief_sum = Vec::with_capacity(var_len);
        for (i, &card) in var_cards.iter().enumerate() {
            for s in 0..card {
                var_belief_sum.push(g.variable_edges(i).iter().map(|&e| entry(e, s)).collect::<Vec<_>>());
            }
        }
        let var_groups: Vec<Vec<usize>> = (0..var_cards.len()).map(|i| (var_offsets[i]..var_offsets[i + 1]).collect()).collect();
        let var_owner: Vec<Option<usize>> =
            (0..var_cards.len()).flat_map(|i| std::iter::repeat(Some(i)).take(var_cards[i])).collect();

        let mut fac_belief_sum = Vec::with_capacity(phi_len);
        for a in 0..g.num_factors() {
            let first = g.factor_edges(a).start;
            let mut flat = 0;
            for_each_index(&fac_shapes[a], |x| {
                let p = fac_offsets[a] + flat;
                fac_belief_sum.push(
                    std::iter::once(p)
                        .chain((0..x.len()).map(|k| phi_len + entry(first + k, x[k])))
                        .collect::<Vec<_>>(),
                );
                flat += 1;
            });
        }
        let fac_groups: Vec<Vec<usize>> =
            (0..g.num_factors()).map(|a| (fac_offsets[a]..fac_offsets[a + 1]).collect()).collect();
        let fac_owner: Vec<Option<usize>> = (0..g.num_factors())
            .flat_map(|a| std::iter::repeat(Some(a)).take(fac_offsets[a + 1] - fac_offsets[a]))
            .collect();

        let v2f_plain = v2f(false);
        let v2f_dc = v2f(true);
        Ok(Self {
            num_vars: g.num_variables(),
            num_factors: g.num_factors(),
            num_edges,
            c_max,
            msg_norm: rc(Segments::flat(&per_edge, msg_len))?,
            msg_bcast: rc(Segments::gather(&owner, vec![msg_len], num_edges))?,
            v2f_sum: rc(Segments::flat(&v2f_plain, msg_len))?,
            v2f_sum_dc: rc(Segments::flat(&v2f_dc, msg_len))?,
            joint_full: rc(Segments::flat(&joint_full, phi_len + msg_len))?,
            joint_full_dc: rc(Segments::flat(&joint_full_dc, phi_len + msg_len))?,
            joint_msgs: rc(Segments::flat(&joint_msgs, msg_len))?,
            joint_msgs_dc: rc(Segments::flat(&joint_msgs_dc, msg_len))?,
            joint_phi: rc(Segments::flat(&joint_phi, phi_len))?,
            f2v_lse: rc(Segments::flat(&f2v_lse, joint_len))?,
            msg_pad: rc(Segments::gather(&pad, vec![num_edges, c], msg_len))?,
            msg_unpad: rc(Segments::gather(&unpad, vec![msg_len], num_edges * c))?,
            var_belief_sum: rc(Segments::flat(&var_belief_sum, msg_len))?,
            var_norm: rc(Segments::flat(&var_groups, var_len))?,
            var_bcast: rc(Segments::gather(&var_owner, vec![var_len], var_cards.len()))?,
            fac_belief_sum: rc(Segments::flat(&fac_belief_sum, phi_len + msg_len))?,
            fac_norm: rc(Segments::flat(&fac_groups, phi_len))?,
            fac_bcast: rc(Segments::gather(&fac_owner, vec![phi_len], g.num_factors()))?,
            msg_offsets,
            msg_len,
            edge_cards,
            phi,
            fac_offsets,
            fac_shapes,
            var_cards,
            var_offsets,
            var_len,
            degrees,
        })
    }

    pub fn num_edges(&self) -> usize {
        self.num_edges
    }

    pub fn msg_len(&self) -> usize {
        self.msg_len
    }

    pub fn phi_len(&self) -> usize {
        self.phi.len()
    }

    /// Uniform messages, flattened.
    pub fn uniform_messages(&self) -> Vec<f64> {
        self.edge_cards.iter().flat_map(|&c| std::iter::repeat(-(c as f64).ln()).take(c)).collect()
    }

    pub fn flatten_messages(&self, per_edge: &[Vec<f64>]) -> Vec<f64> {
        per_edge.iter().flat_map(|m| m.iter().copied()).collect()
    }

    pub fn split_messages(&self, flat: &[f64]) -> Vec<Vec<f64>> {
        (0..self.num_edges).map(|e| flat[self.msg_offsets[e]..self.msg_offsets[e + 1]].to_vec()).collect()
    }

    pub fn message_state(&self, var_to_fac: &[f64], fac_to_var: &[f64], iteration: usize) -> MessageState {
        MessageState {
            var_to_fac: self.split_messages(var_to_fac),
            fac_to_var: self.split_messages(fac_to_var),
            iteration,
        }
    }

    pub fn belief_set(&self, var_beliefs: &[f64], fac_beliefs: &[f64]) -> BeliefSet {
        let variable_beliefs =
            (0..self.num_vars).map(|i| var_beliefs[self.var_offsets[i]..self.var_offsets[i + 1]].to_vec()).collect();
        let factor_beliefs = (0..self.num_factors)
            .map(|a| {
                let v = fac_beliefs[self.fac_offsets[a]..self.fac_offsets[a + 1]].to_vec();
                ArrayD::from_shape_vec(IxDyn(&self.fac_shapes[a]), v).expect("factor shape")
            })
            .collect();
        BeliefSet { variable_beliefs, factor_beliefs }
    }

    pub fn flatten_beliefs(&self, b: &BeliefSet) -> (Vec<f64>, Vec<f64>) {
        let v = b.variable_beliefs.iter().flat_map(|x| x.iter().copied()).collect();
        let f = b.factor_beliefs.iter().flat_map(|t| t.iter().copied()).collect();
        (v, f)
    }
}
