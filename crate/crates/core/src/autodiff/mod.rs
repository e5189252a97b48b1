//! Dynamic reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records every operation in creation order, which is already a
//! topological order, so [`Tape::backward`] is a single reverse sweep.

mod adam;
mod gradcheck;
mod params;
mod segments;

use std::rc::Rc;

use ndarray::{concatenate, Array1, Array2, ArrayD, Axis, Ix1, Ix2, IxDyn, Slice, Zip};

use crate::error::{Error, Result};
use crate::logspace::lse_iter;

pub use gradcheck::max_gradient_error;
pub use adam::{clip_global_norm, Adam, AdamConfig, LrSchedule};
pub use params::{BoundParams, ParamId, ParamStore};
pub use segments::Segments;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Concat(Vec<Var>, usize),
    Slice(Var, usize, usize, usize),
    SumAxes(Var, Vec<usize>),
    LseAxes(Var, Vec<usize>),
    Exp(Var),
    Ln(Var),
    Relu(Var),
    ClampMin(Var, f64),
    Reshape(Var),
    SegmentSum(Var, Rc<Segments>),
    SegmentLse(Var, Rc<Segments>),
}

struct Node {
    value: ArrayD<f64>,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints from one backward sweep, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<ArrayD<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zeros if the loss does not
    /// depend on it.
    pub fn wrt(&self, v: Var) -> ArrayD<f64> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => ArrayD::zeros(IxDyn(&self.shapes[v.0])),
        }
    }
}

fn mismatch(what: &str, a: &[usize], b: &[usize]) -> Error {
    Error::ShapeMismatch(format!("{what}: {a:?} vs {b:?}"))
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for k in 0..n {
        let da = if k + a.len() >= n { a[k + a.len() - n] } else { 1 };
        let db = if k + b.len() >= n { b[k + b.len() - n] } else { 1 };
        out[k] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Sums a broadcast gradient back down to `shape`.
fn reduce_to_shape(mut g: ArrayD<f64>, shape: &[usize]) -> ArrayD<f64> {
    while g.ndim() > shape.len() {
        g = g.sum_axis(Axis(0));
    }
    for (k, &d) in shape.iter().enumerate() {
        if d == 1 && g.shape()[k] != 1 {
            g = g.sum_axis(Axis(k)).insert_axis(Axis(k));
        }
    }
    g
}

fn accumulate(slot: &mut Option<ArrayD<f64>>, g: ArrayD<f64>) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

/// Moves `axes` to the end and flattens to `[kept, reduced]`.
fn split_axes(x: &ArrayD<f64>, axes: &[usize]) -> (Array2<f64>, Vec<usize>) {
    let kept: Vec<usize> = (0..x.ndim()).filter(|k| !axes.contains(k)).collect();
    let kept_shape: Vec<usize> = kept.iter().map(|&k| x.shape()[k]).collect();
    let rows: usize = kept_shape.iter().product();
    let cols: usize = axes.iter().map(|&k| x.shape()[k]).product();
    let perm: Vec<usize> = kept.iter().chain(axes).copied().collect();
    let moved = x.view().permuted_axes(perm).as_standard_layout().into_owned();
    let flat = moved.into_shape_with_order((rows, cols)).expect("sizes agree");
    (flat, kept_shape)
}

/// Inverse of [`split_axes`] for a `[kept, reduced]` matrix.
fn merge_axes(m: Array2<f64>, shape: &[usize], axes: &[usize]) -> ArrayD<f64> {
    let kept: Vec<usize> = (0..shape.len()).filter(|k| !axes.contains(k)).collect();
    let perm: Vec<usize> = kept.iter().chain(axes).copied().collect();
    let moved_shape: Vec<usize> = perm.iter().map(|&k| shape[k]).collect();
    let moved = m.into_shape_with_order(IxDyn(&moved_shape)).expect("sizes agree");
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    moved.permuted_axes(inv).as_standard_layout().into_owned()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: ArrayD<f64>, op: Op, requires_grad: bool) -> Var {
        let value = if value.is_standard_layout() { value } else { value.as_standard_layout().into_owned() };
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A differentiable input.
    pub fn param(&mut self, value: ArrayD<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A constant input; no gradient is tracked through it.
    pub fn constant(&mut self, value: ArrayD<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn constant_vec(&mut self, value: Vec<f64>) -> Var {
        self.constant(Array1::from(value).into_dyn())
    }

    pub fn value(&self, v: Var) -> &ArrayD<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Value of a single-element tensor.
    pub fn scalar(&self, v: Var) -> f64 {
        let x = &self.nodes[v.0].value;
        debug_assert_eq!(x.len(), 1);
        x.iter().next().copied().unwrap_or(f64::NAN)
    }

    fn binary<F>(&mut self, a: Var, b: Var, name: &str, f: F, op: Op) -> Result<Var>
    where
        F: Fn(f64, f64) -> f64,
    {
        let (xa, xb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let shape = broadcast_shape(xa.shape(), xb.shape()).ok_or_else(|| mismatch(name, xa.shape(), xb.shape()))?;
        let va = xa.broadcast(IxDyn(&shape)).expect("checked");
        let vb = xb.broadcast(IxDyn(&shape)).expect("checked");
        let out = Zip::from(&va).and(&vb).map_collect(|&p, &q| f(p, q));
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, op, rg))
    }

    /// Elementwise sum with numpy-style broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |p, q| p - q, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |p, q| p * q, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.nodes[a.0].value.mapv(|x| c * x);
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, c), rg)
    }

    /// Matrix product for `[m, k] × [k, n]` or matrix-vector for
    /// `[m, k] × [k]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (xa, xb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let ma = xa.view().into_dimensionality::<Ix2>().map_err(|_| mismatch("matmul lhs", xa.shape(), &[0, 0]))?;
        if ma.ncols() != xb.shape().first().copied().unwrap_or(0) {
            return Err(mismatch("matmul", xa.shape(), xb.shape()));
        }
        let out = match xb.ndim() {
            1 => ma.dot(&xb.view().into_dimensionality::<Ix1>().expect("1-d")).into_dyn(),
            2 => ma.dot(&xb.view().into_dimensionality::<Ix2>().expect("2-d")).into_dyn(),
            _ => return Err(mismatch("matmul rhs", xa.shape(), xb.shape())),
        };
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Empty("concat input"));
        }
        let views: Vec<_> = parts.iter().map(|v| self.nodes[v.0].value.view()).collect();
        let out = concatenate(Axis(axis), &views).map_err(|e| Error::ShapeMismatch(format!("concat: {e}")))?;
        let rg = self.rg(parts);
        Ok(self.push(out, Op::Concat(parts.to_vec(), axis), rg))
    }

    /// Entries `start..end` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let x = &self.nodes[a.0].value;
        if axis >= x.ndim() || start > end || end > x.shape()[axis] {
            return Err(Error::ShapeMismatch(format!("slice {start}..{end} on axis {axis} of {:?}", x.shape())));
        }
        let out = x.slice_axis(Axis(axis), Slice::from(start..end)).to_owned();
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Slice(a, axis, start, end), rg))
    }

    fn check_axes(&self, a: Var, axes: &[usize]) -> Result<Vec<usize>> {
        let n = self.nodes[a.0].value.ndim();
        let mut sorted = axes.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != axes.len() || sorted.iter().any(|&k| k >= n) {
            return Err(Error::ShapeMismatch(format!("axes {axes:?} for a {n}-d tensor")));
        }
        Ok(sorted)
    }

    /// Sums out `axes`, which are removed from the shape.
    pub fn sum_axes(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let axes = self.check_axes(a, axes)?;
        let mut out = self.nodes[a.0].value.clone();
        for &k in axes.iter().rev() {
            out = out.sum_axis(Axis(k));
        }
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::SumAxes(a, axes), rg))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let axes: Vec<usize> = (0..self.nodes[a.0].value.ndim()).collect();
        self.sum_axes(a, &axes).expect("all axes are valid")
    }

    /// Logsumexp over `axes`, which are removed from the shape.
    pub fn lse_axes(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let axes = self.check_axes(a, axes)?;
        let (flat, kept_shape) = split_axes(&self.nodes[a.0].value, &axes);
        let vals: Vec<f64> = flat.rows().into_iter().map(|r| lse_iter(r.iter().copied())).collect();
        let out = ArrayD::from_shape_vec(IxDyn(&kept_shape), vals).expect("sizes agree");
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::LseAxes(a, axes), rg))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.nodes[a.0].value.mapv(f64::exp);
        let rg = self.rg(&[a]);
        self.push(out, Op::Exp(a), rg)
    }

    /// Natural log; every input entry must be positive. Clamp first with
    /// [`Tape::clamp_min`] when zeros can occur.
    pub fn ln(&mut self, a: Var) -> Result<Var> {
        let x = &self.nodes[a.0].value;
        if let Some(&bad) = x.iter().find(|&&v| !(v > 0.0)) {
            return Err(Error::InvalidArgument(format!("ln of non-positive value {bad}")));
        }
        let out = x.mapv(f64::ln);
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Ln(a), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.nodes[a.0].value.mapv(|x| x.max(0.0));
        let rg = self.rg(&[a]);
        self.push(out, Op::Relu(a), rg)
    }

    /// `max(x, min)`; clamped entries pass no gradient.
    pub fn clamp_min(&mut self, a: Var, min: f64) -> Var {
        let out = self.nodes[a.0].value.mapv(|x| if x < min { min } else { x });
        let rg = self.rg(&[a]);
        self.push(out, Op::ClampMin(a, min), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let x = &self.nodes[a.0].value;
        if shape.iter().product::<usize>() != x.len() {
            return Err(mismatch("reshape", x.shape(), shape));
        }
        let out = x.clone().into_shape_with_order(IxDyn(shape)).expect("sizes agree");
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    /// `out.flat[j] = Σ_{k ∈ segs[j]} a.flat[k]`, shaped as `segs.shape()`.
    /// An empty segment yields 0, so this also covers gathers with padding.
    pub fn segment_sum(&mut self, a: Var, segs: &Rc<Segments>) -> Result<Var> {
        let x = &self.nodes[a.0].value;
        segs.check_source(x.len())?;
        let flat = x.as_slice().expect("standard layout");
        let vals: Vec<f64> = (0..segs.len()).map(|j| segs.get(j).iter().map(|&k| flat[k]).sum()).collect();
        let out = ArrayD::from_shape_vec(IxDyn(segs.shape()), vals).expect("segment shape");
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::SegmentSum(a, segs.clone()), rg))
    }

    /// `out.flat[j] = LSE_{k ∈ segs[j]} a.flat[k]`; an empty segment is `-inf`.
    pub fn segment_lse(&mut self, a: Var, segs: &Rc<Segments>) -> Result<Var> {
        let x = &self.nodes[a.0].value;
        segs.check_source(x.len())?;
        let flat = x.as_slice().expect("standard layout");
        let vals: Vec<f64> = (0..segs.len()).map(|j| lse_iter(segs.get(j).iter().map(|&k| flat[k]))).collect();
        let out = ArrayD::from_shape_vec(IxDyn(segs.shape()), vals).expect("segment shape");
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::SegmentLse(a, segs.clone()), rg))
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let n = self.nodes.len();
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<ArrayD<f64>>> = vec![None; n];
        grads[loss.0] = Some(ArrayD::ones(self.nodes[loss.0].value.raw_dim()));
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[id] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node, g: &ArrayD<f64>, grads: &mut [Option<ArrayD<f64>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if self.needs(*a) {
                    accumulate(&mut grads[a.0], reduce_to_shape(g.clone(), val(*a).shape()));
                }
                if self.needs(*b) {
                    accumulate(&mut grads[b.0], reduce_to_shape(g.mapv(|x| sign * x), val(*b).shape()));
                }
            }
            Op::Mul(a, b) => {
                let shape = g.raw_dim();
                if self.needs(*a) {
                    let other = val(*b).broadcast(shape.clone()).expect("forward shape");
                    accumulate(&mut grads[a.0], reduce_to_shape(g * &other, val(*a).shape()));
                }
                if self.needs(*b) {
                    let other = val(*a).broadcast(shape).expect("forward shape");
                    accumulate(&mut grads[b.0], reduce_to_shape(g * &other, val(*b).shape()));
                }
            }
            Op::Scale(a, c) => accumulate(&mut grads[a.0], g.mapv(|x| c * x)),
            Op::MatMul(a, b) => {
                let ma = val(*a).view().into_dimensionality::<Ix2>().expect("2-d");
                if val(*b).ndim() == 1 {
                    let xb = val(*b).view().into_dimensionality::<Ix1>().expect("1-d");
                    let gy = g.view().into_dimensionality::<Ix1>().expect("1-d");
                    if self.needs(*a) {
                        let outer = gy.insert_axis(Axis(1)).dot(&xb.insert_axis(Axis(0)));
                        accumulate(&mut grads[a.0], outer.into_dyn());
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads[b.0], ma.t().dot(&gy).into_dyn());
                    }
                } else {
                    let mb = val(*b).view().into_dimensionality::<Ix2>().expect("2-d");
                    let gy = g.view().into_dimensionality::<Ix2>().expect("2-d");
                    if self.needs(*a) {
                        accumulate(&mut grads[a.0], gy.dot(&mb.t()).into_dyn());
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads[b.0], ma.t().dot(&gy).into_dyn());
                    }
                }
            }
            Op::Concat(parts, axis) => {
                let mut start = 0;
                for p in parts {
                    let len = val(*p).shape()[*axis];
                    if self.needs(*p) {
                        let piece = g.slice_axis(Axis(*axis), Slice::from(start..start + len)).to_owned();
                        accumulate(&mut grads[p.0], piece);
                    }
                    start += len;
                }
            }
            Op::Slice(a, axis, start, end) => {
                let mut full = ArrayD::zeros(val(*a).raw_dim());
                full.slice_axis_mut(Axis(*axis), Slice::from(*start..*end)).assign(g);
                accumulate(&mut grads[a.0], full);
            }
            Op::SumAxes(a, axes) => {
                let mut expanded = g.clone();
                for &k in axes {
                    expanded = expanded.insert_axis(Axis(k));
                }
                let full = expanded.broadcast(val(*a).raw_dim()).expect("summed shape").to_owned();
                accumulate(&mut grads[a.0], full);
            }
            Op::LseAxes(a, axes) => {
                let x = val(*a);
                let (flat, _) = split_axes(x, axes);
                let y = node.value.as_slice().expect("standard layout");
                let gy = g.as_slice().expect("standard layout");
                let mut w = flat;
                for (r, mut row) in w.rows_mut().into_iter().enumerate() {
                    let (yr, gr) = (y[r], gy[r]);
                    row.mapv_inplace(|v| if yr == f64::NEG_INFINITY { 0.0 } else { gr * (v - yr).exp() });
                }
                accumulate(&mut grads[a.0], merge_axes(w, x.shape(), axes));
            }
            Op::Exp(a) => accumulate(&mut grads[a.0], g * &node.value),
            Op::Ln(a) => accumulate(&mut grads[a.0], g / val(*a)),
            Op::Relu(a) => {
                let mask = val(*a).mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                accumulate(&mut grads[a.0], g * &mask);
            }
            Op::ClampMin(a, min) => {
                let mask = val(*a).mapv(|x| if x < *min { 0.0 } else { 1.0 });
                accumulate(&mut grads[a.0], g * &mask);
            }
            Op::Reshape(a) => {
                let back = g.clone().into_shape_with_order(val(*a).raw_dim()).expect("sizes agree");
                accumulate(&mut grads[a.0], back);
            }
            Op::SegmentSum(a, segs) => {
                let mut out = vec![0.0; val(*a).len()];
                for (j, &gj) in g.iter().enumerate() {
                    for &k in segs.get(j) {
                        out[k] += gj;
                    }
                }
                let arr = ArrayD::from_shape_vec(val(*a).raw_dim(), out).expect("source shape");
                accumulate(&mut grads[a.0], arr);
            }
            Op::SegmentLse(a, segs) => {
                let x = val(*a).as_slice().expect("standard layout");
                let mut out = vec![0.0; x.len()];
                for ((j, &gj), &yj) in g.iter().enumerate().zip(node.value.iter()) {
                    if yj == f64::NEG_INFINITY {
                        continue;
                    }
                    for &k in segs.get(j) {
                        out[k] += gj * (x[k] - yj).exp();
                    }
                }
                let arr = ArrayD::from_shape_vec(val(*a).raw_dim(), out).expect("source shape");
                accumulate(&mut grads[a.0], arr);
            }
        }
    }
}
