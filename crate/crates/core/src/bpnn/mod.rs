//! Learned message-passing layers built on top of BP, and their readouts.

mod checkpoint;
mod head;
mod index;
mod layers;
mod mlp;

use std::cell::RefCell;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{BoundParams, ParamStore, Tape, Var};
use crate::bp::{iterate_to_convergence, BeliefSet, BpConfig, BpResult, MessageState};
use crate::error::{Error, Result};
use crate::factor_graph::FactorGraph;
use crate::generators::seeded_rng;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
pub use head::HeadParams;
pub use index::GraphIndex;
pub use layers::{LayerParams, LNE_FLOOR};
pub use mlp::Mlp;

use head::{factor_feature_width, var_feature_width, HeadIndex};

/// How factor-to-variable message differences are damped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum OperatorConfig {
    /// `H(x) = αx`, plain damped BP.
    Scalar { alpha: f64 },
    /// `H(x) = x + H̄(Px) - H̄(0)` with a shared per-edge network `H̄` and
    /// `P` the per-edge centering; starts out as `H(x) = init_alpha · x` up
    /// to a constant shift.
    Residual { hidden: usize, init_alpha: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerConfig {
    BpnnD { operator: OperatorConfig, var_alpha: f64, double_count: bool },
    /// Log-MLP-exp blocks: `lne[0]`, `lne[1]` act inside the factor update
    /// (on each incoming message and on their sum), `lne[2]` on messages
    /// entering the variable update, `lne[3]` on messages entering the
    /// factor update.
    MessageMlp { alpha: f64, lne: [bool; 4], hidden: usize, double_count: bool },
}

impl LayerConfig {
    pub fn scalar(alpha: f64) -> Self {
        LayerConfig::BpnnD { operator: OperatorConfig::Scalar { alpha }, var_alpha: alpha, double_count: false }
    }

    pub fn residual(c_max: usize, alpha: f64) -> Self {
        LayerConfig::BpnnD {
            operator: OperatorConfig::Residual { hidden: 2 * c_max, init_alpha: alpha },
            var_alpha: alpha,
            double_count: false,
        }
    }

    pub fn message_mlp(c_max: usize, alpha: f64, lne: [bool; 4]) -> Self {
        LayerConfig::MessageMlp { alpha, lne, hidden: 2 * c_max, double_count: false }
    }

    pub fn is_bpnn_d(&self) -> bool {
        matches!(self, LayerConfig::BpnnD { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadConfig {
    BethePlain,
    /// Hidden widths of the variable and factor networks.
    BpnnB { invariant: bool, var_hidden: usize, factor_hidden: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: Vec<LayerConfig>,
    pub weight_tied: bool,
    pub head: HeadConfig,
    pub c_max: usize,
    pub a_max: usize,
}

impl ModelConfig {
    /// `k` untied layers of `layer` with an identity-embeddable learned head.
    pub fn stack(layer: LayerConfig, k: usize, c_max: usize, a_max: usize, learned_head: bool) -> Self {
        let head = if learned_head {
            HeadConfig::BpnnB {
                invariant: true,
                var_hidden: 2 * var_feature_width(k, c_max),
                factor_hidden: 2 * factor_feature_width(k, c_max, a_max),
            }
        } else {
            HeadConfig::BethePlain
        };
        Self { layers: vec![layer; k], weight_tied: false, head, c_max, a_max }
    }

    /// A single weight-tied layer read out with the plain Bethe formula.
    pub fn tied(layer: LayerConfig, c_max: usize, a_max: usize) -> Self {
        Self { layers: vec![layer], weight_tied: true, head: HeadConfig::BethePlain, c_max, a_max }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.layers.is_empty() {
            return bad("model needs at least one layer".into());
        }
        if self.c_max < 2 {
            return bad(format!("C_max {} below 2", self.c_max));
        }
        if self.weight_tied && self.layers.iter().any(|l| l != &self.layers[0]) {
            return bad("weight-tied layers must share one configuration".into());
        }
        for l in &self.layers {
            let alphas = match l {
                LayerConfig::BpnnD { operator: OperatorConfig::Scalar { alpha }, var_alpha, .. } => vec![*alpha, *var_alpha],
                LayerConfig::BpnnD { operator: OperatorConfig::Residual { init_alpha, hidden }, var_alpha, .. } => {
                    if *hidden == 0 {
                        return bad("residual operator needs a hidden layer".into());
                    }
                    vec![*init_alpha, *var_alpha]
                }
                LayerConfig::MessageMlp { alpha, hidden, .. } => {
                    if *hidden == 0 {
                        return bad("message MLP needs a hidden layer".into());
                    }
                    vec![*alpha]
                }
            };
            if alphas.iter().any(|a| !(0.0..1.0).contains(a)) {
                return bad(format!("damping {alphas:?} not in [0, 1)"));
            }
        }
        if let HeadConfig::BpnnB { .. } = self.head {
            if self.weight_tied {
                return bad("the learned head needs a fixed, untied layer count".into());
            }
        }
        Ok(())
    }
}

/// Trained or initialized network parameters plus their layout.
#[derive(Clone, Debug)]
pub struct BpnnModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    layers: Vec<LayerParams>,
    head: Option<HeadParams>,
}

/// Cached per-graph state for repeated forward passes.
pub struct PreparedGraph {
    pub index: GraphIndex,
    head: RefCell<Option<Rc<HeadIndex>>>,
}

/// Tape handles produced by one forward pass.
pub struct ForwardOutput {
    pub ln_z: Var,
    /// `(var_to_fac, fac_to_var)` after each layer.
    pub messages: Vec<(Var, Var)>,
    /// `(variable, factor)` log beliefs after each layer.
    pub beliefs: Vec<(Var, Var)>,
}

impl BpnnModel {
    /// Builds the parameter layout and initializes it to reproduce BP.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let c = config.c_max;
        let distinct = if config.weight_tied { 1 } else { config.layers.len() };
        let mut layers = Vec::with_capacity(distinct);
        for (k, cfg) in config.layers.iter().take(distinct).enumerate() {
            layers.push(match cfg {
                LayerConfig::BpnnD { operator, .. } => LayerParams::BpnnD {
                    hbar: match operator {
                        OperatorConfig::Scalar { .. } => None,
                        OperatorConfig::Residual { hidden, .. } => {
                            Some(Mlp::register(&mut params, &format!("layer{k}.hbar"), &[c, *hidden, c])?)
                        }
                    },
                },
                LayerConfig::MessageMlp { lne, hidden, .. } => {
                    let mut slots: [Option<Mlp>; 4] = Default::default();
                    for (n, slot) in slots.iter_mut().enumerate() {
                        if lne[n] {
                            let dims = if n == 1 { vec![1, 2, 1] } else { vec![c, *hidden, c] };
                            *slot = Some(Mlp::register(&mut params, &format!("layer{k}.lne{}", n + 1), &dims)?);
                        }
                    }
                    LayerParams::MessageMlp { lne: slots }
                }
            });
        }
        let head = match &config.head {
            HeadConfig::BethePlain => None,
            HeadConfig::BpnnB { var_hidden, factor_hidden, .. } => {
                let k = config.layers.len();
                let vw = var_feature_width(k, c);
                let fw = factor_feature_width(k, c, config.a_max);
                Some(HeadParams {
                    var_mlp: Mlp::register(&mut params, "head.var", &[vw, *var_hidden, 1])?,
                    factor_mlp: Mlp::register(&mut params, "head.factor", &[fw, *factor_hidden, 1])?,
                })
            }
        };
        let mut model = Self { config, params, layers, head };
        model.init_as_bp()?;
        Ok(model)
    }

    pub fn num_layers(&self) -> usize {
        self.config.layers.len()
    }

    pub fn layer_config(&self, k: usize) -> &LayerConfig {
        &self.config.layers[if self.config.weight_tied { 0 } else { k }]
    }

    pub fn layer_params(&self, k: usize) -> &LayerParams {
        &self.layers[if self.config.weight_tied { 0 } else { k }]
    }

    fn mlps(&self) -> Vec<&Mlp> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                LayerParams::BpnnD { hbar } => out.extend(hbar.iter()),
                LayerParams::MessageMlp { lne } => out.extend(lne.iter().flatten()),
            }
        }
        if let Some(h) = &self.head {
            out.push(&h.var_mlp);
            out.push(&h.factor_mlp);
        }
        out
    }

    /// Every network reproduces its BP counterpart: LNE blocks are the
    /// identity, residual operators give `H(x) = init_alpha · x`, and the
    /// learned head returns the Bethe estimate of the last layer's beliefs.
    pub fn init_as_bp(&mut self) -> Result<()> {
        for (k, l) in self.layers.iter().enumerate() {
            match (l, &self.config.layers[k]) {
                (LayerParams::BpnnD { hbar: Some(h) }, LayerConfig::BpnnD { operator: OperatorConfig::Residual { init_alpha, .. }, .. }) => {
                    h.set_scaled_identity(&mut self.params, init_alpha - 1.0)?;
                }
                (LayerParams::MessageMlp { lne }, _) => {
                    for m in lne.iter().flatten() {
                        m.set_scaled_identity(&mut self.params, 1.0)?;
                    }
                }
                _ => {}
            }
        }
        if let Some(h) = &self.head {
            let k = self.num_layers();
            let c = self.config.c_max;
            let last_var: Vec<(usize, f64)> = ((k - 1) * c..k * c).map(|i| (i, 1.0)).collect();
            h.var_mlp.set_relu_linear(&mut self.params, &[last_var])?;
            let grid = head::factor_grid(c, self.config.a_max);
            let last_fac: Vec<(usize, f64)> = ((k - 1) * 2 * grid..k * 2 * grid).map(|i| (i, 1.0)).collect();
            h.factor_mlp.set_relu_linear(&mut self.params, &[last_fac])?;
        }
        Ok(())
    }

    /// Glorot-uniform weights for every network.
    pub fn init_random(&mut self, seed: u64) {
        let mut rng = seeded_rng(seed);
        let mlps: Vec<Mlp> = self.mlps().into_iter().cloned().collect();
        for m in &mlps {
            m.init_glorot(&mut self.params, &mut rng);
        }
    }

    /// Adds `U[-sigma, sigma)` noise to every parameter.
    pub fn perturb(&mut self, seed: u64, sigma: f64) {
        let mut rng = seeded_rng(seed);
        for v in self.params.values_mut() {
            mlp::perturb(v, sigma, &mut rng);
        }
    }

    /// Like [`perturb`](Self::perturb) but leaves biases alone. Zero hidden
    /// biases keep every relu kink at the origin, so a perturbed residual
    /// operator stays injective near zero.
    pub fn perturb_weights(&mut self, seed: u64, sigma: f64) {
        let mut rng = seeded_rng(seed);
        let names = self.params.names().to_vec();
        for (v, name) in self.params.values_mut().iter_mut().zip(names) {
            if name.rsplit('.').next().is_some_and(|s| s.starts_with('w')) {
                mlp::perturb(v, sigma, &mut rng);
            }
        }
    }

    pub fn prepare(&self, g: &FactorGraph) -> Result<PreparedGraph> {
        if self.head.is_some() && g.largest_factor_arity() > self.config.a_max {
            return Err(Error::ArityExceeded { factor: 0, arity: g.largest_factor_arity(), max: self.config.a_max });
        }
        Ok(PreparedGraph { index: GraphIndex::new(g, self.config.c_max)?, head: RefCell::new(None) })
    }

    fn head_index(&self, pg: &PreparedGraph) -> Result<Rc<HeadIndex>> {
        if let Some(h) = pg.head.borrow().as_ref() {
            return Ok(h.clone());
        }
        let invariant = matches!(self.config.head, HeadConfig::BpnnB { invariant: true, .. });
        let h = Rc::new(HeadIndex::new(&pg.index, self.num_layers(), self.config.a_max, invariant)?);
        *pg.head.borrow_mut() = Some(h.clone());
        Ok(h)
    }

    /// Records `iterations` layers (defaulting to the configured count) and
    /// the head on `tape`, starting from uniform messages.
    pub fn forward(&self, tape: &mut Tape, p: &BoundParams, pg: &PreparedGraph, iterations: Option<usize>) -> Result<ForwardOutput> {
        let idx = &pg.index;
        let k = match iterations {
            Some(n) if n != self.num_layers() => {
                if !self.config.weight_tied {
                    return Err(Error::InvalidArgument(format!(
                        "{n} iterations requested from an untied {}-layer model",
                        self.num_layers()
                    )));
                }
                n
            }
            _ => self.num_layers(),
        };
        let init = idx.uniform_messages();
        let mut v2f = layers::constant_flat(tape, &init);
        let mut f2v = layers::constant_flat(tape, &init);
        let mut messages = Vec::with_capacity(k);
        let mut beliefs = Vec::with_capacity(k);
        for layer in 0..k {
            let (v, f) = layers::layer_step(tape, p, idx, self.layer_config(layer), self.layer_params(layer), v2f, f2v)?;
            v2f = v;
            f2v = f;
            messages.push((v2f, f2v));
            beliefs.push(layers::beliefs(tape, idx, v2f, f2v)?);
        }
        let ln_z = match &self.head {
            None => {
                let (vb, fb) = *beliefs.last().expect("at least one layer");
                head::bethe_plain(tape, idx, vb, fb)?
            }
            Some(h) => {
                let hidx = self.head_index(pg)?;
                head::bpnn_b(tape, p, idx, h, &hidx, &beliefs)?
            }
        };
        Ok(ForwardOutput { ln_z, messages, beliefs })
    }

    /// `ln Z` estimate for one graph.
    pub fn predict(&self, g: &FactorGraph) -> Result<f64> {
        self.predict_prepared(&self.prepare(g)?, None)
    }

    pub fn predict_prepared(&self, pg: &PreparedGraph, iterations: Option<usize>) -> Result<f64> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let out = self.forward(&mut tape, &p, pg, iterations)?;
        Ok(tape.scalar(out.ln_z))
    }

    /// Beliefs after every layer.
    pub fn trajectory(&self, pg: &PreparedGraph) -> Result<Vec<BeliefSet>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let out = self.forward(&mut tape, &p, pg, None)?;
        Ok(out
            .beliefs
            .iter()
            .map(|&(vb, fb)| belief_set_of(&tape, &pg.index, vb, fb))
            .collect())
    }

    /// Messages after every layer.
    pub fn message_trajectory(&self, pg: &PreparedGraph, iterations: Option<usize>) -> Result<Vec<MessageState>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let out = self.forward(&mut tape, &p, pg, iterations)?;
        Ok(out
            .messages
            .iter()
            .enumerate()
            .map(|(k, &(v, f))| message_state_of(&tape, &pg.index, v, f, k + 1))
            .collect())
    }

    /// Applies layer `k` once to `msgs`.
    pub fn layer_iteration(&self, pg: &PreparedGraph, k: usize, msgs: &MessageState) -> Result<MessageState> {
        let idx = &pg.index;
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let v0 = layers::constant_flat(&mut tape, &idx.flatten_messages(&msgs.var_to_fac));
        let f0 = layers::constant_flat(&mut tape, &idx.flatten_messages(&msgs.fac_to_var));
        let (v, f) = layers::layer_step(&mut tape, &p, idx, self.layer_config(k), self.layer_params(k), v0, f0)?;
        Ok(message_state_of(&tape, idx, v, f, msgs.iteration + 1))
    }

    /// The damping operator of BPNN-D layer `k` applied to per-edge
    /// difference vectors (one per edge of the prepared graph).
    pub fn h_operator(&self, pg: &PreparedGraph, k: usize, diffs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let idx = &pg.index;
        if diffs.len() != idx.num_edges || diffs.iter().zip(&idx.edge_cards).any(|(d, &c)| d.len() != c) {
            return Err(Error::ShapeMismatch("one difference vector per edge, sized by cardinality".into()));
        }
        let LayerConfig::BpnnD { operator, .. } = self.layer_config(k) else {
            return Err(Error::InvalidArgument(format!("layer {k} is not a BPNN-D layer")));
        };
        let LayerParams::BpnnD { hbar } = self.layer_params(k) else { unreachable!() };
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let d = layers::constant_flat(&mut tape, &idx.flatten_messages(diffs));
        let out = layers::apply_operator(&mut tape, &p, idx, operator, hbar.as_ref(), d)?;
        Ok(idx.split_messages(tape.value(out).as_slice().expect("flat")))
    }

    /// Learned (or plain) head on an externally supplied trajectory.
    pub fn head_estimate(&self, pg: &PreparedGraph, traj: &[BeliefSet]) -> Result<f64> {
        let expected = if self.head.is_some() { self.num_layers() } else { traj.len().max(1) };
        if traj.len() != expected {
            return Err(Error::ShapeMismatch(format!("trajectory of length {} for {expected} layers", traj.len())));
        }
        let idx = &pg.index;
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let vars: Vec<(Var, Var)> = traj
            .iter()
            .map(|b| {
                let (v, f) = idx.flatten_beliefs(b);
                (layers::constant_flat(&mut tape, &v), layers::constant_flat(&mut tape, &f))
            })
            .collect();
        let out = match &self.head {
            None => {
                let (vb, fb) = *vars.last().expect("non-empty");
                head::bethe_plain(&mut tape, idx, vb, fb)?
            }
            Some(h) => {
                let hidx = self.head_index(pg)?;
                head::bpnn_b(&mut tape, &p, idx, h, &hidx, &vars)?
            }
        };
        Ok(tape.scalar(out))
    }
}

fn flat_of(tape: &Tape, v: Var) -> &[f64] {
    tape.value(v).as_slice().expect("standard layout")
}

fn message_state_of(tape: &Tape, idx: &GraphIndex, v: Var, f: Var, iteration: usize) -> MessageState {
    idx.message_state(flat_of(tape, v), flat_of(tape, f), iteration)
}

fn belief_set_of(tape: &Tape, idx: &GraphIndex, vb: Var, fb: Var) -> BeliefSet {
    idx.belief_set(flat_of(tape, vb), flat_of(tape, fb))
}

/// One BPNN-D iteration of layer `k`.
pub fn bpnn_d_iteration(model: &BpnnModel, pg: &PreparedGraph, k: usize, msgs: &MessageState) -> Result<MessageState> {
    if !model.layer_config(k).is_bpnn_d() {
        return Err(Error::InvalidArgument(format!("layer {k} is not a BPNN-D layer")));
    }
    model.layer_iteration(pg, k, msgs)
}

/// One message-MLP iteration of layer `k`.
pub fn message_mlp_iteration(model: &BpnnModel, pg: &PreparedGraph, k: usize, msgs: &MessageState) -> Result<MessageState> {
    if model.layer_config(k).is_bpnn_d() {
        return Err(Error::InvalidArgument(format!("layer {k} is not a message-MLP layer")));
    }
    model.layer_iteration(pg, k, msgs)
}

/// Iterates a weight-tied BPNN-D layer until the factor-to-variable change
/// is at most `cfg.tol`. `cfg.damping` is unused; the layer's own operator
/// replaces it.
pub fn run_bpnn_d_to_convergence(model: &BpnnModel, g: &FactorGraph, cfg: &BpConfig) -> Result<BpResult> {
    let pg = model.prepare(g)?;
    run_bpnn_d_from(model, &pg, cfg, crate::bp::init_messages(g))
}

pub fn run_bpnn_d_from(model: &BpnnModel, pg: &PreparedGraph, cfg: &BpConfig, start: MessageState) -> Result<BpResult> {
    if !model.config.weight_tied || !model.layer_config(0).is_bpnn_d() {
        return Err(Error::InvalidArgument("convergence mode needs one weight-tied BPNN-D layer".into()));
    }
    let mut failure = None;
    let res = iterate_to_convergence(cfg, start, false, |m| match model.layer_iteration(pg, 0, m) {
        Ok(next) => next,
        Err(e) => {
            failure.get_or_insert(e);
            m.clone()
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(res),
    }
}

#[cfg(test)]
mod tests;
