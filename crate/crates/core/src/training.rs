//! Supervised fitting of [`BpnnModel`] to exact log partition labels.

use ndarray::{arr0, ArrayD};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{clip_global_norm, Adam, AdamConfig, LrSchedule, Tape};
use crate::bpnn::{BpnnModel, PreparedGraph};
use crate::error::{Error, Result};
use crate::factor_graph::FactorGraph;
use crate::generators::seeded_rng;

pub const CLIP_NORM: f64 = 10.0;

#[derive(Clone, Debug)]
pub struct LabeledInstance {
    pub graph: FactorGraph,
    pub ln_z_true: f64,
    pub tag: String,
}

impl LabeledInstance {
    /// Fails on a non-finite label, which is what an unsatisfiable formula
    /// produces.
    pub fn new(graph: FactorGraph, ln_z_true: f64, tag: impl Into<String>) -> Result<Self> {
        if !ln_z_true.is_finite() {
            return Err(Error::InvalidArgument(format!("label {ln_z_true} is not finite")));
        }
        Ok(Self { graph, ln_z_true, tag: tag.into() })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// `None` trains on the whole dataset each step.
    pub batch_size: Option<usize>,
    pub lr: f64,
    /// `(epoch, factor)`: from `epoch` on the rate is multiplied by `factor`.
    pub decay: Vec<(usize, f64)>,
    pub seed: u64,
    /// Inclusive range of unrolled iterations drawn per epoch; weight-tied
    /// models only.
    pub unroll: Option<(usize, usize)>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 100, batch_size: None, lr: 5e-4, decay: vec![(50, 0.5)], seed: 0, unroll: None }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == Some(0) {
            return Err(Error::InvalidArgument("epochs and batch size must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {}", self.lr)));
        }
        if let Some((lo, hi)) = self.unroll {
            if lo == 0 || lo > hi {
                return Err(Error::InvalidArgument(format!("unroll range {lo}..={hi}")));
            }
        }
        Ok(())
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule { base_lr: self.lr, milestones: self.decay.clone() }
    }
}

pub fn mse_loss(predicted: &[f64], truth: &[f64]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::ShapeMismatch(format!("{} predictions for {} labels", predicted.len(), truth.len())));
    }
    if predicted.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    Ok(predicted.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / predicted.len() as f64)
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    /// Full-dataset MSE seen during each epoch, before that epoch's updates.
    pub loss_history: Vec<f64>,
    /// Unrolled depth used in each epoch when sampling.
    pub unroll_history: Vec<usize>,
}

/// Trains in place. Each epoch shuffles (mini-batch mode only), then takes
/// one Adam step per batch on the clipped gradient of the batch MSE.
pub fn train(model: &mut BpnnModel, dataset: &[LabeledInstance], cfg: &TrainConfig) -> Result<TrainReport> {
    train_with(model, dataset, cfg, |_, _| Ok(()))
}

/// [`train`] with a hook that sees the model at the start of every epoch.
pub fn train_with<F>(model: &mut BpnnModel, dataset: &[LabeledInstance], cfg: &TrainConfig, mut on_epoch: F) -> Result<TrainReport>
where
    F: FnMut(usize, &BpnnModel) -> Result<()>,
{
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    if cfg.unroll.is_some() && !model.config.weight_tied {
        return Err(Error::InvalidArgument("unroll sampling needs a weight-tied model".into()));
    }
    let prepared: Vec<PreparedGraph> = dataset.iter().map(|d| model.prepare(&d.graph)).collect::<Result<_>>()?;
    let mut rng = seeded_rng(cfg.seed);
    let mut adam = Adam::new(&model.params, AdamConfig::default(), cfg.schedule());
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let batch = cfg.batch_size.unwrap_or(dataset.len()).min(dataset.len());
    let mut report = TrainReport::default();
    for epoch in 0..cfg.epochs {
        on_epoch(epoch, model)?;
        let depth = cfg.unroll.map(|(lo, hi)| rng.gen_range(lo..=hi));
        if cfg.batch_size.is_some() {
            order.shuffle(&mut rng);
        }
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let mut grads: Vec<ArrayD<f64>> = model.params.values().iter().map(|v| ArrayD::zeros(v.raw_dim())).collect();
            for &i in chunk {
                let (sq, g) = example_gradient(model, &prepared[i], dataset[i].ln_z_true, depth)?;
                if !sq.is_finite() {
                    return Err(Error::NonFiniteLoss { instance: i, epoch });
                }
                total += sq;
                for (acc, gi) in grads.iter_mut().zip(g) {
                    acc.scaled_add(1.0 / chunk.len() as f64, &gi);
                }
            }
            let norm = clip_global_norm(&mut grads, CLIP_NORM);
            log::debug!("epoch {epoch}: gradient norm {norm:e}");
            adam.step(&mut model.params, &grads, epoch);
        }
        let loss = total / dataset.len() as f64;
        log::info!("epoch {epoch}: loss {loss:e}");
        report.loss_history.push(loss);
        report.unroll_history.extend(depth);
    }
    Ok(report)
}

fn example_gradient(model: &BpnnModel, pg: &PreparedGraph, label: f64, depth: Option<usize>) -> Result<(f64, Vec<ArrayD<f64>>)> {
    let mut tape = Tape::new();
    let p = model.params.bind(&mut tape, true);
    let out = model.forward(&mut tape, &p, pg, depth)?;
    let target = tape.constant(arr0(label).into_dyn());
    let err = tape.sub(out.ln_z, target)?;
    let sq = tape.mul(err, err)?;
    let value = tape.scalar(sq);
    if !value.is_finite() {
        return Ok((value, Vec::new()));
    }
    Ok((value, p.grads(&tape.backward(sq)?)))
}

pub fn predict_all(model: &BpnnModel, dataset: &[LabeledInstance]) -> Result<Vec<f64>> {
    dataset.iter().map(|d| model.predict(&d.graph)).collect()
}

pub fn evaluate_rmse(model: &BpnnModel, dataset: &[LabeledInstance]) -> Result<f64> {
    let truth: Vec<f64> = dataset.iter().map(|d| d.ln_z_true).collect();
    Ok(mse_loss(&predict_all(model, dataset)?, &truth)?.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bp::{bethe_free_energy, bp_iteration, compute_beliefs, init_messages, BpConfig};
    use crate::bpnn::{LayerConfig, ModelConfig};
    use crate::exact::exact_ln_z;
    use crate::generators::{random_factor_graph, RandomGraphSpec};

    fn dataset(n: u64) -> Vec<LabeledInstance> {
        (0..n)
            .map(|s| {
                let g = random_factor_graph(RandomGraphSpec::new(5), 4, 3, s).unwrap();
                let z = exact_ln_z(&g).unwrap().ln_z;
                LabeledInstance::new(g, z, "random").unwrap()
            })
            .collect()
    }

    fn bethe_after(g: &FactorGraph, iters: usize) -> f64 {
        let cfg = BpConfig::default();
        let mut m = init_messages(g);
        for _ in 0..iters {
            m = bp_iteration(g, &m, &cfg);
        }
        bethe_free_energy(g, &compute_beliefs(g, &m)).ln_z_estimate
    }

    fn model() -> BpnnModel {
        BpnnModel::new(ModelConfig::stack(LayerConfig::residual(3, 0.5), 2, 3, 3, true)).unwrap()
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[0.0], &[2.0]).unwrap(), 4.0);
        assert_eq!(mse_loss(&[1.0, 3.0], &[2.0, 5.0]).unwrap(), 2.5);
        assert!(mse_loss(&[], &[]).is_err());
        assert!(mse_loss(&[1.0], &[]).is_err());
    }

    #[test]
    fn infinite_labels_are_rejected() {
        let g = dataset(1).remove(0).graph;
        assert!(LabeledInstance::new(g, f64::NEG_INFINITY, "unsat").is_err());
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let data = dataset(4);
        let mut m = model();
        let before = m.params.clone();
        let cfg = TrainConfig { epochs: 3, lr: 0.0, ..TrainConfig::default() };
        let report = train(&mut m, &data, &cfg).unwrap();
        assert_eq!(m.params, before);
        assert!(report.loss_history.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn first_loss_is_bethe_mse() {
        let data = dataset(4);
        let bethe: Vec<f64> = data.iter().map(|d| bethe_after(&d.graph, 2)).collect();
        let truth: Vec<f64> = data.iter().map(|d| d.ln_z_true).collect();
        let want = mse_loss(&bethe, &truth).unwrap();
        let mut m = model();
        assert!((evaluate_rmse(&m, &data).unwrap() - want.sqrt()).abs() < 1e-6);
        let report = train(&mut m, &data, &TrainConfig { epochs: 1, ..TrainConfig::default() }).unwrap();
        assert!((report.loss_history[0] - want).abs() < 1e-9);
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let data = dataset(5);
        let cfg = TrainConfig { epochs: 30, lr: 1e-2, batch_size: Some(2), seed: 3, ..TrainConfig::default() };
        let (mut a, mut b) = (model(), model());
        let ra = train(&mut a, &data, &cfg).unwrap();
        let rb = train(&mut b, &data, &cfg).unwrap();
        assert_eq!(ra.loss_history, rb.loss_history);
        assert_eq!(a.params, b.params);
        assert!(evaluate_rmse(&a, &data).unwrap() < ra.loss_history[0].sqrt());
    }

    #[test]
    fn tied_models_sample_depth() {
        let data = dataset(2);
        let mut m = BpnnModel::new(ModelConfig::tied(LayerConfig::residual(3, 0.5), 3, 3)).unwrap();
        let cfg = TrainConfig { epochs: 6, unroll: Some((5, 30)), ..TrainConfig::default() };
        let r = train(&mut m, &data, &cfg).unwrap();
        assert_eq!(r.unroll_history.len(), 6);
        assert!(r.unroll_history.iter().all(|k| (5..=30).contains(k)));
        let mut untied = model();
        assert!(train(&mut untied, &data, &cfg).is_err());
    }

    #[test]
    fn rmse_examples() {
        let mut data = dataset(3);
        let m = model();
        let preds = predict_all(&m, &data).unwrap();
        for (d, p) in data.iter_mut().zip(&preds) {
            d.ln_z_true = p + 2.0;
        }
        assert!((evaluate_rmse(&m, &data).unwrap() - 2.0).abs() < 1e-12);
        for (d, p) in data.iter_mut().zip(&preds) {
            d.ln_z_true = *p;
        }
        assert_eq!(evaluate_rmse(&m, &data).unwrap(), 0.0);
        assert!(evaluate_rmse(&m, &[]).is_err());
    }
}
