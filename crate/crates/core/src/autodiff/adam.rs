use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use super::ParamStore;

/// Base learning rate times every decay factor whose epoch has been reached.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub milestones: Vec<(usize, f64)>,
}

impl LrSchedule {
    pub fn constant(base_lr: f64) -> Self {
        Self { base_lr, milestones: Vec::new() }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.milestones
            .iter()
            .filter(|(at, _)| epoch >= *at)
            .fold(self.base_lr, |lr, (_, f)| lr * f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    pub schedule: LrSchedule,
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
    step: u64,
}

impl Adam {
    pub fn new(params: &ParamStore, config: AdamConfig, schedule: LrSchedule) -> Self {
        let zeros = |p: &ArrayD<f64>| ArrayD::zeros(p.raw_dim());
        Self {
            config,
            schedule,
            m: params.values().iter().map(zeros).collect(),
            v: params.values().iter().map(zeros).collect(),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &[ArrayD<f64>], epoch: usize) {
        assert_eq!(grads.len(), params.len(), "one gradient per parameter");
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let lr = self.schedule.lr_at(epoch);
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, g), m), v) in params.values_mut().iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
    }
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut [ArrayD<f64>], max_norm: f64) -> f64 {
    let norm = grads.iter().flat_map(|g| g.iter()).map(|x| x * x).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.mapv_inplace(|x| x * s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    fn store(x: Vec<f64>) -> ParamStore {
        let mut p = ParamStore::new();
        p.add("w", arr1(&x).into_dyn());
        p
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = store(vec![1.0, -2.0]);
        let mut adam = Adam::new(&p, AdamConfig::default(), LrSchedule::constant(0.1));
        for _ in 0..10 {
            adam.step(&mut p, &[arr1(&[0.0, 0.0]).into_dyn()], 0);
        }
        assert_eq!(p.flatten(), vec![1.0, -2.0]);
    }

    #[test]
    fn constant_gradient_moves_by_lr() {
        // with bias correction m̂ = g and v̂ = g² exactly, so each step is
        // lr · g / (|g| + ε)
        let mut p = store(vec![0.0]);
        let lr = 0.01;
        let mut adam = Adam::new(&p, AdamConfig::default(), LrSchedule::constant(lr));
        let g = 3.0;
        let mut prev = 0.0;
        for k in 1..=200 {
            adam.step(&mut p, &[arr1(&[g]).into_dyn()], 0);
            let now = p.flatten()[0];
            let expected = lr * g / (g + 1e-8);
            assert!(((prev - now) - expected).abs() < 1e-12, "step {k}");
            prev = now;
        }
    }

    #[test]
    fn schedule_halves_at_milestone() {
        let s = LrSchedule { base_lr: 5e-4, milestones: vec![(50, 0.5)] };
        assert_eq!(s.lr_at(0), 5e-4);
        assert_eq!(s.lr_at(49), 5e-4);
        assert_eq!(s.lr_at(50), 2.5e-4);
        assert_eq!(s.lr_at(99), 2.5e-4);
    }

    #[test]
    fn zero_lr_is_frozen() {
        let mut p = store(vec![0.5]);
        let mut adam = Adam::new(&p, AdamConfig::default(), LrSchedule::constant(0.0));
        adam.step(&mut p, &[arr1(&[1.0]).into_dyn()], 0);
        assert_eq!(p.flatten(), vec![0.5]);
    }

    #[test]
    fn clipping() {
        let mut g = vec![arr1(&[3.0, 4.0]).into_dyn()];
        assert_eq!(clip_global_norm(&mut g, 10.0), 5.0);
        assert_eq!(g[0], arr1(&[3.0, 4.0]).into_dyn());
        clip_global_norm(&mut g, 1.0);
        assert!((g[0][0] - 0.6).abs() < 1e-15);
    }
}
