use ndarray::{Array1, Array2, ArrayD};
use rand::Rng;

use crate::autodiff::{BoundParams, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::generators::SeedRng;

/// Fully connected network with relu between layers and a linear output.
/// Weights are stored `[in, out]` and applied row-wise to `[n, in]` inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub dims: Vec<usize>,
    layers: Vec<(ParamId, ParamId)>,
}

impl Mlp {
    /// Registers zero-valued parameters for layer widths `dims`.
    pub fn register(store: &mut ParamStore, name: &str, dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidArgument(format!("bad MLP dims {dims:?} for {name}")));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let weight = store.add(format!("{name}.w{l}"), Array2::<f64>::zeros((w[0], w[1])).into_dyn());
                let bias = store.add(format!("{name}.b{l}"), Array1::<f64>::zeros(w[1]).into_dyn());
                (weight, bias)
            })
            .collect();
        Ok(Self { dims: dims.to_vec(), layers })
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("at least two dims")
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }

    /// Applies the network to every row of `x: [n, in]`.
    pub fn forward(&self, tape: &mut Tape, params: &BoundParams, x: Var) -> Result<Var> {
        let mut h = x;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            if l > 0 {
                h = tape.relu(h);
            }
            let z = tape.matmul(h, params.var(w))?;
            h = tape.add(z, params.var(b))?;
        }
        Ok(h)
    }

    /// Sets the network to `x ↦ scale ⊙ x` restricted to output rows, via
    /// `relu(x) - relu(-x) = x`. Needs exactly one hidden layer of width
    /// `2 · in`. `out_map[j]` lists `(input, weight)` pairs summed into
    /// output `j`.
    pub fn set_relu_linear(&self, store: &mut ParamStore, out_map: &[Vec<(usize, f64)>]) -> Result<()> {
        let d = self.input_dim();
        if self.dims.len() != 3 || self.dims[1] != 2 * d || out_map.len() != self.output_dim() {
            return Err(Error::InvalidArgument(format!(
                "MLP dims {:?} cannot embed a relu-identity map",
                self.dims
            )));
        }
        let (w0, b0) = self.layers[0];
        let (w1, b1) = self.layers[1];
        let mut first = Array2::<f64>::zeros((d, 2 * d));
        for i in 0..d {
            first[[i, i]] = 1.0;
            first[[i, d + i]] = -1.0;
        }
        let mut second = Array2::<f64>::zeros((2 * d, self.output_dim()));
        for (j, terms) in out_map.iter().enumerate() {
            for &(i, c) in terms {
                second[[i, j]] += c;
                second[[d + i, j]] -= c;
            }
        }
        *store.get_mut(w0) = first.into_dyn();
        *store.get_mut(w1) = second.into_dyn();
        store.get_mut(b0).fill(0.0);
        store.get_mut(b1).fill(0.0);
        Ok(())
    }

    /// `x ↦ scale · x` on a square network.
    pub fn set_scaled_identity(&self, store: &mut ParamStore, scale: f64) -> Result<()> {
        let map: Vec<Vec<(usize, f64)>> = (0..self.output_dim()).map(|j| vec![(j, scale)]).collect();
        self.set_relu_linear(store, &map)
    }

    /// Glorot-uniform weights and zero biases.
    pub fn init_glorot(&self, store: &mut ParamStore, rng: &mut SeedRng) {
        for &(w, b) in &self.layers {
            let t = store.get_mut(w);
            let (fan_in, fan_out) = (t.shape()[0], t.shape()[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            t.mapv_inplace(|_| limit * (2.0 * rng.gen::<f64>() - 1.0));
            store.get_mut(b).fill(0.0);
        }
    }
}

/// Adds independent `U[-sigma, sigma)` noise to every entry.
pub(crate) fn perturb(t: &mut ArrayD<f64>, sigma: f64, rng: &mut SeedRng) {
    t.mapv_inplace(|x| x + sigma * (2.0 * rng.gen::<f64>() - 1.0));
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn relu_identity_is_exact() {
        let mut store = ParamStore::new();
        let mlp = Mlp::register(&mut store, "m", &[3, 6, 3]).unwrap();
        mlp.set_scaled_identity(&mut store, 1.0).unwrap();
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let x = arr2(&[[1.5, -2.25, 0.0], [-1e-300, 7.0, -3.0]]).into_dyn();
        let xv = tape.constant(x.clone());
        let y = mlp.forward(&mut tape, &p, xv).unwrap();
        assert_eq!(tape.value(y), &x);
    }

    #[test]
    fn identity_needs_double_width() {
        let mut store = ParamStore::new();
        let mlp = Mlp::register(&mut store, "m", &[3, 4, 3]).unwrap();
        assert!(mlp.set_scaled_identity(&mut store, 1.0).is_err());
        assert!(Mlp::register(&mut store, "bad", &[3]).is_err());
    }
}
