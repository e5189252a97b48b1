use ndarray::ArrayD;

use super::{Tape, Var};
use crate::error::Result;

/// Largest relative disagreement between the tape gradient and central
/// differences, with relative error `|a - n| / max(1, |a|, |n|)`.
pub fn max_gradient_error<F>(inputs: &[ArrayD<f64>], step: f64, build: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[ArrayD<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = build(&mut tape, &vars)?;
        Ok(tape.scalar(out))
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let mut worst: f64 = 0.0;
    let mut probe = inputs.to_vec();
    for (i, &v) in vars.iter().enumerate() {
        let analytic = grads.wrt(v);
        for (j, &a) in analytic.iter().enumerate() {
            let orig = probe[i].as_slice().expect("standard layout")[j];
            probe[i].as_slice_mut().expect("standard layout")[j] = orig + step;
            let up = eval(&probe)?;
            probe[i].as_slice_mut().expect("standard layout")[j] = orig - step;
            let down = eval(&probe)?;
            probe[i].as_slice_mut().expect("standard layout")[j] = orig;
            let numeric = (up - down) / (2.0 * step);
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
