#![allow(dead_code)]

use cit_core::autograd::{Tape, Var};
use cit_core::Tensor;

/// Max relative error between the tape gradient of `f` at `inputs` and a
/// central difference with step `h`, over every input element.
pub fn fd_max_rel_err<F>(inputs: &[Tensor<f64>], f: F, h: f64) -> f64
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Var<'t, f64>,
{
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.var(t.clone())).collect();
    let grads = f(&tape, &vars).backward().unwrap();
    let eval = |xs: &[Tensor<f64>]| {
        let tape = Tape::no_grad();
        let vars: Vec<_> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        f(&tape, &vars).value().item().unwrap()
    };
    let mut worst: f64 = 0.0;
    for (k, t) in inputs.iter().enumerate() {
        let analytic = grads.wrt(vars[k]).cloned().unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()));
        for i in 0..t.numel() {
            let mut xs = inputs.to_vec();
            xs[k].data_mut()[i] = t.data()[i] + h;
            let up = eval(&xs);
            xs[k].data_mut()[i] = t.data()[i] - h;
            let down = eval(&xs);
            let num = (up - down) / (2.0 * h);
            let a = analytic.data()[i];
            worst = worst.max((a - num).abs() / a.abs().max(num.abs()).max(1e-4));
        }
    }
    worst
}

/// Deterministic pseudo-random tensor in `[lo, hi)`.
pub fn tensor(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut s = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) | 1;
    Tensor::from_fn(shape.to_vec(), |_| {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        lo + (hi - lo) * ((s >> 11) as f64 / (1u64 << 53) as f64)
    })
}

/// Elements kept away from zero so kinked ops are differentiable there.
pub fn away_from_zero(t: &Tensor<f64>, margin: f64) -> Tensor<f64> {
    t.map(|v| if v.abs() < margin { v.signum() * margin + v } else { v })
}
