use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::params::{Binding, Init, ParamStore};
use crate::scalar::Scalar;

pub const NORM_EPS: f64 = 1e-5;

/// `(x - mean) / sqrt(var + eps)` over `axes` (biased variance).
fn standardize<'t, T: Scalar>(x: Var<'t, T>, axes: &[usize]) -> Result<Var<'t, T>> {
    let mean = x.mean_axes(axes, true)?;
    let centered = x.sub(mean)?;
    let var = centered.square()?.mean_axes(axes, true)?;
    let denom = var.add_scalar(T::c(NORM_EPS))?.sqrt()?;
    centered.div(denom)
}

/// Per-token normalization over the last axis followed by `γ·x + β`.
pub fn layer_norm<'t, T: Scalar>(x: Var<'t, T>, gamma: Var<'t, T>, beta: Var<'t, T>) -> Result<Var<'t, T>> {
    let shape = x.shape();
    let c = *shape.last().ok_or_else(|| Error::shape("layer_norm", "rank 0"))?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape("layer_norm", format!("input {shape:?}, affine {:?}", gamma.shape())));
    }
    let last = shape.len() - 1;
    standardize(x, &[last])?.mul(gamma)?.add(beta)
}

/// Instance-normalizes channels `[0, C/2)` of an NCHW tensor with a learned
/// per-channel affine; channels `[C/2, C)` pass through untouched.
pub fn instance_norm_half<'t, T: Scalar>(x: Var<'t, T>, gamma: Var<'t, T>, beta: Var<'t, T>) -> Result<Var<'t, T>> {
    let shape = x.shape();
    if shape.len() != 4 {
        return Err(Error::shape("instance_norm_half", format!("expected NCHW, got {shape:?}")));
    }
    let c = shape[1];
    if !c.is_multiple_of(2) {
        return Err(Error::OddChannels(c));
    }
    let half = c / 2;
    if gamma.shape() != [half] || beta.shape() != [half] {
        return Err(Error::shape("instance_norm_half", format!("affine {:?} for {half} channels", gamma.shape())));
    }
    let normed = standardize(x.narrow(1, 0, half)?, &[2, 3])?;
    let normed = normed.mul(gamma.reshape([half, 1, 1])?)?.add(beta.reshape([half, 1, 1])?)?;
    let identity = x.narrow(1, half, half)?;
    x.tape().concat(&[normed, identity], 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub name: String,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        LayerNorm { name: name.into(), dim }
    }

    pub fn register<T: Scalar>(&self, store: &mut ParamStore<T>, seed: u64) {
        store.init(&format!("{}.weight", self.name), &[self.dim], Init::Ones, seed);
        store.init(&format!("{}.bias", self.name), &[self.dim], Init::Zeros, seed);
    }

    pub fn forward<'t, T: Scalar>(&self, b: &Binding<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        layer_norm(x, b.param(&format!("{}.weight", self.name))?, b.param(&format!("{}.bias", self.name))?)
    }
}

/// Affine parameters for [`instance_norm_half`] over `channels / 2` maps.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfInstanceNorm {
    pub name: String,
    pub channels: usize,
}

impl HalfInstanceNorm {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        HalfInstanceNorm { name: name.into(), channels }
    }

    pub fn register<T: Scalar>(&self, store: &mut ParamStore<T>, seed: u64) {
        let half = self.channels / 2;
        store.init(&format!("{}.weight", self.name), &[half], Init::Ones, seed);
        store.init(&format!("{}.bias", self.name), &[half], Init::Zeros, seed);
    }

    pub fn forward<'t, T: Scalar>(&self, b: &Binding<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        instance_norm_half(x, b.param(&format!("{}.weight", self.name))?, b.param(&format!("{}.bias", self.name))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;
    use crate::tensor::Tensor;
    use rand::SeedableRng;

    #[test]
    fn constant_token_collapses_to_beta() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64([1, 3], &[5., 5., 5.]).unwrap());
        let y = layer_norm(x, tape.constant(Tensor::ones([3])), tape.constant(Tensor::zeros([3]))).unwrap();
        assert_eq!(y.value().data(), &[0., 0., 0.]);
    }

    #[test]
    fn two_value_token_closed_form() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64([1, 2], &[1., 3.]).unwrap());
        let y = layer_norm(x, tape.constant(Tensor::ones([2])), tape.constant(Tensor::zeros([2]))).unwrap();
        let want = 1.0 / (1.0f64 + NORM_EPS).sqrt();
        assert!((y.value().data()[0] + want).abs() < 1e-15);
        assert!((y.value().data()[1] - want).abs() < 1e-15);
    }

    #[test]
    fn layer_norm_moments() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::randn([5, 16], &mut rng).scale(3.0));
        let y = layer_norm(x, tape.constant(Tensor::ones([16])), tape.constant(Tensor::zeros([16]))).unwrap();
        for row in y.value().data().chunks(16) {
            let m: f64 = row.iter().sum::<f64>() / 16.0;
            let v: f64 = row.iter().map(|r| (r - m) * (r - m)).sum::<f64>() / 16.0;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn half_norm_two_channels() {
        let tape = Tape::<f64>::new();
        // channel 0 constant, channel 1 arbitrary
        let x = Tensor::from_f64([1, 2, 2, 2], &[3., 3., 3., 3., 0.1, -2., 7., 0.5]).unwrap();
        let beta = Tensor::from_f64([1], &[0.25]).unwrap();
        let y = instance_norm_half(tape.constant(x.clone()), tape.constant(Tensor::ones([1])), tape.constant(beta))
            .unwrap();
        assert_eq!(&y.value().data()[..4], &[0.25; 4]);
        assert_eq!(&y.value().data()[4..], &x.data()[4..]);
    }

    #[test]
    fn half_norm_rejects_odd_channels() {
        let tape = Tape::<f32>::new();
        let r = instance_norm_half(
            tape.constant(Tensor::zeros([1, 3, 2, 2])),
            tape.constant(Tensor::ones([1])),
            tape.constant(Tensor::zeros([1])),
        );
        assert!(matches!(r, Err(Error::OddChannels(3))));
    }

    #[test]
    fn half_norm_mean_zero_and_identity_bits() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let tape = Tape::<f32>::new();
        let x = Tensor::<f32>::randn([2, 6, 5, 7], &mut rng);
        let y = instance_norm_half(
            tape.constant(x.clone()),
            tape.constant(Tensor::ones([3])),
            tape.constant(Tensor::zeros([3])),
        )
        .unwrap()
        .value();
        for n in 0..2 {
            for c in 0..6 {
                let off = (n * 6 + c) * 35;
                let ys = &y.data()[off..off + 35];
                if c < 3 {
                    let m: f32 = ys.iter().sum::<f32>() / 35.0;
                    assert!(m.abs() < 1e-4);
                } else {
                    let xs = &x.data()[off..off + 35];
                    assert!(ys.iter().zip(xs).all(|(a, b)| a.to_bits() == b.to_bits()));
                }
            }
        }
    }
}
