use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::conv::Conv2d;
use crate::params::{Binding, ParamStore};
use crate::scalar::Scalar;

/// Squeeze-and-excitation gating: global average pool, 1×1 conv down to
/// `max(1, C / squeeze)` channels, ReLU, 1×1 conv back up, sigmoid, and a
/// per-channel rescale of the input.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelAttention {
    pub channels: usize,
    pub squeeze: usize,
    pub down: Conv2d,
    pub up: Conv2d,
}

impl ChannelAttention {
    pub fn new(name: &str, channels: usize, squeeze: usize) -> Self {
        let mid = (channels / squeeze.max(1)).max(1);
        ChannelAttention {
            channels,
            squeeze,
            down: Conv2d::new(format!("{name}.down"), channels, mid, 1, 1, 0),
            up: Conv2d::new(format!("{name}.up"), mid, channels, 1, 1, 0),
        }
    }

    pub fn mid_channels(&self) -> usize {
        self.down.out_ch
    }

    pub fn register<T: Scalar>(&self, store: &mut ParamStore<T>, seed: u64) {
        self.down.register(store, seed);
        self.up.register(store, seed);
    }

    /// Per-channel gates `(N, C, 1, 1)`, each in `(0, 1)`.
    pub fn gates<'t, T: Scalar>(&self, b: &Binding<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != self.channels {
            return Err(Error::shape("channel_attention", format!("{shape:?} for {} channels", self.channels)));
        }
        let pooled = x.mean_axes(&[2, 3], true)?;
        let hidden = self.down.forward(b, pooled)?.relu()?;
        self.up.forward(b, hidden)?.sigmoid()
    }

    pub fn forward<'t, T: Scalar>(&self, b: &Binding<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let g = self.gates(b, x)?;
        x.mul(g)
    }
}

/// Channel attention block: conv3×3 → GELU → conv3×3 → [`ChannelAttention`].
#[derive(Debug, Clone, PartialEq)]
pub struct Cab {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub attention: ChannelAttention,
}

impl Cab {
    pub fn new(name: &str, channels: usize, squeeze: usize) -> Self {
        Cab {
            conv1: Conv2d::same(format!("{name}.conv1"), channels, channels, 3),
            conv2: Conv2d::same(format!("{name}.conv2"), channels, channels, 3),
            attention: ChannelAttention::new(&format!("{name}.ca"), channels, squeeze),
        }
    }

    pub fn register<T: Scalar>(&self, store: &mut ParamStore<T>, seed: u64) {
        self.conv1.register(store, seed);
        self.conv2.register(store, seed);
        self.attention.register(store, seed);
    }

    pub fn forward<'t, T: Scalar>(&self, b: &Binding<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let h = self.conv1.forward(b, x)?.gelu()?;
        let h = self.conv2.forward(b, h)?;
        self.attention.forward(b, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;
    use crate::tensor::Tensor;
    use rand::SeedableRng;

    fn setup(c: usize, squeeze: usize) -> (ChannelAttention, ParamStore<f64>) {
        let ca = ChannelAttention::new("ca", c, squeeze);
        let mut store = ParamStore::new();
        ca.register(&mut store, 4);
        (ca, store)
    }

    #[test]
    fn gates_in_open_unit_interval() {
        let (ca, store) = setup(6, 3);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let tape = Tape::new();
        let b = Binding::new(&tape, &store);
        let g = ca.gates(&b, tape.constant(Tensor::randn([2, 6, 4, 4], &mut rng))).unwrap();
        assert!(g.value().data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn constant_input_stays_constant() {
        let (ca, store) = setup(6, 3);
        let tape = Tape::new();
        let b = Binding::new(&tape, &store);
        let x = Tensor::from_fn([1, 6, 3, 3], |i| (i / 9) as f64 * 0.3);
        let y = ca.forward(&b, tape.constant(x)).unwrap().value();
        for plane in y.data().chunks(9) {
            assert!(plane.iter().all(|&v| v == plane[0]));
        }
    }

    #[test]
    fn zeroed_up_conv_halves_input() {
        let (ca, mut store) = setup(6, 3);
        *store.value_mut("ca.up.weight").unwrap() = Tensor::zeros([6, 2, 1, 1]);
        *store.value_mut("ca.up.bias").unwrap() = Tensor::zeros([6]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::randn([1, 6, 2, 2], &mut rng);
        let tape = Tape::new();
        let b = Binding::new(&tape, &store);
        let y = ca.forward(&b, tape.constant(x.clone())).unwrap().value();
        assert_eq!(*y, x.scale(0.5));
    }

    #[test]
    fn mid_channels_floor_at_one() {
        assert_eq!(ChannelAttention::new("a", 180, 3).mid_channels(), 60);
        assert_eq!(ChannelAttention::new("a", 8, 3).mid_channels(), 2);
        assert_eq!(ChannelAttention::new("a", 2, 3).mid_channels(), 1);
    }
}
