//! Window partitioning and windowed multi-head self-attention.
//!
//! Windows are `W×W` non-overlapping tiles of an NHWC feature map. With a
//! non-zero shift the map is first rolled by `(-s, -s)` so tokens near tile
//! borders share a window with their neighbours; the additive mask then
//! keeps tokens that were not spatially adjacent before the roll from
//! attending to each other.

use std::rc::Rc;

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::linear::Linear;
use crate::params::{Binding, Init, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Additive logit applied to masked token pairs.
pub const MASK_LOGIT: f64 = -100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowGrid {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub window: usize,
    pub shift: usize,
}

impl WindowGrid {
    pub fn new(
        batch: usize,
        height: usize,
        width: usize,
        channels: usize,
        window: usize,
        shift: usize,
    ) -> Result<Self> {
        if window == 0 || !height.is_multiple_of(window) || !width.is_multiple_of(window) {
            return Err(Error::shape("window_grid", format!("{height}x{width} not divisible by window {window}")));
        }
        if shift >= window {
            return Err(Error::shape("window_grid", format!("shift {shift} >= window {window}")));
        }
        Ok(WindowGrid { batch, height, width, channels, window, shift })
    }

    pub fn windows_per_image(&self) -> usize {
        (self.height / self.window) * (self.width / self.window)
    }

    pub fn tokens_per_window(&self) -> usize {
        self.window * self.window
    }

    fn nhwc_shape(&self) -> Vec<usize> {
        vec![self.batch, self.height, self.width, self.channels]
    }

    fn windows_shape(&self) -> Vec<usize> {
        vec![self.batch * self.windows_per_image(), self.tokens_per_window(), self.channels]
    }

    /// For each element of the partitioned tensor, its flat source offset in
    /// the NHWC input (roll included).
    pub fn partition_indices(&self) -> Vec<usize> {
        let (h, w, c, ws, s) = (self.height, self.width, self.channels, self.window, self.shift);
        let (nwy, nwx) = (h / ws, w / ws);
        let mut idx = Vec::with_capacity(self.batch * h * w * c);
        for n in 0..self.batch {
            for wy in 0..nwy {
                for wx in 0..nwx {
                    for iy in 0..ws {
                        for ix in 0..ws {
                            let y = (wy * ws + iy + s) % h;
                            let x = (wx * ws + ix + s) % w;
                            let base = ((n * h + y) * w + x) * c;
                            idx.extend(base..base + c);
                        }
                    }
                }
            }
        }
        idx
    }

    pub fn reverse_indices(&self) -> Vec<usize> {
        let fwd = self.partition_indices();
        let mut inv = vec![0; fwd.len()];
        for (i, &src) in fwd.iter().enumerate() {
            inv[src] = i;
        }
        inv
    }

    fn check_nhwc(&self, shape: &[usize]) -> Result<()> {
        if shape != self.nhwc_shape().as_slice() {
            return Err(Error::shape("window_partition", format!("{shape:?} vs grid {:?}", self.nhwc_shape())));
        }
        Ok(())
    }

    fn check_windows(&self, shape: &[usize]) -> Result<()> {
        if shape != self.windows_shape().as_slice() {
            return Err(Error::shape("window_reverse", format!("{shape:?} vs grid {:?}", self.windows_shape())));
        }
        Ok(())
    }

    /// `(N, H, W, C)` → `(N·nW, W², C)`.
    pub fn partition<'t, T: Scalar>(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        self.check_nhwc(&x.shape())?;
        x.gather(self.windows_shape(), self.partition_indices().into())
    }

    /// Inverse of [`WindowGrid::partition`], including the un-roll.
    pub fn reverse<'t, T: Scalar>(&self, windows: Var<'t, T>) -> Result<Var<'t, T>> {
        self.check_windows(&windows.shape())?;
        windows.gather(self.nhwc_shape(), self.reverse_indices().into())
    }

    pub fn partition_tensor<T: Scalar>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_nhwc(x.shape())?;
        x.gather(self.windows_shape(), &self.partition_indices())
    }

    pub fn reverse_tensor<T: Scalar>(&self, windows: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_windows(windows.shape())?;
        windows.gather(self.nhwc_shape(), &self.reverse_indices())
    }

    /// Connectivity mask `(nW, W², W²)` for a shifted grid: 0 within a
    /// region, [`MASK_LOGIT`] across regions. All zeros when unshifted.
    pub fn attention_mask<T: Scalar>(&self) -> Tensor<T> {
        let (h, w, ws, s) = (self.height, self.width, self.window, self.shift);
        let l = ws * ws;
        let nw = self.windows_per_image();
        if s == 0 {
            return Tensor::zeros([nw, l, l]);
        }
        let band = |p: usize, extent: usize| {
            if p < extent - ws {
                0
            } else if p < extent - s {
                1
            } else {
                2
            }
        };
        let mut labels = Vec::with_capacity(nw * l);
        for wy in 0..h / ws {
            for wx in 0..w / ws {
                for iy in 0..ws {
                    for ix in 0..ws {
                        labels.push(band(wy * ws + iy, h) * 3 + band(wx * ws + ix, w));
                    }
                }
            }
        }
        let mut mask = Vec::with_capacity(nw * l * l);
        for win in labels.chunks(l) {
            for &a in win {
                for &b in win {
                    mask.push(if a == b { T::zero() } else { T::c(MASK_LOGIT) });
                }
            }
        }
        Tensor::new([nw, l, l], mask).expect("mask shape")
    }
}

/// Flat index into the `(2W-1)²` bias table for every `(query, key)` token
/// pair of a window, row-major over `W² × W²`.
pub fn relative_position_index(window: usize) -> Vec<usize> {
    let l = window * window;
    let span = 2 * window - 1;
    let mut idx = Vec::with_capacity(l * l);
    for i in 0..l {
        let (yi, xi) = (i / window, i % window);
        for j in 0..l {
            let (yj, xj) = (j / window, j % window);
            let dy = yi + window - 1 - yj;
            let dx = xi + window - 1 - xj;
            idx.push(dy * span + dx);
        }
    }
    idx
}

/// Multi-head self-attention inside each window with optional learned
/// relative position bias.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowAttention {
    pub name: String,
    pub dim: usize,
    pub heads: usize,
    pub window: usize,
    pub use_rel_bias: bool,
    qkv: Linear,
    proj: Linear,
}

impl WindowAttention {
    pub fn new(name: impl Into<String>, dim: usize, heads: usize, window: usize, use_rel_bias: bool) -> Result<Self> {
        let name = name.into();
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::shape("window_attention", format!("dim {dim} not divisible by {heads} heads")));
        }
        Ok(WindowAttention {
            qkv: Linear::new(format!("{name}.qkv"), dim, 3 * dim),
            proj: Linear::new(format!("{name}.proj"), dim, dim),
            name,
            dim,
            heads,
            window,
            use_rel_bias,
        })
    }

    fn table_name(&self) -> String {
        format!("{}.relative_position_bias_table", self.name)
    }

    pub fn register<T: Scalar>(&self, store: &mut ParamStore<T>, seed: u64) {
        self.qkv.register(store, seed);
        self.proj.register(store, seed);
        if self.use_rel_bias {
            let span = 2 * self.window - 1;
            store.init(&self.table_name(), &[span * span, self.heads], Init::Zeros, seed);
        }
    }

    pub fn forward<'t, T: Scalar>(
        &self,
        b: &Binding<'t, '_, T>,
        tokens: Var<'t, T>,
        mask: Option<&Tensor<T>>,
    ) -> Result<Var<'t, T>> {
        Ok(self.forward_with_probs(b, tokens, mask)?.0)
    }

    /// Returns the projected output and the post-softmax attention weights
    /// `(B', heads, W², W²)`.
    pub fn forward_with_probs<'t, T: Scalar>(
        &self,
        b: &Binding<'t, '_, T>,
        tokens: Var<'t, T>,
        mask: Option<&Tensor<T>>,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let shape = tokens.shape();
        let l = self.window * self.window;
        if shape.len() != 3 || shape[1] != l || shape[2] != self.dim {
            return Err(Error::shape("w_msa", format!("tokens {shape:?}, expected (B', {l}, {})", self.dim)));
        }
        let bw = shape[0];
        let (h, hd) = (self.heads, self.dim / self.heads);
        let qkv = self.qkv.forward(b, tokens)?.reshape([bw, l, 3, h, hd])?.permute(&[2, 0, 3, 1, 4])?;
        let pick = |i: usize| qkv.narrow(0, i, 1)?.reshape([bw, h, l, hd]);
        let q = pick(0)?.scale(T::one() / T::c(hd as f64).sqrt())?;
        let k = pick(1)?;
        let v = pick(2)?;
        let mut attn = q.matmul(k.transpose()?)?;
        if self.use_rel_bias {
            let table = b.param(&self.table_name())?;
            let rel = relative_position_index(self.window);
            let mut idx = Vec::with_capacity(h * l * l);
            for head in 0..h {
                idx.extend(rel.iter().map(|&r| r * h + head));
            }
            let bias = table.gather(vec![h, l, l], Rc::from(idx))?;
            attn = attn.add(bias)?;
        }
        if let Some(mask) = mask {
            let nw = mask.shape()[0];
            if mask.shape() != [nw, l, l] || !bw.is_multiple_of(nw) {
                return Err(Error::shape("w_msa", format!("mask {:?} for {bw} windows", mask.shape())));
            }
            let m = b.tape().constant(mask.reshape([nw, 1, l, l])?);
            attn = attn.reshape([bw / nw, nw, h, l, l])?.add(m)?.reshape([bw, h, l, l])?;
        }
        let probs = attn.softmax()?;
        let out = probs.matmul(v)?.permute(&[0, 2, 1, 3])?.reshape([bw, l, self.dim])?;
        Ok((self.proj.forward(b, out)?, probs))
    }
}
