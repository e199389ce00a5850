//! The exposure-correction network.
//!
//! ```text
//! img ─ reflect-pad ─ conv4×4/s4 ─ SCAM ─ F0 ─┬─ RCITG × N ─ conv3×3 ─(+)─ H_REC ─ crop ─ out
//!                                              └──────────────────────────┘
//! ```
//!
//! Each RCITG runs M blocks on `(N, h·w, C)` tokens, then a 3×3 conv and a
//! group residual. A block (CITB) is
//!
//! ```text
//! X_K = MSA(LN(X)) + α·CAB(LN(X)) + X
//! Y   = MLP(LN(X_K)) + X_K + β·HINB(LN(X))
//! ```
//!
//! where the MSA is windowed (shifted on odd blocks) and CAB/HINB see the
//! whole spatial grid.

use std::fmt::Write as _;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::config::CitConfig;
use crate::nn::pad::{crop, reflect_pad};
use crate::nn::{pixel_shuffle, Cab, Conv2d, HalfInstanceNorm, LayerNorm, Linear, WindowAttention, WindowGrid};
use crate::params::{Binding, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const LEAKY_SLOPE: f64 = 0.2;
const REC_LEAKY_SLOPE: f64 = 0.01;

/// Per-pixel sigmoid gating from two 1×1 convs.
#[derive(Debug, Clone)]
struct Scam {
    conv1: Conv2d,
    conv2: Conv2d,
}

impl Scam {
    fn new(c: usize) -> Self {
        Scam { conv1: Conv2d::new("scam.conv1", c, c, 1, 1, 0), conv2: Conv2d::new("scam.conv2", c, c, 1, 1, 0) }
    }

    fn register<T: Scalar>(&self, s: &mut ParamStore<T>, seed: u64) {
        self.conv1.register(s, seed);
        self.conv2.register(s, seed);
    }

    fn gate<'t, T: Scalar>(&self, b: &Binding<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let h = self.conv1.forward(b, x)?.relu()?;
        self.conv2.forward(b, h)?.sigmoid()
    }
}

/// conv3×3 → half-IN → leaky → conv3×3 → leaky, plus a 1×1 shortcut.
#[derive(Debug, Clone)]
struct Hinb {
    conv1: Conv2d,
    norm: HalfInstanceNorm,
    conv2: Conv2d,
    shortcut: Conv2d,
}

impl Hinb {
    fn new(name: &str, c: usize) -> Self {
        Hinb {
            conv1: Conv2d::same(format!("{name}.conv1"), c, c, 3),
            norm: HalfInstanceNorm::new(format!("{name}.norm"), c),
            conv2: Conv2d::same(format!("{name}.conv2"), c, c, 3),
            shortcut: Conv2d::new(format!("{name}.shortcut"), c, c, 1, 1, 0),
        }
    }

    fn register<T: Scalar>(&self, s: &mut ParamStore<T>, seed: u64) {
        self.conv1.register(s, seed);
        self.norm.register(s, seed);
        self.conv2.register(s, seed);
        self.shortcut.register(s, seed);
    }

    fn forward<'t, T: Scalar>(&self, b: &Binding<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let slope = T::c(LEAKY_SLOPE);
        let h = self.conv1.forward(b, x)?;
        let h = self.norm.forward(b, h)?.leaky_relu(slope)?;
        let h = self.conv2.forward(b, h)?.leaky_relu(slope)?;
        h.add(self.shortcut.forward(b, x)?)
    }
}

#[derive(Debug, Clone)]
struct Citb {
    norm1: LayerNorm,
    attn: WindowAttention,
    norm2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
    cab: Option<Cab>,
    hinb: Option<Hinb>,
    shift: usize,
}

/// Spatial extent of the token grid a block runs on.
#[derive(Debug, Clone, Copy)]
struct Grid {
    batch: usize,
    height: usize,
    width: usize,
}

fn tokens_to_nchw<'t, T: Scalar>(x: Var<'t, T>, g: Grid, c: usize) -> Result<Var<'t, T>> {
    x.reshape([g.batch, g.height, g.width, c])?.permute(&[0, 3, 1, 2])
}

fn nchw_to_tokens<'t, T: Scalar>(x: Var<'t, T>) -> Result<Var<'t, T>> {
    let s = x.shape();
    x.permute(&[0, 2, 3, 1])?.reshape([s[0], s[2] * s[3], s[1]])
}

impl Citb {
    fn new(name: &str, cfg: &CitConfig, shift: usize) -> Result<Self> {
        let c = cfg.channels;
        Ok(Citb {
            norm1: LayerNorm::new(format!("{name}.norm1"), c),
            attn: WindowAttention::new(format!("{name}.attn"), c, cfg.heads, cfg.window, cfg.use_rel_bias)?,
            norm2: LayerNorm::new(format!("{name}.norm2"), c),
            fc1: Linear::new(format!("{name}.mlp.fc1"), c, cfg.mlp_hidden()),
            fc2: Linear::new(format!("{name}.mlp.fc2"), cfg.mlp_hidden(), c),
            cab: cfg.use_cab.then(|| Cab::new(&format!("{name}.cab"), c, cfg.squeeze)),
            hinb: cfg.use_hinb.then(|| Hinb::new(&format!("{name}.hinb"), c)),
            shift,
        })
    }

    fn register<T: Scalar>(&self, s: &mut ParamStore<T>, seed: u64) {
        self.norm1.register(s, seed);
        self.attn.register(s, seed);
        self.norm2.register(s, seed);
        self.fc1.register(s, seed);
        self.fc2.register(s, seed);
        if let Some(cab) = &self.cab {
            cab.register(s, seed);
        }
        if let Some(h) = &self.hinb {
            h.register(s, seed);
        }
    }

    fn forward<'t, T: Scalar>(
        &self,
        b: &Binding<'t, '_, T>,
        x: Var<'t, T>,
        g: Grid,
        cfg: &CitConfig,
    ) -> Result<Var<'t, T>> {
        let c = cfg.channels;
        let grid = WindowGrid::new(g.batch, g.height, g.width, c, cfg.window, self.shift)?;
        let xn = self.norm1.forward(b, x)?;

        let windows = grid.partition(xn.reshape([g.batch, g.height, g.width, c])?)?;
        let mask = (self.shift > 0).then(|| grid.attention_mask::<T>());
        let attn = self.attn.forward(b, windows, mask.as_ref())?;
        let attn = grid.reverse(attn)?.reshape([g.batch, g.height * g.width, c])?;

        let spatial = if self.cab.is_some() || self.hinb.is_some() { Some(tokens_to_nchw(xn, g, c)?) } else { None };

        let mut xk = attn;
        if let (Some(cab), Some(sp)) = (&self.cab, spatial) {
            let injected = nchw_to_tokens(cab.forward(b, sp)?)?.scale(T::c(cfg.alpha))?;
            xk = xk.add(injected)?;
        }
        let xk = xk.add(x)?;

        let mlp = self.fc1.forward(b, self.norm2.forward(b, xk)?)?.gelu()?;
        let mut y = self.fc2.forward(b, mlp)?.add(xk)?;
        if let (Some(h), Some(sp)) = (&self.hinb, spatial) {
            let injected = nchw_to_tokens(h.forward(b, sp)?)?.scale(T::c(cfg.beta))?;
            y = y.add(injected)?;
        }
        Ok(y)
    }
}

#[derive(Debug, Clone)]
struct Rcitg {
    blocks: Vec<Citb>,
    conv: Conv2d,
}

#[derive(Debug, Clone)]
struct Reconstruction {
    conv_before: Conv2d,
    conv_up: Conv2d,
    conv_last: Conv2d,
}

#[derive(Debug, Clone)]
struct Arch {
    stem: Conv2d,
    scam: Option<Scam>,
    groups: Vec<Rcitg>,
    conv_after_body: Conv2d,
    rec: Reconstruction,
}

impl Arch {
    fn new(cfg: &CitConfig) -> Result<Self> {
        let c = cfg.channels;
        let r = cfg.upscale;
        let groups = (0..cfg.rcitg_count)
            .map(|i| {
                let blocks = (0..cfg.citb_count)
                    .map(|j| Citb::new(&format!("rcitg{i}.citb{j}"), cfg, cfg.shift_for_block(j)))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Rcitg { blocks, conv: Conv2d::same(format!("rcitg{i}.conv"), c, c, 3) })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Arch {
            stem: Conv2d::new("stem", 3, c, r, r, 0),
            scam: cfg.use_scam.then(|| Scam::new(c)),
            groups,
            conv_after_body: Conv2d::same("conv_after_body", c, c, 3),
            rec: Reconstruction {
                conv_before: Conv2d::same("rec.conv_before", c, c, 3),
                conv_up: Conv2d::same("rec.conv_up", c, 3 * r * r, 3),
                conv_last: Conv2d::same("rec.conv_last", 3, 3, 3),
            },
        })
    }

    fn register<T: Scalar>(&self, s: &mut ParamStore<T>, seed: u64) {
        self.stem.register(s, seed);
        if let Some(scam) = &self.scam {
            scam.register(s, seed);
        }
        for g in &self.groups {
            for blk in &g.blocks {
                blk.register(s, seed);
            }
            g.conv.register(s, seed);
        }
        self.conv_after_body.register(s, seed);
        self.rec.conv_before.register(s, seed);
        self.rec.conv_up.register(s, seed);
        self.rec.conv_last.register(s, seed);
    }
}

/// Intermediate tensors of one forward pass, for inspection in tests.
pub struct ForwardTrace<'t, T: Scalar> {
    pub stem: Var<'t, T>,
    pub f0: Var<'t, T>,
    pub groups: Vec<Var<'t, T>>,
    pub body: Var<'t, T>,
    pub output: Var<'t, T>,
}

#[derive(Debug, Clone)]
pub struct CitModel<T> {
    config: CitConfig,
    arch: Arch,
    pub params: ParamStore<T>,
}

impl<T: Scalar> CitModel<T> {
    /// Builds and initializes from `config.seed`.
    pub fn new(config: CitConfig) -> Result<Self> {
        config.validate()?;
        let arch = Arch::new(&config)?;
        let mut params = ParamStore::new();
        arch.register(&mut params, config.seed);
        Ok(CitModel { config, arch, params })
    }

    /// Builds the graph for `config` around existing parameters.
    pub fn with_params(config: CitConfig, params: ParamStore<T>) -> Result<Self> {
        let fresh = Self::new(config)?;
        for (name, p) in fresh.params.iter() {
            let got = params.get(name).ok_or_else(|| Error::Config(format!("missing parameter {name}")))?;
            if got.value.shape() != p.value.shape() {
                return Err(Error::shape(
                    "with_params",
                    format!("{name}: {:?} vs {:?}", got.value.shape(), p.value.shape()),
                ));
            }
        }
        if params.len() != fresh.params.len() {
            return Err(Error::Config(format!("expected {} parameters, got {}", fresh.params.len(), params.len())));
        }
        Ok(CitModel { config: fresh.config, arch: fresh.arch, params })
    }

    pub fn config(&self) -> &CitConfig {
        &self.config
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    pub fn cast<U: Scalar>(&self) -> CitModel<U> {
        CitModel { config: self.config.clone(), arch: self.arch.clone(), params: self.params.cast() }
    }

    /// `F0 = SCAM(conv_s4(img))` on an already padded image.
    pub fn shallow_extract<'t>(&self, b: &Binding<'t, '_, T>, img: Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let stem = self.arch.stem.forward(b, img)?;
        let f0 = match &self.arch.scam {
            Some(scam) => stem.mul(scam.gate(b, stem)?)?,
            None => stem,
        };
        Ok((stem, f0))
    }

    /// SCAM gate values for a stem feature map, `None` when SCAM is off.
    pub fn scam_gate<'t>(&self, b: &Binding<'t, '_, T>, stem: Var<'t, T>) -> Result<Option<Var<'t, T>>> {
        self.arch.scam.as_ref().map(|s| s.gate(b, stem)).transpose()
    }

    /// One CITB on `(N, h·w, C)` tokens.
    pub fn citb_forward<'t>(
        &self,
        b: &Binding<'t, '_, T>,
        group: usize,
        block: usize,
        tokens: Var<'t, T>,
        height: usize,
        width: usize,
    ) -> Result<Var<'t, T>> {
        let blk = self.block(group, block)?;
        let batch = self.check_tokens(&tokens.shape(), height, width)?;
        blk.forward(b, tokens, Grid { batch, height, width }, &self.config)
    }

    /// One RCITG on an NCHW feature map.
    pub fn rcitg_forward<'t>(&self, b: &Binding<'t, '_, T>, group: usize, f_in: Var<'t, T>) -> Result<Var<'t, T>> {
        let g = self.arch.groups.get(group).ok_or_else(|| Error::Config(format!("no group {group}")))?;
        let s = f_in.shape();
        if s.len() != 4 || s[1] != self.config.channels {
            return Err(Error::shape("rcitg", format!("{s:?} for {} channels", self.config.channels)));
        }
        let grid = Grid { batch: s[0], height: s[2], width: s[3] };
        let mut x = nchw_to_tokens(f_in)?;
        for blk in &g.blocks {
            x = blk.forward(b, x, grid, &self.config)?;
        }
        let x = tokens_to_nchw(x, grid, self.config.channels)?;
        g.conv.forward(b, x)?.add(f_in)
    }

    pub fn block_shifts(&self, group: usize) -> Result<Vec<usize>> {
        let g = self.arch.groups.get(group).ok_or_else(|| Error::Config(format!("no group {group}")))?;
        Ok(g.blocks.iter().map(|b| b.shift).collect())
    }

    fn block(&self, group: usize, block: usize) -> Result<&Citb> {
        self.arch
            .groups
            .get(group)
            .and_then(|g| g.blocks.get(block))
            .ok_or_else(|| Error::Config(format!("no block {group}.{block}")))
    }

    fn check_tokens(&self, s: &[usize], h: usize, w: usize) -> Result<usize> {
        if s.len() != 3 || s[1] != h * w || s[2] != self.config.channels {
            return Err(Error::shape(
                "citb",
                format!("tokens {s:?} for a {h}x{w} grid of {} channels", self.config.channels),
            ));
        }
        Ok(s[0])
    }

    /// `H_REC`: conv3×3 → leaky → conv3×3 (C→3r²) → pixel-shuffle → conv3×3.
    pub fn reconstruct<'t>(&self, b: &Binding<'t, '_, T>, feat: Var<'t, T>) -> Result<Var<'t, T>> {
        let rec = &self.arch.rec;
        let h = rec.conv_before.forward(b, feat)?.leaky_relu(T::c(REC_LEAKY_SLOPE))?;
        let h = rec.conv_up.forward(b, h)?;
        let h = pixel_shuffle(h, self.config.upscale)?;
        rec.conv_last.forward(b, h)
    }

    pub fn forward<'t>(&self, b: &Binding<'t, '_, T>, img: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(self.forward_trace(b, img)?.output)
    }

    /// Full forward, unclamped, returning intermediates as well.
    pub fn forward_trace<'t>(&self, b: &Binding<'t, '_, T>, img: Var<'t, T>) -> Result<ForwardTrace<'t, T>> {
        let s = img.shape();
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::shape("forward", format!("expected (N, 3, H, W), got {s:?}")));
        }
        let (h, w) = (s[2], s[3]);
        let m = self.config.pad_multiple();
        let padded = reflect_pad(img, h.div_ceil(m) * m, w.div_ceil(m) * m)?;
        let (stem, f0) = self.shallow_extract(b, padded)?;
        let mut x = f0;
        let mut groups = Vec::with_capacity(self.arch.groups.len());
        for i in 0..self.arch.groups.len() {
            x = self.rcitg_forward(b, i, x)?;
            groups.push(x);
        }
        let body = self.arch.conv_after_body.forward(b, x)?;
        let out = self.reconstruct(b, f0.add(body)?)?;
        let output = crop(out, h, w)?;
        Ok(ForwardTrace { stem, f0, groups, body, output })
    }

    /// Gradient-free forward with the output clamped into `[0, 1]`.
    pub fn infer(&self, img: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::no_grad();
        let b = Binding::new(&tape, &self.params);
        let y = self.forward(&b, tape.constant(img.clone()))?.clamp(T::zero(), T::one())?;
        let out = (*y.value()).clone();
        Ok(out)
    }

    /// Plain-text layer table: name, shape, parameter count.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        let width = self.params.names().map(|n| n.len()).max().unwrap_or(4).max(4);
        let _ = writeln!(out, "{:<width$}  {:<20}  {:>12}", "name", "shape", "params");
        for (name, p) in self.params.iter() {
            let shape = format!("{:?}", p.value.shape());
            let _ = writeln!(out, "{:<width$}  {:<20}  {:>12}", name, shape, p.value.numel());
        }
        let _ = writeln!(out, "{:<width$}  {:<20}  {:>12}", "total", "", self.param_count());
        out
    }
}
