use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

/// Architecture hyperparameters and ablation switches.
#[derive(Debug, Clone, PartialEq)]
pub struct CitConfig {
    /// Number of residual groups.
    pub rcitg_count: usize,
    /// Blocks per group; even so plain and shifted windows alternate.
    pub citb_count: usize,
    pub window: usize,
    pub channels: usize,
    pub heads: usize,
    /// Weight on the channel-attention branch.
    pub alpha: f64,
    /// Weight on the half-instance-norm branch.
    pub beta: f64,
    pub squeeze: usize,
    pub mlp_ratio: f64,
    pub upscale: usize,
    pub use_scam: bool,
    pub use_cab: bool,
    pub use_hinb: bool,
    pub use_rel_bias: bool,
    /// Seed for parameter initialization.
    pub seed: u64,
}

impl Default for CitConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl CitConfig {
    /// N=6, M=6, window 8, 180 channels, 6 heads, α=β=0.01, squeeze 3.
    pub fn full() -> Self {
        CitConfig {
            rcitg_count: 6,
            citb_count: 6,
            window: 8,
            channels: 180,
            heads: 6,
            alpha: 0.01,
            beta: 0.01,
            squeeze: 3,
            mlp_ratio: 2.0,
            upscale: 4,
            use_scam: true,
            use_cab: true,
            use_hinb: true,
            use_rel_bias: true,
            seed: 0,
        }
    }

    /// Desk-scale config: 8 channels, 1 group of 2 blocks, 2 heads, window 4.
    pub fn toy() -> Self {
        CitConfig { rcitg_count: 1, citb_count: 2, window: 4, channels: 8, heads: 2, ..Self::full() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.rcitg_count == 0 || self.citb_count == 0 {
            return bad("group and block counts must be positive".into());
        }
        if !self.citb_count.is_multiple_of(2) {
            return bad(format!("citb_count must be even, got {}", self.citb_count));
        }
        if self.window == 0 || self.channels == 0 || self.heads == 0 || self.squeeze == 0 {
            return bad("window, channels, heads and squeeze must be positive".into());
        }
        if !self.channels.is_multiple_of(self.heads) {
            return bad(format!("channels {} not divisible by heads {}", self.channels, self.heads));
        }
        if self.use_hinb && !self.channels.is_multiple_of(2) {
            return bad(format!("half-instance norm needs even channels, got {}", self.channels));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.alpha.is_finite() && self.beta.is_finite()) {
            return bad(format!("alpha and beta must be finite and >= 0, got {} and {}", self.alpha, self.beta));
        }
        if !(self.mlp_ratio > 0.0) {
            return bad(format!("mlp_ratio must be positive, got {}", self.mlp_ratio));
        }
        if self.upscale != 4 {
            return bad(format!("upscale is fixed at 4, got {}", self.upscale));
        }
        Ok(())
    }

    pub fn mlp_hidden(&self) -> usize {
        ((self.channels as f64 * self.mlp_ratio).round() as usize).max(1)
    }

    /// Spatial multiple the input is padded to before the stem.
    pub fn pad_multiple(&self) -> usize {
        self.upscale * self.window
    }

    /// Shift used by block `j` of a group: 0 on even blocks, `W/2` on odd.
    pub fn shift_for_block(&self, j: usize) -> usize {
        if j % 2 == 1 {
            self.window / 2
        } else {
            0
        }
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("rcitg_count", self.rcitg_count.to_string()),
            ("citb_count", self.citb_count.to_string()),
            ("window", self.window.to_string()),
            ("channels", self.channels.to_string()),
            ("heads", self.heads.to_string()),
            ("alpha", self.alpha.to_string()),
            ("beta", self.beta.to_string()),
            ("squeeze", self.squeeze.to_string()),
            ("mlp_ratio", self.mlp_ratio.to_string()),
            ("upscale", self.upscale.to_string()),
            ("use_scam", self.use_scam.to_string()),
            ("use_cab", self.use_cab.to_string()),
            ("use_hinb", self.use_hinb.to_string()),
            ("use_rel_bias", self.use_rel_bias.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    /// Applies one `key=value` setting. Returns `Ok(false)` for keys this
    /// config does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "rcitg_count" => self.rcitg_count = parse(key, value)?,
            "citb_count" => self.citb_count = parse(key, value)?,
            "window" => self.window = parse(key, value)?,
            "channels" => self.channels = parse(key, value)?,
            "heads" => self.heads = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "squeeze" => self.squeeze = parse(key, value)?,
            "mlp_ratio" => self.mlp_ratio = parse(key, value)?,
            "upscale" => self.upscale = parse(key, value)?,
            "use_scam" => self.use_scam = parse(key, value)?,
            "use_cab" => self.use_cab = parse(key, value)?,
            "use_hinb" => self.use_hinb = parse(key, value)?,
            "use_rel_bias" => self.use_rel_bias = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut cfg = Self::full();
        for (k, v) in pairs {
            if !cfg.set(k, v)? {
                return Err(Error::Config(format!("unknown model key {k}")));
            }
        }
        Ok(cfg)
    }
}

impl fmt::Display for CitConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.to_pairs() {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

pub(crate) fn parse<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value.trim().parse().map_err(|_| Error::Config(format!("bad value for {key}: {value:?}")))
}

/// Parses `key=value` lines; `#` starts a comment.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", n + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}
