//! PSNR and SSIM on `[0, 1]` images.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::data::ImageRGB;
use crate::error::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_same(a: &ImageRGB, b: &ImageRGB) -> Result<()> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::shape("metric", format!("{}x{} vs {}x{}", a.height(), a.width(), b.height(), b.width())));
    }
    Ok(())
}

/// `10·log10(1 / MSE)` over all channels. Identical images give `+inf`.
pub fn psnr(a: &ImageRGB, b: &ImageRGB) -> Result<f64> {
    check_same(a, b)?;
    let mse = a.data().iter().zip(b.data()).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>()
        / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// How SSIM treats colour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SsimMode {
    /// Mean of the three per-channel scores.
    #[default]
    RgbMean,
    /// Single score on BT.601 luma.
    Luma,
}

impl std::str::FromStr for SsimMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rgb" | "rgb_mean" => Ok(SsimMode::RgbMean),
            "luma" | "y" => Ok(SsimMode::Luma),
            _ => Err(Error::Config(format!("unknown ssim mode {s:?}"))),
        }
    }
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> =
        (0..SSIM_WINDOW).map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian filter over valid positions only.
fn filter(plane: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|i| g[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| g[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM of two single-channel planes.
pub fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> Result<f64> {
    if h.min(w) < SSIM_WINDOW {
        return Err(Error::TooSmall(format!("{h}x{w}, SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}")));
    }
    if a.len() != h * w || b.len() != h * w {
        return Err(Error::shape("ssim", format!("planes of {} and {} values for {h}x{w}", a.len(), b.len())));
    }
    let g = gaussian_window();
    let (c1, c2) = ((SSIM_K1).powi(2), (SSIM_K2).powi(2));
    let prod = |f: fn(f64, f64) -> f64| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect::<Vec<_>>();
    let mu_a = filter(a, h, w, &g);
    let mu_b = filter(b, h, w, &g);
    let aa = filter(&prod(|x, _| x * x), h, w, &g);
    let bb = filter(&prod(|_, y| y * y), h, w, &g);
    let ab = filter(&prod(|x, y| x * y), h, w, &g);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / n as f64)
}

fn channel(img: &ImageRGB, c: usize) -> Vec<f64> {
    img.data().iter().skip(c).step_by(3).map(|&v| v as f64).collect()
}

fn luma(img: &ImageRGB) -> Vec<f64> {
    img.data().chunks(3).map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64).collect()
}

pub fn ssim(a: &ImageRGB, b: &ImageRGB, mode: SsimMode) -> Result<f64> {
    check_same(a, b)?;
    let (h, w) = (a.height(), a.width());
    match mode {
        SsimMode::RgbMean => {
            let mut total = 0.0;
            for c in 0..3 {
                total += ssim_plane(&channel(a, c), &channel(b, c), h, w)?;
            }
            Ok(total / 3.0)
        }
        SsimMode::Luma => ssim_plane(&luma(a), &luma(b), h, w),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub path: PathBuf,
    pub psnr: f64,
    pub ssim: f64,
}

/// Per-image scores and their means.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    pub fn push(&mut self, path: PathBuf, pred: &ImageRGB, target: &ImageRGB, mode: SsimMode) -> Result<()> {
        let row = MetricRow { path, psnr: psnr(pred, target)?, ssim: ssim(pred, target, mode)? };
        self.rows.push(row);
        Ok(())
    }

    pub fn mean_psnr(&self) -> f64 {
        self.rows.iter().map(|r| r.psnr).sum::<f64>() / self.rows.len() as f64
    }

    pub fn mean_ssim(&self) -> f64 {
        self.rows.iter().map(|r| r.ssim).sum::<f64>() / self.rows.len() as f64
    }

    /// `path,psnr,ssim` rows followed by a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("path,psnr,ssim\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{:.6},{:.6}", r.path.display(), r.psnr, r.ssim);
        }
        if !self.rows.is_empty() {
            let _ = writeln!(s, "mean,{:.6},{:.6}", self.mean_psnr(), self.mean_ssim());
        }
        s
    }
}
