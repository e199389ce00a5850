//! Images, synthetic exposure pairs and patch sampling.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use walkdir::WalkDir;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `H×W×3` image with values in `[0, 1]`, stored row-major, channels last.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRGB {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageRGB {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width * 3 {
            return Err(Error::shape("image", format!("{height}x{width}x3 with {} values", data.len())));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Config(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(ImageRGB { height, width, data })
    }

    /// `f(y, x, c)`, clamped into `[0, 1]`.
    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    data.push(f(y, x, c).clamp(0.0, 1.0));
                }
            }
        }
        ImageRGB { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * 3 + c]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        ImageRGB {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v).clamp(0.0, 1.0)).collect(),
        }
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width || height == 0 || width == 0 {
            return Err(Error::shape(
                "crop",
                format!("{height}x{width} at ({top},{left}) in {}x{}", self.height, self.width),
            ));
        }
        Ok(Self::from_fn(height, width, |y, x, c| self.get(top + y, left + x, c)))
    }

    /// Quantizes to 8 bits with round-to-nearest.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect()
    }

    pub fn from_bytes(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(height, width, bytes.iter().map(|&b| b as f32 / 255.0).collect())
    }
}

fn format_for(path: &Path) -> Result<image::ImageFormat> {
    let fmt = image::ImageFormat::from_path(path).map_err(|_| Error::UnsupportedFormat(path.to_path_buf()))?;
    match fmt {
        image::ImageFormat::Png | image::ImageFormat::Jpeg | image::ImageFormat::Bmp => Ok(fmt),
        _ => Err(Error::UnsupportedFormat(path.to_path_buf())),
    }
}

pub fn is_supported_image(path: &Path) -> bool {
    format_for(path).is_ok()
}

pub fn load_image(path: impl AsRef<Path>) -> Result<ImageRGB> {
    let path = path.as_ref();
    let fmt = format_for(path)?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let img =
        image::load_from_memory_with_format(&bytes, fmt).map_err(|_| Error::UnsupportedFormat(path.to_path_buf()))?;
    let rgb = img.to_rgb8();
    ImageRGB::from_bytes(rgb.height() as usize, rgb.width() as usize, rgb.as_raw())
}

pub fn save_image(img: &ImageRGB, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let fmt = format_for(path)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let buf = image::RgbImage::from_raw(img.width as u32, img.height as u32, img.to_bytes())
        .ok_or_else(|| Error::shape("save_image", "buffer size"))?;
    buf.save_with_format(path, fmt).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        _ => Error::UnsupportedFormat(path.to_path_buf()),
    })
}

/// Stacks images of equal size into an `(N, 3, H, W)` tensor.
pub fn to_tensor<T: Scalar>(images: &[&ImageRGB]) -> Result<Tensor<T>> {
    let first = images.first().ok_or_else(|| Error::shape("to_tensor", "no images"))?;
    let (h, w) = (first.height, first.width);
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        if img.height != h || img.width != w {
            return Err(Error::shape("to_tensor", format!("{}x{} vs {h}x{w}", img.height, img.width)));
        }
        for c in 0..3 {
            data.extend(img.data.iter().skip(c).step_by(3).map(|&v| T::c(v as f64)));
        }
    }
    Tensor::new([images.len(), 3, h, w], data)
}

/// Unstacks an `(N, 3, H, W)` tensor, clamping into `[0, 1]`.
pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Vec<ImageRGB>> {
    let s = t.shape();
    if s.len() != 4 || s[1] != 3 {
        return Err(Error::shape("from_tensor", format!("{s:?}")));
    }
    let (h, w) = (s[2], s[3]);
    let plane = h * w;
    Ok((0..s[0])
        .map(|n| {
            let d = &t.data()[n * 3 * plane..(n + 1) * 3 * plane];
            ImageRGB::from_fn(h, w, |y, x, c| d[c * plane + y * w + x].to_f32().unwrap_or(0.0))
        })
        .collect())
}

/// How incorrectly exposed renders are simulated from a well-exposed image.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposurePairSpec {
    pub ev_offsets: Vec<f64>,
    /// Inclusive range γ is drawn from.
    pub gamma_jitter: (f64, f64),
    pub seed: u64,
}

impl Default for ExposurePairSpec {
    fn default() -> Self {
        ExposurePairSpec { ev_offsets: vec![-1.5, -1.0, 0.0, 1.0, 1.5], gamma_jitter: (0.9, 1.1), seed: 0 }
    }
}

impl ExposurePairSpec {
    pub fn validate(&self) -> Result<()> {
        if self.ev_offsets.iter().any(|e| !e.is_finite()) {
            return Err(Error::Config("EV offsets must be finite".into()));
        }
        let (lo, hi) = self.gamma_jitter;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::Config(format!("gamma range ({lo}, {hi}) must lie in (0, inf)")));
        }
        Ok(())
    }

    pub fn draw_gamma<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let (lo, hi) = self.gamma_jitter;
        if hi > lo {
            rng.random_range(lo..=hi)
        } else {
            lo
        }
    }
}

/// `clamp(gt^γ · 2^ev, 0, 1)`.
pub fn render_exposure(gt: &ImageRGB, ev: f64, gamma: f64) -> ImageRGB {
    let gain = 2f64.powf(ev);
    gt.map(|v| ((v as f64).powf(gamma) * gain) as f32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExposurePair {
    pub input: ImageRGB,
    pub target: ImageRGB,
    pub ev: f64,
    pub gamma: f64,
}

/// Renders one incorrectly exposed input for `gt`, drawing γ from the spec.
pub fn synth_exposure_pair<R: Rng + ?Sized>(
    gt: &ImageRGB,
    ev: f64,
    spec: &ExposurePairSpec,
    rng: &mut R,
) -> ExposurePair {
    let gamma = spec.draw_gamma(rng);
    ExposurePair { input: render_exposure(gt, ev, gamma), target: gt.clone(), ev, gamma }
}

/// Every `(gt, ev)` combination, deterministic in `spec.seed`.
pub fn synth_pairs(gts: &[ImageRGB], spec: &ExposurePairSpec) -> Result<Vec<ExposurePair>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(gts.len() * spec.ev_offsets.len());
    for gt in gts {
        for &ev in &spec.ev_offsets {
            out.push(synth_exposure_pair(gt, ev, spec, &mut rng));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Procedural {
    Gradient,
    Blobs,
    Texture,
}

fn smoothstep(t: f32) -> f32 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Shifts each channel so all three share the same mean (gray world).
/// Values pushed outside `[0, 1]` are clamped, so the balance is only
/// approximate near the limits.
pub fn gray_balance(img: &ImageRGB) -> ImageRGB {
    let n = (img.height * img.width) as f32;
    let means: [f32; 3] = std::array::from_fn(|c| img.data.iter().skip(c).step_by(3).sum::<f32>() / n);
    let gray = means.iter().sum::<f32>() / 3.0;
    ImageRGB::from_fn(img.height, img.width, |y, x, c| img.get(y, x, c) - means[c] + gray)
}

/// Smooth synthetic ground truth: colour ramps, soft-edged blobs, or
/// bilinearly upsampled value noise, gray-balanced.
pub fn procedural_image(kind: Procedural, height: usize, width: usize, seed: u64) -> ImageRGB {
    gray_balance(&procedural_raw(kind, height, width, seed))
}

fn procedural_raw(kind: Procedural, height: usize, width: usize, seed: u64) -> ImageRGB {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hf, wf) = (height as f32, width as f32);
    match kind {
        Procedural::Gradient => {
            let base: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.15..0.45));
            let dx: [f32; 3] = std::array::from_fn(|_| rng.random_range(-0.3..0.3));
            let dy: [f32; 3] = std::array::from_fn(|_| rng.random_range(-0.3..0.3));
            ImageRGB::from_fn(height, width, |y, x, c| {
                base[c] + 0.2 + dx[c] * (x as f32 / wf - 0.5) + dy[c] * (y as f32 / hf - 0.5)
            })
        }
        Procedural::Blobs => {
            let bg: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.2..0.5));
            let blobs: Vec<(f32, f32, f32, [f32; 3])> = (0..3)
                .map(|_| {
                    (
                        rng.random_range(0.2..0.8) * wf,
                        rng.random_range(0.2..0.8) * hf,
                        rng.random_range(0.15..0.3) * wf.min(hf),
                        std::array::from_fn(|_| rng.random_range(-0.25..0.35)),
                    )
                })
                .collect();
            ImageRGB::from_fn(height, width, |y, x, c| {
                let mut v = bg[c];
                for (cx, cy, r, col) in &blobs {
                    let d = ((x as f32 - cx).powi(2) + (y as f32 - cy).powi(2)).sqrt();
                    v += col[c] * (1.0 - smoothstep((d - 0.5 * r) / r));
                }
                v
            })
        }
        Procedural::Texture => {
            let cells = 4usize;
            let grid: Vec<[f32; 3]> =
                (0..(cells + 1) * (cells + 1)).map(|_| std::array::from_fn(|_| rng.random_range(0.15..0.75))).collect();
            ImageRGB::from_fn(height, width, |y, x, c| {
                let gx = x as f32 / wf * cells as f32;
                let gy = y as f32 / hf * cells as f32;
                let (ix, iy) = (gx.floor() as usize, gy.floor() as usize);
                let (tx, ty) = (smoothstep(gx - ix as f32), smoothstep(gy - iy as f32));
                let at = |yy: usize, xx: usize| grid[yy.min(cells) * (cells + 1) + xx.min(cells)][c];
                let top = at(iy, ix) * (1.0 - tx) + at(iy, ix + 1) * tx;
                let bot = at(iy + 1, ix) * (1.0 - tx) + at(iy + 1, ix + 1) * tx;
                top * (1.0 - ty) + bot * ty
            })
        }
    }
}

/// `count` procedural images cycling through the three kinds.
pub fn procedural_set(count: usize, height: usize, width: usize, seed: u64) -> Vec<ImageRGB> {
    let kinds = [Procedural::Gradient, Procedural::Blobs, Procedural::Texture];
    (0..count).map(|i| procedural_image(kinds[i % 3], height, width, seed.wrapping_add(i as u64))).collect()
}

/// One training batch, NCHW.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub input: Tensor<T>,
    pub target: Tensor<T>,
    /// `(pair index, top, left)` of each crop.
    pub origins: Vec<(usize, usize, usize)>,
}

/// Shuffled, aligned random crops from a pair list. One epoch is one pass
/// over the pairs; the final partial batch of an epoch is kept.
#[derive(Debug, Clone)]
pub struct PatchSampler {
    pairs: Vec<ExposurePair>,
    crop: usize,
    batch: usize,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl PatchSampler {
    pub fn new(pairs: Vec<ExposurePair>, crop: usize, batch: usize, crop_multiple: usize, seed: u64) -> Result<Self> {
        if pairs.is_empty() || batch == 0 {
            return Err(Error::Config("need at least one pair and batch >= 1".into()));
        }
        if crop == 0 || !crop.is_multiple_of(crop_multiple.max(1)) {
            return Err(Error::Config(format!("crop {crop} must be a positive multiple of {crop_multiple}")));
        }
        for p in &pairs {
            let (h, w) = (p.target.height, p.target.width);
            if p.input.height != h || p.input.width != w {
                return Err(Error::shape("sample_patches", "input and target sizes differ"));
            }
            if crop > h.min(w) {
                return Err(Error::CropTooLarge { crop, height: h, width: w });
            }
        }
        Ok(PatchSampler { pairs, crop, batch, rng: ChaCha8Rng::seed_from_u64(seed), order: Vec::new(), cursor: 0 })
    }

    pub fn pairs(&self) -> &[ExposurePair] {
        &self.pairs
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.pairs.len().div_ceil(self.batch)
    }

    /// `(pair index, top, left)` for the next batch.
    fn next_origins(&mut self) -> Vec<(usize, usize, usize)> {
        if self.cursor >= self.order.len() {
            self.order = (0..self.pairs.len()).collect();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let end = (self.cursor + self.batch).min(self.order.len());
        let mut origins = Vec::with_capacity(end - self.cursor);
        for &i in &self.order[self.cursor..end] {
            let p = &self.pairs[i];
            let top = self.rng.random_range(0..=p.target.height - self.crop);
            let left = self.rng.random_range(0..=p.target.width - self.crop);
            origins.push((i, top, left));
        }
        self.cursor = end;
        origins
    }

    /// Advances the stream by `n` batches without cropping.
    pub fn skip(&mut self, n: u64) {
        for _ in 0..n {
            self.next_origins();
        }
    }

    pub fn next_batch<T: Scalar>(&mut self) -> Result<Batch<T>> {
        let origins = self.next_origins();
        let c = self.crop;
        let mut inputs = Vec::with_capacity(origins.len());
        let mut targets = Vec::with_capacity(origins.len());
        for &(i, top, left) in &origins {
            let p = &self.pairs[i];
            inputs.push(p.input.crop(top, left, c, c)?);
            targets.push(p.target.crop(top, left, c, c)?);
        }
        Ok(Batch {
            input: to_tensor(&inputs.iter().collect::<Vec<_>>())?,
            target: to_tensor(&targets.iter().collect::<Vec<_>>())?,
            origins,
        })
    }

    /// Endless batch iterator.
    pub fn batches<T: Scalar>(self) -> impl Iterator<Item = Result<Batch<T>>> {
        let mut s = self;
        std::iter::repeat_with(move || s.next_batch())
    }
}

/// Deterministic-under-seed stream of aligned crop batches.
pub fn sample_patches<T: Scalar>(
    pairs: &[ExposurePair],
    crop: usize,
    batch: usize,
    crop_multiple: usize,
    seed: u64,
) -> Result<impl Iterator<Item = Result<Batch<T>>>> {
    Ok(PatchSampler::new(pairs.to_vec(), crop, batch, crop_multiple, seed)?.batches())
}

/// `_ev+1.5` style filename suffix.
pub fn ev_suffix(ev: f64) -> String {
    format!("_ev{}{:.1}", if ev < 0.0 { "-" } else { "+" }, ev.abs())
}

fn parse_ev_suffix(stem: &str) -> Option<(&str, f64)> {
    let pos = stem.rfind("_ev")?;
    let ev: f64 = stem[pos + 3..].parse().ok()?;
    Some((&stem[..pos], ev))
}

fn supported_files(root: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(root).to_path_buf();
            Error::io(path, e.into_io_error().unwrap_or_else(|| std::io::Error::other("walk error")))
        })?;
        if entry.file_type().is_file() && is_supported_image(entry.path()) {
            files.push(entry.path().to_path_buf());
        }
    }
    Ok(files)
}

/// Lists supported images under `root`, sorted, recursively.
pub fn list_images(root: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    supported_files(root.as_ref())
}

/// Reads every image under `src`, and writes `out/gt/<rel>.png` plus one
/// `out/input/<rel>_ev{±x.x}.png` per EV offset. Returns the number of
/// pairs written.
pub fn synth_directory(src: impl AsRef<Path>, out: impl AsRef<Path>, spec: &ExposurePairSpec) -> Result<usize> {
    spec.validate()?;
    let (src, out) = (src.as_ref(), out.as_ref());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut written = 0;
    for path in supported_files(src)? {
        let rel = path.strip_prefix(src).unwrap_or(&path).with_extension("");
        let gt = load_image(&path)?;
        save_image(&gt, out.join("gt").join(&rel).with_extension("png"))?;
        for &ev in &spec.ev_offsets {
            let pair = synth_exposure_pair(&gt, ev, spec, &mut rng);
            let name = format!("{}{}.png", rel.file_name().and_then(|s| s.to_str()).unwrap_or("img"), ev_suffix(ev));
            save_image(&pair.input, out.join("input").join(&rel).with_file_name(name))?;
            written += 1;
        }
    }
    Ok(written)
}

/// Writes `count` procedural ground truths as PNGs into `dir`.
pub fn write_procedural(dir: impl AsRef<Path>, count: usize, size: usize, seed: u64) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    procedural_set(count, size, size, seed)
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let p = dir.join(format!("proc_{i:03}.png"));
            save_image(img, &p)?;
            Ok(p)
        })
        .collect()
}

/// Loads a tree written by [`synth_directory`] back into pairs.
pub fn load_pair_tree(root: impl AsRef<Path>) -> Result<Vec<ExposurePair>> {
    let root = root.as_ref();
    let input_root = root.join("input");
    let mut pairs = Vec::new();
    for path in supported_files(&input_root)? {
        let rel = path.strip_prefix(&input_root).unwrap_or(&path);
        let stem = rel.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let Some((base, ev)) = parse_ev_suffix(stem) else { continue };
        let gt_path = root.join("gt").join(rel).with_file_name(format!("{base}.png"));
        let target = load_image(&gt_path)?;
        let input = load_image(&path)?;
        pairs.push(ExposurePair { input, target, ev, gamma: f64::NAN });
    }
    if pairs.is_empty() {
        return Err(Error::Config(format!("no pairs found under {}", input_root.display())));
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_mapping() {
        let img = ImageRGB::from_bytes(1, 1, &[255, 0, 128]).unwrap();
        assert_eq!(img.data()[0], 1.0);
        assert_eq!(img.data()[1], 0.0);
        assert!((img.data()[2] - 0.50196).abs() < 1e-5);
        assert_eq!(img.to_bytes(), vec![255, 0, 128]);
    }

    #[test]
    fn exposure_render() {
        let gt = ImageRGB::from_fn(1, 1, |_, _, _| 0.6);
        assert_eq!(render_exposure(&gt, 0.0, 1.0), gt);
        assert_eq!(render_exposure(&gt, 1.0, 1.0).data()[0], 1.0);
        assert!((render_exposure(&gt, -1.0, 1.0).data()[0] - 0.3).abs() < 1e-7);
    }

    #[test]
    fn ev_suffix_format() {
        assert_eq!(ev_suffix(1.5), "_ev+1.5");
        assert_eq!(ev_suffix(-1.0), "_ev-1.0");
        assert_eq!(ev_suffix(0.0), "_ev+0.0");
        assert_eq!(parse_ev_suffix("a_b_ev-1.5"), Some(("a_b", -1.5)));
    }

    #[test]
    fn tensor_layout_round_trip() {
        let img = procedural_image(Procedural::Blobs, 5, 7, 3);
        let t: Tensor<f32> = to_tensor(&[&img]).unwrap();
        assert_eq!(t.shape(), &[1, 3, 5, 7]);
        assert_eq!(t.data()[2 * 35 + 7 + 3], img.get(1, 3, 2));
        assert_eq!(from_tensor(&t).unwrap()[0], img);
    }

    #[test]
    fn crop_too_large() {
        let pairs =
            synth_pairs(&[procedural_image(Procedural::Gradient, 16, 16, 0)], &ExposurePairSpec::default()).unwrap();
        assert!(matches!(PatchSampler::new(pairs.clone(), 32, 2, 16, 0), Err(Error::CropTooLarge { .. })));
        assert!(PatchSampler::new(pairs, 12, 2, 8, 0).is_err());
    }
}
