//! Training objective: `L = L_rec + λ_col·L_col + λ_spa·L_spa`.
//!
//! All terms take NCHW RGB tensors and average over the batch.

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Side of the square regions compared by the spatial loss.
pub const SPA_REGION: usize = 4;

/// Which spatial-consistency formulation to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpaVariant {
    /// Squared difference of matching region means of output and input.
    #[default]
    RegionMean,
    /// Squared change of the region-mean difference against each of the four
    /// neighbouring regions (zero outside the image).
    Neighbor,
}

impl std::str::FromStr for SpaVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "region_mean" | "region-mean" => Ok(SpaVariant::RegionMean),
            "neighbor" | "neighbour" => Ok(SpaVariant::Neighbor),
            _ => Err(Error::Config(format!("unknown spa variant {s:?}"))),
        }
    }
}

impl std::fmt::Display for SpaVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SpaVariant::RegionMean => "region_mean",
            SpaVariant::Neighbor => "neighbor",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights {
    pub lambda_col: f64,
    pub lambda_spa: f64,
    pub use_col: bool,
    pub use_spa: bool,
    pub spa_variant: SpaVariant,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_col: 0.5,
            lambda_spa: 0.5,
            use_col: true,
            use_spa: true,
            spa_variant: SpaVariant::RegionMean,
        }
    }
}

impl LossWeights {
    /// Reconstruction term only.
    pub fn l1_only() -> Self {
        LossWeights { use_col: false, use_spa: false, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_col >= 0.0 && self.lambda_spa >= 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be >= 0, got {} and {}",
                self.lambda_col, self.lambda_spa
            )));
        }
        Ok(())
    }
}

fn check_rgb(op: &'static str, s: &[usize]) -> Result<()> {
    if s.len() != 4 || s[1] != 3 {
        return Err(Error::shape(op, format!("expected (N, 3, H, W), got {s:?}")));
    }
    Ok(())
}

fn check_pair(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    check_rgb(op, a)?;
    if a != b {
        return Err(Error::shape(op, format!("{a:?} vs {b:?}")));
    }
    Ok(())
}

/// Mean absolute error over every element.
pub fn l_rec<'t, T: Scalar>(output: Var<'t, T>, target: Var<'t, T>) -> Result<Var<'t, T>> {
    check_pair("l_rec", &output.shape(), &target.shape())?;
    output.sub(target)?.abs()?.mean_all()
}

/// Gray-world colour constancy: squared differences between the mean
/// intensities of the (r,g), (r,b) and (g,b) channel pairs.
pub fn l_col<'t, T: Scalar>(output: Var<'t, T>) -> Result<Var<'t, T>> {
    let s = output.shape();
    check_rgb("l_col", &s)?;
    let means = output.mean_axes(&[2, 3], false)?;
    let ch = |i: usize| means.narrow(1, i, 1);
    let (r, g, b) = (ch(0)?, ch(1)?, ch(2)?);
    let mut total = r.sub(g)?.square()?;
    total = total.add(r.sub(b)?.square()?)?;
    total = total.add(g.sub(b)?.square()?)?;
    total.mean_all()
}

/// Channel-averaged mean of each non-overlapping 4×4 region, `(N, H/4, W/4)`.
/// A trailing remainder narrower than a region is dropped.
fn region_means<'t, T: Scalar>(x: Var<'t, T>) -> Result<Var<'t, T>> {
    let s = x.shape();
    let (hr, wr) = (s[2] / SPA_REGION, s[3] / SPA_REGION);
    if hr == 0 || wr == 0 {
        return Err(Error::shape("l_spa", format!("image {s:?} smaller than one {SPA_REGION}x{SPA_REGION} region")));
    }
    let x = x.narrow(2, 0, hr * SPA_REGION)?.narrow(3, 0, wr * SPA_REGION)?;
    x.reshape([s[0], 3, hr, SPA_REGION, wr, SPA_REGION])?.mean_axes(&[1, 3, 5], false)
}

/// Spatial consistency between the output and the (incorrectly exposed)
/// input, over `K = ⌊H/4⌋·⌊W/4⌋` regions.
pub fn l_spa<'t, T: Scalar>(output: Var<'t, T>, input: Var<'t, T>, variant: SpaVariant) -> Result<Var<'t, T>> {
    check_pair("l_spa", &output.shape(), &input.shape())?;
    let d = region_means(output)?.sub(region_means(input)?)?;
    match variant {
        SpaVariant::RegionMean => d.square()?.mean_all(),
        SpaVariant::Neighbor => {
            let s = d.shape();
            let (n, hr, wr) = (s[0], s[1], s[2]);
            let tape = d.tape();
            let zrow = tape.constant(Tensor::zeros([n, 1, wr]));
            let padded = tape.concat(&[zrow, d, zrow], 1)?;
            let zcol = tape.constant(Tensor::zeros([n, hr + 2, 1]));
            let padded = tape.concat(&[zcol, padded, zcol], 2)?;
            let centre = padded.narrow(1, 1, hr)?.narrow(2, 1, wr)?;
            let mut total: Option<Var<'t, T>> = None;
            for (dy, dx) in [(0, 1), (2, 1), (1, 0), (1, 2)] {
                let nb = padded.narrow(1, dy, hr)?.narrow(2, dx, wr)?;
                let term = centre.sub(nb)?.square()?;
                total = Some(match total {
                    Some(t) => t.add(term)?,
                    None => term,
                });
            }
            total.expect("four directions").mean_all()
        }
    }
}

/// Scalar values of each term, for logging.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossValues {
    pub total: f64,
    pub rec: f64,
    pub col: f64,
    pub spa: f64,
}

pub struct LossTerms<'t, T: Scalar> {
    pub total: Var<'t, T>,
    pub values: LossValues,
}

fn item<T: Scalar>(v: Var<'_, T>) -> f64 {
    v.value().data()[0].to_f64().unwrap_or(f64::NAN)
}

/// Weighted objective. Disabled terms are not added at all; their logged
/// value is still computed.
pub fn total_loss<'t, T: Scalar>(
    output: Var<'t, T>,
    target: Var<'t, T>,
    input: Var<'t, T>,
    w: &LossWeights,
) -> Result<LossTerms<'t, T>> {
    w.validate()?;
    let rec = l_rec(output, target)?;
    let col = l_col(output)?;
    let spa = l_spa(output, input, w.spa_variant)?;
    let mut total = rec;
    if w.use_col {
        total = total.add(col.scale(T::c(w.lambda_col))?)?;
    }
    if w.use_spa {
        total = total.add(spa.scale(T::c(w.lambda_spa))?)?;
    }
    let values = LossValues { total: item(total), rec: item(rec), col: item(col), spa: item(spa) };
    Ok(LossTerms { total, values })
}
