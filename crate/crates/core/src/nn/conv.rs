use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::params::{Binding, Init, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc, Tensor};

/// Geometry of a 2-D convolution with zero padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn out_extent(&self, input: usize, kernel: usize) -> Option<usize> {
        let padded = input + 2 * self.padding;
        if padded < kernel || self.stride == 0 {
            return None;
        }
        Some((padded - kernel) / self.stride + 1)
    }
}

struct Dims {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
}

fn dims(x: &[usize], w: &[usize], g: ConvGeom) -> Result<Dims> {
    if x.len() != 4 || w.len() != 4 {
        return Err(Error::shape("conv2d", format!("input {x:?}, weight {w:?}")));
    }
    if x[1] != w[1] {
        return Err(Error::shape("conv2d", format!("input channels {} vs weight {:?}", x[1], w)));
    }
    let ho = g.out_extent(x[2], w[2]);
    let wo = g.out_extent(x[3], w[3]);
    let (Some(ho), Some(wo)) = (ho, wo) else {
        return Err(Error::shape("conv2d", format!("kernel {w:?} larger than padded input {x:?}")));
    };
    Ok(Dims { n: x[0], cin: x[1], h: x[2], w: x[3], cout: w[0], kh: w[2], kw: w[3], ho, wo })
}

/// Unfolds one sample `(cin, h, w)` into `(cin·kh·kw, ho·wo)`.
fn im2col<T: Scalar>(x: &[T], d: &Dims, g: ConvGeom, cols: &mut [T]) {
    let hw = d.ho * d.wo;
    for c in 0..d.cin {
        for i in 0..d.kh {
            for j in 0..d.kw {
                let row = ((c * d.kh + i) * d.kw + j) * hw;
                for oy in 0..d.ho {
                    let y = (oy * g.stride + i) as isize - g.padding as isize;
                    for ox in 0..d.wo {
                        let xx = (ox * g.stride + j) as isize - g.padding as isize;
                        cols[row + oy * d.wo + ox] = if y >= 0 && (y as usize) < d.h && xx >= 0 && (xx as usize) < d.w {
                            x[(c * d.h + y as usize) * d.w + xx as usize]
                        } else {
                            T::zero()
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], d: &Dims, g: ConvGeom, x: &mut [T]) {
    let hw = d.ho * d.wo;
    for c in 0..d.cin {
        for i in 0..d.kh {
            for j in 0..d.kw {
                let row = ((c * d.kh + i) * d.kw + j) * hw;
                for oy in 0..d.ho {
                    let y = (oy * g.stride + i) as isize - g.padding as isize;
                    if y < 0 || y as usize >= d.h {
                        continue;
                    }
                    for ox in 0..d.wo {
                        let xx = (ox * g.stride + j) as isize - g.padding as isize;
                        if xx >= 0 && (xx as usize) < d.w {
                            x[(c * d.h + y as usize) * d.w + xx as usize] += cols[row + oy * d.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `x` (N, Cin, H, W) with `weight` (Cout, Cin, kh, kw)
/// plus `bias` (Cout).
pub fn conv2d<'t, T: Scalar>(
    x: Var<'t, T>,
    weight: Var<'t, T>,
    bias: Var<'t, T>,
    geom: ConvGeom,
) -> Result<Var<'t, T>> {
    let xv = x.value();
    let wv = weight.value();
    let bv = bias.value();
    let d = dims(xv.shape(), wv.shape(), geom)?;
    if bv.shape() != [d.cout] {
        return Err(Error::shape("conv2d", format!("bias {:?} for {} output channels", bv.shape(), d.cout)));
    }
    let k = d.cin * d.kh * d.kw;
    let hw = d.ho * d.wo;
    let mut cols = vec![T::zero(); k * hw];
    let mut out = vec![T::zero(); d.n * d.cout * hw];
    for n in 0..d.n {
        im2col(&xv.data()[n * d.cin * d.h * d.w..(n + 1) * d.cin * d.h * d.w], &d, geom, &mut cols);
        let o = &mut out[n * d.cout * hw..(n + 1) * d.cout * hw];
        for (co, chunk) in o.chunks_mut(hw).enumerate() {
            chunk.fill(bv.data()[co]);
        }
        gemm_acc(d.cout, k, hw, wv.data(), &cols, o);
    }
    let out = Tensor::new(vec![d.n, d.cout, d.ho, d.wo], out)?;
    x.tape().record(
        "conv2d",
        out,
        &[x, weight, bias],
        Box::new(move |ctx| {
            let xv = &ctx.inputs[0];
            let wv = &ctx.inputs[1];
            let d = dims(xv.shape(), wv.shape(), geom)?;
            let k = d.cin * d.kh * d.kw;
            let hw = d.ho * d.wo;
            let g = ctx.grad.data();
            let mut gx = ctx.needs[0].then(|| vec![T::zero(); xv.numel()]);
            let mut gw = vec![T::zero(); wv.numel()];
            let mut gb = vec![T::zero(); d.cout];
            let mut cols = vec![T::zero(); k * hw];
            let mut dcols = vec![T::zero(); k * hw];
            let sample = d.cin * d.h * d.w;
            for n in 0..d.n {
                let gn = &g[n * d.cout * hw..(n + 1) * d.cout * hw];
                for (co, chunk) in gn.chunks(hw).enumerate() {
                    gb[co] += chunk.iter().copied().sum::<T>();
                }
                if ctx.needs[1] {
                    im2col(&xv.data()[n * sample..(n + 1) * sample], &d, geom, &mut cols);
                    gemm_nt_acc(d.cout, hw, k, gn, &cols, &mut gw);
                }
                if let Some(gx) = gx.as_mut() {
                    dcols.fill(T::zero());
                    gemm_tn_acc(k, d.cout, hw, wv.data(), gn, &mut dcols);
                    col2im(&dcols, &d, geom, &mut gx[n * sample..(n + 1) * sample]);
                }
            }
            Ok(vec![
                gx.map(|v| Tensor::new(xv.shape().to_vec(), v)).transpose()?,
                Some(Tensor::new(wv.shape().to_vec(), gw)?),
                Some(Tensor::new(vec![d.cout], gb)?),
            ])
        }),
    )
}

/// A convolution layer whose weights live in a [`ParamStore`] under
/// `{name}.weight` / `{name}.bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub name: String,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub geom: ConvGeom,
}

impl Conv2d {
    pub fn new(
        name: impl Into<String>,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        Conv2d { name: name.into(), in_ch, out_ch, kernel, geom: ConvGeom { stride, padding } }
    }

    /// `kernel`×`kernel`, stride 1, "same" padding.
    pub fn same(name: impl Into<String>, in_ch: usize, out_ch: usize, kernel: usize) -> Self {
        Self::new(name, in_ch, out_ch, kernel, 1, kernel / 2)
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn register<T: Scalar>(&self, store: &mut ParamStore<T>, seed: u64) {
        let fan_in = self.in_ch * self.kernel * self.kernel;
        store.init(
            &self.weight_name(),
            &[self.out_ch, self.in_ch, self.kernel, self.kernel],
            Init::KaimingUniform { fan_in },
            seed,
        );
        store.init(&self.bias_name(), &[self.out_ch], Init::KaimingUniform { fan_in }, seed);
    }

    pub fn forward<'t, T: Scalar>(&self, b: &Binding<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        conv2d(x, b.param(&self.weight_name())?, b.param(&self.bias_name())?, self.geom)
    }
}
