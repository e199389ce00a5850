use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Output shape and, for each output element, the flat source offset of
/// depth-to-space with factor `r`:
/// `out[n][c][y][x] = in[n][c·r² + (y%r)·r + x%r][y/r][x/r]`.
fn shuffle_map(shape: &[usize], r: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    if shape.len() != 4 || r == 0 || !shape[1].is_multiple_of(r * r) {
        return Err(Error::shape("pixel_shuffle", format!("{shape:?} with factor {r}")));
    }
    let (n, cin, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let c = cin / (r * r);
    let (ho, wo) = (h * r, w * r);
    let mut idx = Vec::with_capacity(n * cin * h * w);
    for b in 0..n {
        for ch in 0..c {
            for y in 0..ho {
                for x in 0..wo {
                    let src_c = ch * r * r + (y % r) * r + x % r;
                    idx.push(((b * cin + src_c) * h + y / r) * w + x / r);
                }
            }
        }
    }
    Ok((vec![n, c, ho, wo], idx))
}

/// `(N, C·r², H, W)` → `(N, C, rH, rW)`.
pub fn pixel_shuffle<'t, T: Scalar>(x: Var<'t, T>, r: usize) -> Result<Var<'t, T>> {
    let (shape, idx) = shuffle_map(&x.shape(), r)?;
    x.gather(shape, idx.into())
}

pub fn pixel_shuffle_tensor<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (shape, idx) = shuffle_map(x.shape(), r)?;
    x.gather(shape, &idx)
}

/// `(N, C, rH, rW)` → `(N, C·r², H, W)`, the exact inverse of
/// [`pixel_shuffle_tensor`].
pub fn pixel_unshuffle_tensor<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() != 4 || r == 0 || !s[2].is_multiple_of(r) || !s[3].is_multiple_of(r) {
        return Err(Error::shape("pixel_unshuffle", format!("{s:?} with factor {r}")));
    }
    let packed = [s[0], s[1] * r * r, s[2] / r, s[3] / r];
    let (_, fwd) = shuffle_map(&packed, r)?;
    let mut inv = vec![0; fwd.len()];
    for (i, &src) in fwd.iter().enumerate() {
        inv[src] = i;
    }
    x.gather(packed.to_vec(), &inv)
}
