use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Mirror index without edge repetition (`reflect` mode), folded as many
/// times as needed so any pad width is valid.
pub fn reflect_index(p: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = p.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Reflect-pads the bottom and right edges of an NCHW tensor to
/// `(height, width)`.
pub fn reflect_pad<'t, T: Scalar>(x: Var<'t, T>, height: usize, width: usize) -> Result<Var<'t, T>> {
    let s = x.shape();
    if s.len() != 4 || height < s[2] || width < s[3] {
        return Err(Error::shape("reflect_pad", format!("{s:?} -> {height}x{width}")));
    }
    if height == s[2] && width == s[3] {
        return Ok(x);
    }
    let (h, w) = (s[2], s[3]);
    let planes = s[0] * s[1];
    let mut idx = Vec::with_capacity(planes * height * width);
    for p in 0..planes {
        for y in 0..height {
            let sy = reflect_index(y as isize, h);
            for xx in 0..width {
                idx.push((p * h + sy) * w + reflect_index(xx as isize, w));
            }
        }
    }
    x.gather(vec![s[0], s[1], height, width], idx.into())
}

/// Top-left `(height, width)` crop of an NCHW tensor.
pub fn crop<'t, T: Scalar>(x: Var<'t, T>, height: usize, width: usize) -> Result<Var<'t, T>> {
    let s = x.shape();
    if s.len() != 4 || height > s[2] || width > s[3] {
        return Err(Error::shape("crop", format!("{s:?} -> {height}x{width}")));
    }
    if height == s[2] && width == s[3] {
        return Ok(x);
    }
    x.narrow(2, 0, height)?.narrow(3, 0, width)
}
