//! Dense row-major tensors.
//!
//! Storage is always contiguous; permutes and other rearrangements
//! materialize a new buffer. These are the values carried by the tape in
//! [`crate::autograd`]; everything here is gradient-free.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Trailing-dimension broadcast of two shapes.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = if da == db || db == 1 {
            da
        } else if da == 1 {
            db
        } else {
            return Err(Error::shape("broadcast", format!("{a:?} vs {b:?}")));
        };
    }
    Ok(out)
}

/// Strides of `shape` laid against the broadcast `target`, with zero stride on
/// broadcast axes.
fn broadcast_strides(shape: &[usize], target: &[usize]) -> Vec<usize> {
    let own = strides(shape);
    let offset = target.len() - shape.len();
    (0..target.len()).map(|i| if i < offset || shape[i - offset] == 1 { 0 } else { own[i - offset] }).collect()
}

/// Flat source offsets for every element of `target` when reading a tensor of
/// `shape` through broadcasting.
pub(crate) fn broadcast_offsets(shape: &[usize], target: &[usize]) -> Vec<usize> {
    let bs = broadcast_strides(shape, target);
    let n = numel(target);
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; target.len()];
    let mut off = 0usize;
    for _ in 0..n {
        out.push(off);
        for d in (0..target.len()).rev() {
            idx[d] += 1;
            off += bs[d];
            if idx[d] < target[d] {
                break;
            }
            off -= bs[d] * idx[d];
            idx[d] = 0;
        }
    }
    out
}

/// `out[m×n] += a[m×k] · b[k×n]`
pub(crate) fn gemm_acc<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m×n] += a[m×k] · b[n×k]ᵀ`
pub(crate) fn gemm_nt_acc<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            out[i * n + j] += acc;
        }
    }
}

/// `out[m×n] += a[k×m]ᵀ · b[k×n]`
pub(crate) fn gemm_tn_acc<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == T::zero() {
                continue;
            }
            let row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// Batch layout of a broadcast matmul: output batch shape plus, per output
/// batch entry, the batch index into each operand.
pub(crate) struct MatmulPlan {
    pub batch: Vec<usize>,
    pub a_batch: Vec<usize>,
    pub b_batch: Vec<usize>,
    pub m: usize,
    pub k: usize,
    pub n: usize,
}

impl MatmulPlan {
    pub fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        if a.len() < 2 || b.len() < 2 {
            return Err(Error::shape("matmul", format!("rank < 2: {a:?} x {b:?}")));
        }
        let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
        let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
        if k != k2 {
            return Err(Error::shape("matmul", format!("inner dims {a:?} x {b:?}")));
        }
        let ab = &a[..a.len() - 2];
        let bb = &b[..b.len() - 2];
        let batch = broadcast_shape(ab, bb).map_err(|_| Error::shape("matmul", format!("batch dims {a:?} x {b:?}")))?;
        let a_batch = broadcast_offsets(ab, &batch);
        let b_batch = broadcast_offsets(bb, &batch);
        Ok(MatmulPlan { batch, a_batch, b_batch, m, k, n })
    }

    pub fn out_shape(&self) -> Vec<usize> {
        let mut s = self.batch.clone();
        s.push(self.m);
        s.push(self.n);
        s
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if shape.contains(&0) {
            return Err(Error::shape("new", format!("zero extent in {shape:?}")));
        }
        if numel(&shape) != data.len() {
            return Err(Error::shape(
                "new",
                format!("shape {shape:?} needs {} values, got {}", numel(&shape), data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    /// Builds from `f64` literals, converting to `T`.
    pub fn from_f64(shape: impl Into<Vec<usize>>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::c(v)).collect())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let n = numel(&shape);
        Tensor { shape, data: vec![value; n] }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Tensor { shape: vec![1], data: vec![value] }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        let data = (0..numel(&shape)).map(&mut f).collect();
        Tensor { shape, data }
    }

    /// Standard normal entries.
    pub fn randn<R: Rng + ?Sized>(shape: impl Into<Vec<usize>>, rng: &mut R) -> Self {
        Self::from_fn(shape, |_| {
            let v: f64 = StandardNormal.sample(rng);
            T::c(v)
        })
    }

    /// Uniform entries in `[lo, hi)`.
    pub fn rand_uniform<R: Rng + ?Sized>(shape: impl Into<Vec<usize>>, lo: f64, hi: f64, rng: &mut R) -> Self {
        Self::from_fn(shape, |_| T::c(rng.random_range(lo..hi)))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() != 1 {
            return Err(Error::NotScalar(self.shape.clone()));
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::c(v.to_f64().unwrap_or(f64::NAN))).collect(),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect()
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Elementwise combination under trailing-dimension broadcasting.
    pub fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape == other.shape {
            let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
            return Ok(Tensor { shape: self.shape.clone(), data });
        }
        let shape = broadcast_shape(&self.shape, &other.shape)?;
        if other.data.len() == 1 {
            let b = other.data[0];
            let ia = broadcast_offsets(&self.shape, &shape);
            let data = ia.iter().map(|&i| f(self.data[i], b)).collect();
            return Ok(Tensor { shape, data });
        }
        let ia = broadcast_offsets(&self.shape, &shape);
        let ib = broadcast_offsets(&other.shape, &shape);
        let data = ia.iter().zip(&ib).map(|(&i, &j)| f(self.data[i], other.data[j])).collect();
        Ok(Tensor { shape, data })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|v| v * k)
    }

    /// In-place `self += other` for identical shapes.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape("add_assign", format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Sums a broadcast result back down to `target`, the inverse of
    /// broadcasting for gradient flow.
    pub fn sum_to_shape(&self, target: &[usize]) -> Result<Self> {
        if self.shape == target {
            return Ok(self.clone());
        }
        let check = broadcast_shape(target, &self.shape)?;
        if check != self.shape {
            return Err(Error::shape("sum_to_shape", format!("{:?} -> {target:?}", self.shape)));
        }
        let offs = broadcast_offsets(target, &self.shape);
        let mut out = vec![T::zero(); numel(target)];
        for (&o, &v) in offs.iter().zip(&self.data) {
            out[o] += v;
        }
        Ok(Tensor { shape: target.to_vec(), data: out })
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if numel(&shape) != self.data.len() || shape.contains(&0) {
            return Err(Error::shape("reshape", format!("{:?} -> {shape:?}", self.shape)));
        }
        Ok(Tensor { shape, data: self.data.clone() })
    }

    /// Flat source index for each output element of `permute(axes)`.
    pub(crate) fn permute_indices(shape: &[usize], axes: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
        let rank = shape.len();
        let mut seen = vec![false; rank];
        if axes.len() != rank {
            return Err(Error::InvalidPermutation(axes.to_vec()));
        }
        for &a in axes {
            if a >= rank || seen[a] {
                return Err(Error::InvalidPermutation(axes.to_vec()));
            }
            seen[a] = true;
        }
        let in_strides = strides(shape);
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let n = numel(shape);
        let mut idx = vec![0usize; rank];
        let mut off = 0usize;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(off);
            for d in (0..rank).rev() {
                idx[d] += 1;
                off += src_strides[d];
                if idx[d] < out_shape[d] {
                    break;
                }
                off -= src_strides[d] * idx[d];
                idx[d] = 0;
            }
        }
        Ok((out_shape, out))
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Self> {
        let (shape, idx) = Self::permute_indices(&self.shape, axes)?;
        Ok(Tensor { shape, data: idx.iter().map(|&i| self.data[i]).collect() })
    }

    /// Swaps the last two axes.
    pub fn transpose(&self) -> Result<Self> {
        let r = self.rank();
        if r < 2 {
            return Err(Error::InvalidAxis { axis: 1, rank: r });
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(&axes)
    }

    /// `out[i] = self[indices[i]]`.
    pub fn gather(&self, shape: Vec<usize>, indices: &[usize]) -> Result<Self> {
        if numel(&shape) != indices.len() {
            return Err(Error::shape("gather", format!("{shape:?} vs {} indices", indices.len())));
        }
        let n = self.data.len();
        let mut data = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= n {
                return Err(Error::shape("gather", format!("index {i} out of {n}")));
            }
            data.push(self.data[i]);
        }
        Ok(Tensor { shape, data })
    }

    /// Inverse of [`Tensor::gather`] for gradients: accumulates into a tensor
    /// of `shape`.
    pub fn scatter_add(&self, shape: &[usize], indices: &[usize]) -> Self {
        let mut out = vec![T::zero(); numel(shape)];
        for (&i, &v) in indices.iter().zip(&self.data) {
            out[i] += v;
        }
        Tensor { shape: shape.to_vec(), data: out }
    }

    /// Batched matrix product with broadcast leading dimensions.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let plan = MatmulPlan::new(&self.shape, &other.shape)?;
        let (m, k, n) = (plan.m, plan.k, plan.n);
        let mut out = vec![T::zero(); plan.a_batch.len() * m * n];
        for (bi, (&ia, &ib)) in plan.a_batch.iter().zip(&plan.b_batch).enumerate() {
            gemm_acc(
                m,
                k,
                n,
                &self.data[ia * m * k..(ia + 1) * m * k],
                &other.data[ib * k * n..(ib + 1) * k * n],
                &mut out[bi * m * n..(bi + 1) * m * n],
            );
        }
        Ok(Tensor { shape: plan.out_shape(), data: out })
    }

    pub(crate) fn check_axes(&self, axes: &[usize]) -> Result<()> {
        for &a in axes {
            if a >= self.rank() {
                return Err(Error::InvalidAxis { axis: a, rank: self.rank() });
            }
        }
        Ok(())
    }

    /// Shape after reducing `axes` with `keepdims`.
    pub(crate) fn reduced_shape(&self, axes: &[usize], keepdims: bool) -> Vec<usize> {
        let mut out = Vec::new();
        for (d, &e) in self.shape.iter().enumerate() {
            if axes.contains(&d) {
                if keepdims {
                    out.push(1);
                }
            } else {
                out.push(e);
            }
        }
        if out.is_empty() {
            out.push(1);
        }
        out
    }

    /// For each element, the flat index of its slot in the keepdims-reduced
    /// tensor.
    pub(crate) fn reduce_slots(&self, axes: &[usize]) -> (Vec<usize>, Vec<usize>) {
        let kept: Vec<usize> =
            self.shape.iter().enumerate().map(|(d, &e)| if axes.contains(&d) { 1 } else { e }).collect();
        let slots = broadcast_offsets(&kept, &self.shape);
        (kept, slots)
    }

    pub fn sum_axes(&self, axes: &[usize], keepdims: bool) -> Result<Self> {
        self.check_axes(axes)?;
        let (kept, slots) = self.reduce_slots(axes);
        let mut out = vec![T::zero(); numel(&kept)];
        for (&s, &v) in slots.iter().zip(&self.data) {
            out[s] += v;
        }
        Ok(Tensor { shape: self.reduced_shape(axes, keepdims), data: out })
    }

    pub fn mean_axes(&self, axes: &[usize], keepdims: bool) -> Result<Self> {
        let s = self.sum_axes(axes, keepdims)?;
        let count = T::c((self.numel() / s.numel()) as f64);
        Ok(s.map(|v| v / count))
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::c(self.data.len() as f64)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }
}
