use crate::autograd::Var;
use crate::error::Result;
use crate::params::{Binding, Init, ParamStore};
use crate::scalar::Scalar;

/// `y = x · W + b` over the last axis; `W` is stored `(in, out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, in_dim: usize, out_dim: usize) -> Self {
        Linear { name: name.into(), in_dim, out_dim }
    }

    pub fn register<T: Scalar>(&self, store: &mut ParamStore<T>, seed: u64) {
        store.init(&format!("{}.weight", self.name), &[self.in_dim, self.out_dim], Init::TruncNormal(0.02), seed);
        store.init(&format!("{}.bias", self.name), &[self.out_dim], Init::Zeros, seed);
    }

    pub fn forward<'t, T: Scalar>(&self, b: &Binding<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let w = b.param(&format!("{}.weight", self.name))?;
        let bias = b.param(&format!("{}.bias", self.name))?;
        x.matmul(w)?.add(bias)
    }
}
