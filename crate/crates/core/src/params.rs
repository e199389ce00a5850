//! Named parameter storage and its binding onto a tape.

use std::cell::RefCell;
use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autograd::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
}

/// How a parameter is initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Normal with the given std, redrawn outside ±2σ.
    TruncNormal(f64),
    /// `U(-1/√fan_in, 1/√fan_in)`, the Kaiming-uniform (a=√5) bound.
    KaimingUniform {
        fan_in: usize,
    },
}

/// Parameters keyed by dotted name. Ordered, so iteration is stable.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<T> {
    params: BTreeMap<String, Param<T>>,
}

/// Stable 64-bit FNV-1a, used to derive a per-parameter RNG stream so that a
/// parameter's initial value depends only on `(seed, name)`.
fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub(crate) fn init_tensor<T: Scalar>(shape: &[usize], init: Init, seed: u64, name: &str) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(name));
    match init {
        Init::Zeros => Tensor::zeros(shape.to_vec()),
        Init::Ones => Tensor::ones(shape.to_vec()),
        Init::TruncNormal(std) => Tensor::from_fn(shape.to_vec(), |_| loop {
            let z: f64 = StandardNormal.sample(&mut rng);
            if z.abs() <= 2.0 {
                break T::c(z * std);
            }
        }),
        Init::KaimingUniform { fan_in } => {
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            Tensor::rand_uniform(shape.to_vec(), -bound, bound, &mut rng)
        }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        self.params.insert(name.into(), Param { value, grad: None });
    }

    pub fn init(&mut self, name: &str, shape: &[usize], init: Init, seed: u64) {
        self.insert(name, init_tensor(shape, init, seed, name));
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.params.get(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor<T>> {
        self.params.get(name).map(|p| &p.value).ok_or_else(|| Error::Config(format!("unknown parameter {name}")))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.params
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param<T>)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param<T>)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn count(&self) -> usize {
        self.params.values().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.grad = None;
        }
    }

    /// Adds the gradients of every bound parameter onto its `grad` buffer.
    pub fn accumulate(&mut self, bound: &[(String, Var<'_, T>)], grads: &Gradients<T>) -> Result<()> {
        for (name, var) in bound {
            let Some(g) = grads.wrt(*var) else { continue };
            let p = self.params.get_mut(name).ok_or_else(|| Error::MissingGrad(name.clone()))?;
            match &mut p.grad {
                Some(acc) => acc.add_assign(g)?,
                slot @ None => *slot = Some(g.clone()),
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, p)| (k.clone(), Param { value: p.value.cast(), grad: p.grad.as_ref().map(|g| g.cast()) }))
                .collect(),
        }
    }

    /// Global L2 norm of all gradients present.
    pub fn grad_norm(&self) -> T {
        let mut s = T::zero();
        for p in self.params.values() {
            if let Some(g) = &p.grad {
                s += g.data().iter().map(|&v| v * v).sum();
            }
        }
        s.sqrt()
    }
}

/// Lazily places store parameters on a tape as leaves.
pub struct Binding<'t, 's, T: Scalar> {
    tape: &'t Tape<T>,
    store: &'s ParamStore<T>,
    bound: RefCell<BTreeMap<String, Var<'t, T>>>,
}

impl<'t, 's, T: Scalar> Binding<'t, 's, T> {
    pub fn new(tape: &'t Tape<T>, store: &'s ParamStore<T>) -> Self {
        Binding { tape, store, bound: RefCell::new(BTreeMap::new()) }
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn param(&self, name: &str) -> Result<Var<'t, T>> {
        if let Some(v) = self.bound.borrow().get(name) {
            return Ok(*v);
        }
        let value = self.store.value(name)?.clone();
        let v = self.tape.var(value);
        self.bound.borrow_mut().insert(name.to_string(), v);
        Ok(v)
    }

    /// Names and vars bound so far.
    pub fn bound(&self) -> Vec<(String, Var<'t, T>)> {
        self.bound.borrow().iter().map(|(k, v)| (k.clone(), *v)).collect()
    }

    /// Releases the store borrow, keeping the tape handles.
    pub fn into_bound(self) -> Vec<(String, Var<'t, T>)> {
        self.bound.into_inner().into_iter().collect()
    }
}
