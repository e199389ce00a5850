//! Central-difference gradient checking in f64.

use std::fmt;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::data::{procedural_image, render_exposure, to_tensor, Procedural};
use crate::error::{Error, Result};
use crate::losses::{total_loss, LossWeights};
use crate::model::{CitConfig, CitModel};
use crate::params::{Binding, ParamStore};

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckConfig {
    pub h: f64,
    /// Entries probed per parameter tensor (all of them if smaller).
    pub samples: usize,
    pub tol: f64,
    /// Denominator floor so near-zero gradients compare absolutely.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig { h: 1e-5, samples: 4, tol: 1e-4, floor: 1e-6, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub groups: Vec<GroupReport>,
    pub tol: f64,
}

impl GradcheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.max_rel_err <= self.tol)
    }

    pub fn failures(&self) -> impl Iterator<Item = &GroupReport> {
        self.groups.iter().filter(|g| g.max_rel_err > self.tol)
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.groups.iter().map(|g| g.name.len()).max().unwrap_or(5).max(5);
        writeln!(f, "{:<width$}  {:>7}  {:>12}  status", "param", "checked", "max_rel_err")?;
        for g in &self.groups {
            let status = if g.max_rel_err <= self.tol { "ok" } else { "FAIL" };
            writeln!(f, "{:<width$}  {:>7}  {:>12.3e}  {status}", g.name, g.checked, g.max_rel_err)?;
        }
        write!(
            f,
            "max {:.3e} (tol {:.1e}): {}",
            self.max_rel_err(),
            self.tol,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

/// Checks `loss(params)` against central differences for sampled entries
/// of every parameter in `store`.
pub fn check<F>(store: &ParamStore<f64>, loss: F, cfg: &GradcheckConfig) -> Result<GradcheckReport>
where
    F: for<'t> Fn(&Binding<'t, '_, f64>) -> Result<Var<'t, f64>>,
{
    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let tape = Tape::no_grad();
        let b = Binding::new(&tape, s);
        loss(&b)?.value().item()
    };
    let tape = Tape::new();
    let b = Binding::new(&tape, store);
    let grads = loss(&b)?.backward()?;
    let bound = b.into_bound();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut work = store.clone();
    let mut groups = Vec::with_capacity(store.len());
    for (name, p) in store.iter() {
        let n = p.value.numel();
        let analytic = bound.iter().find(|(k, _)| k == name).and_then(|(_, v)| grads.wrt(*v));
        let idx = sample(&mut rng, n, cfg.samples.min(n)).into_vec();
        let mut worst: f64 = 0.0;
        for &i in &idx {
            let a = analytic.map_or(0.0, |g| g.data()[i]);
            let orig = p.value.data()[i];
            work.value_mut(name)?.data_mut()[i] = orig + cfg.h;
            let up = eval(&work)?;
            work.value_mut(name)?.data_mut()[i] = orig - cfg.h;
            let down = eval(&work)?;
            work.value_mut(name)?.data_mut()[i] = orig;
            let num = (up - down) / (2.0 * cfg.h);
            let err = (a - num).abs() / a.abs().max(num.abs()).max(cfg.floor);
            if !err.is_finite() {
                return Err(Error::NonFiniteActivation(format!("gradcheck {name}[{i}]")));
            }
            worst = worst.max(err);
        }
        groups.push(GroupReport { name: name.clone(), checked: idx.len(), max_rel_err: worst });
    }
    Ok(GradcheckReport { groups, tol: cfg.tol })
}

/// Gradient check of the full objective on a small synthetic pair.
pub fn check_model(config: &CitConfig, size: usize, cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let model = CitModel::<f64>::new(config.clone())?;
    let gt = procedural_image(Procedural::Blobs, size, size, cfg.seed);
    let dark = render_exposure(&gt, -1.0, 1.0);
    let input = to_tensor::<f64>(&[&dark])?;
    let target = to_tensor::<f64>(&[&gt])?;
    let weights = LossWeights::default();
    check(
        &model.params,
        |b| {
            let tape = b.tape();
            let x = tape.constant(input.clone());
            let y = tape.constant(target.clone());
            let out = model.forward(b, x)?;
            Ok(total_loss(out, y, x, &weights)?.total)
        },
        cfg,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn quadratic_store() -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::from_f64([3], &[0.3, -1.2, 0.7]).unwrap());
        s
    }

    #[test]
    fn correct_op_passes() {
        let report = check(
            &quadratic_store(),
            |b| b.param("w")?.square()?.sum_all(),
            &GradcheckConfig { samples: 3, ..Default::default() },
        )
        .unwrap();
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn wrong_backward_is_caught() {
        // square whose backward claims d/dx x² = 3x
        fn broken<'t>(b: &Binding<'t, '_, f64>) -> Result<Var<'t, f64>> {
            let w = b.param("w")?;
            let v = w.value().map(|x| x * x);
            let y = b.tape().record(
                "bad_square",
                v,
                &[w],
                Box::new(|ctx| Ok(vec![Some(ctx.grad.mul(&ctx.inputs[0].scale(3.0))?)])),
            )?;
            y.sum_all()
        }
        let report = check(&quadratic_store(), broken, &GradcheckConfig { samples: 3, ..Default::default() }).unwrap();
        assert!(!report.passed());
        assert!((report.max_rel_err() - 1.0 / 3.0).abs() < 1e-6);
    }
}
