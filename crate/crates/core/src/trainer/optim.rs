//! LAMB and AdamW, the warmup–cosine schedule and per-dataset rates.

use alloc::string::String;
use alloc::vec::Vec;

use crate::numerics::{GradSet, ParamId, ParamStore, Scalar, Tensor};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OptimError {
    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),
    #[error("optimizer state does not match the parameter store: {0}")]
    StateMismatch(String),
    #[error("invalid schedule: warmup {warmup} must be below total steps {total}")]
    Schedule { warmup: u64, total: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum OptimKind {
    Lamb,
    AdamW,
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OptimHyper {
    pub kind: OptimKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl OptimHyper {
    pub fn lamb(weight_decay: f64) -> Self {
        OptimHyper { kind: OptimKind::Lamb, beta1: 0.9, beta2: 0.999, eps: 1e-6, weight_decay }
    }

    pub fn adamw(weight_decay: f64) -> Self {
        OptimHyper { kind: OptimKind::AdamW, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay }
    }
}

/// Moments and step count of one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    pub step: u64,
}

/// First/second moments per parameter, aligned with a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState<T> {
    pub hyper: OptimHyper,
    pub moments: Vec<Moments<T>>,
    /// Optimizer steps taken.
    pub step: u64,
}

impl<T: Scalar> OptimState<T> {
    pub fn new(store: &ParamStore<T>, hyper: OptimHyper) -> Self {
        let moments = store
            .iter()
            .map(|(_, p)| Moments { m: Tensor::zeros(p.value.shape()), v: Tensor::zeros(p.value.shape()), step: 0 })
            .collect();
        OptimState { hyper, moments, step: 0 }
    }

    /// Extends the state with zero moments for parameters added since.
    pub fn sync(&mut self, store: &ParamStore<T>) {
        for (_, p) in store.iter().skip(self.moments.len()) {
            self.moments.push(Moments { m: Tensor::zeros(p.value.shape()), v: Tensor::zeros(p.value.shape()), step: 0 });
        }
    }
}

/// One update of every trainable parameter that received a gradient.
/// `lr(id)` gives the learning rate of each parameter. Parameters without a
/// gradient are left untouched, moments included.
pub fn optim_step<T: Scalar>(
    store: &mut ParamStore<T>,
    grads: &GradSet<T>,
    state: &mut OptimState<T>,
    lr: impl Fn(ParamId) -> f64,
) -> Result<(), OptimError> {
    if state.moments.len() != store.len() || grads.grads.len() != store.len() {
        return Err(OptimError::StateMismatch(alloc::format!(
            "{} parameters, {} moment sets, {} gradients",
            store.len(),
            state.moments.len(),
            grads.grads.len()
        )));
    }
    for (id, p) in store.iter() {
        if let Some(g) = grads.get(id) {
            if p.trainable && !g.is_finite() {
                return Err(OptimError::NonFiniteGradient(p.name.clone()));
            }
        }
    }
    let h = state.hyper;
    let ids: Vec<ParamId> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let p = store.get_mut(id);
        let Some(g) = grads.get(id) else { continue };
        if !p.trainable {
            continue;
        }
        let mo = &mut state.moments[id.0];
        if mo.m.shape() != p.value.shape() || g.shape() != p.value.shape() {
            return Err(OptimError::StateMismatch(p.name.clone()));
        }
        mo.step += 1;
        let t = mo.step as f64;
        let (b1, b2) = (h.beta1, h.beta2);
        let c1 = 1.0 - libm::pow(b1, t);
        let c2 = 1.0 - libm::pow(b2, t);
        let wd = if p.no_decay { 0.0 } else { h.weight_decay };
        let n = p.value.len();
        let mut r = Vec::with_capacity(n);
        {
            let (m, v) = (mo.m.data_mut(), mo.v.data_mut());
            for i in 0..n {
                let gi = g.data()[i].f64();
                let mi = b1 * m[i].f64() + (1.0 - b1) * gi;
                let vi = b2 * v[i].f64() + (1.0 - b2) * gi * gi;
                m[i] = T::of(mi);
                v[i] = T::of(vi);
                let mhat = mi / c1;
                let vhat = vi / c2;
                r.push(mhat / (libm::sqrt(vhat) + h.eps) + wd * p.value.data()[i].f64());
            }
        }
        let step = lr(id)
            * match h.kind {
                OptimKind::AdamW => 1.0,
                OptimKind::Lamb => trust_ratio(p.value.data(), &r),
            };
        for (w, ri) in p.value.data_mut().iter_mut().zip(&r) {
            *w = T::of(w.f64() - step * ri);
        }
    }
    state.step += 1;
    Ok(())
}

/// `‖w‖/‖r‖` clamped to `[0, 10]`; 1 when either norm is zero.
pub fn trust_ratio<T: Scalar>(w: &[T], r: &[f64]) -> f64 {
    let wn = libm::sqrt(w.iter().map(|x| x.f64() * x.f64()).sum::<f64>());
    let rn = libm::sqrt(r.iter().map(|x| x * x).sum::<f64>());
    if wn == 0.0 || rn == 0.0 {
        1.0
    } else {
        (wn / rn).clamp(0.0, 10.0)
    }
}

/// Linear warmup over `warmup` steps, then cosine decay to zero at `total`.
pub fn lr_schedule(step: u64, warmup: u64, total: u64, base: f64) -> Result<f64, OptimError> {
    if warmup >= total {
        return Err(OptimError::Schedule { warmup, total });
    }
    let s = step.min(total);
    if s < warmup {
        return Ok(base * s as f64 / warmup as f64);
    }
    let frac = (s - warmup) as f64 / (total - warmup) as f64;
    Ok(base * 0.5 * (1.0 + libm::cos(core::f64::consts::PI * frac)))
}

/// Reference size and clamp bounds of the per-dataset learning rate.
pub const LR_REF_NODES: f64 = 10_000.0;
pub const LR_MIN: f64 = 1e-4;
pub const LR_MAX: f64 = 1.2e-2;

/// `clamp(base·√(N_ref/N), LR_MIN, LR_MAX)`, or `explicit` verbatim.
pub fn dataset_lr(base: f64, num_nodes: usize, explicit: Option<f64>) -> f64 {
    if let Some(lr) = explicit {
        return lr;
    }
    let n = num_nodes.max(1) as f64;
    (base * libm::sqrt(LR_REF_NODES / n)).clamp(LR_MIN, LR_MAX)
}
