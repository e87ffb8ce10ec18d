use alloc::string::String;
use alloc::vec::Vec;

use super::{Bound, NumericsError, ParamStore, Tape, Var};
use crate::rng::{rng_for, shuffle};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub eps: f64,
    /// Pass threshold on the maximum relative error.
    pub tol: f64,
    /// Coordinates checked per tensor; larger tensors are subsampled.
    pub max_coords: usize,
    pub seed: u64,
    /// Lower bound on the relative-error denominator.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { eps: 1e-6, tol: 1e-4, max_coords: 64, seed: 0, floor: 1e-6 }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `(parameter name, max relative error over checked coordinates)`.
    pub per_param: Vec<(String, f64)>,
    pub max_rel_error: f64,
    pub tol: f64,
    pub coords_checked: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tol
    }

    pub fn worst(&self) -> Option<&(String, f64)> {
        self.per_param.iter().max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares reverse-mode gradients of a scalar loss against central
/// differences `(f(θ+ε) − f(θ−ε)) / 2ε` for every trainable parameter.
pub fn grad_check<F, E>(
    mut loss_fn: F,
    params: &mut ParamStore<f64>,
    cfg: GradCheckConfig,
) -> Result<GradCheckReport, E>
where
    F: FnMut(&mut Tape<f64>, &Bound) -> Result<Var, E>,
    E: From<NumericsError>,
{
    fn eval<F, E>(loss_fn: &mut F, params: &ParamStore<f64>) -> Result<f64, E>
    where
        F: FnMut(&mut Tape<f64>, &Bound) -> Result<Var, E>,
    {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let loss = loss_fn(&mut tape, &bound)?;
        Ok(tape.value(loss).item())
    }

    let first = eval(&mut loss_fn, params)?;
    let second = eval(&mut loss_fn, params)?;
    if first.to_bits() != second.to_bits() {
        return Err(NumericsError::NonDeterministic { first, second }.into());
    }

    let analytic = {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let loss = loss_fn(&mut tape, &bound)?;
        let grads = tape.backward(loss).map_err(E::from)?;
        bound.collect(grads)
    };

    let mut rng = rng_for(cfg.seed, 0x6772_6164);
    let ids: Vec<_> = params.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    let mut report = GradCheckReport { per_param: Vec::new(), max_rel_error: 0.0, tol: cfg.tol, coords_checked: 0 };
    for id in ids {
        let n = params.get(id).value.len();
        let mut coords: Vec<usize> = (0..n).collect();
        if n > cfg.max_coords {
            shuffle(&mut rng, &mut coords);
            coords.truncate(cfg.max_coords);
        }
        let mut worst = 0.0f64;
        for c in coords {
            let a = analytic.get(id).map_or(0.0, |g| g.data()[c]);
            let orig = params.get(id).value.data()[c];
            params.get_mut(id).value.data_mut()[c] = orig + cfg.eps;
            let up = eval(&mut loss_fn, params)?;
            params.get_mut(id).value.data_mut()[c] = orig - cfg.eps;
            let down = eval(&mut loss_fn, params)?;
            params.get_mut(id).value.data_mut()[c] = orig;
            let num = (up - down) / (2.0 * cfg.eps);
            worst = worst.max(relative_error(a, num, cfg.floor));
            report.coords_checked += 1;
        }
        report.max_rel_error = report.max_rel_error.max(worst);
        report.per_param.push((params.get(id).name.clone(), worst));
    }
    Ok(report)
}
