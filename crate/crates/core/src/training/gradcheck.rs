//! Central finite-difference validation of analytic gradients.

use serde::Serialize;

use crate::error::Result;
use crate::model::ModelParams;

use super::step::{loss_and_grad, BatchTensors, LossConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupError {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    /// Coordinates whose stencil straddled a kink.
    pub kinks: usize,
    /// Worst error at the primary step, before refinement.
    pub max_unrefined_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub step: f64,
    pub tolerance: f64,
    pub groups: Vec<GroupError>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tolerance
    }

    pub fn checked(&self) -> usize {
        self.groups.iter().map(|g| g.checked).sum()
    }

    pub fn kinks(&self) -> usize {
        self.groups.iter().map(|g| g.kinks).sum()
    }

    pub fn max_unrefined_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_unrefined_error).fold(0.0, f64::max)
    }
}

/// Denominator floor for the relative error.
pub const REL_FLOOR: f64 = 1e-8;

/// Ratio between the primary step and the refinement step.
pub const REFINE_FACTOR: f64 = 100.0;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let d = (analytic - numeric).abs();
    if d == 0.0 {
        return 0.0;
    }
    d / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn central<F: FnMut(&[f64]) -> Result<f64>>(f: &mut F, x: &mut [f64], i: usize, h: f64) -> Result<f64> {
    let orig = x[i];
    x[i] = orig + h;
    let up = f(x);
    x[i] = orig - h;
    let down = f(x);
    x[i] = orig;
    Ok((up? - down?) / (2.0 * h))
}

/// Compares `analytic` against central differences of `f` over the listed
/// coordinates of `x`, restoring `x` afterwards.
///
/// A coordinate whose error exceeds a tenth of `tolerance` at `step` is
/// re-evaluated at `step / REFINE_FACTOR`. If the error then falls below that
/// level the stencil had straddled a non-differentiable point (a rectifier or
/// absolute-value switch): the refined error is kept and the coordinate is
/// counted in `kinks`. A wrong analytic gradient fails at both steps.
pub fn check_gradients<F>(
    name: &str,
    mut f: F,
    x: &mut [f64],
    analytic: &[f64],
    coords: &[usize],
    step: f64,
    tolerance: f64,
) -> Result<GroupError>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut worst = (0.0, 0);
    let mut kinks = 0;
    let mut unrefined: f64 = 0.0;
    for &i in coords {
        let mut e = relative_error(analytic[i], central(&mut f, x, i, step)?);
        unrefined = unrefined.max(e);
        let suspect = 0.1 * tolerance;
        if e >= suspect {
            let refined = relative_error(analytic[i], central(&mut f, x, i, step / REFINE_FACTOR)?);
            if refined < suspect {
                kinks += 1;
                e = refined;
            }
        }
        if e > worst.0 {
            worst = (e, i);
        }
    }
    Ok(GroupError {
        name: name.to_string(),
        checked: coords.len(),
        max_rel_error: worst.0,
        worst_index: worst.1,
        kinks,
        max_unrefined_error: unrefined,
    })
}

/// Checks the gradient of the weighted total loss with respect to every
/// parameter tensor, in 64-bit arithmetic. At most `per_group` evenly spaced
/// entries of each tensor are perturbed (`None` checks all).
pub fn check_model_gradients(
    params: &ModelParams<f64>,
    batch: &BatchTensors<f64>,
    cfg: &LossConfig,
    step: f64,
    tolerance: f64,
    per_group: Option<usize>,
) -> Result<GradCheckReport> {
    let (_, grads) = loss_and_grad(params, batch, cfg, true)?;
    let grads = grads.expect("gradient requested");
    let mut work = params.clone();
    let mut groups = Vec::new();
    let n_groups = params.params().len();
    for g in 0..n_groups {
        let analytic = grads.params()[g].data.clone();
        let name = params.params()[g].name.clone();
        let len = analytic.len();
        let coords: Vec<usize> = match per_group {
            Some(k) if k < len => (0..k).map(|j| j * len / k).collect(),
            _ => (0..len).collect(),
        };
        let mut x = work.params()[g].data.clone();
        let report = check_gradients(
            &name,
            |v| {
                work.params_mut()[g].data.copy_from_slice(v);
                Ok(loss_and_grad(&work, batch, cfg, false)?.0.total)
            },
            &mut x,
            &analytic,
            &coords,
            step,
            tolerance,
        )?;
        work.params_mut()[g].data.copy_from_slice(&x);
        groups.push(report);
    }
    Ok(GradCheckReport {
        step,
        tolerance,
        groups,
    })
}
