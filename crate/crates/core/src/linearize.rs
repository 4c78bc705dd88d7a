//! Local linearisation of nonlinear baseline models around an equilibrium,
//! enabling model-based encoder initialisation for non-LTI priors.

use nalgebra::{DMatrix, DVector};

use crate::baseline::Baseline;
use crate::error::{Error, Result};
use crate::lti::LtiSS;
use crate::reconstruct::{noiseless_maps, noisy_maps, ReconstructabilityMaps};

/// Tolerance on `||f(x*, u*) - x*||` for accepting an equilibrium.
pub const EQ_TOL: f64 = 1e-10;

/// A fixed point of the baseline transition under constant input.
#[derive(Debug, Clone)]
pub struct EquilibriumPoint {
    pub x_star: DVector<f64>,
    pub u_star: DVector<f64>,
    pub y_star: DVector<f64>,
}

/// The baseline's LTI approximation at an equilibrium.
#[derive(Debug, Clone)]
pub struct LinearizedModel {
    pub lti: LtiSS,
    pub eq: EquilibriumPoint,
}

fn fd_step(coord: f64) -> f64 {
    1e-6_f64.max(1e-6 * coord.abs())
}

/// Central finite-difference Jacobian of `f` w.r.t. its `dim`-dimensional
/// argument slot.
fn fd_jacobian(
    mut f: impl FnMut(&DVector<f64>) -> DVector<f64>,
    at: &DVector<f64>,
    out_dim: usize,
) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(out_dim, at.len());
    for j in 0..at.len() {
        let h = fd_step(at[j]);
        let mut plus = at.clone();
        plus[j] += h;
        let mut minus = at.clone();
        minus[j] -= h;
        let diff = (f(&plus) - f(&minus)) / (2.0 * h);
        jac.set_column(j, &diff);
    }
    jac
}

/// Solves `f(x, u*) = x` by damped Newton iteration on `g(x) = f(x, u*) - x`
/// with a finite-difference Jacobian, backtracking by halving (at most 20
/// times) whenever a full step does not reduce the residual.
pub fn find_equilibrium(
    model: &dyn Baseline,
    u_star: &DVector<f64>,
    x_guess: &DVector<f64>,
) -> Result<EquilibriumPoint> {
    const MAX_ITERS: usize = 100;
    let g = |x: &DVector<f64>| model.step(x, u_star) - x;
    let mut x = x_guess.clone();
    let mut res = g(&x);
    for iter in 0..MAX_ITERS {
        let norm = res.norm();
        if norm <= EQ_TOL {
            return Ok(EquilibriumPoint {
                y_star: model.output(&x, u_star),
                x_star: x,
                u_star: u_star.clone(),
            });
        }
        let jac = fd_jacobian(g, &x, x.len());
        let delta = jac
            .lu()
            .solve(&(-&res))
            .ok_or(Error::NoConvergence { iters: iter, residual: norm })?;
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..20 {
            let cand = &x + &delta * lambda;
            let cand_res = g(&cand);
            if cand_res.norm() < norm {
                x = cand;
                res = cand_res;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Err(Error::NoConvergence { iters: iter + 1, residual: norm });
        }
    }
    Err(Error::NoConvergence { iters: MAX_ITERS, residual: res.norm() })
}

/// Jacobians of the transition and output maps at the equilibrium, giving
/// the LTI approximation in deviation coordinates
/// `x~ = x - x*`, `u~ = u - u*`, `y~ = y - y*`.
///
/// Uses the model's analytic Jacobians when provided, central finite
/// differences otherwise.
pub fn jacobians(model: &dyn Baseline, eq: &EquilibriumPoint) -> Result<LinearizedModel> {
    let (a, b, c, d) = match model.analytic_jacobians(&eq.x_star, &eq.u_star) {
        Some(j) => j,
        None => {
            let a = fd_jacobian(|x| model.step(x, &eq.u_star), &eq.x_star, model.nx());
            let b = fd_jacobian(|u| model.step(&eq.x_star, u), &eq.u_star, model.nx());
            let c = fd_jacobian(|x| model.output(x, &eq.u_star), &eq.x_star, model.ny());
            let d = fd_jacobian(|u| model.output(&eq.x_star, u), &eq.u_star, model.ny());
            (a, b, c, d)
        }
    };
    Ok(LinearizedModel { lti: LtiSS::new(a, b, c, d)?, eq: eq.clone() })
}

/// Reconstructability maps of the linearised baseline, for windows of
/// deviations from the equilibrium, plus the state offset `x*`.
///
/// The maps estimate `x~_k` from `(y~, u~)` windows; the caller folds the
/// offsets into the encoder bias so the encoder output is
/// `maps(window - offsets) + x*`.
pub fn init_from_linearization(
    model: &dyn Baseline,
    eq: &EquilibriumPoint,
    n: usize,
    noise_gain: Option<DMatrix<f64>>,
) -> Result<(ReconstructabilityMaps, DVector<f64>)> {
    let lin = jacobians(model, eq)?;
    let maps = match noise_gain {
        Some(k) => {
            let ss = lin.lti.clone().with_gain(k)?;
            noisy_maps(&ss, n)?
        }
        None => noiseless_maps(&lin.lti, n)?,
    };
    Ok((maps, eq.x_star.clone()))
}
