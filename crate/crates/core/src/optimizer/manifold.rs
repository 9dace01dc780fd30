//! Unit-modulus quadratic minimization by Riemannian conjugate gradient.
//!
//! Minimizes `f(θ) = θ^H U θ − 2 Re{θ^H v}` over `|θ_n| = 1`. The manifold is a
//! product of circles; tangent vectors at `θ` satisfy `Re{z_n θ_n^*} = 0`.
//! Directions follow Polak-Ribière+ with vector transport by projection, and
//! steps are accepted by Armijo backtracking starting from the minimizer of the
//! second-order model along the direction (Riemannian Hessian). A first trial
//! that passes is doubled while the objective keeps falling.

use crate::linalg::{real_inner, CMat, CVec, C64};

const ARMIJO_C: f64 = 1e-4;
const ARMIJO_TRIALS: usize = 30;

#[derive(Clone, Debug, PartialEq)]
pub struct ManifoldProblem {
    pub umat: CMat,
    pub v: CVec,
    pub theta0: CVec,
}

impl ManifoldProblem {
    pub fn objective(&self, theta: &CVec) -> f64 {
        (theta.dotc(&(&self.umat * theta))).re - 2.0 * theta.dotc(&self.v).re
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RcgOutcome {
    pub theta: CVec,
    pub objective: f64,
    /// Objective after each accepted step, starting at `theta0`.
    pub history: Vec<f64>,
    pub iterations: usize,
    /// Riemannian gradient norm of the scaled problem at the returned point.
    pub grad_norm: f64,
    /// Set when the line search failed before reaching `tol`.
    pub degraded: bool,
}

/// Per-element retraction `θ_n / |θ_n|`; zeros map to 1.
pub fn retract(z: &CVec) -> CVec {
    z.map(|x| {
        let r = x.norm();
        if r > 0.0 {
            x / r
        } else {
            C64::from(1.0)
        }
    })
}

/// Projection onto the tangent space at `theta`.
pub fn project(theta: &CVec, z: &CVec) -> CVec {
    CVec::from_fn(z.len(), |i, _| z[i] - theta[i] * (z[i] * theta[i].conj()).re)
}

/// Riemannian conjugate gradient. `tol` applies to the gradient norm of the
/// problem divided by `max(||U||_F, ||v||)`.
pub fn rcg_unit_modulus(problem: &ManifoldProblem, tol: f64, max_iters: usize) -> RcgOutcome {
    let mut theta = retract(&problem.theta0);
    let scale = problem.umat.norm().max(problem.v.norm());
    let f_full = problem.objective(&theta);
    if scale == 0.0 || theta.is_empty() {
        return RcgOutcome {
            theta,
            objective: f_full,
            history: vec![f_full],
            iterations: 0,
            grad_norm: 0.0,
            degraded: false,
        };
    }
    let u = &problem.umat / C64::from(scale);
    let v = &problem.v / C64::from(scale);
    let f = |t: &CVec| (t.dotc(&(&u * t))).re - 2.0 * t.dotc(&v).re;
    let residual = |t: &CVec| &u * t - &v;

    let mut fx = f(&theta);
    let mut res = residual(&theta);
    let mut grad = project(&theta, &(&res * C64::from(2.0)));
    let mut dir = -&grad;
    let mut history = vec![fx * scale];
    let mut degraded = false;
    let mut iterations = 0;
    let dim = theta.len() as f64;
    let rounding = 16.0 * f64::EPSILON * (dim + 2.0 * dim.sqrt());

    while iterations < max_iters {
        let gnorm2 = grad.norm_squared();
        if gnorm2.sqrt() <= tol {
            break;
        }
        let mut slope = real_inner(&grad, &dir);
        if slope >= 0.0 {
            dir = -&grad;
            slope = -gnorm2;
        }
        let dmax = dir.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let normal: f64 = (0..theta.len()).map(|i| 2.0 * (theta[i].conj() * res[i]).re * dir[i].norm_sqr()).sum();
        let curvature = 2.0 * dir.dotc(&(&u * &dir)).re - normal;
        let cap = std::f64::consts::PI / dmax;
        let mut step = if curvature > 0.0 { (-slope / curvature).min(cap) } else { cap };
        if !(step > 0.0) {
            step = cap;
        }
        let mut expand = step < cap;
        let mut accepted = None;
        for trial in 0..ARMIJO_TRIALS {
            let cand = retract(&(&theta + &dir * C64::from(step)));
            let fc = f(&cand);
            if fc <= fx + ARMIJO_C * step * slope {
                accepted = Some((cand, fc));
                break;
            }
            // below the rounding level of f, descent is judged by the gradient
            if fc <= fx + rounding && project(&cand, &residual(&cand)).norm_squared() * 4.0 < gnorm2 {
                accepted = Some((cand, fc));
                expand = false;
                break;
            }
            if trial == 0 {
                expand = false;
            }
            step *= 0.5;
        }
        // the ambient curvature can overstate the curvature along the circle
        if expand {
            while let Some((_, best)) = &accepted {
                let longer = 2.0 * step;
                if longer > cap {
                    break;
                }
                let cand = retract(&(&theta + &dir * C64::from(longer)));
                let fc = f(&cand);
                if fc >= *best {
                    break;
                }
                step = longer;
                accepted = Some((cand, fc));
            }
        }
        let Some((next, fnext)) = accepted else {
            degraded = true;
            break;
        };
        iterations += 1;
        let next_res = residual(&next);
        let next_grad = project(&next, &(&next_res * C64::from(2.0)));
        let moved_grad = project(&next, &grad);
        let moved_dir = project(&next, &dir);
        let beta = (real_inner(&next_grad, &(&next_grad - &moved_grad)) / gnorm2).max(0.0);
        dir = -&next_grad + moved_dir * C64::from(beta);
        theta = next;
        fx = fnext;
        res = next_res;
        grad = next_grad;
        history.push(fx * scale);
    }
    RcgOutcome {
        objective: problem.objective(&theta),
        grad_norm: grad.norm(),
        theta,
        history,
        iterations,
        degraded,
    }
}
