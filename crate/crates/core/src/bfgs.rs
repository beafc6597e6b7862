//! Dense BFGS with Armijo backtracking and optional box projection.

use nalgebra::{SMatrix, SVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop once the objective drops to or below this value.
    pub f_tol: f64,
    /// Stop once the gradient norm drops below this value.
    pub g_tol: f64,
    /// Armijo sufficient-decrease constant.
    pub c1: f64,
    /// Backtracking shrink factor.
    pub shrink: f64,
    pub max_backtracks: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            max_iter: 500,
            f_tol: 1e-18,
            g_tol: 1e-12,
            c1: 1e-4,
            shrink: 0.5,
            max_backtracks: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    ObjectiveTolerance,
    GradientTolerance,
    LineSearchFailed,
    MaxIterations,
    NonFinite,
}

#[derive(Debug, Clone)]
pub struct BfgsResult<const N: usize> {
    pub x: SVector<f64, N>,
    pub f: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub reason: StopReason,
}

/// Minimizes `f` from `x0`; `grad` returns its gradient.
///
/// Line-search trials only evaluate `f`. `project` maps an iterate back into
/// the feasible box after each step; pass the identity for unconstrained
/// problems.
pub fn minimize<const N: usize, F, G, P>(
    mut f_of: F,
    mut grad: G,
    project: P,
    x0: SVector<f64, N>,
    opts: &BfgsOptions,
) -> BfgsResult<N>
where
    F: FnMut(&SVector<f64, N>) -> f64,
    G: FnMut(&SVector<f64, N>) -> SVector<f64, N>,
    P: Fn(&SVector<f64, N>) -> SVector<f64, N>,
{
    let mut x = project(&x0);
    let mut f = f_of(&x);
    let mut g = grad(&x);
    let mut h = SMatrix::<f64, N, N>::identity();
    let mut first_update = true;

    let finish = |x, f, g: &SVector<f64, N>, iterations, reason| BfgsResult {
        x,
        f,
        grad_norm: g.norm(),
        iterations,
        reason,
    };

    for iter in 0..opts.max_iter {
        if !f.is_finite() || !g.iter().all(|v| v.is_finite()) {
            return finish(x, f, &g, iter, StopReason::NonFinite);
        }
        if f <= opts.f_tol {
            return finish(x, f, &g, iter, StopReason::ObjectiveTolerance);
        }
        if g.norm() < opts.g_tol {
            return finish(x, f, &g, iter, StopReason::GradientTolerance);
        }

        let mut dir = -(h * g);
        if dir.dot(&g) >= 0.0 {
            // Lost positive definiteness; fall back to steepest descent.
            h = SMatrix::identity();
            first_update = true;
            dir = -g;
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            let cand = project(&(x + dir * alpha));
            let fc = f_of(&cand);
            // Armijo on the realised (projected) step.
            let step = cand - x;
            if fc.is_finite() && fc <= f + opts.c1 * g.dot(&step).min(0.0) && fc <= f {
                accepted = Some((cand, fc));
                break;
            }
            alpha *= opts.shrink;
        }
        let Some((x_new, f_new)) = accepted else {
            return finish(x, f, &g, iter, StopReason::LineSearchFailed);
        };
        let g_new = grad(&x_new);

        let s = x_new - x;
        let y = g_new - g;
        let sy = s.dot(&y);
        if sy > 1e-300 {
            if first_update {
                // Rescale the initial inverse Hessian to the observed curvature.
                h = SMatrix::identity() * (sy / y.dot(&y));
                first_update = false;
            }
            let rho = 1.0 / sy;
            let ident = SMatrix::<f64, N, N>::identity();
            let a = ident - s * y.transpose() * rho;
            h = a * h * a.transpose() + s * s.transpose() * rho;
        }
        x = x_new;
        f = f_new;
        g = g_new;
    }
    finish(x, f, &g, opts.max_iter, StopReason::MaxIterations)
}
