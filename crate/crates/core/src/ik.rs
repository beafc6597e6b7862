//! Numerical inverse kinematics over `q1..q6`.
//!
//! Minimizes `½‖r(q)‖²` with `r` the six-vector pose residual
//! `[p - p_d; w log(R_dᵀ R)]`. Its minimizers are exactly those of the
//! pose error `‖p - p_d‖ + w‖log(R_dᵀ R)‖`, but the squared form is
//! smooth at the solution, which BFGS needs for fast final convergence.

use nalgebra::Vector6;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bfgs::{minimize, BfgsOptions, StopReason};
use crate::error::{Error, Result};
use crate::kinematics::{
    central_jacobian, chain_fk, joints_from_solver, pose_error, pose_residual, solver_from_joints,
    JointConfig, JointLimits, SegmentParams, DEFAULT_ROT_WEIGHT, JACOBIAN_STEP,
};
use crate::transform::RigidTransform;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkOptions {
    /// The solver stops once the pose error falls below this.
    pub tol: f64,
    /// A solution counts as converged when its pose error is below this.
    pub accept_tol: f64,
    pub gtol: f64,
    pub max_iter: usize,
    /// Rotation weight `w` in mm/rad.
    pub rot_weight: f64,
    /// Extra random starts tried when the first run does not converge.
    pub restarts: usize,
    pub seed: u64,
    /// Box applied to `q1..q6` after every step.
    pub bounds: JointLimits,
}

impl Default for IkOptions {
    fn default() -> Self {
        IkOptions {
            tol: 1e-9,
            accept_tol: 1e-6,
            gtol: 1e-14,
            max_iter: 500,
            rot_weight: DEFAULT_ROT_WEIGHT,
            restarts: 8,
            seed: 0x5eed,
            bounds: JointLimits::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkSolution {
    pub q: JointConfig,
    /// `‖p - p_d‖ + w‖log(R_dᵀ R)‖` at `q`.
    pub pose_error: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Number of starts used, including the initial guess.
    pub starts: usize,
}

/// Solves for joints reaching `target`, starting from `q_init`.
///
/// Returns the best configuration found; `converged` is false when no
/// start reached `accept_tol`. `q7` is copied from `q_init`.
pub fn inverse_kinematics(
    target: &RigidTransform,
    geom: &SegmentParams,
    q_init: &JointConfig,
    opts: &IkOptions,
) -> Result<IkSolution> {
    if !q_init.is_finite() {
        return Err(Error::Domain("initial guess must be finite".into()));
    }
    let q7 = q_init.q7();
    let lo = solver_from_joints(&JointConfig(opts.bounds.0.map(|b| b[0])));
    let hi = solver_from_joints(&JointConfig(opts.bounds.0.map(|b| b[1])));
    let project = |x: &Vector6<f64>| Vector6::from_fn(|i, _| x[i].clamp(lo[i], hi[i]));

    let residual = |x: &Vector6<f64>| {
        let t = chain_fk(&joints_from_solver(x, q7), geom);
        pose_residual(&t, target, opts.rot_weight)
    };
    let objective = |x: &Vector6<f64>| 0.5 * residual(x).norm_squared();
    let grad =
        |x: &Vector6<f64>| central_jacobian(x, JACOBIAN_STEP, residual).transpose() * residual(x);
    let bfgs = BfgsOptions {
        max_iter: opts.max_iter,
        f_tol: 0.25 * opts.tol * opts.tol,
        g_tol: opts.gtol,
        ..BfgsOptions::default()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<IkSolution> = None;
    let mut iterations = 0;
    for start in 0..=opts.restarts {
        let x0 = if start == 0 {
            solver_from_joints(q_init)
        } else {
            Vector6::from_fn(|i, _| rng.gen_range(lo[i]..=hi[i]))
        };
        let res = minimize(objective, grad, project, x0, &bfgs);
        iterations += res.iterations;
        if res.reason == StopReason::NonFinite {
            return Err(Error::Numerical(format!(
                "non-finite IK objective near q = {}",
                joints_from_solver(&res.x, q7)
            )));
        }
        let q = joints_from_solver(&res.x, q7);
        let err = pose_error(&chain_fk(&q, geom), target, opts.rot_weight);
        let cand = IkSolution {
            q,
            pose_error: err,
            converged: err < opts.accept_tol,
            iterations,
            starts: start + 1,
        };
        if best.map_or(true, |b| cand.pose_error < b.pose_error) {
            best = Some(cand);
        }
        if cand.converged {
            break;
        }
    }
    let mut best = best.expect("at least one start");
    best.iterations = iterations;
    best.starts = best.starts.max(1);
    Ok(best)
}
