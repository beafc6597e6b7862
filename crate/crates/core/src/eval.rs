//! Validation harnesses: random-trajectory tracking at unseen translations
//! and the box-pointing task.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{uncalibrated_pass, Controller};
use crate::datagen::{
    gen_trajectory_points, joint_error_stats, trajectory_seed, ErrorStats, Split, Trajectory,
    DEFAULT_INTERP_STEP,
};
use crate::error::{domain, Result};
use crate::ik::{inverse_kinematics, IkOptions};
use crate::kinematics::{
    chain_fk, chain_position, JointConfig, JointLimits, SegmentParams, NUM_JOINTS,
};
use crate::plant::{plant_step, PlantParams, PlantState};
use crate::pose::{
    base_frame, base_marker_centers, box_frame, box_marker_centers, fit_sphere_ransac,
    synth_marker_cloud, MarkerNoise, RansacOptions,
};
use crate::tcn::{
    evaluate, train, EpochLog, ModelEval, TcnConfig, TcnModel, TrainOptions, TrainOutcome,
    WindowSet,
};
use crate::transform::{rot_x, rot_z, RigidTransform};

/// Windows of the inverse model: physical joints in, commands out.
pub fn window_set(model: &TcnModel, data: &[Trajectory]) -> Result<WindowSet> {
    let pairs: Vec<_> = data.iter().map(|t| (t.physical(), t.commands())).collect();
    WindowSet::from_sequences(
        model,
        pairs.iter().map(|(a, b)| (a.as_slice(), b.as_slice())),
    )
}

/// Trains one ensemble member from recorded trajectories.
pub fn train_member(
    config: TcnConfig,
    limits: &JointLimits,
    train_data: &[Trajectory],
    valid_data: &[Trajectory],
    opts: &TrainOptions,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    let init = TcnModel::joint_model(config, limits)?;
    let t = window_set(&init, train_data)?;
    let v = window_set(&init, valid_data)?;
    train(init, &t, &v, opts, on_epoch)
}

/// Inverse-model error of `model` on recorded test trajectories.
pub fn model_test_error(model: &TcnModel, test_data: &[Trajectory]) -> Result<ModelEval> {
    evaluate(model, &window_set(model, test_data)?)
}

/// Maps a desired joint stream to commands.
pub trait Commander {
    fn reset(&mut self);
    fn command(&mut self, q_desired: &JointConfig) -> Result<JointConfig>;
}

/// Passes desired joints through unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct Uncalibrated;

impl Commander for Uncalibrated {
    fn reset(&mut self) {}

    fn command(&mut self, q_desired: &JointConfig) -> Result<JointConfig> {
        Ok(uncalibrated_pass(q_desired))
    }
}

impl Commander for Controller {
    fn reset(&mut self) {
        Controller::reset(self);
    }

    fn command(&mut self, q_desired: &JointConfig) -> Result<JointConfig> {
        self.compensate(q_desired)
    }
}

/// Drives `desired` through the commander and a fresh plant; returns the
/// physical joints.
pub fn track(
    commander: &mut dyn Commander,
    desired: &[JointConfig],
    params: &PlantParams,
) -> Result<Vec<JointConfig>> {
    commander.reset();
    let mut state = PlantState::default();
    desired
        .iter()
        .map(|q| Ok(plant_step(&mut state, &commander.command(q)?, params)))
        .collect()
}

/// Test trajectory at translation `q1`; its seed never coincides with a
/// training seed derived from the same base.
pub fn tracking_trajectory(
    ranges: &[[f64; 2]; 4],
    interp_step: f64,
    q1: f64,
    n_points: usize,
    seed: u64,
) -> Result<Vec<JointConfig>> {
    let s = trajectory_seed(Split::Test.seed(seed), (q1 * 1000.0).round() as usize);
    gen_trajectory_points(ranges, n_points, interp_step, q1, s)
}

/// Error statistics of `q_phy` against the desired trajectory.
pub fn run_tracking_eval(
    commander: &mut dyn Commander,
    desired: &[JointConfig],
    params: &PlantParams,
) -> Result<ErrorStats> {
    let phy = track(commander, desired, params)?;
    joint_error_stats(desired, &phy)
}

/// Relative reduction `1 - after/before`; `None` when `before` is too small
/// to give a meaningful ratio.
pub fn improvement(before: f64, after: f64) -> Option<f64> {
    (before > 1e-9).then(|| 1.0 - after / before)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingComparison {
    pub q1: f64,
    pub n: usize,
    pub uncalibrated: ErrorStats,
    pub calibrated: ErrorStats,
    /// Per-joint MAE reduction.
    pub improvement: [Option<f64>; NUM_JOINTS],
}

/// Tracks `desired` with and without compensation.
pub fn compare_tracking(
    calibrated: &mut dyn Commander,
    desired: &[JointConfig],
    params: &PlantParams,
) -> Result<TrackingComparison> {
    let uncalibrated = run_tracking_eval(&mut Uncalibrated, desired, params)?;
    let cal = run_tracking_eval(calibrated, desired, params)?;
    let improvement =
        std::array::from_fn(|j| improvement(uncalibrated.joints[j].mae, cal.joints[j].mae));
    Ok(TrackingComparison {
        q1: desired[0].q1(),
        n: desired.len(),
        uncalibrated,
        calibrated: cal,
        improvement,
    })
}

/// CSV rows `controller,q1,joint,mae,mae_sd,mse,mse_sd`.
pub fn tracking_csv(rows: &[TrackingComparison]) -> String {
    let mut out = String::from("controller,q1,joint,mae,mae_sd,mse,mse_sd\n");
    for r in rows {
        for (name, s) in [
            ("uncalibrated", &r.uncalibrated),
            ("calibrated", &r.calibrated),
        ] {
            for (j, js) in s.joints.iter().enumerate() {
                out += &format!(
                    "{name},{},q{},{},{},{},{}\n",
                    r.q1,
                    j + 1,
                    js.mae,
                    js.mae_sd,
                    js.mse,
                    js.mse_sd
                );
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoxTaskOptions {
    /// Box heights (mm); boxes are visited in ascending order.
    pub heights: Vec<f64>,
    pub n_trials: usize,
    /// Translation range for box placement (mm).
    pub q1_range: [f64; 2],
    /// Bending ranges of q2..q5 for box placement (degrees).
    pub ranges: [[f64; 2]; 4],
    pub marker_noise: MarkerNoise,
    pub ransac: RansacOptions,
    /// Spacing of the box markers (mm).
    pub marker_width: f64,
    pub marker_height: f64,
    pub base_width: f64,
    pub base_height: f64,
    /// Joint step of the approach motion (degrees or mm).
    pub approach_step: f64,
    /// Steps spent holding each target before the pose is read.
    pub settle_steps: usize,
    /// Largest accepted IK pose error. Estimated frames carry marker noise,
    /// so the targets are only approximately reachable.
    pub ik_accept: f64,
}

impl Default for BoxTaskOptions {
    fn default() -> Self {
        BoxTaskOptions {
            heights: vec![20.0, 35.0, 50.0, 65.0, 80.0],
            n_trials: 15,
            q1_range: [0.0, 50.0],
            ranges: [[-25.0, 25.0], [-50.0, 50.0], [-50.0, 50.0], [-50.0, 50.0]],
            marker_noise: MarkerNoise {
                sigma: 0.2,
                outlier_fraction: 0.1,
                ..MarkerNoise::default()
            },
            ransac: RansacOptions::default(),
            marker_width: 20.0,
            marker_height: 20.0,
            base_width: 80.0,
            base_height: 60.0,
            approach_step: DEFAULT_INTERP_STEP,
            settle_steps: 10,
            ik_accept: 0.5,
        }
    }
}

impl BoxTaskOptions {
    pub fn validate(&self) -> Result<()> {
        if self.heights.is_empty() || self.heights.iter().any(|h| !h.is_finite()) {
            return Err(domain("box heights must be finite and non-empty"));
        }
        if !(self.ik_accept > 0.0) {
            return Err(domain("IK acceptance threshold must be positive"));
        }
        if !(self.approach_step > 0.0) {
            return Err(domain("approach step must be positive"));
        }
        if !(self.q1_range[0] <= self.q1_range[1]) || self.ranges.iter().any(|r| !(r[0] <= r[1])) {
            return Err(domain("invalid placement range"));
        }
        Ok(())
    }
}

/// Outcome of pointing at one box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointingRecord {
    pub trial: usize,
    pub height: f64,
    /// Estimated box-top target in the base frame.
    pub target: [f64; 3],
    /// Physical end-effector position.
    pub reached: [f64; 3],
    pub q_box: JointConfig,
}

impl PointingRecord {
    pub fn error(&self) -> Vector3<f64> {
        Vector3::from(self.reached) - Vector3::from(self.target)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

fn mean_sd(v: &[f64]) -> MeanSd {
    if v.is_empty() {
        return MeanSd::default();
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() < 2 {
        0.0
    } else {
        (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    MeanSd { mean, sd }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxTaskReport {
    /// Absolute position error along x, y, z (mm).
    pub axis: [MeanSd; 3],
    pub euclidean: MeanSd,
    pub records: Vec<PointingRecord>,
    /// Boxes dropped because IK or frame estimation failed.
    pub skipped: usize,
}

impl BoxTaskReport {
    pub fn from_records(records: Vec<PointingRecord>, skipped: usize) -> Self {
        let errs: Vec<_> = records.iter().map(PointingRecord::error).collect();
        let axis =
            std::array::from_fn(|k| mean_sd(&errs.iter().map(|e| e[k].abs()).collect::<Vec<_>>()));
        let euclidean = mean_sd(&errs.iter().map(|e| e.norm()).collect::<Vec<_>>());
        BoxTaskReport {
            axis,
            euclidean,
            records,
            skipped,
        }
    }

    /// CSV rows `trial,height,target_x..z,reached_x..z,err_x..z,euclidean`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("trial,height,target_x,target_y,target_z,reached_x,reached_y,reached_z,err_x,err_y,err_z,euclidean\n");
        for r in &self.records {
            let e = r.error();
            out += &format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.trial,
                r.height,
                r.target[0],
                r.target[1],
                r.target[2],
                r.reached[0],
                r.reached[1],
                r.reached[2],
                e[0],
                e[1],
                e[2],
                e.norm()
            );
        }
        out
    }
}

/// One box placement: the frame of the box base in the robot base frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxPlacement {
    pub height: f64,
    pub frame: RigidTransform,
}

impl BoxPlacement {
    /// Desired end-effector pose: the box frame lifted to the box top.
    pub fn target(&self) -> RigidTransform {
        lift(&self.frame, self.height)
    }
}

fn lift(frame: &RigidTransform, h: f64) -> RigidTransform {
    frame.compose(&RigidTransform::from_translation(Vector3::new(0.0, 0.0, h)))
}

/// Places one box per height. Each box top coincides with the end-effector
/// pose of a random configuration in the placement ranges, so every target
/// is reachable.
pub fn place_boxes(
    opts: &BoxTaskOptions,
    geom: &SegmentParams,
    rng: &mut ChaCha8Rng,
) -> Vec<BoxPlacement> {
    let mut heights = opts.heights.clone();
    heights.sort_by(f64::total_cmp);
    let range = |rng: &mut ChaCha8Rng, r: [f64; 2]| {
        if r[0] == r[1] {
            r[0]
        } else {
            rng.gen_range(r[0]..=r[1])
        }
    };
    heights
        .into_iter()
        .map(|height| {
            let mut q = JointConfig::ZERO;
            q[0] = range(rng, opts.q1_range);
            for k in 0..4 {
                q[1 + k] = range(rng, opts.ranges[k]);
            }
            let top = chain_fk(&q, geom);
            BoxPlacement {
                height,
                frame: lift(&top, -height),
            }
        })
        .collect()
}

/// Camera pose above the workspace, looking down the base axis.
pub fn default_camera() -> RigidTransform {
    RigidTransform::new(rot_x(2.6) * rot_z(0.3), Vector3::new(10.0, 40.0, 300.0))
}

fn fit_center(
    center: &Vector3<f64>,
    opts: &BoxTaskOptions,
    seed: u64,
    rng: &mut ChaCha8Rng,
) -> Result<Vector3<f64>> {
    let pts = synth_marker_cloud(center, &opts.marker_noise, rng);
    Ok(fit_sphere_ransac(
        &pts,
        &RansacOptions {
            seed,
            ..opts.ransac
        },
    )?
    .center)
}

/// Estimates the box placement in the base frame from synthetic marker
/// clouds seen by `cam_t_base`.
pub fn observe_box(
    placement: &BoxPlacement,
    cam_t_base: &RigidTransform,
    opts: &BoxTaskOptions,
    rng: &mut ChaCha8Rng,
) -> Result<BoxPlacement> {
    let off = Vector3::zeros();
    let base = base_marker_centers(cam_t_base, &off, opts.base_width, opts.base_height);
    let b: Vec<_> = base
        .iter()
        .enumerate()
        .map(|(i, c)| fit_center(c, opts, i as u64, rng))
        .collect::<Result<_>>()?;
    let est_base = base_frame(&b[0], &b[1], &b[2], &off)?.transform;
    let cam_t_box = cam_t_base.compose(&placement.frame);
    let m = box_marker_centers(&cam_t_box, &off, opts.marker_width, opts.marker_height);
    let c: Vec<_> = m
        .iter()
        .enumerate()
        .map(|(i, c)| fit_center(c, opts, 3 + i as u64, rng))
        .collect::<Result<_>>()?;
    let est_box = box_frame(&c[0], &c[1], &c[2], &off)?.transform;
    Ok(BoxPlacement {
        height: placement.height,
        frame: est_base.inverse().compose(&est_box),
    })
}

/// IK bounds restricting the solution to the placement ranges, with q6
/// and q7 at zero.
fn pointing_bounds(opts: &BoxTaskOptions) -> JointLimits {
    let limits = JointLimits::default();
    let mut b = limits.0;
    b[0] = [
        opts.q1_range[0].max(limits.min(0)),
        opts.q1_range[1].min(limits.max(0)),
    ];
    for k in 0..4 {
        b[1 + k] = [
            opts.ranges[k][0].max(limits.min(1 + k)),
            opts.ranges[k][1].min(limits.max(1 + k)),
        ];
    }
    b[5] = [0.0, 0.0];
    b[6] = [0.0, 0.0];
    JointLimits(b)
}

/// Runs the box-pointing task. Each trial places fresh boxes, estimates
/// their frames from markers, solves IK for every box and drives the
/// commander and plant from home through the boxes in ascending height.
pub fn run_box_pointing(
    commander: &mut dyn Commander,
    params: &PlantParams,
    geom: &SegmentParams,
    opts: &BoxTaskOptions,
    seed: u64,
) -> Result<BoxTaskReport> {
    opts.validate()?;
    params.validate()?;
    let cam = default_camera();
    let ik = IkOptions {
        bounds: pointing_bounds(opts),
        accept_tol: opts.ik_accept,
        ..IkOptions::default()
    };
    let mut records = Vec::new();
    let mut skipped = 0;
    for trial in 0..opts.n_trials {
        let mut rng =
            ChaCha8Rng::seed_from_u64(trajectory_seed(Split::Test.seed(seed), 1_000_000 + trial));
        let boxes = place_boxes(opts, geom, &mut rng);
        commander.reset();
        let mut state = PlantState::default();
        let mut current = JointConfig::ZERO;
        for b in &boxes {
            let Ok(est) = observe_box(b, &cam, opts, &mut rng) else {
                skipped += 1;
                continue;
            };
            let target = est.target();
            let sol = inverse_kinematics(&target, geom, &ik.bounds.clamp(&current), &ik)?;
            if !sol.converged {
                skipped += 1;
                continue;
            }
            let q_box = sol.q;
            let span = current.max_abs_diff(&q_box);
            let n = ((span / opts.approach_step).ceil() as usize).max(1);
            let mut q_phy = current;
            for k in 1..=n + opts.settle_steps {
                let t = (k.min(n)) as f64 / n as f64;
                let q = JointConfig(std::array::from_fn(|j| {
                    current[j] + t * (q_box[j] - current[j])
                }));
                q_phy = plant_step(&mut state, &commander.command(&q)?, params);
            }
            current = q_box;
            let reached = chain_position(&q_phy, geom);
            records.push(PointingRecord {
                trial,
                height: b.height,
                target: target.translation.into(),
                reached: reached.into(),
                q_box,
            });
        }
    }
    Ok(BoxTaskReport::from_records(records, skipped))
}
