//! Constant-curvature kinematics of the extensible manipulator.
//!
//! The chain, from base to end effector:
//!
//! 1. base roll `Rz(q2)`;
//! 2. the extensible (semi-active) segment, a constant-curvature arc of
//!    length `s = q1 + l1` bent by pitch `q3` and yaw `q4`;
//! 3. a straight connector of length `connector` along z;
//! 4. segment 2, a planar arc of length `s2` bent by `q5` about y;
//! 5. a straight offset `a3` along z, then the forceps: `Rx(q6)` with the
//!    tip at `Rx(q6) * [0, 0, d4]`.
//!
//! Angles cross module boundaries in degrees and are used in radians
//! internally; lengths are millimetres.

use std::fmt;

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::transform::{log_so3, rot_x, rot_y, rot_z, RigidTransform};

/// Bend angles below this (radians) are treated as a straight segment.
pub const STRAIGHT_THRESHOLD: f64 = 1e-7;

/// Number of joints, `q1..q7`.
pub const NUM_JOINTS: usize = 7;

/// Joint vector `q1..q7`: translation `q1` in mm, the rest in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointConfig(pub [f64; NUM_JOINTS]);

impl JointConfig {
    pub const ZERO: JointConfig = JointConfig([0.0; NUM_JOINTS]);

    pub fn new(q: [f64; NUM_JOINTS]) -> Self {
        Self(q)
    }

    /// Builds a configuration from the two forceps jaw angles.
    pub fn with_forceps(mut self, qf1: f64, qf2: f64) -> Self {
        self.0[5] = (qf1 + qf2) / 2.0;
        self.0[6] = (qf1 - qf2) / 2.0;
        self
    }

    pub fn q1(&self) -> f64 {
        self.0[0]
    }
    pub fn q2(&self) -> f64 {
        self.0[1]
    }
    pub fn q3(&self) -> f64 {
        self.0[2]
    }
    pub fn q4(&self) -> f64 {
        self.0[3]
    }
    pub fn q5(&self) -> f64 {
        self.0[4]
    }
    pub fn q6(&self) -> f64 {
        self.0[5]
    }
    pub fn q7(&self) -> f64 {
        self.0[6]
    }

    /// Left forceps jaw angle, `q6 + q7`.
    pub fn qf1(&self) -> f64 {
        self.0[5] + self.0[6]
    }

    /// Right forceps jaw angle, `q6 - q7`.
    pub fn qf2(&self) -> f64 {
        self.0[5] - self.0[6]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Largest absolute per-joint difference.
    pub fn max_abs_diff(&self, other: &JointConfig) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<usize> for JointConfig {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl std::ops::IndexMut<usize> for JointConfig {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl fmt::Display for JointConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|v| format!("{v:.4}")).collect();
        write!(f, "[{}]", parts.join(", "))
    }
}

/// Inclusive per-joint `[min, max]` limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointLimits(pub [[f64; 2]; NUM_JOINTS]);

impl Default for JointLimits {
    fn default() -> Self {
        JointLimits([
            [0.0, 125.0],
            [-30.0, 30.0],
            [-60.0, 60.0],
            [-60.0, 60.0],
            [-60.0, 60.0],
            [-60.0, 60.0],
            [-60.0, 60.0],
        ])
    }
}

impl JointLimits {
    pub fn min(&self, j: usize) -> f64 {
        self.0[j][0]
    }

    pub fn max(&self, j: usize) -> f64 {
        self.0[j][1]
    }

    pub fn mid(&self, j: usize) -> f64 {
        0.5 * (self.0[j][0] + self.0[j][1])
    }

    pub fn half_range(&self, j: usize) -> f64 {
        0.5 * (self.0[j][1] - self.0[j][0])
    }

    pub fn check(&self, q: &JointConfig) -> Result<()> {
        for j in 0..NUM_JOINTS {
            let v = q[j];
            let [lo, hi] = self.0[j];
            if !v.is_finite() || v < lo || v > hi {
                return Err(Error::JointLimit {
                    joint: j + 1,
                    value: v,
                    min: lo,
                    max: hi,
                });
            }
        }
        Ok(())
    }

    pub fn contains(&self, q: &JointConfig) -> bool {
        self.check(q).is_ok()
    }

    pub fn clamp(&self, q: &JointConfig) -> JointConfig {
        let mut out = *q;
        for j in 0..NUM_JOINTS {
            out[j] = q[j].clamp(self.0[j][0], self.0[j][1]);
        }
        out
    }

    /// Every interval extended by `margin` on both sides.
    pub fn widened(&self, margin: f64) -> JointLimits {
        JointLimits(self.0.map(|[lo, hi]| [lo - margin, hi + margin]))
    }

    pub fn validate(&self) -> Result<()> {
        for (j, [lo, hi]) in self.0.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(domain(format!(
                    "invalid limits for q{}: [{lo}, {hi}]",
                    j + 1
                )));
            }
        }
        if self.0[0][0] < 0.0 {
            return Err(domain("q1 lower limit must be >= 0"));
        }
        Ok(())
    }
}

/// Fixed chain lengths (mm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentParams {
    /// Central length of the semi-active segment at zero translation.
    pub l1: f64,
    /// Arc length of segment 2.
    pub s2: f64,
    /// Straight connector between the semi-active segment and segment 2.
    pub connector: f64,
    /// Straight offset from the end of segment 2 to the forceps base.
    pub a3: f64,
    /// Forceps length.
    pub d4: f64,
    /// Offset from the base-marker midpoint to the manipulator base,
    /// expressed in the base frame.
    pub p_offset: [f64; 3],
}

impl Default for SegmentParams {
    fn default() -> Self {
        SegmentParams {
            l1: 10.0,
            s2: 15.0,
            connector: 2.0,
            a3: 2.0,
            d4: 15.0,
            p_offset: [0.0; 3],
        }
    }
}

impl SegmentParams {
    pub fn validate(&self) -> Result<()> {
        let lengths = [
            ("l1", self.l1),
            ("s2", self.s2),
            ("connector", self.connector),
            ("a3", self.a3),
            ("d4", self.d4),
        ];
        for (name, v) in lengths {
            if !(v.is_finite() && v > 0.0) {
                return Err(domain(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.p_offset.iter().all(|v| v.is_finite()) {
            return Err(domain("p_offset must be finite"));
        }
        Ok(())
    }

    /// Length of the straight chain at zero translation.
    pub fn straight_length(&self) -> f64 {
        self.l1 + self.connector + self.s2 + self.a3 + self.d4
    }
}

/// Constant-curvature arc parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArcParams {
    pub kappa: f64,
    pub kappa_x: f64,
    pub kappa_y: f64,
    /// Bending-plane angle (rad).
    pub phi: f64,
    /// Total bend angle (rad).
    pub theta: f64,
    /// Arc length (mm).
    pub s: f64,
}

/// Arc parameters of a two-axis bending segment of length `s`.
///
/// `pitch_deg` bends about the local x axis and `yaw_deg` about y.
pub fn segment_arc(pitch_deg: f64, yaw_deg: f64, s: f64) -> Result<ArcParams> {
    if !(s.is_finite() && s > 0.0) {
        return Err(domain(format!("arc length must be positive, got {s}")));
    }
    if !(pitch_deg.is_finite() && yaw_deg.is_finite()) {
        return Err(domain("bend angles must be finite"));
    }
    let pitch = pitch_deg.to_radians();
    let yaw = yaw_deg.to_radians();
    let kappa_x = pitch / s;
    let kappa_y = yaw / s;
    let kappa = kappa_x.hypot(kappa_y);
    Ok(ArcParams {
        kappa,
        kappa_x,
        kappa_y,
        phi: kappa_x.atan2(kappa_y),
        theta: pitch.hypot(yaw),
        s,
    })
}

/// Base-to-tip transform of a constant-curvature segment.
///
/// `Rz(phi) * B(theta) * Rz(-phi)`, where `B` bends the tip into the
/// local x-z plane; the tip lands at
/// `[cos(phi), sin(phi), 0] (1 - cos theta)/kappa + [0, 0, sin(theta)/kappa]`.
pub fn segment_fk(arc: &ArcParams) -> RigidTransform {
    if arc.theta.abs() < STRAIGHT_THRESHOLD {
        return RigidTransform::from_translation(Vector3::new(0.0, 0.0, arc.s));
    }
    let (sp, cp) = arc.phi.sin_cos();
    let st = arc.theta.sin();
    // (1 - cos t)/kappa written as s * 2 sin^2(t/2) / t to stay accurate
    // for small bends.
    let half = (0.5 * arc.theta).sin();
    let radial = arc.s * 2.0 * half * half / arc.theta;
    let axial = arc.s * st / arc.theta;
    let p = Vector3::new(cp * radial, sp * radial, axial);
    let r = rot_z(arc.phi) * rot_y(arc.theta) * rot_z(-arc.phi);
    RigidTransform::new(r, p)
}

/// Planar segment bent by `angle` (rad) about its local y axis.
fn planar_segment(angle: f64, s: f64) -> RigidTransform {
    if angle.abs() < STRAIGHT_THRESHOLD {
        return RigidTransform::from_translation(Vector3::new(0.0, 0.0, s));
    }
    let half = (0.5 * angle).sin();
    let p = Vector3::new(s * 2.0 * half * half / angle, 0.0, s * angle.sin() / angle);
    RigidTransform::new(rot_y(angle), p)
}

/// Forward kinematics without limit checks. Angles in degrees.
pub fn chain_fk(q: &JointConfig, geom: &SegmentParams) -> RigidTransform {
    let s1 = q.q1() + geom.l1;
    let roll = RigidTransform::rot_z(q.q2().to_radians());
    let seg1 = match segment_arc(q.q3(), q.q4(), s1) {
        Ok(arc) => segment_fk(&arc),
        // s1 <= 0 only for q1 < -l1; fall back to a degenerate point.
        Err(_) => RigidTransform::identity(),
    };
    let connector = RigidTransform::from_translation(Vector3::new(0.0, 0.0, geom.connector));
    let seg2 = planar_segment(q.q5().to_radians(), geom.s2);
    let a3 = RigidTransform::from_translation(Vector3::new(0.0, 0.0, geom.a3));
    let q6 = q.q6().to_radians();
    let forceps = RigidTransform::new(rot_x(q6), rot_x(q6) * Vector3::new(0.0, 0.0, geom.d4));
    roll.compose(&seg1)
        .compose(&connector)
        .compose(&seg2)
        .compose(&a3)
        .compose(&forceps)
}

/// End-effector position only; cheaper than [`chain_fk`] for sampling.
pub fn chain_position(q: &JointConfig, geom: &SegmentParams) -> Vector3<f64> {
    chain_fk(q, geom).translation
}

/// Manipulator model: geometry plus joint limits.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Manipulator {
    pub geometry: SegmentParams,
    pub limits: JointLimits,
}

impl Manipulator {
    pub fn new(geometry: SegmentParams, limits: JointLimits) -> Result<Self> {
        geometry.validate()?;
        limits.validate()?;
        Ok(Self { geometry, limits })
    }

    /// Base-to-end-effector transform; rejects out-of-limit joints.
    pub fn fk(&self, q: &JointConfig) -> Result<RigidTransform> {
        self.limits.check(q)?;
        Ok(chain_fk(q, &self.geometry))
    }
}

/// Forward kinematics with limit checking.
pub fn manipulator_fk(
    q: &JointConfig,
    geom: &SegmentParams,
    limits: &JointLimits,
) -> Result<RigidTransform> {
    limits.check(q)?;
    Ok(chain_fk(q, geom))
}

/// Weight (mm/rad) of the rotation term in the pose error.
pub const DEFAULT_ROT_WEIGHT: f64 = 10.0;

/// Six-vector pose residual `[p - p_d; w * log(R_dᵀ R)]`.
pub fn pose_residual(
    actual: &RigidTransform,
    target: &RigidTransform,
    rot_weight: f64,
) -> Vector6<f64> {
    let dp = actual.translation - target.translation;
    let dr = log_so3(&(target.rotation.transpose() * actual.rotation)) * rot_weight;
    Vector6::new(dp.x, dp.y, dp.z, dr.x, dr.y, dr.z)
}

/// Scalar pose error `‖p - p_d‖ + w ‖log(R_dᵀ R)‖`.
pub fn pose_error(actual: &RigidTransform, target: &RigidTransform, rot_weight: f64) -> f64 {
    let dp = (actual.translation - target.translation).norm();
    let dr = log_so3(&(target.rotation.transpose() * actual.rotation)).norm();
    dp + rot_weight * dr
}

/// Maps solver coordinates (q1 mm, q2..q6 rad) to a joint config.
pub(crate) fn joints_from_solver(x: &Vector6<f64>, q7: f64) -> JointConfig {
    JointConfig([
        x[0],
        x[1].to_degrees(),
        x[2].to_degrees(),
        x[3].to_degrees(),
        x[4].to_degrees(),
        x[5].to_degrees(),
        q7,
    ])
}

pub(crate) fn solver_from_joints(q: &JointConfig) -> Vector6<f64> {
    Vector6::new(
        q[0],
        q[1].to_radians(),
        q[2].to_radians(),
        q[3].to_radians(),
        q[4].to_radians(),
        q[5].to_radians(),
    )
}

/// Central-difference Jacobian of `residual` at `x` with step `h`.
pub(crate) fn central_jacobian<F>(x: &Vector6<f64>, h: f64, residual: F) -> Matrix6<f64>
where
    F: Fn(&Vector6<f64>) -> Vector6<f64>,
{
    let mut jac = Matrix6::zeros();
    for j in 0..6 {
        let mut xp = *x;
        let mut xm = *x;
        xp[j] += h;
        xm[j] -= h;
        let col = (residual(&xp) - residual(&xm)) / (2.0 * h);
        jac.set_column(j, &col);
    }
    jac
}

/// Default finite-difference step for [`numeric_jacobian`].
pub const JACOBIAN_STEP: f64 = 1e-6;

/// Central-difference Jacobian of the pose residual about the pose at `q`.
///
/// Rows are `[dp (mm); w * dlog(R(q)ᵀ R) (mm)]`, columns `q1..q6` in the
/// solver's units: per mm for `q1`, per radian for the angles.
pub fn numeric_jacobian(q: &JointConfig, geom: &SegmentParams) -> Matrix6<f64> {
    numeric_jacobian_with_step(q, geom, JACOBIAN_STEP, DEFAULT_ROT_WEIGHT)
}

pub fn numeric_jacobian_with_step(
    q: &JointConfig,
    geom: &SegmentParams,
    h: f64,
    rot_weight: f64,
) -> Matrix6<f64> {
    let reference = chain_fk(q, geom);
    let q7 = q.q7();
    central_jacobian(&solver_from_joints(q), h, |x| {
        pose_residual(
            &chain_fk(&joints_from_solver(x, q7), geom),
            &reference,
            rot_weight,
        )
    })
}

/// Rotation of the full chain with `q2 = 0`, used by roll-equivariance checks.
pub fn base_roll(angle_deg: f64) -> Matrix3<f64> {
    rot_z(angle_deg.to_radians())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn geom() -> SegmentParams {
        SegmentParams::default()
    }

    #[test]
    fn straight_segment_arc() {
        let arc = segment_arc(0.0, 0.0, 50.0).unwrap();
        assert_eq!(arc.theta, 0.0);
        assert_eq!(arc.kappa, 0.0);
    }

    #[test]
    fn quarter_pitch_arc() {
        let arc = segment_arc(90.0, 0.0, 100.0).unwrap();
        assert_relative_eq!(arc.theta, PI / 2.0, epsilon = 1e-12);
        assert_relative_eq!(arc.kappa_x, PI / 200.0, epsilon = 1e-15);
        assert_relative_eq!(arc.phi, PI / 2.0, epsilon = 1e-12);
        assert_relative_eq!(
            arc.kappa,
            (arc.kappa_x.powi(2) + arc.kappa_y.powi(2)).sqrt(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn pythagorean_bend_angle() {
        let arc = segment_arc(30.0, 40.0, 80.0).unwrap();
        assert_relative_eq!(arc.theta, 50f64.to_radians(), epsilon = 1e-12);
        assert_relative_eq!(arc.theta, 0.8727, epsilon = 1e-4);
        assert_relative_eq!(arc.theta, arc.kappa * arc.s, epsilon = 1e-9);
    }

    #[test]
    fn nonpositive_arc_length_is_rejected() {
        assert!(matches!(segment_arc(1.0, 0.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(segment_arc(1.0, 0.0, -3.0), Err(Error::Domain(_))));
    }

    #[test]
    fn straight_fk_is_pure_translation() {
        let g = geom();
        let t = segment_fk(&segment_arc(0.0, 0.0, g.l1).unwrap());
        assert_eq!(t.translation, Vector3::new(0.0, 0.0, g.l1));
        assert_eq!(t.rotation, Matrix3::identity());
    }

    #[test]
    fn quarter_circle_chord() {
        let arc = segment_arc(90.0, 0.0, 100.0).unwrap();
        let t = segment_fk(&arc);
        let chord = (1.0 / arc.kappa) * (2.0 * (1.0 - arc.theta.cos())).sqrt();
        assert_relative_eq!(t.translation.norm(), chord, epsilon = 1e-9);
        assert_relative_eq!(chord, (200.0 / PI) * 2f64.sqrt(), epsilon = 1e-9);
        assert_relative_eq!(t.translation.norm(), 90.03, epsilon = 5e-3);
        // phi = pi/2 puts the tip in the y-z plane.
        assert!(t.translation.x.abs() < 1e-9);
        assert!(t.orthonormality_error() < 1e-12);
    }

    #[test]
    fn tip_tangent_matches_arc() {
        // Tangent at the end of the arc is the rotated z axis; it must be
        // the derivative of the position along s.
        let (p, y, s) = (25.0, -35.0, 70.0);
        let t = segment_fk(&segment_arc(p, y, s).unwrap());
        let h = 1e-5;
        let a = segment_fk(&segment_arc(p * (s + h) / s, y * (s + h) / s, s + h).unwrap());
        let b = segment_fk(&segment_arc(p * (s - h) / s, y * (s - h) / s, s - h).unwrap());
        let tangent = (a.translation - b.translation) / (2.0 * h);
        let z = t.rotation.column(2).into_owned();
        assert_relative_eq!(tangent, z, epsilon = 1e-6);
    }

    #[test]
    fn straight_line_continuity() {
        let s = 60.0;
        let tiny = segment_fk(&ArcParams {
            kappa: 1e-8 / s,
            kappa_x: 1e-8 / s,
            kappa_y: 0.0,
            phi: PI / 2.0,
            theta: 1e-8,
            s,
        });
        let zero = segment_fk(&segment_arc(0.0, 0.0, s).unwrap());
        assert!((tiny.translation - zero.translation).norm() < 1e-6);
        // Just above the threshold the formula branch is still continuous.
        let above = segment_fk(&segment_arc(2e-7f64.to_degrees(), 0.0, s).unwrap());
        assert!((above.translation - zero.translation).norm() < 1e-5);
    }

    #[test]
    fn zero_pose_is_straight_chain() {
        let g = geom();
        let t = chain_fk(&JointConfig::ZERO, &g);
        assert_relative_eq!(
            t.translation,
            Vector3::new(0.0, 0.0, g.l1 + g.connector + g.s2 + g.a3 + g.d4),
            epsilon = 1e-12
        );
        assert!((t.rotation - Matrix3::identity()).abs().max() < 1e-12);
    }

    #[test]
    fn roll_rotates_about_base_z() {
        let g = geom();
        let mut q = JointConfig([10.0, 0.0, 20.0, -15.0, 30.0, 10.0, 0.0]);
        let t0 = chain_fk(&q, &g);
        q[1] = 30.0;
        let t1 = chain_fk(&q, &g);
        let r = base_roll(30.0);
        assert!((r * t0.translation - t1.translation).norm() < 1e-9);
        assert!((r * t0.rotation - t1.rotation).abs().max() < 1e-9);
        assert_relative_eq!(t0.translation.norm(), t1.translation.norm(), epsilon = 1e-9);
    }

    #[test]
    fn translation_extends_straight_chain() {
        let g = geom();
        let a = chain_fk(&JointConfig([25.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]), &g);
        let b = chain_fk(&JointConfig::ZERO, &g);
        assert_relative_eq!(a.translation.z - b.translation.z, 25.0, epsilon = 1e-12);
    }

    #[test]
    fn limit_violation_names_joint() {
        let g = geom();
        let limits = JointLimits::default();
        let q = JointConfig([0.0, 0.0, 0.0, 75.0, 0.0, 0.0, 0.0]);
        match manipulator_fk(&q, &g, &limits) {
            Err(Error::JointLimit { joint, .. }) => assert_eq!(joint, 4),
            other => panic!("expected limit error, got {other:?}"),
        }
        assert!(manipulator_fk(
            &JointConfig([130.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
            &g,
            &limits
        )
        .is_err());
    }

    #[test]
    fn forceps_accessors() {
        let q = JointConfig::ZERO.with_forceps(30.0, 10.0);
        assert_eq!(q.q6(), 20.0);
        assert_eq!(q.q7(), 10.0);
        assert_eq!(q.qf1(), 30.0);
        assert_eq!(q.qf2(), 10.0);
    }

    #[test]
    fn jacobian_q1_column_is_z() {
        let j = numeric_jacobian(&JointConfig::ZERO, &geom());
        let col = j.column(0);
        assert_relative_eq!(col[2], 1.0, epsilon = 1e-8);
        for i in [0, 1, 3, 4, 5] {
            assert!(col[i].abs() < 1e-8, "row {i} = {}", col[i]);
        }
    }

    #[test]
    fn jacobian_is_pure() {
        let q = JointConfig([12.0, 5.0, 20.0, -10.0, 15.0, 5.0, 0.0]);
        assert_eq!(numeric_jacobian(&q, &geom()), numeric_jacobian(&q, &geom()));
    }

    #[test]
    fn jacobian_step_is_second_order() {
        let q = JointConfig([12.0, 5.0, 20.0, -10.0, 15.0, 5.0, 0.0]);
        let g = geom();
        let j1 = numeric_jacobian_with_step(&q, &g, 4e-2, DEFAULT_ROT_WEIGHT);
        let j2 = numeric_jacobian_with_step(&q, &g, 2e-2, DEFAULT_ROT_WEIGHT);
        let j3 = numeric_jacobian_with_step(&q, &g, 1e-2, DEFAULT_ROT_WEIGHT);
        let d12 = (j1 - j2).abs().max();
        let d23 = (j2 - j3).abs().max();
        let ratio = d12 / d23;
        assert!((3.5..4.5).contains(&ratio), "halving ratio {ratio}");
    }
}
