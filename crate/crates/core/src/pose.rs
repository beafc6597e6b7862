//! Frame estimation from fiducial-marker point clouds.
//!
//! Each marker is a sphere of known radius. Its centre is estimated from a
//! labelled cloud of surface points with RANSAC; frames are then built from
//! marker centres, either from three-marker constructions (base and boxes)
//! or by rigid registration against a known layout (end effector).

use nalgebra::{Matrix3, Vector3};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ik::{inverse_kinematics, IkOptions, IkSolution};
use crate::kinematics::{JointConfig, JointLimits, SegmentParams};
use crate::transform::RigidTransform;

/// Labelled surface points of one marker, in camera coordinates (mm).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerCloud {
    pub label: String,
    pub points: Vec<[f64; 3]>,
}

impl MarkerCloud {
    pub fn vectors(&self) -> Vec<Vector3<f64>> {
        self.points.iter().map(|p| Vector3::from(*p)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacOptions {
    /// Known marker radius (mm).
    pub radius: f64,
    pub iters: usize,
    /// Maximum distance from the sphere surface for an inlier (mm).
    pub inlier_tol: f64,
    /// Fits with a smaller inlier fraction are rejected.
    pub min_inlier_fraction: f64,
    pub seed: u64,
}

impl Default for RansacOptions {
    fn default() -> Self {
        RansacOptions {
            radius: 2.0,
            iters: 300,
            inlier_tol: 0.5,
            min_inlier_fraction: 0.6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereFit {
    pub center: Vector3<f64>,
    pub inlier_fraction: f64,
}

/// Sphere through four points, or `None` when they are (nearly) coplanar.
fn circumsphere(p: [&Vector3<f64>; 4]) -> Option<Vector3<f64>> {
    // |c - p_i|² = |c - p_0|²  =>  2 (p_i - p_0) · c = |p_i|² - |p_0|²
    let rows: [Vector3<f64>; 3] = std::array::from_fn(|i| 2.0 * (p[i + 1] - p[0]));
    let a = Matrix3::from_rows(&[
        rows[0].transpose(),
        rows[1].transpose(),
        rows[2].transpose(),
    ]);
    let scale = rows.iter().map(|r| r.norm()).product::<f64>();
    if scale == 0.0 || (a.determinant() / scale).abs() < 1e-6 {
        return None;
    }
    let b = Vector3::from_fn(|i, _| p[i + 1].norm_squared() - p[0].norm_squared());
    a.lu().solve(&b)
}

fn count_inliers(points: &[Vector3<f64>], c: &Vector3<f64>, radius: f64, tol: f64) -> usize {
    points
        .iter()
        .filter(|p| ((*p - c).norm() - radius).abs() <= tol)
        .count()
}

/// Gauss-Newton refinement of a known-radius sphere centre over `points`.
fn refine_center(points: &[Vector3<f64>], mut c: Vector3<f64>, radius: f64) -> Vector3<f64> {
    for _ in 0..50 {
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for p in points {
            let d = c - p;
            let n = d.norm();
            if n == 0.0 {
                continue;
            }
            let j = d / n;
            let r = n - radius;
            jtj += j * j.transpose();
            jtr += j * r;
        }
        let Some(step) = jtj.lu().solve(&jtr) else {
            break;
        };
        c -= step;
        if step.norm() < 1e-13 {
            break;
        }
    }
    c
}

/// RANSAC estimate of a marker centre from its surface points.
///
/// Hypotheses are spheres through four random points, scored by how many
/// points lie within `inlier_tol` of the known-radius sphere at that centre;
/// ties keep the earliest hypothesis. The winner is refined by least squares
/// over its inliers.
pub fn fit_sphere_ransac(points: &[Vector3<f64>], opts: &RansacOptions) -> Result<SphereFit> {
    if points.len() < 4 {
        return Err(Error::Degenerate(format!(
            "sphere fit needs at least 4 points, got {}",
            points.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<(usize, Vector3<f64>)> = None;
    for _ in 0..opts.iters {
        let idx = sample(&mut rng, points.len(), 4);
        let quad = [
            &points[idx.index(0)],
            &points[idx.index(1)],
            &points[idx.index(2)],
            &points[idx.index(3)],
        ];
        let Some(c) = circumsphere(quad) else {
            continue;
        };
        let n = count_inliers(points, &c, opts.radius, opts.inlier_tol);
        if best.map_or(true, |(b, _)| n > b) {
            best = Some((n, c));
        }
    }
    let Some((_, c0)) = best else {
        return Err(Error::Degenerate(
            "all sphere hypotheses were coplanar".into(),
        ));
    };
    // Alternate inlier selection and least squares until the set settles.
    let mut center = c0;
    let mut prev = Vec::new();
    for _ in 0..5 {
        let inliers: Vec<Vector3<f64>> = points
            .iter()
            .filter(|p| ((*p - center).norm() - opts.radius).abs() <= opts.inlier_tol)
            .copied()
            .collect();
        if inliers.len() < 4 || inliers == prev {
            break;
        }
        center = refine_center(&inliers, center, opts.radius);
        prev = inliers;
    }
    let inlier_fraction =
        count_inliers(points, &center, opts.radius, opts.inlier_tol) as f64 / points.len() as f64;
    if inlier_fraction < opts.min_inlier_fraction || !center.iter().all(|v| v.is_finite()) {
        return Err(Error::Degenerate(format!(
            "sphere fit inlier fraction {inlier_fraction:.3} below {}",
            opts.min_inlier_fraction
        )));
    }
    Ok(SphereFit {
        center,
        inlier_fraction,
    })
}

/// An estimated frame in camera coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameEstimate {
    pub transform: RigidTransform,
    pub inlier_fraction: f64,
    pub markers_used: usize,
}

/// Rotation with the given `z` and approximate `y` axes. `y` is made
/// orthogonal to `z` before `x = y × z` completes the frame.
fn frame_from_axes(y: Vector3<f64>, z: Vector3<f64>) -> Result<Matrix3<f64>> {
    let zn = z.norm();
    let yn = y.norm();
    if zn < 1e-9 || yn < 1e-9 {
        return Err(Error::Degenerate("coincident marker centres".into()));
    }
    let z = z / zn;
    let y = y / yn;
    let y_perp = y - z * y.dot(&z);
    if y_perp.norm() < 1e-6 {
        return Err(Error::Degenerate("collinear marker centres".into()));
    }
    let y = y_perp.normalize();
    let x = y.cross(&z);
    Ok(Matrix3::from_columns(&[x, y, z]))
}

/// Base frame from the centres of red balls 0 and 1 and blue ball 0.
///
/// `y ∥ r0 - r1`, `z ∥ r1 - b0`, origin at the `r0`/`b0` midpoint shifted by
/// `p_offset`, which is expressed in the base frame.
pub fn base_frame(
    p_r0: &Vector3<f64>,
    p_r1: &Vector3<f64>,
    p_b0: &Vector3<f64>,
    p_offset: &Vector3<f64>,
) -> Result<FrameEstimate> {
    let r = frame_from_axes(p_r0 - p_r1, p_r1 - p_b0)?;
    let origin = 0.5 * (p_r0 + p_b0) + r * p_offset;
    Ok(FrameEstimate {
        transform: RigidTransform::new(r, origin),
        inlier_fraction: 1.0,
        markers_used: 3,
    })
}

/// Box frame from its red, green and blue marker centres.
///
/// `y ∥ r - g`, `z ∥ r - b`, origin at the `g`/`b` midpoint shifted by
/// `x_offset` in the box frame.
pub fn box_frame(
    p_r: &Vector3<f64>,
    p_g: &Vector3<f64>,
    p_b: &Vector3<f64>,
    x_offset: &Vector3<f64>,
) -> Result<FrameEstimate> {
    let r = frame_from_axes(p_r - p_g, p_r - p_b)?;
    let origin = 0.5 * (p_g + p_b) + r * x_offset;
    Ok(FrameEstimate {
        transform: RigidTransform::new(r, origin),
        inlier_fraction: 1.0,
        markers_used: 3,
    })
}

/// Base-frame marker centres that [`base_frame`] maps back to `frame`.
/// `width` separates r0 from r1, `height` separates r1 from b0.
pub fn base_marker_centers(
    frame: &RigidTransform,
    p_offset: &Vector3<f64>,
    width: f64,
    height: f64,
) -> [Vector3<f64>; 3] {
    let local = [
        Vector3::new(0.0, 0.5 * width, 0.5 * height),
        Vector3::new(0.0, -0.5 * width, 0.5 * height),
        Vector3::new(0.0, -0.5 * width, -0.5 * height),
    ];
    local.map(|p| frame.transform_point(&(p - p_offset)))
}

/// Red, green and blue centres that [`box_frame`] maps back to `frame`.
pub fn box_marker_centers(
    frame: &RigidTransform,
    x_offset: &Vector3<f64>,
    width: f64,
    height: f64,
) -> [Vector3<f64>; 3] {
    let local = [
        Vector3::new(0.0, 0.5 * width, 0.5 * height),
        Vector3::new(0.0, -0.5 * width, 0.5 * height),
        Vector3::new(0.0, 0.5 * width, -0.5 * height),
    ];
    local.map(|p| frame.transform_point(&(p - x_offset)))
}

/// Positions of the five end-effector markers in the end-effector frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EeMarkerLayout(pub [[f64; 3]; 5]);

impl Default for EeMarkerLayout {
    /// A pentagon of radius 40 mm around the tool axis, alternating 8 mm
    /// above and below the tip plane. No three markers are collinear.
    fn default() -> Self {
        EeMarkerLayout(std::array::from_fn(|k| {
            let a = 2.0 * std::f64::consts::PI * k as f64 / 5.0;
            let z = if k % 2 == 0 { -8.0 } else { 8.0 };
            [40.0 * a.cos(), 40.0 * a.sin(), z]
        }))
    }
}

impl EeMarkerLayout {
    pub fn point(&self, i: usize) -> Vector3<f64> {
        Vector3::from(self.0[i])
    }
}

/// Least-squares rigid transform mapping `src[i]` onto `dst[i]`.
pub fn rigid_registration(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Result<RigidTransform> {
    if src.len() != dst.len() {
        return Err(Error::Shape {
            expected: format!("{} correspondences", src.len()),
            got: format!("{}", dst.len()),
        });
    }
    if src.len() < 3 {
        return Err(Error::InsufficientMarkers {
            needed: 3,
            got: src.len(),
        });
    }
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vector3<f64>>() / n;
    let cd = dst.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s - cs) * (d - cd).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u.expect("svd u"), svd.v_t.expect("svd v_t"));
    let sv = svd.singular_values;
    if sv[1] < 1e-9 * sv[0].max(1.0) {
        return Err(Error::Degenerate("collinear correspondences".into()));
    }
    let mut d = Matrix3::identity();
    if (vt.transpose() * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = vt.transpose() * d * u.transpose();
    Ok(RigidTransform::new(r, cd - r * cs))
}

/// End-effector frame from any three or more of the five labelled marker
/// centres. `markers[i]` is the centre of marker `i`, if detected.
pub fn ee_frame(
    markers: &[Option<Vector3<f64>>; 5],
    layout: &EeMarkerLayout,
) -> Result<FrameEstimate> {
    let (src, dst): (Vec<_>, Vec<_>) = markers
        .iter()
        .enumerate()
        .filter_map(|(i, m)| m.map(|c| (layout.point(i), c)))
        .unzip();
    if src.len() < 3 {
        return Err(Error::InsufficientMarkers {
            needed: 3,
            got: src.len(),
        });
    }
    let transform = rigid_registration(&src, &dst)?;
    Ok(FrameEstimate {
        transform,
        inlier_fraction: 1.0,
        markers_used: src.len(),
    })
}

/// Slack (mm, degrees) beyond the joint limits allowed when measuring.
/// Physical joints can overshoot the commanded range, and a noisy pose near
/// a limit is often reachable only just outside it.
pub const MEASUREMENT_SLACK: f64 = 5.0;

/// IK options for [`physical_joints`]: `limits` widened by [`MEASUREMENT_SLACK`].
pub fn measurement_ik_options(limits: &JointLimits) -> IkOptions {
    IkOptions {
        bounds: limits.widened(MEASUREMENT_SLACK),
        ..IkOptions::default()
    }
}

/// Joint values reproducing `camTbase⁻¹ · camTee`, by IK seeded at `q_guess`.
pub fn physical_joints(
    cam_t_base: &RigidTransform,
    cam_t_ee: &RigidTransform,
    geom: &SegmentParams,
    q_guess: &JointConfig,
    opts: &IkOptions,
) -> Result<IkSolution> {
    let base_t_ee = cam_t_base.inverse().compose(cam_t_ee);
    inverse_kinematics(&base_t_ee, geom, q_guess, opts)
}

/// Synthetic camera observation of one spherical marker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarkerNoise {
    pub radius: f64,
    pub n_points: usize,
    /// Gaussian noise on every surface point (mm).
    pub sigma: f64,
    /// Fraction of the returned points replaced by uniform outliers.
    pub outlier_fraction: f64,
}

impl Default for MarkerNoise {
    fn default() -> Self {
        MarkerNoise {
            radius: 2.0,
            n_points: 200,
            sigma: 0.0,
            outlier_fraction: 0.0,
        }
    }
}

/// Samples a marker cloud as seen by a camera at the camera-frame origin:
/// points on the visible hemisphere, Gaussian noise, and uniform outliers in
/// a cube of half-width four radii around the centre.
pub fn synth_marker_cloud<R: Rng>(
    center: &Vector3<f64>,
    noise: &MarkerNoise,
    rng: &mut R,
) -> Vec<Vector3<f64>> {
    let view = if center.norm() > 0.0 {
        -center.normalize()
    } else {
        Vector3::new(0.0, 0.0, -1.0)
    };
    let n_out = (noise.n_points as f64 * noise.outlier_fraction).round() as usize;
    let n_in = noise.n_points - n_out.min(noise.n_points);
    let gauss = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out = Vec::with_capacity(noise.n_points);
    while out.len() < n_in {
        let d = Vector3::from_fn(|_, _| gauss.sample(rng));
        let Some(d) = d.try_normalize(1e-12) else {
            continue;
        };
        let d = if d.dot(&view) < 0.0 { -d } else { d };
        let jitter = Vector3::from_fn(|_, _| gauss.sample(rng)) * noise.sigma;
        out.push(center + d * noise.radius + jitter);
    }
    let half = 4.0 * noise.radius;
    for _ in 0..n_out {
        out.push(center + Vector3::from_fn(|_, _| rng.gen_range(-half..=half)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::chain_fk;
    use crate::transform::{rot_x, rot_y, rot_z};

    fn noiseless_sphere(c: Vector3<f64>, r: f64) -> Vec<Vector3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noise = MarkerNoise {
            radius: r,
            ..MarkerNoise::default()
        };
        synth_marker_cloud(&c, &noise, &mut rng)
    }

    #[test]
    fn exact_sphere_is_recovered() {
        let c = Vector3::new(10.0, 20.0, 30.0);
        let pts = noiseless_sphere(c, 5.0);
        let opts = RansacOptions {
            radius: 5.0,
            ..RansacOptions::default()
        };
        let fit = fit_sphere_ransac(&pts, &opts).unwrap();
        assert!((fit.center - c).norm() < 1e-6, "{}", fit.center);
        assert_eq!(fit.inlier_fraction, 1.0);
    }

    #[test]
    fn too_few_points_are_degenerate() {
        let pts = vec![Vector3::zeros(), Vector3::x(), Vector3::y()];
        assert!(matches!(
            fit_sphere_ransac(&pts, &RansacOptions::default()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn mostly_outliers_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = MarkerNoise {
            outlier_fraction: 0.8,
            ..MarkerNoise::default()
        };
        let pts = synth_marker_cloud(&Vector3::new(0.0, 0.0, 300.0), &noise, &mut rng);
        assert!(fit_sphere_ransac(&pts, &RansacOptions::default()).is_err());
    }

    #[test]
    fn ransac_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noise = MarkerNoise {
            sigma: 0.2,
            outlier_fraction: 0.3,
            ..MarkerNoise::default()
        };
        let pts = synth_marker_cloud(&Vector3::new(5.0, -3.0, 250.0), &noise, &mut rng);
        let a = fit_sphere_ransac(&pts, &RansacOptions::default()).unwrap();
        let b = fit_sphere_ransac(&pts, &RansacOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn canonical_base_markers_give_identity() {
        let f = base_frame(
            &Vector3::new(0.0, 1.0, 1.0),
            &Vector3::new(0.0, 0.0, 1.0),
            &Vector3::new(0.0, 0.0, 0.0),
            &Vector3::zeros(),
        )
        .unwrap();
        assert!((f.transform.rotation - Matrix3::identity()).abs().max() < 1e-15);
        assert_eq!(f.transform.translation, Vector3::new(0.0, 0.5, 0.5));
    }

    #[test]
    fn base_frame_is_rotation_equivariant() {
        let r = rot_z(0.7) * rot_y(-0.4) * rot_x(1.2);
        let pts = [
            Vector3::new(3.0, 1.0, 2.0),
            Vector3::new(2.5, -4.0, 2.2),
            Vector3::new(2.0, -4.5, -6.0),
        ];
        let off = Vector3::new(1.0, 2.0, -3.0);
        let a = base_frame(&pts[0], &pts[1], &pts[2], &off)
            .unwrap()
            .transform;
        let b = base_frame(&(r * pts[0]), &(r * pts[1]), &(r * pts[2]), &off)
            .unwrap()
            .transform;
        assert!((r * a.rotation - b.rotation).abs().max() < 1e-12);
        assert!((r * a.translation - b.translation).norm() < 1e-12);
        assert!(b.orthonormality_error() < 1e-12);
    }

    #[test]
    fn coincident_or_collinear_markers_fail() {
        let p = Vector3::new(1.0, 2.0, 3.0);
        assert!(base_frame(&p, &p, &Vector3::zeros(), &Vector3::zeros()).is_err());
        let line = [
            Vector3::zeros(),
            Vector3::new(1.0, 1.0, 1.0),
            Vector3::new(3.0, 3.0, 3.0),
        ];
        assert!(box_frame(&line[0], &line[1], &line[2], &Vector3::zeros()).is_err());
    }

    #[test]
    fn marker_layouts_round_trip() {
        let frame = RigidTransform::new(rot_z(0.3) * rot_x(-0.8), Vector3::new(10.0, -20.0, 400.0));
        let off = Vector3::new(0.5, 1.0, -2.0);
        let [r0, r1, b0] = base_marker_centers(&frame, &off, 30.0, 20.0);
        let f = base_frame(&r0, &r1, &b0, &off).unwrap().transform;
        assert!((f.rotation - frame.rotation).abs().max() < 1e-12);
        assert!((f.translation - frame.translation).norm() < 1e-12);

        let [r, g, b] = box_marker_centers(&frame, &off, 30.0, 20.0);
        let f = box_frame(&r, &g, &b, &off).unwrap().transform;
        assert!((f.rotation - frame.rotation).abs().max() < 1e-12);
        assert!((f.translation - frame.translation).norm() < 1e-12);
    }

    #[test]
    fn ee_frame_from_every_subset() {
        let layout = EeMarkerLayout::default();
        let truth = RigidTransform::new(rot_y(0.4) * rot_z(-1.1), Vector3::new(-5.0, 7.0, 320.0));
        let centers: Vec<Vector3<f64>> = (0..5)
            .map(|i| truth.transform_point(&layout.point(i)))
            .collect();
        for mask in 0u32..32 {
            let markers: [Option<Vector3<f64>>; 5] =
                std::array::from_fn(|i| (mask >> i & 1 == 1).then_some(centers[i]));
            let used = mask.count_ones() as usize;
            match ee_frame(&markers, &layout) {
                Ok(f) => {
                    assert!(used >= 3);
                    assert_eq!(f.markers_used, used);
                    let tol = if used == 5 { 1e-9 } else { 1e-6 };
                    assert!((f.transform.rotation - truth.rotation).abs().max() < tol);
                    assert!((f.transform.translation - truth.translation).norm() < tol);
                }
                Err(Error::InsufficientMarkers { .. }) => assert!(used < 3),
                Err(e) => panic!("unexpected {e}"),
            }
        }
    }

    #[test]
    fn zero_pose_joints_from_coincident_frames() {
        let g = SegmentParams::default();
        let cam_t_base = RigidTransform::new(rot_x(2.5), Vector3::new(0.0, 50.0, 300.0));
        let cam_t_ee = cam_t_base.compose(&chain_fk(&JointConfig::ZERO, &g));
        let sol = physical_joints(
            &cam_t_base,
            &cam_t_ee,
            &g,
            &JointConfig::ZERO,
            &IkOptions::default(),
        )
        .unwrap();
        assert!(sol.converged);
        assert!(sol.q.max_abs_diff(&JointConfig::ZERO) < 1e-9);
    }

    #[test]
    fn measurement_bounds_recover_joints_just_past_a_limit() {
        let g = SegmentParams::default();
        let l = JointLimits::default();
        let mut q = JointConfig::ZERO;
        q[0] = 40.0;
        q[3] = l.min(3) - 0.5;
        q[4] = 20.0;
        let cam_t_base = RigidTransform::new(rot_x(2.5), Vector3::new(0.0, 50.0, 300.0));
        let cam_t_ee = cam_t_base.compose(&chain_fk(&q, &g));
        let strict = physical_joints(
            &cam_t_base,
            &cam_t_ee,
            &g,
            &l.clamp(&q),
            &IkOptions::default(),
        )
        .unwrap();
        assert!(!strict.converged);
        let sol = physical_joints(
            &cam_t_base,
            &cam_t_ee,
            &g,
            &l.clamp(&q),
            &measurement_ik_options(&l),
        )
        .unwrap();
        assert!(sol.converged);
        assert!(sol.q.max_abs_diff(&q) < 1e-6);
    }
}
