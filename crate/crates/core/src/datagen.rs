//! Random joint trajectories, plant data collection and error statistics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::kinematics::{JointConfig, NUM_JOINTS};
use crate::plant::{plant_step, PlantParams, PlantState};

/// Sampling ranges of q2..q5 in degrees.
pub const DEFAULT_RANGES: [[f64; 2]; 4] =
    [[-30.0, 30.0], [-60.0, 60.0], [-60.0, 60.0], [-60.0, 60.0]];
pub const DEFAULT_INTERP_STEP: f64 = 3.0;
pub const TRAIN_TRANSLATIONS: [f64; 6] = [0.0, 10.0, 20.0, 30.0, 40.0, 50.0];
pub const TEST_TRANSLATIONS: [f64; 3] = [5.0, 25.0, 45.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub t: usize,
    pub q_cmd: JointConfig,
    pub q_phy: JointConfig,
}

/// Records from one trajectory at a fixed translation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub q1: f64,
    pub seed: u64,
    pub records: Vec<TrajectoryRecord>,
}

impl Trajectory {
    pub fn commands(&self) -> Vec<JointConfig> {
        self.records.iter().map(|r| r.q_cmd).collect()
    }

    pub fn physical(&self) -> Vec<JointConfig> {
        self.records.iter().map(|r| r.q_phy).collect()
    }
}

fn check_ranges(ranges: &[[f64; 2]; 4], interp_step: f64, q1: f64) -> Result<()> {
    if !(interp_step > 0.0 && interp_step.is_finite()) {
        return Err(domain(format!(
            "interpolation step must be positive, got {interp_step}"
        )));
    }
    if !q1.is_finite() {
        return Err(domain("q1 must be finite"));
    }
    for r in ranges {
        if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
            return Err(domain(format!("invalid range [{}, {}]", r[0], r[1])));
        }
    }
    Ok(())
}

fn waypoint(rng: &mut ChaCha8Rng, ranges: &[[f64; 2]; 4], q1: f64) -> JointConfig {
    let mut q = JointConfig::ZERO;
    q[0] = q1;
    for (k, r) in ranges.iter().enumerate() {
        q[1 + k] = if r[0] == r[1] {
            r[0]
        } else {
            rng.gen_range(r[0]..r[1])
        };
    }
    q
}

/// Appends the linear interpolation from the last point of `out` to `to`,
/// excluding the start and including `to`.
fn interpolate_into(out: &mut Vec<JointConfig>, to: &JointConfig, step: f64) {
    let from = *out.last().expect("non-empty path");
    let span = from.max_abs_diff(to);
    let n = ((span / step).ceil() as usize).max(1);
    for k in 1..=n {
        let t = k as f64 / n as f64;
        out.push(JointConfig(std::array::from_fn(|j| {
            from[j] + t * (to[j] - from[j])
        })));
    }
}

/// A trajectory starting at the home pose (with the given `q1`) through
/// `n_waypoints` uniform random waypoints, interpolated so that no joint
/// moves more than `interp_step` per step. q6 and q7 stay at zero.
pub fn gen_random_trajectory(
    ranges: &[[f64; 2]; 4],
    n_waypoints: usize,
    interp_step: f64,
    q1: f64,
    seed: u64,
) -> Result<Vec<JointConfig>> {
    check_ranges(ranges, interp_step, q1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![JointConfig([q1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])];
    for _ in 0..n_waypoints {
        let w = waypoint(&mut rng, ranges, q1);
        interpolate_into(&mut out, &w, interp_step);
    }
    Ok(out)
}

/// Like [`gen_random_trajectory`] but adds waypoints until exactly
/// `n_points` commands are produced.
pub fn gen_trajectory_points(
    ranges: &[[f64; 2]; 4],
    n_points: usize,
    interp_step: f64,
    q1: f64,
    seed: u64,
) -> Result<Vec<JointConfig>> {
    check_ranges(ranges, interp_step, q1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![JointConfig([q1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])];
    while out.len() < n_points {
        let w = waypoint(&mut rng, ranges, q1);
        let before = out.len();
        interpolate_into(&mut out, &w, interp_step);
        if out.len() == before {
            break;
        }
    }
    out.truncate(n_points);
    Ok(out)
}

/// Runs `commands` through a fresh plant.
pub fn record(commands: &[JointConfig], params: &PlantParams) -> Vec<TrajectoryRecord> {
    let mut state = PlantState::default();
    commands
        .iter()
        .enumerate()
        .map(|(t, q)| TrajectoryRecord {
            t,
            q_cmd: *q,
            q_phy: plant_step(&mut state, q, params),
        })
        .collect()
}

/// Dataset partition. Each split draws its trajectories from its own seed
/// stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    /// Base seed of this split under the top-level `seed`.
    pub fn seed(&self, seed: u64) -> u64 {
        match self {
            Split::Train => seed,
            Split::Valid => seed ^ 0x5a11_d000_0000_0002,
            Split::Test => seed ^ 0x7e57_0000_0000_0001,
        }
    }
}

/// Trajectory seed for translation index `i` under a base seed; keeps the
/// seeds of different translations and splits apart.
pub fn trajectory_seed(base: u64, i: usize) -> u64 {
    base.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(1 + i as u64)
}

/// One trajectory of `n_per` records per translation in `q1_values`.
pub fn collect_dataset(
    q1_values: &[f64],
    n_per: usize,
    params: &PlantParams,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    collect_dataset_with(
        q1_values,
        n_per,
        &DEFAULT_RANGES,
        DEFAULT_INTERP_STEP,
        params,
        seed,
    )
}

pub fn collect_dataset_with(
    q1_values: &[f64],
    n_per: usize,
    ranges: &[[f64; 2]; 4],
    interp_step: f64,
    params: &PlantParams,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    params.validate()?;
    q1_values
        .iter()
        .enumerate()
        .map(|(i, &q1)| {
            let s = trajectory_seed(seed, i);
            let cmds = gen_trajectory_points(ranges, n_per, interp_step, q1, s)?;
            Ok(Trajectory {
                q1,
                seed: s,
                records: record(&cmds, params),
            })
        })
        .collect()
}

/// Error statistics of one joint: `e = q_phy - q_cmd`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JointStats {
    /// Mean of `|e|`.
    pub mae: f64,
    /// Sample SD of `|e|`.
    pub mae_sd: f64,
    /// Mean of `e` (signed).
    pub mse: f64,
    /// Sample SD of `e`.
    pub mse_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub n: usize,
    pub joints: [JointStats; NUM_JOINTS],
}

fn mean_sd(v: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let mean = v.clone().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = v.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Per-joint error statistics between paired reference and actual joints.
pub fn joint_error_stats(reference: &[JointConfig], actual: &[JointConfig]) -> Result<ErrorStats> {
    if reference.is_empty() {
        return Err(domain("error statistics need at least one record"));
    }
    if reference.len() != actual.len() {
        return Err(domain(format!(
            "length mismatch: {} reference vs {} actual",
            reference.len(),
            actual.len()
        )));
    }
    let n = reference.len();
    let joints = std::array::from_fn(|j| {
        let e = reference.iter().zip(actual).map(move |(r, a)| a[j] - r[j]);
        let (mae, mae_sd) = mean_sd(e.clone().map(f64::abs), n);
        let (mse, mse_sd) = mean_sd(e, n);
        JointStats {
            mae,
            mae_sd,
            mse,
            mse_sd,
        }
    });
    Ok(ErrorStats { n, joints })
}

pub fn error_stats(records: &[TrajectoryRecord]) -> Result<ErrorStats> {
    let cmd: Vec<_> = records.iter().map(|r| r.q_cmd).collect();
    let phy: Vec<_> = records.iter().map(|r| r.q_phy).collect();
    joint_error_stats(&cmd, &phy)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trajectory_is_deterministic_and_smooth() {
        let a = gen_random_trajectory(&DEFAULT_RANGES, 20, 3.0, 10.0, 7).unwrap();
        let b = gen_random_trajectory(&DEFAULT_RANGES, 20, 3.0, 10.0, 7).unwrap();
        assert_eq!(a, b);
        for w in a.windows(2) {
            assert!(w[0].max_abs_diff(&w[1]) <= 3.0 + 1e-12);
        }
        assert!(a
            .iter()
            .all(|q| q.q1() == 10.0 && q.q6() == 0.0 && q.q7() == 0.0));
        for q in &a {
            assert!(q.q2().abs() <= 30.0 && q.q3().abs() <= 60.0);
        }
    }

    #[test]
    fn point_ranges_give_constant_trajectory() {
        let r = [[5.0, 5.0], [-2.0, -2.0], [0.0, 0.0], [1.0, 1.0]];
        let t = gen_trajectory_points(&r, 50, 3.0, 0.0, 1).unwrap();
        assert_eq!(t.len(), 50);
        let last = t[t.len() - 1];
        assert_eq!(last, JointConfig([0.0, 5.0, -2.0, 0.0, 1.0, 0.0, 0.0]));
        assert!(t[5..].iter().all(|q| *q == last));
    }

    #[test]
    fn dataset_counts_and_partition() {
        let d = collect_dataset(&TRAIN_TRANSLATIONS, 1000, &PlantParams::default(), 3).unwrap();
        assert_eq!(d.iter().map(|t| t.records.len()).sum::<usize>(), 6000);
        for tr in &d {
            assert!(tr.records.iter().all(|r| r.q_cmd.q1() == tr.q1));
        }
    }

    #[test]
    fn identity_plant_records_equal_commands() {
        let d = collect_dataset(&[0.0, 20.0], 200, &PlantParams::identity(), 1).unwrap();
        for r in d.iter().flat_map(|t| &t.records) {
            assert_eq!(r.q_cmd, r.q_phy);
        }
        let s = error_stats(&d[0].records).unwrap();
        assert!(s.joints.iter().all(|j| j.mae == 0.0 && j.mse == 0.0));
    }

    #[test]
    fn constant_shift_statistics() {
        let cmd = vec![JointConfig::ZERO; 10];
        let mut phy = cmd.clone();
        phy.iter_mut().for_each(|q| q[2] = 5.0);
        let s = joint_error_stats(&cmd, &phy).unwrap();
        assert_eq!(s.joints[2].mae, 5.0);
        assert_eq!(s.joints[2].mse, 5.0);
        assert_eq!(s.joints[2].mse_sd, 0.0);
    }

    #[test]
    fn alternating_errors_cancel_in_signed_mean() {
        let cmd = vec![JointConfig::ZERO; 10];
        let phy: Vec<_> = (0..10)
            .map(|i| {
                let mut q = JointConfig::ZERO;
                q[3] = if i % 2 == 0 { 5.0 } else { -5.0 };
                q
            })
            .collect();
        let s = joint_error_stats(&cmd, &phy).unwrap();
        assert_eq!(s.joints[3].mae, 5.0);
        assert_eq!(s.joints[3].mse, 0.0);
    }

    #[test]
    fn split_seeds_are_disjoint() {
        for base in [0, 1, 42, u64::MAX] {
            let s = [Split::Train, Split::Valid, Split::Test].map(|sp| sp.seed(base));
            assert!(s[0] != s[1] && s[1] != s[2] && s[0] != s[2]);
        }
    }

    #[test]
    fn empty_records_are_rejected() {
        assert!(error_stats(&[]).is_err());
    }
}
