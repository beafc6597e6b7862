//! Synthetic joint-space hysteresis plant mapping commanded to physical
//! joint angles.
//!
//! Each joint passes its command through a play (backlash) operator whose
//! half-width grows with the translation `q1`, adds a Bouc-Wen lag term, a
//! static offset and a linear coupling between physical joints. The Bouc-Wen state
//! is driven by the command increment divided by the translation gain and
//! its output is multiplied by it, so the whole loop scales with `g` while
//! its shape stays the same. Joint 3 gets an
//! additional pretension bias that is larger for positive commands.
//!
//! Commands are integrated in sub-steps of at most [`MAX_SUBSTEP`] degrees
//! so that the Bouc-Wen update stays accurate for coarse command streams.
//! A repeated command changes nothing, which makes the plant rate
//! independent.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::kinematics::{JointConfig, NUM_JOINTS};

pub const MAX_SUBSTEP: f64 = 0.5;

/// Plant parameters, angles in degrees and `q1` in mm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantParams {
    /// Play half-width scaled by the translation gain.
    pub deadzone_halfwidth: [f64; NUM_JOINTS],
    /// Full width of the unscaled motor-side backlash.
    pub backlash_width: [f64; NUM_JOINTS],
    /// Bouc-Wen output weight (dimensionless).
    pub bw_alpha: [f64; NUM_JOINTS],
    pub bw_beta: [f64; NUM_JOINTS],
    pub bw_gamma: [f64; NUM_JOINTS],
    pub bw_n: [f64; NUM_JOINTS],
    /// Pretension bias on q3 at zero command.
    pub bias_gain: f64,
    /// Relative change of the q3 bias between large negative and large
    /// positive commands.
    pub bias_asymmetry: f64,
    /// Constant offsets, not scaled by translation.
    pub offset: [f64; NUM_JOINTS],
    /// `α` in `g(q1) = 1 + α·w_j·q1`, per mm.
    pub trans_gain_slope: f64,
    /// Per-joint share `w_j` of the translation gain.
    pub trans_gain_weight: [f64; NUM_JOINTS],
    /// Row `j` holds the contribution of each physical joint, taken before
    /// coupling, to physical joint `j`.
    pub coupling: [[f64; NUM_JOINTS]; NUM_JOINTS],
    /// Observation noise on q2..q7.
    pub noise_sd: f64,
    pub noise_seed: u64,
}

impl Default for PlantParams {
    fn default() -> Self {
        let mut coupling = [[0.0; NUM_JOINTS]; NUM_JOINTS];
        coupling[5][2] = -0.25;
        coupling[5][3] = 0.1;
        coupling[5][4] = 0.05;
        PlantParams {
            deadzone_halfwidth: [0.05, 1.5, 1.5, 1.5, 1.5, 2.0, 0.0],
            backlash_width: [0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0],
            bw_alpha: [0.0, 0.7, 0.5, 0.7, 0.7, 0.0, 0.0],
            bw_beta: [
                0.0,
                1.0 / 40.0,
                1.0 / 24.0,
                1.0 / 40.0,
                1.0 / 40.0,
                0.0,
                0.0,
            ],
            bw_gamma: [
                0.0,
                1.0 / 40.0,
                1.0 / 24.0,
                1.0 / 40.0,
                1.0 / 40.0,
                0.0,
                0.0,
            ],
            bw_n: [1.0; NUM_JOINTS],
            bias_gain: 17.0,
            bias_asymmetry: 0.3,
            offset: [0.0, 0.0, 0.0, -7.5, 0.0, -13.0, 0.0],
            trans_gain_slope: 0.034,
            trans_gain_weight: [0.0, 0.8, 1.0, 1.0, 0.8, 0.0, 0.0],
            coupling,
            noise_sd: 0.0,
            noise_seed: 0,
        }
    }
}

impl PlantParams {
    /// A plant with `q_phy = q_cmd`.
    pub fn identity() -> Self {
        PlantParams {
            deadzone_halfwidth: [0.0; NUM_JOINTS],
            backlash_width: [0.0; NUM_JOINTS],
            bw_alpha: [0.0; NUM_JOINTS],
            bw_beta: [0.0; NUM_JOINTS],
            bw_gamma: [0.0; NUM_JOINTS],
            bw_n: [1.0; NUM_JOINTS],
            bias_gain: 0.0,
            bias_asymmetry: 0.0,
            offset: [0.0; NUM_JOINTS],
            trans_gain_slope: 0.0,
            trans_gain_weight: [0.0; NUM_JOINTS],
            coupling: [[0.0; NUM_JOINTS]; NUM_JOINTS],
            noise_sd: 0.0,
            noise_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let arrays = [
            ("deadzone_halfwidth", &self.deadzone_halfwidth),
            ("backlash_width", &self.backlash_width),
            ("bw_beta", &self.bw_beta),
            ("bw_gamma", &self.bw_gamma),
            ("trans_gain_weight", &self.trans_gain_weight),
        ];
        for (name, a) in arrays {
            if let Some(v) = a.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                return Err(domain(format!(
                    "{name} entries must be finite and non-negative, got {v}"
                )));
            }
        }
        if let Some(v) = self.bw_n.iter().find(|v| !(v.is_finite() && **v >= 1.0)) {
            return Err(domain(format!("bw_n must be >= 1, got {v}")));
        }
        let scalars = [
            ("bias_gain", self.bias_gain),
            ("bias_asymmetry", self.bias_asymmetry),
            ("trans_gain_slope", self.trans_gain_slope),
        ];
        for (name, v) in scalars {
            if !v.is_finite() {
                return Err(domain(format!("{name} must be finite")));
            }
        }
        if self.trans_gain_slope < 0.0 {
            return Err(domain("trans_gain_slope must be non-negative"));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(domain("noise_sd must be finite and non-negative"));
        }
        let finite = self
            .bw_alpha
            .iter()
            .chain(&self.offset)
            .chain(self.coupling.iter().flatten());
        if finite.into_iter().any(|v| !v.is_finite()) {
            return Err(domain("plant parameters must be finite"));
        }
        Ok(())
    }

    /// Translation gain `g_j(q1)`.
    pub fn gain(&self, joint: usize, q1: f64) -> f64 {
        1.0 + self.trans_gain_slope * self.trans_gain_weight[joint] * q1
    }

    /// Total play half-width of `joint` at translation `q1`.
    pub fn play_halfwidth(&self, joint: usize, q1: f64) -> f64 {
        0.5 * self.backlash_width[joint] + self.deadzone_halfwidth[joint] * self.gain(joint, q1)
    }

    fn q3_bias(&self, q3_cmd: f64, g: f64) -> f64 {
        self.bias_gain * g * (1.0 + self.bias_asymmetry * (q3_cmd / 20.0).tanh())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    /// Bouc-Wen state per joint, degrees.
    pub z: [f64; NUM_JOINTS],
    /// Play operator output per joint.
    pub play: [f64; NUM_JOINTS],
    pub last_cmd: JointConfig,
    pub last_phy: JointConfig,
    pub step: u64,
}

impl Default for PlantState {
    fn default() -> Self {
        PlantState {
            z: [0.0; NUM_JOINTS],
            play: [0.0; NUM_JOINTS],
            last_cmd: JointConfig::ZERO,
            last_phy: JointConfig::ZERO,
            step: 0,
        }
    }
}

impl PlantState {
    pub fn reset(&mut self) {
        *self = PlantState::default();
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn bouc_wen_increment(dx: f64, z: f64, beta: f64, gamma: f64, n: f64) -> f64 {
    let za = z.abs();
    let zn = if n == 1.0 { za } else { za.powf(n) };
    dx - beta * dx.abs() * zn * z.signum() - gamma * dx * zn
}

/// Advances the plant by one command and returns the physical joints.
pub fn plant_step(
    state: &mut PlantState,
    q_cmd: &JointConfig,
    params: &PlantParams,
) -> JointConfig {
    let q1 = q_cmd.q1();
    let q1_prev = state.last_cmd.q1();
    let mut q_phy = [0.0; NUM_JOINTS];
    for j in 0..NUM_JOINTS {
        let x0 = state.last_cmd[j];
        let x1 = q_cmd[j];
        let delta = x1 - x0;
        let n_sub = ((delta.abs() / MAX_SUBSTEP).ceil() as usize).max(1);
        for s in 1..=n_sub {
            let t = s as f64 / n_sub as f64;
            let x = x0 + t * delta;
            let r = params.play_halfwidth(j, q1_prev + t * (q1 - q1_prev));
            state.play[j] = state.play[j].clamp(x - r, x + r);
            let g = params.gain(j, q1_prev + t * (q1 - q1_prev));
            state.z[j] += bouc_wen_increment(
                delta / n_sub as f64 / g,
                state.z[j],
                params.bw_beta[j],
                params.bw_gamma[j],
                params.bw_n[j],
            );
        }
        let g = params.gain(j, q1);
        q_phy[j] = state.play[j] - params.bw_alpha[j] * g * state.z[j] + params.offset[j];
    }
    q_phy[2] += params.q3_bias(q_cmd.q3(), params.gain(2, q1));
    let uncoupled = q_phy;
    for (j, row) in params.coupling.iter().enumerate() {
        q_phy[j] += row.iter().zip(&uncoupled).map(|(c, q)| c * q).sum::<f64>();
    }
    if params.noise_sd > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(params.noise_seed);
        rng.set_stream(state.step);
        let normal = Normal::new(0.0, params.noise_sd).expect("validated noise_sd");
        for v in &mut q_phy[1..] {
            *v += normal.sample(&mut rng);
        }
    }
    state.last_cmd = *q_cmd;
    state.last_phy = JointConfig(q_phy);
    state.step += 1;
    state.last_phy
}

/// Runs `commands` through a fresh plant.
pub fn simulate(commands: &[JointConfig], params: &PlantParams) -> Vec<JointConfig> {
    let mut state = PlantState::default();
    commands
        .iter()
        .map(|q| plant_step(&mut state, q, params))
        .collect()
}

/// Command stream `0 → amp → 0 → -amp → 0` on one joint, repeated
/// `cycles` times, with the given step size.
pub fn triangle_sweep(
    joint: usize,
    amp: f64,
    step: f64,
    cycles: usize,
    q1: f64,
) -> Vec<JointConfig> {
    let n = (amp / step).round().max(1.0) as usize;
    let mut out = Vec::with_capacity(cycles * 4 * n);
    for _ in 0..cycles {
        for k in 0..4 * n {
            let phase = k as f64 / n as f64;
            let v = match k / n {
                0 => phase,
                1 => 2.0 - phase,
                2 => -(phase - 2.0),
                _ => phase - 4.0,
            } * amp;
            let mut q = JointConfig::ZERO;
            q[0] = q1;
            q[joint] = v;
            out.push(q);
        }
    }
    out
}

/// Area enclosed by the `(q_cmd, q_phy)` curve of `joint` over one cycle.
pub fn loop_area(cmd: &[JointConfig], phy: &[JointConfig], joint: usize) -> f64 {
    let n = cmd.len().min(phy.len());
    let mut a = 0.0;
    for i in 0..n {
        let k = (i + 1) % n;
        a += cmd[i][joint] * phy[k][joint] - cmd[k][joint] * phy[i][joint];
    }
    0.5 * a.abs()
}

/// Mean over joint `joint` of the absolute difference between two cycles.
pub fn cycle_mae(a: &[JointConfig], b: &[JointConfig], joint: usize) -> f64 {
    let n = a.len().min(b.len());
    if n == 0 {
        return 0.0;
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| (x[joint] - y[joint]).abs())
        .sum::<f64>()
        / n as f64
}
