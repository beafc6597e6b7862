//! Feed-forward hysteresis compensation with an ensemble of TCNs.

use std::collections::VecDeque;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::kinematics::{JointConfig, JointLimits, NUM_JOINTS};
use crate::tcn::{CompiledTcn, Scratch, TcnModel};

/// The baseline controller: desired joints are commanded as they are.
pub fn uncalibrated_pass(q_desired: &JointConfig) -> JointConfig {
    *q_desired
}

#[derive(Debug, Clone)]
pub struct Controller {
    /// Models sorted by id; outputs are summed in this order.
    models: Vec<(String, TcnModel)>,
    compiled: Vec<CompiledTcn>,
    scratch: Scratch,
    history: VecDeque<JointConfig>,
    seq_len: usize,
    clamp: Option<JointLimits>,
    buf: Vec<f64>,
}

impl Controller {
    /// Builds a controller from `(id, model)` pairs. All models must share
    /// everything but the seed and the parameters.
    pub fn new(mut models: Vec<(String, TcnModel)>) -> Result<Self> {
        let Some((_, first)) = models.first() else {
            return Err(Error::Config("at least one model is required".into()));
        };
        let reference = (
            first.config,
            first.input_scale.clone(),
            first.output_scale.clone(),
        );
        for (id, m) in &models {
            m.validate()?;
            let mut c = m.config;
            c.seed = reference.0.seed;
            if c != reference.0 || m.input_scale != reference.1 || m.output_scale != reference.2 {
                return Err(Error::Config(format!(
                    "model '{id}' does not match the configuration of the others"
                )));
            }
            if c.channels_in != NUM_JOINTS || c.channels_out != NUM_JOINTS {
                return Err(Error::Config(format!(
                    "model '{id}' is not a joint-space model"
                )));
            }
        }
        models.sort_by(|a, b| a.0.cmp(&b.0));
        if models.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Config("model ids must be unique".into()));
        }
        let seq_len = reference.0.seq_len;
        let compiled = models
            .iter()
            .map(|(_, m)| CompiledTcn::new(m))
            .collect::<Result<_>>()?;
        Ok(Controller {
            models,
            compiled,
            scratch: Scratch::default(),
            history: VecDeque::with_capacity(seq_len),
            seq_len,
            clamp: None,
            buf: Vec::with_capacity(seq_len * NUM_JOINTS),
        })
    }

    /// Clamps calibrated commands to `limits`.
    pub fn with_clamp(mut self, limits: JointLimits) -> Self {
        self.clamp = Some(limits);
        self
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn model_ids(&self) -> Vec<&str> {
        self.models.iter().map(|(id, _)| id.as_str()).collect()
    }

    pub fn reset(&mut self) {
        self.history.clear();
    }

    /// Desired joints currently in the window, oldest first.
    pub fn window(&self) -> Vec<JointConfig> {
        self.history.iter().copied().collect()
    }

    /// Pushes `q_desired` and returns the ensemble mean of the model
    /// estimates on the (front-padded) window.
    pub fn compensate(&mut self, q_desired: &JointConfig) -> Result<JointConfig> {
        if !q_desired.is_finite() {
            return Err(domain("desired joints must be finite"));
        }
        if self.history.len() == self.seq_len {
            self.history.pop_front();
        }
        self.history.push_back(*q_desired);
        self.buf.clear();
        self.history.make_contiguous();
        // Models share their scaling, so one encoding serves all.
        self.models[0]
            .1
            .encode_window(self.history.as_slices().0, &mut self.buf)?;
        let mut sum = [0.0; NUM_JOINTS];
        let model = &self.models[0].1;
        for c in &self.compiled {
            let est = c.estimate(&self.buf, &mut self.scratch)?;
            for (s, v) in sum.iter_mut().zip(est) {
                *s += v;
            }
        }
        // The output scaling is affine, so averaging before decoding is exact
        // up to rounding.
        let n = self.compiled.len() as f64;
        let q = model.decode(&sum.map(|s| s / n));
        Ok(match &self.clamp {
            Some(l) => l.clamp(&q),
            None => q,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub n: usize,
    pub p50_us: f64,
    pub p99_us: f64,
    pub max_us: f64,
}

/// Nearest-rank percentile of sorted values.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Times `n` calls of [`Controller::compensate`] cycling through `inputs`.
pub fn latency_probe(
    ctrl: &mut Controller,
    inputs: &[JointConfig],
    n: usize,
) -> Result<LatencyStats> {
    if n == 0 || inputs.is_empty() {
        return Err(domain(
            "latency probe needs at least one call and one input",
        ));
    }
    let mut times = Vec::with_capacity(n);
    for i in 0..n {
        let q = &inputs[i % inputs.len()];
        let t0 = Instant::now();
        let out = ctrl.compensate(q)?;
        times.push(t0.elapsed().as_secs_f64() * 1e6);
        std::hint::black_box(out);
    }
    times.sort_by(f64::total_cmp);
    Ok(LatencyStats {
        n,
        p50_us: percentile(&times, 50.0),
        p99_us: percentile(&times, 99.0),
        max_us: *times.last().expect("n > 0"),
    })
}
