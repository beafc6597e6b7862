//! Plant statistics against reference q3 errors, and a small search that
//! tunes the q3 bias and the translation gain to hit them.

use serde::{Deserialize, Serialize};

use crate::datagen::{collect_dataset, error_stats, ErrorStats};
use crate::error::{domain, Result};
use crate::plant::PlantParams;

/// Reference q3 MAE (degrees) at the given translations (mm).
pub const Q3_REFERENCE: [(f64, f64); 3] = [(0.0, 18.1), (20.0, 28.4), (50.0, 46.4)];
/// Relative half-width of the accepted q3 MAE band.
pub const Q3_BAND: f64 = 0.25;
/// Smallest accepted q3 signed-to-absolute error ratio.
pub const Q3_MIN_SIGN_RATIO: f64 = 0.85;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub q1: f64,
    pub stats: ErrorStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Q3Check {
    pub q1: f64,
    pub reference: f64,
    pub mae: f64,
    pub band: [f64; 2],
    pub sign_ratio: f64,
    pub in_band: bool,
    pub sign_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub rows: Vec<CalibrationRow>,
    pub q3: Vec<Q3Check>,
}

impl CalibrationReport {
    pub fn passed(&self) -> bool {
        self.q3.iter().all(|c| c.in_band && c.sign_ok)
    }

    /// CSV rows `q1,joint,mae,mae_sd,mse,mse_sd`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("q1,joint,mae,mae_sd,mse,mse_sd\n");
        for r in &self.rows {
            for (j, s) in r.stats.joints.iter().enumerate() {
                out += &format!(
                    "{},q{},{},{},{},{}\n",
                    r.q1,
                    j + 1,
                    s.mae,
                    s.mae_sd,
                    s.mse,
                    s.mse_sd
                );
            }
        }
        out
    }
}

fn check(q1: f64, reference: f64, stats: &ErrorStats) -> Q3Check {
    let s = stats.joints[2];
    let band = [reference * (1.0 - Q3_BAND), reference * (1.0 + Q3_BAND)];
    let sign_ratio = if s.mae > 0.0 { s.mse / s.mae } else { 0.0 };
    Q3Check {
        q1,
        reference,
        mae: s.mae,
        band,
        sign_ratio,
        in_band: s.mae >= band[0] && s.mae <= band[1],
        sign_ok: sign_ratio >= Q3_MIN_SIGN_RATIO,
    }
}

/// Error statistics of a freshly generated dataset at every translation in
/// `q1_values`, plus the q3 reference checks.
pub fn calibration_report(
    params: &PlantParams,
    q1_values: &[f64],
    n_per: usize,
    seed: u64,
) -> Result<CalibrationReport> {
    let mut all: Vec<f64> = q1_values.to_vec();
    for (q1, _) in Q3_REFERENCE {
        if !all.contains(&q1) {
            all.push(q1);
        }
    }
    all.sort_by(f64::total_cmp);
    let data = collect_dataset(&all, n_per, params, seed)?;
    let rows = data
        .iter()
        .map(|t| {
            Ok(CalibrationRow {
                q1: t.q1,
                stats: error_stats(&t.records)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let q3 = Q3_REFERENCE
        .iter()
        .map(|&(q1, reference)| {
            let row = rows
                .iter()
                .find(|r| r.q1 == q1)
                .expect("reference translations are included");
            check(q1, reference, &row.stats)
        })
        .collect();
    Ok(CalibrationReport { rows, q3 })
}

/// Squared relative q3 MAE misfit over the reference translations.
fn misfit(params: &PlantParams, n_per: usize, seed: u64) -> Result<f64> {
    let q1: Vec<f64> = Q3_REFERENCE.iter().map(|r| r.0).collect();
    let data = collect_dataset(&q1, n_per, params, seed)?;
    let mut f = 0.0;
    for (t, (_, reference)) in data.iter().zip(Q3_REFERENCE) {
        let mae = error_stats(&t.records)?.joints[2].mae;
        f += ((mae - reference) / reference).powi(2);
    }
    Ok(f)
}

/// Compass search over `bias_gain` and `trans_gain_slope`, starting from
/// `start`, minimizing the q3 misfit. Other parameters are kept.
pub fn fit_q3(
    start: &PlantParams,
    n_per: usize,
    seed: u64,
    max_evals: usize,
) -> Result<PlantParams> {
    start.validate()?;
    if max_evals == 0 {
        return Err(domain("calibration needs at least one evaluation"));
    }
    let mut best = start.clone();
    let mut f_best = misfit(&best, n_per, seed)?;
    let mut step = [
        0.25 * start.bias_gain.abs().max(1.0),
        0.25 * start.trans_gain_slope.abs().max(0.004),
    ];
    let mut evals = 1;
    while evals < max_evals && step[0] > 1e-3 {
        let mut improved = false;
        'dirs: for k in 0..2 {
            for sign in [1.0, -1.0] {
                let mut p = best.clone();
                match k {
                    0 => p.bias_gain = (p.bias_gain + sign * step[0]).max(0.0),
                    _ => p.trans_gain_slope = (p.trans_gain_slope + sign * step[1]).max(0.0),
                }
                evals += 1;
                let f = misfit(&p, n_per, seed)?;
                if f < f_best {
                    best = p;
                    f_best = f;
                    improved = true;
                    break 'dirs;
                }
                if evals >= max_evals {
                    break 'dirs;
                }
            }
        }
        if !improved {
            step = step.map(|s| 0.5 * s);
        }
    }
    Ok(best)
}
