//! Joint-space to motor/cable displacement mapping.
//!
//! A cable routed at offset `d/2` from the neutral axis of a segment of
//! length `h` bent by `θ` has length `c = (h/θ - d/2)θ`, so the change
//! relative to the straight segment is `Δc = h - c = (d/2)θ`; the segment
//! length drops out. Cables of distal segments pass through the proximal
//! ones and pick up their bending as well, which the off-diagonal terms of
//! [`actuation_matrix`] cancel.

use nalgebra::{DVector, SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::kinematics::{JointConfig, NUM_JOINTS};

pub const NUM_ACTUATORS: usize = 12;

/// Tolerance on antagonistic pair sums accepted by [`cables_to_joints`].
pub const PAIR_TOLERANCE: f64 = 1e-9;

/// Cable offsets and pulley diameter, all in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CableGeometry {
    pub d_e: f64,
    pub d_w: f64,
    pub d_we: f64,
    pub d_jep: f64,
    pub d_jey: f64,
    pub d_jwp: f64,
    pub d_j: f64,
}

impl Default for CableGeometry {
    fn default() -> Self {
        CableGeometry {
            d_e: 4.8,
            d_w: 3.6,
            d_we: 3.6,
            d_jep: 2.4,
            d_jey: 2.4,
            d_jwp: 2.4,
            d_j: 2.0,
        }
    }
}

impl CableGeometry {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("d_e", self.d_e),
            ("d_w", self.d_w),
            ("d_we", self.d_we),
            ("d_jep", self.d_jep),
            ("d_jey", self.d_jey),
            ("d_jwp", self.d_jwp),
            ("d_j", self.d_j),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(domain(format!(
                    "cable offset {name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Motor rotations `dm1` (mm of travel) and `dm2` (deg), then cable
/// length changes `dc3..dc12` in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CableDeltas(pub [f64; NUM_ACTUATORS]);

impl CableDeltas {
    pub fn dm1(&self) -> f64 {
        self.0[0]
    }

    pub fn dm2(&self) -> f64 {
        self.0[1]
    }

    /// Cable `i` for `i` in `3..=12`.
    pub fn dc(&self, i: usize) -> f64 {
        assert!((3..=12).contains(&i), "cable index {i} out of range");
        self.0[i - 1]
    }

    /// Sums of the five antagonistic pairs `(3,4) .. (11,12)`.
    pub fn pair_sums(&self) -> [f64; 5] {
        std::array::from_fn(|k| self.0[2 + 2 * k] + self.0[3 + 2 * k])
    }
}

/// `Δc = (d/2)θ` for a bend of `theta` radians at cable offset diameter `d`.
pub fn cable_delta_single(theta: f64, d: f64) -> f64 {
    0.5 * d * theta
}

/// The 12x7 actuation matrix acting on `q` with `q1` in mm, `q2` in degrees
/// and `q3..q7` in radians.
pub fn actuation_matrix(cg: &CableGeometry) -> SMatrix<f64, NUM_ACTUATORS, NUM_JOINTS> {
    let e = cg.d_e / 2.0;
    let w = cg.d_w / 2.0;
    let we = cg.d_we / 2.0;
    let jep = cg.d_jep / 2.0;
    let jey = cg.d_jey / 2.0;
    let jwp = cg.d_jwp / 2.0;
    let j = cg.d_j / 2.0;
    #[rustfmt::skip]
    let rows = [
        1.0, 0.0, 0.0,  0.0,  0.0,  0.0, 0.0,
        0.0, 1.0, 0.0,  0.0,  0.0,  0.0, 0.0,
        0.0, 0.0, e,    -e,   0.0,  0.0, 0.0,
        0.0, 0.0, -e,   e,    0.0,  0.0, 0.0,
        0.0, 0.0, e,    e,    0.0,  0.0, 0.0,
        0.0, 0.0, -e,   -e,   0.0,  0.0, 0.0,
        0.0, 0.0, w,    0.0,  we,   0.0, 0.0,
        0.0, 0.0, -w,   0.0,  -we,  0.0, 0.0,
        0.0, 0.0, jep,  jey,  jwp,  j,   -j,
        0.0, 0.0, -jep, -jey, -jwp, -j,  j,
        0.0, 0.0, -jep, -jey, -jwp, j,   j,
        0.0, 0.0, jep,  jey,  jwp,  -j,  -j,
    ];
    SMatrix::from_row_slice(&rows)
}

fn to_matrix_units(q: &JointConfig) -> SVector<f64, NUM_JOINTS> {
    SVector::from_fn(|i, _| if i < 2 { q[i] } else { q[i].to_radians() })
}

fn from_matrix_units(x: &DVector<f64>) -> JointConfig {
    JointConfig(std::array::from_fn(|i| {
        if i < 2 {
            x[i]
        } else {
            x[i].to_degrees()
        }
    }))
}

pub fn joints_to_cables(q: &JointConfig, cg: &CableGeometry) -> CableDeltas {
    let c = actuation_matrix(cg) * to_matrix_units(q);
    CableDeltas(c.into())
}

/// Least-squares inverse of [`joints_to_cables`].
///
/// Fails when an antagonistic pair does not sum to zero within
/// [`PAIR_TOLERANCE`].
pub fn cables_to_joints(c: &CableDeltas, cg: &CableGeometry) -> Result<JointConfig> {
    cg.validate()?;
    if let Some(v) = c.0.iter().find(|v| !v.is_finite()) {
        return Err(domain(format!("non-finite cable delta {v}")));
    }
    for (k, s) in c.pair_sums().iter().enumerate() {
        if s.abs() > PAIR_TOLERANCE {
            return Err(domain(format!(
                "inconsistent cable pair dc{} + dc{} = {s:e}",
                3 + 2 * k,
                4 + 2 * k
            )));
        }
    }
    let a = actuation_matrix(cg);
    let a = nalgebra::DMatrix::from_iterator(NUM_ACTUATORS, NUM_JOINTS, a.iter().copied());
    let svd = a.svd(true, true);
    let x = svd
        .solve(&DVector::from_row_slice(&c.0), 1e-12)
        .map_err(|e| domain(format!("pseudo-inverse failed: {e}")))?;
    Ok(from_matrix_units(&x))
}
