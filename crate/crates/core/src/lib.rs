//! Kinematics, actuation, hysteresis modelling and learned compensation
//! for a two-segment continuum surgical manipulator.

pub mod bfgs;
pub mod cables;
pub mod calibration;
pub mod config;
pub mod controller;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod ik;
pub mod kinematics;
pub mod plant;
pub mod pose;
pub mod tcn;
pub mod transform;
pub mod workspace;

pub use error::{Error, Result};
pub use ik::{inverse_kinematics, IkOptions, IkSolution};
pub use kinematics::{chain_fk, JointConfig, JointLimits, Manipulator, SegmentParams};
pub use transform::RigidTransform;
