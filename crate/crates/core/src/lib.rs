//! Adversarial safety-policy synthesis and robust rollout safety filters
//! for a disturbed kinematic car.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments, clippy::type_complexity, clippy::needless_range_loop)]

pub mod artifacts;
pub mod config;
pub mod error;
pub mod experiment;
pub mod filter;
pub mod geometry;
pub mod grid;
pub mod ilqr;
pub mod lqr;
pub mod nn;
pub mod pipeline;
pub mod players;
pub mod system;
pub mod toy;
pub mod train;
pub mod vehicle;
pub mod zonotope;

pub use error::{Error, Result};
pub use system::{BoxSet, Pose, System};
pub use vehicle::{Car, EnvSpec, ReducedCar};
