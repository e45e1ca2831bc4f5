//! Small fully-connected networks with hand-written reverse-mode gradients.

pub mod adam;
pub mod critic;
pub mod io;
pub mod mlp;
pub mod policy;

pub use adam::Adam;
pub use critic::{Critic, CriticInputGrads};
pub use mlp::{soft_update, Activation, Gradients, Layer, MlpNet, Tape};
pub use policy::{PolicySample, SquashedGaussianPolicy, LOG_STD_MAX, LOG_STD_MIN};
