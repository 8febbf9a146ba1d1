//! Minimal reverse-mode differentiation for the Q-network: dense layers,
//! GRU cells, Adam, and a finite-difference gradient checker.

mod adam;
mod dense;
mod gradcheck;
mod gru;
pub mod linalg;
mod params;

pub use adam::{AdamConfig, MomentBlock, OptimizerState};
pub use dense::{Activation, Dense, DenseCache};
pub use gradcheck::{finite_diff_check, BlockReport, CheckConfig, GradCheckReport, LossEval};
pub use gru::{GateBlock, GruCell, GruTrace};
pub use linalg::Matrix;
pub use params::{join as params_join, GradEntry, GradientBundle, ParamMut, ParamRef, Params};
