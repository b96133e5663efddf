pub mod config;
pub mod counterfactual;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod pipeline;
pub mod seed;
pub mod tensor;
pub mod topic;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Gradients, Tape, Tensor, Var};
