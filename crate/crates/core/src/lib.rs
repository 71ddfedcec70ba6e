pub mod autograd;
pub mod corpus;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod law_distill;
pub mod memory_distill;
pub mod model;
pub mod parallel;
pub mod params;
pub mod pipeline;
pub mod prior_graph;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
