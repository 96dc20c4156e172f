pub mod acquisition;
pub mod benchmarks;
pub mod doe;
pub mod error;
pub mod evaluator;
pub mod experiment;
pub mod gp;
pub mod linalg;
pub mod optimizer;
pub mod ppls;
pub mod problem;
pub mod reduction;

pub use error::{Error, Result};
