pub mod coding;
pub mod discretization;
pub mod error;
pub mod experiment;
pub mod fixtures;
pub mod model;
pub mod rans;
pub mod topology;

pub use error::{Error, Result};
pub use model::{ChainModel, Conditional, Family, Sample};
pub use rans::{quantize_pmf, CoderState, FrequencyTable};
