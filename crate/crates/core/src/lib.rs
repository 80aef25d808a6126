//! Missing-modality reconstruction with plan-guided retrieval and
//! conditional diffusion, on a synthetic multimodal sentiment benchmark.

pub mod encoders;
pub mod error;
pub mod executor;
pub mod harness;
pub mod nn;
pub mod objectives;
pub mod par;
pub mod planner;
pub mod retriever;
pub mod rng;
pub mod syndata;

pub use error::{Error, Result};
