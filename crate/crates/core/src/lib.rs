pub mod baselines;
pub mod contact;
pub mod dataset_io;
pub mod ekf;
pub mod error;
pub mod kinematics;
pub mod math_nav;
pub mod metrics;
pub mod pipeline;
pub mod simulator;
pub mod strapdown;

pub use error::{Error, Result};
