pub mod augment;
pub mod autodiff;
pub mod checks;
pub mod dsp;
pub mod error;
pub mod losses;
pub mod model;
pub mod pipeline;
pub mod training;

pub use error::{Error, Result};
