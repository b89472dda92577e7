pub mod bounds;
pub mod distributions;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod rng;
pub mod sample;
pub mod special;
pub mod tail_index;

pub use error::{Error, Result};
pub use rng::RandomStream;
pub use sample::{ObservationSample, Provenance};
