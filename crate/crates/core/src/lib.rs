pub mod augment;
pub mod data;
pub mod encoder;
pub mod error;
pub mod evaluate;
pub mod loss;
pub mod metrics;
pub mod momentum;
pub mod neighborhood;
pub mod params;
pub mod plot;
pub mod probe;
pub mod rng;
pub mod run;
pub mod trainer;

pub use error::{NclError, Result};
