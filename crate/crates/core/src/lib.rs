pub mod aalen;
pub mod att;
pub mod counterfactual;
pub mod cox;
pub mod curve;
pub mod design;
pub mod error;
pub mod flim;
mod linalg;
pub mod panel;
pub mod plot;
pub mod rng;
pub mod simulate;
pub mod study;
pub mod weights;

pub use error::{Error, Result};
