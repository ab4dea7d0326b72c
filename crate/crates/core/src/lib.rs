pub mod ar1_fit;
pub mod data;
pub mod dense;
pub mod error;
pub mod fgn_exact;
pub mod gmrf;
pub mod hurst;
pub mod inference;
pub mod observation;
pub mod optim;
pub mod spline;

pub use error::{FgnError, Result};
