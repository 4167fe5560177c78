//! Two-hand mesh recovery at desk scale: relation-aware tokenization,
//! spatio-temporal fusion, the training losses and evaluation metrics, a
//! synthetic data generator and a small trainer.

pub mod autodiff;
pub mod blob;
pub mod error;
pub mod geom;
pub mod handkin;
pub mod losses;
pub mod metrics;
pub mod net;
pub mod synthdata;
pub mod trainer;

pub use error::{Error, Result};
