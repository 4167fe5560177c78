//! The network: patch encoder, relation-aware tokens, spatial and temporal
//! fusion, and the regression head.

mod checkpoint;
mod config;
mod layers;
mod model;
mod prediction;

pub use checkpoint::{load_model, save_model, MODEL_BLOB, MODEL_MANIFEST};
pub use config::{NetConfig, Variant, DEFAULT_IN_CHANNELS, DEFAULT_K_UNIT};
pub use model::{decode_row, patchify, ForwardOptions, FrameInput, Model};
pub use prediction::{Prediction, HAND_BLOCK, OUTPUT_DIM};
