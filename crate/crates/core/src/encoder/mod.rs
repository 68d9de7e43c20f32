//! Four-stage patch-mixing encoder with part pooling and hash-exit heads.

pub mod config;
pub mod exit;
pub mod model;
pub mod pool;
pub mod stage;

pub use config::{EncoderConfig, Preset, N_PARTS, N_STAGES};
pub use exit::{ExitOutput, HashExit};
pub use model::{Encoded, Encoder, ExitGrads, FeatureMap, ForwardOutput};
pub use pool::{global_avg_pool, part_pool};
pub use stage::PatchMix;
