//! Desk-scale encoder-decoder image captioning: a fully connected encoder
//! over precomputed image features feeding a single-layer LSTM decoder,
//! trained by negative log-likelihood with hand-derived BPTT gradients,
//! decoded by beam search, and evaluated with clipped-precision BLEU.

pub mod data;
pub mod decode;
pub mod fixtures;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod testkit;
pub mod train;
pub mod vocab;

pub use data::{CaptionedExample, FeatureTable, SyntheticSpec};
pub use decode::{BeamHypothesis, DecodeResult};
pub use metrics::{BleuReport, NGramProfile};
pub use model::{Dims, LstmState, ModelParams};
pub use numeric::{GradCheckReport, Matrix, Vector};
pub use train::{Checkpoint, TrainConfig, TrainState};
pub use vocab::Vocabulary;
