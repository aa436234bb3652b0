//! Hybrid pre-block, single-stage grid detector, decode, loss and cost model.

pub mod checkpoint;
mod config;
mod decode;
pub mod flops;
mod loss;
mod model;

pub use config::{
    DetectorConfig, HybridBlockConfig, HybridLayer, StemLayer, HYBRID_LAYERS, IMAGE_CHANNELS,
    MAX_HYBRID_CHANNELS,
};
pub use decode::{decode_predictions, non_max_suppression, HeadLayout, TH, TO, TW, TX, TY};
pub use flops::count_flops;
pub use loss::{
    build_targets, cell_of, detection_loss, detection_loss_on_tape, LossTargets, LossWeights,
};
pub use model::{BnBuffer, ForwardTrace, Model, Param};
