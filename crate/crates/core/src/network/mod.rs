//! The dual-branch segmentation network: shared extractor, task
//! projections, cross-talk heads and upsamplers.

pub mod checkpoint;
pub mod config;
pub mod extractor;
pub mod head;
pub mod model;
pub mod projection;

pub use checkpoint::{load_checkpoint, load_pretrained_backbone, save_checkpoint, BackboneReport};
pub use config::{
    CrossTalkMode, Dims, LossKind, ModelConfig, ModelKind, ProjectionMode, BASELINES,
    HRNET_EXTRACTOR, MTL_VARIANTS, REFERENCE_EXTRACTOR,
};
pub use extractor::{build_extractor, image_tensor, FeatureExtractor, ReferenceExtractor};
pub use head::{head_forward, upsample_scores, HeadParams, HeadSpec, Upsampler};
pub use model::{
    argmax_map, build_model, prediction_from_output, BranchOutput, CrossTalkState, ForwardCache,
    Model, ModelOutput, Prediction, ScoreGrads, Task,
};
pub use projection::{project, ProjectionParams};
