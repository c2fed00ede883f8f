//! Per-video module selection for video captioning.
//!
//! The pipeline for one video:
//!
//! 1. [`scoring`]: a scoring pass over `[CLS; visual tokens]` yields token
//!    and frame significance.
//! 2. [`selection`]: Gumbel-max draws over the frame scores pick a set of
//!    frames; its size routes the video to the small or the large
//!    generation module. Draws over the token scores pick a token set.
//! 3. [`masking`]: the token set becomes a visual attention mask.
//! 4. [`captioner`]: the chosen module generates the caption; training
//!    gates the loss so only that module learns from the video.

pub mod captioner;
pub mod checkpoint;
pub mod error;
pub mod masking;
pub mod metrics;
pub mod numerics;
pub mod scoring;
pub mod selection;

pub use captioner::{
    AttentionMaskInput, CaptionBatch, CaptionItem, GatedLoss, Gradients, LossInput, Model,
    ModelConfig, VideoClip, CLS_ID, END_ID, PAD_ID,
};
pub use error::{Error, Result};
pub use masking::{LearnableMaskParams, MaskMatrix, SoftMask};
pub use numerics::{Matrix, RngState};
pub use scoring::{SignificanceMap, TokenGrid};
pub use selection::{Gate, ModuleChoice, SelectionConfig, SelectionOutcome};
