//! Toy multi-modal captioner: a patch-embedding video encoder shared by a
//! small and a large caption generation module.

mod layers;
mod model;

pub use layers::BlockParams;
pub use model::{
    AttentionMaskInput, EncoderParams, GenerationModule, Gradients, LossInput, Model, TextParams,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::selection::Gate;

pub const PAD_ID: usize = 0;
/// Caption begin token; its embedding is the CLS token.
pub const CLS_ID: usize = 1;
pub const END_ID: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d: usize,
    pub heads: usize,
    pub layers: usize,
    pub mlp_hidden: usize,
    pub vocab_size: usize,
    /// Maximum caption length including the end token.
    pub max_len: usize,
    pub t_large: usize,
    pub t_small: usize,
    /// Optional third module between small and large.
    pub t_mid: Option<usize>,
    /// Tokens per frame; equals `patch_rows * patch_cols`.
    pub per_frame: usize,
    pub frame_height: usize,
    pub frame_width: usize,
    pub patch_rows: usize,
    pub patch_cols: usize,
    /// Give every module a fixed learnable mask.
    pub learnable_mask: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 64,
            heads: 2,
            layers: 2,
            mlp_hidden: 128,
            vocab_size: 48,
            max_len: 12,
            t_large: 16,
            t_small: 4,
            t_mid: None,
            per_frame: 4,
            frame_height: 16,
            frame_width: 16,
            patch_rows: 2,
            patch_cols: 2,
            learnable_mask: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return fail(format!("width {} not divisible by {} heads", self.d, self.heads));
        }
        if self.layers == 0 || self.mlp_hidden == 0 {
            return fail("need at least one layer and a non-empty MLP".into());
        }
        if self.t_small == 0 || self.t_small >= self.t_large {
            return fail(format!("need 1 <= t_small < t_large, got {} / {}", self.t_small, self.t_large));
        }
        if let Some(mid) = self.t_mid {
            if mid <= self.t_small || mid >= self.t_large {
                return fail(format!("t_mid {mid} must lie strictly between t_small and t_large"));
            }
        }
        if self.per_frame != self.patch_rows * self.patch_cols || self.per_frame == 0 {
            return fail("per_frame must equal patch_rows * patch_cols".into());
        }
        if self.frame_height % self.patch_rows != 0 || self.frame_width % self.patch_cols != 0 {
            return fail("frame size must divide evenly into patches".into());
        }
        if self.vocab_size <= END_ID || self.max_len < 2 {
            return fail("vocabulary must hold the special tokens and max_len >= 2".into());
        }
        Ok(())
    }

    pub fn patch_dim(&self) -> usize {
        (self.frame_height / self.patch_rows) * (self.frame_width / self.patch_cols)
    }

    /// Frame budgets of the generation modules, ascending.
    pub fn module_frames(&self) -> Vec<usize> {
        let mut v = vec![self.t_small];
        v.extend(self.t_mid);
        v.push(self.t_large);
        v
    }
}

/// A grayscale clip of `frames` frames, pixels frame-major then row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl VideoClip {
    pub fn new(frames: usize, height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != frames * height * width {
            return Err(Error::Shape(format!(
                "{} pixels for {frames} frames of {height}x{width}",
                pixels.len()
            )));
        }
        Ok(Self {
            frames,
            height,
            width,
            pixels,
        })
    }

    pub fn blank(frames: usize, height: usize, width: usize) -> Self {
        Self {
            frames,
            height,
            width,
            pixels: vec![0.0; frames * height * width],
        }
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn frame_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.height * self.width;
        &mut self.pixels[i * n..(i + 1) * n]
    }

    /// Uniformly subsampled clip of `count` frames (frame `k * frames / count`).
    pub fn subsample(&self, count: usize) -> Result<Self> {
        if count == 0 || count > self.frames {
            return Err(Error::Shape(format!("cannot sample {count} of {} frames", self.frames)));
        }
        let mut pixels = Vec::with_capacity(count * self.height * self.width);
        for k in 0..count {
            pixels.extend_from_slice(self.frame(k * self.frames / count));
        }
        Self::new(count, self.height, self.width, pixels)
    }
}

/// Teacher-forcing view of a set of captions, padded to `max_len`.
#[derive(Clone, Debug, PartialEq)]
pub struct CaptionBatch {
    /// `[CLS, w1, .., wk, PAD..]`
    pub inputs: Vec<Vec<usize>>,
    /// `[w1, .., wk, END, PAD..]`
    pub targets: Vec<Vec<usize>>,
    /// 1 on real target positions, 0 on padding.
    pub weights: Vec<Vec<f64>>,
}

impl CaptionBatch {
    /// `captions` hold word ids only (no begin/end tokens).
    pub fn from_captions(captions: &[Vec<usize>], vocab_size: usize, max_len: usize) -> Result<Self> {
        let mut batch = CaptionBatch {
            inputs: Vec::with_capacity(captions.len()),
            targets: Vec::with_capacity(captions.len()),
            weights: Vec::with_capacity(captions.len()),
        };
        for (n, words) in captions.iter().enumerate() {
            if words.len() + 1 > max_len {
                return Err(Error::Shape(format!(
                    "caption {n} has {} words, limit is {}",
                    words.len(),
                    max_len - 1
                )));
            }
            if let Some(&bad) = words.iter().find(|&&w| w >= vocab_size || w <= END_ID) {
                return Err(Error::OutOfRange(format!("caption {n} word id {bad}")));
            }
            let mut input = vec![CLS_ID];
            input.extend_from_slice(words);
            let mut target = words.clone();
            target.push(END_ID);
            let mut weight = vec![1.0; target.len()];
            input.resize(max_len, PAD_ID);
            target.resize(max_len, PAD_ID);
            weight.resize(max_len, 0.0);
            batch.inputs.push(input);
            batch.targets.push(target);
            batch.weights.push(weight);
        }
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn item(&self, n: usize) -> CaptionItem<'_> {
        CaptionItem {
            input: &self.inputs[n],
            target: &self.targets[n],
            weight: &self.weights[n],
        }
    }
}

/// One teacher-forcing row.
#[derive(Clone, Copy, Debug)]
pub struct CaptionItem<'a> {
    pub input: &'a [usize],
    pub target: &'a [usize],
    pub weight: &'a [f64],
}

impl CaptionItem<'_> {
    /// Positions up to and including the last weighted one.
    pub fn active_len(&self) -> usize {
        self.weight.iter().rposition(|&w| w > 0.0).map_or(1, |p| p + 1)
    }
}

/// `λ_large · L_large + λ_small · L_small` where only the gated module is
/// evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatedLoss {
    pub large: f64,
    pub small: f64,
    pub gate: Gate,
    pub total: f64,
}
