//! Token and frame significance.
//!
//! A visual token's significance is its CLS attention weight times its
//! Euclidean norm, normalized over the whole video. A frame's significance
//! is the sum over its tokens.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, l2_norm, layer_norm, softmax_in_place, Matrix};

/// Visual tokens of one video laid out frame-major: row `i * P + p` holds
/// token `p` of frame `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenGrid {
    frames: usize,
    per_frame: usize,
    tokens: Matrix,
    cls_attention: Option<Vec<f64>>,
}

impl TokenGrid {
    pub fn new(frames: usize, per_frame: usize, tokens: Matrix) -> Result<Self> {
        if frames == 0 || per_frame == 0 {
            return Err(Error::Shape("token grid needs at least one frame and token".into()));
        }
        if tokens.rows() != frames * per_frame {
            return Err(Error::Shape(format!(
                "{} token rows for {frames} frames x {per_frame} tokens",
                tokens.rows()
            )));
        }
        if !tokens.is_finite() {
            return Err(Error::NonFinite("visual token".into()));
        }
        Ok(Self {
            frames,
            per_frame,
            tokens,
            cls_attention: None,
        })
    }

    /// Attaches CLS attention weights (frame-major, one per token).
    pub fn with_cls_attention(mut self, attention: Vec<f64>) -> Result<Self> {
        if attention.len() != self.len() {
            return Err(Error::Shape(format!(
                "{} attention weights for {} tokens",
                attention.len(),
                self.len()
            )));
        }
        if attention.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(Error::InvalidWeights("CLS attention must be finite and non-negative".into()));
        }
        let total: f64 = attention.iter().sum();
        if total > 1.0 + 1e-9 {
            return Err(Error::InvalidWeights(format!("CLS attention sums to {total} > 1")));
        }
        self.cls_attention = Some(attention);
        Ok(self)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn per_frame(&self) -> usize {
        self.per_frame
    }

    pub fn dim(&self) -> usize {
        self.tokens.cols()
    }

    pub fn len(&self) -> usize {
        self.frames * self.per_frame
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn tokens(&self) -> &Matrix {
        &self.tokens
    }

    pub fn token(&self, frame: usize, patch: usize) -> &[f64] {
        self.tokens.row(frame * self.per_frame + patch)
    }

    pub fn cls_attention(&self) -> Option<&[f64]> {
        self.cls_attention.as_deref()
    }
}

/// Normalized token scores and their per-frame sums.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignificanceMap {
    frames: usize,
    per_frame: usize,
    token_scores: Vec<f64>,
    frame_scores: Vec<f64>,
}

impl SignificanceMap {
    /// Builds a map from unnormalized non-negative token weights.
    pub fn from_weights(frames: usize, per_frame: usize, weights: &[f64]) -> Result<Self> {
        if weights.len() != frames * per_frame || weights.is_empty() {
            return Err(Error::Shape(format!(
                "{} weights for {frames}x{per_frame} tokens",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidWeights("token weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::DegenerateSignificance);
        }
        let token_scores: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let frame_scores = frame_sums(&token_scores, per_frame);
        Ok(Self {
            frames,
            per_frame,
            token_scores,
            frame_scores,
        })
    }

    pub fn uniform(frames: usize, per_frame: usize) -> Self {
        Self::from_weights(frames, per_frame, &vec![1.0; frames * per_frame])
            .expect("uniform weights are valid")
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn per_frame(&self) -> usize {
        self.per_frame
    }

    /// Frame-major flattened token scores.
    pub fn token_scores(&self) -> &[f64] {
        &self.token_scores
    }

    pub fn frame_scores(&self) -> &[f64] {
        &self.frame_scores
    }

    pub fn token(&self, frame: usize, patch: usize) -> f64 {
        self.token_scores[frame * self.per_frame + patch]
    }

    /// `1 - t`, renormalized. Used by the inverted-score sanity preset.
    pub fn inverted(&self) -> Self {
        let weights: Vec<f64> = self.token_scores.iter().map(|t| 1.0 - t).collect();
        Self::from_weights(self.frames, self.per_frame, &weights)
            // A single token carrying all the mass inverts to zero weight.
            .unwrap_or_else(|_| Self::uniform(self.frames, self.per_frame))
    }
}

fn frame_sums(token_scores: &[f64], per_frame: usize) -> Vec<f64> {
    token_scores
        .chunks(per_frame)
        .map(|c| c.iter().sum())
        .collect()
}

/// Significance of every token from CLS attention and token norms.
///
/// Fails with [`Error::DegenerateSignificance`] when every product is zero;
/// see [`token_significance_or_uniform`] for the fallback.
pub fn token_significance(grid: &TokenGrid) -> Result<SignificanceMap> {
    let attention = grid
        .cls_attention()
        .ok_or_else(|| Error::Shape("token grid has no CLS attention".into()))?;
    let weights: Vec<f64> = attention
        .iter()
        .enumerate()
        .map(|(k, a)| a * l2_norm(grid.tokens.row(k)))
        .collect();
    SignificanceMap::from_weights(grid.frames, grid.per_frame, &weights)
}

/// Like [`token_significance`], but degenerates to the uniform map with a
/// warning instead of failing.
pub fn token_significance_or_uniform(grid: &TokenGrid) -> Result<SignificanceMap> {
    match token_significance(grid) {
        Err(Error::DegenerateSignificance) => {
            log::warn!("all token significance products are zero; using the uniform map");
            Ok(SignificanceMap::uniform(grid.frames, grid.per_frame))
        }
        other => other,
    }
}

/// The pieces of a pre-norm self-attention layer that the scoring pass needs.
#[derive(Clone, Copy, Debug)]
pub struct ScoringLayer<'a> {
    pub ln_gain: &'a [f64],
    pub ln_bias: &'a [f64],
    pub wq: &'a Matrix,
    pub wk: &'a Matrix,
    pub heads: usize,
}

/// Runs one unmasked attention layer over `[CLS; visual tokens]` and stores
/// the CLS row's head-averaged weights over the visual positions.
///
/// The weights sum to one minus the CLS self-attention weight.
pub fn score_pass(grid: &TokenGrid, cls: &[f64], layer: &ScoringLayer<'_>) -> Result<TokenGrid> {
    let d = grid.dim();
    if cls.len() != d {
        return Err(Error::Shape(format!("CLS width {} vs token width {d}", cls.len())));
    }
    if layer.wq.shape() != (d, d) || layer.wk.shape() != (d, d) {
        return Err(Error::Shape("scoring projections must be d x d".into()));
    }
    if layer.heads == 0 || d % layer.heads != 0 {
        return Err(Error::Shape(format!("{d} not divisible into {} heads", layer.heads)));
    }
    let cls_row = Matrix::from_vec(1, d, cls.to_vec())?;
    let seq = cls_row.vstack(&grid.tokens);
    let (normed, _) = layer_norm(&seq, layer.ln_gain, layer.ln_bias);
    let query = normed.slice_rows(0, 1).matmul(layer.wq);
    let keys = normed.matmul(layer.wk);

    let head_dim = d / layer.heads;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut averaged = vec![0.0; seq.rows()];
    let mut row = vec![0.0; seq.rows()];
    for h in 0..layer.heads {
        let cols = h * head_dim..(h + 1) * head_dim;
        let q = &query.row(0)[cols.clone()];
        for (j, r) in row.iter_mut().enumerate() {
            *r = dot(q, &keys.row(j)[cols.clone()]) * scale;
        }
        softmax_in_place(&mut row);
        for (a, r) in averaged.iter_mut().zip(&row) {
            *a += r / layer.heads as f64;
        }
    }
    grid.clone().with_cls_attention(averaged[1..].to_vec())
}
