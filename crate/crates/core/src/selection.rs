//! Frame and token selection with the Gumbel-max operator, and the
//! small/large module routing rule.
//!
//! Frames are drawn `T_large` times from the frame significance scores; the
//! number of distinct frames drawn decides the module. Tokens are drawn
//! `T_large * P` times from the token scores and feed the attention mask.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{gumbel_from_uniform, RngState};
use crate::scoring::SignificanceMap;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub t_small: usize,
    pub t_large: usize,
    /// Gumbel-Softmax temperature. Only the soft relaxation depends on it;
    /// the hard argmax is temperature invariant.
    pub tau: f64,
    /// Disables the noise: every draw returns the argmax.
    pub deterministic: bool,
    pub max_while_iters: usize,
}

impl SelectionConfig {
    pub fn new(t_small: usize, t_large: usize) -> Result<Self> {
        let cfg = Self {
            t_small,
            t_large,
            tau: 1.0,
            deterministic: false,
            max_while_iters: 50 * t_small,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn deterministic(mut self, on: bool) -> Self {
        self.deterministic = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_small == 0 || self.t_small >= self.t_large {
            return Err(Error::Config(format!(
                "need 1 <= t_small < t_large, got {} and {}",
                self.t_small, self.t_large
            )));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.tau)));
        }
        if self.max_while_iters < self.t_small {
            return Err(Error::Config("max_while_iters must be at least t_small".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModuleChoice {
    Small,
    Large,
}

/// Loss weights `(λ_large, λ_small)`; always one-hot.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub large: f64,
    pub small: f64,
}

impl Gate {
    pub fn for_module(module: ModuleChoice) -> Self {
        match module {
            ModuleChoice::Large => Gate { large: 1.0, small: 0.0 },
            ModuleChoice::Small => Gate { large: 0.0, small: 1.0 },
        }
    }

    pub fn module(&self) -> ModuleChoice {
        if self.large == 1.0 {
            ModuleChoice::Large
        } else {
            ModuleChoice::Small
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    /// Distinct frames drawn by the frame selector, ascending.
    pub frame_set: Vec<usize>,
    /// Frames handed to the chosen module, ascending.
    pub final_frames: Vec<usize>,
    /// Distinct `(frame, token)` pairs drawn by the token selector.
    pub token_set: Vec<(usize, usize)>,
    pub module: ModuleChoice,
    pub gate: Gate,
}

fn check_weights(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::InvalidWeights("empty weight vector".into()));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::InvalidWeights("weights must be finite and non-negative".into()));
    }
    let total: f64 = weights.iter().sum();
    if total == 0.0 {
        return Err(Error::ZeroWeights);
    }
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidWeights(format!("weights sum to {total}")));
    }
    Ok(())
}

fn argmax_lowest(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (k, v) in values.enumerate() {
        if v > best_v {
            best = k;
            best_v = v;
        }
    }
    best
}

/// One hard Gumbel-Softmax draw: `argmax_k (ln w_k + g_k) / tau`.
///
/// Zero weights are never selected. In deterministic mode the noise is zero
/// and ties go to the lowest index. A stochastic draw always consumes one
/// uniform per entry.
pub fn gumbel_select(weights: &[f64], rng: &mut RngState, cfg: &SelectionConfig) -> Result<usize> {
    check_weights(weights)?;
    if cfg.deterministic {
        return Ok(argmax_lowest(weights.iter().copied()));
    }
    let perturbed: Vec<f64> = weights
        .iter()
        .map(|&w| {
            let g = gumbel_from_uniform(rng.uniform_open());
            if w > 0.0 {
                (w.ln() + g) / cfg.tau
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    Ok(argmax_lowest(perturbed.into_iter()))
}

/// Soft relaxation `softmax((ln w + g) / tau)` for given noise `g`.
/// Diagnostics only; routing uses [`gumbel_select`].
pub fn gumbel_softmax(weights: &[f64], noise: &[f64], tau: f64) -> Vec<f64> {
    let logits: Vec<f64> = weights
        .iter()
        .zip(noise)
        .map(|(&w, &g)| if w > 0.0 { (w.ln() + g) / tau } else { f64::NEG_INFINITY })
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits
        .iter()
        .map(|&l| if l == f64::NEG_INFINITY { 0.0 } else { (l - max).exp() })
        .collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Draws `T_large` frames and keeps the distinct ones.
pub fn select_frames(
    sig: &SignificanceMap,
    rng: &mut RngState,
    cfg: &SelectionConfig,
) -> Result<BTreeSet<usize>> {
    if sig.frames() != cfg.t_large {
        return Err(Error::Shape(format!(
            "significance map has {} frames, selector expects {}",
            sig.frames(),
            cfg.t_large
        )));
    }
    let mut set = BTreeSet::new();
    for _ in 0..cfg.t_large {
        set.insert(gumbel_select(sig.frame_scores(), rng, cfg)?);
    }
    Ok(set)
}

/// Small module iff at most `T_small` distinct frames were drawn.
pub fn choose_module(frame_set_len: usize, cfg: &SelectionConfig) -> (ModuleChoice, Gate) {
    let module = if frame_set_len <= cfg.t_small {
        ModuleChoice::Small
    } else {
        ModuleChoice::Large
    };
    (module, Gate::for_module(module))
}

/// Highest-score frames not yet in `chosen`, best first, lowest index on ties.
pub fn top_frames_excluding(scores: &[f64], chosen: &BTreeSet<usize>, count: usize) -> Vec<usize> {
    let mut rest: Vec<usize> = (0..scores.len()).filter(|i| !chosen.contains(i)).collect();
    rest.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    rest.truncate(count);
    rest
}

/// Grows `frame_set` to exactly `T_small` distinct frames by further draws.
/// After `max_while_iters` draws (or immediately, in deterministic mode) the
/// remaining slots are filled with the highest-scoring unselected frames.
pub fn complete_frames(
    frame_set: &BTreeSet<usize>,
    sig: &SignificanceMap,
    rng: &mut RngState,
    cfg: &SelectionConfig,
) -> Result<Vec<usize>> {
    if frame_set.len() > cfg.t_small {
        return Err(Error::Capacity(format!(
            "{} frames selected for a small module of {}",
            frame_set.len(),
            cfg.t_small
        )));
    }
    if let Some(&bad) = frame_set.iter().find(|&&i| i >= sig.frames()) {
        return Err(Error::OutOfRange(format!("frame {bad}")));
    }
    let mut set = frame_set.clone();
    if !cfg.deterministic {
        let mut iters = 0;
        while set.len() < cfg.t_small && iters < cfg.max_while_iters {
            set.insert(gumbel_select(sig.frame_scores(), rng, cfg)?);
            iters += 1;
        }
    }
    let missing = cfg.t_small - set.len();
    let fill = top_frames_excluding(sig.frame_scores(), &set, missing);
    set.extend(fill);
    Ok(set.into_iter().collect())
}

/// Draws `T_large * P` tokens and keeps the distinct `(frame, token)` pairs.
pub fn select_tokens(
    sig: &SignificanceMap,
    rng: &mut RngState,
    cfg: &SelectionConfig,
) -> Result<BTreeSet<(usize, usize)>> {
    let p = sig.per_frame();
    let n = sig.frames() * p;
    let mut set = BTreeSet::new();
    for _ in 0..n {
        let k = gumbel_select(sig.token_scores(), rng, cfg)?;
        set.insert((k / p, k % p));
    }
    Ok(set)
}

/// Frame selection, routing, frame completion and token selection in order.
pub fn select(
    sig: &SignificanceMap,
    rng: &mut RngState,
    cfg: &SelectionConfig,
) -> Result<SelectionOutcome> {
    cfg.validate()?;
    let frame_set = select_frames(sig, rng, cfg)?;
    let (module, gate) = choose_module(frame_set.len(), cfg);
    let final_frames = match module {
        ModuleChoice::Small => complete_frames(&frame_set, sig, rng, cfg)?,
        ModuleChoice::Large => (0..cfg.t_large).collect(),
    };
    let token_set = select_tokens(sig, rng, cfg)?;
    Ok(SelectionOutcome {
        frame_set: frame_set.into_iter().collect(),
        final_frames,
        token_set: token_set.into_iter().collect(),
        module,
        gate,
    })
}
