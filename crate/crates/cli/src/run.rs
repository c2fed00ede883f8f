//! Per-video routing, training and evaluation.

use std::collections::BTreeMap;

use anyhow::{anyhow, Context, Result};
use log::{debug, info};
use mams::masking::{build_mask_large, restrict_mask_small};
use mams::metrics::BleuStats;
use mams::numerics::RngState;
use mams::scoring::{token_significance_or_uniform, SignificanceMap};
use mams::selection::{self, complete_frames, select_frames, select_tokens, SelectionConfig};
use mams::{
    AttentionMaskInput, CaptionBatch, LossInput, MaskMatrix, Model, ModuleChoice, VideoClip,
};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, MaskMode, RoutingMode};
use crate::data::{Dataset, Dynamics};

const TRAIN_TAG: u64 = 0x7a11;
const SELECT_TAG: u64 = 0x5e1e;
const EVAL_TAG: u64 = 0xe7a1;
const EVAL_DATA_TAG: u64 = 0xe7a1_da7a;

/// Where one video goes and what it sees.
#[derive(Clone, Debug, PartialEq)]
pub struct Route {
    pub module: usize,
    /// Frames fed to the module, ascending.
    pub frames: Vec<usize>,
    /// Selected frame set, `None` when the selector is bypassed.
    pub frame_set: Option<Vec<usize>>,
    pub token_set: Option<Vec<(usize, usize)>>,
    pub mask: Option<MaskMatrix>,
}

impl Route {
    pub fn attention(&self, mode: MaskMode) -> AttentionMaskInput<'_> {
        match (mode, &self.mask) {
            (MaskMode::Adaptive, Some(m)) => AttentionMaskInput::Adaptive(m),
            (MaskMode::FixedLearnable, _) => AttentionMaskInput::Learnable,
            _ => AttentionMaskInput::Full,
        }
    }
}

/// One line of the selection audit log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub video: usize,
    pub dynamics: Dynamics,
    pub frame_set_size: Option<usize>,
    pub module: String,
    pub token_set_size: Option<usize>,
    pub final_frames: Vec<usize>,
}

fn top_by_score(candidates: &[usize], scores: &[f64], count: usize) -> Vec<usize> {
    let mut c = candidates.to_vec();
    c.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    c.truncate(count);
    c.sort_unstable();
    c
}

/// Routes one clip under `cfg`'s routing and mask modes.
pub fn route(
    model: &Model,
    cfg: &ExperimentConfig,
    sel: &SelectionConfig,
    clip: &VideoClip,
    rng: &mut RngState,
) -> Result<Route> {
    let mc = model.config();
    let all: Vec<usize> = (0..mc.t_large).collect();
    let large = model.large_index();
    let needs_scores = cfg.routing.uses_selector() || cfg.mask == MaskMode::Adaptive;
    let sig: Option<SignificanceMap> = if needs_scores {
        let grid = model.score(clip)?;
        let s = token_significance_or_uniform(&grid)?;
        Some(if cfg.routing == RoutingMode::InvertedScore {
            s.inverted()
        } else {
            s
        })
    } else {
        None
    };

    let (module, frames, frame_set) = match (cfg.routing, &sig) {
        (RoutingMode::AlwaysLarge, _) => (large, all.clone(), None),
        (_, None) => unreachable!("selector modes always score"),
        (mode, Some(sig)) => {
            let set = select_frames(sig, rng, sel)?;
            let set_vec: Vec<usize> = set.iter().copied().collect();
            let f = sig.frame_scores();
            let (module, frames) = match mode {
                RoutingMode::Mams | RoutingMode::InvertedScore => {
                    match selection::choose_module(set.len(), sel).0 {
                        ModuleChoice::Small => (0, complete_frames(&set, sig, rng, sel)?),
                        ModuleChoice::Large => (large, all.clone()),
                    }
                }
                RoutingMode::AlwaysSmall => {
                    if set.len() <= sel.t_small {
                        (0, complete_frames(&set, sig, rng, sel)?)
                    } else {
                        (0, top_by_score(&set_vec, f, sel.t_small))
                    }
                }
                RoutingMode::SwappedRule => {
                    if set.len() > sel.t_small {
                        (0, top_by_score(&set_vec, f, sel.t_small))
                    } else {
                        (large, all.clone())
                    }
                }
                RoutingMode::ThreeModule => {
                    let mid = mc.t_mid.context("three-module routing needs t_mid")?;
                    if set.len() <= sel.t_small {
                        (0, complete_frames(&set, sig, rng, sel)?)
                    } else if set.len() <= mid {
                        let mut mid_sel = sel.clone();
                        mid_sel.t_small = mid;
                        mid_sel.max_while_iters = mid_sel.max_while_iters.max(50 * mid);
                        (1, complete_frames(&set, sig, rng, &mid_sel)?)
                    } else {
                        (large, all.clone())
                    }
                }
                RoutingMode::AlwaysLarge => unreachable!(),
            };
            (module, frames, Some(set_vec))
        }
    };

    let token_set = sig
        .as_ref()
        .map(|s| select_tokens(s, rng, sel))
        .transpose()?
        .map(|t| t.into_iter().collect::<Vec<_>>());
    let mask = match (cfg.mask, &token_set) {
        (MaskMode::Adaptive, Some(tokens)) => {
            let m = build_mask_large(tokens, mc.t_large, mc.per_frame)?;
            Some(if module == large {
                m
            } else {
                restrict_mask_small(&m, &frames, mc.per_frame)?
            })
        }
        _ => None,
    };
    Ok(Route {
        module,
        frames,
        frame_set,
        token_set,
        mask,
    })
}

/// Training and evaluation data prepared for one model.
pub struct Prepared {
    pub data: Dataset,
    pub clips: Vec<VideoClip>,
    pub captions: CaptionBatch,
}

impl Prepared {
    /// Subsamples clips to `t_large` frames and pads captions to `max_len`.
    pub fn new(data: Dataset, cfg: &ExperimentConfig, t_large: usize, max_len: usize) -> Result<Self> {
        let clips = (0..data.len())
            .map(|i| {
                let c = data.clip(i, cfg.pixel_scale)?;
                Ok(if c.frames == t_large { c } else { c.subsample(t_large)? })
            })
            .collect::<Result<Vec<_>>>()?;
        let caps: Vec<Vec<usize>> = data.videos.iter().map(|v| v.caption.clone()).collect();
        let captions = CaptionBatch::from_captions(&caps, data.vocab.len(), max_len)?;
        Ok(Self {
            data,
            clips,
            captions,
        })
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn input<'a>(&'a self, i: usize, route: &'a Route, mode: MaskMode) -> LossInput<'a> {
        LossInput {
            clip: &self.clips[i],
            frames: &route.frames,
            mask: route.attention(mode),
            caption: self.captions.item(i),
        }
    }
}

/// Training and evaluation datasets for `cfg`.
pub fn datasets(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let spec = cfg.video_spec();
    let seed = cfg.data_seed();
    let train = Dataset::generate(&spec, cfg.train_videos, cfg.high_fraction, seed)?;
    let eval = if cfg.preset == "overfit8" {
        train.clone()
    } else {
        let s = RngState::derive(seed, &[EVAL_DATA_TAG]).next_u64();
        Dataset::generate(&spec, cfg.eval_videos, cfg.high_fraction, s)?
    };
    Ok((train, eval))
}

/// Evaluation summary; every rate lies in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub videos: usize,
    pub loss: f64,
    pub token_accuracy: f64,
    pub bleu: [f64; 4],
    /// Fraction of videos routed to the large module.
    pub routing_rate: f64,
    pub routing_rate_high: f64,
    pub routing_rate_low: f64,
    pub mean_frame_set: f64,
    pub mean_token_fraction: f64,
    pub exact_match: f64,
}

/// One per-epoch record of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub epoch: usize,
    pub steps: usize,
    pub train_loss: f64,
    pub train_routing_rate: f64,
    pub train_mean_frame_set: f64,
    pub eval: Option<EvalMetrics>,
}

/// One optimizer step: videos routed to the same module.
#[derive(Clone, Debug)]
pub struct Step {
    pub module: usize,
    pub mask: MaskMode,
    pub items: Vec<(usize, Route)>,
}

pub struct Trainer {
    pub cfg: ExperimentConfig,
    pub model: Model,
    pub train: Prepared,
    sel: SelectionConfig,
    pub steps: usize,
}

fn rate(hits: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

impl Trainer {
    pub fn new(cfg: ExperimentConfig, train: Dataset) -> Result<Self> {
        cfg.validate()?;
        let max_len = train.max_caption_len() + 1;
        let model = Model::new(cfg.model_config(train.vocab.len(), max_len), cfg.seed)?;
        let train = Prepared::new(train, &cfg, cfg.t_large, max_len)?;
        let sel = cfg.selection_config(false)?;
        Ok(Self {
            cfg,
            model,
            train,
            sel,
            steps: 0,
        })
    }

    /// Videos of `epoch` in training order, chunked into batches.
    pub fn batches(&self, epoch: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        RngState::derive(self.cfg.seed, &[TRAIN_TAG, epoch as u64]).shuffle(&mut order);
        order.chunks(self.cfg.batch_size).map(<[usize]>::to_vec).collect()
    }

    /// Routes a batch with the current parameters and groups it by module.
    /// Selection noise is fresh for every (epoch, video).
    pub fn plan(&self, epoch: usize, batch: &[usize]) -> Result<Vec<Step>> {
        let cfg = &self.cfg;
        let mut groups: BTreeMap<usize, Vec<(usize, Route)>> = BTreeMap::new();
        for &i in batch {
            let id = self.train.data.videos[i].id as u64;
            let mut rng = RngState::derive(self.cfg.seed, &[SELECT_TAG, epoch as u64, id]);
            let r = route(&self.model, cfg, &self.sel, &self.train.clips[i], &mut rng)?;
            groups.entry(r.module).or_default().push((i, r));
        }
        Ok(groups
            .into_iter()
            .map(|(module, items)| Step {
                module,
                mask: cfg.mask,
                items,
            })
            .collect())
    }

    /// One SGD step on the mean loss of `step`'s videos; returns the summed
    /// per-video loss.
    pub fn apply(&mut self, step: &Step) -> Result<f64> {
        let mut grads = self.model.zeros_like();
        let scale = 1.0 / step.items.len() as f64;
        let mut total = 0.0;
        for (i, r) in &step.items {
            let input = self.train.input(*i, r, step.mask);
            let loss = self
                .model
                .loss_and_grad(step.module, &input, Some((&mut grads, scale)))
                .map_err(|e| anyhow!(e))
                .with_context(|| self.diagnostic(*i, r))?;
            total += loss;
        }
        self.model.sgd_step(&grads, self.cfg.lr);
        if !self.model.to_flat().iter().all(|v| v.is_finite()) {
            return Err(anyhow!("non-finite parameters after step {}", self.steps))
                .with_context(|| self.diagnostic(step.items[0].0, &step.items[0].1));
        }
        self.steps += 1;
        Ok(total)
    }

    fn diagnostic(&self, i: usize, r: &Route) -> String {
        format!(
            "training aborted at step {} on video {} ({:?}, caption {:?}): module {}, frames {:?}, |S^frm| {:?}, |S^tk| {:?}",
            self.steps,
            self.train.data.videos[i].id,
            self.train.data.videos[i].dynamics,
            self.train.data.vocab.decode(&self.train.data.videos[i].caption),
            self.model.module_name(r.module),
            r.frames,
            r.frame_set.as_ref().map(Vec::len),
            r.token_set.as_ref().map(Vec::len),
        )
    }

    /// Runs one epoch; returns `(mean loss, routing rate, mean |S^frm|)`.
    pub fn epoch(&mut self, epoch: usize) -> Result<(f64, f64, f64)> {
        let mut loss = 0.0;
        let mut to_large = 0;
        let mut set_sum = 0usize;
        for batch in self.batches(epoch) {
            for step in self.plan(epoch, &batch)? {
                if step.module == self.model.large_index() {
                    to_large += step.items.len();
                }
                set_sum += step
                    .items
                    .iter()
                    .map(|(_, r)| r.frame_set.as_ref().map_or(r.frames.len(), Vec::len))
                    .sum::<usize>();
                loss += self.apply(&step)?;
            }
        }
        let n = self.train.len();
        Ok((loss / n as f64, rate(to_large, n), set_sum as f64 / n as f64))
    }

    /// Trains for `cfg.epochs`, evaluating on `eval` as configured.
    pub fn run(&mut self, eval: &Prepared, mut on_epoch: impl FnMut(&MetricsReport)) -> Result<Vec<MetricsReport>> {
        let mut history = Vec::with_capacity(self.cfg.epochs);
        for e in 0..self.cfg.epochs {
            let (loss, rr, fs) = self.epoch(e)?;
            let last = e + 1 == self.cfg.epochs;
            let due = self.cfg.eval_every > 0 && (e + 1) % self.cfg.eval_every == 0;
            let metrics = if last || due {
                Some(evaluate(&self.model, &self.cfg, eval, self.cfg.deterministic_eval)?.0)
            } else {
                None
            };
            let rec = MetricsReport {
                epoch: e,
                steps: self.steps,
                train_loss: loss,
                train_routing_rate: rr,
                train_mean_frame_set: fs,
                eval: metrics,
            };
            debug!("epoch {e}: loss {loss:.4} routing {rr:.3} |S| {fs:.2}");
            on_epoch(&rec);
            history.push(rec);
        }
        Ok(history)
    }
}

/// Selection noise used for `video` at evaluation.
pub fn eval_rng(seed: u64, video: usize) -> RngState {
    RngState::derive(seed, &[EVAL_TAG, video as u64])
}

/// Greedy-decodes every video and scores it against its reference.
/// Selection noise is seeded per video unless `deterministic`.
pub fn evaluate(
    model: &Model,
    cfg: &ExperimentConfig,
    data: &Prepared,
    deterministic: bool,
) -> Result<(EvalMetrics, Vec<AuditRecord>)> {
    let sel = cfg.selection_config(deterministic)?;
    let mc = model.config();
    let n_tokens = (mc.t_large * mc.per_frame) as f64;
    let mut bleu = BleuStats::new(4);
    let mut audit = Vec::with_capacity(data.len());
    let (mut hits, mut total, mut exact) = (0, 0, 0);
    let (mut loss, mut set_sum, mut tok_sum) = (0.0, 0.0, 0.0);
    let mut large = [0usize; 2];
    let mut counts = [0usize; 2];
    for i in 0..data.len() {
        let video = &data.data.videos[i];
        let mut rng = eval_rng(cfg.seed, video.id);
        let r = route(model, cfg, &sel, &data.clips[i], &mut rng)?;
        let input = data.input(i, &r, cfg.mask);
        let decoded = model.greedy_decode(r.module, &data.clips[i], &r.frames, input.mask, mc.max_len)?;
        bleu.add(&decoded, &video.caption);
        exact += usize::from(decoded == video.caption);
        let (h, t) = model.token_hits(r.module, &input)?;
        hits += h;
        total += t;
        loss += model.loss_and_grad(r.module, &input, None)?;
        let k = usize::from(video.dynamics == Dynamics::High);
        counts[k] += 1;
        if r.module == model.large_index() {
            large[k] += 1;
        }
        set_sum += r.frame_set.as_ref().map_or(mc.t_large, Vec::len) as f64;
        tok_sum += r.token_set.as_ref().map_or(n_tokens, |t| t.len() as f64) / n_tokens;
        audit.push(AuditRecord {
            video: video.id,
            dynamics: video.dynamics,
            frame_set_size: r.frame_set.as_ref().map(Vec::len),
            module: model.module_name(r.module).into(),
            token_set_size: r.token_set.as_ref().map(Vec::len),
            final_frames: r.frames.clone(),
        });
    }
    let n = data.len().max(1) as f64;
    let b = bleu.scores();
    let metrics = EvalMetrics {
        videos: data.len(),
        loss: loss / n,
        token_accuracy: rate(hits, total),
        bleu: [b[0], b[1], b[2], b[3]],
        routing_rate: rate(large[0] + large[1], data.len()),
        routing_rate_high: rate(large[1], counts[1]),
        routing_rate_low: rate(large[0], counts[0]),
        mean_frame_set: set_sum / n,
        mean_token_fraction: tok_sum / n,
        exact_match: exact as f64 / n,
    };
    Ok((metrics, audit))
}

/// Everything a finished run produces.
pub struct RunOutput {
    pub cfg: ExperimentConfig,
    pub model: Model,
    pub history: Vec<MetricsReport>,
    pub final_eval: EvalMetrics,
    pub audit: Vec<AuditRecord>,
}

/// Generates data, trains, and evaluates.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let (train, eval) = datasets(cfg)?;
    run_on(cfg, train, eval)
}

pub fn run_on(cfg: &ExperimentConfig, train: Dataset, eval: Dataset) -> Result<RunOutput> {
    let mut trainer = Trainer::new(cfg.clone(), train)?;
    let max_len = trainer.model.config().max_len;
    let eval = Prepared::new(eval, cfg, cfg.t_large, max_len)?;
    let history = trainer.run(&eval, |_| {})?;
    let (final_eval, audit) = evaluate(&trainer.model, cfg, &eval, cfg.deterministic_eval)?;
    info!(
        "{} seed {}: BLEU-4 {:.4} routing {:.3} (high {:.3}, low {:.3})",
        cfg.preset,
        cfg.seed,
        final_eval.bleu[3],
        final_eval.routing_rate,
        final_eval.routing_rate_high,
        final_eval.routing_rate_low
    );
    Ok(RunOutput {
        cfg: cfg.clone(),
        model: trainer.model,
        history,
        final_eval,
        audit,
    })
}

/// Checks every audited choice against the configured routing rule.
pub fn audit_violations(cfg: &ExperimentConfig, audit: &[AuditRecord]) -> Vec<usize> {
    audit
        .iter()
        .filter(|a| {
            let Some(s) = a.frame_set_size else {
                return a.module != "large";
            };
            let expect = match cfg.routing {
                RoutingMode::Mams | RoutingMode::InvertedScore => {
                    if s <= cfg.t_small { "small" } else { "large" }
                }
                RoutingMode::SwappedRule => {
                    if s > cfg.t_small { "small" } else { "large" }
                }
                RoutingMode::AlwaysSmall => "small",
                RoutingMode::AlwaysLarge => "large",
                RoutingMode::ThreeModule => {
                    if s <= cfg.t_small {
                        "small"
                    } else if s <= cfg.t_mid.unwrap_or(usize::MAX) {
                        "mid"
                    } else {
                        "large"
                    }
                }
            };
            a.module != expect
        })
        .map(|a| a.video)
        .collect()
}
