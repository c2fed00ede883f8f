//! Multi-run experiments: the frame-count sweep and preset ablations.

use anyhow::{ensure, Result};
use log::info;

use crate::config::{ExperimentConfig, MaskMode, RoutingMode};
use crate::report::SummaryRow;
use crate::run::{datasets, run_experiment, run_on};

fn final_loss(out: &crate::run::RunOutput) -> f64 {
    out.history.last().map_or(f64::NAN, |r| r.train_loss)
}

/// Always-large baselines at each frame count, then MAMS at the largest.
pub fn sweep_configs(cfg: &ExperimentConfig, counts: &[usize]) -> Result<Vec<ExperimentConfig>> {
    ensure!(!counts.is_empty(), "need at least one frame count");
    ensure!(counts.windows(2).all(|w| w[0] < w[1]), "frame counts must be ascending");
    let max = *counts.last().expect("non-empty");
    ensure!(
        counts[0] >= 2 && max <= cfg.source_frames,
        "frame counts must lie in 2..={}",
        cfg.source_frames
    );
    let mut configs: Vec<ExperimentConfig> = counts
        .iter()
        .map(|&t| ExperimentConfig {
            preset: "baseline".into(),
            routing: RoutingMode::AlwaysLarge,
            mask: MaskMode::None,
            t_large: t,
            t_small: cfg.t_small.min(t - 1),
            t_mid: None,
            ..cfg.clone()
        })
        .collect();
    configs.push(ExperimentConfig {
        preset: "mams".into(),
        routing: RoutingMode::Mams,
        mask: MaskMode::Adaptive,
        t_large: max,
        t_mid: None,
        ..cfg.clone()
    });
    for c in &configs {
        c.validate()?;
    }
    Ok(configs)
}

/// Runs [`sweep_configs`] on one dataset. Returns `counts.len() + 1` rows
/// for `cfg.seed`.
pub fn frame_sweep(cfg: &ExperimentConfig, counts: &[usize]) -> Result<Vec<SummaryRow>> {
    let configs = sweep_configs(cfg, counts)?;
    let (train, eval) = datasets(cfg)?;
    let mut rows = Vec::with_capacity(configs.len());
    for c in &configs {
        let out = run_on(c, train.clone(), eval.clone())?;
        info!(
            "sweep {} T={}: BLEU-4 {:.4} routing {:.3}",
            c.preset, c.t_large, out.final_eval.bleu[3], out.final_eval.routing_rate
        );
        rows.push(SummaryRow::new(&c.preset, cfg.seed, c.t_large, &out.final_eval, final_loss(&out)));
    }
    Ok(rows)
}

/// One config per (seed, preset) pair, seed-major. Only the fields that
/// define a preset are taken from the preset; the rest come from `base`.
pub fn ablation_configs(base: &ExperimentConfig, presets: &[&str], seeds: &[u64]) -> Result<Vec<ExperimentConfig>> {
    let mut configs = Vec::with_capacity(presets.len() * seeds.len());
    for &seed in seeds {
        for &name in presets {
            let p = ExperimentConfig::preset(name)?;
            let cfg = ExperimentConfig {
                preset: p.preset.clone(),
                routing: p.routing,
                mask: p.mask,
                t_mid: p.t_mid,
                seed,
                data_seed: base.data_seed.or(Some(seed)),
                ..base.clone()
            };
            cfg.validate()?;
            configs.push(cfg);
        }
    }
    Ok(configs)
}

pub fn ablate(base: &ExperimentConfig, presets: &[&str], seeds: &[u64]) -> Result<Vec<SummaryRow>> {
    let mut rows = Vec::new();
    for cfg in ablation_configs(base, presets, seeds)? {
        let out = run_experiment(&cfg)?;
        info!("ablate {} seed {}: BLEU-4 {:.4}", cfg.preset, cfg.seed, out.final_eval.bleu[3]);
        rows.push(SummaryRow::new(&cfg.preset, cfg.seed, cfg.t_large, &out.final_eval, final_loss(&out)));
    }
    Ok(rows)
}
