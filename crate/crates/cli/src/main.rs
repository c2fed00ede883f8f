use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::info;

use mams::checkpoint;
use mams::masking::fixed_learnable_mask;
use mams_harness::config::ExperimentConfig;
use mams_harness::data::Dataset;
use mams_harness::experiments::{ablate, frame_sweep};
use mams_harness::report::{write_audit, write_metrics, write_summary, SummaryRow};
use mams_harness::run::{datasets, eval_rng, evaluate, route, Prepared, Trainer};

#[derive(Parser, Debug)]
#[command(name = "mams", version, about = "Per-video module selection for video captioning")]
struct Cli {
    /// Flat key = value config file layered on the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    preset: Option<String>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Noise-free selection at evaluation.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Comma-separated frame counts for `sweep`.
    #[arg(long, global = true, value_delimiter = ',')]
    frames: Option<Vec<usize>>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the training and evaluation datasets.
    GenData,
    /// Train one configuration.
    Train {
        /// Dataset root from `gen-data`; generated in memory if omitted.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Evaluate a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Frame-count sweep of always-large baselines plus MAMS.
    Sweep,
    /// Run several presets over the configured seeds.
    Ablate {
        #[arg(long, value_delimiter = ',', default_value = "mams,mams-no-mask,mams-fixed-mask,baseline,baseline-fixed-mask,swapped-rule,inverted-score")]
        presets: Vec<String>,
    },
    /// Dump the attention masks chosen for one video.
    InspectMask {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        video: usize,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p, cli.preset.as_deref())?,
        None => ExperimentConfig::preset(cli.preset.as_deref().unwrap_or("mams"))?,
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
        cfg.seeds = vec![s];
    }
    if cli.deterministic {
        cfg.deterministic_eval = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_data(cfg: &ExperimentConfig, root: Option<&Path>) -> Result<(Dataset, Dataset)> {
    match root {
        Some(r) => Ok((Dataset::load(&r.join("train"))?, Dataset::load(&r.join("eval"))?)),
        None => datasets(cfg),
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = load_config(&cli)?;
    let out = &cli.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.toml"), cfg.to_toml_string())?;

    match &cli.command {
        Command::GenData => {
            let (train, eval) = datasets(&cfg)?;
            train.save(&out.join("train"))?;
            eval.save(&out.join("eval"))?;
            info!("wrote {} training and {} evaluation videos to {}", train.len(), eval.len(), out.display());
        }
        Command::Train { data } => {
            let (train, eval) = load_data(&cfg, data.as_deref())?;
            let mut trainer = Trainer::new(cfg.clone(), train)?;
            let eval = Prepared::new(eval, &cfg, cfg.t_large, trainer.model.config().max_len)?;
            let history = trainer.run(&eval, |r| {
                info!("epoch {} loss {:.4} routing {:.3}", r.epoch, r.train_loss, r.train_routing_rate)
            })?;
            let (m, audit) = evaluate(&trainer.model, &cfg, &eval, cfg.deterministic_eval)?;
            checkpoint::save(&trainer.model, &out.join("checkpoint.bin"))?;
            write_metrics(&out.join("metrics.jsonl"), &history)?;
            write_audit(&out.join("selection.jsonl"), &audit)?;
            let loss = history.last().map_or(f64::NAN, |r| r.train_loss);
            write_summary(&out.join("summary.csv"), &[SummaryRow::new(&cfg.preset, cfg.seed, cfg.t_large, &m, loss)])?;
            info!("BLEU-4 {:.4}, token accuracy {:.4}, routing {:.3}", m.bleu[3], m.token_accuracy, m.routing_rate);
        }
        Command::Eval { checkpoint: ckpt, data } => {
            let model = checkpoint::load(ckpt)?;
            let (_, eval) = load_data(&cfg, data.as_deref())?;
            if eval.vocab.len() != model.config().vocab_size {
                bail!(
                    "vocabulary mismatch: dataset has {} words, checkpoint {}",
                    eval.vocab.len(),
                    model.config().vocab_size
                );
            }
            let eval = Prepared::new(eval, &cfg, model.config().t_large, model.config().max_len)?;
            let (m, audit) = evaluate(&model, &cfg, &eval, cfg.deterministic_eval)?;
            fs::write(out.join("eval.json"), serde_json::to_string_pretty(&m)?)?;
            write_audit(&out.join("selection.jsonl"), &audit)?;
            write_summary(
                &out.join("summary.csv"),
                &[SummaryRow::new(&cfg.preset, cfg.seed, model.config().t_large, &m, f64::NAN)],
            )?;
            info!("BLEU-4 {:.4}, token accuracy {:.4}, routing {:.3}", m.bleu[3], m.token_accuracy, m.routing_rate);
        }
        Command::Sweep => {
            let counts = cli.frames.clone().unwrap_or_else(|| vec![2, 4, 8, 16]);
            let mut rows = Vec::new();
            for &seed in &cfg.seeds {
                let c = ExperimentConfig {
                    seed,
                    ..cfg.clone()
                };
                rows.extend(frame_sweep(&c, &counts)?);
            }
            write_summary(&out.join("sweep.csv"), &rows)?;
        }
        Command::Ablate { presets } => {
            let names: Vec<&str> = presets.iter().map(String::as_str).collect();
            let rows = ablate(&cfg, &names, &cfg.seeds)?;
            write_summary(&out.join("ablation.csv"), &rows)?;
        }
        Command::InspectMask {
            checkpoint: ckpt,
            data,
            video,
        } => {
            let (_, eval) = load_data(&cfg, data.as_deref())?;
            let model = match ckpt {
                Some(p) => checkpoint::load(p)?,
                None => Trainer::new(cfg.clone(), eval.clone())?.model,
            };
            let eval = Prepared::new(eval, &cfg, model.config().t_large, model.config().max_len)?;
            if *video >= eval.len() {
                bail!("video {video} out of range ({} videos)", eval.len());
            }
            let sel = cfg.selection_config(cfg.deterministic_eval)?;
            let mut rng = eval_rng(cfg.seed, eval.data.videos[*video].id);
            let r = route(&model, &cfg, &sel, &eval.clips[*video], &mut rng)?;
            if let Some(m) = &r.mask {
                fs::write(out.join(format!("mask_v{video:05}.pgm")), m.to_pgm())?;
            }
            for (i, module) in model.modules.iter().enumerate() {
                if let Some(p) = &module.mask {
                    let name = format!("learnable_{}.pgm", model.module_name(i));
                    fs::write(out.join(name), fixed_learnable_mask(p).to_pgm())?;
                }
            }
            info!(
                "video {video}: module {}, frames {:?}, |S^frm| {:?}, |S^tk| {:?}",
                model.module_name(r.module),
                r.frames,
                r.frame_set.as_ref().map(Vec::len),
                r.token_set.as_ref().map(Vec::len)
            );
        }
    }
    Ok(())
}
