use mams_harness::config::{ExperimentConfig, RoutingMode};
use mams_harness::run::{audit_violations, datasets, evaluate, Prepared, Trainer};
use mams_harness::{Dataset, Dynamics, SyntheticVideoSpec};

fn small(preset: &str) -> ExperimentConfig {
    ExperimentConfig {
        d: 16,
        mlp_hidden: 16,
        epochs: 2,
        train_videos: 24,
        eval_videos: 12,
        ..ExperimentConfig::preset(preset).unwrap()
    }
}

#[test]
fn baseline_and_mams_share_encoder_initialization() {
    let (train, _) = datasets(&small("mams")).unwrap();
    let a = Trainer::new(small("mams"), train.clone()).unwrap();
    let b = Trainer::new(small("baseline"), train).unwrap();
    assert_eq!(a.model.encoder, b.model.encoder);
    assert_eq!(a.model.text, b.model.text);
}

#[test]
fn deterministic_evaluation_routes_by_the_logged_set_size() {
    for preset in ["mams", "swapped-rule", "three-module"] {
        let cfg = small(preset);
        let (train, eval) = datasets(&cfg).unwrap();
        let mut t = Trainer::new(cfg.clone(), train).unwrap();
        let eval = Prepared::new(eval, &cfg, cfg.t_large, t.model.config().max_len).unwrap();
        t.run(&eval, |_| {}).unwrap();
        for deterministic in [true, false] {
            let (m, audit) = evaluate(&t.model, &cfg, &eval, deterministic).unwrap();
            assert_eq!(audit.len(), 12);
            assert!(audit_violations(&cfg, &audit).is_empty(), "{preset}");
            for r in [m.routing_rate, m.routing_rate_high, m.routing_rate_low, m.token_accuracy] {
                assert!((0.0..=1.0).contains(&r));
            }
            assert!(m.bleu.iter().all(|b| (0.0..=1.0).contains(b)));
        }
    }
}

/// The 5-epoch smoothed loss falls to below 0.01. Plain SGD shows a few
/// short bumps on the way; each must be recovered within 10 epochs.
#[test]
fn overfit_loss_falls_when_smoothed() {
    let cfg = ExperimentConfig {
        epochs: 300,
        ..ExperimentConfig::preset("overfit8").unwrap()
    };
    let (train, _) = datasets(&cfg).unwrap();
    let mut t = Trainer::new(cfg.clone(), train).unwrap();
    let losses: Vec<f64> = (0..cfg.epochs).map(|e| t.epoch(e).unwrap().0).collect();
    let smooth: Vec<f64> = losses.windows(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
    let mut rises = 0;
    for i in 1..smooth.len() {
        if smooth[i] > smooth[i - 1] {
            rises += 1;
            let best = smooth[..i].iter().copied().fold(f64::INFINITY, f64::min);
            let recovered = smooth[i..].iter().take(10).any(|&v| v <= best);
            assert!(recovered, "smoothed loss rose at epoch {i} and stayed up");
        }
    }
    assert!(rises <= 10, "{rises} rises");
    assert!(*smooth.last().unwrap() < 0.01, "final smoothed loss {}", smooth.last().unwrap());
}

#[test]
fn always_large_never_consults_the_selector() {
    let cfg = small("baseline");
    let (train, eval) = datasets(&cfg).unwrap();
    let t = Trainer::new(cfg.clone(), train).unwrap();
    let eval = Prepared::new(eval, &cfg, cfg.t_large, t.model.config().max_len).unwrap();
    let (m, audit) = evaluate(&t.model, &cfg, &eval, false).unwrap();
    assert_eq!(m.routing_rate, 1.0);
    assert!(audit.iter().all(|r| r.frame_set_size.is_none() && r.final_frames.len() == cfg.t_large));
    assert_eq!(cfg.routing, RoutingMode::AlwaysLarge);
}

#[test]
fn low_dynamics_content_stays_in_its_window() {
    let spec = SyntheticVideoSpec::default();
    let data = Dataset::generate(&spec, 40, 0.5, 8).unwrap();
    let px = spec.height * spec.width;
    for v in &data.videos {
        let lit = (0..spec.frames)
            .filter(|&f| v.pixels[f * px..(f + 1) * px].iter().any(|&p| p > 0))
            .count();
        match v.dynamics {
            Dynamics::Low => assert_eq!(lit, spec.low_window),
            Dynamics::High => assert_eq!(lit, spec.frames),
        }
    }
}
