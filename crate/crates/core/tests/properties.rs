use std::collections::BTreeSet;

use mams::masking::{build_mask_large, restrict_mask_small};
use mams::numerics::{masked_softmax, Matrix, RngState};
use mams::scoring::{token_significance, TokenGrid};
use mams::selection::{choose_module, complete_frames, gumbel_select, select, select_frames};
use mams::{ModuleChoice, SelectionConfig, SignificanceMap};
use proptest::prelude::*;

/// Frames, tokens per frame, width, token values and raw attention.
fn grid_strategy() -> impl Strategy<Value = (usize, usize, usize, Vec<f64>, Vec<f64>)> {
    (1usize..=8, 1usize..=4, 1usize..=6).prop_flat_map(|(t, p, d)| {
        (
            Just(t),
            Just(p),
            Just(d),
            prop::collection::vec(-3.0f64..3.0, t * p * d),
            prop::collection::vec(0.01f64..1.0, t * p),
        )
    })
}

fn make_grid(t: usize, p: usize, d: usize, values: &[f64], raw: &[f64]) -> TokenGrid {
    let total: f64 = raw.iter().sum::<f64>() * 1.25;
    let attention = raw.iter().map(|a| a / total).collect();
    TokenGrid::new(t, p, Matrix::from_vec(t * p, d, values.to_vec()).unwrap())
        .unwrap()
        .with_cls_attention(attention)
        .unwrap()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn masked_softmax_rows_are_distributions(
        n in 1usize..8,
        seed in any::<u64>(),
    ) {
        let mut rng = RngState::new(seed);
        let logits = Matrix::from_vec(n, n, (0..n * n).map(|_| rng.normal() * 3.0).collect()).unwrap();
        let mask = Matrix::from_vec(
            n,
            n,
            (0..n * n).map(|k| if k % (n + 1) == 0 || rng.below(2) == 1 { 1.0 } else { 0.0 }).collect(),
        ).unwrap();
        let p = masked_softmax(&logits, &mask).unwrap();
        for i in 0..n {
            let s: f64 = p.row(i).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            for j in 0..n {
                if mask[(i, j)] == 0.0 {
                    prop_assert_eq!(p[(i, j)], 0.0);
                } else {
                    prop_assert!(p[(i, j)] > 0.0);
                }
            }
        }
    }

    #[test]
    fn significance_is_normalized_and_matches_direct_arithmetic((t, p, d, values, raw) in grid_strategy()) {
        let grid = make_grid(t, p, d, &values, &raw);
        let sig = match token_significance(&grid) {
            Ok(s) => s,
            Err(_) => return Ok(()),
        };
        let a = grid.cls_attention().unwrap();
        let products: Vec<f64> = (0..t * p).map(|k| a[k] * norm(grid.tokens().row(k))).collect();
        let total: f64 = products.iter().sum();
        prop_assert!((sig.token_scores().iter().sum::<f64>() - 1.0).abs() < 1e-10);
        for k in 0..t * p {
            prop_assert!((sig.token_scores()[k] - products[k] / total).abs() < 1e-12);
        }
        for i in 0..t {
            let f: f64 = (0..p).map(|q| sig.token(i, q)).sum();
            prop_assert!((sig.frame_scores()[i] - f).abs() < 1e-12);
        }
    }

    #[test]
    fn significance_ignores_global_scale(
        (t, p, d, values, raw) in grid_strategy(),
        c in 0.1f64..10.0,
    ) {
        let grid = make_grid(t, p, d, &values, &raw);
        let scaled: Vec<f64> = values.iter().map(|v| v * c).collect();
        let grid2 = make_grid(t, p, d, &scaled, &raw);
        if let (Ok(a), Ok(b)) = (token_significance(&grid), token_significance(&grid2)) {
            for (x, y) in a.token_scores().iter().zip(b.token_scores()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn more_attention_means_more_significance(
        (t, p, d, values, raw) in grid_strategy(),
        which in any::<prop::sample::Index>(),
    ) {
        let k = which.index(t * p);
        let grid = make_grid(t, p, d, &values, &raw);
        let mut a = grid.cls_attention().unwrap().to_vec();
        a[k] *= 0.5;
        let lowered = grid.clone().with_cls_attention(a).unwrap();
        if norm(grid.tokens().row(k)) > 1e-9 && t * p > 1 {
            if let (Ok(hi), Ok(lo)) = (token_significance(&grid), token_significance(&lowered)) {
                let others_positive = (0..t * p).any(|j| j != k && hi.token_scores()[j] > 0.0);
                if others_positive {
                    prop_assert!(hi.token_scores()[k] > lo.token_scores()[k]);
                }
            }
        }
    }

    #[test]
    fn adaptive_masks_are_symmetric_with_unit_diagonal(
        t in 1usize..=6,
        p in 1usize..=4,
        picks in prop::collection::vec((0usize..6, 0usize..4), 0..30),
    ) {
        let tokens: Vec<(usize, usize)> = picks.into_iter().map(|(i, q)| (i % t, q % p)).collect();
        let m = build_mask_large(&tokens, t, p).unwrap();
        prop_assert!(m.is_symmetric());
        prop_assert!(m.has_unit_diagonal());
        let k = tokens.iter().collect::<BTreeSet<_>>().len();
        prop_assert_eq!(m.count_ones(), t * p + k * k - k);
    }

    #[test]
    fn restriction_is_the_rule_on_the_kept_frames(
        t in 2usize..=6,
        p in 1usize..=3,
        picks in prop::collection::vec((0usize..6, 0usize..3), 1..20),
        keep in prop::collection::btree_set(0usize..6, 1..4),
    ) {
        let tokens: Vec<(usize, usize)> = picks.into_iter().map(|(i, q)| (i % t, q % p)).collect();
        let frames: Vec<usize> = keep.into_iter().map(|i| i % t).collect::<BTreeSet<_>>().into_iter().collect();
        let small = restrict_mask_small(&build_mask_large(&tokens, t, p).unwrap(), &frames, p).unwrap();
        let selected: BTreeSet<(usize, usize)> = tokens.into_iter().collect();
        prop_assert_eq!(small.n(), frames.len() * p);
        for x in 0..small.n() {
            for y in 0..small.n() {
                let (a, b) = (small.index_map()[x], small.index_map()[y]);
                let expect = a == b || (selected.contains(&a) && selected.contains(&b));
                prop_assert_eq!(small.get(x, y), expect);
            }
        }
    }

    #[test]
    fn routing_follows_frame_set_size(
        t_large in 2usize..=16,
        ts in any::<prop::sample::Index>(),
        raw in prop::collection::vec(0.0f64..1.0, 16),
        seed in any::<u64>(),
    ) {
        let t_small = 1 + ts.index(t_large - 1);
        let cfg = SelectionConfig::new(t_small, t_large).unwrap();
        let mut w = raw[..t_large].to_vec();
        w[0] += 0.01;
        let sig = SignificanceMap::from_weights(t_large, 1, &w).unwrap();
        let mut rng = RngState::new(seed);
        let out = select(&sig, &mut rng, &cfg).unwrap();
        let small = out.frame_set.len() <= t_small;
        prop_assert_eq!(out.module == ModuleChoice::Small, small);
        prop_assert_eq!(out.gate.large + out.gate.small, 1.0);
        prop_assert_eq!(out.gate.small == 1.0, small);
        if small {
            prop_assert_eq!(out.final_frames.len(), t_small);
            prop_assert!(out.frame_set.iter().all(|f| out.final_frames.contains(f)));
        } else {
            prop_assert_eq!(&out.final_frames, &(0..t_large).collect::<Vec<_>>());
        }
        prop_assert!(out.final_frames.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(out.token_set.iter().all(|&(i, q)| sig.token(i, q) > 0.0));
    }

    #[test]
    fn completion_reaches_budget_and_keeps_the_set(
        raw in prop::collection::vec(0.0f64..1.0, 8),
        zeros in prop::collection::vec(any::<bool>(), 8),
        seed in any::<u64>(),
        deterministic in any::<bool>(),
    ) {
        let mut w: Vec<f64> = raw.iter().zip(&zeros).map(|(x, z)| if *z { 0.0 } else { *x }).collect();
        w[3] += 0.05;
        let sig = SignificanceMap::from_weights(8, 1, &w).unwrap();
        let cfg = SelectionConfig::new(4, 8).unwrap().deterministic(deterministic);
        let mut rng = RngState::new(seed);
        let set = select_frames(&sig, &mut rng, &cfg).unwrap();
        if set.len() <= 4 {
            let done = complete_frames(&set, &sig, &mut rng, &cfg).unwrap();
            prop_assert_eq!(done.len(), 4);
            prop_assert!(done.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(set.iter().all(|f| done.contains(f)));
        }
        let (module, _) = choose_module(set.len(), &cfg);
        prop_assert_eq!(module == ModuleChoice::Small, set.len() <= 4);
    }

    #[test]
    fn gumbel_select_never_picks_zero_weight(
        raw in prop::collection::vec(0.0f64..1.0, 2..16),
        zeros in prop::collection::vec(any::<bool>(), 16),
        seed in any::<u64>(),
    ) {
        let mut w: Vec<f64> = raw.iter().zip(&zeros).map(|(x, z)| if *z { 0.0 } else { *x }).collect();
        w[0] += 0.1;
        let total: f64 = w.iter().sum();
        let w: Vec<f64> = w.iter().map(|x| x / total).collect();
        let cfg = SelectionConfig::new(1, 2).unwrap();
        let mut rng = RngState::new(seed);
        for _ in 0..20 {
            let k = gumbel_select(&w, &mut rng, &cfg).unwrap();
            prop_assert!(w[k] > 0.0);
        }
    }

    #[test]
    fn deterministic_selection_is_pure(
        raw in prop::collection::vec(0.01f64..1.0, 8),
        s1 in any::<u64>(),
        s2 in any::<u64>(),
    ) {
        let sig = SignificanceMap::from_weights(4, 2, &raw).unwrap();
        let cfg = SelectionConfig::new(2, 4).unwrap().deterministic(true);
        let a = select(&sig, &mut RngState::new(s1), &cfg).unwrap();
        let b = select(&sig, &mut RngState::new(s2), &cfg).unwrap();
        prop_assert_eq!(a, b);
    }
}
