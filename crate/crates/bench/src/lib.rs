//! Fixtures shared by the benchmarks: a default-sized model and random
//! inputs for it.

use mams::masking::{build_mask_large, restrict_mask_small};
use mams::{CaptionBatch, MaskMatrix, Model, ModelConfig, RngState, SelectionConfig, VideoClip};

/// Model shape used by the harness defaults: 16 frames of 16x16 pixels,
/// four tokens per frame.
pub fn config() -> ModelConfig {
    ModelConfig {
        d: 32,
        heads: 2,
        layers: 2,
        mlp_hidden: 64,
        vocab_size: 18,
        max_len: 9,
        t_large: 16,
        t_small: 6,
        t_mid: None,
        per_frame: 4,
        frame_height: 16,
        frame_width: 16,
        patch_rows: 2,
        patch_cols: 2,
        learnable_mask: false,
    }
}

pub struct Fixture {
    pub model: Model,
    pub clip: VideoClip,
    pub captions: CaptionBatch,
    pub selection: SelectionConfig,
    pub large_mask: MaskMatrix,
    pub small_mask: MaskMatrix,
    pub small_frames: Vec<usize>,
}

impl Fixture {
    pub fn new(seed: u64) -> Self {
        let cfg = config();
        let model = Model::new(cfg.clone(), seed).expect("valid config");
        let mut rng = RngState::new(seed);
        let n = cfg.t_large * cfg.frame_height * cfg.frame_width;
        let clip = VideoClip::new(
            cfg.t_large,
            cfg.frame_height,
            cfg.frame_width,
            (0..n).map(|_| rng.uniform_open()).collect(),
        )
        .expect("valid clip");
        let captions = CaptionBatch::from_captions(&[vec![3, 4, 7, 10, 14, 12, 10, 15]], cfg.vocab_size, cfg.max_len)
            .expect("valid caption");
        let tokens: Vec<(usize, usize)> = (0..24).map(|_| (rng.below(16), rng.below(4))).collect();
        let large_mask = build_mask_large(&tokens, cfg.t_large, cfg.per_frame).expect("in range");
        let small_frames = vec![1, 3, 4, 8, 11, 15];
        let small_mask = restrict_mask_small(&large_mask, &small_frames, cfg.per_frame).expect("in range");
        Self {
            model,
            clip,
            captions,
            selection: SelectionConfig::new(cfg.t_small, cfg.t_large).expect("valid thresholds"),
            large_mask,
            small_mask,
            small_frames,
        }
    }
}
