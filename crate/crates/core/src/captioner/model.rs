use super::layers::{block_backward, block_forward, randn, AttentionSpec, BlockCache, BlockParams};
use super::{CaptionItem, GatedLoss, ModelConfig, VideoClip, CLS_ID, END_ID};
use crate::error::{Error, Result};
use crate::masking::{
    fixed_learnable_mask, sequence_pattern, soft_mask_backward, LearnableMaskParams, MaskMatrix,
};
use crate::numerics::{
    cross_entropy, embedding, layer_norm, layer_norm_backward, LayerNormCache, Matrix, RngState,
};
use crate::scoring::{score_pass, ScoringLayer, TokenGrid};
use crate::selection::{Gate, ModuleChoice};

const INIT_TAG: u64 = 0x1417;

/// Shared video encoder: linear (bias-free) patch embedding plus frame
/// and patch position embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub patch_w: Matrix,
    pub frame_emb: Matrix,
    pub pos_emb: Matrix,
}

/// Shared word and text position embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct TextParams {
    pub tok_emb: Matrix,
    pub pos_emb: Matrix,
}

/// One caption generation module, sized by its frame budget.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerationModule {
    pub frames: usize,
    pub blocks: Vec<BlockParams>,
    pub lnf_g: Matrix,
    pub lnf_b: Matrix,
    pub head_w: Matrix,
    pub head_b: Matrix,
    pub mask: Option<LearnableMaskParams>,
}

impl GenerationModule {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Matrix)>) {
        for (l, b) in self.blocks.iter().enumerate() {
            b.visit(&format!("{prefix}.blocks.{l}"), out);
        }
        out.push((format!("{prefix}.lnf.gain"), &self.lnf_g));
        out.push((format!("{prefix}.lnf.bias"), &self.lnf_b));
        out.push((format!("{prefix}.head.w"), &self.head_w));
        out.push((format!("{prefix}.head.b"), &self.head_b));
        if let Some(m) = &self.mask {
            out.push((format!("{prefix}.mask.logits"), &m.logits));
        }
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Matrix>) {
        for b in &mut self.blocks {
            b.visit_mut(out);
        }
        out.extend([
            &mut self.lnf_g,
            &mut self.lnf_b,
            &mut self.head_w,
            &mut self.head_b,
        ]);
        if let Some(m) = &mut self.mask {
            out.push(&mut m.logits);
        }
    }

    /// All parameters of this module, flattened.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit("", &mut out);
        out.into_iter().flat_map(|(_, m)| m.data().to_vec()).collect()
    }
}

/// Visual-visual attention restriction for one forward pass.
#[derive(Clone, Copy, Debug)]
pub enum AttentionMaskInput<'a> {
    Full,
    Adaptive(&'a MaskMatrix),
    /// The module's own fixed learnable mask.
    Learnable,
}

/// Everything needed to evaluate one module's loss on one video.
#[derive(Clone, Copy, Debug)]
pub struct LossInput<'a> {
    pub clip: &'a VideoClip,
    /// Frames of `clip` fed to the module, in order.
    pub frames: &'a [usize],
    pub mask: AttentionMaskInput<'a>,
    pub caption: CaptionItem<'a>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    pub encoder: EncoderParams,
    pub text: TextParams,
    /// Ascending frame budgets; first is small, last is large.
    pub modules: Vec<GenerationModule>,
}

/// Gradients share the model's layout.
pub type Gradients = Model;

struct ForwardCache {
    text_len: usize,
    blocks: Vec<BlockCache>,
    lnf: LayerNormCache,
    hf: Matrix,
    soft_bias: bool,
}

impl Model {
    /// Random initialization. Encoder and text embeddings depend only on
    /// `seed`; each module's weights depend on `seed` and its frame budget,
    /// so adding or removing modules leaves the others untouched.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.d;
        let mut rng = RngState::derive(seed, &[INIT_TAG, 0]);
        let pd = config.patch_dim();
        let encoder = EncoderParams {
            patch_w: randn(pd, d, 1.0 / (pd as f64).sqrt(), &mut rng),
            frame_emb: randn(config.t_large, d, 0.02, &mut rng),
            pos_emb: randn(config.per_frame, d, 0.02, &mut rng),
        };
        let text = TextParams {
            tok_emb: randn(config.vocab_size, d, 1.0, &mut rng),
            pos_emb: randn(config.max_len, d, 0.1, &mut rng),
        };
        let modules = config
            .module_frames()
            .into_iter()
            .map(|frames| {
                let mut rng = RngState::derive(seed, &[INIT_TAG, 1, frames as u64]);
                GenerationModule {
                    frames,
                    blocks: (0..config.layers)
                        .map(|_| BlockParams::init(d, config.mlp_hidden, config.layers, &mut rng))
                        .collect(),
                    lnf_g: Matrix::filled(1, d, 1.0),
                    lnf_b: Matrix::zeros(1, d),
                    head_w: randn(d, config.vocab_size, 1.0 / (d as f64).sqrt(), &mut rng),
                    head_b: Matrix::zeros(1, config.vocab_size),
                    mask: config
                        .learnable_mask
                        .then(|| LearnableMaskParams::zeros(frames * config.per_frame)),
                }
            })
            .collect();
        Ok(Self {
            config,
            encoder,
            text,
            modules,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn large_index(&self) -> usize {
        self.modules.len() - 1
    }

    pub fn module_index(&self, choice: ModuleChoice) -> usize {
        match choice {
            ModuleChoice::Small => 0,
            ModuleChoice::Large => self.large_index(),
        }
    }

    pub fn module_name(&self, index: usize) -> &'static str {
        if index == 0 {
            "small"
        } else if index == self.large_index() {
            "large"
        } else {
            "mid"
        }
    }

    /// Ordered `(name, tensor)` list; this order defines checkpoints and
    /// flattening.
    pub fn named_params(&self) -> Vec<(String, &Matrix)> {
        let mut out: Vec<(String, &Matrix)> = vec![
            ("encoder.patch.w".into(), &self.encoder.patch_w),
            ("encoder.frame_emb".into(), &self.encoder.frame_emb),
            ("encoder.pos_emb".into(), &self.encoder.pos_emb),
            ("text.tok_emb".into(), &self.text.tok_emb),
            ("text.pos_emb".into(), &self.text.pos_emb),
        ];
        for (i, m) in self.modules.iter().enumerate() {
            m.visit(self.module_name(i), &mut out);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = vec![
            &mut self.encoder.patch_w,
            &mut self.encoder.frame_emb,
            &mut self.encoder.pos_emb,
            &mut self.text.tok_emb,
            &mut self.text.pos_emb,
        ];
        for m in &mut self.modules {
            m.visit_mut(&mut out);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, m)| m.data().len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.named_params()
            .into_iter()
            .flat_map(|(_, m)| m.data().to_vec())
            .collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "{} values for {} parameters",
                values.len(),
                self.param_count()
            )));
        }
        let mut at = 0;
        for m in self.params_mut() {
            let n = m.data().len();
            m.data_mut().copy_from_slice(&values[at..at + n]);
            at += n;
        }
        Ok(())
    }

    /// Same layout, all zeros.
    pub fn zeros_like(&self) -> Gradients {
        let mut g = self.clone();
        for m in g.params_mut() {
            m.data_mut().fill(0.0);
        }
        g
    }

    /// `θ ← θ - lr · g`
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64) {
        let gs: Vec<&Matrix> = grads.named_params().into_iter().map(|(_, m)| m).collect();
        for (p, g) in self.params_mut().into_iter().zip(gs) {
            for (x, dx) in p.data_mut().iter_mut().zip(g.data()) {
                *x -= lr * dx;
            }
        }
    }

    fn check_clip(&self, clip: &VideoClip) -> Result<()> {
        let c = &self.config;
        if clip.frames != c.t_large || clip.height != c.frame_height || clip.width != c.frame_width {
            return Err(Error::Shape(format!(
                "clip {}x{}x{} but model expects {}x{}x{}",
                clip.frames, clip.height, clip.width, c.t_large, c.frame_height, c.frame_width
            )));
        }
        Ok(())
    }

    /// Patch vectors of the listed frames, frame-major.
    fn patches(&self, clip: &VideoClip, frames: &[usize]) -> Result<Matrix> {
        self.check_clip(clip)?;
        let c = &self.config;
        let ph = c.frame_height / c.patch_rows;
        let pw = c.frame_width / c.patch_cols;
        let mut out = Matrix::zeros(frames.len() * c.per_frame, c.patch_dim());
        for (slot, &f) in frames.iter().enumerate() {
            if f >= clip.frames {
                return Err(Error::OutOfRange(format!("frame {f} of {}", clip.frames)));
            }
            let px = clip.frame(f);
            for pr in 0..c.patch_rows {
                for pc in 0..c.patch_cols {
                    let row = out.row_mut(slot * c.per_frame + pr * c.patch_cols + pc);
                    for y in 0..ph {
                        let src = (pr * ph + y) * c.frame_width + pc * pw;
                        row[y * pw..(y + 1) * pw].copy_from_slice(&px[src..src + pw]);
                    }
                }
            }
        }
        Ok(out)
    }

    fn embed_patches(&self, patches: &Matrix, frames: &[usize]) -> Matrix {
        let p = self.config.per_frame;
        let mut tokens = patches.matmul(&self.encoder.patch_w);
        for (slot, &f) in frames.iter().enumerate() {
            for k in 0..p {
                let row = tokens.row_mut(slot * p + k);
                for ((t, fe), pe) in row
                    .iter_mut()
                    .zip(self.encoder.frame_emb.row(f))
                    .zip(self.encoder.pos_emb.row(k))
                {
                    *t += fe + pe;
                }
            }
        }
        tokens
    }

    /// Visual tokens of the listed frames, frame-major.
    pub fn encode_frames(&self, clip: &VideoClip, frames: &[usize]) -> Result<Matrix> {
        let patches = self.patches(clip, frames)?;
        Ok(self.embed_patches(&patches, frames))
    }

    /// Visual tokens of all `T_large` frames.
    pub fn encode_video(&self, clip: &VideoClip) -> Result<TokenGrid> {
        let frames: Vec<usize> = (0..self.config.t_large).collect();
        let tokens = self.encode_frames(clip, &frames)?;
        TokenGrid::new(self.config.t_large, self.config.per_frame, tokens)
    }

    /// The caption begin token at text position 0.
    pub fn cls_embedding(&self) -> Vec<f64> {
        self.text
            .tok_emb
            .row(CLS_ID)
            .iter()
            .zip(self.text.pos_emb.row(0))
            .map(|(a, b)| a + b)
            .collect()
    }

    /// First attention layer of the large module, for the scoring pass.
    pub fn scoring_layer(&self) -> ScoringLayer<'_> {
        let b = &self.modules[self.large_index()].blocks[0];
        ScoringLayer {
            ln_gain: b.ln1_g.data(),
            ln_bias: b.ln1_b.data(),
            wq: &b.wq,
            wk: &b.wk,
            heads: self.config.heads,
        }
    }

    /// Encodes the clip and attaches CLS attention from the scoring pass.
    pub fn score(&self, clip: &VideoClip) -> Result<TokenGrid> {
        let grid = self.encode_video(clip)?;
        score_pass(&grid, &self.cls_embedding(), &self.scoring_layer())
    }

    fn text_embeddings(&self, ids: &[usize]) -> Result<Matrix> {
        if ids.len() > self.config.max_len {
            return Err(Error::Shape(format!(
                "{} text positions, limit {}",
                ids.len(),
                self.config.max_len
            )));
        }
        let mut x = embedding(&self.text.tok_emb, ids)?;
        for j in 0..ids.len() {
            for (a, b) in x.row_mut(j).iter_mut().zip(self.text.pos_emb.row(j)) {
                *a += b;
            }
        }
        Ok(x)
    }

    fn forward_module(
        &self,
        module: usize,
        visual: &Matrix,
        ids: &[usize],
        mask: AttentionMaskInput<'_>,
    ) -> Result<(Matrix, ForwardCache)> {
        let m = self
            .modules
            .get(module)
            .ok_or_else(|| Error::OutOfRange(format!("module {module}")))?;
        let expected = m.frames * self.config.per_frame;
        if visual.rows() != expected || visual.cols() != self.config.d {
            return Err(Error::Capacity(format!(
                "{} module takes {expected} visual tokens of width {}, got {:?}",
                self.module_name(module),
                self.config.d,
                visual.shape()
            )));
        }
        if ids.is_empty() {
            return Err(Error::Shape("empty text input".into()));
        }
        let text_len = ids.len();
        let (binary, soft) = match mask {
            AttentionMaskInput::Full => (None, None),
            AttentionMaskInput::Adaptive(mm) => (Some(mm), None),
            AttentionMaskInput::Learnable => {
                let params = m.mask.as_ref().ok_or_else(|| {
                    Error::Config("module has no learnable mask".into())
                })?;
                (None, Some(fixed_learnable_mask(params).log_bias()))
            }
        };
        let allowed = sequence_pattern(text_len, visual.rows(), binary)?;
        let spec = AttentionSpec {
            allowed: &allowed,
            text_len,
            visual_bias: soft.as_ref(),
        };

        let mut x = self.text_embeddings(ids)?.vstack(visual);
        let mut caches = Vec::with_capacity(m.blocks.len());
        for b in &m.blocks {
            let (y, c) = block_forward(b, self.config.heads, &x, &spec)?;
            caches.push(c);
            x = y;
        }
        let (hf, lnf) = layer_norm(&x.slice_rows(0, text_len), m.lnf_g.data(), m.lnf_b.data());
        let mut logits = hf.matmul(&m.head_w);
        logits.add_row_broadcast(m.head_b.data());
        Ok((
            logits,
            ForwardCache {
                text_len,
                blocks: caches,
                lnf,
                hf,
                soft_bias: soft.is_some(),
            },
        ))
    }

    /// Next-token logits at every text position of `ids` (`len × V`).
    pub fn generate_forward(
        &self,
        module: usize,
        visual: &Matrix,
        ids: &[usize],
        mask: AttentionMaskInput<'_>,
    ) -> Result<Matrix> {
        self.forward_module(module, visual, ids, mask).map(|(l, _)| l)
    }

    /// Backpropagates `dlogits`; returns the gradient w.r.t. the visual
    /// tokens and accumulates everything else into `g`.
    fn backward_module(
        &self,
        module: usize,
        ids: &[usize],
        visual_rows: usize,
        cache: &ForwardCache,
        dlogits: &Matrix,
        g: &mut Gradients,
    ) -> Matrix {
        let m = &self.modules[module];
        let gm = &mut g.modules[module];
        let t = cache.text_len;
        gm.head_b.add_assign(&Matrix::from_vec(1, dlogits.cols(), dlogits.sum_rows()).expect("row"));
        gm.head_w.add_assign(&cache.hf.t_matmul(dlogits));
        let dhf = dlogits.matmul_t(&m.head_w);
        let dtext = layer_norm_backward(
            &cache.lnf,
            m.lnf_g.data(),
            &dhf,
            gm.lnf_g.data_mut(),
            gm.lnf_b.data_mut(),
        );
        let mut dx = dtext.vstack(&Matrix::zeros(visual_rows, self.config.d));
        let mut dbias = cache
            .soft_bias
            .then(|| Matrix::zeros(visual_rows, visual_rows));
        for (l, b) in m.blocks.iter().enumerate().rev() {
            dx = block_backward(
                b,
                self.config.heads,
                &cache.blocks[l],
                t,
                &dx,
                &mut gm.blocks[l],
                dbias.as_mut(),
            );
        }
        if let (Some(db), Some(params)) = (dbias, &m.mask) {
            let dl = soft_mask_backward(params, &db);
            gm.mask.as_mut().expect("same layout").logits.add_assign(&dl);
        }
        for (j, &id) in ids.iter().enumerate() {
            let row = dx.row(j).to_vec();
            for (a, b) in g.text.tok_emb.row_mut(id).iter_mut().zip(&row) {
                *a += b;
            }
            for (a, b) in g.text.pos_emb.row_mut(j).iter_mut().zip(&row) {
                *a += b;
            }
        }
        dx.slice_rows(t, t + visual_rows)
    }

    fn encoder_backward(&self, patches: &Matrix, frames: &[usize], dtokens: &Matrix, g: &mut Gradients) {
        let p = self.config.per_frame;
        g.encoder.patch_w.add_assign(&patches.t_matmul(dtokens));
        for (slot, &f) in frames.iter().enumerate() {
            for k in 0..p {
                let row = dtokens.row(slot * p + k);
                for (a, b) in g.encoder.frame_emb.row_mut(f).iter_mut().zip(row) {
                    *a += b;
                }
                for (a, b) in g.encoder.pos_emb.row_mut(k).iter_mut().zip(row) {
                    *a += b;
                }
            }
        }
    }

    /// Weighted mean cross-entropy of `module` on one video. With `grads`,
    /// also accumulates `scale ×` its gradient. Only the shared parameters
    /// and `module`'s own parameters receive gradient.
    pub fn loss_and_grad(
        &self,
        module: usize,
        input: &LossInput<'_>,
        grads: Option<(&mut Gradients, f64)>,
    ) -> Result<f64> {
        let patches = self.patches(input.clip, input.frames)?;
        let visual = self.embed_patches(&patches, input.frames);
        let len = input.caption.active_len();
        let ids = &input.caption.input[..len];
        let (logits, cache) = self.forward_module(module, &visual, ids, input.mask)?;

        let norm: f64 = input.caption.weight[..len].iter().sum();
        if norm <= 0.0 {
            return Err(Error::Shape("caption has no weighted target".into()));
        }
        let mut loss = 0.0;
        let mut dlogits = Matrix::zeros(len, logits.cols());
        for j in 0..len {
            let w = input.caption.weight[j];
            if w == 0.0 {
                continue;
            }
            let (l, g) = cross_entropy(logits.row(j), input.caption.target[j]);
            loss += w * l / norm;
            for (d, gv) in dlogits.row_mut(j).iter_mut().zip(g) {
                *d = w * gv / norm;
            }
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss of {} module", self.module_name(module))));
        }
        if let Some((g, scale)) = grads {
            dlogits.scale(scale);
            let dvis = self.backward_module(module, ids, visual.rows(), &cache, &dlogits, g);
            self.encoder_backward(&patches, input.frames, &dvis, g);
        }
        Ok(loss)
    }

    /// Evaluates only the gated module; the other loss is reported as zero
    /// and its parameters receive no gradient.
    pub fn gated_loss(
        &self,
        gate: Gate,
        large: &LossInput<'_>,
        small: &LossInput<'_>,
        grads: Option<(&mut Gradients, f64)>,
    ) -> Result<GatedLoss> {
        let (l_large, l_small) = match gate.module() {
            ModuleChoice::Large => (self.loss_and_grad(self.large_index(), large, grads)?, 0.0),
            ModuleChoice::Small => (0.0, self.loss_and_grad(0, small, grads)?),
        };
        Ok(GatedLoss {
            large: l_large,
            small: l_small,
            gate,
            total: gate.large * l_large + gate.small * l_small,
        })
    }

    /// Greedy decoding from CLS; stops at the end token or `max_len`
    /// positions. Returns word ids without begin/end tokens.
    pub fn greedy_decode(
        &self,
        module: usize,
        clip: &VideoClip,
        frames: &[usize],
        mask: AttentionMaskInput<'_>,
        max_len: usize,
    ) -> Result<Vec<usize>> {
        let visual = self.encode_frames(clip, frames)?;
        let limit = max_len.min(self.config.max_len);
        let mut ids = vec![CLS_ID];
        while ids.len() <= limit {
            let logits = self.generate_forward(module, &visual, &ids, mask)?;
            let last = logits.row(logits.rows() - 1);
            let next = (0..last.len())
                .max_by(|&a, &b| last[a].total_cmp(&last[b]).then(b.cmp(&a)))
                .expect("non-empty vocabulary");
            if next == END_ID || ids.len() == limit {
                if next != END_ID {
                    ids.push(next);
                }
                break;
            }
            ids.push(next);
        }
        ids.remove(0);
        Ok(ids)
    }

    /// Teacher-forced `(correct, total)` argmax predictions on weighted positions.
    pub fn token_hits(&self, module: usize, input: &LossInput<'_>) -> Result<(usize, usize)> {
        let visual = self.encode_frames(input.clip, input.frames)?;
        let len = input.caption.active_len();
        let logits = self.generate_forward(module, &visual, &input.caption.input[..len], input.mask)?;
        let mut hits = 0;
        let mut total = 0;
        for j in 0..len {
            if input.caption.weight[j] == 0.0 {
                continue;
            }
            let row = logits.row(j);
            let pred = (0..row.len())
                .max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a)))
                .expect("non-empty");
            hits += usize::from(pred == input.caption.target[j]);
            total += 1;
        }
        Ok((hits, total))
    }
}
