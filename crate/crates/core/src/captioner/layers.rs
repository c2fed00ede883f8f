//! Pre-norm transformer block with explicit forward caches and backward.

use crate::error::Result;
use crate::numerics::{
    gelu, gelu_grad, layer_norm, layer_norm_backward, masked_softmax_row, softmax_backward_row,
    LayerNormCache, Matrix, RngState,
};

pub(crate) fn randn(rows: usize, cols: usize, std: f64, rng: &mut RngState) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.normal() * std).collect();
    Matrix::from_vec(rows, cols, data).expect("shape")
}

/// Parameters of one block: attention then MLP, each behind a layer norm
/// and a residual connection.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams {
    pub ln1_g: Matrix,
    pub ln1_b: Matrix,
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub ln2_g: Matrix,
    pub ln2_b: Matrix,
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

impl BlockParams {
    pub fn init(d: usize, hidden: usize, layers: usize, rng: &mut RngState) -> Self {
        let proj = 1.0 / (d as f64).sqrt();
        let resid = proj / (2.0 * layers as f64).sqrt();
        Self {
            ln1_g: Matrix::filled(1, d, 1.0),
            ln1_b: Matrix::zeros(1, d),
            wq: randn(d, d, proj, rng),
            wk: randn(d, d, proj, rng),
            wv: randn(d, d, proj, rng),
            wo: randn(d, d, resid, rng),
            ln2_g: Matrix::filled(1, d, 1.0),
            ln2_b: Matrix::zeros(1, d),
            w1: randn(d, hidden, proj, rng),
            b1: Matrix::zeros(1, hidden),
            w2: randn(hidden, d, 1.0 / (hidden as f64).sqrt() / (2.0 * layers as f64).sqrt(), rng),
            b2: Matrix::zeros(1, d),
        }
    }

    pub(crate) fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Matrix)>) {
        let names = [
            "ln1.gain", "ln1.bias", "attn.wq", "attn.wk", "attn.wv", "attn.wo", "ln2.gain",
            "ln2.bias", "mlp.w1", "mlp.b1", "mlp.w2", "mlp.b2",
        ];
        let mats = [
            &self.ln1_g, &self.ln1_b, &self.wq, &self.wk, &self.wv, &self.wo, &self.ln2_g,
            &self.ln2_b, &self.w1, &self.b1, &self.w2, &self.b2,
        ];
        for (n, m) in names.iter().zip(mats) {
            out.push((format!("{prefix}.{n}"), m));
        }
    }

    pub(crate) fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Matrix>) {
        out.extend([
            &mut self.ln1_g,
            &mut self.ln1_b,
            &mut self.wq,
            &mut self.wk,
            &mut self.wv,
            &mut self.wo,
            &mut self.ln2_g,
            &mut self.ln2_b,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
        ]);
    }
}

/// Attention pattern for one sequence plus an optional additive bias on the
/// visual-visual block (the soft learnable mask).
pub(crate) struct AttentionSpec<'a> {
    pub allowed: &'a [bool],
    pub text_len: usize,
    pub visual_bias: Option<&'a Matrix>,
}

pub(crate) struct BlockCache {
    ln1: LayerNormCache,
    h1: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    probs: Vec<Matrix>,
    attn: Matrix,
    ln2: LayerNormCache,
    h2: Matrix,
    pre: Matrix,
    act: Matrix,
}

pub(crate) fn block_forward(
    p: &BlockParams,
    heads: usize,
    x: &Matrix,
    spec: &AttentionSpec<'_>,
) -> Result<(Matrix, BlockCache)> {
    let (s, d) = x.shape();
    let head_dim = d / heads;
    let scale = 1.0 / (head_dim as f64).sqrt();

    let (h1, ln1) = layer_norm(x, p.ln1_g.data(), p.ln1_b.data());
    let q = h1.matmul(&p.wq);
    let k = h1.matmul(&p.wk);
    let v = h1.matmul(&p.wv);

    let mut attn = Matrix::zeros(s, d);
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = q.columns(h * head_dim, head_dim);
        let kh = k.columns(h * head_dim, head_dim);
        let vh = v.columns(h * head_dim, head_dim);
        let mut scores = qh.matmul_t(&kh);
        scores.scale(scale);
        if let Some(bias) = spec.visual_bias {
            let t = spec.text_len;
            for xq in 0..bias.rows() {
                for yk in 0..bias.cols() {
                    scores[(t + xq, t + yk)] += bias[(xq, yk)];
                }
            }
        }
        for i in 0..s {
            masked_softmax_row(scores.row_mut(i), &spec.allowed[i * s..(i + 1) * s])?;
        }
        attn.set_columns(h * head_dim, &scores.matmul(&vh));
        probs.push(scores);
    }
    let mut x1 = x.clone();
    x1.add_assign(&attn.matmul(&p.wo));

    let (h2, ln2) = layer_norm(&x1, p.ln2_g.data(), p.ln2_b.data());
    let mut pre = h2.matmul(&p.w1);
    pre.add_row_broadcast(p.b1.data());
    let mut act = pre.clone();
    for v in act.data_mut() {
        *v = gelu(*v);
    }
    let mut out = act.matmul(&p.w2);
    out.add_row_broadcast(p.b2.data());
    out.add_assign(&x1);

    Ok((
        out,
        BlockCache {
            ln1,
            h1,
            q,
            k,
            v,
            probs,
            attn,
            ln2,
            h2,
            pre,
            act,
        },
    ))
}

/// Accumulates parameter gradients into `g` (and the visual bias gradient
/// into `dbias` when given) and returns the gradient with respect to the
/// block input.
pub(crate) fn block_backward(
    p: &BlockParams,
    heads: usize,
    cache: &BlockCache,
    text_len: usize,
    dout: &Matrix,
    g: &mut BlockParams,
    mut dbias: Option<&mut Matrix>,
) -> Matrix {
    let (s, d) = dout.shape();
    let head_dim = d / heads;
    let scale = 1.0 / (head_dim as f64).sqrt();

    // MLP branch
    g.b2.add_assign(&row(dout.sum_rows()));
    g.w2.add_assign(&cache.act.t_matmul(dout));
    let mut dpre = dout.matmul_t(&p.w2);
    for (dv, &u) in dpre.data_mut().iter_mut().zip(cache.pre.data()) {
        *dv *= gelu_grad(u);
    }
    g.b1.add_assign(&row(dpre.sum_rows()));
    g.w1.add_assign(&cache.h2.t_matmul(&dpre));
    let dh2 = dpre.matmul_t(&p.w1);
    let mut dx1 = layer_norm_backward(
        &cache.ln2,
        p.ln2_g.data(),
        &dh2,
        g.ln2_g.data_mut(),
        g.ln2_b.data_mut(),
    );
    dx1.add_assign(dout);

    // attention branch
    g.wo.add_assign(&cache.attn.t_matmul(&dx1));
    let dattn = dx1.matmul_t(&p.wo);
    let mut dq = Matrix::zeros(s, d);
    let mut dk = Matrix::zeros(s, d);
    let mut dv = Matrix::zeros(s, d);
    let mut dscores = Matrix::zeros(s, s);
    for h in 0..heads {
        let off = h * head_dim;
        let qh = cache.q.columns(off, head_dim);
        let kh = cache.k.columns(off, head_dim);
        let vh = cache.v.columns(off, head_dim);
        let dah = dattn.columns(off, head_dim);
        let ph = &cache.probs[h];
        let dp = dah.matmul_t(&vh);
        dv.set_columns(off, &ph.t_matmul(&dah));
        for i in 0..s {
            softmax_backward_row(ph.row(i), dp.row(i), dscores.row_mut(i));
        }
        if let Some(db) = dbias.as_deref_mut() {
            for xq in 0..db.rows() {
                for yk in 0..db.cols() {
                    db[(xq, yk)] += dscores[(text_len + xq, text_len + yk)];
                }
            }
        }
        let mut dqh = dscores.matmul(&kh);
        dqh.scale(scale);
        let mut dkh = dscores.t_matmul(&qh);
        dkh.scale(scale);
        dq.set_columns(off, &dqh);
        dk.set_columns(off, &dkh);
    }
    g.wq.add_assign(&cache.h1.t_matmul(&dq));
    g.wk.add_assign(&cache.h1.t_matmul(&dk));
    g.wv.add_assign(&cache.h1.t_matmul(&dv));
    let mut dh1 = dq.matmul_t(&p.wq);
    dh1.add_assign(&dk.matmul_t(&p.wk));
    dh1.add_assign(&dv.matmul_t(&p.wv));
    let mut dx = layer_norm_backward(
        &cache.ln1,
        p.ln1_g.data(),
        &dh1,
        g.ln1_g.data_mut(),
        g.ln1_b.data_mut(),
    );
    dx.add_assign(&dx1);
    dx
}

fn row(v: Vec<f64>) -> Matrix {
    let n = v.len();
    Matrix::from_vec(1, n, v).expect("row")
}
