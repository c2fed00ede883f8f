//! Adaptive visual attention masks and the fixed learnable baseline.
//!
//! A sequence fed to a generation module is `[text; visual]`, text first with
//! the CLS/begin token at position 0. The masks in this module only speak
//! about the visual-visual block; [`sequence_pattern`] assembles the full
//! pattern including causal text attention.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::numerics::{sigmoid, Matrix, MASK_NEG};

/// Binary, symmetric visual-token mask with unit diagonal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskMatrix {
    n: usize,
    bits: Vec<bool>,
    index_map: Vec<(usize, usize)>,
}

impl MaskMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[x * self.n + y]
    }

    /// `(frame, token)` meaning of each row/column.
    pub fn index_map(&self) -> &[(usize, usize)] {
        &self.index_map
    }

    pub fn all_ones(frames: &[usize], per_frame: usize) -> Self {
        let index_map = index_map(frames, per_frame);
        let n = index_map.len();
        Self {
            n,
            bits: vec![true; n * n],
            index_map,
        }
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|x| (0..x).all(|y| self.get(x, y) == self.get(y, x)))
    }

    pub fn has_unit_diagonal(&self) -> bool {
        (0..self.n).all(|x| self.get(x, x))
    }

    pub fn to_matrix(&self) -> Matrix {
        let data = self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Matrix::from_vec(self.n, self.n, data).expect("square")
    }

    /// Rows and columns reordered so that new index `a` is old `order[a]`.
    pub fn permute(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.n];
        for &o in order {
            if o >= self.n || std::mem::replace(&mut seen[o], true) {
                return Err(Error::Shape(format!("{order:?} is not a permutation of 0..{}", self.n)));
            }
        }
        if order.len() != self.n {
            return Err(Error::Shape(format!("{order:?} is not a permutation of 0..{}", self.n)));
        }
        let mut bits = vec![false; self.n * self.n];
        for (a, &x) in order.iter().enumerate() {
            for (b, &y) in order.iter().enumerate() {
                bits[a * self.n + b] = self.get(x, y);
            }
        }
        Ok(Self {
            n: self.n,
            bits,
            index_map: order.iter().map(|&o| self.index_map[o]).collect(),
        })
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Plain-text PGM (P2) with maxval 1.
    pub fn to_pgm(&self) -> String {
        let mut s = format!("P2\n{} {}\n1\n", self.n, self.n);
        for x in 0..self.n {
            let row: Vec<&str> = (0..self.n)
                .map(|y| if self.get(x, y) { "1" } else { "0" })
                .collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }
}

fn index_map(frames: &[usize], per_frame: usize) -> Vec<(usize, usize)> {
    frames
        .iter()
        .flat_map(|&i| (0..per_frame).map(move |p| (i, p)))
        .collect()
}

/// Adaptive mask over all `T_large * P` tokens:
/// `M[x,y] = 1` when `x == y` or both `x` and `y` were selected, else 0.
pub fn build_mask_large(
    token_set: &[(usize, usize)],
    t_large: usize,
    per_frame: usize,
) -> Result<MaskMatrix> {
    let n = t_large * per_frame;
    let mut selected = vec![false; n];
    for &(i, p) in token_set {
        if i >= t_large || p >= per_frame {
            return Err(Error::OutOfRange(format!(
                "token ({i}, {p}) outside {t_large} x {per_frame}"
            )));
        }
        selected[i * per_frame + p] = true;
    }
    let mut bits = vec![false; n * n];
    for x in 0..n {
        for y in 0..n {
            bits[x * n + y] = x == y || (selected[x] && selected[y]);
        }
    }
    let frames: Vec<usize> = (0..t_large).collect();
    Ok(MaskMatrix {
        n,
        bits,
        index_map: index_map(&frames, per_frame),
    })
}

/// Principal submatrix of `m_large` on the tokens of `final_frames`, in
/// the given frame order.
pub fn restrict_mask_small(
    m_large: &MaskMatrix,
    final_frames: &[usize],
    per_frame: usize,
) -> Result<MaskMatrix> {
    let frames_total = m_large.n / per_frame;
    if let Some(&bad) = final_frames.iter().find(|&&i| i >= frames_total) {
        return Err(Error::OutOfRange(format!("frame {bad} of {frames_total}")));
    }
    let rows: Vec<usize> = final_frames
        .iter()
        .flat_map(|&i| (0..per_frame).map(move |p| i * per_frame + p))
        .collect();
    let n = rows.len();
    let mut bits = vec![false; n * n];
    for (a, &x) in rows.iter().enumerate() {
        for (b, &y) in rows.iter().enumerate() {
            bits[a * n + b] = m_large.get(x, y);
        }
    }
    Ok(MaskMatrix {
        n,
        bits,
        index_map: index_map(final_frames, per_frame),
    })
}

/// Adds the masking constant to visual-visual logits where `m` is zero.
/// `attention_logits` covers the whole `[text; visual]` sequence.
pub fn apply_mask(attention_logits: &Matrix, m: &MaskMatrix, text_len: usize) -> Result<Matrix> {
    let s = text_len + m.n;
    if attention_logits.shape() != (s, s) {
        return Err(Error::Shape(format!(
            "logits {:?} for {text_len} text + {} visual tokens",
            attention_logits.shape(),
            m.n
        )));
    }
    let mut out = attention_logits.clone();
    for x in 0..m.n {
        for y in 0..m.n {
            if !m.get(x, y) {
                out[(text_len + x, text_len + y)] += MASK_NEG;
            }
        }
    }
    Ok(out)
}

/// Which query/key pairs of a `[text; visual]` sequence may attend.
///
/// - text to text: causal
/// - text to visual: always
/// - visual to text: only the CLS position 0, so visual states never see
///   caption tokens a text position could not see itself
/// - visual to visual: `mask`, or everything when `None`
pub fn sequence_pattern(text_len: usize, visual_len: usize, mask: Option<&MaskMatrix>) -> Result<Vec<bool>> {
    if text_len == 0 {
        return Err(Error::Shape("sequence needs the CLS position".into()));
    }
    if let Some(m) = mask {
        if m.n != visual_len {
            return Err(Error::Capacity(format!(
                "mask side {} for {visual_len} visual tokens",
                m.n
            )));
        }
    }
    let s = text_len + visual_len;
    let mut allowed = vec![false; s * s];
    for q in 0..s {
        for k in 0..s {
            allowed[q * s + k] = match (q < text_len, k < text_len) {
                (true, true) => k <= q,
                (true, false) => true,
                (false, true) => k == 0,
                (false, false) => mask.map_or(true, |m| m.get(q - text_len, k - text_len)),
            };
        }
    }
    Ok(allowed)
}

/// Offset added to `sigmoid` before the log in the soft mask bias.
pub const SOFT_MASK_EPS: f64 = 1e-6;

/// Unconstrained logits of a mask shared by every video.
#[derive(Clone, Debug, PartialEq)]
pub struct LearnableMaskParams {
    pub logits: Matrix,
}

impl LearnableMaskParams {
    pub fn zeros(n: usize) -> Self {
        Self {
            logits: Matrix::zeros(n, n),
        }
    }

    pub fn n(&self) -> usize {
        self.logits.rows()
    }
}

/// `sigmoid` of the learnable logits.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftMask {
    pub values: Matrix,
}

impl SoftMask {
    /// Additive attention bias `ln(sigmoid + eps)`.
    pub fn log_bias(&self) -> Matrix {
        let mut b = self.values.clone();
        for v in b.data_mut() {
            *v = (*v + SOFT_MASK_EPS).ln();
        }
        b
    }

    /// Binary view for inspection.
    pub fn thresholded(&self, threshold: f64) -> Matrix {
        let mut b = self.values.clone();
        for v in b.data_mut() {
            *v = if *v >= threshold { 1.0 } else { 0.0 };
        }
        b
    }

    /// Plain-text PGM (P2) with maxval 255.
    pub fn to_pgm(&self) -> String {
        let n = self.values.rows();
        let mut s = format!("P2\n{n} {n}\n255\n");
        for x in 0..n {
            for (y, v) in self.values.row(x).iter().enumerate() {
                if y > 0 {
                    s.push(' ');
                }
                let _ = write!(s, "{}", (v * 255.0).round() as u8);
            }
            s.push('\n');
        }
        s
    }
}

/// The fixed mask: same for every video, trained with the model.
pub fn fixed_learnable_mask(params: &LearnableMaskParams) -> SoftMask {
    let mut values = params.logits.clone();
    for v in values.data_mut() {
        *v = sigmoid(*v);
    }
    SoftMask { values }
}

/// Gradient of the loss with respect to the learnable logits, given the
/// gradient with respect to the additive bias.
pub fn soft_mask_backward(params: &LearnableMaskParams, dbias: &Matrix) -> Matrix {
    let mut g = params.logits.clone();
    for (v, db) in g.data_mut().iter_mut().zip(dbias.data()) {
        let s = sigmoid(*v);
        *v = db * s * (1.0 - s) / (s + SOFT_MASK_EPS);
    }
    g
}
