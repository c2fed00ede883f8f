//! BLEU with clipped n-gram precision and brevity penalty, single reference.

use std::collections::HashMap;
use std::hash::Hash;

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for w in tokens.windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

/// Running corpus statistics: clipped matches and candidate n-gram totals
/// for each order, plus candidate and reference lengths.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BleuStats {
    matches: Vec<usize>,
    totals: Vec<usize>,
    cand_len: usize,
    ref_len: usize,
}

impl BleuStats {
    pub fn new(max_n: usize) -> Self {
        Self {
            matches: vec![0; max_n],
            totals: vec![0; max_n],
            cand_len: 0,
            ref_len: 0,
        }
    }

    pub fn add<T: Eq + Hash>(&mut self, candidate: &[T], reference: &[T]) {
        for n in 1..=self.matches.len() {
            let cand = ngram_counts(candidate, n);
            let refc = ngram_counts(reference, n);
            let clipped: usize = cand
                .iter()
                .map(|(g, &c)| c.min(refc.get(g).copied().unwrap_or(0)))
                .sum();
            self.matches[n - 1] += clipped;
            self.totals[n - 1] += candidate.len().saturating_sub(n - 1);
        }
        self.cand_len += candidate.len();
        self.ref_len += reference.len();
    }

    pub fn precision(&self, n: usize) -> f64 {
        let total = self.totals[n - 1];
        if total == 0 {
            0.0
        } else {
            self.matches[n - 1] as f64 / total as f64
        }
    }

    pub fn brevity_penalty(&self) -> f64 {
        if self.cand_len == 0 {
            0.0
        } else if self.cand_len > self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.cand_len as f64).exp()
        }
    }

    /// BLEU-`n` for `n <= max_n`: brevity penalty times the geometric mean
    /// of the first `n` precisions. Zero if any of them is zero.
    pub fn bleu(&self, n: usize) -> f64 {
        assert!(n >= 1 && n <= self.matches.len(), "order {n} not tracked");
        let mut log_sum = 0.0;
        for k in 1..=n {
            let p = self.precision(k);
            if p == 0.0 {
                return 0.0;
            }
            log_sum += p.ln();
        }
        self.brevity_penalty() * (log_sum / n as f64).exp()
    }

    /// BLEU-1 through BLEU-`max_n`.
    pub fn scores(&self) -> Vec<f64> {
        (1..=self.matches.len()).map(|n| self.bleu(n)).collect()
    }
}

pub fn sentence_bleu<T: Eq + Hash>(candidate: &[T], reference: &[T], n: usize) -> f64 {
    let mut s = BleuStats::new(n);
    s.add(candidate, reference);
    s.bleu(n)
}

/// Corpus BLEU-1..=`max_n` over `(candidate, reference)` pairs.
pub fn corpus_bleu<T: Eq + Hash, C: AsRef<[T]>, R: AsRef<[T]>>(pairs: &[(C, R)], max_n: usize) -> Vec<f64> {
    let mut s = BleuStats::new(max_n);
    for (c, r) in pairs {
        s.add(c.as_ref(), r.as_ref());
    }
    s.scores()
}
