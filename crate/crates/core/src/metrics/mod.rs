//! Automatic response metrics over token sequences.

mod eval;

use std::collections::{HashMap, HashSet};
use std::hash::Hash;

pub use eval::{
    evaluate, teacher_forced, EvalReport, TeacherForced, BLEU_VARIANT, ROUGE_VARIANT,
    TOKENIZATION_NOTE,
};

use crate::error::{Error, Result};

pub const BLEU_EPSILON: f64 = 1e-9;
pub const ROUGE_BETA: f64 = 1.2;

/// `exp(total_nll / tokens)`.
pub fn perplexity(total_nll: f64, tokens: usize) -> Result<f64> {
    if tokens == 0 {
        return Err(Error::Validation("perplexity over zero tokens".into()));
    }
    Ok((total_nll / tokens as f64).exp())
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus totals `(clipped matches, hypothesis n-grams)` for order `n`.
pub fn modified_precision<T: Eq + Hash>(
    hypotheses: &[Vec<T>],
    references: &[Vec<T>],
    n: usize,
) -> (usize, usize) {
    let mut matched = 0;
    let mut total = 0;
    for (h, r) in hypotheses.iter().zip(references) {
        let hc = ngram_counts(h, n);
        let rc = ngram_counts(r, n);
        for (g, c) in hc {
            matched += c.min(rc.get(g).copied().unwrap_or(0));
            total += c;
        }
    }
    (matched, total)
}

/// Corpus BLEU-n: geometric mean of clipped precisions of orders `1..=n`
/// times the brevity penalty. Zero match counts are replaced by 1e-9.
pub fn bleu<T: Eq + Hash>(hypotheses: &[Vec<T>], references: &[Vec<T>], n: usize) -> Result<f64> {
    if hypotheses.is_empty() {
        return Err(Error::Validation(
            "BLEU over an empty hypothesis list".into(),
        ));
    }
    if hypotheses.len() != references.len() {
        return Err(Error::Validation(format!(
            "{} hypotheses but {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if !(1..=4).contains(&n) {
        return Err(Error::Validation(format!("BLEU order {n} outside 1..=4")));
    }
    let c: usize = hypotheses.iter().map(Vec::len).sum();
    let r: usize = references.iter().map(Vec::len).sum();
    if c == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for k in 1..=n {
        let (m, total) = modified_precision(hypotheses, references, k);
        let num = if m == 0 { BLEU_EPSILON } else { m as f64 };
        let p = num / total.max(1) as f64;
        log_sum += p.ln();
    }
    let bp = if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    Ok(bp * (log_sum / n as f64).exp())
}

pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS F-measure with recall weighted by β = 1.2.
pub fn rouge_l<T: Eq>(hypothesis: &[T], reference: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::Validation(
            "ROUGE-L against an empty reference".into(),
        ));
    }
    let lcs = lcs_len(hypothesis, reference);
    if lcs == 0 {
        return Ok(0.0);
    }
    let p = lcs as f64 / hypothesis.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    Ok((1.0 + b2) * p * r / (r + b2 * p))
}

/// Mean sentence ROUGE-L.
pub fn corpus_rouge_l<T: Eq>(hypotheses: &[Vec<T>], references: &[Vec<T>]) -> Result<f64> {
    if hypotheses.is_empty() || hypotheses.len() != references.len() {
        return Err(Error::Validation(
            "ROUGE-L needs equal, non-empty lists".into(),
        ));
    }
    let mut sum = 0.0;
    for (h, r) in hypotheses.iter().zip(references) {
        sum += rouge_l(h, r)?;
    }
    Ok(sum / hypotheses.len() as f64)
}

/// Unique n-grams over all hypotheses divided by their total count.
pub fn distinct_n<T: Eq + Hash>(hypotheses: &[Vec<T>], n: usize) -> Result<f64> {
    let mut seen = HashSet::new();
    let mut total = 0usize;
    for h in hypotheses {
        if n > 0 && h.len() >= n {
            for w in h.windows(n) {
                seen.insert(w);
                total += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::Validation(format!("no {n}-grams in any hypothesis")));
    }
    Ok(seen.len() as f64 / total as f64)
}
