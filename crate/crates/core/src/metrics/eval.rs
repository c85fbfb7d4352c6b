use serde::Serialize;

use crate::corpus::tokenize;
use crate::corpus::Vocab;
use crate::decoder::argmax;
use crate::error::Result;
use crate::model::{Network, Prepared};
use crate::numerics::{ParamStore, Tape};
use crate::training::{nll_loss, Reduction};

use super::{bleu, corpus_rouge_l, distinct_n, perplexity};

pub const BLEU_VARIANT: &str = "corpus-bleu/clipped/brevity-penalty/epsilon-1e-9/uniform-weights";
pub const ROUGE_VARIANT: &str = "rouge-l/lcs-f/beta-1.2/mean-over-pairs";
pub const TOKENIZATION_NOTE: &str =
    "word-level corpus tokenizer; values are internally consistent but not comparable to subword-based scores";

/// Teacher-forced statistics of one example.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TeacherForced {
    pub nll_sum: f64,
    pub tokens: usize,
    pub correct_tokens: usize,
    pub predicted_label: usize,
    pub label_correct: bool,
}

pub fn teacher_forced(net: &Network, store: &ParamStore, ex: &Prepared) -> Result<TeacherForced> {
    let mut tape = Tape::new();
    let out = net.forward(&mut tape, store, ex)?;
    let targets = &ex.target_ids[1..];
    let nll = nll_loss(&mut tape, out.logits, targets, Reduction::Sum)?;
    let mut tokens = 0;
    let mut correct = 0;
    let logits = tape.value(out.logits);
    for (z, t) in Network::target_positions(ex) {
        tokens += 1;
        if argmax(logits.row(z)) == t {
            correct += 1;
        }
    }
    let predicted_label = argmax(tape.value(out.class_logits).data());
    Ok(TeacherForced {
        nll_sum: tape.value(nll).item()?,
        tokens,
        correct_tokens: correct,
        predicted_label,
        label_correct: predicted_label == ex.label,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub examples: usize,
    pub ppl: f64,
    pub bleu: [f64; 4],
    pub rouge_l: f64,
    /// `None` when the generated outputs hold no n-gram of that order.
    pub distinct_1: Option<f64>,
    pub distinct_2: Option<f64>,
    pub token_accuracy: f64,
    pub class_accuracy: f64,
    pub bleu_variant: String,
    pub rouge_variant: String,
    pub tokenization: String,
}

/// Scores `examples` against reference texts and returns the report and
/// the generated responses, one per example.
pub fn evaluate(
    net: &Network,
    store: &ParamStore,
    vocab: &Vocab,
    examples: &[Prepared],
    references: &[String],
    max_decode: usize,
) -> Result<(EvalReport, Vec<String>)> {
    let mut nll = 0.0;
    let mut tokens = 0;
    let mut correct = 0;
    let mut labels_right = 0;
    let mut hyps = Vec::with_capacity(examples.len());
    let mut texts = Vec::with_capacity(examples.len());
    for ex in examples {
        let tf = teacher_forced(net, store, ex)?;
        nll += tf.nll_sum;
        tokens += tf.tokens;
        correct += tf.correct_tokens;
        labels_right += usize::from(tf.label_correct);
        let text = vocab.detokenize(&net.respond(store, ex, max_decode)?);
        hyps.push(tokenize(&text));
        texts.push(text);
    }
    let refs: Vec<Vec<String>> = references.iter().map(|r| tokenize(r)).collect();
    let mut b = [0.0; 4];
    for (n, slot) in b.iter_mut().enumerate() {
        *slot = bleu(&hyps, &refs, n + 1)?;
    }
    let report = EvalReport {
        examples: examples.len(),
        ppl: perplexity(nll, tokens)?,
        bleu: b,
        rouge_l: corpus_rouge_l(&hyps, &refs)?,
        distinct_1: distinct_n(&hyps, 1).ok(),
        distinct_2: distinct_n(&hyps, 2).ok(),
        token_accuracy: correct as f64 / tokens as f64,
        class_accuracy: labels_right as f64 / examples.len() as f64,
        bleu_variant: BLEU_VARIANT.into(),
        rouge_variant: ROUGE_VARIANT.into(),
        tokenization: TOKENIZATION_NOTE.into(),
    };
    Ok((report, texts))
}
