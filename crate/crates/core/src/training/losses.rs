use serde::{Deserialize, Serialize};

use crate::corpus::PAD;
use crate::error::{Error, Result};
use crate::numerics::{Tape, Var};

/// How the generation loss combines target positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

/// Negative log-likelihood of `targets` under row-wise softmax of `logits`,
/// skipping `[PAD]` targets.
pub fn nll_loss(
    tape: &mut Tape,
    logits: Var,
    targets: &[usize],
    reduction: Reduction,
) -> Result<Var> {
    let count = targets.iter().filter(|&&t| t != PAD).count();
    if count == 0 {
        return Err(Error::EmptySequence(
            "generation loss (every target is padding)",
        ));
    }
    let w = match reduction {
        Reduction::Mean => 1.0 / count as f64,
        Reduction::Sum => 1.0,
    };
    let weights: Vec<f64> = targets
        .iter()
        .map(|&t| if t == PAD { 0.0 } else { w })
        .collect();
    tape.cross_entropy(logits, targets, &weights)
}

/// `−log softmax(class_logits)[label]` for a `1 × labels` row.
pub fn ce_loss(tape: &mut Tape, class_logits: Var, label: usize) -> Result<Var> {
    let labels = tape.shape(class_logits)[1];
    if label >= labels {
        return Err(Error::Validation(format!(
            "label {label} outside 0..{labels}"
        )));
    }
    tape.cross_entropy(class_logits, &[label], &[1.0])
}

/// `−log p[label]` for an explicit distribution.
pub fn ce_from_distribution(p: &[f64], label: usize) -> Result<f64> {
    match p.get(label) {
        Some(&q) => Ok(-q.ln()),
        None => Err(Error::Validation(format!(
            "label {label} outside 0..{}",
            p.len()
        ))),
    }
}

/// `λ1·L1 + λ2·L2`.
pub fn joint_loss(tape: &mut Tape, l1: Var, l2: Var, lambda1: f64, lambda2: f64) -> Result<Var> {
    let a = tape.scale(l1, lambda1);
    let b = tape.scale(l2, lambda2);
    tape.add(a, b)
}
