use std::ops::Range;

use super::vocab::{Vocab, BOS, CLS, EOS, SEP, UNK};
use super::{Dialogue, Speaker};
use crate::error::{Error, Result};

/// Smallest context length accepted by [`make_examples`].
pub const MIN_CONTEXT_LEN: usize = 8;

/// One supporter response together with everything it is conditioned on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingExample {
    pub dialogue_index: usize,
    /// Turn index of the response inside its dialogue.
    pub target_turn: usize,
    /// Turn index of the most recent seeker utterance before the response.
    pub seeker_turn: usize,
    /// `[CLS] u … [SEP] … u [SEP]`, at most `max_len` ids, unpadded.
    pub context_ids: Vec<usize>,
    pub situation_ids: Vec<usize>,
    /// Filled in by an intention provider; empty after carving.
    pub intention_text: String,
    /// Positions of the last seeker utterance's tokens inside `context_ids`.
    pub last_seeker_span: Range<usize>,
    /// `[BOS] y … [EOS]`.
    pub target_ids: Vec<usize>,
    pub label_id: usize,
}

/// Carves one example per supporter turn that has at least one earlier
/// seeker turn.
///
/// The `[SEP]`-joined turns are truncated from the front so that, with the
/// leading `[CLS]`, at most `max_len` ids remain. If that cut would fall
/// inside the last seeker utterance, the context is that utterance alone,
/// its own front truncated to `max_len − 3` tokens when it is longer.
pub fn make_examples(
    dialogue: &Dialogue,
    dialogue_index: usize,
    vocab: &Vocab,
    max_len: usize,
) -> Result<Vec<TrainingExample>> {
    if max_len < MIN_CONTEXT_LEN {
        return Err(Error::Validation(format!(
            "max context length must be at least {MIN_CONTEXT_LEN}, got {max_len}"
        )));
    }
    let encoded: Vec<Vec<usize>> = dialogue
        .turns
        .iter()
        .map(|t| vocab.encode(&t.text))
        .collect();
    let mut situation_ids = vocab.encode(&dialogue.situation);
    situation_ids.truncate(max_len);
    if situation_ids.is_empty() {
        situation_ids.push(UNK);
    }

    let mut out = Vec::new();
    let mut last_seeker: Option<usize> = None;
    for (target, turn) in dialogue.turns.iter().enumerate() {
        if turn.speaker == Speaker::Seeker {
            last_seeker = Some(target);
            continue;
        }
        let Some(seeker) = last_seeker else { continue };
        if encoded[seeker].is_empty() {
            log::warn!(
                "dialogue {dialogue_index} turn {target}: last seeker utterance has no tokens, skipped"
            );
            continue;
        }
        let (context_ids, last_seeker_span) = build_context(&encoded[..target], seeker, max_len);
        let mut target_ids = Vec::with_capacity(encoded[target].len() + 2);
        target_ids.push(BOS);
        target_ids.extend_from_slice(&encoded[target]);
        target_ids.push(EOS);
        out.push(TrainingExample {
            dialogue_index,
            target_turn: target,
            seeker_turn: seeker,
            context_ids,
            situation_ids: situation_ids.clone(),
            intention_text: String::new(),
            last_seeker_span,
            target_ids,
            label_id: dialogue.label_id,
        });
    }
    Ok(out)
}

/// [`make_examples`] over a whole corpus, in dialogue order.
pub fn make_examples_all(
    dialogues: &[Dialogue],
    vocab: &Vocab,
    max_len: usize,
) -> Result<Vec<TrainingExample>> {
    let mut all = Vec::new();
    for (i, d) in dialogues.iter().enumerate() {
        all.extend(make_examples(d, i, vocab, max_len)?);
    }
    Ok(all)
}

fn build_context(
    utterances: &[Vec<usize>],
    seeker: usize,
    max_len: usize,
) -> (Vec<usize>, Range<usize>) {
    let mut body = Vec::new();
    let mut seeker_start = 0;
    for (i, u) in utterances.iter().enumerate() {
        if i == seeker {
            seeker_start = body.len();
        }
        body.extend_from_slice(u);
        body.push(SEP);
    }
    let budget = max_len - 1;
    let cut = body.len().saturating_sub(budget);

    let mut context = Vec::with_capacity(max_len);
    context.push(CLS);
    if cut <= seeker_start {
        context.extend_from_slice(&body[cut..]);
        let start = seeker_start - cut + 1;
        return (context, start..start + utterances[seeker].len());
    }

    let own = &utterances[seeker];
    let keep = own.len().min(max_len - 3);
    context.extend_from_slice(&own[own.len() - keep..]);
    context.push(SEP);
    (context, 1..1 + keep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab, Turn};

    fn dialogue(turns: &[(Speaker, &str)]) -> Dialogue {
        Dialogue {
            situation: "money trouble".into(),
            problem_type: "job crisis".into(),
            label_id: 1,
            turns: turns
                .iter()
                .map(|(s, t)| Turn {
                    speaker: *s,
                    text: t.to_string(),
                })
                .collect(),
        }
    }

    use Speaker::{Seeker as Sk, Supporter as Sp};

    #[test]
    fn two_turn_dialogue_gives_one_example() {
        let d = dialogue(&[(Sk, "i lost my job"), (Sp, "that sounds hard")]);
        let v = build_vocab(std::slice::from_ref(&d), 1).unwrap();
        let ex = make_examples(&d, 0, &v, 16).unwrap();
        assert_eq!(ex.len(), 1);
        assert_eq!(
            ex[0].target_ids,
            [BOS, v.id("that"), v.id("sounds"), v.id("hard"), EOS]
        );
        assert_eq!(v.decode(&ex[0].context_ids), "[CLS] i lost my job [SEP]");
        assert_eq!(ex[0].last_seeker_span, 1..5);
        assert!(ex[0].intention_text.is_empty());
    }

    #[test]
    fn leading_supporter_turn_does_not_qualify() {
        let d = dialogue(&[(Sp, "hello"), (Sk, "hi"), (Sp, "how are you")]);
        let v = build_vocab(std::slice::from_ref(&d), 1).unwrap();
        let ex = make_examples(&d, 0, &v, 16).unwrap();
        assert_eq!(ex.len(), 1);
        assert_eq!(ex[0].target_turn, 2);
        assert_eq!(ex[0].seeker_turn, 1);
    }

    #[test]
    fn no_qualifying_turn_is_empty_not_error() {
        let d = dialogue(&[(Sk, "hi"), (Sk, "anyone?")]);
        let v = build_vocab(std::slice::from_ref(&d), 1).unwrap();
        assert!(make_examples(&d, 0, &v, 16).unwrap().is_empty());
    }

    #[test]
    fn short_max_len_is_rejected() {
        let d = dialogue(&[(Sk, "hi"), (Sp, "hello")]);
        let v = build_vocab(std::slice::from_ref(&d), 1).unwrap();
        assert!(make_examples(&d, 0, &v, 7).is_err());
    }

    #[test]
    fn oversized_seeker_utterance_is_front_truncated() {
        let d = dialogue(&[
            (Sp, "hello there"),
            (Sk, "one two three four five six seven eight nine ten"),
            (Sp, "ok"),
        ]);
        let v = build_vocab(std::slice::from_ref(&d), 1).unwrap();
        let ex = make_examples(&d, 0, &v, 8).unwrap();
        assert_eq!(ex[0].context_ids.len(), 7);
        assert_eq!(
            v.decode(&ex[0].context_ids),
            "[CLS] six seven eight nine ten [SEP]"
        );
        assert_eq!(ex[0].last_seeker_span, 1..6);
    }

    #[test]
    fn trailing_supporter_turns_stay_when_they_fit() {
        let d = dialogue(&[(Sk, "a b"), (Sp, "c"), (Sp, "d")]);
        let v = build_vocab(std::slice::from_ref(&d), 1).unwrap();
        let ex = make_examples(&d, 0, &v, 16).unwrap();
        // first supporter turn and second both qualify
        assert_eq!(ex.len(), 2);
        assert_eq!(v.decode(&ex[1].context_ids), "[CLS] a b [SEP] c [SEP]");
        assert_eq!(ex[1].last_seeker_span, 1..3);
    }

    #[test]
    fn older_turns_are_cut_mid_utterance() {
        let d = dialogue(&[(Sk, "a b c d e"), (Sp, "f g"), (Sk, "h i"), (Sp, "j")]);
        let v = build_vocab(std::slice::from_ref(&d), 1).unwrap();
        let ex = make_examples(&d, 0, &v, 9).unwrap();
        assert_eq!(
            v.decode(&ex[1].context_ids),
            "[CLS] e [SEP] f g [SEP] h i [SEP]"
        );
        assert_eq!(ex[1].last_seeker_span, 6..8);
    }

    #[test]
    fn seeker_utterance_is_never_split_by_later_turns() {
        let d = dialogue(&[(Sk, "a b c d"), (Sp, "e f g h"), (Sp, "x")]);
        let v = build_vocab(std::slice::from_ref(&d), 1).unwrap();
        let ex = make_examples(&d, 0, &v, 8).unwrap();
        assert_eq!(v.decode(&ex[1].context_ids), "[CLS] a b c d [SEP]");
        assert_eq!(ex[1].last_seeker_span, 1..5);
    }
}
