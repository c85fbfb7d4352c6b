//! Context, global-cause and local-intention encoders.

mod intention;

use std::ops::Range;

pub use intention::{
    provide_intention, ConstantProvider, IntentionProvider, LookupProvider, ProviderKind,
    TemplateProvider, TurnKey, FALLBACK_INTENTION,
};

use crate::corpus::PAD;
use crate::error::{Error, Result};
use crate::nn::{attention_mask, sinusoidal_positions, Attention, FeedForward, Init, LayerNorm};
use crate::numerics::{ParamId, ParamStore, Tape, Var};

/// Self-attention and feed-forward, each followed by residual + layer norm.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub attention: Attention,
    pub attention_norm: LayerNorm,
    pub feed_forward: FeedForward,
    pub output_norm: LayerNorm,
}

impl EncoderLayer {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        width: usize,
        heads: usize,
        ffn: usize,
    ) -> Result<Self> {
        Ok(Self {
            attention: Attention::new(store, init, &format!("{name}.attn"), width, heads)?,
            attention_norm: LayerNorm::new(store, &format!("{name}.attn_norm"), width)?,
            feed_forward: FeedForward::new(store, init, &format!("{name}.ffn"), width, ffn)?,
            output_norm: LayerNorm::new(store, &format!("{name}.out_norm"), width)?,
        })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        mask: &[bool],
    ) -> Result<Var> {
        let a = self.attention.forward(tape, store, x, x, mask)?.output;
        let x = tape.add(x, a)?;
        let x = self.attention_norm.forward(tape, store, x)?;
        let f = self.feed_forward.forward(tape, store, x)?;
        let x = tape.add(x, f)?;
        self.output_norm.forward(tape, store, x)
    }
}

/// A stack of encoder layers reading from the shared token embedding.
#[derive(Debug, Clone)]
pub struct EncoderStack {
    pub layers: Vec<EncoderLayer>,
    pub positions: bool,
}

impl EncoderStack {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        layers: usize,
        width: usize,
        heads: usize,
        ffn: usize,
        positions: bool,
    ) -> Result<Self> {
        let layers = (0..layers)
            .map(|i| EncoderLayer::new(store, init, &format!("{name}.layer{i}"), width, heads, ffn))
            .collect::<Result<_>>()?;
        Ok(Self { layers, positions })
    }

    /// Encodes `ids`; positions at or beyond `valid_len` are padding and are
    /// masked out as attention keys. Returns `ids.len() × d`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        embedding: ParamId,
        ids: &[usize],
        valid_len: usize,
    ) -> Result<Var> {
        if ids.is_empty() {
            return Err(Error::EmptySequence("encoder"));
        }
        let table = tape.param(store, embedding);
        let mut x = tape.gather(table, ids)?;
        if self.positions {
            let width = tape.shape(x)[1];
            let pe = tape.input(sinusoidal_positions(ids.len(), width));
            x = tape.add(x, pe)?;
        }
        let live: Vec<bool> = (0..ids.len()).map(|i| i < valid_len).collect();
        let mask = attention_mask(ids.len(), &live, false);
        for layer in &self.layers {
            x = layer.forward(tape, store, x, &mask)?;
        }
        Ok(x)
    }
}

/// The three encoded sources feeding the graph reasoner.
#[derive(Debug, Clone)]
pub struct SourceBundle {
    /// Context states, `T × d`; rows at or beyond `valid_len` are padding.
    pub hidden: Var,
    /// Global-cause vector `1 × d` (absent under the global ablation).
    pub global: Option<Var>,
    /// Local-intention vector `1 × d` (absent under the local ablation).
    pub local: Option<Var>,
    pub valid_len: usize,
    pub last_seeker_span: Range<usize>,
}

/// Pads `context_ids` to `max_len` with `[PAD]` and encodes it.
pub fn encode_context(
    tape: &mut Tape,
    store: &ParamStore,
    stack: &EncoderStack,
    embedding: ParamId,
    context_ids: &[usize],
    max_len: usize,
) -> Result<Var> {
    if context_ids.len() > max_len {
        return Err(Error::Validation(format!(
            "context of {} ids exceeds max length {max_len}",
            context_ids.len()
        )));
    }
    let mut padded = context_ids.to_vec();
    padded.resize(max_len, PAD);
    stack.forward(tape, store, embedding, &padded, context_ids.len())
}

/// Max-pooled encoding of an unpadded sequence, `1 × d`.
pub fn encode_pooled(
    tape: &mut Tape,
    store: &ParamStore,
    stack: &EncoderStack,
    embedding: ParamId,
    ids: &[usize],
) -> Result<Var> {
    let states = stack.forward(tape, store, embedding, ids, ids.len())?;
    tape.max_pool_rows(states)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(positions: bool) -> (ParamStore, EncoderStack, ParamId) {
        let mut store = ParamStore::new();
        let mut init = Init::new(11);
        let emb = store
            .add("embedding", init.normal(20, 8, 0.5), true)
            .unwrap();
        let stack =
            EncoderStack::new(&mut store, &mut init, "enc", 2, 8, 2, 32, positions).unwrap();
        (store, stack, emb)
    }

    #[test]
    fn output_length_matches_input() {
        let (store, stack, emb) = setup(true);
        let mut tape = Tape::new();
        let h = encode_context(&mut tape, &store, &stack, emb, &[2, 7, 8, 3], 10).unwrap();
        assert_eq!(tape.shape(h), [10, 8]);
    }

    #[test]
    fn pad_region_ids_do_not_leak() {
        let (store, stack, emb) = setup(true);
        let base = [2, 7, 8, 3, 0, 0];
        let mut other = base;
        other[4] = 9;
        other[5] = 12;
        let run = |ids: &[usize]| {
            let mut tape = Tape::new();
            let h = stack.forward(&mut tape, &store, emb, ids, 4).unwrap();
            tape.value(h).clone()
        };
        let (a, b) = (run(&base), run(&other));
        for r in 0..4 {
            assert_eq!(a.row(r), b.row(r));
        }
    }

    #[test]
    fn single_token_pooling_is_identity() {
        let (store, stack, emb) = setup(true);
        let mut tape = Tape::new();
        let states = stack.forward(&mut tape, &store, emb, &[5], 1).unwrap();
        let pooled = tape.max_pool_rows(states).unwrap();
        assert_eq!(tape.value(pooled), tape.value(states));
    }

    #[test]
    fn duplicated_sequence_pools_identically_without_positions() {
        let (store, stack, emb) = setup(false);
        let s = [4, 9, 13];
        let doubled: Vec<usize> = s.iter().chain(s.iter()).copied().collect();
        let mut tape = Tape::new();
        let g1 = encode_pooled(&mut tape, &store, &stack, emb, &s).unwrap();
        let g2 = encode_pooled(&mut tape, &store, &stack, emb, &doubled).unwrap();
        for (a, b) in tape.value(g1).data().iter().zip(tape.value(g2).data()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn empty_and_out_of_vocab_inputs_fail() {
        let (store, stack, emb) = setup(true);
        let mut tape = Tape::new();
        assert!(matches!(
            encode_pooled(&mut tape, &store, &stack, emb, &[]),
            Err(Error::EmptySequence(_))
        ));
        assert!(matches!(
            encode_pooled(&mut tape, &store, &stack, emb, &[25]),
            Err(Error::TokenId { id: 25, size: 20 })
        ));
    }
}
