//! Response decoder with token-to-node cross attention, and the
//! problem-type head read off the global node.

use crate::corpus::{BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::nn::{
    attention_mask, sinusoidal_positions, Attention, FeedForward, Init, LayerNorm, Linear,
};
use crate::numerics::{softmax, ParamId, ParamStore, Tape, Var};

pub const DEFAULT_MAX_DECODE: usize = 40;

#[derive(Debug, Clone)]
pub struct DecoderLayer {
    pub self_attention: Attention,
    pub self_norm: LayerNorm,
    pub cross_attention: Attention,
    pub cross_norm: LayerNorm,
    pub feed_forward: FeedForward,
    pub output_norm: LayerNorm,
}

impl DecoderLayer {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        width: usize,
        heads: usize,
        ffn: usize,
    ) -> Result<Self> {
        Ok(Self {
            self_attention: Attention::new(
                store,
                init,
                &format!("{name}.self_attn"),
                width,
                heads,
            )?,
            self_norm: LayerNorm::new(store, &format!("{name}.self_norm"), width)?,
            cross_attention: Attention::new(
                store,
                init,
                &format!("{name}.cross_attn"),
                width,
                heads,
            )?,
            cross_norm: LayerNorm::new(store, &format!("{name}.cross_norm"), width)?,
            feed_forward: FeedForward::new(store, init, &format!("{name}.ffn"), width, ffn)?,
            output_norm: LayerNorm::new(store, &format!("{name}.out_norm"), width)?,
        })
    }
}

/// Decoder states plus the cross-attention weights of every layer and head.
pub struct DecoderOutput {
    pub hidden: Var,
    pub cross_attention: Vec<Var>,
}

/// Decoder layers over the shared embedding; logits use the transposed
/// embedding plus `out_bias`.
#[derive(Debug, Clone)]
pub struct DecoderStack {
    pub layers: Vec<DecoderLayer>,
    pub embedding: ParamId,
    pub out_bias: ParamId,
}

impl DecoderStack {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        embedding: ParamId,
        layers: usize,
        width: usize,
        heads: usize,
        ffn: usize,
    ) -> Result<Self> {
        let vocab = store.value(embedding).rows();
        let out_bias = store.add(
            format!("{name}.out_bias"),
            crate::numerics::Tensor::zeros(1, vocab),
            false,
        )?;
        let layers = (0..layers)
            .map(|i| DecoderLayer::new(store, init, &format!("{name}.layer{i}"), width, heads, ffn))
            .collect::<Result<_>>()?;
        Ok(Self {
            layers,
            embedding,
            out_bias,
        })
    }

    /// Runs the prefix against `memory` (graph nodes, one per row);
    /// `memory_live[j]` marks the rows that may be attended.
    pub fn hidden(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        prefix: &[usize],
        memory: Var,
        memory_live: &[bool],
    ) -> Result<DecoderOutput> {
        if prefix.is_empty() {
            return Err(Error::EmptySequence("decoder prefix"));
        }
        if prefix[0] != BOS {
            return Err(Error::Validation(
                "decoder prefix must start with [BOS]".into(),
            ));
        }
        if tape.shape(memory)[0] != memory_live.len() {
            return Err(Error::Shape {
                op: "cross_attention",
                left: tape.shape(memory),
                right: [memory_live.len(), 1],
            });
        }
        let z = prefix.len();
        let table = tape.param(store, self.embedding);
        let width = tape.shape(table)[1];
        let x = tape.gather(table, prefix)?;
        let pe = tape.input(sinusoidal_positions(z, width));
        let mut x = tape.add(x, pe)?;
        let causal = attention_mask(z, &vec![true; z], true);
        let cross = attention_mask(z, memory_live, false);
        let mut cross_attention = Vec::new();
        for layer in &self.layers {
            let a = layer
                .self_attention
                .forward(tape, store, x, x, &causal)?
                .output;
            let y = tape.add(x, a)?;
            let y = layer.self_norm.forward(tape, store, y)?;
            let c = layer
                .cross_attention
                .forward(tape, store, y, memory, &cross)?;
            cross_attention.extend(c.weights);
            let y = tape.add(y, c.output)?;
            let y = layer.cross_norm.forward(tape, store, y)?;
            let f = layer.feed_forward.forward(tape, store, y)?;
            let y = tape.add(y, f)?;
            x = layer.output_norm.forward(tape, store, y)?;
        }
        Ok(DecoderOutput {
            hidden: x,
            cross_attention,
        })
    }

    /// `hidden · Eᵀ + out_bias`.
    pub fn project(&self, tape: &mut Tape, store: &ParamStore, hidden: Var) -> Result<Var> {
        let table = tape.param(store, self.embedding);
        let bias = tape.param(store, self.out_bias);
        let logits = tape.matmul_nt(hidden, table)?;
        tape.add_row(logits, bias)
    }
}

/// `prefix_len × vocab` next-token logits.
pub fn decode_logits(
    tape: &mut Tape,
    store: &ParamStore,
    decoder: &DecoderStack,
    prefix: &[usize],
    memory: Var,
    memory_live: &[bool],
) -> Result<Var> {
    let out = decoder.hidden(tape, store, prefix, memory, memory_live)?;
    decoder.project(tape, store, out.hidden)
}

/// Greedy decoding from `[BOS]`; stops at `[EOS]` or after `max_steps`
/// tokens. The result holds neither `[BOS]` nor `[EOS]`.
pub fn generate(
    tape: &mut Tape,
    store: &ParamStore,
    decoder: &DecoderStack,
    memory: Var,
    memory_live: &[bool],
    max_steps: usize,
) -> Result<Vec<usize>> {
    if max_steps == 0 {
        return Err(Error::Validation(
            "max decode steps must be at least 1".into(),
        ));
    }
    let mut prefix = vec![BOS];
    for _ in 0..max_steps {
        let out = decoder.hidden(tape, store, &prefix, memory, memory_live)?;
        let last = tape.slice_rows(out.hidden, prefix.len() - 1, prefix.len())?;
        let logits = decoder.project(tape, store, last)?;
        // [PAD] and [BOS] are never valid outputs
        let mut scores = tape.value(logits).data().to_vec();
        scores[PAD] = f64::NEG_INFINITY;
        scores[BOS] = f64::NEG_INFINITY;
        let next = argmax(&scores);
        if next == EOS {
            break;
        }
        prefix.push(next);
    }
    prefix.remove(0);
    Ok(prefix)
}

/// Index of the largest entry; the first wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Two-layer perceptron over the global node, producing label logits.
#[derive(Debug, Clone)]
pub struct ClassHead {
    pub hidden: Linear,
    pub output: Linear,
}

impl ClassHead {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        width: usize,
        labels: usize,
    ) -> Result<Self> {
        Ok(Self {
            hidden: Linear::new(store, init, &format!("{name}.hidden"), width, width, true)?,
            output: Linear::new(store, init, &format!("{name}.output"), width, labels, true)?,
        })
    }

    /// `1 × labels` logits.
    pub fn logits(&self, tape: &mut Tape, store: &ParamStore, v_global: Var) -> Result<Var> {
        let h = self.hidden.forward(tape, store, v_global)?;
        let h = tape.gelu(h);
        self.output.forward(tape, store, h)
    }
}

/// Label distribution for a global-node feature.
pub fn classify_problem(
    tape: &mut Tape,
    store: &ParamStore,
    head: &ClassHead,
    v_global: Var,
) -> Result<Vec<f64>> {
    let logits = head.logits(tape, store, v_global)?;
    softmax(tape.value(logits).data(), None)
}
