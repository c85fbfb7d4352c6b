//! The assembled network: three encoders, the hierarchical graph (or its
//! linear stand-in), the decoder and the problem-type head.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{TrainingExample, Vocab, PAD, UNK};
use crate::decoder::{generate, ClassHead, DecoderStack};
use crate::encoders::{encode_context, encode_pooled, EncoderStack, SourceBundle};
use crate::error::{Error, Result};
use crate::nn::Init;
use crate::numerics::{ParamId, ParamStore, Tape, Var};
use crate::reasoner::{
    initial_nodes, reason, Activation, Adjacency, Fusion, GraphLayerParams, GraphSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ablation {
    #[default]
    None,
    /// Drop the global node.
    Global,
    /// Drop the local node.
    Local,
    /// Replace the graph with per-token linear fusion.
    Reasoner,
    /// Zero weight on the classification loss.
    L2,
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ablation::None => "none",
            Ablation::Global => "global",
            Ablation::Local => "local",
            Ablation::Reasoner => "reasoner",
            Ablation::L2 => "l2",
        })
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Ablation::None),
            "global" => Ok(Ablation::Global),
            "local" => Ok(Ablation::Local),
            "reasoner" => Ok(Ablation::Reasoner),
            "l2" => Ok(Ablation::L2),
            other => Err(Error::Validation(format!(
                "unknown ablation `{other}` (expected none, global, local, reasoner or l2)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub labels: usize,
    pub width: usize,
    pub heads: usize,
    pub ffn_width: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub graph_layers: usize,
    /// Context length `T`.
    pub max_len: usize,
    /// Cap on intention tokens.
    pub intention_len: usize,
    pub window: Option<usize>,
    pub activation: Activation,
    /// One encoder stack for context, situation and intention.
    pub tie_encoders: bool,
    pub ablation: Ablation,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: &str| {
            Err(Error::Config {
                key: key.to_string(),
                message: message.to_string(),
            })
        };
        if self.width == 0 {
            return bad("d", "must be positive");
        }
        if self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return bad("heads", "must be positive and divide d");
        }
        if self.graph_layers == 0 && self.ablation != Ablation::Reasoner {
            return bad("K", "the graph needs at least one layer");
        }
        if self.max_len < crate::corpus::MIN_CONTEXT_LEN {
            return bad("max_len", "too short for a context");
        }
        if self.intention_len == 0 {
            return bad("intention_len", "must be positive");
        }
        if self.labels == 0 || self.vocab_size <= crate::corpus::NUM_RESERVED {
            return bad("vocab", "label set and vocabulary must be non-empty");
        }
        Ok(())
    }

    pub fn has_global(&self) -> bool {
        !matches!(self.ablation, Ablation::Global)
    }

    pub fn has_local(&self) -> bool {
        !matches!(self.ablation, Ablation::Local)
    }

    pub fn has_graph(&self) -> bool {
        !matches!(self.ablation, Ablation::Reasoner)
    }
}

/// Model inputs for one example, all ids in vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prepared {
    pub context_ids: Vec<usize>,
    /// Token numbers (1-based) of the last seeker utterance.
    pub span: Range<usize>,
    pub situation_ids: Vec<usize>,
    pub intention_ids: Vec<usize>,
    pub target_ids: Vec<usize>,
    pub label: usize,
}

impl Prepared {
    pub fn valid_len(&self) -> usize {
        self.context_ids.len()
    }
}

/// What the decoder and the class head read.
pub struct GraphView {
    /// Rows the decoder cross-attends to.
    pub memory: Var,
    pub memory_live: Vec<bool>,
    pub class_input: Var,
    pub adjacency: Option<Adjacency>,
    pub initial: Option<Var>,
    /// Per-layer graph attention.
    pub attention: Vec<Var>,
}

pub struct ForwardOutput {
    pub graph: GraphView,
    /// `(target_len − 1) × vocab`, predicting `target_ids[1..]`.
    pub logits: Var,
    pub class_logits: Var,
    pub cross_attention: Vec<Var>,
}

/// Architecture description holding parameter handles; the values live in
/// a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Network {
    pub config: ModelConfig,
    pub embedding: ParamId,
    pub context_encoder: EncoderStack,
    pub global_encoder: Option<EncoderStack>,
    pub local_encoder: Option<EncoderStack>,
    pub graph: Vec<GraphLayerParams>,
    pub fusion: Option<Fusion>,
    pub decoder: DecoderStack,
    pub class_head: ClassHead,
}

impl Network {
    /// Fresh parameters drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<(Self, ParamStore)> {
        config.validate()?;
        let c = &config;
        let mut store = ParamStore::new();
        let mut init = Init::new(seed);
        let embedding = store.add("embedding", init.normal(c.vocab_size, c.width, 0.1), true)?;
        let encoder = |name: &str, store: &mut ParamStore, init: &mut Init| {
            EncoderStack::new(
                store,
                init,
                name,
                c.encoder_layers,
                c.width,
                c.heads,
                c.ffn_width,
                true,
            )
        };
        let context_encoder = encoder("enc_ctx", &mut store, &mut init)?;
        let global_encoder = match (c.has_global(), c.tie_encoders) {
            (false, _) => None,
            (true, true) => Some(context_encoder.clone()),
            (true, false) => Some(encoder("enc_glo", &mut store, &mut init)?),
        };
        let local_encoder = match (c.has_local(), c.tie_encoders) {
            (false, _) => None,
            (true, true) => Some(context_encoder.clone()),
            (true, false) => Some(encoder("enc_loc", &mut store, &mut init)?),
        };
        let (graph, fusion) = if c.has_graph() {
            let layers = (0..c.graph_layers)
                .map(|k| {
                    GraphLayerParams::new(
                        &mut store,
                        &mut init,
                        &format!("gat{k}"),
                        c.width,
                        c.has_global(),
                    )
                })
                .collect::<Result<_>>()?;
            (layers, None)
        } else {
            (
                Vec::new(),
                Some(Fusion::new(&mut store, &mut init, "fusion", c.width)?),
            )
        };
        let decoder = DecoderStack::new(
            &mut store,
            &mut init,
            "dec",
            embedding,
            c.decoder_layers,
            c.width,
            c.heads,
            c.ffn_width,
        )?;
        let class_head = ClassHead::new(&mut store, &mut init, "cls", c.width, c.labels)?;
        let net = Self {
            config,
            embedding,
            context_encoder,
            global_encoder,
            local_encoder,
            graph,
            fusion,
            decoder,
            class_head,
        };
        Ok((net, store))
    }

    /// Turns a carved example (with its intention text filled in) into ids.
    pub fn prepare(&self, example: &TrainingExample, vocab: &Vocab) -> Result<Prepared> {
        let c = &self.config;
        if vocab.len() != c.vocab_size {
            return Err(Error::Validation(format!(
                "vocabulary has {} entries, model expects {}",
                vocab.len(),
                c.vocab_size
            )));
        }
        if example.context_ids.len() > c.max_len {
            return Err(Error::Validation(format!(
                "context of {} ids exceeds max length {}",
                example.context_ids.len(),
                c.max_len
            )));
        }
        if c.has_local() && example.intention_text.trim().is_empty() {
            return Err(Error::Validation(format!(
                "dialogue {} turn {} has no intention text",
                example.dialogue_index, example.seeker_turn
            )));
        }
        let mut intention_ids = vocab.encode(&example.intention_text);
        intention_ids.truncate(c.intention_len);
        if intention_ids.is_empty() {
            intention_ids.push(UNK);
        }
        Ok(Prepared {
            context_ids: example.context_ids.clone(),
            span: example.last_seeker_span.start + 1..example.last_seeker_span.end + 1,
            situation_ids: example.situation_ids.clone(),
            intention_ids,
            target_ids: example.target_ids.clone(),
            label: example.label_id,
        })
    }

    pub fn graph_spec(&self, ex: &Prepared) -> GraphSpec {
        GraphSpec {
            max_len: self.config.max_len,
            valid_len: ex.valid_len(),
            span: ex.span.clone(),
            window: self.config.window,
            global: self.config.has_global(),
            local: self.config.has_local(),
        }
    }

    pub fn encode(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        ex: &Prepared,
    ) -> Result<SourceBundle> {
        let hidden = encode_context(
            tape,
            store,
            &self.context_encoder,
            self.embedding,
            &ex.context_ids,
            self.config.max_len,
        )?;
        let global = match &self.global_encoder {
            Some(enc) => Some(encode_pooled(
                tape,
                store,
                enc,
                self.embedding,
                &ex.situation_ids,
            )?),
            None => None,
        };
        let local = match &self.local_encoder {
            Some(enc) => Some(encode_pooled(
                tape,
                store,
                enc,
                self.embedding,
                &ex.intention_ids,
            )?),
            None => None,
        };
        Ok(SourceBundle {
            hidden,
            global,
            local,
            valid_len: ex.valid_len(),
            last_seeker_span: ex.span.clone(),
        })
    }

    pub fn reason(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        ex: &Prepared,
        src: &SourceBundle,
    ) -> Result<GraphView> {
        let t = self.config.max_len;
        if let Some(fusion) = &self.fusion {
            let (Some(g), Some(l)) = (src.global, src.local) else {
                return Err(Error::Graph(
                    "linear fusion needs both global and local vectors".into(),
                ));
            };
            let fused = fusion.forward(tape, store, src.hidden, g, l, src.valid_len)?;
            let live_rows = tape.slice_rows(fused, 0, src.valid_len)?;
            let class_input = tape.max_pool_rows(live_rows)?;
            return Ok(GraphView {
                memory: fused,
                memory_live: (0..t).map(|r| r < src.valid_len).collect(),
                class_input,
                adjacency: None,
                initial: None,
                attention: Vec::new(),
            });
        }
        let adj = Adjacency::build(&self.graph_spec(ex))?;
        let v0 = initial_nodes(tape, src.global, src.hidden, src.local, &adj)?;
        let out = reason(tape, store, v0, &adj, &self.graph, self.config.activation)?;
        let class_input = match adj.global_node() {
            Some(g) => tape.slice_rows(out.features, g, g + 1)?,
            None => {
                let first = adj.token_node(1);
                let tokens = tape.slice_rows(out.features, first, first + src.valid_len)?;
                tape.max_pool_rows(tokens)?
            }
        };
        Ok(GraphView {
            memory: out.features,
            memory_live: adj.live().to_vec(),
            class_input,
            adjacency: Some(adj),
            initial: Some(v0),
            attention: out.attention,
        })
    }

    /// Teacher-forced forward pass.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        ex: &Prepared,
    ) -> Result<ForwardOutput> {
        if ex.target_ids.len() < 2 {
            return Err(Error::EmptySequence("target"));
        }
        let src = self.encode(tape, store, ex)?;
        let graph = self.reason(tape, store, ex, &src)?;
        let prefix = &ex.target_ids[..ex.target_ids.len() - 1];
        let dec = self
            .decoder
            .hidden(tape, store, prefix, graph.memory, &graph.memory_live)?;
        let logits = self.decoder.project(tape, store, dec.hidden)?;
        let class_logits = self.class_head.logits(tape, store, graph.class_input)?;
        Ok(ForwardOutput {
            graph,
            logits,
            class_logits,
            cross_attention: dec.cross_attention,
        })
    }

    /// Greedy response ids for `ex`.
    pub fn respond(
        &self,
        store: &ParamStore,
        ex: &Prepared,
        max_steps: usize,
    ) -> Result<Vec<usize>> {
        let mut tape = Tape::new();
        let src = self.encode(&mut tape, store, ex)?;
        let graph = self.reason(&mut tape, store, ex, &src)?;
        generate(
            &mut tape,
            store,
            &self.decoder,
            graph.memory,
            &graph.memory_live,
            max_steps,
        )
    }

    /// Target positions that count towards the generation loss.
    pub fn target_positions(ex: &Prepared) -> impl Iterator<Item = (usize, usize)> + '_ {
        ex.target_ids[1..]
            .iter()
            .copied()
            .enumerate()
            .filter(|&(_, id)| id != PAD)
    }
}
