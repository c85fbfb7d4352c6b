//! Hierarchical graph over global cause, context tokens and local
//! intention, updated by single-head graph attention.

mod graph;

use serde::{Deserialize, Serialize};

pub use graph::{build_adjacency, Adjacency, GraphSpec, NodeRole};

use crate::error::{Error, Result};
use crate::nn::{Init, Linear};
use crate::numerics::{ParamId, ParamStore, Tape, Tensor, Var};

pub const LEAKY_SLOPE: f64 = 0.2;

/// Output nonlinearity of a graph layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Elu,
    Relu,
}

/// Per-layer weights. `w_b`/`a_b` update the global node, `w_d`/`a_d` the
/// token and local nodes. Attention vectors are stored `2d × 1`.
#[derive(Debug, Clone)]
pub struct GraphLayerParams {
    pub w_b: Option<ParamId>,
    pub a_b: Option<ParamId>,
    pub w_d: ParamId,
    pub a_d: ParamId,
}

impl GraphLayerParams {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        width: usize,
        global: bool,
    ) -> Result<Self> {
        let (w_b, a_b) = if global {
            (
                Some(store.add(format!("{name}.w_b"), init.xavier(width, width), true)?),
                Some(store.add(format!("{name}.a_b"), init.xavier(2 * width, 1), true)?),
            )
        } else {
            (None, None)
        };
        Ok(Self {
            w_b,
            a_b,
            w_d: store.add(format!("{name}.w_d"), init.xavier(width, width), true)?,
            a_d: store.add(format!("{name}.a_d"), init.xavier(2 * width, 1), true)?,
        })
    }
}

pub struct LayerOutput {
    pub features: Var,
    /// `n × n` attention weights, zero off the neighborhood.
    pub attention: Var,
}

/// Projects every node with `w` (as `W·v`) and scores all pairs with
/// `LeakyReLU(aᵀ[W v_i ‖ W v_j])`.
fn project_and_score(
    tape: &mut Tape,
    store: &ParamStore,
    v: Var,
    w: ParamId,
    a: ParamId,
) -> Result<(Var, Var)> {
    let width = tape.shape(v)[1];
    let w = tape.param(store, w);
    let a = tape.param(store, a);
    let z = tape.matmul_nt(v, w)?;
    let a_src = tape.slice_rows(a, 0, width)?;
    let a_dst = tape.slice_rows(a, width, 2 * width)?;
    let s_src = tape.matmul(z, a_src)?;
    let s_dst = tape.matmul(z, a_dst)?;
    let scores = tape.outer_add(s_src, s_dst)?;
    Ok((z, tape.leaky_relu(scores, LEAKY_SLOPE)?))
}

/// One graph-attention update over `adj`.
pub fn gat_layer(
    tape: &mut Tape,
    store: &ParamStore,
    v: Var,
    adj: &Adjacency,
    params: &GraphLayerParams,
    activation: Activation,
) -> Result<LayerOutput> {
    let n = adj.len();
    if tape.shape(v)[0] != n {
        return Err(Error::Graph(format!(
            "{} node features for a {n}-node graph",
            tape.shape(v)[0]
        )));
    }
    for i in 0..n {
        if adj.is_live(i) && adj.degree(i) == 0 {
            return Err(Error::Graph(format!(
                "live node {i} has an empty neighborhood"
            )));
        }
    }

    let (z_d, scores_d) = project_and_score(tape, store, v, params.w_d, params.a_d)?;
    let (scores, messages) = match (adj.global_node(), params.w_b, params.a_b) {
        (Some(_), Some(w_b), Some(a_b)) => {
            let (z_b, scores_b) = project_and_score(tape, store, v, w_b, a_b)?;
            let top = tape.slice_rows(scores_b, 0, 1)?;
            let rest = tape.slice_rows(scores_d, 1, n)?;
            (tape.concat_rows(&[top, rest])?, Some(z_b))
        }
        (Some(_), _, _) => {
            return Err(Error::Graph(
                "global node present but layer has no W_b/a_b".into(),
            ))
        }
        (None, _, _) => (scores_d, None),
    };
    let attention = tape.softmax_rows(scores, Some(adj.mask()), true)?;
    let aggregated = match messages {
        Some(z_b) => {
            let p_top = tape.slice_rows(attention, 0, 1)?;
            let p_rest = tape.slice_rows(attention, 1, n)?;
            let top = tape.matmul(p_top, z_b)?;
            let rest = tape.matmul(p_rest, z_d)?;
            tape.concat_rows(&[top, rest])?
        }
        None => tape.matmul(attention, z_d)?,
    };
    let features = match activation {
        Activation::Elu => tape.elu(aggregated),
        Activation::Relu => tape.relu(aggregated),
    };
    Ok(LayerOutput {
        features,
        attention,
    })
}

pub struct ReasonOutput {
    pub features: Var,
    /// Attention matrix of every layer, first to last.
    pub attention: Vec<Var>,
}

/// Applies `layers` in sequence.
pub fn reason(
    tape: &mut Tape,
    store: &ParamStore,
    v0: Var,
    adj: &Adjacency,
    layers: &[GraphLayerParams],
    activation: Activation,
) -> Result<ReasonOutput> {
    if layers.is_empty() {
        return Err(Error::Graph(
            "graph reasoner needs at least one layer".into(),
        ));
    }
    let mut v = v0;
    let mut attention = Vec::with_capacity(layers.len());
    for p in layers {
        let out = gat_layer(tape, store, v, adj, p, activation)?;
        v = out.features;
        attention.push(out.attention);
    }
    Ok(ReasonOutput {
        features: v,
        attention,
    })
}

/// Stacks `[g; h_1..h_T; l]` (omitting absent ends) and zeroes pad rows.
pub fn initial_nodes(
    tape: &mut Tape,
    global: Option<Var>,
    hidden: Var,
    local: Option<Var>,
    adj: &Adjacency,
) -> Result<Var> {
    let parts: Vec<Var> = global.into_iter().chain([hidden]).chain(local).collect();
    let v = tape.concat_rows(&parts)?;
    let [n, width] = tape.shape(v);
    if n != adj.len() {
        return Err(Error::Graph(format!(
            "{n} stacked nodes for a {}-node graph",
            adj.len()
        )));
    }
    zero_dead_rows(tape, v, adj.live(), width)
}

fn zero_dead_rows(tape: &mut Tape, v: Var, live: &[bool], width: usize) -> Result<Var> {
    if live.iter().all(|&l| l) {
        return Ok(v);
    }
    let mut keep = Tensor::zeros(live.len(), width);
    for (r, &l) in live.iter().enumerate() {
        if l {
            keep.row_mut(r).fill(1.0);
        }
    }
    let keep = tape.input(keep);
    tape.mul(v, keep)
}

/// Graph-free stand-in: each token state is fused with the global and
/// local vectors, `W_f [h_t ‖ g ‖ l] + b_f`.
#[derive(Debug, Clone)]
pub struct Fusion {
    pub linear: Linear,
}

impl Fusion {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, width: usize) -> Result<Self> {
        Ok(Self {
            linear: Linear::new(store, init, name, 3 * width, width, true)?,
        })
    }

    /// `T × d` fused rows; rows at or beyond `valid_len` are zero.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        hidden: Var,
        global: Var,
        local: Var,
        valid_len: usize,
    ) -> Result<Var> {
        let [rows, width] = tape.shape(hidden);
        let ones = tape.input(Tensor::filled(rows, 1, 1.0));
        let g = tape.matmul(ones, global)?;
        let l = tape.matmul(ones, local)?;
        let joined = tape.concat_cols(&[hidden, g, l])?;
        let fused = self.linear.forward(tape, store, joined)?;
        let live: Vec<bool> = (0..rows).map(|r| r < valid_len).collect();
        zero_dead_rows(tape, fused, &live, width)
    }
}
