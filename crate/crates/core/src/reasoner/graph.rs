use std::ops::Range;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeRole {
    Global,
    Token,
    Local,
}

/// Everything needed to lay out one context's graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphSpec {
    /// Number of token nodes `T`, padding included.
    pub max_len: usize,
    pub valid_len: usize,
    /// Token numbers (1-based) of the last seeker utterance.
    pub span: Range<usize>,
    /// Token `i` links token `j` iff `|i − j| ≤ window`; `None` links all.
    pub window: Option<usize>,
    pub global: bool,
    pub local: bool,
}

/// Dense symmetric adjacency over global, token and local nodes.
///
/// With both special nodes present the layout is `0` global, `1..=T` tokens,
/// `T+1` local. Dropping the global node shifts tokens down by one; dropping
/// the local node removes the last index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    n: usize,
    edges: Vec<bool>,
    live: Vec<bool>,
    roles: Vec<NodeRole>,
    token_offset: usize,
}

/// Full graph with both special nodes.
pub fn build_adjacency(
    max_len: usize,
    valid_len: usize,
    span: Range<usize>,
    window: Option<usize>,
) -> Result<Adjacency> {
    Adjacency::build(&GraphSpec {
        max_len,
        valid_len,
        span,
        window,
        global: true,
        local: true,
    })
}

impl Adjacency {
    pub fn build(spec: &GraphSpec) -> Result<Self> {
        let GraphSpec {
            max_len,
            valid_len,
            ref span,
            window,
            global,
            local,
        } = *spec;
        if valid_len == 0 || valid_len > max_len {
            return Err(Error::Graph(format!(
                "valid length {valid_len} outside 1..={max_len}"
            )));
        }
        if span.is_empty() {
            return Err(Error::Graph("last seeker span is empty".into()));
        }
        if span.start < 1 || span.end > valid_len + 1 {
            return Err(Error::Graph(format!(
                "last seeker span {}..{} outside tokens 1..={valid_len}",
                span.start, span.end
            )));
        }

        let token_offset = usize::from(global);
        let n = max_len + usize::from(global) + usize::from(local);
        let mut roles = Vec::with_capacity(n);
        let mut live = Vec::with_capacity(n);
        if global {
            roles.push(NodeRole::Global);
            live.push(true);
        }
        for t in 1..=max_len {
            roles.push(NodeRole::Token);
            live.push(t <= valid_len);
        }
        if local {
            roles.push(NodeRole::Local);
            live.push(true);
        }

        let mut adj = Self {
            n,
            edges: vec![false; n * n],
            live,
            roles,
            token_offset,
        };
        for i in 0..n {
            if adj.live[i] {
                adj.link(i, i);
            }
        }
        if global {
            for j in 1..n {
                if adj.live[j] {
                    adj.link(0, j);
                }
            }
        }
        if local {
            let l = n - 1;
            for t in span.clone() {
                adj.link(l, adj.token_node(t));
            }
        }
        for a in 1..=valid_len {
            for b in a + 1..=valid_len {
                if window.is_none_or(|w| b - a <= w) {
                    adj.link(adj.token_node(a), adj.token_node(b));
                }
            }
        }
        Ok(adj)
    }

    /// Builds from an explicit edge matrix. Used by tests and tooling; no
    /// structural checks beyond shape and symmetry.
    pub fn from_parts(edges: Vec<bool>, live: Vec<bool>, roles: Vec<NodeRole>) -> Result<Self> {
        let n = live.len();
        if edges.len() != n * n || roles.len() != n {
            return Err(Error::Graph(format!(
                "{n} nodes need {} edge flags and {n} roles, got {} and {}",
                n * n,
                edges.len(),
                roles.len()
            )));
        }
        for i in 0..n {
            for j in 0..i {
                if edges[i * n + j] != edges[j * n + i] {
                    return Err(Error::Graph(format!("edge ({i}, {j}) is not symmetric")));
                }
            }
        }
        let token_offset = usize::from(roles.first() == Some(&NodeRole::Global));
        Ok(Self {
            n,
            edges,
            live,
            roles,
            token_offset,
        })
    }

    fn link(&mut self, i: usize, j: usize) {
        self.edges[i * self.n + j] = true;
        self.edges[j * self.n + i] = true;
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn edge(&self, i: usize, j: usize) -> bool {
        self.edges[i * self.n + j]
    }

    /// Row-major `n × n` edge flags, usable as a softmax mask.
    pub fn mask(&self) -> &[bool] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&j| self.edge(i, j))
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors(i).count()
    }

    pub fn is_live(&self, i: usize) -> bool {
        self.live[i]
    }

    pub fn live(&self) -> &[bool] {
        &self.live
    }

    pub fn role(&self, i: usize) -> NodeRole {
        self.roles[i]
    }

    pub fn global_node(&self) -> Option<usize> {
        (self.roles.first() == Some(&NodeRole::Global)).then_some(0)
    }

    pub fn local_node(&self) -> Option<usize> {
        (self.roles.last() == Some(&NodeRole::Local)).then_some(self.n - 1)
    }

    /// Node index of 1-based token `t`.
    pub fn token_node(&self, t: usize) -> usize {
        t - 1 + self.token_offset
    }

    /// Node indices of the token nodes, in order.
    pub fn token_nodes(&self) -> Range<usize> {
        let count = self.roles.iter().filter(|r| **r == NodeRole::Token).count();
        self.token_offset..self.token_offset + count
    }

    /// Undirected edges `[i, j]` with `i ≤ j`, self-loops included.
    pub fn edge_list(&self) -> Vec<[usize; 2]> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in i..self.n {
                if self.edge(i, j) {
                    out.push([i, j]);
                }
            }
        }
        out
    }
}
