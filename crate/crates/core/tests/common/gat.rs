//! Glue between the double-double reference and the library's graph layer.

use glhg_core::nn::Init;
use glhg_core::numerics::{ParamStore, Tensor};
use glhg_core::reasoner::{build_adjacency, Adjacency, GraphLayerParams};
use rand::Rng;

use super::dd::Dd;
use super::reference::DdLayer;

/// Library parameters holding exactly the reference weights.
pub fn layer_store(d: usize, layers: &[DdLayer]) -> (ParamStore, Vec<GraphLayerParams>) {
    let mut store = ParamStore::new();
    let mut init = Init::new(0);
    let params: Vec<GraphLayerParams> = layers
        .iter()
        .enumerate()
        .map(|(k, l)| {
            let p =
                GraphLayerParams::new(&mut store, &mut init, &format!("gat{k}"), d, true).unwrap();
            let w_b = p.w_b.unwrap();
            let a_b = p.a_b.unwrap();
            store.get_mut(w_b).value = Tensor::from_rows(&l.w_b).unwrap();
            store.get_mut(a_b).value = Tensor::column_vector(l.a_b.clone());
            store.get_mut(p.w_d).value = Tensor::from_rows(&l.w_d).unwrap();
            store.get_mut(p.a_d).value = Tensor::column_vector(l.a_d.clone());
            p
        })
        .collect();
    (store, params)
}

pub fn dense_edges(adj: &Adjacency) -> Vec<Vec<bool>> {
    (0..adj.len())
        .map(|i| (0..adj.len()).map(|j| adj.edge(i, j)).collect())
        .collect()
}

pub fn to_dd(v: &[Vec<f64>]) -> Vec<Vec<Dd>> {
    v.iter()
        .map(|r| r.iter().map(|&x| Dd::from(x)).collect())
        .collect()
}

pub fn worst(lib: &Tensor, oracle: &[Vec<Dd>]) -> f64 {
    let flat: Vec<f64> = oracle.iter().flatten().map(|x| x.to_f64()).collect();
    super::max_abs_diff(lib.data(), &flat)
}

pub fn random_layer(rng: &mut impl Rng, d: usize) -> DdLayer {
    let mut m = || {
        (0..d)
            .map(|_| (0..d).map(|_| rng.random_range(-1.5..1.5)).collect())
            .collect()
    };
    let (w_b, w_d) = (m(), m());
    let mut v = || (0..2 * d).map(|_| rng.random_range(-1.5..1.5)).collect();
    DdLayer {
        w_b,
        a_b: v(),
        w_d,
        a_d: v(),
    }
}

pub fn random_graph(rng: &mut impl Rng, max_len: usize) -> Adjacency {
    let valid = rng.random_range(1..=max_len);
    let start = rng.random_range(1..=valid);
    let end = rng.random_range(start + 1..=valid + 1);
    let window = match rng.random_range(0..4) {
        0 => None,
        w => Some(w - 1),
    };
    build_adjacency(max_len, valid, start..end, window).unwrap()
}
