#![allow(dead_code)]

pub mod dd;
pub mod gat;
pub mod reference;

use glhg_core::numerics::{ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-scale..scale))
        .collect();
    Tensor::new(rows, cols, data).unwrap()
}

/// Overwrites every parameter with uniform noise in `±scale`.
pub fn randomize(store: &mut ParamStore, rng: &mut impl Rng, scale: f64) {
    for p in store.iter_mut() {
        for x in p.value.data_mut() {
            *x = rng.random_range(-scale..scale);
        }
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
