//! Transformer building blocks shared by the encoders and the decoder.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::Result;
use crate::numerics::{ParamId, ParamStore, Tape, Tensor, Var};

const LN_EPS: f64 = 1e-5;

/// Seeded parameter initializer; the same seed and call order reproduce
/// bit-identical weights.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn normal(&mut self, rows: usize, cols: usize, std: f64) -> Tensor {
        let dist = Normal::new(0.0, std).expect("std is positive");
        let data = (0..rows * cols)
            .map(|_| dist.sample(&mut self.rng))
            .collect();
        Tensor::new(rows, cols, data).expect("sizes agree")
    }

    /// Glorot-uniform for a `fan_in × fan_out` matrix.
    pub fn xavier(&mut self, rows: usize, cols: usize) -> Tensor {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("bound is finite");
        let data = (0..rows * cols)
            .map(|_| dist.sample(&mut self.rng))
            .collect();
        Tensor::new(rows, cols, data).expect("sizes agree")
    }
}

/// `x · W + b` with `W` stored `in × out`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        inputs: usize,
        outputs: usize,
        bias: bool,
    ) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), init.xavier(inputs, outputs), true)?;
        let bias = if bias {
            Some(store.add(format!("{name}.bias"), Tensor::zeros(1, outputs), false)?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let y = tape.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = tape.param(store, b);
                tape.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Result<Self> {
        Ok(Self {
            gain: store.add(format!("{name}.gain"), Tensor::filled(1, width, 1.0), false)?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(1, width), false)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gain);
        let b = tape.param(store, self.bias);
        tape.layer_norm(x, g, b, LN_EPS)
    }
}

/// Multi-head scaled dot-product attention. Keys carry no bias: a key bias
/// only shifts every score of a query row by the same amount.
#[derive(Debug, Clone)]
pub struct Attention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

pub struct AttentionOutput {
    pub output: Var,
    /// Per-head `queries × keys` attention weights.
    pub weights: Vec<Var>,
}

impl Attention {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        width: usize,
        heads: usize,
    ) -> Result<Self> {
        assert!(
            heads > 0 && width.is_multiple_of(heads),
            "width must divide into heads"
        );
        Ok(Self {
            query: Linear::new(store, init, &format!("{name}.query"), width, width, true)?,
            key: Linear::new(store, init, &format!("{name}.key"), width, width, false)?,
            value: Linear::new(store, init, &format!("{name}.value"), width, width, true)?,
            output: Linear::new(store, init, &format!("{name}.output"), width, width, true)?,
            heads,
        })
    }

    /// `mask` is `queries × keys`, row-major; `true` lets a query see a key.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        queries: Var,
        keys: Var,
        mask: &[bool],
    ) -> Result<AttentionOutput> {
        let q = self.query.forward(tape, store, queries)?;
        let k = self.key.forward(tape, store, keys)?;
        let v = self.value.forward(tape, store, keys)?;
        let width = tape.shape(q)[1];
        let head_dim = width / self.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut outputs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (lo, hi) = (h * head_dim, (h + 1) * head_dim);
            let qh = tape.slice_cols(q, lo, hi)?;
            let kh = tape.slice_cols(k, lo, hi)?;
            let vh = tape.slice_cols(v, lo, hi)?;
            let scores = tape.matmul_nt(qh, kh)?;
            let scores = tape.scale(scores, scale);
            let p = tape.softmax_rows(scores, Some(mask), false)?;
            outputs.push(tape.matmul(p, vh)?);
            weights.push(p);
        }
        let joined = tape.concat_cols(&outputs)?;
        Ok(AttentionOutput {
            output: self.output.forward(tape, store, joined)?,
            weights,
        })
    }
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        width: usize,
        hidden: usize,
    ) -> Result<Self> {
        Ok(Self {
            up: Linear::new(store, init, &format!("{name}.up"), width, hidden, true)?,
            down: Linear::new(store, init, &format!("{name}.down"), hidden, width, true)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.up.forward(tape, store, x)?;
        let h = tape.gelu(h);
        self.down.forward(tape, store, h)
    }
}

/// Sinusoidal position table, `len × width`.
pub fn sinusoidal_positions(len: usize, width: usize) -> Tensor {
    let mut t = Tensor::zeros(len, width);
    for pos in 0..len {
        for i in 0..width {
            let exponent = (2 * (i / 2)) as f64 / width as f64;
            let angle = pos as f64 / 10000f64.powf(exponent);
            t.set(pos, i, if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    t
}

/// Key-padding mask broadcast over `queries` rows, optionally causal.
pub fn attention_mask(queries: usize, key_live: &[bool], causal: bool) -> Vec<bool> {
    let keys = key_live.len();
    let mut mask = Vec::with_capacity(queries * keys);
    for i in 0..queries {
        for (j, &live) in key_live.iter().enumerate() {
            mask.push(live && (!causal || j <= i));
        }
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_reproducible() {
        let a = Init::new(3).normal(4, 4, 0.1);
        let b = Init::new(3).normal(4, 4, 0.1);
        assert_eq!(a, b);
        assert_ne!(a, Init::new(4).normal(4, 4, 0.1));
    }

    #[test]
    fn positions_start_with_sin_cos_of_zero() {
        let p = sinusoidal_positions(3, 4);
        assert_eq!(p.row(0), &[0.0, 1.0, 0.0, 1.0]);
        assert!((p.get(1, 0) - 1f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn causal_mask_is_lower_triangular() {
        let m = attention_mask(3, &[true, true, true], true);
        assert_eq!(m, [true, false, false, true, true, false, true, true, true]);
        let m = attention_mask(2, &[true, false], false);
        assert_eq!(m, [true, false, true, false]);
    }
}
