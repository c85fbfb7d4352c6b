//! Straight-line reference implementations written from the model
//! description, sharing no code with the library beyond input types.

use super::dd::Dd;

/// Edges of the `(T+2)`-node graph by direct enumeration of the three
/// connection rules plus self-loops. Node 0 is global, `1..=T` tokens,
/// `T+1` local; `span` holds 1-based token numbers.
pub fn enumerate_edges(
    max_len: usize,
    valid_len: usize,
    span: std::ops::Range<usize>,
    window: Option<usize>,
) -> Vec<Vec<bool>> {
    let n = max_len + 2;
    let local = max_len + 1;
    let is_token = |i: usize| (1..=max_len).contains(&i);
    let live = |i: usize| i == 0 || i == local || (1..=valid_len).contains(&i);
    let mut e = vec![vec![false; n]; n];
    for i in 0..n {
        for j in 0..n {
            let self_loop = i == j && live(i);
            let global = (i == 0 && j != 0 && live(j)) || (j == 0 && i != 0 && live(i));
            let local_rule = {
                let other = if i == local {
                    Some(j)
                } else if j == local {
                    Some(i)
                } else {
                    None
                };
                other.is_some_and(|o| o != local && (o == 0 || span.contains(&o)))
            };
            let contextual = i != j
                && is_token(i)
                && is_token(j)
                && live(i)
                && live(j)
                && window.is_none_or(|w| i.abs_diff(j) <= w);
            e[i][j] = self_loop || global || local_rule || contextual;
        }
    }
    e
}

pub struct DdLayer {
    /// `d × d`, row-major; a node projects as `W v`.
    pub w_b: Vec<Vec<f64>>,
    pub a_b: Vec<f64>,
    pub w_d: Vec<Vec<f64>>,
    pub a_d: Vec<f64>,
}

fn project(w: &[Vec<f64>], v: &[Dd]) -> Vec<Dd> {
    w.iter()
        .map(|row| {
            row.iter()
                .zip(v)
                .fold(Dd::ZERO, |acc, (&w, &x)| acc + Dd::from(w) * x)
        })
        .collect()
}

fn dot(a: &[f64], z: &[Dd]) -> Dd {
    a.iter()
        .zip(z)
        .fold(Dd::ZERO, |acc, (&a, &z)| acc + Dd::from(a) * z)
}

fn leaky(x: Dd) -> Dd {
    if x.is_negative() {
        x * Dd::from(0.2)
    } else {
        x
    }
}

fn elu(x: Dd) -> Dd {
    if x.is_negative() {
        x.exp() - Dd::ONE
    } else {
        x
    }
}

fn relu(x: Dd) -> Dd {
    if x.is_negative() {
        Dd::ZERO
    } else {
        x
    }
}

/// One graph-attention update in double-double. Node 0 uses `W_b`/`a_b`
/// when `global` is set; every other node uses `W_d`/`a_d`. Rows of nodes
/// without a self-loop (padding) come out zero. Returns features and the
/// dense attention matrix.
pub fn dd_gat_layer(
    v: &[Vec<Dd>],
    edges: &[Vec<bool>],
    p: &DdLayer,
    global: bool,
    use_elu: bool,
) -> (Vec<Vec<Dd>>, Vec<Vec<Dd>>) {
    let n = v.len();
    let d = v[0].len();
    let mut out = vec![vec![Dd::ZERO; d]; n];
    let mut att = vec![vec![Dd::ZERO; n]; n];
    for i in 0..n {
        if !edges[i][i] {
            continue;
        }
        let (w, a) = if global && i == 0 {
            (&p.w_b, &p.a_b)
        } else {
            (&p.w_d, &p.a_d)
        };
        let z: Vec<Vec<Dd>> = v.iter().map(|vj| project(w, vj)).collect();
        let own = dot(&a[..d], &z[i]);
        let hood: Vec<usize> = (0..n).filter(|&j| edges[i][j]).collect();
        let scores: Vec<Dd> = hood
            .iter()
            .map(|&j| leaky(own + dot(&a[d..], &z[j])))
            .collect();
        let top = scores.iter().copied().fold(scores[0], Dd::max);
        let weights: Vec<Dd> = scores.iter().map(|&s| (s - top).exp()).collect();
        let total = weights.iter().copied().fold(Dd::ZERO, |a, b| a + b);
        for (&j, &w) in hood.iter().zip(&weights) {
            let alpha = w / total;
            att[i][j] = alpha;
            for k in 0..d {
                out[i][k] = out[i][k] + alpha * z[j][k];
            }
        }
        for x in out[i].iter_mut() {
            *x = if use_elu { elu(*x) } else { relu(*x) };
        }
    }
    (out, att)
}
