//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Which coordinates of each parameter get perturbed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Coordinates {
    All,
    /// At most `max` coordinates per parameter, drawn without replacement.
    Sample {
        max: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub coordinates: Coordinates,
    /// Added to every analytic gradient entry before comparison. Only for
    /// negative controls.
    pub corruption: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            coordinates: Coordinates::All,
            corruption: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub coords_checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// Largest `|a − n|` over the checked coordinates.
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub eps: f64,
    /// Objective at the unperturbed parameters.
    pub objective: f64,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub coords_checked: usize,
    pub per_param: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }

    /// Rough size of the difference-quotient error caused by rounding the
    /// objective alone: `ulp(f) / (2 eps)`. Coordinates whose gradient is not
    /// well above this cannot show a small relative error.
    pub fn roundoff_floor(&self) -> f64 {
        let f = self.objective.abs();
        let ulp = f64::from_bits(f.to_bits() + 1) - f;
        ulp / (2.0 * self.eps)
    }
}

/// `|a − n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares the tape gradient of `objective` against central differences
/// `(f(p + eps) − f(p − eps)) / (2 eps)` for the selected coordinates of
/// every parameter in `store`.
pub fn grad_check<F>(
    store: &ParamStore,
    objective: F,
    options: GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<Var>,
{
    let eps = options.eps;
    if !(1e-6..=1e-4).contains(&eps) {
        return Err(Error::Validation(format!(
            "finite-difference step must lie in [1e-6, 1e-4], got {eps}"
        )));
    }
    let evaluate = |params: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = objective(params, &mut tape)?;
        let value = tape.value(loss).item()?;
        if !value.is_finite() {
            return Err(Error::NonFinite("grad_check objective".into()));
        }
        Ok(value)
    };

    let mut tape = Tape::new();
    let loss = objective(store, &mut tape)?;
    let value = tape.value(loss).item()?;
    let grads = tape.gradients(loss, store)?;

    let mut work = store.clone();
    let mut per_param = Vec::with_capacity(store.len());
    for (id, param) in store.iter() {
        let analytic = grads.dense(store, id);
        let coords: Vec<usize> = match options.coordinates {
            Coordinates::All => (0..param.value.len()).collect(),
            Coordinates::Sample { max, seed } if param.value.len() > max => {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(seed ^ (id.index() as u64).wrapping_mul(0x9e37_79b9));
                let mut picked = sample(&mut rng, param.value.len(), max).into_vec();
                picked.sort_unstable();
                picked
            }
            Coordinates::Sample { .. } => (0..param.value.len()).collect(),
        };
        let mut check = ParamCheck {
            name: param.name.clone(),
            coords_checked: coords.len(),
            max_rel_error: 0.0,
            worst_index: coords.first().copied().unwrap_or(0),
            analytic: 0.0,
            numeric: 0.0,
            max_abs_error: 0.0,
        };
        for &i in &coords {
            let original = param.value.data()[i];
            work.get_mut(id).value.data_mut()[i] = original + eps;
            let plus = evaluate(&work)?;
            work.get_mut(id).value.data_mut()[i] = original - eps;
            let minus = evaluate(&work)?;
            work.get_mut(id).value.data_mut()[i] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.data()[i] + options.corruption;
            let err = relative_error(a, numeric);
            check.max_abs_error = check.max_abs_error.max((a - numeric).abs());
            if err > check.max_rel_error {
                check.max_rel_error = err;
                check.worst_index = i;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        per_param.push(check);
    }

    let worst = per_param
        .iter()
        .fold(None::<&ParamCheck>, |best, c| match best {
            Some(b) if b.max_rel_error >= c.max_rel_error => Some(b),
            _ => Some(c),
        });
    Ok(GradCheckReport {
        eps,
        objective: value,
        max_rel_error: worst.map_or(0.0, |w| w.max_rel_error),
        max_abs_error: per_param
            .iter()
            .map(|c| c.max_abs_error)
            .fold(0.0, f64::max),
        worst_param: worst.map_or_else(String::new, |w| w.name.clone()),
        worst_index: worst.map_or(0, |w| w.worst_index),
        coords_checked: per_param.iter().map(|c| c.coords_checked).sum(),
        per_param,
    })
}
