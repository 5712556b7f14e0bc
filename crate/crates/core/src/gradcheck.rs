//! Central-difference gradient verification.
//!
//! For a scalar-valued forward pass over a parameter store, compares the
//! tape's analytic gradient against `(f(p+h) - f(p-h)) / 2h` for every
//! parameter entry. Relative error is `|a - n| / max(|a|, |n|, 1e-8)`.

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::model::params::ParamStore;

pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(parameter name, flat index)` of the worst entry.
    pub worst: Option<(String, usize)>,
    pub entries_checked: usize,
    pub baseline_value: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err < tolerance
    }
}

/// Runs the check. `build` must record the same deterministic forward pass
/// each time it is called and return a scalar node.
pub fn grad_check<F>(params: &mut ParamStore, step: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let eval = |params: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let out = build(&mut g, params)?;
        let v = g.scalar(out)?;
        if !v.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite forward value {v} during gradient check"
            )));
        }
        Ok(v)
    };

    // Analytic pass.
    params.zero_grads();
    let mut g = Graph::new();
    let out = build(&mut g, params)?;
    let baseline = g.scalar(out)?;
    if !baseline.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite forward value {baseline} during gradient check"
        )));
    }
    g.backward(out)?;
    params.absorb_grads(&g)?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|(_, e)| e.tensor.grad().expect("grad allocated").to_vec())
        .collect();

    let mut max_rel_err: f64 = 0.0;
    let mut worst = None;
    let mut entries_checked = 0;
    let param_count = params.len();

    for pi in 0..param_count {
        let numel = params.entry(crate::model::params::ParamId(pi)).tensor.numel();
        for j in 0..numel {
            let id = crate::model::params::ParamId(pi);
            let orig = params.entry(id).tensor.data()[j];

            params.entry_mut(id).tensor.data_mut()[j] = orig + step;
            let fp = eval(params)?;
            params.entry_mut(id).tensor.data_mut()[j] = orig - step;
            let fm = eval(params)?;
            params.entry_mut(id).tensor.data_mut()[j] = orig;

            let numeric = (fp - fm) / (2.0 * step);
            let a = analytic[pi][j];
            if !numeric.is_finite() || !a.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite gradient for {:?} entry {j}: analytic {a}, numeric {numeric}",
                    params.entry(id).name
                )));
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > max_rel_err {
                max_rel_err = rel;
                worst = Some((params.entry(id).name.clone(), j));
            }
            entries_checked += 1;
        }
    }

    Ok(GradCheckReport {
        max_rel_err,
        worst,
        entries_checked,
        baseline_value: baseline,
    })
}
