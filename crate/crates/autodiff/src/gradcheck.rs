//! Central finite differences, used as an independent check on analytic
//! gradients.

use crate::error::Result;
use crate::params::ParamSet;

/// Numerical gradient of `f` at `at` by central differences with step `h`.
pub fn central_difference(
    at: &ParamSet,
    h: f64,
    mut f: impl FnMut(&ParamSet) -> f64,
) -> Result<ParamSet> {
    let base = at.to_flat();
    let mut grad = vec![0.0; base.len()];
    let mut probe = base.clone();
    for i in 0..base.len() {
        probe[i] = base[i] + h;
        let plus = f(&at.with_flat(&probe)?);
        probe[i] = base[i] - h;
        let minus = f(&at.with_flat(&probe)?);
        probe[i] = base[i];
        grad[i] = (plus - minus) / (2.0 * h);
    }
    at.with_flat(&grad)
}

/// Worst per-coordinate disagreement between two gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheck {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Relative error `|a - n| / max(|a|, |n|, floor)`. The floor keeps
/// coordinates whose true gradient is zero from reporting round-off as a
/// large relative error.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub const DEFAULT_FLOOR: f64 = 1e-6;

pub fn compare(analytic: &ParamSet, numeric: &ParamSet) -> Result<GradCheck> {
    analytic.check_congruent(numeric)?;
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for ((name, a), (_, n)) in analytic.iter().zip(numeric.iter()) {
        for (i, (&x, &y)) in a.data().iter().zip(n.data()).enumerate() {
            let err = relative_error(x, y, DEFAULT_FLOOR);
            if err > report.max_rel_error || report.worst_param.is_empty() {
                report = GradCheck {
                    max_rel_error: err,
                    worst_param: name.to_string(),
                    worst_index: i,
                    analytic: x,
                    numeric: y,
                };
            }
        }
    }
    Ok(report)
}
