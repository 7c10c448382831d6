//! Central-difference gradient checking.

use super::params::ParamSet;
use crate::error::{Error, Result};

/// Compares an analytic gradient against central finite differences.
///
/// `value` evaluates the objective and `gradient` its analytic gradient; both
/// must be deterministic. Returns the largest
/// `|analytic - numeric| / max(1, |analytic|)` over every parameter entry.
pub fn fd_check<V, G>(value: V, gradient: G, params: &ParamSet, step: f64) -> Result<f64>
where
    V: Fn(&ParamSet) -> Result<f64>,
    G: Fn(&ParamSet) -> Result<ParamSet>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::contract("fd_check", format!("step must be positive, got {step}")));
    }
    let base = value(params)?;
    let again = value(params)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::OracleInvalid(format!(
            "objective is not deterministic ({base} vs {again})"
        )));
    }
    let analytic = gradient(params)?;
    params.check_layout(&analytic)?;
    let analytic = analytic.flatten();

    let mut flat = params.flatten();
    let mut worst = 0.0_f64;
    for i in 0..flat.len() {
        let orig = flat[i];
        flat[i] = orig + step;
        let up = value(&params.unflatten(&flat)?)?;
        flat[i] = orig - step;
        let down = value(&params.unflatten(&flat)?)?;
        flat[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}
