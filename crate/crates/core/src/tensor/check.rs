// SPDX-License-Identifier: MIT OR Apache-2.0

//! Central finite differences used to verify analytic gradients.

use crate::error::{Error, Result};

/// Central difference of `f` along coordinate `coord` of `point`.
pub fn central_difference<F>(mut f: F, point: &[f64], coord: usize, h: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidParameter {
            name: "h",
            detail: format!("step must be > 0, got {h}"),
        });
    }
    let mut probe = point.to_vec();
    probe[coord] = point[coord] + h;
    let plus = f(&probe)?;
    probe[coord] = point[coord] - h;
    let minus = f(&probe)?;
    if !plus.is_finite() || !minus.is_finite() {
        return Err(Error::OracleFailure(format!(
            "non-finite value probing coordinate {coord}: f(+h) = {plus}, f(-h) = {minus}"
        )));
    }
    Ok((plus - minus) / (2.0 * h))
}

/// Largest relative disagreement between `analytic` and a central
/// difference of `f` over `coords`:
/// `max |analytic − fd| / max(|analytic|, 1e-12)`.
pub fn finite_difference_check<F>(
    mut f: F,
    point: &[f64],
    analytic: &[f64],
    h: f64,
    coords: &[usize],
) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if analytic.len() != point.len() {
        return Err(Error::shape(
            "finite_difference_check",
            format!("{} gradient entries for {} coordinates", analytic.len(), point.len()),
        ));
    }
    let mut worst = 0.0_f64;
    for &c in coords {
        if c >= point.len() {
            return Err(Error::Index(format!("coordinate {c} out of range")));
        }
        let fd = central_difference(&mut f, point, c, h)?;
        let err = (analytic[c] - fd).abs() / analytic[c].abs().max(1e-12);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let f = |x: &[f64]| Ok(3.0 * x[0] - 2.0 * x[1] + 0.5);
        let err = finite_difference_check(f, &[0.3, -1.2], &[3.0, -2.0], 1e-5, &[0, 1]).unwrap();
        assert!(err <= 1e-10, "err = {err}");
    }

    #[test]
    fn cubic_at_two() {
        // analytic derivative of a^3 at 2 is 12
        let f = |x: &[f64]| Ok(x[0].powi(3));
        let err = finite_difference_check(f, &[2.0], &[12.0], 1e-5, &[0]).unwrap();
        assert!(err <= 1e-8, "err = {err}");
    }

    #[test]
    fn non_finite_probe_is_an_oracle_failure() {
        let f = |x: &[f64]| Ok(if x[0] > 0.0 { f64::NAN } else { 0.0 });
        let err = finite_difference_check(f, &[0.0], &[0.0], 1e-5, &[0]).unwrap_err();
        assert!(matches!(err, Error::OracleFailure(_)));
    }

    #[test]
    fn rejects_non_positive_step() {
        let f = |x: &[f64]| Ok(x[0]);
        assert!(finite_difference_check(f, &[0.0], &[1.0], 0.0, &[0]).is_err());
    }
}
