//! Central-difference verification of analytic gradients (64-bit only).

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

const DENOM_FLOOR: f64 = 1e-8;

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR)
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Max relative error between the gradient returned by `f` and central
/// differences, over every coordinate of `x`.
pub fn gradient_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&Tensor<f64>) -> Result<(f64, Tensor<f64>)>,
{
    let (v0, grad) = f(x)?;
    finite(v0, "objective")?;
    if grad.dims() != x.dims() {
        return Err(Error::shape("gradient", x.len(), grad.len()));
    }
    let coords: Vec<usize> = (0..x.len()).collect();
    gradient_check_at(|p| f(p).map(|(v, _)| v), grad.data(), x, &coords, eps)
}

/// Like [`gradient_check`], restricted to `coords`, with the analytic
/// gradient supplied up front.
pub fn gradient_check_at<F>(
    value: F,
    analytic: &[f64],
    x: &Tensor<f64>,
    coords: &[usize],
    eps: f64,
) -> Result<f64>
where
    F: Fn(&Tensor<f64>) -> Result<f64>,
{
    let mut probe = x.clone();
    let mut worst = 0.0f64;
    for &i in coords {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = finite(value(&probe)?, "objective")?;
        probe.data_mut()[i] = orig - eps;
        let minus = finite(value(&probe)?, "objective")?;
        probe.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}

/// Relative error of the directional derivative `<grad, d>` against the
/// central difference `(f(x + eps d) - f(x - eps d)) / 2 eps`.
pub fn directional_check<F>(value: F, analytic: &[f64], x: &[f64], direction: &[f64], eps: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if analytic.len() != x.len() || direction.len() != x.len() {
        return Err(Error::shape("direction", x.len(), direction.len()));
    }
    let shifted = |sign: f64| -> Vec<f64> {
        x.iter()
            .zip(direction)
            .map(|(&a, &d)| a + sign * eps * d)
            .collect()
    };
    let plus = finite(value(&shifted(1.0))?, "objective")?;
    let minus = finite(value(&shifted(-1.0))?, "objective")?;
    let numeric = (plus - minus) / (2.0 * eps);
    let exact: f64 = analytic.iter().zip(direction).map(|(g, d)| g * d).sum();
    Ok(relative_error(exact, numeric))
}
