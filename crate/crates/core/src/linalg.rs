//! Small dense-vector helpers shared by every module.

use crate::{Error, Result};

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `‖a − b‖²` without shape checks; callers guarantee equal lengths.
#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

#[inline]
pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

#[inline]
pub fn scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

/// `acc += s * v`
#[inline]
pub fn axpy(acc: &mut [f64], s: f64, v: &[f64]) {
    for (a, x) in acc.iter_mut().zip(v) {
        *a += s * x;
    }
}

pub fn check_dims(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::shape(expected, got))
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let values: Vec<f64> = values.into_iter().collect();
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Unit-normalizes `x` and returns `(x̂, ‖x‖)`.
pub fn unit(x: &[f64]) -> Result<(Vec<f64>, f64)> {
    let n = norm(x);
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::Degenerate(format!(
            "cannot normalize vector with norm {n}"
        )));
    }
    Ok((scale(x, 1.0 / n), n))
}

/// Pulls a gradient taken w.r.t. `x̂ = x/‖x‖` back to `x`:
/// `(g − x̂ (x̂·g)) / ‖x‖`.
pub fn unit_backward(x_hat: &[f64], x_norm: f64, grad_hat: &[f64]) -> Vec<f64> {
    let proj = dot(x_hat, grad_hat);
    x_hat
        .iter()
        .zip(grad_hat)
        .map(|(u, g)| (g - u * proj) / x_norm)
        .collect()
}
