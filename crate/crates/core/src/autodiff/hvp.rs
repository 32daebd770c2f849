//! Matrix-free second-order products and finite-difference probes.

use super::flat::{norm, FlatGrad};
use crate::error::{Error, Result};

/// A scalar function of a flat parameter vector with a gradient.
///
/// Implementations must be deterministic in `theta`.
pub trait Objective {
    fn dim(&self) -> usize;
    fn value(&self, theta: &[f64]) -> Result<f64>;
    fn gradient(&self, theta: &[f64]) -> Result<FlatGrad>;
}

impl<T: Objective + ?Sized> Objective for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value(&self, theta: &[f64]) -> Result<f64> {
        (**self).value(theta)
    }
    fn gradient(&self, theta: &[f64]) -> Result<FlatGrad> {
        (**self).gradient(theta)
    }
}

/// Hessian-vector product `∇²L(θ) v` by central differences of gradients.
///
/// Step: `ε = √eps · (1 + ‖θ‖) / max(‖v‖, 1e-12)`. A zero `v` short-circuits to zero.
pub fn hvp(objective: &dyn Objective, theta: &[f64], v: &[f64]) -> Result<FlatGrad> {
    if v.len() != theta.len() || theta.len() != objective.dim() {
        return Err(Error::shape(
            "hvp",
            format!("theta {}, v {}, objective {}", theta.len(), v.len(), objective.dim()),
        ));
    }
    if v.iter().all(|&x| x == 0.0) {
        return Ok(FlatGrad::zeros(v.len()));
    }
    let eps = f64::EPSILON.sqrt() * (1.0 + norm(theta)) / norm(v).max(1e-12);
    let shifted = |sign: f64| -> Vec<f64> { theta.iter().zip(v).map(|(t, d)| t + sign * eps * d).collect() };
    let plus = objective.gradient(&shifted(1.0))?;
    let minus = objective.gradient(&shifted(-1.0))?;
    let out: Vec<f64> = plus.iter().zip(minus.iter()).map(|(p, m)| (p - m) / (2.0 * eps)).collect();
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { op: "hvp" });
    }
    Ok(FlatGrad::from(out))
}

/// Central-difference derivative of `f` along `direction` at `theta`.
pub fn directional_fd(
    f: &mut dyn FnMut(&[f64]) -> Result<f64>,
    theta: &[f64],
    direction: &[f64],
    h: f64,
) -> Result<f64> {
    let plus: Vec<f64> = theta.iter().zip(direction).map(|(t, d)| t + h * d).collect();
    let minus: Vec<f64> = theta.iter().zip(direction).map(|(t, d)| t - h * d).collect();
    Ok((f(&plus)? - f(&minus)?) / (2.0 * h))
}

/// Coordinatewise central-difference gradient.
pub fn gradient_fd(f: &mut dyn FnMut(&[f64]) -> Result<f64>, theta: &[f64], h: f64) -> Result<Vec<f64>> {
    let mut x = theta.to_vec();
    let mut out = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let orig = x[i];
        x[i] = orig + h;
        let fp = f(&x)?;
        x[i] = orig - h;
        let fm = f(&x)?;
        x[i] = orig;
        out.push((fp - fm) / (2.0 * h));
    }
    Ok(out)
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
