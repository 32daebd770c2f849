use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

/// Gradient flattened over a fixed parameter order.
///
/// For the shared encoder the order is: node-type embedding, then each
/// message-passing layer in forward order with its weights before its bias,
/// every tensor row-major. See [`crate::models::FLATTEN_ORDER_VERSION`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FlatGrad(Vec<f64>);

impl FlatGrad {
    pub fn zeros(len: usize) -> Self {
        FlatGrad(vec![0.0; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        dot(&self.0, other)
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }

    pub fn scaled(&self, c: f64) -> FlatGrad {
        FlatGrad(self.0.iter().map(|x| c * x).collect())
    }

    /// `self += c * other`
    pub fn add_scaled(&mut self, c: f64, other: &[f64]) {
        debug_assert_eq!(self.0.len(), other.len());
        for (s, o) in self.0.iter_mut().zip(other) {
            *s += c * o;
        }
    }
}

impl From<Vec<f64>> for FlatGrad {
    fn from(v: Vec<f64>) -> Self {
        FlatGrad(v)
    }
}

impl Deref for FlatGrad {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for FlatGrad {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
