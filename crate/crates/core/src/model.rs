//! Flat parameter vectors carried through training, relay and aggregation.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelVector(pub Vec<f64>);

impl ModelVector {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &ModelVector) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// `self += scale * other`
    pub fn axpy(&mut self, scale: f64, other: &ModelVector) {
        debug_assert_eq!(self.dim(), other.dim());
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for a in &mut self.0 {
            *a *= factor;
        }
    }

    /// Weighted mean of `(model, weight)` pairs. Returns `None` when the
    /// list is empty or the weights sum to zero.
    pub fn weighted_mean<'a, I>(items: I) -> Option<ModelVector>
    where
        I: IntoIterator<Item = (&'a ModelVector, f64)>,
    {
        let mut acc: Option<ModelVector> = None;
        let mut total = 0.0;
        for (m, w) in items {
            let acc = acc.get_or_insert_with(|| ModelVector::zeros(m.dim()));
            acc.axpy(w, m);
            total += w;
        }
        let mut acc = acc?;
        if total <= 0.0 {
            return None;
        }
        acc.scale(1.0 / total);
        Some(acc)
    }
}
