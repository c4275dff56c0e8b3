use serde::Serialize;

use super::ModelError;

/// Nonnegative averaging weights with unit L1 norm.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MergeWeights(Vec<f64>);

impl MergeWeights {
    /// Normalizes `raw` to sum to one. Every entry must be finite and
    /// nonnegative, and at least one must be positive.
    pub fn new(raw: Vec<f64>) -> Result<Self, ModelError> {
        if raw.is_empty() {
            return Err(ModelError::InvalidWeights("no weights".into()));
        }
        if let Some(w) = raw.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(ModelError::InvalidWeights(format!("weight {w} is negative or not finite")));
        }
        let total = ordered_sum(raw.iter().copied());
        if total <= 0.0 {
            return Err(ModelError::InvalidWeights("weights sum to zero".into()));
        }
        Ok(Self(raw.into_iter().map(|w| w / total).collect()))
    }

    pub fn uniform(n: usize) -> Result<Self, ModelError> {
        Self::new(vec![1.0; n])
    }

    pub fn one_hot(n: usize, index: usize) -> Result<Self, ModelError> {
        let mut raw = vec![0.0; n];
        *raw.get_mut(index).ok_or_else(|| ModelError::InvalidWeights(format!("index {index} out of {n}")))? = 1.0;
        Self::new(raw)
    }

    /// True when `raw` already sums to one within 1e-12.
    pub fn is_normalized(raw: &[f64]) -> bool {
        (raw.iter().sum::<f64>() - 1.0).abs() <= 1e-12
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Sum whose result does not depend on the order of the terms.
pub(crate) fn ordered_sum(terms: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = terms.collect();
    v.sort_by(f64::total_cmp);
    let mut it = v.into_iter();
    match it.next() {
        Some(first) => it.fold(first, |acc, x| acc + x),
        None => 0.0,
    }
}
