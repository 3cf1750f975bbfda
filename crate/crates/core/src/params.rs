use std::ops::Index;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Flat model parameter state shared by clients and the server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector<S> {
    values: Vec<S>,
}

impl<S: Scalar> ParamVector<S> {
    pub fn new(values: Vec<S>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("parameter vector"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector"));
        }
        Ok(Self { values })
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "parameter dimension must be positive");
        Self {
            values: vec![S::zero(); dim],
        }
    }

    /// Builds a vector without the finiteness check. Callers validate with
    /// [`ParamVector::is_finite`] before the value escapes.
    pub(crate) fn from_raw(values: Vec<S>) -> Self {
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[S] {
        &self.values
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<S> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: self.dim(),
            });
        }
        Ok(())
    }

    pub fn norm_sq(&self) -> S {
        self.values.iter().map(|&v| v * v).sum()
    }

    pub fn cast<T: Scalar>(&self) -> ParamVector<T> {
        ParamVector {
            values: self
                .values
                .iter()
                .map(|&v| T::lit(v.to_f64_lossy()))
                .collect(),
        }
    }
}

impl<S> Index<usize> for ParamVector<S> {
    type Output = S;

    fn index(&self, i: usize) -> &S {
        &self.values[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_and_empty() {
        assert!(ParamVector::<f64>::new(vec![]).is_err());
        assert!(ParamVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(ParamVector::new(vec![f32::INFINITY]).is_err());
        assert_eq!(ParamVector::new(vec![1.0f64, 2.0]).unwrap().dim(), 2);
    }

    #[test]
    fn serializes_as_plain_array() {
        let p = ParamVector::new(vec![0.5f64, -1.0]).unwrap();
        assert_eq!(serde_json::to_string(&p).unwrap(), "[0.5,-1.0]");
    }
}
