//! Flat 64-bit parameter vectors.
//!
//! Model weights, gradients, and momentum buffers all share this one
//! representation: a non-empty `Vec<f64>` whose entries are finite. Every
//! operation re-validates finiteness of its result, so overflow or NaN
//! contamination surfaces as an error at the op that produced it instead of
//! propagating silently through a training run.

use crate::error::{Error, Result};

/// Non-empty vector of finite 64-bit floats. Length is fixed at
/// construction; operations never change it.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    /// Validates and wraps raw values: rejects empty input and any
    /// non-finite entry.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("parameter vector"));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { context: "parameter vector construction" });
        }
        Ok(ParamVector(values))
    }

    /// All-zeros vector of the given positive length.
    pub fn zeros(len: usize) -> Result<Self> {
        Self::new(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// Always false; emptiness is rejected at construction.
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Elementwise sum. Errors on length mismatch or overflow to infinity.
    pub fn add(&self, other: &ParamVector) -> Result<ParamVector> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    /// Elementwise difference. Errors on length mismatch or overflow.
    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    /// Multiplies every entry by a finite scalar.
    pub fn scale(&self, c: f64) -> Result<ParamVector> {
        if !c.is_finite() {
            return Err(Error::NonFinite { context: "scale factor" });
        }
        let out: Vec<f64> = self.0.iter().map(|a| a * c).collect();
        Self::checked(out, "scale")
    }

    /// Elementwise product. Errors on length mismatch or overflow.
    pub fn hadamard(&self, other: &ParamVector) -> Result<ParamVector> {
        self.zip_map(other, "hadamard", |a, b| a * b)
    }

    /// Euclidean norm, computed with max-rescaling so intermediate squares
    /// cannot overflow for finite inputs.
    pub fn l2_norm(&self) -> Result<f64> {
        let max = self.0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if max == 0.0 {
            return Ok(0.0);
        }
        let sum_sq: f64 = self.0.iter().map(|v| (v / max) * (v / max)).sum();
        let norm = max * sum_sq.sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFinite { context: "l2_norm" });
        }
        Ok(norm)
    }

    fn zip_map(
        &self,
        other: &ParamVector,
        context: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<ParamVector> {
        if self.len() != other.len() {
            return Err(Error::LengthMismatch { left: self.len(), right: other.len() });
        }
        let out: Vec<f64> = self.0.iter().zip(other.0.iter()).map(|(&a, &b)| f(a, b)).collect();
        Self::checked(out, context)
    }

    fn checked(values: Vec<f64>, context: &'static str) -> Result<ParamVector> {
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { context });
        }
        Ok(ParamVector(values))
    }
}
