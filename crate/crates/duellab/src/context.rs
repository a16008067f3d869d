//! Per-round context sets and the half-duplication transform.

use crate::error::{Error, Result};
use ndarray::{Array2, ArrayView1};

/// The K feature vectors presented to the agent in one round, one row per arm.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextSet {
    pub round: u64,
    /// K x d, row k is the context of arm k.
    pub vectors: Array2<f64>,
}

impl ContextSet {
    /// Requires at least two arms (a duel needs two candidates), a positive
    /// dimension, and finite entries.
    pub fn new(round: u64, vectors: Array2<f64>) -> Result<Self> {
        let (k, d) = vectors.dim();
        if k < 2 {
            return Err(Error::InvalidInput(format!(
                "a context set needs at least 2 arms, got {k}"
            )));
        }
        if d == 0 {
            return Err(Error::InvalidInput(
                "context dimension must be at least 1".into(),
            ));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "context set contains a non-finite entry".into(),
            ));
        }
        Ok(ContextSet { round, vectors })
    }

    pub fn arms(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn arm(&self, k: usize) -> ArrayView1<'_, f64> {
        self.vectors.row(k)
    }
}

/// Duplicate a raw vector into identical halves and scale to unit norm:
/// z of length d/2 becomes (z, z) / (sqrt(2) * ||z||), a unit vector of
/// length d whose halves are bit-identical.
///
/// Feature networks with the paired structured init produce an exactly
/// zero feature map on such inputs, which is what makes the init invariant
/// testable in floating point.
pub fn symmetrize_context(z: &[f64], d: usize) -> Result<Vec<f64>> {
    if d == 0 || d % 2 != 0 {
        return Err(Error::InvalidInput(format!(
            "target dimension must be even and positive, got {d}"
        )));
    }
    if z.len() != d / 2 {
        return Err(Error::ShapeMismatch(format!(
            "raw vector has length {}, expected d/2 = {}",
            z.len(),
            d / 2
        )));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(
            "raw vector contains a non-finite entry".into(),
        ));
    }
    let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::DegenerateContext);
    }
    let scale = 1.0 / (std::f64::consts::SQRT_2 * norm);
    let mut out = Vec::with_capacity(d);
    for &v in z {
        out.push(v * scale);
    }
    // copy, not recompute: the halves must be bit-identical
    out.extend_from_within(..);
    Ok(out)
}
