//! Dense row-major `f64` arrays.
//!
//! Almost everything in this crate is a matrix (`batch × features`), so the
//! helpers here are matrix-oriented. Higher-rank shapes are accepted but only
//! carried around.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Dimension(format!(
                "shape {shape:?} must have at least one extent and no zero extents"
            )));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} needs {len} elements, buffer has {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Panics on zero extents; use [`Tensor::new`] for fallible construction.
    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(shape.to_vec(), vec![0.0; shape.iter().product()])
            .expect("zeros: extents must be positive")
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::matrix(rows.len(), cols, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading extent.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Product of the trailing extents (1 for a vector).
    pub fn cols(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols())
    }

    /// Gathers the given rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Dimension("cannot select zero rows".into()));
        }
        let c = self.cols();
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            if i >= self.rows() {
                return Err(Error::Dimension(format!(
                    "row {i} out of range for {} rows",
                    self.rows()
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        Self::matrix(indices.len(), c, data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    pub fn ensure_cols(&self, cols: usize, what: &str) -> Result<()> {
        if self.shape.len() != 2 || self.cols() != cols {
            return Err(Error::Dimension(format!(
                "{what}: expected a matrix with {cols} columns, got shape {:?}",
                self.shape
            )));
        }
        Ok(())
    }

    pub fn ensure_same_shape(&self, other: &Tensor, what: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn vstack(parts: &[&Tensor]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Dimension("vstack of nothing".into()))?;
        let cols = first.cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.cols() != cols {
                return Err(Error::Dimension("vstack column mismatch".into()));
            }
            rows += p.rows();
            data.extend_from_slice(&p.data);
        }
        Self::matrix(rows, cols, data)
    }
}

/// Squared Euclidean distance between two equal-length slices.
#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_buffer() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![0, 3], vec![]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn row_access_and_selection() {
        let t = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!(t.row(1), &[3.0, 4.0]);
        let s = t.select_rows(&[2, 0, 2]).unwrap();
        assert_eq!(s.data(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        assert!(t.select_rows(&[3]).is_err());
    }

    #[test]
    fn finiteness_check() {
        let mut t = Tensor::zeros(&[2, 2]);
        assert!(t.ensure_finite("t").is_ok());
        t.data_mut()[3] = f64::NAN;
        assert!(matches!(t.ensure_finite("t"), Err(Error::NonFinite(_))));
    }
}
