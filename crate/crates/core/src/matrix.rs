//! Dense nonnegative matrices and marginal vectors.
//!
//! These are the value types everything else is built on. A [`NonnegMatrix`]
//! is immutable after construction and guarantees finite nonnegative entries
//! with no all-zero row or column; its *pattern* is the set of strictly
//! positive positions. A [`MarginalVector`] is a nonnegative vector with its
//! total mass cached at construction.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Relative tolerance for requiring equal row/column masses.
pub const MASS_REL_TOL: f64 = 1e-9;

/// Read-only view of a dense row-major matrix. Implemented by both
/// [`NonnegMatrix`] and [`RealMatrix`] so distances and assembly code can
/// work on either.
pub trait Dense {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn as_slice(&self) -> &[f64];

    fn get(&self, i: usize, j: usize) -> f64 {
        self.as_slice()[i * self.cols() + j]
    }

    fn same_shape(&self, other: &impl Dense) -> bool {
        self.rows() == other.rows() && self.cols() == other.cols()
    }
}

/// A dense matrix of finite nonnegative entries with no vanishing row or
/// column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonnegMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Dense for NonnegMatrix {
    fn rows(&self) -> usize {
        self.rows
    }
    fn cols(&self) -> usize {
        self.cols
    }
    fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

impl NonnegMatrix {
    /// Build from row-major data, validating every invariant.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        for (k, &v) in data.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidEntry {
                    row: k / cols,
                    col: k % cols,
                    value: v,
                });
            }
        }
        for i in 0..rows {
            if data[i * cols..(i + 1) * cols].iter().all(|&v| v == 0.0) {
                return Err(Error::ZeroRow(i));
            }
        }
        for j in 0..cols {
            if (0..rows).all(|i| data[i * cols + j] == 0.0) {
                return Err(Error::ZeroCol(j));
            }
        }
        Ok(Self { rows, cols, data })
    }

    /// Build from nested rows (convenient in tests and scenario setup).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        for r in rows {
            if r.len() != m {
                return Err(Error::LengthMismatch {
                    expected: m,
                    got: r.len(),
                });
            }
        }
        Self::new(n, m, rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self { rows: n, cols: n, data }
    }

    /// Outer product `r^T c` of two marginals; the independent coupling.
    pub fn outer(r: &MarginalVector, c: &MarginalVector) -> Result<Self> {
        let mut data = Vec::with_capacity(r.len() * c.len());
        for &ri in r.values() {
            for &cj in c.values() {
                data.push(ri * cj);
            }
        }
        Self::new(r.len(), c.len(), data)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (j, s) in sums.iter_mut().enumerate() {
                *s += self.data[i * self.cols + j];
            }
        }
        sums
    }

    /// Total mass (sum of all entries).
    pub fn mass(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Positions of strictly positive entries, row-major order.
    pub fn pattern(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let cols = self.cols;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.0)
            .map(move |(k, _)| (k / cols, k % cols))
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.data.iter().all(|&v| v > 0.0)
    }

    /// True when both matrices are positive at exactly the same positions.
    pub fn pattern_eq(&self, other: &Self) -> bool {
        self.same_shape(other)
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(&a, &b)| (a > 0.0) == (b > 0.0))
    }

    /// True when every positive entry of `self` is also positive in `other`.
    pub fn pattern_subset_of(&self, other: &Self) -> bool {
        self.same_shape(other)
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(&a, &b)| a == 0.0 || b > 0.0)
    }

    /// Raise each entry to the power `lambda`; zeros stay zero, so the
    /// pattern is preserved exactly.
    pub fn elementwise_power(&self, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::NonPositiveParameter("lambda", lambda));
        }
        let data = self
            .data
            .iter()
            .map(|&v| if v == 0.0 { 0.0 } else { v.powf(lambda) })
            .collect();
        Self::new(self.rows, self.cols, data)
    }

    /// Scale each row so that row `i` sums to `r[i]`. Cross-product ratios
    /// are preserved exactly.
    pub fn row_normalized(&self, r: &MarginalVector) -> Result<Self> {
        if r.len() != self.rows {
            return Err(Error::LengthMismatch {
                expected: self.rows,
                got: r.len(),
            });
        }
        let mut data = self.data.clone();
        for i in 0..self.rows {
            let s: f64 = self.row(i).iter().sum();
            if s == 0.0 {
                return Err(Error::ZeroRow(i));
            }
            let scale = r.values()[i] / s;
            for v in &mut data[i * self.cols..(i + 1) * self.cols] {
                *v *= scale;
            }
        }
        Self::new(self.rows, self.cols, data)
    }

    /// Scale each column so that column `j` sums to `c[j]`.
    pub fn col_normalized(&self, c: &MarginalVector) -> Result<Self> {
        if c.len() != self.cols {
            return Err(Error::LengthMismatch {
                expected: self.cols,
                got: c.len(),
            });
        }
        let sums = self.col_sums();
        let mut scale = vec![0.0; self.cols];
        for j in 0..self.cols {
            if sums[j] == 0.0 {
                return Err(Error::ZeroCol(j));
            }
            scale[j] = c.values()[j] / sums[j];
        }
        let mut data = self.data.clone();
        for i in 0..self.rows {
            for j in 0..self.cols {
                data[i * self.cols + j] *= scale[j];
            }
        }
        Self::new(self.rows, self.cols, data)
    }

    pub fn transposed(&self) -> Self {
        let mut data = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    /// Uniform rescale of every entry (positive factor keeps all invariants).
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0) || !factor.is_finite() {
            return Err(Error::NonPositiveParameter("scale factor", factor));
        }
        Self::new(
            self.rows,
            self.cols,
            self.data.iter().map(|&v| v * factor).collect(),
        )
    }

    pub fn to_real(&self) -> RealMatrix {
        RealMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.clone(),
        }
    }

    pub fn into_parts(self) -> (usize, usize, Vec<f64>) {
        (self.rows, self.cols, self.data)
    }
}

/// A dense matrix of arbitrary finite reals. Used for gradient slices,
/// perturbation directions and linear-approximation estimates, which may go
/// negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Dense for RealMatrix {
    fn rows(&self) -> usize {
        self.rows
    }
    fn cols(&self) -> usize {
        self.cols
    }
    fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

impl RealMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn add_at(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] += v;
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows)
            .map(|i| self.data[i * self.cols..(i + 1) * self.cols].iter().sum())
            .collect()
    }

    /// Clamp negatives to zero; returns the clamped matrix and the total mass
    /// removed by clamping.
    pub fn clamped_nonnegative(&self) -> (RealMatrix, f64) {
        let mut clamped = self.clone();
        let mut removed = 0.0;
        for v in &mut clamped.data {
            if *v < 0.0 {
                removed += -*v;
                *v = 0.0;
            }
        }
        (clamped, removed)
    }
}

/// A nonnegative vector with cached total mass; plays the row or column
/// marginal of a transport problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalVector {
    values: Vec<f64>,
    mass: f64,
}

impl MarginalVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidMarginalEntry { index: i, value: v });
            }
        }
        let mass = values.iter().sum();
        Ok(Self { values, mass })
    }

    /// `n` equal entries summing to `total`.
    pub fn uniform(n: usize, total: f64) -> Result<Self> {
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::NonPositiveParameter("total mass", total));
        }
        Self::new(vec![total / n as f64; n])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.values.iter().all(|&v| v > 0.0)
    }

    /// Index of the first non-positive entry, if any.
    pub fn first_non_positive(&self) -> Option<usize> {
        self.values.iter().position(|&v| v <= 0.0)
    }

    /// Rescale so the mass becomes `total`.
    pub fn rescaled_to(&self, total: f64) -> Result<Self> {
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::NonPositiveParameter("total mass", total));
        }
        let factor = total / self.mass;
        Self::new(self.values.iter().map(|&v| v * factor).collect())
    }
}

/// Check that two marginals carry the same total mass within `MASS_REL_TOL`.
pub fn check_equal_mass(r: &MarginalVector, c: &MarginalVector) -> Result<()> {
    let scale = r.mass().abs().max(c.mass().abs()).max(1e-300);
    let gap = (r.mass() - c.mass()).abs() / scale;
    if gap > MASS_REL_TOL {
        return Err(Error::MassMismatch {
            row_mass: r.mass(),
            col_mass: c.mass(),
            gap,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_zero_row_and_column() {
        let err = NonnegMatrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 2.0]]).unwrap_err();
        assert!(matches!(err, Error::ZeroRow(0)));
        let err = NonnegMatrix::from_rows(&[vec![1.0, 0.0], vec![2.0, 0.0]]).unwrap_err();
        assert!(matches!(err, Error::ZeroCol(1)));
    }

    #[test]
    fn rejects_negative_and_non_finite_entries() {
        let err = NonnegMatrix::from_rows(&[vec![1.0, -0.5], vec![1.0, 1.0]]).unwrap_err();
        assert!(matches!(err, Error::InvalidEntry { row: 0, col: 1, .. }));
        assert!(NonnegMatrix::from_rows(&[vec![f64::NAN]]).is_err());
        assert!(NonnegMatrix::from_rows(&[vec![f64::INFINITY]]).is_err());
    }

    #[test]
    fn elementwise_power_matches_worked_values() {
        // lambda = 2 on the 3x3 sensitivity example.
        let m = NonnegMatrix::from_rows(&[
            vec![1.0, 5.0, 0.0],
            vec![0.0, 1.0, 6.0],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap();
        let p = m.elementwise_power(2.0).unwrap();
        let expected = [1.0, 25.0, 0.0, 0.0, 1.0, 36.0, 0.0, 0.0, 1.0];
        assert_eq!(p.as_slice(), &expected);
        assert!(p.pattern_eq(&m));

        // lambda = 1 is the identity.
        let q = m.elementwise_power(1.0).unwrap();
        assert_eq!(q.as_slice(), m.as_slice());

        // scalar square root
        let s = NonnegMatrix::from_rows(&[vec![4.0]]).unwrap();
        assert_eq!(s.elementwise_power(0.5).unwrap().as_slice(), &[2.0]);
    }

    #[test]
    fn row_normalize_matches_worked_example() {
        // Row normalization of [[1, 1/2], [1/4, 1]] to r = (3/8, 5/8).
        let m = NonnegMatrix::from_rows(&[vec![1.0, 0.5], vec![0.25, 1.0]]).unwrap();
        let r = MarginalVector::new(vec![3.0 / 8.0, 5.0 / 8.0]).unwrap();
        let out = m.row_normalized(&r).unwrap();
        let expected = [0.25, 0.125, 0.125, 0.5];
        for (a, b) in out.as_slice().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn row_normalize_is_idempotent_on_fixed_points() {
        let r = MarginalVector::new(vec![0.3, 0.7]).unwrap();
        let m = NonnegMatrix::from_rows(&[vec![0.1, 0.2], vec![0.3, 0.4]]).unwrap();
        let once = m.row_normalized(&r).unwrap();
        let twice = once.row_normalized(&r).unwrap();
        for (a, b) in once.as_slice().iter().zip(twice.as_slice()) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn col_normalize_diagonal() {
        let m = NonnegMatrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 4.0]]).unwrap();
        let c = MarginalVector::new(vec![1.0, 1.0]).unwrap();
        let out = m.col_normalized(&c).unwrap();
        assert_eq!(out.as_slice(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn mass_mismatch_is_reported() {
        let r = MarginalVector::new(vec![0.5, 0.5]).unwrap();
        let c = MarginalVector::new(vec![0.5, 0.6]).unwrap();
        assert!(matches!(
            check_equal_mass(&r, &c).unwrap_err(),
            Error::MassMismatch { .. }
        ));
        assert!(check_equal_mass(&r, &r).is_ok());
    }

    #[test]
    fn outer_product_has_marginals_r_and_c() {
        let r = MarginalVector::new(vec![0.25, 0.75]).unwrap();
        let c = MarginalVector::new(vec![0.5, 0.3, 0.2]).unwrap();
        let m = NonnegMatrix::outer(&r, &c).unwrap();
        for (i, s) in m.row_sums().iter().enumerate() {
            assert!((s - r.values()[i] * c.mass()).abs() < 1e-15);
        }
    }
}
