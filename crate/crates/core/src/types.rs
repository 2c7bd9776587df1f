//! Domain types shared by every stage of the recovery pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

pub use num_complex::Complex64 as C64;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);

/// Dense complex matrix stored column-major, so each column is a
/// contiguous slice.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![ZERO; rows * cols],
        }
    }

    /// Builds a matrix from column-major data.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Dimension(format!("empty matrix {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "expected {} entries for {rows}x{cols}, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(domain("matrix entries must be finite"));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from row-major data.
    pub fn from_row_major(rows: usize, cols: usize, data: &[C64]) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "expected {} entries for {rows}x{cols}, got {}",
                rows * cols,
                data.len()
            )));
        }
        let mut col_major = Vec::with_capacity(data.len());
        for j in 0..cols {
            for i in 0..rows {
                col_major.push(data[i * cols + j]);
            }
        }
        Self::from_col_major(rows, cols, col_major)
    }

    /// Builds a real matrix (zero imaginary parts) from column-major data.
    pub fn from_real_col_major(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        Self::from_col_major(rows, cols, data.iter().map(|&v| C64::new(v, 0.0)).collect())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn col(&self, j: usize) -> &[C64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    #[inline]
    pub fn col_mut(&mut self, j: usize) -> &mut [C64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.data[j * self.rows + i]
    }

    pub fn as_col_major(&self) -> &[C64] {
        &self.data
    }

    /// `Φ x` for a dense length-N vector.
    pub fn mul_vec(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.cols, "vector length must equal column count");
        let mut out = vec![ZERO; self.rows];
        for (j, &xj) in x.iter().enumerate() {
            if xj == ZERO {
                continue;
            }
            axpy(xj, self.col(j), &mut out);
        }
        out
    }

    pub fn is_real(&self) -> bool {
        self.data.iter().all(|z| z.im == 0.0)
    }
}

/// `Σ conj(a_k) b_k`
#[inline]
pub fn dot_h(a: &[C64], b: &[C64]) -> C64 {
    debug_assert_eq!(a.len(), b.len());
    let (mut re, mut im) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        re += x.re * y.re + x.im * y.im;
        im += x.re * y.im - x.im * y.re;
    }
    C64::new(re, im)
}

#[inline]
pub fn norm_sqr(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: C64, x: &[C64], y: &mut [C64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Ordered set of active column indices, stored strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SupportSet(Vec<usize>);

impl SupportSet {
    pub fn empty() -> Self {
        Self(Vec::new())
    }

    /// Sorts and validates; duplicates are rejected.
    pub fn new(mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(domain("support indices must be distinct"));
        }
        Ok(Self(indices))
    }

    pub fn from_sorted_unchecked(indices: Vec<usize>) -> Self {
        debug_assert!(indices.windows(2).all(|w| w[0] < w[1]));
        Self(indices)
    }

    /// Checks every index is below `n`.
    pub fn check_bounds(&self, n: usize) -> Result<()> {
        match self.0.last() {
            Some(&last) if last >= n => Err(domain(format!("support index {last} out of range for N = {n}"))),
            _ => Ok(()),
        }
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn with(&self, i: usize) -> Self {
        let mut v = self.0.clone();
        match v.binary_search(&i) {
            Ok(_) => {}
            Err(pos) => v.insert(pos, i),
        }
        Self(v)
    }
}

/// Observation model `y = Φx + n` with white noise of total complex
/// variance `sigma2` per entry and Bernoulli(`p`) activation.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub phi: CMatrix,
    pub y: Vec<C64>,
    pub sigma2: f64,
    pub p: f64,
}

impl ProblemInstance {
    pub fn new(phi: CMatrix, y: Vec<C64>, sigma2: f64, p: f64) -> Result<Self> {
        if y.len() != phi.rows() {
            return Err(Error::Dimension(format!(
                "observation length {} does not match M = {}",
                y.len(),
                phi.rows()
            )));
        }
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(domain(format!("sigma2 must be positive and finite, got {sigma2}")));
        }
        check_rate(p)?;
        if y.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(domain("observation entries must be finite"));
        }
        Ok(Self { phi, y, sigma2, p })
    }

    pub fn m(&self) -> usize {
        self.phi.rows()
    }

    pub fn n(&self) -> usize {
        self.phi.cols()
    }

    /// Same data with different hyperparameters.
    pub fn with_hyper(&self, sigma2: f64, p: f64) -> Result<Self> {
        Self::new(self.phi.clone(), self.y.clone(), sigma2, p)
    }
}

pub(crate) fn check_rate(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(domain(format!("sparsity rate must lie in (0, 1), got {p}")))
    }
}

/// Length-N signal together with the indices of its nonzero entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSignal {
    values: Vec<C64>,
    support: SupportSet,
}

impl SparseSignal {
    pub fn zeros(n: usize) -> Self {
        Self {
            values: vec![ZERO; n],
            support: SupportSet::empty(),
        }
    }

    /// Support is derived from the nonzero entries.
    pub fn from_values(values: Vec<C64>) -> Self {
        let support = SupportSet::from_sorted_unchecked(
            values
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != ZERO)
                .map(|(i, _)| i)
                .collect(),
        );
        Self { values, support }
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn support(&self) -> &SupportSet {
        &self.support
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<C64> {
        self.values
    }
}

/// Scatters coefficients listed in support order into a length-`n` vector.
pub fn embed(n: usize, support: &SupportSet, coeffs: &[C64]) -> Vec<C64> {
    debug_assert_eq!(support.len(), coeffs.len());
    let mut out = vec![ZERO; n];
    for (i, c) in support.iter().zip(coeffs) {
        out[i] = *c;
    }
    out
}
