//! Small complex Hermitian matrices (d <= 4) and the Cholesky-based kernels
//! used throughout the model: log-determinant, inverse and the trace of a
//! product.
//!
//! Only the upper triangle is stored, so a `HermitianMatrix` is Hermitian by
//! construction. Diagonal entries carry a zero imaginary part.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Largest supported dimension.
pub const MAX_DIM: usize = 4;
const MAX_PACKED: usize = MAX_DIM * (MAX_DIM + 1) / 2;
const TRACE_IMAG_TOL: f64 = 1e-12;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[inline]
fn packed_index(dim: usize, i: usize, j: usize) -> usize {
    debug_assert!(i <= j && j < dim);
    i * (2 * dim - i - 1) / 2 + j
}

/// Number of stored (upper-triangular) entries for dimension `dim`.
pub fn packed_len(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

#[derive(Clone, Copy, PartialEq)]
pub struct HermitianMatrix {
    dim: usize,
    upper: [Complex64; MAX_PACKED],
}

impl std::fmt::Debug for HermitianMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut rows = Vec::with_capacity(self.dim);
        for i in 0..self.dim {
            let row: Vec<String> = (0..self.dim)
                .map(|j| {
                    let z = self.get(i, j);
                    format!("{:.6}{:+.6}i", z.re, z.im)
                })
                .collect();
            rows.push(row.join(" "));
        }
        write!(f, "HermitianMatrix[{}]", rows.join("; "))
    }
}

impl HermitianMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&dim), "dimension {dim} not in 1..=4");
        HermitianMatrix { dim, upper: [ZERO; MAX_PACKED] }
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0)
    }

    pub fn scaled_identity(dim: usize, value: f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.set_diag(i, value);
        }
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m.set_diag(i, v);
        }
        m
    }

    /// Builds a matrix from its upper triangle in row-major order
    /// (`(0,0), (0,1), ..., (0,d-1), (1,1), ...`). Diagonal entries must have
    /// a zero imaginary part.
    pub fn from_upper(dim: usize, entries: &[Complex64]) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(Error::domain(format!("dimension {dim} not in 1..=4")));
        }
        if entries.len() != packed_len(dim) {
            return Err(Error::DimensionMismatch { left: entries.len(), right: packed_len(dim) });
        }
        let mut m = Self::zeros(dim);
        let mut it = entries.iter();
        for i in 0..dim {
            for j in i..dim {
                let z = *it.next().expect("length checked");
                if i == j && z.im != 0.0 {
                    return Err(Error::domain(format!("diagonal entry ({i},{i}) has imaginary part {}", z.im)));
                }
                m.upper[packed_index(dim, i, j)] = z;
            }
        }
        Ok(m)
    }

    /// Builds a matrix from a dense square array, checking that it is
    /// Hermitian to within `tol` (absolute).
    pub fn from_dense(rows: &[Vec<Complex64>], tol: f64) -> Result<Self> {
        let dim = rows.len();
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(Error::domain(format!("dimension {dim} not in 1..=4")));
        }
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            if rows[i].len() != dim {
                return Err(Error::DimensionMismatch { left: rows[i].len(), right: dim });
            }
            for j in i..dim {
                let z = rows[i][j];
                if (z - rows[j][i].conj()).norm() > tol {
                    return Err(Error::domain(format!("entry ({i},{j}) breaks Hermitian symmetry")));
                }
                if i == j {
                    m.set_diag(i, z.re);
                } else {
                    m.set(i, j, z);
                }
            }
        }
        Ok(m)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The stored upper triangle, row-major.
    pub fn upper(&self) -> &[Complex64] {
        &self.upper[..packed_len(self.dim)]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        if i <= j {
            self.upper[packed_index(self.dim, i, j)]
        } else {
            self.upper[packed_index(self.dim, j, i)].conj()
        }
    }

    #[inline]
    pub fn diag(&self, i: usize) -> f64 {
        self.upper[packed_index(self.dim, i, i)].re
    }

    /// Sets entry `(i, j)` and, implicitly, its conjugate `(j, i)`.
    /// Panics if `i == j`; use [`set_diag`](Self::set_diag) for the diagonal.
    pub fn set(&mut self, i: usize, j: usize, value: Complex64) {
        assert!(i != j, "use set_diag for diagonal entries");
        if i < j {
            self.upper[packed_index(self.dim, i, j)] = value;
        } else {
            self.upper[packed_index(self.dim, j, i)] = value.conj();
        }
    }

    pub fn set_diag(&mut self, i: usize, value: f64) {
        self.upper[packed_index(self.dim, i, i)] = Complex64::new(value, 0.0);
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.diag(i)).sum()
    }

    pub fn to_dense(&self) -> Vec<Vec<Complex64>> {
        (0..self.dim).map(|i| (0..self.dim).map(|j| self.get(i, j)).collect()).collect()
    }

    pub fn scale(&self, factor: f64) -> Self {
        let mut out = *self;
        for z in out.upper.iter_mut() {
            *z *= factor;
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let mut out = *self;
        for (z, w) in out.upper.iter_mut().zip(other.upper.iter()) {
            *z += *w;
        }
        out
    }

    /// `self += weight * other`.
    pub fn add_scaled(&mut self, weight: f64, other: &Self) {
        debug_assert_eq!(self.dim, other.dim);
        for (z, w) in self.upper.iter_mut().zip(other.upper.iter()) {
            *z += *w * weight;
        }
    }

    /// Adds `eps` to every diagonal entry.
    pub fn jitter(&self, eps: f64) -> Self {
        let mut out = *self;
        for i in 0..self.dim {
            out.set_diag(i, self.diag(i) + eps);
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.upper().iter().zip(other.upper()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    pub fn cholesky(&self) -> Result<CholeskyFactor> {
        let d = self.dim;
        let mut l = [[ZERO; MAX_DIM]; MAX_DIM];
        for j in 0..d {
            let mut pivot = self.diag(j);
            for k in 0..j {
                pivot -= l[j][k].norm_sqr();
            }
            if !(pivot > 0.0) {
                return Err(Error::NotPositiveDefinite { pivot: j, value: pivot });
            }
            let ljj = pivot.sqrt();
            l[j][j] = Complex64::new(ljj, 0.0);
            for i in (j + 1)..d {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s -= l[i][k] * l[j][k].conj();
                }
                l[i][j] = s / ljj;
            }
        }
        Ok(CholeskyFactor { dim: d, l })
    }

    /// Natural log of the determinant, from the Cholesky diagonal.
    pub fn log_det(&self) -> Result<f64> {
        Ok(self.cholesky()?.log_det())
    }

    pub fn inverse(&self) -> Result<Self> {
        Ok(self.cholesky()?.inverse())
    }

    /// `tr(self * other)`. Real for Hermitian arguments.
    pub fn trace_product(&self, other: &Self) -> Result<f64> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch { left: self.dim, right: other.dim });
        }
        trace_product_dense(&self.to_dense(), &other.to_dense())
    }

    /// Same as [`trace_product`](Self::trace_product) for matching
    /// dimensions, without the dense round trip. Used in the inner loops.
    #[inline]
    pub fn trace_product_unchecked(&self, other: &Self) -> f64 {
        let d = self.dim;
        let mut acc = 0.0;
        for i in 0..d {
            acc += self.diag(i) * other.diag(i);
            for j in (i + 1)..d {
                let idx = packed_index(d, i, j);
                let a = self.upper[idx];
                let b = other.upper[idx];
                acc += 2.0 * (a.re * b.re + a.im * b.im);
            }
        }
        acc
    }

    /// Dense product `self * other` (not Hermitian in general).
    pub fn mul_dense(&self, other: &Self) -> Vec<Vec<Complex64>> {
        let d = self.dim;
        let mut out = vec![vec![ZERO; d]; d];
        for i in 0..d {
            for j in 0..d {
                let mut s = ZERO;
                for k in 0..d {
                    s += self.get(i, k) * other.get(k, j);
                }
                out[i][j] = s;
            }
        }
        out
    }
}

/// `tr(a * b)` for dense square matrices, rejecting a non-negligible
/// imaginary part.
pub fn trace_product_dense(a: &[Vec<Complex64>], b: &[Vec<Complex64>]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { left: a.len(), right: b.len() });
    }
    let d = a.len();
    let mut acc = ZERO;
    for i in 0..d {
        for k in 0..d {
            acc += a[i][k] * b[k][i];
        }
    }
    if !acc.re.is_finite() || acc.im.abs() > TRACE_IMAG_TOL * (1.0 + acc.re.abs()) {
        return Err(Error::NonRealTrace { imag: acc.im });
    }
    Ok(acc.re)
}

/// Lower-triangular factor `F` with `F * F^H = m` and a strictly positive
/// real diagonal.
#[derive(Clone, Copy, Debug)]
pub struct CholeskyFactor {
    dim: usize,
    l: [[Complex64; MAX_DIM]; MAX_DIM],
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.l[i][j]
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.dim).map(|i| self.l[i][i].re.ln()).sum::<f64>()
    }

    /// `F * v` for a column vector `v`.
    pub fn mul_vec(&self, v: &[Complex64]) -> [Complex64; MAX_DIM] {
        let mut out = [ZERO; MAX_DIM];
        for i in 0..self.dim {
            let mut s = ZERO;
            for k in 0..=i {
                s += self.l[i][k] * v[k];
            }
            out[i] = s;
        }
        out
    }

    fn lower_inverse(&self) -> [[Complex64; MAX_DIM]; MAX_DIM] {
        let d = self.dim;
        let mut inv = [[ZERO; MAX_DIM]; MAX_DIM];
        for j in 0..d {
            inv[j][j] = Complex64::new(1.0 / self.l[j][j].re, 0.0);
            for i in (j + 1)..d {
                let mut s = ZERO;
                for k in j..i {
                    s -= self.l[i][k] * inv[k][j];
                }
                inv[i][j] = s / self.l[i][i].re;
            }
        }
        inv
    }

    /// `(F F^H)^{-1} = F^{-H} F^{-1}`.
    pub fn inverse(&self) -> HermitianMatrix {
        let d = self.dim;
        let li = self.lower_inverse();
        let mut out = HermitianMatrix::zeros(d);
        for i in 0..d {
            for j in i..d {
                let mut s = ZERO;
                for k in j..d {
                    s += li[k][i].conj() * li[k][j];
                }
                if i == j {
                    out.set_diag(i, s.re);
                } else {
                    out.set(i, j, s);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn sample_pd() -> HermitianMatrix {
        HermitianMatrix::from_upper(
            3,
            &[c(4.0, 0.0), c(1.0, 0.5), c(-0.3, 0.2), c(3.0, 0.0), c(0.7, -0.4), c(2.5, 0.0)],
        )
        .unwrap()
    }

    #[test]
    fn packed_layout_is_row_major_upper() {
        assert_eq!(packed_index(3, 0, 0), 0);
        assert_eq!(packed_index(3, 0, 2), 2);
        assert_eq!(packed_index(3, 1, 1), 3);
        assert_eq!(packed_index(3, 1, 2), 4);
        assert_eq!(packed_index(3, 2, 2), 5);
        assert_eq!(packed_index(4, 3, 3), 9);
        assert_eq!(packed_index(1, 0, 0), 0);
    }

    #[test]
    fn entries_are_conjugate_symmetric() {
        let m = sample_pd();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m.get(i, j), m.get(j, i).conj());
            }
        }
    }

    #[test]
    fn cholesky_identity_and_diagonal() {
        let f = HermitianMatrix::identity(3).cholesky().unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert_eq!(f.get(i, j), c(expected, 0.0));
            }
        }
        let f = HermitianMatrix::from_diagonal(&[4.0, 9.0, 16.0]).cholesky().unwrap();
        assert_eq!(f.get(0, 0).re, 2.0);
        assert_eq!(f.get(1, 1).re, 3.0);
        assert_eq!(f.get(2, 2).re, 4.0);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let m = HermitianMatrix::from_diagonal(&[1.0, -1.0, 2.0]);
        assert!(matches!(m.cholesky(), Err(Error::NotPositiveDefinite { pivot: 1, .. })));
        let z = HermitianMatrix::zeros(3);
        assert!(matches!(z.log_det(), Err(Error::NotPositiveDefinite { pivot: 0, .. })));
    }

    #[test]
    fn log_det_simple_cases() {
        assert_eq!(HermitianMatrix::identity(3).log_det().unwrap(), 0.0);
        let v = HermitianMatrix::from_diagonal(&[2.0, 2.0, 2.0]).log_det().unwrap();
        assert!((v - 3.0 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn inverse_diagonal() {
        let inv = HermitianMatrix::from_diagonal(&[2.0, 4.0, 8.0]).inverse().unwrap();
        assert!(inv.max_abs_diff(&HermitianMatrix::from_diagonal(&[0.5, 0.25, 0.125])) < 1e-15);
        assert_eq!(HermitianMatrix::identity(3).inverse().unwrap(), HermitianMatrix::identity(3));
    }

    #[test]
    fn trace_product_simple_cases() {
        let i3 = HermitianMatrix::identity(3);
        assert_eq!(i3.trace_product(&i3).unwrap(), 3.0);
        let a = HermitianMatrix::from_diagonal(&[1.0, 2.0, 3.0]);
        let b = HermitianMatrix::from_diagonal(&[4.0, 5.0, 6.0]);
        assert_eq!(a.trace_product(&b).unwrap(), 32.0);
        let m = sample_pd();
        assert!((m.trace_product(&a).unwrap() - m.trace_product_unchecked(&a)).abs() < 1e-14);
    }

    #[test]
    fn trace_product_errors() {
        let a = HermitianMatrix::identity(3);
        let b = HermitianMatrix::identity(2);
        assert!(matches!(a.trace_product(&b), Err(Error::DimensionMismatch { .. })));
        // a non-Hermitian dense pair has a genuinely complex trace
        let x = vec![vec![c(0.0, 0.0), c(1.0, 0.0)], vec![c(0.0, 0.0), c(0.0, 0.0)]];
        let y = vec![vec![c(0.0, 0.0), c(0.0, 0.0)], vec![c(0.0, 1.0), c(0.0, 0.0)]];
        assert!(matches!(trace_product_dense(&x, &y), Err(Error::NonRealTrace { .. })));
    }

    #[test]
    fn from_upper_validates() {
        assert!(HermitianMatrix::from_upper(2, &[c(1.0, 0.1), c(0.0, 0.0), c(1.0, 0.0)]).is_err());
        assert!(matches!(HermitianMatrix::from_upper(2, &[c(1.0, 0.0)]), Err(Error::DimensionMismatch { .. })));
        assert!(HermitianMatrix::from_upper(5, &[]).is_err());
    }

    #[test]
    fn from_dense_round_trip() {
        let m = sample_pd();
        let back = HermitianMatrix::from_dense(&m.to_dense(), 0.0).unwrap();
        assert_eq!(m, back);
        let mut bad = m.to_dense();
        bad[0][1] = c(9.0, 0.0);
        assert!(HermitianMatrix::from_dense(&bad, 1e-12).is_err());
    }

    #[test]
    fn scalar_case_works() {
        let m = HermitianMatrix::from_diagonal(&[5.0]);
        assert!((m.log_det().unwrap() - 5f64.ln()).abs() < 1e-15);
        assert!((m.inverse().unwrap().diag(0) - 0.2).abs() < 1e-15);
    }
}
