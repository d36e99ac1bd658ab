//! Scaled complex Wishart density for multi-look covariance matrices, a
//! look-by-look sampler, and the Wishart distance.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::hermitian::{HermitianMatrix, MAX_DIM};
use crate::special::ln_gamma;

const LN_PI: f64 = 1.144_729_885_849_400_2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WishartParams {
    looks: f64,
    mean_cov: HermitianMatrix,
}

impl WishartParams {
    pub fn new(looks: f64, mean_cov: HermitianMatrix) -> Result<Self> {
        let d = mean_cov.dim() as f64;
        if !(looks > d - 1.0) || !looks.is_finite() {
            return Err(Error::domain(format!("looks must exceed d - 1 = {}, got {looks}", d - 1.0)));
        }
        mean_cov.cholesky()?;
        Ok(Self { looks, mean_cov })
    }

    pub fn looks(&self) -> f64 {
        self.looks
    }

    pub fn mean_cov(&self) -> &HermitianMatrix {
        &self.mean_cov
    }
}

/// `ln I(L, d) = d(d-1)/2 ln pi + sum_{i=1..d} ln Gamma(L - i + 1)`.
pub fn ln_wishart_norm(looks: f64, dim: usize) -> Result<f64> {
    let d = dim as f64;
    let mut acc = 0.5 * d * (d - 1.0) * LN_PI;
    for i in 1..=dim {
        acc += ln_gamma(looks - i as f64 + 1.0)?;
    }
    Ok(acc)
}

pub fn wishart_log_pdf(c: &HermitianMatrix, p: &WishartParams) -> Result<f64> {
    let sigma = &p.mean_cov;
    if c.dim() != sigma.dim() {
        return Err(Error::DimensionMismatch { left: c.dim(), right: sigma.dim() });
    }
    let l = p.looks;
    let d = c.dim() as f64;
    let chol = sigma.cholesky()?;
    let ln_c = c.log_det()?;
    let tr = chol.inverse().trace_product(c)?;
    Ok(l * d * l.ln() + (l - d) * ln_c - ln_wishart_norm(l, c.dim())? - l * chol.log_det() - l * tr)
}

/// Draws `C = (1/L) sum_i s_i s_i^H` with `s_i ~ CN(0, Sigma)`.
pub fn sample_wishart<R: Rng + ?Sized>(rng: &mut R, p: &WishartParams) -> Result<HermitianMatrix> {
    let l = p.looks;
    if l < 1.0 || l.fract() != 0.0 {
        return Err(Error::domain(format!("sampling requires a positive integer number of looks, got {l}")));
    }
    let dim = p.mean_cov.dim();
    let chol = p.mean_cov.cholesky()?;
    let mut acc = [[Complex64::new(0.0, 0.0); MAX_DIM]; MAX_DIM];
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    for _ in 0..l as usize {
        let mut z = [Complex64::new(0.0, 0.0); MAX_DIM];
        for zi in z.iter_mut().take(dim) {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *zi = Complex64::new(re * scale, im * scale);
        }
        let s = chol.mul_vec(&z[..dim]);
        for i in 0..dim {
            for j in i..dim {
                acc[i][j] += s[i] * s[j].conj();
            }
        }
    }
    let mut out = HermitianMatrix::zeros(dim);
    for i in 0..dim {
        out.set_diag(i, acc[i][i].re / l);
        for j in i + 1..dim {
            out.set(i, j, acc[i][j] / l);
        }
    }
    Ok(out)
}

/// `D_W(C, Sigma) = ln|Sigma| + tr(Sigma^-1 C)`.
pub fn wishart_distance(c: &HermitianMatrix, sigma: &HermitianMatrix) -> Result<f64> {
    if c.dim() != sigma.dim() {
        return Err(Error::DimensionMismatch { left: c.dim(), right: sigma.dim() });
    }
    c.cholesky()?;
    let chol = sigma.cholesky()?;
    Ok(chol.log_det() + chol.inverse().trace_product(c)?)
}
