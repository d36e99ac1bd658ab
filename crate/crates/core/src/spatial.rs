//! Square patches around each pixel, geometric weights that decay with the
//! distance from the centre, and covariance-similarity weights from the
//! Wishart distance to the patch mean.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hermitian::HermitianMatrix;
use crate::image::PolsarImage;

/// Neighbour indices for every pixel, `win * win` per pixel, in raster
/// order of the offsets. Borders replicate the edge pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchIndex {
    win: usize,
    indices: Vec<usize>,
}

impl PatchIndex {
    pub fn win(&self) -> usize {
        self.win
    }

    pub fn patch_len(&self) -> usize {
        self.win * self.win
    }

    pub fn len(&self) -> usize {
        self.indices.len() / self.patch_len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn neighbors(&self, n: usize) -> &[usize] {
        let p = self.patch_len();
        &self.indices[n * p..(n + 1) * p]
    }
}

fn check_win(win: usize) -> Result<()> {
    if win < 3 || win.is_multiple_of(2) {
        return Err(Error::domain(format!("window side must be odd and at least 3, got {win}")));
    }
    Ok(())
}

pub fn extract_patches(width: usize, height: usize, win: usize) -> Result<PatchIndex> {
    check_win(win)?;
    if width < win || height < win {
        return Err(Error::domain(format!("image {width}x{height} is smaller than the {win}x{win} window")));
    }
    let half = (win / 2) as isize;
    let mut indices = Vec::with_capacity(width * height * win * win);
    for y in 0..height as isize {
        for x in 0..width as isize {
            for dy in -half..=half {
                for dx in -half..=half {
                    let yy = (y + dy).clamp(0, height as isize - 1) as usize;
                    let xx = (x + dx).clamp(0, width as isize - 1) as usize;
                    indices.push(yy * width + xx);
                }
            }
        }
    }
    Ok(PatchIndex { win, indices })
}

/// `sigma = 1 / (1 + d^2)` for each offset, normalized to sum to one.
pub fn geometric_weights(win: usize) -> Result<Vec<f64>> {
    check_win(win)?;
    let half = (win / 2) as isize;
    let mut w = Vec::with_capacity(win * win);
    for dy in -half..=half {
        for dx in -half..=half {
            w.push(1.0 / (1.0 + (dx * dx + dy * dy) as f64));
        }
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    Ok(w)
}

fn patch_omega(pixels: &[HermitianMatrix], nb: &[usize], out: &mut [f64]) -> Result<()> {
    let mut mean = HermitianMatrix::zeros(pixels[0].dim());
    let inv_len = 1.0 / nb.len() as f64;
    for &m in nb {
        mean.add_scaled(inv_len, &pixels[m]);
    }
    let chol = mean.cholesky()?;
    let ln_det = chol.log_det();
    let mean_inv = chol.inverse();
    for (o, &m) in out.iter_mut().zip(nb) {
        *o = -(ln_det + mean_inv.trace_product_unchecked(&pixels[m]));
    }
    let peak = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for o in out.iter_mut() {
        *o = (*o - peak).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
    Ok(())
}

/// Softmax of `-D_W(C_m, mean of patch n)` over each patch.
pub fn matrix_similarity_weights(image: &PolsarImage, patches: &PatchIndex) -> Result<Vec<f64>> {
    let p = patches.patch_len();
    let mut omega = vec![0.0; image.len() * p];
    omega
        .par_chunks_mut(p)
        .enumerate()
        .try_for_each(|(n, out)| patch_omega(image.pixels(), patches.neighbors(n), out))?;
    Ok(omega)
}

#[derive(Clone, Debug)]
pub struct SpatialWeights {
    patches: PatchIndex,
    gamma: Vec<f64>,
    omega: Vec<f64>,
}

impl SpatialWeights {
    pub fn build(image: &PolsarImage, win: usize) -> Result<Self> {
        let patches = extract_patches(image.width(), image.height(), win)?;
        let gamma = geometric_weights(win)?;
        let omega = matrix_similarity_weights(image, &patches)?;
        Ok(Self { patches, gamma, omega })
    }

    /// Assembles weights directly; used to test the updates with chosen
    /// weights.
    pub fn from_parts(patches: PatchIndex, gamma: Vec<f64>, omega: Vec<f64>) -> Result<Self> {
        let p = patches.patch_len();
        if gamma.len() != p || omega.len() != patches.len() * p {
            return Err(Error::DimensionMismatch { left: omega.len(), right: patches.len() * p });
        }
        Ok(Self { patches, gamma, omega })
    }

    pub fn win(&self) -> usize {
        self.patches.win()
    }

    pub fn patches(&self) -> &PatchIndex {
        &self.patches
    }

    pub fn neighbors(&self, n: usize) -> &[usize] {
        self.patches.neighbors(n)
    }

    /// Geometric weights of pixel `n`; identical for every pixel.
    pub fn gamma(&self, _n: usize) -> &[f64] {
        &self.gamma
    }

    pub fn omega(&self, n: usize) -> &[f64] {
        let p = self.patches.patch_len();
        &self.omega[n * p..(n + 1) * p]
    }

    /// `sum_m omega_{n,m} C_m` and `sum_m omega_{n,m} ln|C_m|` for each pixel.
    pub fn smooth(&self, covs: &[HermitianMatrix], log_dets: &[f64]) -> (Vec<HermitianMatrix>, Vec<f64>) {
        (0..covs.len())
            .into_par_iter()
            .map(|n| {
                let mut c = HermitianMatrix::zeros(covs[0].dim());
                let mut s = 0.0;
                for (&m, &w) in self.neighbors(n).iter().zip(self.omega(n)) {
                    c.add_scaled(w, &covs[m]);
                    s += w * log_dets[m];
                }
                (c, s)
            })
            .unzip()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermitian::HermitianMatrix;

    #[test]
    fn geometric_win3() {
        let w = geometric_weights(3).unwrap();
        assert!((w[4] - 3.0 / 13.0).abs() < 1e-15);
        assert!((w[1] - 1.5 / 13.0).abs() < 1e-15);
        assert!((w[0] - 1.0 / 13.0).abs() < 1e-15);
        assert!(w.iter().all(|&v| v > 0.0 && v <= w[4]));
    }

    #[test]
    fn geometric_symmetry_and_sum() {
        for win in [3, 5, 7] {
            let w = geometric_weights(win).unwrap();
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
            // 90 degree rotation: (r, c) -> (c, win - 1 - r)
            for r in 0..win {
                for c in 0..win {
                    assert_eq!(w[r * win + c], w[c * win + (win - 1 - r)]);
                }
            }
            let center = w[win * win / 2];
            assert!(w.iter().enumerate().all(|(i, &v)| i == win * win / 2 || v < center));
        }
        assert!(geometric_weights(4).is_err());
        assert!(geometric_weights(1).is_err());
    }

    #[test]
    fn patches_interior_and_corner() {
        let p = extract_patches(5, 5, 3).unwrap();
        let center = 2 * 5 + 2;
        let mut nb = p.neighbors(center).to_vec();
        nb.sort();
        assert_eq!(nb, vec![6, 7, 8, 11, 12, 13, 16, 17, 18]);
        assert_eq!(p.neighbors(0), &[0, 0, 1, 0, 0, 1, 5, 5, 6]);
        assert!(extract_patches(2, 5, 3).is_err());
    }

    #[test]
    fn patches_in_range() {
        let p = extract_patches(7, 9, 5).unwrap();
        assert_eq!(p.len(), 63);
        for n in 0..63 {
            assert_eq!(p.neighbors(n).len(), 25);
            assert!(p.neighbors(n).iter().all(|&m| m < 63));
        }
    }

    fn uniform_image(w: usize, h: usize) -> PolsarImage {
        PolsarImage::new(w, h, vec![HermitianMatrix::from_diagonal(&[1.0, 0.5, 0.25]); w * h]).unwrap()
    }

    #[test]
    fn uniform_patch_gives_uniform_omega() {
        let img = uniform_image(6, 5);
        let sw = SpatialWeights::build(&img, 3).unwrap();
        for n in 0..img.len() {
            assert!(sw.omega(n).iter().all(|&w| (w - 1.0 / 9.0).abs() < 1e-12));
        }
    }

    #[test]
    fn outlier_is_downweighted() {
        let mut px = vec![HermitianMatrix::identity(3); 25];
        px[12] = HermitianMatrix::scaled_identity(3, 100.0);
        let img = PolsarImage::new(5, 5, px).unwrap();
        let sw = SpatialWeights::build(&img, 3).unwrap();
        let nb = sw.neighbors(12);
        let idx = nb.iter().position(|&m| m == 12).unwrap();
        assert!(sw.omega(12)[idx] < 1.0 / 9.0);
        for n in 0..25 {
            assert!((sw.omega(n).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_shift_invariance() {
        let pixels: Vec<_> =
            (0..9).map(|i| HermitianMatrix::from_diagonal(&[1.0 + i as f64, 2.0, 0.5 + 0.1 * i as f64])).collect();
        let nb: Vec<usize> = (0..9).collect();
        let mut a = vec![0.0; 9];
        patch_omega(&pixels, &nb, &mut a).unwrap();
        let d: Vec<f64> = {
            let mut mean = HermitianMatrix::zeros(3);
            for p in &pixels {
                mean.add_scaled(1.0 / 9.0, p);
            }
            pixels.iter().map(|p| crate::wishart::wishart_distance(p, &mean).unwrap() + 7.5).collect()
        };
        let peak = d.iter().cloned().fold(f64::INFINITY, f64::min);
        let total: f64 = d.iter().map(|v| (-(v - peak)).exp()).sum();
        for (x, v) in a.iter().zip(&d) {
            assert!((x - (-(v - peak)).exp() / total).abs() < 1e-12);
        }
    }

    #[test]
    fn smoothing_uniform_data_is_identity() {
        let img = uniform_image(5, 5);
        let sw = SpatialWeights::build(&img, 3).unwrap();
        let ld: Vec<f64> = img.pixels().iter().map(|p| p.log_det().unwrap()).collect();
        let (c, s) = sw.smooth(img.pixels(), &ld);
        for n in 0..25 {
            assert!(c[n].max_abs_diff(&img.pixels()[n]) < 1e-14);
            assert!((s[n] - ld[n]).abs() < 1e-14);
        }
    }
}
