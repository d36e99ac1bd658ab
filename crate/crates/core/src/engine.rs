//! Variational Bayesian EM for the Wishart mixture with IGG-distributed
//! looks: responsibilities (VE), hyperparameter updates (VM), the lower
//! bound, cluster pruning and the outer loop.
//!
//! The update constants (9/2, 4, 3, ...) are specific to d = 3.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hermitian::HermitianMatrix;
use crate::igg::{igg_log_normalizer, igg_log_normalizer_approx, igg_moments, igg_solve_shape, IggMoments, IggParams};
use crate::image::{PolsarImage, DIAGONAL_JITTER};
use crate::init::{kmeans_init_restarts, seed_omega0, InitialAssignment};
use crate::spatial::SpatialWeights;
use crate::special::{digamma, ln_gamma, BesselRatioMode};

/// Matrix dimension the engine is specialized to.
pub const D: usize = 3;

const LN_PI: f64 = 1.144_729_885_849_400_2;
const LN_2PI: f64 = 1.837_877_066_409_345_5;
const CHUNK: usize = 2048;
/// Prior shape used when the look target cannot be bracketed.
pub const FALLBACK_SHAPE: f64 = 3.0;
/// Look count used when no estimate is available at all.
pub const FALLBACK_LOOKS: f64 = 4.0;

/// How the IGG rate `b_k` is updated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LookRateUpdate {
    /// `b0 + beta0 ln|Omega0| - beta_k ln|Omega_k| - sum_n r ln|C_n|`, the
    /// stationary point of the lower bound. Always at least `b0`.
    #[default]
    Conjugate,
    /// The conjugate rate with an extra `-3 (N_k + beta0 ln beta0)`.
    WithStirlingOffset,
}

impl std::str::FromStr for LookRateUpdate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "conjugate" => Ok(Self::Conjugate),
            "stirling-offset" | "printed" => Ok(Self::WithStirlingOffset),
            other => Err(Error::Config(format!("unknown look-rate update '{other}'"))),
        }
    }
}

impl std::fmt::Display for LookRateUpdate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Conjugate => write!(f, "conjugate"),
            Self::WithStirlingOffset => write!(f, "stirling-offset"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hyperparameters {
    /// Dirichlet concentration contributed by each pixel to each component.
    pub alpha0: f64,
    pub beta0: f64,
    pub b0: f64,
    pub c0: f64,
    /// Look count used to seed the IGG shape; the intensity-variance
    /// estimate is used when absent.
    pub nominal_looks: Option<f64>,
    pub k_init: usize,
    /// Odd patch side, or 0 to disable the spatial terms.
    pub win: usize,
    pub tol: f64,
    pub max_iter: usize,
    /// Minimum effective mass; defaults to `max(1, 1e-4 N)`.
    pub prune_threshold: Option<f64>,
    pub bessel_mode: BesselRatioMode,
    pub look_rate: LookRateUpdate,
    pub seed: u64,
    pub kmeans_rounds: usize,
    /// Number of k-means seedings; the one with the smallest objective is
    /// kept.
    pub kmeans_restarts: usize,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            alpha0: 0.1,
            beta0: 50.0,
            b0: 5.0,
            c0: 5.0,
            nominal_looks: None,
            k_init: 10,
            win: 0,
            tol: 1e-8,
            max_iter: 300,
            prune_threshold: None,
            bessel_mode: BesselRatioMode::PaperClosedForm,
            look_rate: LookRateUpdate::Conjugate,
            seed: 0,
            kmeans_rounds: 100,
            kmeans_restarts: 10,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        pos("alpha0", self.alpha0)?;
        pos("beta0", self.beta0)?;
        pos("b0", self.b0)?;
        pos("c0", self.c0)?;
        pos("tol", self.tol)?;
        if let Some(l) = self.nominal_looks {
            pos("nominal_looks", l)?;
        }
        if let Some(t) = self.prune_threshold {
            if !(t >= 0.0) {
                return Err(Error::Config(format!("prune_threshold must be non-negative, got {t}")));
            }
        }
        if self.win != 0 && (self.win < 3 || self.win.is_multiple_of(2)) {
            return Err(Error::Config(format!("win must be 0 or an odd number >= 3, got {}", self.win)));
        }
        if self.k_init == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        Ok(())
    }

    pub fn threshold_for(&self, n: usize) -> f64 {
        self.prune_threshold.unwrap_or_else(|| (1e-4 * n as f64).max(1.0))
    }
}

/// Per-cluster prior: `(Omega0)^-1` on the covariance scale and the IGG seed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClusterPrior {
    pub omega0_inv: HermitianMatrix,
    pub igg: IggParams,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClusterState {
    pub alpha: f64,
    pub beta: f64,
    pub omega_inv: HermitianMatrix,
    pub igg: IggParams,
    pub moments: IggMoments,
    pub e_log_det_sigma_inv: f64,
    pub n_k: f64,
}

/// `<ln|Sigma^-1|> = ln|Omega| - 9/(2 beta) <1/L> - 4/beta^2 <1/L^2>`.
pub fn expected_log_det_sigma_inv(omega_inv: &HermitianMatrix, beta: f64, moments: &IggMoments) -> Result<f64> {
    Ok(-omega_inv.log_det()? - 4.5 / beta * moments.e_inv_l - 4.0 / (beta * beta) * moments.e_inv_l2)
}

/// Per-pixel statistics the updates consume: the covariance and its log
/// determinant, optionally patch-averaged with the similarity weights.
#[derive(Clone, Debug)]
pub struct PixelStats {
    pub covs: Vec<HermitianMatrix>,
    pub log_dets: Vec<f64>,
    /// Unsmoothed `ln|C_n|`, used by the offset rate update.
    pub raw_log_dets: Vec<f64>,
}

impl PixelStats {
    pub fn raw(image: &PolsarImage) -> Result<Self> {
        if image.dim() != D {
            return Err(Error::DimensionMismatch { left: image.dim(), right: D });
        }
        let log_dets = image.pixels().par_iter().map(|p| p.log_det()).collect::<Result<Vec<f64>>>()?;
        Ok(Self { covs: image.pixels().to_vec(), raw_log_dets: log_dets.clone(), log_dets })
    }

    pub fn smoothed(image: &PolsarImage, weights: &SpatialWeights) -> Result<Self> {
        let raw = Self::raw(image)?;
        let (covs, log_dets) = weights.smooth(&raw.covs, &raw.raw_log_dets);
        Ok(Self { covs, log_dets, raw_log_dets: raw.raw_log_dets })
    }

    pub fn len(&self) -> usize {
        self.covs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.covs.is_empty()
    }
}

/// Row-major `N x K` matrix of responsibilities.
#[derive(Clone, Debug, PartialEq)]
pub struct Responsibilities {
    k: usize,
    data: Vec<f64>,
}

impl Responsibilities {
    pub fn from_labels(labels: &[usize], k: usize) -> Result<Self> {
        let mut data = vec![0.0; labels.len() * k];
        for (n, &l) in labels.iter().enumerate() {
            if l >= k {
                return Err(Error::domain(format!("label {l} out of range for k = {k}")));
            }
            data[n * k + l] = 1.0;
        }
        Ok(Self { k, data })
    }

    pub fn from_rows(k: usize, data: Vec<f64>) -> Result<Self> {
        if k == 0 || !data.len().is_multiple_of(k) {
            return Err(Error::DimensionMismatch { left: data.len(), right: k });
        }
        Ok(Self { k, data })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.data.len() / self.k
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.data[n * self.k..(n + 1) * self.k]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Index of the largest entry per row; ties go to the lowest index.
    pub fn labels(&self) -> Vec<usize> {
        self.data
            .chunks(self.k)
            .map(|row| {
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    pub fn masses(&self) -> Vec<f64> {
        let k = self.k;
        let partial: Vec<Vec<f64>> = self
            .data
            .par_chunks(CHUNK * k)
            .map(|chunk| {
                let mut acc = vec![0.0; k];
                for row in chunk.chunks(k) {
                    for (a, v) in acc.iter_mut().zip(row) {
                        *a += v;
                    }
                }
                acc
            })
            .collect();
        let mut out = vec![0.0; k];
        for p in partial {
            for (o, v) in out.iter_mut().zip(p) {
                *o += v;
            }
        }
        out
    }
}

/// Weighted sums over pixels, per cluster.
#[derive(Clone, Debug)]
struct SufficientStats {
    mass: Vec<f64>,
    cov: Vec<HermitianMatrix>,
    log_det: Vec<f64>,
    raw_log_det: Vec<f64>,
    neg_entropy: f64,
}

impl SufficientStats {
    fn zeros(k: usize) -> Self {
        Self {
            mass: vec![0.0; k],
            cov: vec![HermitianMatrix::zeros(D); k],
            log_det: vec![0.0; k],
            raw_log_det: vec![0.0; k],
            neg_entropy: 0.0,
        }
    }

    fn merge(&mut self, other: &Self) {
        for j in 0..self.mass.len() {
            self.mass[j] += other.mass[j];
            self.cov[j].add_scaled(1.0, &other.cov[j]);
            self.log_det[j] += other.log_det[j];
            self.raw_log_det[j] += other.raw_log_det[j];
        }
        self.neg_entropy += other.neg_entropy;
    }
}

fn sufficient_stats(stats: &PixelStats, r: &Responsibilities) -> SufficientStats {
    let k = r.k();
    let partial: Vec<SufficientStats> = (0..r.n().div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = SufficientStats::zeros(k);
            for n in c * CHUNK..((c + 1) * CHUNK).min(r.n()) {
                for (j, &w) in r.row(n).iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    acc.mass[j] += w;
                    acc.cov[j].add_scaled(w, &stats.covs[n]);
                    acc.log_det[j] += w * stats.log_dets[n];
                    acc.raw_log_det[j] += w * stats.raw_log_dets[n];
                    acc.neg_entropy += w * w.ln();
                }
            }
            acc
        })
        .collect();
    let mut out = SufficientStats::zeros(k);
    for p in &partial {
        out.merge(p);
    }
    out
}

/// Cached per-cluster quantities for the VE step.
struct VeCluster {
    omega: HermitianMatrix,
    e_l: f64,
    constant: f64,
}

/// Responsibilities from the current cluster states.
pub fn ve_step(stats: &PixelStats, clusters: &[ClusterState]) -> Result<Responsibilities> {
    let k = clusters.len();
    if k == 0 {
        return Err(Error::domain("no clusters"));
    }
    let alpha_sum: f64 = clusters.iter().map(|c| c.alpha).sum();
    let psi_sum = digamma(alpha_sum)?;
    let cached = clusters
        .iter()
        .map(|c| {
            let m = &c.moments;
            let e_ln_pi = digamma(c.alpha)? - psi_sum;
            Ok(VeCluster {
                omega: c.omega_inv.inverse()?,
                e_l: m.e_l,
                constant: 4.5 * m.e_ln_l + (3.0 + c.e_log_det_sigma_inv) * m.e_l - 4.0 * m.e_inv_l + e_ln_pi
                    - 3.0 * LN_PI
                    - 1.5 * LN_2PI,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut data = vec![0.0; stats.len() * k];
    data.par_chunks_mut(k).enumerate().try_for_each(|(n, row)| {
        let c = &stats.covs[n];
        let s = stats.log_dets[n];
        for (v, cl) in row.iter_mut().zip(&cached) {
            *v = cl.constant + (s - cl.omega.trace_product_unchecked(c)) * cl.e_l - 3.0 * s;
        }
        let peak = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !peak.is_finite() {
            return Err(Error::NumericalCollapse { pixel: n });
        }
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - peak).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
        Ok(())
    })?;
    Ok(Responsibilities { k, data })
}

/// Dirichlet parameters. Without spatial weights `alpha_k = N alpha0 + N_k`;
/// with them each pixel contributes the gamma-weighted average of its
/// neighbours' `alpha0 + r_{m,k}`.
pub fn vm_step_alpha(r: &Responsibilities, alpha0: f64, spatial: Option<&SpatialWeights>) -> Vec<f64> {
    let k = r.k();
    let n_pix = r.n();
    match spatial {
        None => r.masses().into_iter().map(|m| n_pix as f64 * alpha0 + m).collect(),
        Some(w) => {
            let partial: Vec<Vec<f64>> = (0..n_pix.div_ceil(CHUNK))
                .into_par_iter()
                .map(|c| {
                    let mut acc = vec![0.0; k];
                    for n in c * CHUNK..((c + 1) * CHUNK).min(n_pix) {
                        for (&m, &g) in w.neighbors(n).iter().zip(w.gamma(n)) {
                            for (a, &rv) in acc.iter_mut().zip(r.row(m)) {
                                *a += g * (alpha0 + rv);
                            }
                        }
                    }
                    acc
                })
                .collect();
            let mut out = vec![0.0; k];
            for p in partial {
                for (o, v) in out.iter_mut().zip(p) {
                    *o += v;
                }
            }
            out
        }
    }
}

/// `beta_k = beta0 + N_k` and `Omega_k^-1 = (beta0 Omega0^-1 + sum_n r C_n) / beta_k`.
pub fn vm_step_beta_omega(
    stats: &PixelStats,
    r: &Responsibilities,
    beta0: f64,
    priors: &[ClusterPrior],
) -> Result<Vec<(f64, HermitianMatrix)>> {
    let s = sufficient_stats(stats, r);
    Ok(beta_omega_from(&s, beta0, priors))
}

fn beta_omega_from(s: &SufficientStats, beta0: f64, priors: &[ClusterPrior]) -> Vec<(f64, HermitianMatrix)> {
    priors
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let beta = beta0 + s.mass[j];
            let mut m = p.omega0_inv.scale(beta0);
            m.add_scaled(1.0, &s.cov[j]);
            (beta, m.scale(1.0 / beta))
        })
        .collect()
}

/// Inputs to the IGG update for a single cluster.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IggUpdateInput {
    pub prior: IggParams,
    pub beta0: f64,
    pub ln_det_omega0_inv: f64,
    pub beta: f64,
    pub ln_det_omega_inv: f64,
    pub mass: f64,
    /// `sum_n r_{n,k} ln|C_n|` with the statistics used by the other updates.
    pub sum_log_det: f64,
    /// The same sum with unsmoothed `ln|C_n|`.
    pub sum_raw_log_det: f64,
}

/// `a_k`, `b_k`, `c_k` for one cluster.
pub fn igg_update(input: &IggUpdateInput, rule: LookRateUpdate, cluster: usize) -> Result<IggParams> {
    let IggUpdateInput { prior, beta0, ln_det_omega0_inv, beta, ln_det_omega_inv, mass, sum_log_det, sum_raw_log_det } =
        *input;
    let a = prior.a + 4.5 * mass;
    // ln|Omega| = -ln|Omega^-1|
    let common = prior.b - beta0 * ln_det_omega0_inv + beta * ln_det_omega_inv;
    let b = match rule {
        LookRateUpdate::Conjugate => common - sum_log_det,
        LookRateUpdate::WithStirlingOffset => common - sum_raw_log_det - 3.0 * (mass + beta0 * beta0.ln()),
    };
    let c = prior.c + 4.0 * (mass + 1.0 / beta0 - 1.0 / beta);
    let ok = |v: f64| v > 0.0 && v.is_finite();
    if !(ok(a) && ok(b) && ok(c)) {
        return Err(Error::InvalidIggParams { cluster, a, b, c, n_k: mass, beta });
    }
    Ok(IggParams { a, b, c })
}

/// IGG parameters for every cluster given this iteration's `beta_k` and
/// `Omega_k^-1`.
pub fn vm_step_igg(
    stats: &PixelStats,
    r: &Responsibilities,
    h: &Hyperparameters,
    priors: &[ClusterPrior],
    beta_omega: &[(f64, HermitianMatrix)],
) -> Result<Vec<IggParams>> {
    let s = sufficient_stats(stats, r);
    igg_from(&s, h, priors, beta_omega)
}

fn igg_from(
    s: &SufficientStats,
    h: &Hyperparameters,
    priors: &[ClusterPrior],
    beta_omega: &[(f64, HermitianMatrix)],
) -> Result<Vec<IggParams>> {
    priors
        .iter()
        .zip(beta_omega)
        .enumerate()
        .map(|(j, (p, (beta, omega_inv)))| {
            let input = IggUpdateInput {
                prior: p.igg,
                beta0: h.beta0,
                ln_det_omega0_inv: p.omega0_inv.log_det()?,
                beta: *beta,
                ln_det_omega_inv: omega_inv.log_det()?,
                mass: s.mass[j],
                sum_log_det: s.log_det[j],
                sum_raw_log_det: s.raw_log_det[j],
            };
            igg_update(&input, h.look_rate, j)
        })
        .collect()
}

/// Full VM step.
pub fn vm_step(
    stats: &PixelStats,
    r: &Responsibilities,
    h: &Hyperparameters,
    priors: &[ClusterPrior],
    spatial: Option<&SpatialWeights>,
) -> Result<Vec<ClusterState>> {
    let s = sufficient_stats(stats, r);
    vm_from(&s, r, h, priors, spatial)
}

fn vm_from(
    s: &SufficientStats,
    r: &Responsibilities,
    h: &Hyperparameters,
    priors: &[ClusterPrior],
    spatial: Option<&SpatialWeights>,
) -> Result<Vec<ClusterState>> {
    let alphas = vm_step_alpha(r, h.alpha0, spatial);
    let bo = beta_omega_from(s, h.beta0, priors);
    let iggs = igg_from(s, h, priors, &bo)?;
    alphas
        .into_iter()
        .zip(bo)
        .zip(iggs)
        .enumerate()
        .map(|(j, ((alpha, (beta, omega_inv)), igg))| {
            let moments = igg_moments(&igg, h.bessel_mode)?;
            Ok(ClusterState {
                alpha,
                beta,
                omega_inv,
                igg,
                moments,
                e_log_det_sigma_inv: expected_log_det_sigma_inv(&omega_inv, beta, &moments)?,
                n_k: s.mass[j],
            })
        })
        .collect()
}

/// The lower bound split into its terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElboTerms {
    /// `<ln p(C | Sigma, L, z)>`
    pub likelihood: f64,
    /// `<ln p(Sigma, L)>`
    pub prior_sigma_l: f64,
    /// `<ln q(Sigma, L)>`
    pub q_sigma_l: f64,
    /// `<ln p(z | pi)>`
    pub z_given_pi: f64,
    /// `<ln p(pi)>`
    pub pi_prior: f64,
    /// `<ln q(pi)>`
    pub pi_q: f64,
    /// `<ln q(z)>`
    pub z_q: f64,
}

impl ElboTerms {
    pub fn total(&self) -> f64 {
        self.likelihood + self.prior_sigma_l + self.z_given_pi + self.pi_prior - self.q_sigma_l - self.z_q - self.pi_q
    }
}

fn ln_dirichlet_norm(alphas: &[f64]) -> Result<f64> {
    let mut acc = ln_gamma(alphas.iter().sum())?;
    for &a in alphas {
        acc -= ln_gamma(a)?;
    }
    Ok(acc)
}

fn igg_log_norm(p: &IggParams, mode: BesselRatioMode) -> Result<f64> {
    match mode {
        BesselRatioMode::PaperClosedForm => igg_log_normalizer_approx(p),
        BesselRatioMode::NumericOracle => igg_log_normalizer(p),
    }
}

/// Lower bound for responsibilities `r` and the cluster states computed from
/// them.
pub fn compute_elbo(
    stats: &PixelStats,
    r: &Responsibilities,
    clusters: &[ClusterState],
    priors: &[ClusterPrior],
    h: &Hyperparameters,
) -> Result<ElboTerms> {
    let s = sufficient_stats(stats, r);
    elbo_from(&s, r.n(), clusters, priors, h)
}

fn elbo_from(
    s: &SufficientStats,
    n_pixels: usize,
    clusters: &[ClusterState],
    priors: &[ClusterPrior],
    h: &Hyperparameters,
) -> Result<ElboTerms> {
    let beta0 = h.beta0;
    let prior_alpha = n_pixels as f64 * h.alpha0;
    let alpha_sum: f64 = clusters.iter().map(|c| c.alpha).sum();
    let psi_sum = digamma(alpha_sum)?;
    let mut t = ElboTerms {
        likelihood: 0.0,
        prior_sigma_l: 0.0,
        q_sigma_l: 0.0,
        z_given_pi: 0.0,
        pi_prior: ln_dirichlet_norm(&vec![prior_alpha; clusters.len()])?,
        pi_q: ln_dirichlet_norm(&clusters.iter().map(|c| c.alpha).collect::<Vec<_>>())?,
        z_q: s.neg_entropy,
    };
    for (j, (c, p)) in clusters.iter().zip(priors).enumerate() {
        let m = &c.moments;
        let a_sig = c.e_log_det_sigma_inv;
        let omega = c.omega_inv.inverse()?;
        let mass = s.mass[j];
        t.likelihood += (m.e_l - 3.0) * s.log_det[j] + (3.0 + a_sig) * m.e_l * mass
            - m.e_l * omega.trace_product(&s.cov[j])?
            + mass * (4.5 * m.e_ln_l - 4.0 * m.e_inv_l - 3.0 * LN_PI - 1.5 * LN_2PI);

        let ln_det_omega0 = -p.omega0_inv.log_det()?;
        let tr0 = p.omega0_inv.trace_product(&omega)?;
        let pr = &p.igg;
        t.prior_sigma_l += (pr.a + 3.5) * m.e_ln_l + (beta0 * (3.0 - ln_det_omega0 - tr0) - pr.b) * m.e_l
            - (4.0 / beta0 + pr.c) * m.e_inv_l
            + (beta0 * m.e_l - 3.0) * a_sig
            + 4.5 * beta0.ln()
            - igg_log_norm(pr, h.bessel_mode)?
            - 1.5 * LN_2PI;

        let q = &c.igg;
        let ln_det_omega = -c.omega_inv.log_det()?;
        t.q_sigma_l +=
            (q.a + 3.5) * m.e_ln_l - (c.beta * ln_det_omega + q.b) * m.e_l - (4.0 / c.beta + q.c) * m.e_inv_l
                + (c.beta * m.e_l - 3.0) * a_sig
                - igg_log_norm(q, h.bessel_mode)?
                + 4.5 * c.beta.ln()
                - 1.5 * LN_2PI;

        let e_ln_pi = digamma(c.alpha)? - psi_sum;
        t.z_given_pi += mass * e_ln_pi;
        t.pi_prior += (prior_alpha - 1.0) * e_ln_pi;
        t.pi_q += (c.alpha - 1.0) * e_ln_pi;
    }
    if !t.total().is_finite() {
        return Err(Error::NonFinite(format!("{t:?}")));
    }
    Ok(t)
}

/// Drops clusters whose mass is below `threshold` and renormalizes the
/// remaining responsibilities. Returns the kept original indices.
pub fn prune_clusters(
    clusters: &[ClusterState],
    r: &Responsibilities,
    threshold: f64,
) -> Result<(Vec<ClusterState>, Responsibilities, Vec<usize>)> {
    let masses = r.masses();
    let keep: Vec<usize> = (0..r.k()).filter(|&j| masses[j] >= threshold).collect();
    if keep.is_empty() {
        return Err(Error::AllPruned { threshold });
    }
    let kept_clusters = keep.iter().filter_map(|&j| clusters.get(j).copied()).collect();
    if keep.len() == r.k() {
        return Ok((kept_clusters, r.clone(), keep));
    }
    let k = keep.len();
    let mut data = vec![0.0; r.n() * k];
    data.par_chunks_mut(k).enumerate().for_each(|(n, row)| {
        let src = r.row(n);
        for (v, &j) in row.iter_mut().zip(&keep) {
            *v = src[j];
        }
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            row.iter_mut().for_each(|v| *v /= total);
        } else {
            row.iter_mut().for_each(|v| *v = 1.0 / k as f64);
        }
    });
    Ok((kept_clusters, Responsibilities { k, data }, keep))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ElboTrace {
    pub values: Vec<f64>,
    /// Whether clusters were removed just before the matching value.
    pub pruned: Vec<bool>,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub labels: Vec<usize>,
    pub clusters: Vec<ClusterState>,
    pub priors: Vec<ClusterPrior>,
    pub responsibilities: Responsibilities,
    pub trace: ElboTrace,
    /// `<L_k>` per surviving cluster.
    pub enl: Vec<f64>,
    pub initial_k: usize,
}

impl FitResult {
    pub fn effective_k(&self) -> usize {
        self.clusters.len()
    }

    pub fn final_elbo(&self) -> f64 {
        self.trace.values.last().copied().unwrap_or(f64::NAN)
    }
}

fn at(iteration: usize) -> impl Fn(Error) -> Error {
    move |e| Error::AtIteration { iteration, source: Box::new(e) }
}

/// Per-cluster priors: `(Omega0)^-1 = I tr(mean) / d`, IGG shape solved so
/// that `<L>` matches the nominal or estimated look count.
pub fn seed_priors(assignment: &InitialAssignment, h: &Hyperparameters) -> Result<Vec<ClusterPrior>> {
    let omega0 = seed_omega0(assignment)?;
    let estimates: Vec<f64> = assignment.initial_enl.iter().flatten().copied().collect();
    let fallback = if estimates.is_empty() {
        FALLBACK_LOOKS
    } else {
        let mut e = estimates.clone();
        e.sort_by(|a, b| a.total_cmp(b));
        e[e.len() / 2]
    };
    omega0
        .into_iter()
        .enumerate()
        .map(|(j, omega0_inv)| {
            let looks = h.nominal_looks.or(assignment.initial_enl[j]).unwrap_or(fallback);
            let a = match igg_solve_shape(looks, h.b0, h.c0) {
                Ok(a) => a,
                Err(Error::NoBracket { .. }) => FALLBACK_SHAPE,
                Err(e) => return Err(e),
            };
            Ok(ClusterPrior { omega0_inv, igg: IggParams::new(a, h.b0, h.c0)? })
        })
        .collect()
}

/// Spatial weights and pixel statistics for an already jittered image.
pub fn prepare(image: &PolsarImage, win: usize) -> Result<(PixelStats, Option<SpatialWeights>)> {
    if win == 0 {
        return Ok((PixelStats::raw(image)?, None));
    }
    let w = SpatialWeights::build(image, win)?;
    Ok((PixelStats::smoothed(image, &w)?, Some(w)))
}

/// Runs the algorithm from k-means initialization.
pub fn fit(image: &PolsarImage, h: &Hyperparameters) -> Result<FitResult> {
    h.validate()?;
    let image = image.jittered(DIAGONAL_JITTER);
    let mut rng = ChaCha8Rng::seed_from_u64(h.seed);
    rng.set_stream(1);
    let k = h.k_init.min(image.len());
    let kmeans =
        |k: usize, rng: &mut ChaCha8Rng| kmeans_init_restarts(&image, k, rng, h.kmeans_rounds, h.kmeans_restarts);
    let assignment = match kmeans(k, &mut rng) {
        Err(Error::DegenerateData(_)) if k > 1 => kmeans(1, &mut rng)?,
        other => other?,
    };
    fit_prepared(&image, h, &assignment)
}

/// Runs the algorithm from a given initial assignment. The image is used as
/// is (no jitter).
pub fn fit_prepared(image: &PolsarImage, h: &Hyperparameters, assignment: &InitialAssignment) -> Result<FitResult> {
    h.validate()?;
    let (stats, spatial) = prepare(image, h.win)?;
    let priors = seed_priors(assignment, h)?;
    let r0 = Responsibilities::from_labels(&assignment.labels, assignment.k())?;
    run(&stats, spatial.as_ref(), h, priors, r0)
}

/// The VE / VM / bound loop from initial responsibilities.
pub fn run(
    stats: &PixelStats,
    spatial: Option<&SpatialWeights>,
    h: &Hyperparameters,
    mut priors: Vec<ClusterPrior>,
    mut r: Responsibilities,
) -> Result<FitResult> {
    h.validate()?;
    if priors.len() != r.k() || r.n() != stats.len() {
        return Err(Error::DimensionMismatch { left: priors.len(), right: r.k() });
    }
    let initial_k = r.k();
    let threshold = h.threshold_for(stats.len());

    // initial VM from the hard assignment
    let (kept_r, kept) = prune_step(&[], &r, threshold).map_err(at(0))?;
    r = kept_r;
    priors = kept.iter().map(|&j| priors[j]).collect();
    let mut clusters = vm_step(stats, &r, h, &priors, spatial).map_err(at(0))?;

    let mut trace = ElboTrace { values: Vec::new(), pruned: Vec::new(), converged: false, iterations: 0 };
    for it in 1..=h.max_iter {
        r = ve_step(stats, &clusters).map_err(at(it))?;
        let (kept_r, kept) = prune_step(&clusters, &r, threshold).map_err(at(it))?;
        let pruned = kept.len() < r.k();
        r = kept_r;
        if pruned {
            priors = kept.iter().map(|&j| priors[j]).collect();
        }
        let s = sufficient_stats(stats, &r);
        clusters = vm_from(&s, &r, h, &priors, spatial).map_err(at(it))?;
        let elbo = elbo_from(&s, r.n(), &clusters, &priors, h).map_err(at(it))?.total();
        let prev = trace.values.last().copied();
        trace.values.push(elbo);
        trace.pruned.push(pruned);
        trace.iterations = it;
        if let Some(p) = prev {
            if !pruned && ((elbo - p) / p).abs() <= h.tol {
                trace.converged = true;
                break;
            }
        }
    }
    let labels = r.labels();
    let enl = clusters.iter().map(|c| c.moments.e_l).collect();
    Ok(FitResult { labels, clusters, priors, responsibilities: r, trace, enl, initial_k })
}

fn prune_step(
    clusters: &[ClusterState],
    r: &Responsibilities,
    threshold: f64,
) -> Result<(Responsibilities, Vec<usize>)> {
    let (_, r2, keep) = prune_clusters(clusters, r, threshold)?;
    Ok((r2, keep))
}
