//! K-means on standardized channel intensities, prior scale seeding, and the
//! intensity-variance look estimate.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hermitian::HermitianMatrix;
use crate::image::PolsarImage;

#[derive(Clone, Debug, PartialEq)]
pub struct InitialAssignment {
    pub labels: Vec<usize>,
    pub cluster_means: Vec<HermitianMatrix>,
    /// Intensity-variance estimate per cluster; `None` when a channel is
    /// constant.
    pub initial_enl: Vec<Option<f64>>,
}

impl InitialAssignment {
    pub fn k(&self) -> usize {
        self.cluster_means.len()
    }

    /// Builds an assignment from given labels in `0..k`; clusters with no
    /// members are dropped and labels compacted.
    pub fn from_labels(image: &PolsarImage, labels: &[usize]) -> Result<Self> {
        if labels.len() != image.len() {
            return Err(Error::DimensionMismatch { left: labels.len(), right: image.len() });
        }
        let k = labels.iter().max().map_or(0, |m| m + 1);
        let mut counts = vec![0usize; k];
        labels.iter().for_each(|&l| counts[l] += 1);
        let mut remap = vec![usize::MAX; k];
        let mut next = 0;
        for (j, &c) in counts.iter().enumerate() {
            if c > 0 {
                remap[j] = next;
                next += 1;
            }
        }
        let labels: Vec<usize> = labels.iter().map(|&l| remap[l]).collect();
        let mut means = vec![HermitianMatrix::zeros(image.dim()); next];
        let mut sizes = vec![0usize; next];
        for (p, &l) in image.pixels().iter().zip(&labels) {
            means[l].add_scaled(1.0, p);
            sizes[l] += 1;
        }
        for (m, &s) in means.iter_mut().zip(&sizes) {
            *m = m.scale(1.0 / s as f64);
        }
        let mut out = Self { labels, cluster_means: means, initial_enl: Vec::new() };
        out.initial_enl = intensity_variance_enl(&out, image).into_iter().map(|r| r.ok()).collect();
        Ok(out)
    }
}

fn standardized_features(image: &PolsarImage) -> (Vec<f64>, usize) {
    let d = image.dim();
    let n = image.len();
    let mut f = vec![0.0; n * d];
    for (i, p) in image.pixels().iter().enumerate() {
        for c in 0..d {
            f[i * d + c] = p.diag(c);
        }
    }
    for c in 0..d {
        let mean = (0..n).map(|i| f[i * d + c]).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (f[i * d + c] - mean).powi(2)).sum::<f64>() / n as f64;
        let inv = if var > 0.0 { 1.0 / var.sqrt() } else { 0.0 };
        for i in 0..n {
            f[i * d + c] = (f[i * d + c] - mean) * inv;
        }
    }
    (f, d)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centers: &[f64], d: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.chunks(d).enumerate() {
        let dist = sq_dist(point, c);
        if dist < best.1 {
            best = (j, dist);
        }
    }
    best
}

fn plus_plus_seed<R: Rng + ?Sized>(f: &[f64], d: usize, k: usize, rng: &mut R) -> Vec<f64> {
    let n = f.len() / d;
    let first = rng.random_range(0..n);
    let mut centers = f[first * d..(first + 1) * d].to_vec();
    let mut dist: Vec<f64> = f.chunks(d).map(|p| sq_dist(p, &centers)).collect();
    while centers.len() / d < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &w) in dist.iter().enumerate() {
                acc += w;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = f[pick * d..(pick + 1) * d].to_vec();
        for (i, p) in f.chunks(d).enumerate() {
            dist[i] = dist[i].min(sq_dist(p, &c));
        }
        centers.extend(c);
    }
    centers
}

/// Lloyd rounds; returns labels and the within-cluster sum of squares after
/// each round.
fn lloyd(f: &[f64], d: usize, mut centers: Vec<f64>, max_rounds: usize) -> (Vec<usize>, Vec<f64>) {
    let k = centers.len() / d;
    let mut labels = vec![usize::MAX; f.len() / d];
    let mut history = Vec::new();
    for _ in 0..max_rounds.max(1) {
        let assigned: Vec<(usize, f64)> = f.par_chunks(d).map(|p| nearest(p, &centers, d)).collect();
        let changed = assigned.iter().zip(&labels).any(|(a, &l)| a.0 != l);
        labels = assigned.iter().map(|a| a.0).collect();
        history.push(assigned.iter().map(|a| a.1).sum());
        if !changed {
            break;
        }
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for (p, &l) in f.chunks(d).zip(&labels) {
            counts[l] += 1;
            for c in 0..d {
                sums[l * d + c] += p[c];
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                for c in 0..d {
                    centers[j * d + c] = sums[j * d + c] / counts[j] as f64;
                }
            }
        }
    }
    (labels, history)
}

/// K-means++ seeding followed by Lloyd rounds on the standardized diagonal
/// intensities.
pub fn kmeans_init<R: Rng + ?Sized>(
    image: &PolsarImage,
    k: usize,
    rng: &mut R,
    max_rounds: usize,
) -> Result<InitialAssignment> {
    kmeans_init_restarts(image, k, rng, max_rounds, 1)
}

/// Runs `restarts` seedings and keeps the labelling with the smallest
/// within-cluster sum of squares; ties keep the earliest.
pub fn kmeans_init_restarts<R: Rng + ?Sized>(
    image: &PolsarImage,
    k: usize,
    rng: &mut R,
    max_rounds: usize,
    restarts: usize,
) -> Result<InitialAssignment> {
    if k == 0 {
        return Err(Error::domain("k must be at least 1"));
    }
    if image.len() < k {
        return Err(Error::domain(format!("k = {k} exceeds the pixel count {}", image.len())));
    }
    let (f, d) = standardized_features(image);
    if k > 1 && f.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateData("all intensity vectors are identical".into()));
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..restarts.max(1) {
        let centers = plus_plus_seed(&f, d, k, rng);
        let (labels, history) = lloyd(&f, d, centers, max_rounds);
        let objective = *history.last().unwrap();
        if best.as_ref().is_none_or(|(b, _)| objective < *b) {
            best = Some((objective, labels));
        }
    }
    InitialAssignment::from_labels(image, &best.unwrap().1)
}

/// Scaled identity `I tr(mean) / d` per cluster.
pub fn seed_omega0(assignment: &InitialAssignment) -> Result<Vec<HermitianMatrix>> {
    assignment
        .cluster_means
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let t = m.trace();
            if !(t > 0.0) || !t.is_finite() {
                return Err(Error::ZeroTrace(k));
            }
            Ok(HermitianMatrix::scaled_identity(m.dim(), t / m.dim() as f64))
        })
        .collect()
}

/// `mean^2 / var` of a sample of intensities.
pub fn enl_from_intensities(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var > 0.0 && mean.is_finite() {
        Some(mean * mean / var)
    } else {
        None
    }
}

/// Per cluster: the median over channels of `mean^2 / var` of the diagonal
/// intensities.
pub fn intensity_variance_enl(assignment: &InitialAssignment, image: &PolsarImage) -> Vec<Result<f64>> {
    let d = image.dim();
    let mut channels: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); d]; assignment.k()];
    for (p, &l) in image.pixels().iter().zip(&assignment.labels) {
        for (c, ch) in channels[l].iter_mut().enumerate() {
            ch.push(p.diag(c));
        }
    }
    channels
        .iter()
        .enumerate()
        .map(|(k, chs)| {
            let mut est = Vec::with_capacity(d);
            for (c, ch) in chs.iter().enumerate() {
                est.push(enl_from_intensities(ch).ok_or(Error::ZeroVariance { cluster: k, channel: c })?);
            }
            est.sort_by(|a, b| a.total_cmp(b));
            Ok(if d % 2 == 1 { est[d / 2] } else { 0.5 * (est[d / 2 - 1] + est[d / 2]) })
        })
        .collect()
}
