//! Adaptive Gauss–Kronrod (7/15) quadrature on finite intervals.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] =
    [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

const MAX_DEPTH: usize = 50;
const MAX_INTERVALS: usize = 20_000;

struct Budget(usize);

fn kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let s = f(center - dx) + f(center + dx);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * half, ((kron - gauss) * half).abs())
}

fn adapt<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    whole: (f64, f64),
    tol: f64,
    depth: usize,
    budget: &mut Budget,
) -> Result<f64> {
    let (value, err) = whole;
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("integrand on [{a}, {b}]")));
    }
    // roundoff floor: the error estimate cannot shrink below a few ulps
    let floor = 50.0 * f64::EPSILON * value.abs();
    if err <= tol.max(floor)
        || depth >= MAX_DEPTH
        || budget.0 == 0
        || (b - a).abs() <= f64::EPSILON * a.abs().max(b.abs())
    {
        return Ok(value);
    }
    budget.0 -= 1;
    let mid = 0.5 * (a + b);
    let left = kronrod(f, a, mid);
    let right = kronrod(f, mid, b);
    Ok(adapt(f, a, mid, left, 0.5 * tol, depth + 1, budget)? + adapt(f, mid, b, right, 0.5 * tol, depth + 1, budget)?)
}

/// Integrates `f` over `[a, b]` until the Kronrod error estimate falls below
/// `max(abs_tol, rel_tol * |estimate|)`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> Result<f64> {
    integrate_pieces(&f, &[a, b], abs_tol, rel_tol)
}

/// Integrates over consecutive sub-intervals defined by `points` (sorted),
/// which lets callers place breakpoints around sharp features.
pub fn integrate_pieces<F: Fn(f64) -> f64>(f: &F, points: &[f64], abs_tol: f64, rel_tol: f64) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::domain("quadrature needs at least two points"));
    }
    let pieces: Vec<(f64, f64, (f64, f64))> =
        points.windows(2).filter(|w| w[1] > w[0]).map(|w| (w[0], w[1], kronrod(f, w[0], w[1]))).collect();
    let rough: f64 = pieces.iter().map(|p| p.2 .0.abs()).sum();
    let tol = abs_tol.max(rel_tol * rough);
    let share = tol / pieces.len().max(1) as f64;
    let mut budget = Budget(MAX_INTERVALS);
    let mut total = 0.0;
    for (a, b, whole) in pieces {
        total += adapt(f, a, b, whole, share, 0, &mut budget)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let v = integrate(|x| x.powi(5) - 2.0 * x * x + 1.0, -1.0, 2.0, 1e-14, 1e-14).unwrap();
        let exact = (64.0 - 1.0) / 6.0 - 2.0 * (8.0 + 1.0) / 3.0 + 3.0;
        assert!((v - exact).abs() < 1e-12);
    }

    #[test]
    fn gaussian_integral() {
        let v = integrate(|x| (-x * x).exp(), -10.0, 10.0, 1e-14, 1e-13).unwrap();
        assert!((v - std::f64::consts::PI.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn sharp_peak_with_breakpoints() {
        let s = 1e-3;
        let f = |x: f64| (-(x - 0.3) * (x - 0.3) / (2.0 * s * s)).exp();
        let pts = [0.0, 0.3 - 10.0 * s, 0.3, 0.3 + 10.0 * s, 1.0];
        let v = integrate_pieces(&f, &pts, 0.0, 1e-12).unwrap();
        let exact = s * (2.0 * std::f64::consts::PI).sqrt();
        assert!((v / exact - 1.0).abs() < 1e-10);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(integrate(|_| f64::NAN, 0.0, 1.0, 1e-10, 1e-10).is_err());
    }
}
