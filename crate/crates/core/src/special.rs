//! Special functions: log-gamma, its Stirling shortcut, digamma, the modified
//! Bessel function of the second kind `K_v(x)` for real order, and two
//! closed-form approximations of Bessel ratios built from the midpoints of
//! known two-sided bounds.
//!
//! `K_v(x)` is carried in log space. For orders below [`DEBYE_MIN_ORDER`]
//! it uses Temme's series (x < 2) or Steed's continued fraction (x >= 2) for
//! the fractional order, then climbs with the forward recurrence on ratios.
//! Larger orders use the Debye uniform asymptotic expansion.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Orders at or above this use the uniform asymptotic expansion.
pub const DEBYE_MIN_ORDER: f64 = 100.0;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const SERIES_EPS: f64 = 1e-16;
const MAX_TERMS: usize = 100_000;

/// Which evaluation route the Bessel ratios take.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum BesselRatioMode {
    /// Midpoints of the two-sided ratio bounds. Cheap and closed form.
    #[default]
    PaperClosedForm,
    /// Ratios of log-space `K_v` evaluations.
    NumericOracle,
}

impl std::str::FromStr for BesselRatioMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "closed" | "closed-form" | "paperclosedform" => Ok(Self::PaperClosedForm),
            "numeric" | "oracle" | "numericoracle" => Ok(Self::NumericOracle),
            other => Err(Error::Config(format!("unknown bessel mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for BesselRatioMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::PaperClosedForm => write!(f, "closed"),
            Self::NumericOracle => write!(f, "numeric"),
        }
    }
}

pub fn ln_gamma(z: f64) -> Result<f64> {
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::domain(format!("ln_gamma requires z > 0, got {z}")));
    }
    Ok(statrs::function::gamma::ln_gamma(z))
}

/// `(z - 1/2) ln z - z + ln(2 pi) / 2`, valid as an approximation for z > 2.
pub fn stirling_ln_gamma(z: f64) -> Result<f64> {
    if !(z > 2.0) || !z.is_finite() {
        return Err(Error::domain(format!("stirling_ln_gamma requires z > 2, got {z}")));
    }
    Ok((z - 0.5) * z.ln() - z + 0.5 * LN_2PI)
}

/// `ln Gamma(z - m)` obtained from `ln Gamma(z)` by stepping down `m` unit
/// strips.
pub fn ln_gamma_shift(z: f64, m: u32) -> Result<f64> {
    if m == 0 {
        return Err(Error::domain("ln_gamma_shift requires m >= 1"));
    }
    if !(z - m as f64 > 0.0) {
        return Err(Error::domain(format!("ln_gamma_shift requires z - m > 0, got z = {z}, m = {m}")));
    }
    let mut acc = ln_gamma(z)?;
    for k in 1..=m {
        acc -= (z - k as f64).ln();
    }
    Ok(acc)
}

pub fn digamma(z: f64) -> Result<f64> {
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::domain(format!("digamma requires z > 0, got {z}")));
    }
    Ok(statrs::function::gamma::digamma(z))
}

fn chebev(c: &[f64], x: f64) -> f64 {
    let y2 = 2.0 * x;
    let (mut d, mut dd) = (0.0, 0.0);
    for &cj in c[1..].iter().rev() {
        let sv = d;
        d = y2 * d - dd + cj;
        dd = sv;
    }
    x * d - dd + 0.5 * c[0]
}

/// Returns `(gam1, gam2, 1/Gamma(1+mu), 1/Gamma(1-mu))` for |mu| <= 1/2.
fn temme_gammas(mu: f64) -> (f64, f64, f64, f64) {
    const C1: [f64; 7] = [
        -1.142_022_680_371_168e0,
        6.516_511_267_073_7e-3,
        3.087_090_173_086e-4,
        -3.470_626_964_9e-6,
        6.943_766_4e-9,
        3.677_95e-11,
        -1.356e-13,
    ];
    const C2: [f64; 8] = [
        1.843_740_587_300_905e0,
        -7.685_284_084_478_67e-2,
        1.271_927_136_654_6e-3,
        -4.971_736_704_2e-6,
        -3.312_611_98e-8,
        2.423_096e-10,
        -1.702e-13,
        -1.49e-15,
    ];
    let xx = 8.0 * mu * mu - 1.0;
    let gam1 = chebev(&C1, xx);
    let gam2 = chebev(&C2, xx);
    (gam1, gam2, gam2 - mu * gam1, gam2 + mu * gam1)
}

/// `(ln K_nu(x), K_{nu+1}(x) / K_nu(x))` via Temme/Steed plus recurrence.
fn temme_log(nu: f64, x: f64) -> Result<(f64, f64)> {
    let nl = (nu + 0.5).floor();
    let mu = nu - nl;
    let mu2 = mu * mu;
    let xi = 1.0 / x;
    let xi2 = 2.0 * xi;

    let (mut ln_k, mut ratio) = if x < 2.0 {
        let x2 = 0.5 * x;
        let pimu = PI * mu;
        let fact = if pimu.abs() < SERIES_EPS { 1.0 } else { pimu / pimu.sin() };
        let d = -x2.ln();
        let e = mu * d;
        let fact2 = if e.abs() < SERIES_EPS { 1.0 } else { e.sinh() / e };
        let (gam1, gam2, gampl, gammi) = temme_gammas(mu);
        let mut ff = fact * (gam1 * e.cosh() + gam2 * fact2 * d);
        let mut sum = ff;
        let ee = e.exp();
        let mut p = 0.5 * ee / gampl;
        let mut q = 0.5 / (ee * gammi);
        let mut c = 1.0;
        let dd = x2 * x2;
        let mut sum1 = p;
        let mut converged = false;
        for i in 1..MAX_TERMS {
            let fi = i as f64;
            ff = (fi * ff + p + q) / (fi * fi - mu2);
            c *= dd / fi;
            p /= fi - mu;
            q /= fi + mu;
            let del = c * ff;
            sum += del;
            sum1 += c * (p - fi * ff);
            if del.abs() < sum.abs() * SERIES_EPS {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NonFinite(format!("K series did not converge at nu={nu}, x={x}")));
        }
        (sum.ln(), sum1 * xi2 / sum)
    } else {
        let mut b = 2.0 * (1.0 + x);
        let mut d = 1.0 / b;
        let mut delh = d;
        let mut h = d;
        let mut q1 = 0.0;
        let mut q2 = 1.0;
        let a1 = 0.25 - mu2;
        let mut q = a1;
        let mut c = a1;
        let mut a = -a1;
        let mut s = 1.0 + q * delh;
        let mut converged = false;
        for i in 2..MAX_TERMS {
            let fi = i as f64;
            a -= 2.0 * (fi - 1.0);
            c = -a * c / fi;
            let qnew = (q1 - b * q2) / a;
            q1 = q2;
            q2 = qnew;
            q += c * qnew;
            b += 2.0;
            d = 1.0 / (b + a * d);
            delh *= b * d - 1.0;
            h += delh;
            let dels = q * delh;
            s += dels;
            if (dels / s).abs() < SERIES_EPS {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NonFinite(format!("K continued fraction did not converge at nu={nu}, x={x}")));
        }
        h *= a1;
        (0.5 * (PI / (2.0 * x)).ln() - x - s.ln(), (mu + x + 0.5 - h) * xi)
    };

    for i in 1..=(nl as usize) {
        ln_k += ratio.ln();
        ratio = (mu + i as f64) * xi2 + 1.0 / ratio;
    }
    Ok((ln_k, ratio))
}

/// Debye expansion of `ln K_nu(x)` for large order.
fn debye_log(nu: f64, x: f64) -> f64 {
    let z = x / nu;
    let s = (1.0 + z * z).sqrt();
    let t = 1.0 / s;
    let eta = s - (1.0 / z).asinh();
    let t2 = t * t;
    let u1 = t * (3.0 - 5.0 * t2) / 24.0;
    let u2 = t2 * (81.0 - 462.0 * t2 + 385.0 * t2 * t2) / 1152.0;
    let u3 = t * t2 * (30375.0 - 369_603.0 * t2 + 765_765.0 * t2 * t2 - 425_425.0 * t2 * t2 * t2) / 414_720.0;
    let t4 = t2 * t2;
    let u4 = t4
        * (4_465_125.0 - 94_121_676.0 * t2 + 349_922_430.0 * t4 - 446_185_740.0 * t4 * t2 + 185_910_725.0 * t4 * t4)
        / 39_813_120.0;
    let inv = 1.0 / nu;
    let series = 1.0 - inv * (u1 - inv * (u2 - inv * (u3 - inv * u4)));
    0.5 * (PI / (2.0 * nu)).ln() - nu * eta - 0.5 * s.ln() + series.ln()
}

fn check_bessel_args(v: f64, x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::domain(format!("K_v(x) requires x > 0, got {x}")));
    }
    if !v.is_finite() {
        return Err(Error::domain(format!("K_v(x) requires finite order, got {v}")));
    }
    Ok(v.abs())
}

/// `ln K_v(x)` for real `v` and `x > 0`.
pub fn ln_bessel_k(v: f64, x: f64) -> Result<f64> {
    let nu = check_bessel_args(v, x)?;
    if nu >= DEBYE_MIN_ORDER {
        Ok(debye_log(nu, x))
    } else {
        Ok(temme_log(nu, x)?.0)
    }
}

/// `ln K_v(x)` together with `K_{|v|+1}(x) / K_{|v|}(x)`.
pub fn ln_bessel_k_with_ratio(v: f64, x: f64) -> Result<(f64, f64)> {
    let nu = check_bessel_args(v, x)?;
    if nu >= DEBYE_MIN_ORDER {
        let lo = debye_log(nu, x);
        Ok((lo, (debye_log(nu + 1.0, x) - lo).exp()))
    } else {
        temme_log(nu, x)
    }
}

/// `K_v(x)` in linear space. Fails with `Overflow`/`Underflow` when the value
/// is not representable; use [`ln_bessel_k`] instead in that regime.
pub fn bessel_k(v: f64, x: f64) -> Result<f64> {
    let ln = ln_bessel_k(v, x)?;
    if ln > f64::MAX.ln() {
        return Err(Error::Overflow(ln));
    }
    let value = ln.exp();
    if value < f64::MIN_POSITIVE {
        return Err(Error::Underflow(ln));
    }
    Ok(value)
}

/// Two-sided bounds on `K_{a+1}(x) / K_a(x)`, valid for `a >= 0`.
pub fn ratio_up_bounds(a: f64, x: f64) -> (f64, f64) {
    let lower = (a + (x * x + a * a).sqrt()) / x;
    let ah = a + 0.5;
    let upper = (ah + (x * x + ah * ah).sqrt()) / x;
    (lower, upper)
}

/// Two-sided bounds on `K'_a(x) / K_a(x)` (argument derivative), valid for
/// `a > 1`. Returned as `(lower, upper)`, both negative.
pub fn logderiv_bounds(a: f64, x: f64) -> (f64, f64) {
    let q = a * a / (x * x);
    let lower = -(a / (a - 1.0) + q).sqrt();
    let upper = -(1.0 + q).sqrt();
    (lower, upper)
}

/// `K_{a+1}(x) / K_a(x)`.
pub fn bessel_ratio_up(a: f64, x: f64, mode: BesselRatioMode) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::domain(format!("ratio requires x > 0, got {x}")));
    }
    match mode {
        BesselRatioMode::PaperClosedForm => {
            if !(a >= 0.0) {
                return Err(Error::domain(format!("closed-form ratio requires a >= 0, got {a}")));
            }
            let (lo, hi) = ratio_up_bounds(a, x);
            Ok(0.5 * (lo + hi))
        }
        BesselRatioMode::NumericOracle => {
            if a >= 0.0 {
                Ok(ln_bessel_k_with_ratio(a, x)?.1)
            } else {
                Ok((ln_bessel_k(a + 1.0, x)? - ln_bessel_k(a, x)?).exp())
            }
        }
    }
}

/// `K'_a(x) / K_a(x)` with the derivative taken in the argument.
pub fn bessel_logderiv_ratio(a: f64, x: f64, mode: BesselRatioMode) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::domain(format!("ratio requires x > 0, got {x}")));
    }
    match mode {
        BesselRatioMode::PaperClosedForm => {
            if !(a > 1.0) {
                return Err(Error::domain(format!("closed-form log-derivative requires a > 1, got {a}")));
            }
            let (lo, hi) = logderiv_bounds(a, x);
            Ok(0.5 * (lo + hi))
        }
        BesselRatioMode::NumericOracle => {
            // K'_a = -K_{a-1} - (a / x) K_a keeps the dominant term exact
            let down = if a >= 1.0 {
                1.0 / ln_bessel_k_with_ratio(a - 1.0, x)?.1
            } else {
                (ln_bessel_k(a - 1.0, x)? - ln_bessel_k(a, x)?).exp()
            };
            Ok(-a / x - down)
        }
    }
}
