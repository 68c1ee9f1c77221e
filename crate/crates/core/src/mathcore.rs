//! Normal-distribution primitives and the bivariate normal CDF.
//!
//! The checked entry points (`std_normal_cdf`, `bvn_cdf`, ...) validate their
//! inputs and return [`Result`]. The unchecked kernels (`normal_cdf`, `bvn`,
//! ...) skip validation and are what the estimator and simulator call in their
//! inner loops.
//!
//! The exact bivariate CDF follows Genz's BVND scheme (Drezner–Wesolowsky
//! with Gauss–Legendre quadrature, 6/12/20 points chosen by `|r|`, plus an
//! asymptotic expansion for `|r| >= 0.925`).

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use statrs::function::erf;

use crate::error::{Error, Result};

const TWO_PI: f64 = 2.0 * PI;
const INV_SQRT_TWO_PI: f64 = 0.398_942_280_401_432_7;

/// A probability in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Probability(f64);

impl Probability {
    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(Self(value))
        } else {
            Err(Error::Domain(format!("probability {value} outside [0, 1]")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Probability {
    type Error = Error;
    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<Probability> for f64 {
    fn from(p: Probability) -> f64 {
        p.0
    }
}

/// A latent correlation strictly inside `(-1, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct LatentCorrelation(f64);

impl LatentCorrelation {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && value.abs() < 1.0 {
            Ok(Self(value))
        } else {
            Err(Error::Domain(format!(
                "latent correlation {value} outside (-1, 1)"
            )))
        }
    }

    /// Clamps `value` into `[-(1 - eps), 1 - eps]`. Returns the correlation
    /// and whether clamping was applied.
    pub fn clamped(value: f64, eps: f64) -> (Self, bool) {
        let bound = 1.0 - eps;
        if value > bound {
            (Self(bound), true)
        } else if value < -bound {
            (Self(-bound), true)
        } else {
            (Self(value), false)
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Which evaluation of the bivariate normal CDF to use.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phi2Mode {
    #[default]
    Exact,
    /// First-order expansion around `r = 0`.
    Linear,
}

fn finite(x: f64, what: &str) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::Domain(format!("{what} must be finite, got {x}")))
    }
}

/// Standard normal CDF, no input validation.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal density, no input validation.
#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    INV_SQRT_TWO_PI * (-0.5 * x * x).exp()
}

/// Standard normal quantile for `p` in `(0, 1)`, no input validation.
///
/// Starts from the inverse complementary error function and polishes with
/// one Halley step against [`normal_cdf`].
pub fn normal_quantile(p: f64) -> f64 {
    if p == 0.5 {
        return 0.0;
    }
    let x = -SQRT_2 * erf::erfc_inv(2.0 * p);
    let e = normal_cdf(x) - p;
    let u = e * (TWO_PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}

pub fn std_normal_cdf(x: f64) -> Result<Probability> {
    let x = finite(x, "x")?;
    Ok(Probability(normal_cdf(x).clamp(0.0, 1.0)))
}

pub fn std_normal_pdf(x: f64) -> Result<f64> {
    Ok(normal_pdf(finite(x, "x")?))
}

pub fn std_normal_quantile(p: Probability) -> Result<f64> {
    let p = p.value();
    if p <= 0.0 || p >= 1.0 {
        return Err(Error::Domain(format!(
            "quantile requires 0 < p < 1, got {p}"
        )));
    }
    Ok(normal_quantile(p))
}

/// Half-rules of Gauss–Legendre quadrature: the negative nodes of the
/// symmetric n-point rule on [-1, 1] and their weights.
struct HalfRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

fn gauss_legendre_half(n: usize) -> HalfRule {
    let mut nodes = Vec::with_capacity(n / 2);
    let mut weights = Vec::with_capacity(n / 2);
    for i in 0..n / 2 {
        // Chebyshev-like initial guess for the i-th largest root, then Newton.
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let k = k as f64;
                let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes.push(-x);
        weights.push(2.0 / ((1.0 - x * x) * dp * dp));
    }
    HalfRule { nodes, weights }
}

fn rule_for(r_abs: f64) -> &'static HalfRule {
    static RULES: OnceLock<[HalfRule; 3]> = OnceLock::new();
    let rules = RULES.get_or_init(|| {
        [
            gauss_legendre_half(6),
            gauss_legendre_half(12),
            gauss_legendre_half(20),
        ]
    });
    if r_abs < 0.3 {
        &rules[0]
    } else if r_abs < 0.75 {
        &rules[1]
    } else {
        &rules[2]
    }
}

/// Upper orthant probability `P(X > h, Y > k)` for a standard bivariate
/// normal with correlation `r`, `|r| < 1`.
fn bvnd(h: f64, k: f64, r: f64) -> f64 {
    let rule = rule_for(r.abs());
    let mut hk = h * k;
    let mut bvn = 0.0;
    if r.abs() < 0.925 {
        let hs = 0.5 * (h * h + k * k);
        let asr = r.asin();
        for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
            let sn = (asr * (x + 1.0) * 0.5).sin();
            bvn += w * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
            let sn = (asr * (1.0 - x) * 0.5).sin();
            bvn += w * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
        }
        return bvn * asr / (2.0 * TWO_PI) + normal_cdf(-h) * normal_cdf(-k);
    }

    let mut k = k;
    if r < 0.0 {
        k = -k;
        hk = -hk;
    }
    if r.abs() < 1.0 {
        let as_ = (1.0 - r) * (1.0 + r);
        let mut a = as_.sqrt();
        let bs = (h - k) * (h - k);
        let c = (4.0 - hk) / 8.0;
        let d = (12.0 - hk) / 16.0;
        bvn = a
            * (-(bs / as_ + hk) * 0.5).exp()
            * (1.0 - c * (bs - as_) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as_ * as_ / 5.0);
        if hk > -160.0 {
            let b = bs.sqrt();
            bvn -= (-hk * 0.5).exp()
                * TWO_PI.sqrt()
                * normal_cdf(-b / a)
                * b
                * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
        }
        a *= 0.5;
        for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
            for sign in [-1.0, 1.0] {
                let xs = (a * (sign * x + 1.0)).powi(2);
                let rs = (1.0 - xs).sqrt();
                bvn += a
                    * w
                    * ((-bs / (2.0 * xs) - hk / (1.0 + rs)).exp() / rs
                        - (-(bs / xs + hk) * 0.5).exp() * (1.0 + c * xs * (1.0 + d * xs)));
            }
        }
        bvn = -bvn / TWO_PI;
    }
    if r > 0.0 {
        bvn + normal_cdf(-h.max(k))
    } else {
        bvn = -bvn;
        if k > h {
            if h < 0.0 {
                bvn += normal_cdf(k) - normal_cdf(h);
            } else {
                bvn += normal_cdf(-h) - normal_cdf(-k);
            }
        }
        bvn
    }
}

/// `P(Z1 <= t1, Z2 <= t2)` for a standard bivariate normal with correlation
/// `r`, no input validation. The result is projected onto the Fréchet
/// bounds and is exactly symmetric in its first two arguments.
pub fn bvn(t1: f64, t2: f64, r: f64) -> f64 {
    let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
    let (p_lo, p_hi) = (normal_cdf(lo), normal_cdf(hi));
    let value = if r == 0.0 {
        p_lo * p_hi
    } else {
        bvnd(-lo, -hi, r)
    };
    value.clamp((p_lo + p_hi - 1.0).max(0.0), p_lo.min(p_hi))
}

/// `Phi(t1) Phi(t2) + r phi(t1) phi(t2)` clamped to `[0, 1]`.
#[inline]
pub fn bvn_linear(t1: f64, t2: f64, r: f64) -> f64 {
    (normal_cdf(t1) * normal_cdf(t2) + r * normal_pdf(t1) * normal_pdf(t2)).clamp(0.0, 1.0)
}

/// Bivariate standard normal density; the derivative of [`bvn`] in `r`.
#[inline]
pub fn bvn_pdf(t1: f64, t2: f64, r: f64) -> f64 {
    let one_minus = 1.0 - r * r;
    let q = (t1 * t1 - 2.0 * r * t1 * t2 + t2 * t2) / one_minus;
    (-0.5 * q).exp() / (TWO_PI * one_minus.sqrt())
}

/// Evaluates the bivariate CDF under the requested mode.
#[inline]
pub fn bvn_with(mode: Phi2Mode, t1: f64, t2: f64, r: f64) -> f64 {
    match mode {
        Phi2Mode::Exact => bvn(t1, t2, r),
        Phi2Mode::Linear => bvn_linear(t1, t2, r),
    }
}

pub fn bvn_cdf(t1: f64, t2: f64, r: LatentCorrelation) -> Result<Probability> {
    let t1 = finite(t1, "t1")?;
    let t2 = finite(t2, "t2")?;
    Ok(Probability(bvn(t1, t2, r.value())))
}

pub fn bvn_cdf_linear(t1: f64, t2: f64, r: LatentCorrelation) -> Result<Probability> {
    let t1 = finite(t1, "t1")?;
    let t2 = finite(t2, "t2")?;
    Ok(Probability(bvn_linear(t1, t2, r.value())))
}
