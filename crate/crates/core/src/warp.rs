//! Input warping through per-dimension Beta CDFs.

use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, Result};
use crate::kernels::{matern52, LengthScales};

/// Shape parameters of the per-dimension Beta CDF warps.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpParams {
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

impl WarpParams {
    pub fn new(alpha: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        if alpha.len() != beta.len() || alpha.is_empty() {
            return invalid("alpha and beta must share a non-zero dimension");
        }
        if alpha.iter().chain(&beta).any(|v| !(v.is_finite() && *v > 0.0)) {
            return invalid("warp shape parameters must be strictly positive");
        }
        Ok(Self { alpha, beta })
    }

    pub fn identity(dim: usize) -> Self {
        Self { alpha: vec![1.0; dim], beta: vec![1.0; dim] }
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }
}

/// Regularized incomplete beta function `I_x(a, b)`, i.e. the Beta(a, b) CDF.
///
/// Evaluated with the modified Lentz continued fraction, switching to the
/// symmetric form `1 - I_{1-x}(b, a)` where the fraction converges faster.
pub fn beta_cdf(x: f64, a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return invalid(format!("beta shape parameters must be positive (a={a}, b={b})"));
    }
    if !(0.0..=1.0).contains(&x) {
        return invalid(format!("beta CDF argument {x} outside [0, 1]"));
    }
    if x == 0.0 || x == 1.0 {
        return Ok(x);
    }
    let ln_front = a * x.ln() + b * (1.0 - x).ln() + ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b);
    let front = ln_front.exp();
    Ok(if x < (a + 1.0) / (a + b + 2.0) {
        front * incomplete_beta_fraction(x, a, b) / a
    } else {
        1.0 - front * incomplete_beta_fraction(1.0 - x, b, a) / b
    })
}

fn incomplete_beta_fraction(x: f64, a: f64, b: f64) -> f64 {
    const MAX_ITER: usize = 500;
    const EPS: f64 = 1e-16;
    const TINY: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        // even step
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        // odd step
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Maps `x` in the unit hypercube through `z_j = BetaCDF(x_j; α_j, β_j)`.
pub fn warp_point(x: &[f64], w: &WarpParams) -> Result<Vec<f64>> {
    if x.len() != w.dim() {
        return invalid(format!("point has dimension {}, warp expects {}", x.len(), w.dim()));
    }
    x.iter()
        .zip(w.alpha.iter().zip(&w.beta))
        .map(|(&xj, (&a, &b))| {
            if (a, b) == (1.0, 1.0) && (0.0..=1.0).contains(&xj) {
                Ok(xj)
            } else {
                beta_cdf(xj, a, b)
            }
        })
        .collect()
}

/// Matérn 5/2 evaluated on warped inputs.
pub fn warped_kernel(x: &[f64], x2: &[f64], scales: &LengthScales, w: &WarpParams) -> Result<f64> {
    matern52(&warp_point(x, w)?, &warp_point(x2, w)?, scales)
}
