//! Covariance functions over the normalized input space.
//!
//! All kernels here are correlation functions: `k(x, x) = 1`. The output scale
//! of the data is carried by output standardization in [`crate::surrogate`].
//!
//! The composite kernel mixes a global and a local Matérn 5/2 kernel,
//!
//! ```text
//! k(x, x') = λg(x) λg(x') kg(x, x') + λl(x) λl(x') kl(x, x')
//! ```
//!
//! where `λj(x)^2 = ωj(x) / (ωg(x) + ωl(x))` and the `ω` are isotropic normal
//! densities centered at `ψ` (global) and `θp` (local).

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::error::{invalid, Result};
use crate::warp::{self, WarpParams};

const SQRT_5: f64 = 2.236_067_977_499_79;

/// Default center of the global weight in normalized space.
pub const DEFAULT_PSI: f64 = 0.5;
/// Default variance of the global weight (close to uniform on the unit box).
pub const DEFAULT_SIGMA2_G: f64 = 10.0;
/// Default variance of the local weight.
pub const DEFAULT_SIGMA2_L: f64 = 0.05;

/// Per-dimension ARD length-scales.
#[derive(Debug, Clone, PartialEq)]
pub struct LengthScales {
    values: Vec<f64>,
    inv: Vec<f64>,
}

impl LengthScales {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return invalid("length-scales must have at least one dimension");
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return invalid(format!("length-scale {v} is not strictly positive and finite"));
        }
        let inv = values.iter().map(|v| 1.0 / v).collect();
        Ok(Self { values, inv })
    }

    pub fn uniform(dim: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; dim])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// ARD-weighted Euclidean distance `sqrt(sum(((x_i - x'_i) / θ_i)^2))`.
    #[inline]
    fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut acc = 0.0;
        for ((x, y), s) in a.iter().zip(b).zip(&self.inv) {
            let t = (x - y) * s;
            acc += t * t;
        }
        acc.sqrt()
    }
}

/// Gaussian weighting of the global and local regions of a composite kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct SpartanWeightConfig {
    pub psi: Vec<f64>,
    pub sigma2_g: f64,
    pub sigma2_l: f64,
    pub theta_p: Vec<f64>,
}

impl SpartanWeightConfig {
    pub fn new(psi: Vec<f64>, sigma2_g: f64, sigma2_l: f64, theta_p: Vec<f64>) -> Result<Self> {
        if psi.len() != theta_p.len() || psi.is_empty() {
            return invalid("psi and theta_p must share a non-zero dimension");
        }
        if !(sigma2_g.is_finite() && sigma2_g > 0.0 && sigma2_l.is_finite() && sigma2_l > 0.0) {
            return invalid(format!(
                "weight variances must be positive (sigma2_g={sigma2_g}, sigma2_l={sigma2_l})"
            ));
        }
        if psi.iter().any(|v| !v.is_finite()) {
            return invalid("psi must be finite");
        }
        if theta_p.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return invalid("theta_p must lie in the unit hypercube");
        }
        Ok(Self { psi, sigma2_g, sigma2_l, theta_p })
    }

    /// `ψ = [0.5]^d`, `σ²g = 10`, `σ²l = 0.05` around the given local center.
    pub fn with_defaults(theta_p: Vec<f64>) -> Result<Self> {
        let d = theta_p.len();
        Self::new(vec![DEFAULT_PSI; d], DEFAULT_SIGMA2_G, DEFAULT_SIGMA2_L, theta_p)
    }

    pub fn dim(&self) -> usize {
        self.psi.len()
    }

    /// Normalized squared weights `(λg², λl²)` at `x`, summing to one.
    fn squared_weights(&self, x: &[f64]) -> (f64, f64) {
        let log_g = log_isotropic_normal(x, &self.psi, self.sigma2_g);
        let log_l = log_isotropic_normal(x, &self.theta_p, self.sigma2_l);
        // logistic form of w / (w + w') avoids 0/0 when both densities underflow
        let wg = 1.0 / (1.0 + (log_l - log_g).exp());
        let wl = 1.0 / (1.0 + (log_g - log_l).exp());
        (wg, wl)
    }
}

fn log_isotropic_normal(x: &[f64], mean: &[f64], var: f64) -> f64 {
    let sq: f64 = x.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
    -0.5 * x.len() as f64 * (2.0 * PI * var).ln() - 0.5 * sq / var
}

/// Which family a [`KernelSpec`] belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    SquaredExponential,
    Matern52,
    Spartan,
    WarpedMatern52,
}

/// Declarative kernel configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelSpec {
    SquaredExponential(LengthScales),
    Matern52(LengthScales),
    /// Global plus one local Matérn 5/2 kernel under Gaussian region weights.
    Spartan {
        global: LengthScales,
        local: LengthScales,
        weights: SpartanWeightConfig,
    },
    /// Matérn 5/2 on inputs pushed through per-dimension Beta CDFs.
    WarpedMatern52 { scales: LengthScales, warp: WarpParams },
}

/// A point together with the per-point quantities a kernel needs.
///
/// Preparing each training point once keeps weight and warp evaluations out of
/// the O(n²) Gram loop.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedPoint {
    coords: Vec<f64>,
    weight_g: f64,
    weight_l: f64,
}

impl PreparedPoint {
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }
}

impl KernelSpec {
    pub fn spartan(
        global: LengthScales,
        local: LengthScales,
        weights: SpartanWeightConfig,
    ) -> Result<Self> {
        if global.dim() != local.dim() || global.dim() != weights.dim() {
            return invalid("spartan components must share one dimension");
        }
        Ok(KernelSpec::Spartan { global, local, weights })
    }

    pub fn warped(scales: LengthScales, warp: WarpParams) -> Result<Self> {
        if scales.dim() != warp.dim() {
            return invalid("warp parameters and scales must share one dimension");
        }
        Ok(KernelSpec::WarpedMatern52 { scales, warp })
    }

    pub fn kind(&self) -> KernelKind {
        match self {
            KernelSpec::SquaredExponential(_) => KernelKind::SquaredExponential,
            KernelSpec::Matern52(_) => KernelKind::Matern52,
            KernelSpec::Spartan { .. } => KernelKind::Spartan,
            KernelSpec::WarpedMatern52 { .. } => KernelKind::WarpedMatern52,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            KernelSpec::SquaredExponential(s) | KernelSpec::Matern52(s) => s.dim(),
            KernelSpec::Spartan { global, .. } => global.dim(),
            KernelSpec::WarpedMatern52 { scales, .. } => scales.dim(),
        }
    }

    /// Number of learned hyperparameters: `d` for plain kernels, `3d` otherwise.
    pub fn hyperparameter_count(&self) -> usize {
        match self.kind() {
            KernelKind::SquaredExponential | KernelKind::Matern52 => self.dim(),
            KernelKind::Spartan | KernelKind::WarpedMatern52 => 3 * self.dim(),
        }
    }

    pub fn prepare(&self, x: &[f64]) -> Result<PreparedPoint> {
        check_point(x, self.dim())?;
        Ok(match self {
            KernelSpec::SquaredExponential(_) | KernelSpec::Matern52(_) => PreparedPoint {
                coords: x.to_vec(),
                weight_g: 1.0,
                weight_l: 0.0,
            },
            KernelSpec::Spartan { weights, .. } => {
                let (weight_g, weight_l) = weights.squared_weights(x);
                PreparedPoint { coords: x.to_vec(), weight_g, weight_l }
            }
            KernelSpec::WarpedMatern52 { warp: w, .. } => PreparedPoint {
                coords: warp::warp_point(x, w)?,
                weight_g: 1.0,
                weight_l: 0.0,
            },
        })
    }

    pub fn prepare_all(&self, xs: &[Vec<f64>]) -> Result<Vec<PreparedPoint>> {
        xs.iter().map(|x| self.prepare(x)).collect()
    }

    /// Kernel value between two prepared points.
    #[inline]
    pub fn eval_prepared(&self, a: &PreparedPoint, b: &PreparedPoint) -> f64 {
        match self {
            KernelSpec::SquaredExponential(s) => se_profile(s.distance(&a.coords, &b.coords)),
            KernelSpec::Matern52(s) | KernelSpec::WarpedMatern52 { scales: s, .. } => {
                matern52_profile(s.distance(&a.coords, &b.coords))
            }
            KernelSpec::Spartan { global, local, .. } => {
                // sqrt of the product keeps equal weights exact: sqrt(0.25) = 0.5
                let lg = (a.weight_g * b.weight_g).sqrt();
                let ll = (a.weight_l * b.weight_l).sqrt();
                let mut k = 0.0;
                if lg > 0.0 {
                    k += lg * matern52_profile(global.distance(&a.coords, &b.coords));
                }
                if ll > 0.0 {
                    k += ll * matern52_profile(local.distance(&a.coords, &b.coords));
                }
                k
            }
        }
    }

    pub fn eval(&self, x: &[f64], x2: &[f64]) -> Result<f64> {
        Ok(self.eval_prepared(&self.prepare(x)?, &self.prepare(x2)?))
    }

    /// Gram matrix over prepared points with `noise` added to the diagonal.
    pub fn gram_prepared(&self, points: &[PreparedPoint], noise: f64) -> DMatrix<f64> {
        let n = points.len();
        let mut k = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in j..n {
                let v = self.eval_prepared(&points[i], &points[j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
            k[(j, j)] += noise;
        }
        k
    }
}

fn check_point(x: &[f64], dim: usize) -> Result<()> {
    if x.len() != dim {
        return invalid(format!("point has dimension {}, expected {dim}", x.len()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return invalid("point has non-finite coordinates");
    }
    Ok(())
}

#[inline]
fn matern52_profile(r: f64) -> f64 {
    let s = SQRT_5 * r;
    (-s).exp() * (1.0 + s + s * s / 3.0)
}

#[inline]
fn se_profile(r: f64) -> f64 {
    (-0.5 * r * r).exp()
}

/// Matérn 5/2 correlation `exp(-√5 r)(1 + √5 r + 5r²/3)` with ARD distance `r`.
pub fn matern52(x: &[f64], x2: &[f64], scales: &LengthScales) -> Result<f64> {
    check_point(x, scales.dim())?;
    check_point(x2, scales.dim())?;
    Ok(matern52_profile(scales.distance(x, x2)))
}

/// Squared exponential correlation `exp(-r²/2)` with ARD distance `r`.
pub fn squared_exponential(x: &[f64], x2: &[f64], scales: &LengthScales) -> Result<f64> {
    check_point(x, scales.dim())?;
    check_point(x2, scales.dim())?;
    Ok(se_profile(scales.distance(x, x2)))
}

/// Normalized region weights `(λg(x), λl(x))`, with `λg² + λl² = 1`.
pub fn spartan_weights(x: &[f64], cfg: &SpartanWeightConfig) -> Result<(f64, f64)> {
    check_point(x, cfg.dim())?;
    let (wg, wl) = cfg.squared_weights(x);
    Ok((wg.sqrt(), wl.sqrt()))
}

pub fn spartan_kernel(x: &[f64], x2: &[f64], spec: &KernelSpec) -> Result<f64> {
    if spec.kind() != KernelKind::Spartan {
        return invalid("spartan_kernel requires a Spartan spec");
    }
    spec.eval(x, x2)
}

/// `K[i][j] = k(x_i, x_j) + noise·[i = j]`.
pub fn gram_matrix(xs: &[Vec<f64>], spec: &KernelSpec, noise: f64) -> Result<DMatrix<f64>> {
    if !(noise >= 0.0 && noise.is_finite()) {
        return invalid(format!("noise must be non-negative, got {noise}"));
    }
    if xs.is_empty() {
        return invalid("gram matrix needs at least one point");
    }
    let prepared = spec.prepare_all(xs)?;
    Ok(spec.gram_prepared(&prepared, noise))
}

/// Local weight variance that keeps `k_loc` observed points within `2σl` of
/// `theta_p`, with `σl` clamped to `[0.01, 0.25]`.
pub fn adaptive_local_variance(theta_p: &[f64], xs: &[Vec<f64>], k_loc: usize) -> f64 {
    const MIN_SIGMA: f64 = 0.01;
    const MAX_SIGMA: f64 = 0.25;
    if k_loc == 0 || xs.len() < k_loc {
        return MAX_SIGMA * MAX_SIGMA;
    }
    let mut dists: Vec<f64> = xs
        .iter()
        .map(|x| {
            x.iter()
                .zip(theta_p)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    dists.sort_by(f64::total_cmp);
    let sigma = (0.5 * dists[k_loc - 1]).clamp(MIN_SIGMA, MAX_SIGMA);
    sigma * sigma
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scales(v: &[f64]) -> LengthScales {
        LengthScales::new(v.to_vec()).unwrap()
    }

    #[test]
    fn matern_values() {
        let s = scales(&[1.0]);
        assert_eq!(matern52(&[0.3], &[0.3], &s).unwrap(), 1.0);
        // (1 + √5 + 5/3) e^{-√5}
        assert_abs_diff_eq!(matern52(&[0.0], &[1.0], &s).unwrap(), 0.52399, epsilon = 1e-4);
        let far = matern52(&[0.0], &[50.0], &s).unwrap();
        assert!(far < 1e-20 && far > 0.0);
    }

    #[test]
    fn se_values() {
        let s = scales(&[1.0, 2.0]);
        assert_eq!(squared_exponential(&[0.1, 0.2], &[0.1, 0.2], &s).unwrap(), 1.0);
        let v = squared_exponential(&[0.0, 0.0], &[1.0, 0.0], &s).unwrap();
        assert_abs_diff_eq!(v, (-0.5f64).exp(), epsilon = 1e-12);
        let a = [0.2, 0.9];
        let b = [0.7, 0.1];
        assert_eq!(
            squared_exponential(&a, &b, &s).unwrap(),
            squared_exponential(&b, &a, &s).unwrap()
        );
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(LengthScales::new(vec![1.0, 0.0]).is_err());
        assert!(LengthScales::new(vec![f64::NAN]).is_err());
        let s = scales(&[1.0]);
        assert!(matern52(&[f64::INFINITY], &[0.0], &s).is_err());
        assert!(matern52(&[0.0, 1.0], &[0.0], &s).is_err());
        assert!(SpartanWeightConfig::new(vec![0.5], 0.0, 0.05, vec![0.5]).is_err());
        assert!(SpartanWeightConfig::new(vec![0.5], 10.0, 0.05, vec![1.5]).is_err());
        let cfg = SpartanWeightConfig::with_defaults(vec![0.5]).unwrap();
        assert!(spartan_weights(&[f64::NAN], &cfg).is_err());
    }

    #[test]
    fn spartan_weight_example() {
        let cfg = SpartanWeightConfig::with_defaults(vec![0.5]).unwrap();
        let (lg, ll) = spartan_weights(&[0.5], &cfg).unwrap();
        // ωg = 1/sqrt(20π), ωl = 1/sqrt(0.1π)
        let wg = 1.0 / (20.0 * PI).sqrt();
        let wl = 1.0 / (0.1 * PI).sqrt();
        assert_abs_diff_eq!(ll, (wl / (wg + wl)).sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(ll, 0.9664, epsilon = 1e-3);
        assert_abs_diff_eq!(lg * lg + ll * ll, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn equal_weights_collapse() {
        let cfg = SpartanWeightConfig::new(vec![0.3, 0.6], 0.2, 0.2, vec![0.3, 0.6]).unwrap();
        for x in [[0.0, 0.0], [0.9, 0.1], [0.5, 0.5]] {
            let (lg, ll) = spartan_weights(&x, &cfg).unwrap();
            assert_abs_diff_eq!(lg, std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-15);
            assert_abs_diff_eq!(ll, std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-15);
        }
    }

    #[test]
    fn spartan_reduces_to_matern_exactly() {
        let s = scales(&[0.2, 0.7]);
        let cfg = SpartanWeightConfig::new(vec![0.5, 0.5], 10.0, 10.0, vec![0.5, 0.5]).unwrap();
        let spec = KernelSpec::spartan(s.clone(), s.clone(), cfg).unwrap();
        for (a, b) in [([0.1, 0.2], [0.3, 0.9]), ([0.0, 1.0], [1.0, 0.0]), ([0.4, 0.4], [0.4, 0.41])] {
            assert_eq!(spartan_kernel(&a, &b, &spec).unwrap(), matern52(&a, &b, &s).unwrap());
        }
    }

    #[test]
    fn spartan_unit_diagonal() {
        let cfg = SpartanWeightConfig::with_defaults(vec![0.2, 0.8]).unwrap();
        let spec = KernelSpec::spartan(scales(&[1.0, 0.5]), scales(&[0.05, 0.1]), cfg).unwrap();
        for x in [[0.0, 0.0], [0.2, 0.8], [1.0, 0.3]] {
            assert_abs_diff_eq!(spartan_kernel(&x, &x, &spec).unwrap(), 1.0, epsilon = 1e-12);
        }
        assert!(spartan_kernel(&[0.0], &[0.0, 0.0], &spec).is_err());
        assert!(spartan_kernel(&[0.0, 0.0], &[0.0, 0.0], &KernelSpec::Matern52(scales(&[1.0, 1.0]))).is_err());
    }

    #[test]
    fn gram_single_and_elementwise() {
        let spec = KernelSpec::Matern52(scales(&[0.3, 0.4]));
        let g = gram_matrix(&[vec![0.1, 0.2]], &spec, 0.25).unwrap();
        assert_eq!(g.shape(), (1, 1));
        assert_eq!(g[(0, 0)], 1.25);

        let xs: Vec<Vec<f64>> = (0..8)
            .map(|i| vec![(i as f64 * 0.37).fract(), (i as f64 * 0.71).fract()])
            .collect();
        let g = gram_matrix(&xs, &spec, 1e-3).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let want = matern52(&xs[i], &xs[j], match &spec {
                    KernelSpec::Matern52(s) => s,
                    _ => unreachable!(),
                })
                .unwrap()
                    + if i == j { 1e-3 } else { 0.0 };
                assert_eq!(g[(i, j)], want);
            }
        }
        assert!(gram_matrix(&xs, &spec, -1.0).is_err());
    }

    #[test]
    fn duplicate_points_make_a_singular_gram() {
        let spec = KernelSpec::Matern52(scales(&[0.3]));
        let g = gram_matrix(&[vec![0.4], vec![0.4]], &spec, 0.0).unwrap();
        assert!(g.clone().cholesky().is_none() || g.determinant().abs() < 1e-12);
        assert_eq!(g.determinant(), 0.0);
    }

    #[test]
    fn hyperparameter_counts() {
        let d = 4;
        let s = LengthScales::uniform(d, 0.3).unwrap();
        assert_eq!(KernelSpec::Matern52(s.clone()).hyperparameter_count(), d);
        let cfg = SpartanWeightConfig::with_defaults(vec![0.5; d]).unwrap();
        let spec = KernelSpec::spartan(s.clone(), s, cfg).unwrap();
        assert_eq!(spec.hyperparameter_count(), 3 * d);
    }

    #[test]
    fn adaptive_variance_tracks_local_density() {
        let xs: Vec<Vec<f64>> = (0..10).map(|i| vec![0.5 + 0.01 * i as f64]).collect();
        let v = adaptive_local_variance(&[0.5], &xs, 4);
        // fourth nearest point sits at distance 0.03, so sigma = 0.015
        assert_abs_diff_eq!(v, 0.015 * 0.015, epsilon = 1e-15);
        assert_eq!(adaptive_local_variance(&[0.5], &xs[..2], 4), 0.0625);
        let spread: Vec<Vec<f64>> = (0..10).map(|i| vec![0.1 * i as f64]).collect();
        assert_eq!(adaptive_local_variance(&[0.0], &spread, 8), 0.0625);
    }
}
