//! Gaussian-process regression with a GLS-estimated constant mean.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{invalid, Error, Result};
use crate::kernels::{KernelSpec, PreparedPoint};

/// Diagonal jitter tried, in order, when the Gram matrix fails to factor.
pub const JITTER_LADDER: [f64; 3] = [1e-10, 1e-6, 1e-4];

/// Floor applied to the standard deviation used for output standardization.
pub const STD_FLOOR: f64 = 1e-8;

/// Default observation noise for deterministic objectives.
pub const DEFAULT_NOISE: f64 = 1e-6;

/// Query points in the unit hypercube with raw and standardized outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    dim: usize,
    x: Vec<Vec<f64>>,
    y_raw: Vec<f64>,
    y: Vec<f64>,
    mean: f64,
    std: f64,
}

impl ObservationSet {
    pub fn new(dim: usize) -> Self {
        Self { dim, x: Vec::new(), y_raw: Vec::new(), y: Vec::new(), mean: 0.0, std: 1.0 }
    }

    pub fn from_parts(dim: usize, x: Vec<Vec<f64>>, y_raw: Vec<f64>) -> Result<Self> {
        if x.len() != y_raw.len() {
            return invalid(format!("{} points but {} outcomes", x.len(), y_raw.len()));
        }
        let mut obs = Self::new(dim);
        for (xi, yi) in x.into_iter().zip(y_raw) {
            obs.check(&xi, yi)?;
            obs.x.push(xi);
            obs.y_raw.push(yi);
        }
        obs.restandardize();
        Ok(obs)
    }

    fn check(&self, x: &[f64], y: f64) -> Result<()> {
        if x.len() != self.dim {
            return invalid(format!("point has dimension {}, expected {}", x.len(), self.dim));
        }
        if x.iter().any(|v| !v.is_finite()) || !y.is_finite() {
            return invalid("observations must be finite");
        }
        Ok(())
    }

    pub fn push(&mut self, x: Vec<f64>, y_raw: f64) -> Result<()> {
        self.check(&x, y_raw)?;
        self.x.push(x);
        self.y_raw.push(y_raw);
        self.restandardize();
        Ok(())
    }

    fn restandardize(&mut self) {
        let n = self.y_raw.len();
        if n == 0 {
            self.y.clear();
            return;
        }
        let mean = self.y_raw.iter().sum::<f64>() / n as f64;
        let var = self.y_raw.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        self.mean = mean;
        self.std = var.sqrt().max(STD_FLOOR);
        self.y = self.y_raw.iter().map(|v| (v - mean) / self.std).collect();
    }

    /// Maps a raw outcome into the current standardized units.
    pub fn standardize(&self, y_raw: f64) -> f64 {
        (y_raw - self.mean) / self.std
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn x(&self) -> &[Vec<f64>] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn y_raw(&self) -> &[f64] {
        &self.y_raw
    }

    /// Index of the lowest raw outcome (first one on ties).
    pub fn best_index(&self) -> Option<usize> {
        self.y_raw
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
            .map(|(i, _)| i)
    }
}

/// Predictive mean and variance at one query point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
}

/// A fitted GP for one kernel specification. Immutable once built.
#[derive(Debug, Clone)]
pub struct PosteriorSnapshot {
    spec: KernelSpec,
    points: Vec<PreparedPoint>,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    m_hat: f64,
    noise: f64,
    jitter: f64,
    quad: f64,
}

impl PosteriorSnapshot {
    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    /// Lower-triangular factor `L` with `L Lᵀ = K`.
    pub fn chol(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn m_hat(&self) -> f64 {
        self.m_hat
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    /// Jitter that had to be added to the diagonal (0 when none was needed).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `μ = m̂ + k(x_q, X)·α`, `σ² = k(x_q, x_q) - vᵀv` with `v = L⁻¹ k(X, x_q)`.
    pub fn predict(&self, x_q: &[f64]) -> Result<Prediction> {
        let q = self.spec.prepare(x_q)?;
        Ok(self.predict_prepared(&q))
    }

    pub(crate) fn predict_prepared(&self, q: &PreparedPoint) -> Prediction {
        let n = self.points.len();
        let mut kv = DVector::zeros(n);
        for (i, p) in self.points.iter().enumerate() {
            kv[i] = self.spec.eval_prepared(q, p);
        }
        let mean = self.m_hat + kv.dot(&self.alpha);
        let prior = self.spec.eval_prepared(q, q);
        self.chol.l_dirty().solve_lower_triangular_mut(&mut kv);
        let variance = (prior - kv.norm_squared()).clamp(0.0, prior + self.noise);
        Prediction { mean, variance }
    }

    /// `-½ rᵀK⁻¹r - Σ log L_ii - (n/2) log 2π` with `r = y - m̂·1`.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.points.len() as f64;
        let log_det_half: f64 = self.chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
        -0.5 * self.quad - log_det_half - 0.5 * n * (2.0 * PI).ln()
    }
}

/// Fits the GP to the standardized outcomes of `obs`.
///
/// Retries the factorization with [`JITTER_LADDER`] before giving up with
/// [`Error::SingularModel`].
pub fn fit(obs: &ObservationSet, spec: &KernelSpec, noise: f64) -> Result<PosteriorSnapshot> {
    if obs.is_empty() {
        return invalid("cannot fit a GP to zero observations");
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return invalid(format!("noise must be non-negative, got {noise}"));
    }
    if spec.dim() != obs.dim() {
        return invalid(format!("kernel dimension {} != data dimension {}", spec.dim(), obs.dim()));
    }
    let points = spec.prepare_all(obs.x())?;
    let gram = spec.gram_prepared(&points, noise);
    let n = points.len();

    let mut factor = None;
    for jitter in std::iter::once(0.0).chain(JITTER_LADDER) {
        let mut k = gram.clone();
        if jitter > 0.0 {
            for i in 0..n {
                k[(i, i)] += jitter;
            }
        }
        if let Some(c) = Cholesky::new(k) {
            factor = Some((c, jitter));
            break;
        }
    }
    let Some((chol, jitter)) = factor else {
        return Err(Error::SingularModel { jitter: JITTER_LADDER[JITTER_LADDER.len() - 1] });
    };

    let l = chol.l_dirty();
    let mut ones = DVector::from_element(n, 1.0);
    let mut wy = DVector::from_column_slice(obs.y());
    l.solve_lower_triangular_mut(&mut ones);
    l.solve_lower_triangular_mut(&mut wy);
    // GLS constant mean: (1ᵀK⁻¹y) / (1ᵀK⁻¹1)
    let m_hat = ones.dot(&wy) / ones.norm_squared();
    let mut resid = wy - ones * m_hat;
    let quad = resid.norm_squared();
    l.tr_solve_lower_triangular_mut(&mut resid);

    Ok(PosteriorSnapshot {
        spec: spec.clone(),
        points,
        chol,
        alpha: resid,
        m_hat,
        noise,
        jitter,
        quad,
    })
}

/// Free-function form of [`PosteriorSnapshot::predict`].
pub fn predict(post: &PosteriorSnapshot, x_q: &[f64]) -> Result<Prediction> {
    post.predict(x_q)
}

/// Free-function form of [`PosteriorSnapshot::log_marginal_likelihood`].
pub fn log_marginal_likelihood(post: &PosteriorSnapshot) -> f64 {
    post.log_marginal_likelihood()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::LengthScales;
    use approx::assert_abs_diff_eq;

    fn matern(s: &[f64]) -> KernelSpec {
        KernelSpec::Matern52(LengthScales::new(s.to_vec()).unwrap())
    }

    #[test]
    fn standardization() {
        let obs = ObservationSet::from_parts(1, vec![vec![0.0], vec![0.5], vec![1.0]], vec![1.0, 2.0, 3.0])
            .unwrap();
        let sd = (2.0f64 / 3.0).sqrt();
        assert_abs_diff_eq!(obs.y()[0], -1.0 / sd, epsilon = 1e-12);
        assert_abs_diff_eq!(obs.y()[2], 1.0 / sd, epsilon = 1e-12);
        assert_abs_diff_eq!(obs.standardize(2.0), 0.0, epsilon = 1e-12);
        assert_eq!(obs.best_index(), Some(0));

        let single = ObservationSet::from_parts(1, vec![vec![0.2]], vec![5.0]).unwrap();
        assert_eq!(single.y(), &[0.0]);
    }

    #[test]
    fn rejects_mismatched_observations() {
        assert!(ObservationSet::from_parts(2, vec![vec![0.0]], vec![1.0]).is_err());
        assert!(ObservationSet::from_parts(1, vec![vec![0.0]], vec![]).is_err());
        let mut obs = ObservationSet::new(1);
        assert!(obs.push(vec![0.1], f64::NAN).is_err());
        assert!(fit(&obs, &matern(&[0.3]), 1e-6).is_err());
    }

    #[test]
    fn single_observation() {
        let obs = ObservationSet::from_parts(1, vec![vec![0.4]], vec![3.0]).unwrap();
        let post = fit(&obs, &matern(&[0.3]), 0.0).unwrap();
        assert_eq!(post.m_hat(), 0.0);
        assert_eq!(post.alpha().as_slice(), &[0.0]);
        assert_abs_diff_eq!(
            post.log_marginal_likelihood(),
            -0.5 * (2.0 * PI).ln(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(post.log_marginal_likelihood(), -0.91894, epsilon = 1e-5);
    }

    #[test]
    fn duplicate_points_engage_jitter() {
        let obs = ObservationSet::from_parts(
            1,
            vec![vec![0.3], vec![0.3], vec![0.8]],
            vec![1.0, 1.0, 2.0],
        )
        .unwrap();
        let post = fit(&obs, &matern(&[0.2]), 0.0).unwrap();
        assert!(post.jitter() > 0.0 && post.jitter() <= 1e-4);
    }

    #[test]
    fn far_query_recovers_prior() {
        let obs = ObservationSet::from_parts(
            1,
            vec![vec![0.0], vec![0.02], vec![0.05]],
            vec![1.0, -1.0, 0.5],
        )
        .unwrap();
        let post = fit(&obs, &matern(&[0.01]), 1e-6).unwrap();
        let p = post.predict(&[1.0]).unwrap();
        assert_abs_diff_eq!(p.mean, post.m_hat(), epsilon = 1e-6);
        assert_abs_diff_eq!(p.variance, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn interpolates_training_points() {
        let xs = vec![vec![0.1, 0.1], vec![0.5, 0.9], vec![0.9, 0.3], vec![0.4, 0.4]];
        let ys = vec![0.3, -1.2, 2.0, 0.7];
        let obs = ObservationSet::from_parts(2, xs.clone(), ys).unwrap();
        let post = fit(&obs, &matern(&[0.4, 0.3]), 1e-10).unwrap();
        for (x, y) in xs.iter().zip(obs.y()) {
            let p = post.predict(x).unwrap();
            assert!((p.mean - y).abs() <= 1e-4);
            assert!(p.variance <= 1e-4);
        }
    }

    #[test]
    fn larger_residuals_lower_the_likelihood() {
        let xs = vec![vec![0.1], vec![0.4], vec![0.8]];
        let obs = ObservationSet::from_parts(1, xs, vec![0.0, 1.0, -1.0]).unwrap();
        let spec = matern(&[0.3]);
        let post = fit(&obs, &spec, 1e-6).unwrap();
        // same snapshot, residual vector scaled by 2 -> quadratic term x4
        let mut scaled = post.clone();
        scaled.quad *= 4.0;
        assert!(scaled.log_marginal_likelihood() < post.log_marginal_likelihood());
    }
}
