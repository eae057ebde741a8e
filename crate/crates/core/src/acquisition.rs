//! Expected improvement over a mixture of GP posteriors and its maximization.

use std::cmp::Ordering;

use rand::Rng;
use rayon::prelude::*;
use statrs::function::erf::erfc;

use crate::design::SobolSequence;
use crate::error::{invalid, Result};
use crate::kernels::PreparedPoint;
use crate::surrogate::{ObservationSet, PosteriorSnapshot, Prediction};

/// Below this predictive standard deviation an EI term is its limit `max(0, ρ - μ)`.
pub const SIGMA_FLOOR: f64 = 1e-10;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Best observation so far, with `rho` in standardized units.
#[derive(Debug, Clone, PartialEq)]
pub struct Incumbent {
    pub rho: f64,
    pub x_best: Vec<f64>,
    pub y_best_raw: f64,
}

impl Incumbent {
    pub fn from_observations(obs: &ObservationSet) -> Option<Self> {
        let i = obs.best_index()?;
        Some(Self { rho: obs.y()[i], x_best: obs.x()[i].clone(), y_best_raw: obs.y_raw()[i] })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionResult {
    pub x_next: Vec<f64>,
    pub ei_value: f64,
    /// Scan point with the largest mean predictive variance across the mixture.
    pub max_variance_x: Vec<f64>,
}

/// One EI term `(ρ - μ)Φ(z) + σφ(z)` with `z = (ρ - μ)/σ`.
pub fn ei_term(mean: f64, sigma: f64, rho: f64) -> f64 {
    let diff = rho - mean;
    if sigma < SIGMA_FLOOR {
        return diff.max(0.0);
    }
    let z = diff / sigma;
    let cdf = 0.5 * erfc(-z * std::f64::consts::FRAC_1_SQRT_2);
    let pdf = INV_SQRT_2PI * (-0.5 * z * z).exp();
    (diff * cdf + sigma * pdf).max(0.0)
}

fn ei_from_predictions(preds: impl Iterator<Item = Prediction>, rho: f64) -> f64 {
    preds.map(|p| ei_term(p.mean, p.variance.sqrt(), rho)).sum()
}

/// Sum over the posterior mixture of the per-sample expected improvement.
pub fn expected_improvement(x: &[f64], posteriors: &[PosteriorSnapshot], inc: &Incumbent) -> Result<f64> {
    if posteriors.is_empty() {
        return invalid("expected improvement needs at least one posterior");
    }
    let preds = posteriors.iter().map(|p| p.predict(x)).collect::<Result<Vec<_>>>()?;
    Ok(ei_from_predictions(preds.into_iter(), inc.rho))
}

struct Scored {
    ei: f64,
    variance: f64,
}

fn score(x: &[f64], posteriors: &[PosteriorSnapshot], rho: f64) -> Result<Scored> {
    let mut ei = 0.0;
    let mut variance = 0.0;
    for post in posteriors {
        let q: PreparedPoint = post.spec().prepare(x)?;
        let p = post.predict_prepared(&q);
        ei += ei_term(p.mean, p.variance.sqrt(), rho);
        variance += p.variance;
    }
    Ok(Scored { ei, variance: variance / posteriors.len() as f64 })
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Orders by larger value, then by the lexicographically lower point.
fn better(a: (f64, &[f64]), b: (f64, &[f64])) -> bool {
    match a.0.total_cmp(&b.0) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => lexicographic(a.1, b.1) == Ordering::Less,
    }
}

/// Maximizes EI over `[0, 1]^d` with `budget` acquisition evaluations.
///
/// A randomly shifted Sobol scan of `⌈0.9·budget⌉` points, plus the given
/// `candidates` (incumbent location, local-region centers), is followed by a
/// Nelder–Mead refinement from the best scan point with the remaining budget.
pub fn maximize_acquisition<R: Rng + ?Sized>(
    posteriors: &[PosteriorSnapshot],
    inc: &Incumbent,
    candidates: &[Vec<f64>],
    budget: usize,
    rng: &mut R,
) -> Result<AcquisitionResult> {
    if posteriors.is_empty() {
        return invalid("acquisition needs at least one posterior");
    }
    if budget < 100 {
        return invalid(format!("acquisition budget {budget} is below the minimum of 100"));
    }
    let d = posteriors[0].spec().dim();
    let scan_count = (0.9 * budget as f64).ceil() as usize;

    let shift: Vec<f64> = (0..d).map(|_| rng.random()).collect();
    let mut seq = SobolSequence::new(d)?;
    let mut points: Vec<Vec<f64>> = candidates
        .iter()
        .filter(|c| c.len() == d)
        .map(|c| c.iter().map(|v| v.clamp(0.0, 1.0)).collect())
        .collect();
    points.extend((0..scan_count).map(|_| {
        seq.next_point().iter().zip(&shift).map(|(s, u)| (s + u).fract()).collect()
    }));

    let scores = points
        .par_iter()
        .map(|x| score(x, posteriors, inc.rho))
        .collect::<Result<Vec<_>>>()?;

    let mut best = 0;
    let mut widest = 0;
    for i in 1..points.len() {
        if better((scores[i].ei, &points[i]), (scores[best].ei, &points[best])) {
            best = i;
        }
        if better((scores[i].variance, &points[i]), (scores[widest].variance, &points[widest])) {
            widest = i;
        }
    }
    let max_variance_x = points[widest].clone();
    if scores[best].ei <= 0.0 {
        return Ok(AcquisitionResult { x_next: points[best].clone(), ei_value: 0.0, max_variance_x });
    }

    let local_budget = budget.saturating_sub(scan_count);
    let (x_nm, ei_nm) = nelder_mead_max(
        |x| score(x, posteriors, inc.rho).map(|s| s.ei).unwrap_or(0.0),
        &points[best],
        scores[best].ei,
        local_budget,
    );
    let (x_next, ei_value) = if better((ei_nm, &x_nm), (scores[best].ei, &points[best])) {
        (x_nm, ei_nm)
    } else {
        (points[best].clone(), scores[best].ei)
    };
    Ok(AcquisitionResult { x_next, ei_value, max_variance_x })
}

/// Box-constrained Nelder–Mead maximization; evaluated points are clamped to
/// the unit hypercube.
fn nelder_mead_max<F: Fn(&[f64]) -> f64>(
    f: F,
    start: &[f64],
    f_start: f64,
    budget: usize,
) -> (Vec<f64>, f64) {
    const INITIAL_STEP: f64 = 0.05;
    let d = start.len();
    if budget <= d {
        return (start.to_vec(), f_start);
    }
    let clamp = |x: Vec<f64>| -> Vec<f64> { x.into_iter().map(|v| v.clamp(0.0, 1.0)).collect() };
    let mut evals = 0usize;
    // minimize the negated objective
    let eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        -f(x)
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    simplex.push((start.to_vec(), -f_start));
    for i in 0..d {
        let mut x = start.to_vec();
        x[i] = if x[i] + INITIAL_STEP <= 1.0 { x[i] + INITIAL_STEP } else { x[i] - INITIAL_STEP };
        let fx = eval(&x, &mut evals);
        simplex.push((x, fx));
    }

    while evals < budget {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| lexicographic(&a.0, &b.0)));
        let spread = simplex[d].1 - simplex[0].1;
        let size = simplex[1..]
            .iter()
            .map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if spread.abs() < 1e-15 && size < 1e-10 {
            break;
        }
        let centroid: Vec<f64> = (0..d)
            .map(|j| simplex[..d].iter().map(|(x, _)| x[j]).sum::<f64>() / d as f64)
            .collect();
        let worst = simplex[d].clone();
        let along = |t: f64| -> Vec<f64> {
            clamp(centroid.iter().zip(&worst.0).map(|(c, w)| c + t * (c - w)).collect())
        };

        let xr = along(1.0);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = along(2.0);
            let fe = eval(&xe, &mut evals);
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
        } else {
            let (xc, fc) = if fr < worst.1 {
                let xc = along(0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            } else {
                let xc = along(-0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            };
            if fc < worst.1.min(fr) {
                simplex[d] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    if evals >= budget {
                        break;
                    }
                    let x: Vec<f64> = best.iter().zip(&v.0).map(|(b, x)| b + 0.5 * (x - b)).collect();
                    let fx = eval(&x, &mut evals);
                    *v = (x, fx);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| lexicographic(&a.0, &b.0)));
    let (x, fx) = simplex.swap_remove(0);
    (x, -fx)
}
