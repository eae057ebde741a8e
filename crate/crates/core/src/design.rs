//! Space-filling initial designs on the unit hypercube.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest dimension supported by the embedded Sobol direction numbers.
pub const SOBOL_MAX_DIM: usize = 32;

const SOBOL_BITS: usize = 32;

/// Largest double below one; keeps generated coordinates in `[0, 1)`.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignKind {
    Lhs,
    Sobol,
}

impl std::str::FromStr for DesignKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lhs" => Ok(DesignKind::Lhs),
            "sobol" => Ok(DesignKind::Sobol),
            other => Err(format!("unknown design kind '{other}' (expected lhs or sobol)")),
        }
    }
}

/// Initial design request: `count` points of dimension `dim`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InitialDesign {
    pub kind: DesignKind,
    pub count: usize,
    pub dim: usize,
}

impl InitialDesign {
    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<Vec<f64>>> {
        match self.kind {
            DesignKind::Lhs => Ok(lhs(self.count, self.dim, rng)),
            DesignKind::Sobol => sobol(self.count, self.dim),
        }
    }
}

/// Latin hypercube sample: in every dimension, exactly one point per stratum
/// `[i/p, (i+1)/p)`, with a uniform offset inside the stratum.
pub fn lhs<R: Rng + ?Sized>(p: usize, d: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut points = vec![vec![0.0; d]; p];
    let mut strata: Vec<usize> = (0..p).collect();
    for j in 0..d {
        strata.shuffle(rng);
        for (point, &s) in points.iter_mut().zip(&strata) {
            let u: f64 = rng.random();
            point[j] = ((s as f64 + u) / p as f64).min(BELOW_ONE);
        }
    }
    points
}

/// Primitive polynomial degree `s`, coefficient bits `a` and initial direction
/// numbers `m` for dimensions 2..=32 (Joe and Kuo, new-joe-kuo-6.21201).
const JOE_KUO: [(u32, u32, &[u32]); SOBOL_MAX_DIM - 1] = [
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
    (4, 4, &[1, 3, 5, 13]),
    (5, 2, &[1, 1, 5, 5, 17]),
    (5, 4, &[1, 1, 5, 5, 5]),
    (5, 7, &[1, 1, 7, 11, 19]),
    (5, 11, &[1, 1, 5, 1, 1]),
    (5, 13, &[1, 1, 1, 3, 11]),
    (5, 14, &[1, 3, 5, 5, 31]),
    (6, 1, &[1, 3, 3, 9, 7, 49]),
    (6, 13, &[1, 1, 1, 15, 21, 21]),
    (6, 16, &[1, 3, 1, 13, 27, 49]),
    (6, 19, &[1, 1, 1, 15, 7, 5]),
    (6, 22, &[1, 3, 1, 15, 13, 25]),
    (6, 25, &[1, 1, 5, 5, 19, 61]),
    (7, 1, &[1, 3, 7, 11, 23, 15, 103]),
    (7, 4, &[1, 3, 7, 13, 13, 15, 69]),
    (7, 7, &[1, 1, 3, 13, 7, 35, 63]),
    (7, 8, &[1, 3, 5, 9, 1, 25, 53]),
    (7, 14, &[1, 3, 1, 13, 9, 35, 107]),
    (7, 19, &[1, 3, 1, 5, 27, 61, 31]),
    (7, 21, &[1, 1, 5, 11, 19, 41, 61]),
    (7, 28, &[1, 3, 5, 3, 3, 13, 69]),
    (7, 31, &[1, 1, 7, 13, 1, 19, 1]),
    (7, 32, &[1, 3, 7, 5, 13, 19, 59]),
    (7, 37, &[1, 1, 3, 9, 25, 29, 41]),
    (7, 41, &[1, 3, 5, 13, 23, 1, 55]),
    (7, 42, &[1, 3, 7, 3, 13, 59, 17]),
];

fn direction_numbers(dim_index: usize) -> [u32; SOBOL_BITS] {
    let mut v = [0u32; SOBOL_BITS];
    if dim_index == 0 {
        for (k, vk) in v.iter_mut().enumerate() {
            *vk = 1u32 << (SOBOL_BITS - 1 - k);
        }
        return v;
    }
    let (s, a, m) = JOE_KUO[dim_index - 1];
    let s = s as usize;
    for k in 0..s {
        v[k] = m[k] << (SOBOL_BITS - 1 - k);
    }
    for k in s..SOBOL_BITS {
        let mut x = v[k - s] ^ (v[k - s] >> s);
        for j in 1..s {
            if (a >> (s - 1 - j)) & 1 == 1 {
                x ^= v[k - j];
            }
        }
        v[k] = x;
    }
    v
}

/// Unscrambled Sobol generator in Gray-code order.
#[derive(Debug, Clone)]
pub struct SobolSequence {
    directions: Vec<[u32; SOBOL_BITS]>,
    state: Vec<u32>,
    index: u64,
}

impl SobolSequence {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 || dim > SOBOL_MAX_DIM {
            return Err(Error::UnsupportedDimension { dim, max: SOBOL_MAX_DIM });
        }
        Ok(Self {
            directions: (0..dim).map(direction_numbers).collect(),
            state: vec![0; dim],
            index: 0,
        })
    }

    /// Returns the next point; the first call yields the all-zeros point.
    pub fn next_point(&mut self) -> Vec<f64> {
        let out = self.state.iter().map(|&s| s as f64 / 4_294_967_296.0).collect();
        let bit = self.index.trailing_ones() as usize;
        for (s, v) in self.state.iter_mut().zip(&self.directions) {
            *s ^= v[bit.min(SOBOL_BITS - 1)];
        }
        self.index += 1;
        out
    }
}

/// Points `1..=p` of the Sobol sequence (the all-zeros point is skipped).
pub fn sobol(p: usize, d: usize) -> Result<Vec<Vec<f64>>> {
    let mut seq = SobolSequence::new(d)?;
    seq.next_point();
    Ok((0..p).map(|_| seq.next_point()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn strata_ok(points: &[Vec<f64>]) -> bool {
        let p = points.len();
        let d = points[0].len();
        (0..d).all(|j| {
            let mut seen = vec![false; p];
            for x in points {
                let s = (x[j] * p as f64).floor() as usize;
                if s >= p || seen[s] {
                    return false;
                }
                seen[s] = true;
            }
            true
        })
    }

    #[test]
    fn lhs_single_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = lhs(1, 4, &mut rng);
        assert_eq!(pts.len(), 1);
        assert!(pts[0].iter().all(|v| (0.0..1.0).contains(v)));
    }

    #[test]
    fn lhs_stratifies() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        assert!(strata_ok(&lhs(10, 3, &mut rng)));
    }

    #[test]
    fn lhs_seed_determinism() {
        let a = lhs(10, 3, &mut ChaCha8Rng::seed_from_u64(3));
        let b = lhs(10, 3, &mut ChaCha8Rng::seed_from_u64(3));
        let c = lhs(10, 3, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn sobol_leading_points() {
        for d in [1, 2, 5, 32] {
            let pts = sobol(2, d).unwrap();
            assert!(pts[0].iter().all(|&v| v == 0.5));
        }
        let pts = sobol(3, 2).unwrap();
        assert_eq!(pts[1], vec![0.75, 0.25]);
        assert_eq!(pts[2], vec![0.25, 0.75]);
    }

    #[test]
    fn sobol_rejects_large_dimension() {
        assert!(matches!(sobol(4, 33), Err(Error::UnsupportedDimension { dim: 33, .. })));
        assert!(sobol(4, 0).is_err());
    }

    #[test]
    fn sobol_is_deterministic_and_in_range() {
        let a = sobol(200, 7).unwrap();
        assert_eq!(a, sobol(200, 7).unwrap());
        assert!(a.iter().flatten().all(|v| (0.0..1.0).contains(v)));
    }

    #[test]
    fn sobol_power_of_two_blocks_are_stratified() {
        // each dimension of the first 2^k points (including the origin) hits every dyadic cell once
        let mut seq = SobolSequence::new(6).unwrap();
        let pts: Vec<Vec<f64>> = (0..64).map(|_| seq.next_point()).collect();
        assert!(strata_ok(&pts));
    }
}
