//! Benchmark objectives behind one black-box interface.
//!
//! Every objective is minimized. The optimizer works in the unit hypercube and
//! maps points affinely onto each objective's native box.

use std::f64::consts::PI;

use rand::{Rng, RngCore};

use crate::error::{invalid, Error, Result};
use crate::surrogate::DEFAULT_NOISE;

/// A black-box cost function over an axis-aligned box.
pub trait Objective: Send + Sync {
    /// Registry name, e.g. `branin` or `michalewicz-d5-m10`.
    fn name(&self) -> String;

    fn bounds(&self) -> &[(f64, f64)];

    fn dim(&self) -> usize {
        self.bounds().len()
    }

    /// Cost at a native-box point. Deterministic objectives ignore `rng`.
    fn evaluate(&self, x: &[f64], rng: &mut dyn RngCore) -> Result<f64>;

    fn is_stochastic(&self) -> bool {
        false
    }

    fn known_optimum(&self) -> Option<f64> {
        None
    }

    /// Evaluation budget used when a run does not set one.
    fn default_budget(&self) -> usize;

    /// GP observation noise suited to this objective.
    fn default_noise(&self) -> f64 {
        DEFAULT_NOISE
    }

    fn to_native(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(self.bounds()).map(|(u, (lo, hi))| lo + u * (hi - lo)).collect()
    }

    fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.bounds()).map(|(x, (lo, hi))| (x - lo) / (hi - lo)).collect()
    }
}

fn check_box(x: &[f64], bounds: &[(f64, f64)]) -> Result<()> {
    if x.len() != bounds.len() {
        return invalid(format!("point has dimension {}, expected {}", x.len(), bounds.len()));
    }
    for (v, (lo, hi)) in x.iter().zip(bounds) {
        let slack = 1e-12 * (hi - lo);
        if !(v.is_finite() && *v >= lo - slack && *v <= hi + slack) {
            return invalid(format!("coordinate {v} outside [{lo}, {hi}]"));
        }
    }
    Ok(())
}

const GRAMACY_BOUNDS: [(f64, f64); 2] = [(-2.0, 6.0), (-2.0, 6.0)];
const BRANIN_BOUNDS: [(f64, f64); 2] = [(-5.0, 10.0), (0.0, 15.0)];
const UNIT6: [(f64, f64); 6] = [(0.0, 1.0); 6];

/// Global minimum of [`gramacy`], attained at `(-1/√2, 0)`.
pub const GRAMACY_MIN: f64 = -0.428_881_942_480_353_4;
pub const BRANIN_MIN: f64 = 0.397_887_357_729_738_2;
pub const HARTMANN6_MIN: f64 = -3.322_368_011_391_339;
pub const HARTMANN6_ARGMIN: [f64; 6] = [0.20169, 0.150011, 0.476874, 0.275332, 0.311652, 0.6573];

/// `x₁ exp(-x₁² - x₂²)` on `[-2, 6]²`.
pub fn gramacy(x: &[f64]) -> Result<f64> {
    check_box(x, &GRAMACY_BOUNDS)?;
    Ok(x[0] * (-x[0] * x[0] - x[1] * x[1]).exp())
}

/// Branin-Hoo on `[-5, 10] × [0, 15]`.
pub fn branin(x: &[f64]) -> Result<f64> {
    check_box(x, &BRANIN_BOUNDS)?;
    let b = 5.1 / (4.0 * PI * PI);
    let c = 5.0 / PI;
    let t = 1.0 / (8.0 * PI);
    let q = x[1] - b * x[0] * x[0] + c * x[0] - 6.0;
    Ok(q * q + 10.0 * (1.0 - t) * x[0].cos() + 10.0)
}

const HARTMANN_ALPHA: [f64; 4] = [1.0, 1.2, 3.0, 3.2];
const HARTMANN_A: [[f64; 6]; 4] = [
    [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
    [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
    [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
    [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
];
const HARTMANN_P: [[f64; 6]; 4] = [
    [0.1312, 0.1696, 0.5569, 0.0124, 0.8283, 0.5886],
    [0.2329, 0.4135, 0.8307, 0.3736, 0.1004, 0.9991],
    [0.2348, 0.1451, 0.3522, 0.2883, 0.3047, 0.6650],
    [0.4047, 0.8828, 0.8732, 0.5743, 0.1091, 0.0381],
];

/// Six-dimensional Hartmann function on `[0, 1]⁶`.
pub fn hartmann6(x: &[f64]) -> Result<f64> {
    check_box(x, &UNIT6)?;
    Ok(-HARTMANN_ALPHA
        .iter()
        .zip(HARTMANN_A.iter().zip(&HARTMANN_P))
        .map(|(alpha, (a, p))| {
            let inner: f64 = (0..6).map(|j| a[j] * (x[j] - p[j]).powi(2)).sum();
            alpha * (-inner).exp()
        })
        .sum::<f64>())
}

/// `-Σ sin(x_i) sin^{2m}(i x_i² / π)` on `[0, π]^d`.
pub fn michalewicz(x: &[f64], m: u32) -> Result<f64> {
    if m == 0 {
        return invalid("michalewicz steepness must be at least 1");
    }
    if x.is_empty() {
        return invalid("michalewicz needs at least one dimension");
    }
    check_box(x, &vec![(0.0, PI); x.len()])?;
    Ok(-x
        .iter()
        .enumerate()
        .map(|(i, &xi)| xi.sin() * ((i + 1) as f64 * xi * xi / PI).sin().powi(2 * m as i32))
        .sum::<f64>())
}

macro_rules! closed_form_objective {
    ($ty:ident, $name:literal, $bounds:expr, $f:expr, $opt:expr, $budget:expr) => {
        #[derive(Debug, Clone, Copy, Default)]
        pub struct $ty;

        impl Objective for $ty {
            fn name(&self) -> String {
                $name.to_string()
            }
            fn bounds(&self) -> &[(f64, f64)] {
                &$bounds
            }
            fn evaluate(&self, x: &[f64], _rng: &mut dyn RngCore) -> Result<f64> {
                $f(x)
            }
            fn known_optimum(&self) -> Option<f64> {
                Some($opt)
            }
            fn default_budget(&self) -> usize {
                $budget
            }
        }
    };
}

closed_form_objective!(Gramacy, "gramacy", GRAMACY_BOUNDS, gramacy, GRAMACY_MIN, 60);
closed_form_objective!(Branin, "branin", BRANIN_BOUNDS, branin, BRANIN_MIN, 40);
closed_form_objective!(Hartmann6, "hartmann6", UNIT6, hartmann6, HARTMANN6_MIN, 70);

#[derive(Debug, Clone)]
pub struct Michalewicz {
    m: u32,
    bounds: Vec<(f64, f64)>,
}

impl Michalewicz {
    pub fn new(dim: usize, m: u32) -> Result<Self> {
        if dim == 0 || m == 0 {
            return invalid("michalewicz needs dim >= 1 and m >= 1");
        }
        Ok(Self { m, bounds: vec![(0.0, PI); dim] })
    }
}

impl Objective for Michalewicz {
    fn name(&self) -> String {
        format!("michalewicz-d{}-m{}", self.bounds.len(), self.m)
    }
    fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }
    fn evaluate(&self, x: &[f64], _rng: &mut dyn RngCore) -> Result<f64> {
        michalewicz(x, self.m)
    }
    fn known_optimum(&self) -> Option<f64> {
        // published minima for the m = 10 variant
        match (self.bounds.len(), self.m) {
            (2, 10) => Some(-1.801_303_410_098_554_4),
            (5, 10) => Some(-4.687_658),
            (10, 10) => Some(-9.660_152),
            _ => None,
        }
    }
    fn default_budget(&self) -> usize {
        210
    }
}

/// Episode settings for the mountain-car policy search task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MountainCarTask {
    pub horizon: usize,
    pub episodes_per_eval: usize,
    /// Keeps the tangent transform of the policy weights finite.
    pub epsilon_pi: f64,
}

impl Default for MountainCarTask {
    fn default() -> Self {
        Self { horizon: 500, episodes_per_eval: 5, epsilon_pi: 1e-2 }
    }
}

pub mod mountain_car {
    //! Continuous mountain car (force 0.001, gravity 0.0025).

    pub const MIN_POSITION: f64 = -1.2;
    pub const MAX_POSITION: f64 = 0.6;
    pub const MAX_SPEED: f64 = 0.07;
    pub const GOAL_POSITION: f64 = 0.5;
    pub const FORCE: f64 = 0.001;
    pub const GRAVITY: f64 = 0.0025;

    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct State {
        pub position: f64,
        pub velocity: f64,
    }

    /// Advances one step with action `a` clipped to `[-1, 1]`.
    pub fn step(s: State, a: f64) -> State {
        let a = a.clamp(-1.0, 1.0);
        let mut velocity =
            (s.velocity + FORCE * a - GRAVITY * (3.0 * s.position).cos()).clamp(-MAX_SPEED, MAX_SPEED);
        let position = (s.position + velocity).clamp(MIN_POSITION, MAX_POSITION);
        if position == MIN_POSITION && velocity < 0.0 {
            velocity = 0.0;
        }
        State { position, velocity }
    }

    /// Runs one episode; returns the number of steps taken to reach the goal,
    /// or `None` if the horizon runs out first.
    pub fn run_episode<P: Fn(State) -> f64>(policy: P, start: State, horizon: usize) -> Option<usize> {
        let mut s = start;
        for t in 0..horizon {
            s = step(s, policy(s));
            if s.position >= GOAL_POSITION {
                return Some(t + 1);
            }
        }
        None
    }

    /// Perceptron features `(1, p, v, p², v², p·v, |v|)`.
    pub fn features(s: State) -> [f64; 7] {
        let (p, v) = (s.position, s.velocity);
        [1.0, p, v, p * p, v * v, p * v, v.abs()]
    }
}

/// Linear-perceptron policy search on the mountain car, as a cost to minimize
/// (mean steps to goal, counting failed episodes as the full horizon).
#[derive(Debug, Clone)]
pub struct MountainCar {
    pub task: MountainCarTask,
    bounds: Vec<(f64, f64)>,
}

impl MountainCar {
    pub const DIM: usize = 7;

    pub fn new(task: MountainCarTask) -> Self {
        Self { task, bounds: vec![(0.0, 1.0); Self::DIM] }
    }

    /// Unbounded weights `w = tan((π - ε)·w01 - π/2)`.
    pub fn policy_weights(&self, w01: &[f64]) -> Vec<f64> {
        w01.iter()
            .map(|u| ((PI - self.task.epsilon_pi) * u - PI / 2.0).tan())
            .collect()
    }

    /// Mean steps to goal over `episodes_per_eval` episodes from random starts.
    pub fn mean_steps(&self, w01: &[f64], rng: &mut dyn RngCore) -> Result<f64> {
        check_box(w01, &self.bounds)?;
        let w = self.policy_weights(w01);
        let policy = |s: mountain_car::State| {
            let z: f64 = mountain_car::features(s).iter().zip(&w).map(|(f, w)| f * w).sum();
            z.tanh()
        };
        let mut total = 0.0;
        for _ in 0..self.task.episodes_per_eval {
            let start = mountain_car::State { position: rng.random_range(-0.6..-0.4), velocity: 0.0 };
            let steps = mountain_car::run_episode(policy, start, self.task.horizon)
                .unwrap_or(self.task.horizon);
            total += steps as f64;
        }
        Ok(total / self.task.episodes_per_eval.max(1) as f64)
    }
}

impl Default for MountainCar {
    fn default() -> Self {
        Self::new(MountainCarTask::default())
    }
}

impl Objective for MountainCar {
    fn name(&self) -> String {
        "mountain-car".to_string()
    }
    fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }
    fn evaluate(&self, x: &[f64], rng: &mut dyn RngCore) -> Result<f64> {
        self.mean_steps(x, rng)
    }
    fn is_stochastic(&self) -> bool {
        true
    }
    fn default_budget(&self) -> usize {
        40
    }
    fn default_noise(&self) -> f64 {
        1e-2
    }
}

/// Looks up an objective by registry name: `gramacy`, `branin`, `hartmann6`,
/// `michalewicz-d<k>-m<j>` or `mountain-car`.
pub fn objective_by_name(name: &str) -> Result<Box<dyn Objective>> {
    match name {
        "gramacy" => Ok(Box::new(Gramacy)),
        "branin" => Ok(Box::new(Branin)),
        "hartmann6" => Ok(Box::new(Hartmann6)),
        "mountain-car" => Ok(Box::new(MountainCar::default())),
        other => {
            let parsed = other.strip_prefix("michalewicz-d").and_then(|rest| {
                let (d, m) = rest.split_once("-m")?;
                Some((d.parse::<usize>().ok()?, m.parse::<u32>().ok()?))
            });
            match parsed {
                Some((d, m)) => Ok(Box::new(Michalewicz::new(d, m)?)),
                None => Err(Error::UnknownObjective(other.to_string())),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gramacy_values() {
        assert_eq!(gramacy(&[0.0, 0.0]).unwrap(), 0.0);
        let v = gramacy(&[-std::f64::consts::FRAC_1_SQRT_2, 0.0]).unwrap();
        assert_abs_diff_eq!(v, -0.42888, epsilon = 1e-4);
        assert_abs_diff_eq!(v, GRAMACY_MIN, epsilon = 1e-15);
        assert!(gramacy(&[6.0, 6.0]).unwrap().abs() < 1e-20);
        assert!(gramacy(&[-2.5, 0.0]).is_err());
    }

    #[test]
    fn branin_values() {
        assert_abs_diff_eq!(branin(&[PI, 2.275]).unwrap(), 0.397887, epsilon = 1e-5);
        assert_abs_diff_eq!(branin(&[-PI, 12.275]).unwrap(), 0.397887, epsilon = 1e-5);
        assert_abs_diff_eq!(branin(&[0.0, 0.0]).unwrap(), 55.602, epsilon = 1e-2);
        assert!(branin(&[0.0, 16.0]).is_err());
    }

    #[test]
    fn hartmann_values() {
        assert_abs_diff_eq!(hartmann6(&HARTMANN6_ARGMIN).unwrap(), -3.32237, epsilon = 1e-4);
        let z = hartmann6(&[0.0; 6]).unwrap();
        assert!(z > -1e-2 && z <= 0.0, "hartmann6(0) = {z}");
        let x = [0.3, 0.1, 0.5, 0.9, 0.2, 0.6];
        let mut y = x;
        y.swap(0, 3);
        assert_ne!(hartmann6(&x).unwrap(), hartmann6(&y).unwrap());
        assert!(hartmann6(&[1.1, 0.0, 0.0, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn michalewicz_values() {
        assert_eq!(michalewicz(&[0.0; 10], 10).unwrap(), 0.0);
        assert_abs_diff_eq!(michalewicz(&[2.20, 1.57], 10).unwrap(), -1.8013, epsilon = 1e-3);
        assert!(michalewicz(&[4.0], 10).is_err());
        assert!(michalewicz(&[1.0], 0).is_err());
    }

    #[test]
    fn registry_parses_names() {
        for name in ["gramacy", "branin", "hartmann6", "mountain-car", "michalewicz-d5-m10"] {
            assert_eq!(objective_by_name(name).unwrap().name(), name);
        }
        let m = objective_by_name("michalewicz-d5-m10").unwrap();
        assert_eq!(m.dim(), 5);
        assert!(matches!(objective_by_name("rosenbrock"), Err(Error::UnknownObjective(_))));
        assert!(objective_by_name("michalewicz-d0-m10").is_err());
        assert!(objective_by_name("michalewicz-dx-m10").is_err());
    }

    #[test]
    fn unit_native_round_trip() {
        let b = Branin;
        let u = [0.25, 0.8];
        let back = b.to_unit(&b.to_native(&u));
        for (a, c) in u.iter().zip(&back) {
            assert_abs_diff_eq!(a, c, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_policy_never_reaches_goal() {
        let mc = MountainCar::default();
        assert!(mc.policy_weights(&[0.5; 7]).iter().all(|w| w.abs() < 1e-2));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(mc.evaluate(&[0.5; 7], &mut rng).unwrap(), 500.0);
    }

    #[test]
    fn energy_pumping_reaches_goal() {
        use mountain_car::*;
        let sign = |s: State| {
            if s.velocity > 0.0 {
                1.0
            } else if s.velocity < 0.0 {
                -1.0
            } else {
                0.0
            }
        };
        let steps = run_episode(sign, State { position: -0.5, velocity: 0.0 }, 500).unwrap();
        assert!(steps < 200, "took {steps} steps");
    }

    #[test]
    fn dynamics_stay_on_track() {
        use mountain_car::*;
        let mut s = State { position: -0.5, velocity: 0.0 };
        for t in 0..2000 {
            s = step(s, if (t / 40) % 2 == 0 { -1.0 } else { 1.0 });
            assert!((MIN_POSITION..=MAX_POSITION).contains(&s.position));
            assert!(s.velocity.abs() <= MAX_SPEED);
        }
    }

    #[test]
    fn mountain_car_is_seeded() {
        let mc = MountainCar::default();
        let w = [0.5, 0.52, 0.99, 0.5, 0.5, 0.5, 0.5];
        let a = mc.evaluate(&w, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let b = mc.evaluate(&w, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert_eq!(a, b);
    }
}
