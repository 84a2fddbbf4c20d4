//! Rotated and translated test functions.
//!
//! Each base function is written in its usual minimization form with the
//! optimum at `y = 0` (Rosenbrock is shifted so that this holds). A problem
//! evaluates `−f(R(z − t))` for a seeded orthogonal `R` and offset `t`, so the
//! optimizer always maximizes and the optimum sits at `z = t` with value 0.
//!
//! | id | base function |
//! |----|---------------|
//! | `sphere` | `Σ yᵢ²` |
//! | `schwefel` | `Σᵢ (Σ_{j≤i} yⱼ)²` |
//! | `tablet` | `10⁶ y₁² + Σ_{i≥2} yᵢ²` |
//! | `cigar` | `y₁² + 10⁶ Σ_{i≥2} yᵢ²` |
//! | `ellipsoid` | `Σ 10^{6(i−1)/(d−1)} yᵢ²` |
//! | `diffpow` | `Σ \|yᵢ\|^{2 + 10(i−1)/(d−1)}` |
//! | `sharpr` | `−y₁ + 100 ‖y_{2:d}‖` (unbounded) |
//! | `parabr` | `−y₁ + 100 ‖y_{2:d}‖²` (unbounded) |
//! | `rosenbrock` | `Σ 100(wᵢ₊₁ − wᵢ²)² + (1 − wᵢ)²`, `w = y + 1` |
//! | `rastrigin` | `10d + Σ (yᵢ² − 10 cos 2πyᵢ)` |
//! | `ackley` | `20 − 20 e^{−0.2 √(‖y‖²/d)} + e − e^{Σ cos(2πyᵢ)/d}` |
//! | `griewank` | `Σ yᵢ²/4000 − Π cos(yᵢ/√i) + 1` |
//! | `weierstrass` | `Σᵢ Σ_{k≤20} ½ᵏ cos(2π 3ᵏ (yᵢ + ½)) − d Σ_{k≤20} ½ᵏ cos(π 3ᵏ)` |

use std::f64::consts::{E, PI};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, EnesError, Result};
use crate::gradient::BaselineMode;
use crate::mixing::DEFAULT_REFRESH_RATE;
use crate::optimizer::{run, Objective, RunConfig, RunResult};

/// Fitness an unbounded ridge function must reach to count as solved.
pub const RIDGE_THRESHOLD: f64 = 1e10;

const WEIERSTRASS_A: f64 = 0.5;
const WEIERSTRASS_B: f64 = 3.0;
const WEIERSTRASS_K_MAX: i32 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FunctionId {
    Sphere,
    Schwefel,
    Tablet,
    Cigar,
    Ellipsoid,
    DiffPow,
    SharpR,
    ParabR,
    Rosenbrock,
    Rastrigin,
    Ackley,
    Griewank,
    Weierstrass,
}

impl FunctionId {
    pub const UNIMODAL: [FunctionId; 9] = [
        Self::Sphere,
        Self::Schwefel,
        Self::Tablet,
        Self::Cigar,
        Self::Ellipsoid,
        Self::DiffPow,
        Self::SharpR,
        Self::ParabR,
        Self::Rosenbrock,
    ];

    pub const MULTIMODAL: [FunctionId; 4] = [Self::Rastrigin, Self::Ackley, Self::Griewank, Self::Weierstrass];

    pub fn name(self) -> &'static str {
        match self {
            Self::Sphere => "sphere",
            Self::Schwefel => "schwefel",
            Self::Tablet => "tablet",
            Self::Cigar => "cigar",
            Self::Ellipsoid => "ellipsoid",
            Self::DiffPow => "diffpow",
            Self::SharpR => "sharpr",
            Self::ParabR => "parabr",
            Self::Rosenbrock => "rosenbrock",
            Self::Rastrigin => "rastrigin",
            Self::Ackley => "ackley",
            Self::Griewank => "griewank",
            Self::Weierstrass => "weierstrass",
        }
    }

    pub fn is_multimodal(self) -> bool {
        Self::MULTIMODAL.contains(&self)
    }

    /// Ridge functions without a finite optimum.
    pub fn is_unbounded(self) -> bool {
        matches!(self, Self::SharpR | Self::ParabR)
    }

    /// Fitness that counts as success: `−precision`, or the fixed threshold
    /// for the unbounded ridge functions.
    pub fn target_fitness(self, precision: f64) -> f64 {
        if self.is_unbounded() {
            RIDGE_THRESHOLD
        } else {
            -precision
        }
    }

    /// Distance from `fitness` to the optimum (or to the ridge threshold).
    pub fn gap(self, fitness: f64) -> f64 {
        (self.target_fitness(0.0) - fitness).max(0.0)
    }

    /// The base function in minimization form, optimum 0 at `y = 0` for the
    /// bounded functions.
    pub fn base(self, y: &[f64]) -> f64 {
        let d = y.len();
        // (i − 1)/(d − 1) for 0-based i, 0 when d = 1.
        let frac = |i: usize| if d > 1 { i as f64 / (d - 1) as f64 } else { 0.0 };
        let sq = |v: &f64| v * v;
        match self {
            Self::Sphere => y.iter().map(sq).sum(),
            Self::Schwefel => y
                .iter()
                .scan(0.0, |acc, v| {
                    *acc += v;
                    Some(*acc * *acc)
                })
                .sum(),
            Self::Tablet => 1e6 * y[0] * y[0] + y[1..].iter().map(sq).sum::<f64>(),
            Self::Cigar => y[0] * y[0] + 1e6 * y[1..].iter().map(sq).sum::<f64>(),
            Self::Ellipsoid => y
                .iter()
                .enumerate()
                .map(|(i, v)| 10f64.powf(6.0 * frac(i)) * v * v)
                .sum(),
            Self::DiffPow => y
                .iter()
                .enumerate()
                .map(|(i, v)| v.abs().powf(2.0 + 10.0 * frac(i)))
                .sum(),
            Self::SharpR => -y[0] + 100.0 * y[1..].iter().map(sq).sum::<f64>().sqrt(),
            Self::ParabR => -y[0] + 100.0 * y[1..].iter().map(sq).sum::<f64>(),
            Self::Rosenbrock => y
                .windows(2)
                .map(|w| {
                    let (a, b) = (w[0] + 1.0, w[1] + 1.0);
                    100.0 * (b - a * a).powi(2) + (1.0 - a).powi(2)
                })
                .sum(),
            Self::Rastrigin => {
                10.0 * d as f64 + y.iter().map(|v| v * v - 10.0 * (2.0 * PI * v).cos()).sum::<f64>()
            }
            Self::Ackley => {
                let n = d as f64;
                let mean_sq = y.iter().map(sq).sum::<f64>() / n;
                let mean_cos = y.iter().map(|v| (2.0 * PI * v).cos()).sum::<f64>() / n;
                20.0 - 20.0 * (-0.2 * mean_sq.sqrt()).exp() + E - mean_cos.exp()
            }
            Self::Griewank => {
                let sum = y.iter().map(sq).sum::<f64>() / 4000.0;
                let prod: f64 = y
                    .iter()
                    .enumerate()
                    .map(|(i, v)| (v / ((i + 1) as f64).sqrt()).cos())
                    .product();
                sum - prod + 1.0
            }
            Self::Weierstrass => {
                let terms = |x: f64| -> f64 {
                    (0..=WEIERSTRASS_K_MAX)
                        .map(|k| WEIERSTRASS_A.powi(k) * (2.0 * PI * WEIERSTRASS_B.powi(k) * x).cos())
                        .sum()
                };
                let offset = terms(0.5);
                y.iter().map(|v| terms(v + 0.5) - offset).sum()
            }
        }
    }
}

impl std::fmt::Display for FunctionId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for FunctionId {
    type Err = EnesError;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Self::UNIMODAL
            .iter()
            .chain(&Self::MULTIMODAL)
            .copied()
            .find(|f| f.name() == lower)
            .ok_or_else(|| EnesError::Config(format!("unknown function `{s}`")))
    }
}

/// Everything needed to rebuild a [`BenchmarkProblem`] bit for bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub function: FunctionId,
    pub dim: usize,
    pub seed: u64,
}

/// A base function behind a fixed rotation and translation.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkProblem {
    spec: ProblemSpec,
    rotation: DMatrix<f64>,
    translation: DVector<f64>,
}

/// Builds the problem for `function` in `dim` dimensions from `seed`.
///
/// The rotation is the Q factor of a Gaussian matrix with signs chosen so
/// that R has a positive diagonal; the translation is uniform in `[−1, 1]^d`.
pub fn make_problem(function: FunctionId, dim: usize, seed: u64) -> Result<BenchmarkProblem> {
    BenchmarkProblem::new(ProblemSpec { function, dim, seed })
}

impl BenchmarkProblem {
    pub fn new(spec: ProblemSpec) -> Result<Self> {
        let d = spec.dim;
        if d == 0 {
            return Err(EnesError::Config("dimension must be positive".into()));
        }
        if spec.function.is_unbounded() && d < 2 {
            return Err(EnesError::Config(format!("{} needs at least 2 dimensions", spec.function)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let gaussian = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let qr = gaussian.qr();
        let r = qr.r();
        let mut rotation = qr.q();
        for j in 0..d {
            if r[(j, j)] < 0.0 {
                rotation.column_mut(j).neg_mut();
            }
        }
        let translation = DVector::from_fn(d, |_, _| rng.random_range(-1.0..=1.0));
        Ok(Self {
            spec,
            rotation,
            translation,
        })
    }

    pub fn spec(&self) -> ProblemSpec {
        self.spec
    }

    pub fn function(&self) -> FunctionId {
        self.spec.function
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn rotation(&self) -> &DMatrix<f64> {
        &self.rotation
    }

    /// Location of the optimum.
    pub fn translation(&self) -> &DVector<f64> {
        &self.translation
    }

    /// `y = R(z − t)`.
    pub fn transform(&self, z: &[f64]) -> Result<DVector<f64>> {
        check_len(self.dim(), z.len())?;
        if z.iter().any(|v| !v.is_finite()) {
            return Err(EnesError::InvalidArgument("non-finite input".into()));
        }
        Ok(&self.rotation * (DVector::from_column_slice(z) - &self.translation))
    }

    /// Fitness to maximize, `−f(R(z − t))`.
    pub fn evaluate(&self, z: &[f64]) -> Result<f64> {
        let y = self.transform(z)?;
        Ok(-self.spec.function.base(y.as_slice()))
    }

    /// Fitness a run must reach to count as solved at the given precision.
    /// Ridge functions ignore the precision and use [`RIDGE_THRESHOLD`].
    pub fn target_fitness(&self, precision: f64) -> f64 {
        self.spec.function.target_fitness(precision)
    }

    pub fn gap(&self, fitness: f64) -> f64 {
        self.spec.function.gap(fitness)
    }

    pub fn initial_guess(&self, distance: f64, seed: u64) -> Result<DVector<f64>> {
        if !(distance > 0.0 && distance.is_finite()) {
            return Err(EnesError::InvalidArgument(format!("initial distance {distance} must be positive")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let direction = loop {
            let v = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
            let norm = v.norm();
            if norm > 0.0 {
                break v / norm;
            }
        };
        Ok(&self.translation + direction * distance)
    }
}

impl Objective for BenchmarkProblem {
    fn dim(&self) -> usize {
        self.spec.dim
    }

    fn evaluate(&mut self, z: &[f64]) -> f64 {
        BenchmarkProblem::evaluate(self, z).unwrap_or(f64::NAN)
    }
}

/// Settings for one optimizer run on a benchmark problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRun {
    pub population_size: usize,
    pub initial_distance: f64,
    /// Gap to the optimum that counts as success; ignored for ridge functions.
    pub target_precision: f64,
    pub max_evaluations: u64,
    pub refresh_rate: f64,
    pub learning_rate: f64,
    pub baseline_mode: BaselineMode,
}

impl Default for BenchmarkRun {
    fn default() -> Self {
        Self {
            population_size: 50,
            initial_distance: 1.0,
            target_precision: 1e-10,
            max_evaluations: 1_000_000,
            refresh_rate: DEFAULT_REFRESH_RATE,
            learning_rate: 1.0,
            baseline_mode: BaselineMode::Block,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkOutcome {
    pub result: RunResult,
    /// Evaluations spent when the target was first met.
    pub evaluations_to_target: Option<u64>,
}

impl BenchmarkOutcome {
    pub fn success(&self) -> bool {
        self.evaluations_to_target.is_some()
    }
}

/// Seeds derived from one repetition seed: problem, initial guess, run.
pub fn derive_seeds(seed: u64) -> [u64; 3] {
    [seed, seed ^ 0x9E37_79B9_7F4A_7C15, seed ^ 0xD1B5_4A32_D192_ED03]
}

/// The problem and run configuration for `(function, dim, seed)`, starting
/// at the seeded initial guess.
pub fn prepare_benchmark(
    function: FunctionId,
    dim: usize,
    seed: u64,
    settings: &BenchmarkRun,
) -> Result<(BenchmarkProblem, RunConfig)> {
    let [problem_seed, guess_seed, run_seed] = derive_seeds(seed);
    let problem = make_problem(function, dim, problem_seed)?;
    let start = problem.initial_guess(settings.initial_distance, guess_seed)?;
    let config = RunConfig {
        population_size: settings.population_size,
        learning_rate: settings.learning_rate,
        refresh_rate: settings.refresh_rate,
        baseline_mode: settings.baseline_mode,
        target_fitness: problem.target_fitness(settings.target_precision),
        max_evaluations: settings.max_evaluations,
        seed: run_seed,
        initial_mean: start.as_slice().to_vec(),
        ..RunConfig::default()
    };
    Ok((problem, config))
}

/// Builds the problem for `(function, dim, seed)`, starts at the seeded
/// initial guess and runs to termination.
pub fn run_benchmark(function: FunctionId, dim: usize, seed: u64, settings: &BenchmarkRun) -> Result<BenchmarkOutcome> {
    let (problem, config) = prepare_benchmark(function, dim, seed, settings)?;
    let target = config.target_fitness;
    let result = run(config, problem)?;
    let evaluations_to_target = result.log.iter().find(|g| g.best_fitness >= target).map(|g| g.evaluations);
    Ok(BenchmarkOutcome {
        result,
        evaluations_to_target,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all() -> impl Iterator<Item = FunctionId> {
        FunctionId::UNIMODAL.into_iter().chain(FunctionId::MULTIMODAL)
    }

    #[test]
    fn same_seed_same_problem() {
        let a = make_problem(FunctionId::Ellipsoid, 6, 42).unwrap();
        let b = make_problem(FunctionId::Ellipsoid, 6, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, make_problem(FunctionId::Ellipsoid, 6, 43).unwrap());
    }

    #[test]
    fn rotations_are_orthogonal() {
        for seed in 0..100 {
            let p = make_problem(FunctionId::Sphere, 2 + (seed as usize) % 9, seed).unwrap();
            let d = p.dim();
            let residual = (p.rotation().tr_mul(p.rotation()) - DMatrix::<f64>::identity(d, d)).amax();
            assert!(residual < 1e-10, "seed {seed}: {residual}");
            assert!(p.translation().iter().all(|t| (-1.0..=1.0).contains(t)));
        }
        let p = make_problem(FunctionId::Sphere, 1, 3).unwrap();
        assert_eq!(p.rotation()[(0, 0)].abs(), 1.0);
    }

    #[test]
    fn optimum_is_at_translation() {
        for f in all().filter(|f| !f.is_unbounded()) {
            for d in [1, 2, 5, 10] {
                let p = make_problem(f, d, 7).unwrap();
                let value = p.evaluate(p.translation().as_slice()).unwrap();
                assert!(value.abs() < 1e-12, "{f} d={d}: {value}");
            }
        }
    }

    #[test]
    fn base_values() {
        assert_eq!(FunctionId::Sphere.base(&[1.0, 0.0, 0.0]), 1.0);
        let r = FunctionId::Rastrigin.base(&[1.0, 0.0, 0.0]);
        assert!((r - 1.0).abs() < 1e-12, "{r}");
        assert_eq!(FunctionId::Griewank.base(&[0.0; 4]), 0.0);
        assert!(FunctionId::Ackley.base(&[0.0; 4]).abs() < 1e-15);
        assert_eq!(FunctionId::Schwefel.base(&[1.0, 1.0]), 5.0);
        assert_eq!(FunctionId::Tablet.base(&[1.0, 1.0]), 1e6 + 1.0);
        assert_eq!(FunctionId::Cigar.base(&[1.0, 1.0]), 1.0 + 1e6);
        assert_eq!(FunctionId::Ellipsoid.base(&[0.0, 1.0]), 1e6);
        assert_eq!(FunctionId::DiffPow.base(&[2.0, 0.5]), 4.0 + 0.5f64.powi(12));
        assert_eq!(FunctionId::SharpR.base(&[1.0, 3.0, 4.0]), -1.0 + 500.0);
        assert_eq!(FunctionId::ParabR.base(&[1.0, 3.0, 4.0]), -1.0 + 2500.0);
        assert_eq!(FunctionId::Rosenbrock.base(&[0.0, 1.0]), 100.0);
    }

    #[test]
    fn sphere_at_unit_distance() {
        let p = make_problem(FunctionId::Sphere, 4, 1).unwrap();
        let z = p.initial_guess(1.0, 9).unwrap();
        assert!((p.evaluate(z.as_slice()).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn rotation_invariance_of_harness() {
        for f in all() {
            let p = make_problem(f, 3, 5).unwrap();
            let z = [0.3, -0.8, 1.1];
            let y = p.transform(&z).unwrap();
            assert_eq!(p.evaluate(&z).unwrap(), -f.base(y.as_slice()));
        }
    }

    #[test]
    fn bounded_unimodal_optimum_is_local_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for f in FunctionId::UNIMODAL.into_iter().filter(|f| !f.is_unbounded()) {
            let p = make_problem(f, 5, 11).unwrap();
            for _ in 0..200 {
                let dir = DVector::from_fn(5, |_, _| rng.sample::<f64, _>(StandardNormal));
                let z = p.translation() + dir.normalize() * 1e-3;
                assert!(p.evaluate(z.as_slice()).unwrap() <= 0.0, "{f}");
            }
        }
    }

    #[test]
    fn initial_guess_distance_and_isotropy() {
        let p = make_problem(FunctionId::Rastrigin, 3, 2).unwrap();
        let a = p.initial_guess(1.0, 1).unwrap();
        let b = p.initial_guess(1.0, 2).unwrap();
        assert!(((&a - p.translation()).norm() - 1.0).abs() < 1e-12);
        assert!(((&b - p.translation()).norm() - 1.0).abs() < 1e-12);
        assert_ne!(a, b);
        assert!(p.initial_guess(0.0, 1).is_err());

        let n = 10_000;
        let mut mean = DVector::zeros(3);
        for seed in 0..n {
            mean += p.initial_guess(1.0, seed).unwrap() - p.translation();
        }
        mean /= n as f64;
        // Each coordinate of a uniform unit direction has variance 1/d.
        let se = (1.0 / 3.0 / n as f64).sqrt();
        assert!(mean.amax() < 5.0 * se, "{mean}");
    }

    #[test]
    fn gap_and_target() {
        let p = make_problem(FunctionId::Sphere, 2, 0).unwrap();
        assert_eq!(p.gap(-0.25), 0.25);
        assert_eq!(p.target_fitness(1e-10), -1e-10);
        let r = make_problem(FunctionId::SharpR, 2, 0).unwrap();
        assert_eq!(r.target_fitness(1e-10), RIDGE_THRESHOLD);
        assert_eq!(r.gap(2e10), 0.0);
    }

    #[test]
    fn parse_names() {
        for f in all() {
            assert_eq!(f.name().parse::<FunctionId>().unwrap(), f);
        }
        assert_eq!("DiffPow".parse::<FunctionId>().unwrap(), FunctionId::DiffPow);
        assert!("bohachevsky".parse::<FunctionId>().is_err());
        assert!(make_problem(FunctionId::SharpR, 1, 0).is_err());
        assert!(p_err(make_problem(FunctionId::Sphere, 2, 0).unwrap().evaluate(&[f64::NAN, 0.0])));
    }

    fn p_err(r: Result<f64>) -> bool {
        r.is_err()
    }
}
