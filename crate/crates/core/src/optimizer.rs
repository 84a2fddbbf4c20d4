//! The generation loop.
//!
//! Each call to [`Optimizer::step`] runs one generation: importance-mix the
//! previous population into the current distribution, evaluate only the fresh
//! individuals, shape the fitnesses of the whole population, compute the
//! natural-gradient update and apply it. Fitness is maximized.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distribution::SearchDistribution;
use crate::error::{EnesError, Result};
use crate::gradient::{natural_gradient_step, shape_fitness, BaselineMode};
use crate::mixing::{importance_mix, Individual, DEFAULT_REFRESH_RATE};

/// A fitness function to maximize.
///
/// The optimizer calls `evaluate` from a single thread, once per fresh
/// individual, and never concurrently within a run.
pub trait Objective {
    fn dim(&self) -> usize;
    fn evaluate(&mut self, z: &[f64]) -> f64;
}

impl<T: Objective + ?Sized> Objective for &mut T {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn evaluate(&mut self, z: &[f64]) -> f64 {
        (**self).evaluate(z)
    }
}

/// Adapts a closure into an [`Objective`].
#[derive(Debug, Clone)]
pub struct FnObjective<F> {
    dim: usize,
    f: F,
}

pub fn objective_fn<F: FnMut(&[f64]) -> f64>(dim: usize, f: F) -> FnObjective<F> {
    FnObjective { dim, f }
}

impl<F: FnMut(&[f64]) -> f64> Objective for FnObjective<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&mut self, z: &[f64]) -> f64 {
        (self.f)(z)
    }
}

/// Generations without improvement after which a run stops.
pub const STAGNATION_GENERATIONS: usize = 200;
/// Improvement smaller than this does not reset the stagnation counter.
pub const STAGNATION_TOLERANCE: f64 = 1e-12;

/// Tunable parameters of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub population_size: usize,
    pub learning_rate: f64,
    pub refresh_rate: f64,
    pub baseline_mode: BaselineMode,
    /// Stop once the best fitness reaches this value.
    pub target_fitness: f64,
    pub max_evaluations: u64,
    pub seed: u64,
    pub initial_mean: Vec<f64>,
    /// Rows of the initial upper-triangular factor; identity when absent.
    pub initial_chol: Option<Vec<Vec<f64>>>,
    pub stagnation_generations: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            population_size: 50,
            learning_rate: 1.0,
            refresh_rate: DEFAULT_REFRESH_RATE,
            baseline_mode: BaselineMode::Block,
            target_fitness: f64::INFINITY,
            max_evaluations: 1_000_000,
            seed: 0,
            initial_mean: Vec::new(),
            initial_chol: None,
            stagnation_generations: STAGNATION_GENERATIONS,
        }
    }
}

impl RunConfig {
    pub fn new(initial_mean: Vec<f64>, population_size: usize) -> Self {
        Self {
            initial_mean,
            population_size,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.population_size < 2 {
            return Err(EnesError::Config(format!("population size {} < 2", self.population_size)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(EnesError::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(0.0..=1.0).contains(&self.refresh_rate) {
            return Err(EnesError::Config(format!("refresh rate {} outside [0, 1]", self.refresh_rate)));
        }
        if self.initial_mean.is_empty() {
            return Err(EnesError::Config("initial mean is empty".into()));
        }
        if self.target_fitness.is_nan() {
            return Err(EnesError::Config("target fitness is NaN".into()));
        }
        Ok(())
    }

    fn initial_distribution(&self) -> Result<SearchDistribution> {
        let d = self.initial_mean.len();
        let mean = DVector::from_column_slice(&self.initial_mean);
        let chol = match &self.initial_chol {
            None => DMatrix::identity(d, d),
            Some(rows) => {
                if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                    return Err(EnesError::Config(format!("initial factor must be {d}x{d}")));
                }
                DMatrix::from_fn(d, d, |i, j| rows[i][j])
            }
        };
        SearchDistribution::new(mean, chol).map_err(|e| EnesError::Config(format!("initial distribution: {e}")))
    }
}

/// Why a run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    TargetReached,
    EvaluationBudget,
    Stagnation,
    NumericalBreakdown,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::TargetReached => "target_reached",
            Self::EvaluationBudget => "evaluation_budget",
            Self::Stagnation => "stagnation",
            Self::NumericalBreakdown => "numerical_breakdown",
        }
    }
}

/// Record of one generation. Generation 0 is the initial population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationLog {
    pub generation: usize,
    /// Objective calls so far, including this generation.
    pub evaluations: u64,
    pub best_fitness: f64,
    pub generation_best: f64,
    /// Individuals evaluated in this generation (`n − n_a`).
    pub fresh: usize,
    /// Baselines of the update computed in this generation; empty when no
    /// update was made.
    pub baselines: Vec<f64>,
    /// Mean after this generation's update.
    pub mean: Vec<f64>,
    /// Diagonal of `A` after this generation's update.
    pub chol_diagonal: Vec<f64>,
    pub conformance_warning: bool,
    /// A diagonal entry of `A` was clamped.
    pub clamped: bool,
    /// Every individual had the same raw fitness, so no update was made.
    pub flat_fitness: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub termination: Termination,
    pub distribution: SearchDistribution,
    pub best_individual: DVector<f64>,
    pub best_fitness: f64,
    pub evaluations: u64,
    pub log: Vec<GenerationLog>,
}

/// Live state of one run.
pub struct Optimizer<O> {
    config: RunConfig,
    objective: O,
    dist: SearchDistribution,
    /// The distribution `population` was drawn from.
    population_dist: SearchDistribution,
    population: Vec<Individual>,
    rng: ChaCha8Rng,
    generation: usize,
    evaluations: u64,
    best: Individual,
    last_improvement: f64,
    stagnant_for: usize,
    log: Vec<GenerationLog>,
    terminated: Option<Termination>,
}

impl<O: Objective> Optimizer<O> {
    /// Sets up the distribution from `config`, then samples and evaluates
    /// the first population.
    pub fn initialize(config: RunConfig, mut objective: O) -> Result<Self> {
        config.validate()?;
        if objective.dim() != config.initial_mean.len() {
            return Err(EnesError::Config(format!(
                "objective has dimension {}, initial mean has {}",
                objective.dim(),
                config.initial_mean.len()
            )));
        }
        let dist = config.initial_distribution()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut population = Vec::with_capacity(config.population_size);
        for index in 0..config.population_size {
            let z = dist.draw(&mut rng);
            let fitness = evaluate(&mut objective, &z, index)?;
            population.push(Individual {
                z,
                fitness,
                inherited: false,
            });
        }
        let best = best_of(&population).clone();
        let log = vec![GenerationLog {
            generation: 0,
            evaluations: population.len() as u64,
            best_fitness: best.fitness,
            generation_best: best.fitness,
            fresh: population.len(),
            baselines: Vec::new(),
            mean: dist.mean().as_slice().to_vec(),
            chol_diagonal: dist.chol().diagonal().as_slice().to_vec(),
            conformance_warning: false,
            clamped: false,
            flat_fitness: false,
        }];
        Ok(Self {
            evaluations: population.len() as u64,
            last_improvement: best.fitness,
            population_dist: dist.clone(),
            config,
            objective,
            dist,
            population,
            rng,
            generation: 0,
            best,
            stagnant_for: 0,
            log,
            terminated: None,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn distribution(&self) -> &SearchDistribution {
        &self.dist
    }

    pub fn population(&self) -> &[Individual] {
        &self.population
    }

    pub fn generation(&self) -> usize {
        self.generation
    }

    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    pub fn best(&self) -> &Individual {
        &self.best
    }

    pub fn log(&self) -> &[GenerationLog] {
        &self.log
    }

    pub fn objective(&self) -> &O {
        &self.objective
    }

    pub fn terminated(&self) -> Option<Termination> {
        self.terminated
    }

    /// Runs one generation and returns its log entry.
    pub fn step(&mut self) -> Result<&GenerationLog> {
        if let Some(reason) = self.terminated {
            return Err(EnesError::InvalidArgument(format!("run already stopped: {}", reason.as_str())));
        }
        let mixed = importance_mix(
            &self.population,
            &self.population_dist,
            &self.dist,
            self.config.refresh_rate,
            &mut self.rng,
        )?;
        let fresh_count = mixed.fresh.len();
        let mut population = mixed.retained;
        for z in mixed.fresh {
            let fitness = evaluate(&mut self.objective, &z, population.len())?;
            population.push(Individual {
                z,
                fitness,
                inherited: false,
            });
        }
        self.evaluations += fresh_count as u64;

        let raw: Vec<f64> = population.iter().map(|i| i.fitness).collect();
        let flat_fitness = raw.iter().all(|f| *f == raw[0]);
        let (baselines, next, clamped) = if flat_fitness {
            (Vec::new(), self.dist.clone(), false)
        } else {
            let shaped = shape_fitness(&raw)?;
            let zs: Vec<DVector<f64>> = population.iter().map(|i| i.z.clone()).collect();
            let step = match natural_gradient_step(&self.dist, &zs, &shaped.values, self.config.baseline_mode) {
                Ok(step) => step,
                Err(e @ EnesError::NumericalBreakdown { .. }) => {
                    self.terminated = Some(Termination::NumericalBreakdown);
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            let outcome = self.dist.apply_update((step.delta * self.config.learning_rate).as_slice())?;
            (step.baselines, outcome.dist, outcome.clamped)
        };

        let generation_best = best_of(&population).clone();
        if generation_best.fitness > self.best.fitness {
            self.best = generation_best.clone();
        }
        if self.best.fitness - self.last_improvement > STAGNATION_TOLERANCE {
            self.last_improvement = self.best.fitness;
            self.stagnant_for = 0;
        } else {
            self.stagnant_for += 1;
        }

        self.population = population;
        self.population_dist = std::mem::replace(&mut self.dist, next);
        self.generation += 1;
        self.log.push(GenerationLog {
            generation: self.generation,
            evaluations: self.evaluations,
            best_fitness: self.best.fitness,
            generation_best: generation_best.fitness,
            fresh: fresh_count,
            baselines,
            mean: self.dist.mean().as_slice().to_vec(),
            chol_diagonal: self.dist.chol().diagonal().as_slice().to_vec(),
            conformance_warning: mixed.conformance_warning,
            clamped,
            flat_fitness,
        });
        Ok(self.log.last().expect("just pushed"))
    }

    /// The stopping rule, checked between generations.
    pub fn should_stop(&self) -> Option<Termination> {
        if self.terminated.is_some() {
            return self.terminated;
        }
        if self.best.fitness >= self.config.target_fitness {
            Some(Termination::TargetReached)
        } else if self.evaluations >= self.config.max_evaluations {
            Some(Termination::EvaluationBudget)
        } else if self.stagnant_for >= self.config.stagnation_generations {
            Some(Termination::Stagnation)
        } else {
            None
        }
    }

    /// Steps until a stopping rule fires.
    pub fn run_to_end(mut self) -> Result<RunResult> {
        let termination = loop {
            if let Some(reason) = self.should_stop() {
                break reason;
            }
            match self.step() {
                Ok(_) => {}
                Err(EnesError::NumericalBreakdown { .. }) => break Termination::NumericalBreakdown,
                Err(e) => return Err(e),
            }
        };
        self.terminated = Some(termination);
        Ok(RunResult {
            termination,
            distribution: self.dist,
            best_individual: self.best.z,
            best_fitness: self.best.fitness,
            evaluations: self.evaluations,
            log: self.log,
        })
    }
}

/// Initializes and runs to termination.
pub fn run<O: Objective>(config: RunConfig, objective: O) -> Result<RunResult> {
    Optimizer::initialize(config, objective)?.run_to_end()
}

fn evaluate<O: Objective>(objective: &mut O, z: &DVector<f64>, index: usize) -> Result<f64> {
    let f = objective.evaluate(z.as_slice());
    if f.is_nan() {
        Err(EnesError::InvalidFitness { index })
    } else {
        Ok(f)
    }
}

/// First individual with the highest fitness.
fn best_of(population: &[Individual]) -> &Individual {
    population
        .iter()
        .reduce(|best, ind| if ind.fitness > best.fitness { ind } else { best })
        .expect("population is never empty")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(z: &[f64]) -> f64 {
        -z.iter().map(|v| v * v).sum::<f64>()
    }

    #[test]
    fn initialize_defaults() {
        let mut calls = 0;
        let opt = Optimizer::initialize(
            RunConfig::new(vec![1.0, 2.0, 3.0], 10),
            objective_fn(3, |z: &[f64]| {
                calls += 1;
                sphere(z)
            }),
        )
        .unwrap();
        assert_eq!(opt.distribution().chol(), &DMatrix::identity(3, 3));
        assert_eq!(opt.evaluations(), 10);
        assert_eq!(opt.generation(), 0);
        assert_eq!(opt.log().len(), 1);
        drop(opt);
        assert_eq!(calls, 10);
    }

    #[test]
    fn initialization_is_deterministic() {
        let cfg = RunConfig {
            seed: 99,
            ..RunConfig::new(vec![0.5; 4], 8)
        };
        let a = Optimizer::initialize(cfg.clone(), objective_fn(4, sphere)).unwrap();
        let b = Optimizer::initialize(cfg, objective_fn(4, sphere)).unwrap();
        assert_eq!(a.population(), b.population());
    }

    #[test]
    fn rejects_bad_configs() {
        let zero_diag = RunConfig {
            initial_chol: Some(vec![vec![1.0, 0.0], vec![0.0, 0.0]]),
            ..RunConfig::new(vec![0.0, 0.0], 5)
        };
        assert!(matches!(
            Optimizer::initialize(zero_diag, objective_fn(2, sphere)),
            Err(EnesError::Config(_))
        ));
        assert!(Optimizer::initialize(RunConfig::new(vec![0.0; 3], 5), objective_fn(2, sphere)).is_err());
        assert!(Optimizer::initialize(RunConfig::new(vec![0.0; 2], 1), objective_fn(2, sphere)).is_err());
        let bad_rate = RunConfig {
            refresh_rate: 1.5,
            ..RunConfig::new(vec![0.0; 2], 5)
        };
        assert!(bad_rate.validate().is_err());
    }

    #[test]
    fn constant_objective_never_moves() {
        let mut opt = Optimizer::initialize(RunConfig::new(vec![1.0, -1.0], 12), objective_fn(2, |_: &[f64]| 0.0)).unwrap();
        let start = opt.distribution().clone();
        for _ in 0..20 {
            let log = opt.step().unwrap();
            assert!(log.flat_fitness);
        }
        assert_eq!(opt.distribution(), &start);
    }

    #[test]
    fn nan_fitness_is_attributed() {
        let err = Optimizer::initialize(
            RunConfig::new(vec![0.0], 4),
            objective_fn(1, |z: &[f64]| if z[0] > 0.0 { f64::NAN } else { 0.0 }),
        )
        .err()
        .unwrap();
        assert!(matches!(err, EnesError::InvalidFitness { .. }));
    }

    #[test]
    fn target_met_at_initialization() {
        let cfg = RunConfig {
            target_fitness: -1e6,
            ..RunConfig::new(vec![0.0; 2], 6)
        };
        let result = run(cfg, objective_fn(2, sphere)).unwrap();
        assert_eq!(result.termination, Termination::TargetReached);
        assert_eq!(result.log.len(), 1);
        assert_eq!(result.evaluations, 6);
    }

    #[test]
    fn budget_of_one_population() {
        let cfg = RunConfig {
            max_evaluations: 6,
            ..RunConfig::new(vec![3.0; 2], 6)
        };
        let result = run(cfg, objective_fn(2, sphere)).unwrap();
        assert_eq!(result.termination, Termination::EvaluationBudget);
        assert_eq!(result.log.len(), 1);
    }

    #[test]
    fn evaluation_accounting() {
        let mut calls = 0u64;
        let cfg = RunConfig {
            max_evaluations: 2_000,
            seed: 5,
            ..RunConfig::new(vec![2.0; 3], 20)
        };
        let result = run(
            cfg,
            objective_fn(3, |z: &[f64]| {
                calls += 1;
                sphere(z)
            }),
        )
        .unwrap();
        let logged: u64 = result.log.iter().map(|g| g.fresh as u64).sum();
        assert_eq!(logged, result.evaluations);
        assert_eq!(calls, result.evaluations);
        for pair in result.log.windows(2) {
            assert_eq!(pair[1].evaluations, pair[0].evaluations + pair[1].fresh as u64);
        }
    }

    #[test]
    fn stagnation_stops_a_flat_run() {
        let cfg = RunConfig {
            stagnation_generations: 5,
            ..RunConfig::new(vec![0.0; 2], 6)
        };
        let result = run(cfg, objective_fn(2, |_: &[f64]| 1.0)).unwrap();
        assert_eq!(result.termination, Termination::Stagnation);
        assert_eq!(result.log.len(), 6);
    }

    #[test]
    fn runs_are_reproducible() {
        let cfg = RunConfig {
            seed: 17,
            max_evaluations: 3_000,
            ..RunConfig::new(vec![1.0, 1.0, -2.0], 15)
        };
        let a = run(cfg.clone(), objective_fn(3, sphere)).unwrap();
        let b = run(cfg, objective_fn(3, sphere)).unwrap();
        assert_eq!(a, b);
    }
}
