//! Efficient natural evolution strategies.
//!
//! A Gaussian search distribution `N(x, AᵀA)` with an upper-triangular
//! factor `A` is moved along the natural gradient of expected fitness. The
//! Fisher information of this family is block diagonal and its inverse is
//! built block by block in `O(d³)` time with `O(d²)` working memory.

pub mod benchmarks;
pub mod distribution;
pub mod error;
pub mod fim;
pub mod gradient;
pub mod mixing;
pub mod optimizer;

#[cfg(test)]
mod testutil;

pub use benchmarks::{make_problem, prepare_benchmark, run_benchmark, BenchmarkOutcome, BenchmarkProblem, BenchmarkRun, FunctionId, ProblemSpec};
pub use distribution::{SearchDistribution, ThetaLayout, UpdateOutcome, DIAG_FLOOR};
pub use error::{EnesError, Result};
pub use fim::{assemble_fim_dense, fim_inverse_blocks, precision_matrix, FimInverseBlocks, FimInverseStream};
pub use gradient::{natural_gradient_step, shape_fitness, vanilla_gradient, BaselineMode, NaturalGradient, ShapedFitness};
pub use mixing::{importance_mix, Individual, MixingResult, DEFAULT_REFRESH_RATE};
pub use optimizer::{objective_fn, run, FnObjective, GenerationLog, Objective, Optimizer, RunConfig, RunResult, Termination};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/distribution.md")]
    pub struct Distribution;
    #[doc = include_str!("../../../book/src/fim.md")]
    pub struct Fim;
    #[doc = include_str!("../../../book/src/gradient.md")]
    pub struct Gradient;
    #[doc = include_str!("../../../book/src/mixing.md")]
    pub struct Mixing;
    #[doc = include_str!("../../../book/src/optimizer.md")]
    pub struct Optimizer;
    #[doc = include_str!("../../../book/src/benchmarks.md")]
    pub struct Benchmarks;
    #[doc = include_str!("../../../book/src/cli.md")]
    pub struct Cli;
}
