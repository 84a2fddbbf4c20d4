//! Experiment specification: a JSON file, overridden by flags and `ENES_SEED`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use enes::{BaselineMode, BenchmarkRun, FunctionId, DEFAULT_REFRESH_RATE};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Converge,
    Sweep,
    Trace,
}

/// The file format. Every field is optional; missing ones take the mode's
/// defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpecFile {
    pub mode: Option<Mode>,
    pub functions: Option<Vec<FunctionId>>,
    pub dim: Option<usize>,
    pub population_size: Option<usize>,
    pub population_sizes: Option<Vec<usize>>,
    pub learning_rate: Option<f64>,
    pub refresh_rate: Option<f64>,
    pub baseline_mode: Option<BaselineMode>,
    pub seed: Option<u64>,
    pub repetitions: Option<usize>,
    pub target_precision: Option<f64>,
    pub max_evaluations: Option<u64>,
    pub initial_distance: Option<f64>,
    pub distances: Option<Vec<f64>>,
    pub output: Option<PathBuf>,
}

impl SpecFile {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Flags shared by every subcommand. Each one overrides the file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// JSON experiment spec
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Comma-separated function ids
    #[arg(long, value_delimiter = ',')]
    pub functions: Option<Vec<FunctionId>>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub population_size: Option<usize>,
    /// Comma-separated population sizes (sweep)
    #[arg(long, value_delimiter = ',')]
    pub population_sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub refresh_rate: Option<f64>,
    #[arg(long)]
    pub baseline_mode: Option<BaselineMode>,
    /// Base seed; repetition r uses seed + r
    #[arg(long, env = "ENES_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub repetitions: Option<usize>,
    #[arg(long)]
    pub target_precision: Option<f64>,
    #[arg(long)]
    pub max_evaluations: Option<u64>,
    #[arg(long)]
    pub initial_distance: Option<f64>,
    /// Comma-separated initial distances (sweep)
    #[arg(long, value_delimiter = ',')]
    pub distances: Option<Vec<f64>>,
    /// CSV destination; standard output when absent
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

/// A fully resolved experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSpec {
    pub mode: Mode,
    pub functions: Vec<FunctionId>,
    pub dim: usize,
    pub population_sizes: Vec<usize>,
    pub learning_rate: f64,
    pub refresh_rate: f64,
    pub baseline_mode: BaselineMode,
    pub seed: u64,
    pub repetitions: usize,
    pub target_precision: f64,
    pub max_evaluations: u64,
    pub distances: Vec<f64>,
    pub output: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn resolve(mode: Mode, flags: &Overrides) -> anyhow::Result<Self> {
        let file = match &flags.config {
            Some(path) => SpecFile::load(path)?,
            None => SpecFile::default(),
        };
        if let Some(file_mode) = file.mode {
            if file_mode != mode {
                bail!("spec file is for {file_mode:?} but the {mode:?} subcommand was used");
            }
        }
        let population_sizes = match mode {
            Mode::Sweep => flags
                .population_sizes
                .clone()
                .or_else(|| flags.population_size.map(|n| vec![n]))
                .or_else(|| file.population_sizes.clone())
                .or_else(|| file.population_size.map(|n| vec![n]))
                .unwrap_or_else(|| vec![20, 100]),
            _ => vec![flags.population_size.or(file.population_size).unwrap_or(50)],
        };
        let distances = match mode {
            Mode::Sweep => flags
                .distances
                .clone()
                .or_else(|| flags.initial_distance.map(|r| vec![r]))
                .or_else(|| file.distances.clone())
                .or_else(|| file.initial_distance.map(|r| vec![r]))
                .unwrap_or_else(|| vec![0.1, 1.0, 10.0, 100.0, 1000.0]),
            _ => vec![flags.initial_distance.or(file.initial_distance).unwrap_or(1.0)],
        };
        let spec = Self {
            mode,
            functions: flags.functions.clone().or(file.functions).unwrap_or_else(|| match mode {
                Mode::Converge => FunctionId::UNIMODAL.to_vec(),
                Mode::Sweep => FunctionId::MULTIMODAL.to_vec(),
                Mode::Trace => vec![FunctionId::Rastrigin],
            }),
            dim: flags.dim.or(file.dim).unwrap_or(match mode {
                Mode::Converge => 5,
                _ => 2,
            }),
            population_sizes,
            learning_rate: flags.learning_rate.or(file.learning_rate).unwrap_or(1.0),
            refresh_rate: flags.refresh_rate.or(file.refresh_rate).unwrap_or(DEFAULT_REFRESH_RATE),
            baseline_mode: flags.baseline_mode.or(file.baseline_mode).unwrap_or_default(),
            seed: flags.seed.or(file.seed).unwrap_or(0),
            repetitions: flags.repetitions.or(file.repetitions).unwrap_or(match mode {
                Mode::Converge => 20,
                Mode::Sweep => 100,
                Mode::Trace => 1,
            }),
            target_precision: flags.target_precision.or(file.target_precision).unwrap_or(match mode {
                Mode::Converge => 1e-10,
                _ => 0.01,
            }),
            max_evaluations: flags.max_evaluations.or(file.max_evaluations).unwrap_or(1_000_000),
            distances,
            output: flags.output.clone().or(file.output),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.functions.is_empty() {
            bail!("no functions given");
        }
        if self.repetitions == 0 {
            bail!("repetitions must be at least 1");
        }
        if self.dim == 0 {
            bail!("dimension must be positive");
        }
        if self.population_sizes.is_empty() || self.population_sizes.iter().any(|&n| n < 2) {
            bail!("population sizes must be at least 2");
        }
        if self.distances.is_empty() || self.distances.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            bail!("initial distances must be positive");
        }
        if !(self.target_precision >= 0.0) {
            bail!("target precision must be non-negative");
        }
        match self.mode {
            Mode::Sweep => {
                if let Some(f) = self.functions.iter().find(|f| !f.is_multimodal()) {
                    bail!("sweep needs multimodal functions, got {f}");
                }
            }
            Mode::Trace => {
                if self.functions.len() != 1 || self.repetitions != 1 {
                    bail!("trace records a single run: one function, one repetition");
                }
            }
            Mode::Converge => {}
        }
        Ok(())
    }

    pub fn run_settings(&self, population_size: usize, initial_distance: f64) -> BenchmarkRun {
        BenchmarkRun {
            population_size,
            initial_distance,
            target_precision: self.target_precision,
            max_evaluations: self.max_evaluations,
            refresh_rate: self.refresh_rate,
            learning_rate: self.learning_rate,
            baseline_mode: self.baseline_mode,
        }
    }

    /// Seeds of the repetitions, in order.
    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.repetitions as u64).map(move |r| self.seed.wrapping_add(r))
    }
}
