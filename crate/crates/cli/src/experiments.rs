//! The three experiment kinds. Runs execute in parallel; tables are
//! assembled afterwards in spec order, so output does not depend on
//! scheduling.

use enes::{prepare_benchmark, run_benchmark, BenchmarkOutcome, FunctionId, Optimizer, Termination};
use rayon::prelude::*;

use crate::output::{float, Table};
use crate::spec::ExperimentSpec;

pub type Progress<'a> = &'a (dyn Fn(String) + Sync);

pub const CONVERGE_COLUMNS: [&str; 11] = [
    "record",
    "function",
    "dim",
    "seed",
    "generation",
    "evaluations",
    "best_fitness_gap",
    "termination",
    "median_evaluations_to_target",
    "successes",
    "runs",
];

pub const SWEEP_COLUMNS: [&str; 6] = ["function", "pop_size", "init_distance", "runs", "successes", "success_rate"];

/// A run either finishes (any termination) or hits an error such as a NaN
/// fitness; both are data.
type RunRecord = Result<BenchmarkOutcome, String>;

fn termination_label(record: &RunRecord) -> String {
    match record {
        Ok(outcome) => outcome.result.termination.as_str().to_string(),
        Err(message) => format!("error: {message}"),
    }
}

fn execute(spec: &ExperimentSpec, function: FunctionId, seed: u64, pop: usize, distance: f64, progress: Progress) -> RunRecord {
    let record = run_benchmark(function, spec.dim, seed, &spec.run_settings(pop, distance)).map_err(|e| e.to_string());
    let evaluations = record.as_ref().map_or(0, |o| o.result.evaluations);
    progress(format!(
        "{function} d={} n={pop} r={distance} seed={seed}: {} after {evaluations} evaluations",
        spec.dim,
        termination_label(&record)
    ));
    record
}

fn median(mut xs: Vec<u64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_unstable();
    let n = xs.len();
    Some(if n % 2 == 1 {
        xs[n / 2] as f64
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2]) as f64
    })
}

pub fn converge(spec: &ExperimentSpec, progress: Progress) -> Table {
    let pop = spec.population_sizes[0];
    let distance = spec.distances[0];
    let tasks: Vec<(FunctionId, u64)> = spec
        .functions
        .iter()
        .flat_map(|&f| spec.seeds().map(move |s| (f, s)))
        .collect();
    let records: Vec<RunRecord> = tasks
        .par_iter()
        .map(|&(f, seed)| execute(spec, f, seed, pop, distance, progress))
        .collect();

    let mut table = Table::new(CONVERGE_COLUMNS);
    let per_function = spec.repetitions;
    for (chunk, &function) in records.chunks(per_function).zip(&spec.functions) {
        let mut to_target = Vec::new();
        for (record, seed) in chunk.iter().zip(spec.seeds()) {
            let label = termination_label(record);
            let Ok(outcome) = record else {
                table.push(vec![
                    "generation".into(),
                    function.to_string(),
                    spec.dim.to_string(),
                    seed.to_string(),
                    String::new(),
                    String::new(),
                    String::new(),
                    label,
                    String::new(),
                    String::new(),
                    String::new(),
                ]);
                continue;
            };
            to_target.extend(outcome.evaluations_to_target);
            let last = outcome.result.log.len() - 1;
            for (i, g) in outcome.result.log.iter().enumerate() {
                table.push(vec![
                    "generation".into(),
                    function.to_string(),
                    spec.dim.to_string(),
                    seed.to_string(),
                    g.generation.to_string(),
                    g.evaluations.to_string(),
                    float(function.gap(g.best_fitness)),
                    if i == last { label.clone() } else { String::new() },
                    String::new(),
                    String::new(),
                    String::new(),
                ]);
            }
        }
        table.push(vec![
            "summary".into(),
            function.to_string(),
            spec.dim.to_string(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            median(to_target.clone()).map(float).unwrap_or_default(),
            to_target.len().to_string(),
            chunk.len().to_string(),
        ]);
    }
    table
}

pub fn sweep(spec: &ExperimentSpec, progress: Progress) -> Table {
    let mut cells = Vec::new();
    for &f in &spec.functions {
        for &pop in &spec.population_sizes {
            for &r in &spec.distances {
                cells.push((f, pop, r));
            }
        }
    }
    let tasks: Vec<(FunctionId, usize, f64, u64)> = cells
        .iter()
        .flat_map(|&(f, pop, r)| spec.seeds().map(move |s| (f, pop, r, s)))
        .collect();
    let hits: Vec<bool> = tasks
        .par_iter()
        .map(|&(f, pop, r, seed)| {
            execute(spec, f, seed, pop, r, progress).is_ok_and(|o| o.success())
        })
        .collect();

    let mut table = Table::new(SWEEP_COLUMNS);
    for (chunk, &(f, pop, r)) in hits.chunks(spec.repetitions).zip(&cells) {
        let successes = chunk.iter().filter(|&&h| h).count();
        table.push(vec![
            f.to_string(),
            pop.to_string(),
            float(r),
            chunk.len().to_string(),
            successes.to_string(),
            float(successes as f64 / chunk.len() as f64),
        ]);
    }
    table
}

pub fn trace_columns(dim: usize) -> Vec<String> {
    let mut cols = vec!["generation".to_string(), "evaluations".into(), "best_fitness".into()];
    cols.extend((0..dim).map(|i| format!("mean_{i}")));
    for i in 0..dim {
        cols.extend((i..dim).map(|j| format!("a_{i}_{j}")));
    }
    cols.extend((0..dim).map(|i| format!("best_{i}")));
    cols
}

/// One row per generation of a single run, with everything needed to draw
/// the search distribution (`C = AᵀA`) at each step.
pub fn trace(spec: &ExperimentSpec, progress: Progress) -> anyhow::Result<Table> {
    let function = spec.functions[0];
    let seed = spec.seed;
    let settings = spec.run_settings(spec.population_sizes[0], spec.distances[0]);
    let (problem, config) = prepare_benchmark(function, spec.dim, seed, &settings)?;
    let mut opt = Optimizer::initialize(config, problem)?;
    let mut table = Table::new(trace_columns(spec.dim));
    let row = |opt: &Optimizer<_>| {
        let dist = opt.distribution();
        let mut row = vec![
            opt.generation().to_string(),
            opt.evaluations().to_string(),
            float(opt.best().fitness),
        ];
        row.extend(dist.mean().iter().map(|&x| float(x)));
        row.extend(dist.to_theta().iter().skip(spec.dim).map(|&x| float(x)));
        row.extend(opt.best().z.iter().map(|&x| float(x)));
        row
    };
    table.push(row(&opt));
    let termination = loop {
        if let Some(reason) = opt.should_stop() {
            break reason;
        }
        match opt.step() {
            Ok(_) => table.push(row(&opt)),
            Err(enes::EnesError::NumericalBreakdown { .. }) => break Termination::NumericalBreakdown,
            Err(e) => return Err(e.into()),
        }
    };
    progress(format!(
        "{function} d={} seed={seed}: {} after {} generations",
        spec.dim,
        termination.as_str(),
        opt.generation()
    ));
    Ok(table)
}
