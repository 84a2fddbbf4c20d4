//! Fitness shaping and the natural-gradient update with fitness baselines.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::distribution::{write_group_gradient, SearchDistribution};
use crate::error::{check_len, EnesError, Result};
use crate::fim::FimInverseStream;

/// Rank-based utilities for one population.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapedFitness {
    /// Shaped value of each individual, in input order.
    pub values: Vec<f64>,
    /// `ranks[i]` is the ascending rank of individual `i` (0 = worst).
    pub ranks: Vec<usize>,
}

/// Maps raw fitnesses to `max(0, 2i − 1)` where `i = rank / (n − 1)` is the
/// relative rank. The lower half of the population gets zero and the best
/// individual gets one. Ties keep input order.
pub fn shape_fitness(raw: &[f64]) -> Result<ShapedFitness> {
    if raw.is_empty() {
        return Err(EnesError::InvalidArgument("cannot shape an empty population".into()));
    }
    if let Some(index) = raw.iter().position(|f| f.is_nan()) {
        return Err(EnesError::InvalidFitness { index });
    }
    let n = raw.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| raw[a].partial_cmp(&raw[b]).expect("no NaN"));
    let mut ranks = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        ranks[i] = rank;
    }
    let values = ranks
        .iter()
        .map(|&rank| {
            let rel = if n == 1 { 1.0 } else { rank as f64 / (n - 1) as f64 };
            if rel > 0.5 {
                2.0 * rel - 1.0
            } else {
                0.0
            }
        })
        .collect();
    Ok(ShapedFitness { values, ranks })
}

/// Which fitness baseline is subtracted before forming the update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    /// One scalar for the whole parameter vector.
    Uniform,
    /// One scalar per parameter.
    ParameterSpecific,
    /// One scalar per Fisher block.
    #[default]
    Block,
}

impl std::str::FromStr for BaselineMode {
    type Err = EnesError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "parameter_specific" | "parameter-specific" => Ok(Self::ParameterSpecific),
            "block" => Ok(Self::Block),
            other => Err(EnesError::Config(format!("unknown baseline mode `{other}`"))),
        }
    }
}

/// Plain Monte-Carlo gradient `(1/n) Σ fᵢ ∇ln p(zᵢ)`.
pub fn vanilla_gradient(dist: &SearchDistribution, population: &[DVector<f64>], fitness: &[f64]) -> Result<DVector<f64>> {
    if population.is_empty() {
        return Err(EnesError::InvalidArgument("empty population".into()));
    }
    check_len(population.len(), fitness.len())?;
    let mut grad = DVector::zeros(dist.layout().len());
    for (z, f) in population.iter().zip(fitness) {
        grad.axpy(*f, &dist.log_density_gradient(z.as_slice())?, 1.0);
    }
    Ok(grad / population.len() as f64)
}

/// Output of [`natural_gradient_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalGradient {
    /// `δθ`, not yet scaled by the learning rate.
    pub delta: DVector<f64>,
    /// Block mode: `d + 1` values indexed by group. Uniform: one value.
    /// Parameter-specific: one value per parameter.
    pub baselines: Vec<f64>,
    /// Some baseline denominator was zero, so the matching part of `δθ` was
    /// set to zero.
    pub degenerate: bool,
}

/// Natural-gradient update `δθ` from a population and its shaped fitnesses.
///
/// The inverse Fisher blocks are consumed one at a time, largest group index
/// first, and the per-individual gradient of each group is rebuilt on the fly
/// from two `d`-vectors per individual (`A⁻ᵀ(z−x)` and `C⁻¹(z−x)`), so the
/// full `d_s × n` gradient matrix never exists.
pub fn natural_gradient_step(
    dist: &SearchDistribution,
    population: &[DVector<f64>],
    utilities: &[f64],
    mode: BaselineMode,
) -> Result<NaturalGradient> {
    let n = population.len();
    if n < 2 {
        return Err(EnesError::InvalidArgument(format!("population of {n} is too small")));
    }
    check_len(n, utilities.len())?;
    if let Some(index) = utilities.iter().position(|f| !f.is_finite()) {
        return Err(EnesError::InvalidFitness { index });
    }

    let d = dist.dim();
    let layout = dist.layout();
    let parts = population
        .iter()
        .map(|z| dist.score_parts(z.as_slice()))
        .collect::<Result<Vec<_>>>()?;

    let mut delta = DVector::zeros(layout.len());
    // Uniform mode keeps Σ f̂q per block in `delta` and Σ q here until the
    // single baseline is known.
    let mut sum_q: DVector<f64> = match mode {
        BaselineMode::Uniform => DVector::zeros(layout.len()),
        _ => DVector::zeros(0),
    };
    let mut baselines = match mode {
        BaselineMode::Block => vec![0.0; d + 1],
        BaselineMode::Uniform => vec![0.0],
        BaselineMode::ParameterSpecific => vec![0.0; layout.len()],
    };
    let (mut total_s1, mut total_s2) = (0.0, 0.0);
    let mut degenerate = false;
    let inv_n = (n as f64).recip();

    for item in FimInverseStream::from_factor(dist.chol())? {
        let (k, finv) = item?;
        let range = layout.group_range(k);
        let len = range.len();
        let mut g = DVector::zeros(len);
        let mut q = DVector::zeros(len);
        let mut u = DVector::zeros(len);
        let mut v = DVector::zeros(len);
        let (mut s1, mut s2) = (0.0, 0.0);
        let (mut s1_j, mut s2_j): (DVector<f64>, DVector<f64>) = match mode {
            BaselineMode::ParameterSpecific => (DVector::zeros(len), DVector::zeros(len)),
            _ => (DVector::zeros(0), DVector::zeros(0)),
        };

        for ((e, m), &f) in parts.iter().zip(utilities) {
            if k == 0 {
                g.copy_from(m);
            } else {
                write_group_gradient(dist.chol(), e, m, k, g.as_mut_slice());
            }
            q.gemv(1.0, &finv, &g, 0.0);
            u.axpy(f, &q, 1.0);
            v += &q;
            match mode {
                BaselineMode::ParameterSpecific => {
                    for j in 0..len {
                        let qq = q[j] * q[j];
                        s1_j[j] += f * qq;
                        s2_j[j] += qq;
                    }
                }
                _ => {
                    let qq = q.norm_squared();
                    s1 += f * qq;
                    s2 += qq;
                }
            }
        }
        drop(finv);

        let mut out = delta.rows_mut(range.start, len);
        match mode {
            BaselineMode::Block => {
                if s2 > 0.0 {
                    let b = s1 / s2;
                    baselines[k] = b;
                    out.copy_from(&((u - v * b) * inv_n));
                } else {
                    degenerate = true;
                }
            }
            BaselineMode::Uniform => {
                total_s1 += s1;
                total_s2 += s2;
                out.copy_from(&u);
                sum_q.rows_mut(range.start, len).copy_from(&v);
            }
            BaselineMode::ParameterSpecific => {
                for j in 0..len {
                    if s2_j[j] > 0.0 {
                        let b = s1_j[j] / s2_j[j];
                        baselines[range.start + j] = b;
                        out[j] = (u[j] - b * v[j]) * inv_n;
                    } else {
                        degenerate = true;
                    }
                }
            }
        }
    }

    if mode == BaselineMode::Uniform {
        if total_s2 > 0.0 {
            let b = total_s1 / total_s2;
            baselines[0] = b;
            delta.axpy(-b, &sum_q, 1.0);
            delta *= inv_n;
        } else {
            degenerate = true;
            delta.fill(0.0);
        }
    }

    if let Some(m) = delta.iter().position(|v| !v.is_finite()) {
        let k = layout.entry_at(m).map_or(0, |(row, _)| row + 1);
        return Err(EnesError::NumericalBreakdown { k });
    }

    Ok(NaturalGradient {
        delta,
        baselines,
        degenerate,
    })
}

/// Materializes the gradient matrix `G` (one column per individual). Only
/// meant for reference computations on small problems.
pub fn gradient_matrix(dist: &SearchDistribution, population: &[DVector<f64>]) -> Result<DMatrix<f64>> {
    let cols = population
        .iter()
        .map(|z| dist.log_density_gradient(z.as_slice()))
        .collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_columns(&cols))
}
