//! Importance mixing: carry over previous-generation individuals whose
//! fitness is already known, and top the population up with fresh samples,
//! so that the union is distributed according to the new search
//! distribution.

use nalgebra::DVector;
use rand::Rng;

use crate::distribution::SearchDistribution;
use crate::error::{check_len, EnesError, Result};

/// Default minimal refresh rate.
pub const DEFAULT_REFRESH_RATE: f64 = 0.01;

/// Refresh rates below this are treated as this value when sizing the
/// second-step attempt cap.
const CAP_ALPHA_FLOOR: f64 = 1e-3;

/// One member of a population.
#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub z: DVector<f64>,
    pub fitness: f64,
    /// Carried over from the previous generation without re-evaluation.
    pub inherited: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixingResult {
    /// Previous individuals accepted in the first step, fitness untouched.
    pub retained: Vec<Individual>,
    /// New samples accepted in the second step; these still need evaluating.
    pub fresh: Vec<DVector<f64>>,
    /// Candidate draws made in the second step.
    pub attempts: usize,
    /// The attempt cap was hit and the remaining slots were filled with
    /// unconditional draws, so the population only approximately follows
    /// the new distribution.
    pub conformance_warning: bool,
}

impl MixingResult {
    /// Number of retained individuals.
    pub fn n_a(&self) -> usize {
        self.retained.len()
    }
}

/// Maximum number of second-step draws for a population of `n`.
pub fn attempt_cap(n: usize, alpha: f64) -> usize {
    (n as f64 / alpha.max(CAP_ALPHA_FLOOR)).ceil() as usize + n
}

/// Mixes `prev` (sampled from `old`) into a population of the same size
/// following `new`.
///
/// Step one keeps each previous individual with probability
/// `min{1, (1−α) p_new(z)/p_old(z)}`. Step two draws from `new` and accepts
/// with probability `max{α, 1 − p_old(z)/p_new(z)}` until the population is
/// full. Density ratios are evaluated in log space.
pub fn importance_mix<R: Rng + ?Sized>(
    prev: &[Individual],
    old: &SearchDistribution,
    new: &SearchDistribution,
    alpha: f64,
    rng: &mut R,
) -> Result<MixingResult> {
    mix_with_cap(prev, old, new, alpha, rng, attempt_cap(prev.len(), alpha))
}

fn mix_with_cap<R: Rng + ?Sized>(
    prev: &[Individual],
    old: &SearchDistribution,
    new: &SearchDistribution,
    alpha: f64,
    rng: &mut R,
    cap: usize,
) -> Result<MixingResult> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(EnesError::InvalidArgument(format!("refresh rate {alpha} outside [0, 1]")));
    }
    if prev.is_empty() {
        return Err(EnesError::InvalidArgument("previous population is empty".into()));
    }
    check_len(new.dim(), old.dim())?;
    let n = prev.len();

    let mut retained = Vec::with_capacity(n);
    for ind in prev {
        let z = ind.z.as_slice();
        let log_ratio = new.log_density(z)? - old.log_density(z)?;
        let keep = ((1.0 - alpha) * log_ratio.exp()).min(1.0);
        if rng.random::<f64>() < keep {
            retained.push(Individual {
                inherited: true,
                ..ind.clone()
            });
        }
    }

    let needed = n - retained.len();
    let mut fresh = Vec::with_capacity(needed);
    let mut attempts = 0;
    while fresh.len() < needed && attempts < cap {
        attempts += 1;
        let z = new.draw(rng);
        let log_ratio = old.log_density(z.as_slice())? - new.log_density(z.as_slice())?;
        let accept = alpha.max(1.0 - log_ratio.exp());
        if rng.random::<f64>() < accept {
            fresh.push(z);
        }
    }
    let conformance_warning = fresh.len() < needed;
    while fresh.len() < needed {
        fresh.push(new.draw(rng));
    }

    Ok(MixingResult {
        retained,
        fresh,
        attempts,
        conformance_warning,
    })
}
