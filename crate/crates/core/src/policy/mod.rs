//! Linear Gaussian policy over the aggregated state and its
//! score-function (REINFORCE) gradient.
//!
//! The policy draws a continuous total action `a = w . s' + b + sigma * z`.
//! The environment needs an integer inside `[urgent, chargeable]`, so the
//! draw is rounded and clamped before LLF disaggregates it; the gradient is
//! always taken at the raw draw.

mod features;
mod model;
mod train;

pub use features::FeatureMap;
pub use model::PgModel;
pub use train::{rollout, train, Normalization, SigmaSchedule, TrainConfig, TrainOutcome, TrainRecord};

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::agg::AggError;
use crate::env::EnvError;
use crate::llf::LlfError;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("feature vector has length {got}, policy expects {expected}")]
    Dimension { got: usize, expected: usize },
    #[error("sigma must be positive, got {0}")]
    Sigma(f64),
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("batch is empty")]
    EmptyBatch,
    #[error("gradient entry {0} is not finite")]
    NonFinite(usize),
    #[error("step size must be finite and non-negative, got {0}")]
    StepSize(f64),
    #[error("parameter norm {norm:.3e} exceeded {bound:.3e} at iteration {iteration}")]
    Diverged { iteration: usize, norm: f64, bound: f64 },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Llf(#[from] LlfError),
    #[error(transparent)]
    Agg(#[from] AggError),
}

/// Weights `w`, bias `b` and exploration std-dev `sigma`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub sigma: f64,
}

impl PolicyParams {
    pub fn zeros(dim: usize, sigma: f64) -> Self {
        Self {
            weights: vec![0.0; dim],
            bias: 0.0,
            sigma,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    fn check(&self, features: &[f64]) -> Result<(), PolicyError> {
        if features.len() != self.weights.len() {
            return Err(PolicyError::Dimension {
                got: features.len(),
                expected: self.weights.len(),
            });
        }
        Ok(())
    }

    /// `w . s' + b`.
    pub fn mean(&self, features: &[f64]) -> Result<f64, PolicyError> {
        self.check(features)?;
        Ok(dot(&self.weights, features) + self.bias)
    }

    /// `[w; b]` flattened, the vector the gradient lives in.
    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.weights.clone();
        v.push(self.bias);
        v
    }

    pub fn norm(&self) -> f64 {
        self.flat().iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One draw from the policy.
pub fn sample_action<R: Rng + ?Sized>(params: &PolicyParams, features: &[f64], rng: &mut R) -> Result<f64, PolicyError> {
    let mean = params.mean(features)?;
    let z: f64 = rng.sample(StandardNormal);
    Ok(mean + params.sigma * z)
}

/// Rounds to the nearest integer (half away from zero) and clamps into
/// `[urgent, chargeable]`.
pub fn project_action(raw: f64, chargeable: usize, urgent: usize) -> usize {
    debug_assert!(urgent <= chargeable);
    if raw.is_nan() {
        return urgent;
    }
    let r = raw.round();
    if r <= urgent as f64 {
        urgent
    } else if r >= chargeable as f64 {
        chargeable
    } else {
        r as usize
    }
}

/// `ln N(action; mean, sigma^2)`.
pub fn log_prob(params: &PolicyParams, features: &[f64], action: f64) -> Result<f64, PolicyError> {
    if !(params.sigma > 0.0) {
        return Err(PolicyError::Sigma(params.sigma));
    }
    let mean = params.mean(features)?;
    let s2 = params.sigma * params.sigma;
    Ok(-0.5 * (2.0 * std::f64::consts::PI * s2).ln() - (action - mean).powi(2) / (2.0 * s2))
}

/// Gradient of `ln pi(action | s')` with respect to `[w; b]`.
pub fn log_prob_grad(params: &PolicyParams, features: &[f64], action: f64) -> Result<Vec<f64>, PolicyError> {
    if !(params.sigma > 0.0) {
        return Err(PolicyError::Sigma(params.sigma));
    }
    let mean = params.mean(features)?;
    let scale = (action - mean) / (params.sigma * params.sigma);
    let mut g: Vec<f64> = features.iter().map(|x| scale * x).collect();
    g.push(scale);
    Ok(g)
}

/// Discounted reward-to-go for every step.
pub fn estimate_returns(rewards: &[f64], discount: f64) -> Result<Vec<f64>, PolicyError> {
    if rewards.is_empty() {
        return Err(PolicyError::EmptyTrajectory);
    }
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (i, r) in rewards.iter().enumerate().rev() {
        acc = r + discount * acc;
        out[i] = acc;
    }
    Ok(out)
}

/// Shifts to mean 0 and scales to population std-dev 1. A constant input
/// (including a single element) maps to zeros.
pub fn normalize_returns(returns: &[f64]) -> Vec<f64> {
    let (mean, std) = mean_std(returns);
    if !(std > 1e-12 * mean.abs().max(1.0)) {
        return vec![0.0; returns.len()];
    }
    returns.iter().map(|r| (r - mean) / std).collect()
}

pub(crate) fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// One recorded decision.
#[derive(Debug, Clone, PartialEq)]
pub struct PgStep {
    pub features: Vec<f64>,
    pub raw_action: f64,
    pub applied_action: usize,
    pub lower: usize,
    pub upper: usize,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub steps: Vec<PgStep>,
}

impl Trajectory {
    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    pub fn total_reward(&self, discount: f64) -> f64 {
        let mut w = 1.0;
        let mut acc = 0.0;
        for s in &self.steps {
            acc += w * s.reward;
            w *= discount;
        }
        acc
    }
}

/// Batch-averaged score-function gradient with normalized reward-to-go.
pub fn estimate_gradient(
    batch: &[Trajectory],
    params: &PolicyParams,
    discount: f64,
    normalization: Normalization,
) -> Result<Vec<f64>, PolicyError> {
    if batch.is_empty() {
        return Err(PolicyError::EmptyBatch);
    }
    let mut returns = Vec::with_capacity(batch.len());
    for traj in batch {
        returns.push(estimate_returns(&traj.rewards(), discount)?);
    }
    let normalized: Vec<Vec<f64>> = match normalization {
        Normalization::PerEpisode => returns.iter().map(|r| normalize_returns(r)).collect(),
        Normalization::PerBatch => {
            let pooled: Vec<f64> = returns.iter().flatten().copied().collect();
            let flat = normalize_returns(&pooled);
            let mut out = Vec::with_capacity(returns.len());
            let mut at = 0;
            for r in &returns {
                out.push(flat[at..at + r.len()].to_vec());
                at += r.len();
            }
            out
        }
        Normalization::PerSlot => {
            let mut out = returns.clone();
            let longest = returns.iter().map(Vec::len).max().unwrap_or(0);
            for t in 0..longest {
                let rows: Vec<usize> = (0..returns.len()).filter(|&i| returns[i].len() > t).collect();
                let col: Vec<f64> = rows.iter().map(|&i| returns[i][t]).collect();
                for (&i, z) in rows.iter().zip(normalize_returns(&col)) {
                    out[i][t] = z;
                }
            }
            out
        }
        Normalization::None => returns,
    };

    let mut grad = vec![0.0; params.dim() + 1];
    for (traj, q) in batch.iter().zip(&normalized) {
        for (step, &qt) in traj.steps.iter().zip(q) {
            let g = log_prob_grad(params, &step.features, step.raw_action)?;
            for (acc, gi) in grad.iter_mut().zip(g) {
                *acc += qt * gi;
            }
        }
    }
    let n = batch.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok(grad)
}

/// Gradient ascent step on `[w; b]`; sigma is left alone.
pub fn pg_update(params: &PolicyParams, gradient: &[f64], step_size: f64) -> Result<PolicyParams, PolicyError> {
    if !(step_size >= 0.0 && step_size.is_finite()) {
        return Err(PolicyError::StepSize(step_size));
    }
    if gradient.len() != params.dim() + 1 {
        return Err(PolicyError::Dimension {
            got: gradient.len(),
            expected: params.dim() + 1,
        });
    }
    if let Some(i) = gradient.iter().position(|g| !g.is_finite()) {
        return Err(PolicyError::NonFinite(i));
    }
    let (gw, gb) = gradient.split_at(params.dim());
    Ok(PolicyParams {
        weights: params.weights.iter().zip(gw).map(|(w, g)| w + step_size * g).collect(),
        bias: params.bias + step_size * gb[0],
        sigma: params.sigma,
    })
}
