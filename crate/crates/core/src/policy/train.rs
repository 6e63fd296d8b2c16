use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{EpisodeConfig, Environment};
use crate::llf::{llf_allocate, TieBreak};
use crate::seed::stream_seed;

use super::{estimate_gradient, pg_update, project_action, FeatureMap, PgStep, PolicyError, PolicyParams, Trajectory};

/// How reward-to-go values are standardized before weighting the score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Mean and std-dev of each trajectory's own reward-to-go.
    PerEpisode,
    /// Statistics pooled over every step in the batch.
    PerBatch,
    /// Each slot's reward-to-go standardized across the rollouts of the
    /// same day in the batch.
    #[default]
    PerSlot,
    None,
}

/// Exploration std-dev per iteration: `max(initial * decay^n, floor)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaSchedule {
    pub initial: f64,
    pub decay: f64,
    pub floor: f64,
}

impl SigmaSchedule {
    pub fn constant(sigma: f64) -> Self {
        Self {
            initial: sigma,
            decay: 1.0,
            floor: sigma,
        }
    }

    pub fn at(&self, iteration: usize) -> f64 {
        (self.initial * self.decay.powi(iteration as i32)).max(self.floor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub step_size: f64,
    pub discount: f64,
    pub iterations: usize,
    /// Training days per update.
    pub batch: usize,
    /// Sampled rollouts of each day per update.
    pub repeats: usize,
    pub sigma: SigmaSchedule,
    pub seed: u64,
    pub normalization: Normalization,
    /// Relative parameter change below which an iteration counts as still.
    pub tolerance: f64,
    /// Consecutive still iterations that end training.
    pub patience: usize,
    /// Parameter norm above which training aborts.
    pub divergence_bound: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            step_size: 0.01,
            discount: 1.0,
            iterations: 600,
            batch: 10,
            repeats: 16,
            sigma: SigmaSchedule::constant(1.0),
            seed: 0,
            normalization: Normalization::PerSlot,
            tolerance: 1e-4,
            patience: 10,
            divergence_bound: 1e6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |m: &str| Err(PolicyError::Config(m.to_string()));
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return bad("step_size must be finite and non-negative");
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return bad("discount must lie in (0, 1]");
        }
        if self.batch == 0 || self.repeats == 0 {
            return bad("batch and repeats must be at least 1");
        }
        if !(self.sigma.initial > 0.0 && self.sigma.floor > 0.0 && self.sigma.decay > 0.0) {
            return bad("sigma schedule must be positive");
        }
        if !(self.divergence_bound > 0.0) {
            return bad("divergence_bound must be positive");
        }
        Ok(())
    }
}

/// One row of the learning curve.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub iteration: usize,
    /// Mean total reward of the batch's sampled episodes.
    pub mean_reward: f64,
    pub sigma: f64,
    /// `|delta mu| / max(|mu|, 1)`.
    pub change: f64,
    /// `[w; b]` after the update.
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub curve: Vec<TrainRecord>,
    pub converged: bool,
}

/// Plays one day. With `rng` the policy samples; without it the mean action
/// is used.
pub fn rollout<R: Rng>(
    day: &EpisodeConfig,
    params: &PolicyParams,
    features: &FeatureMap,
    mut rng: Option<&mut R>,
) -> Result<Trajectory, PolicyError> {
    let tie = TieBreak::default();
    let mut env = Environment::new(day);
    let mut steps = Vec::with_capacity(day.horizon);
    while !env.is_done() {
        let state = env.state();
        let (f, agg) = features.features(state)?;
        let mean = params.mean(&f)?;
        let raw = match rng.as_deref_mut() {
            Some(r) => {
                let z: f64 = r.sample(StandardNormal);
                mean + params.sigma * z
            }
            None => mean,
        };
        let lower = agg.urgent() as usize;
        let upper = state.chargeable();
        let applied = project_action(raw, upper, lower);
        let actions = llf_allocate(applied as i64, &state.evs, &tie)?;
        let out = env.step(&actions)?;
        steps.push(PgStep {
            features: f,
            raw_action: raw,
            applied_action: applied,
            lower,
            upper,
            reward: out.reward,
        });
    }
    Ok(Trajectory { steps })
}

/// Policy-gradient training over a set of days.
///
/// Iteration `n` rolls out `batch` days (cycling through `days`) `repeats`
/// times each, every rollout with its own RNG stream derived from
/// `(seed, n, position in batch)`, then applies a single gradient-ascent
/// step. Stops after `iterations`, or once the
/// relative parameter change stays below `tolerance` for `patience`
/// consecutive iterations.
pub fn train(
    days: &[EpisodeConfig],
    initial: PolicyParams,
    config: &TrainConfig,
    features: &FeatureMap,
) -> Result<TrainOutcome, PolicyError> {
    config.validate()?;
    if days.is_empty() {
        return Err(PolicyError::Config("no training days".into()));
    }
    if initial.dim() != features.dim() {
        return Err(PolicyError::Dimension {
            got: initial.dim(),
            expected: features.dim(),
        });
    }
    let batch = config.batch.min(days.len());
    let mut params = initial;
    let mut curve = Vec::with_capacity(config.iterations);
    let mut still = 0;
    let mut converged = false;

    for n in 0..config.iterations {
        params.sigma = config.sigma.at(n);
        let picks: Vec<usize> = (0..batch).map(|k| (n * batch + k) % days.len()).collect();
        let trajectories = picks
            .par_iter()
            .enumerate()
            .flat_map_iter(|(k, &d)| (0..config.repeats).map(move |r| (k * config.repeats + r, d)))
            .map(|(stream, d)| {
                let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, n as u64, stream as u64));
                rollout(&days[d], &params, features, Some(&mut rng))
            })
            .collect::<Result<Vec<_>, _>>()?;

        let mean_reward =
            trajectories.iter().map(|t| t.total_reward(config.discount)).sum::<f64>() / trajectories.len() as f64;
        let grad = if config.normalization == Normalization::PerSlot {
            // slot statistics only make sense among rollouts of one day
            let mut sum = vec![0.0; params.dim() + 1];
            for group in trajectories.chunks(config.repeats) {
                let g = estimate_gradient(group, &params, config.discount, config.normalization)?;
                sum.iter_mut().zip(g).for_each(|(s, x)| *s += x);
            }
            sum.iter_mut().for_each(|s| *s /= batch as f64);
            sum
        } else {
            estimate_gradient(&trajectories, &params, config.discount, config.normalization)?
        };
        let next = pg_update(&params, &grad, config.step_size)?;

        let before = params.flat();
        let after = next.flat();
        let delta = before.iter().zip(&after).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let change = delta / next.norm().max(1.0);
        params = next;

        let norm = params.norm();
        if !(norm <= config.divergence_bound) {
            return Err(PolicyError::Diverged {
                iteration: n,
                norm,
                bound: config.divergence_bound,
            });
        }
        curve.push(TrainRecord {
            iteration: n,
            mean_reward,
            sigma: params.sigma,
            change,
            params: after,
        });

        if change < config.tolerance {
            still += 1;
            if still >= config.patience {
                converged = true;
                break;
            }
        } else {
            still = 0;
        }
    }
    Ok(TrainOutcome {
        params,
        curve,
        converged,
    })
}
