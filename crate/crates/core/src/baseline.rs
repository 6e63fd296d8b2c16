//! Linear approximate-Q baseline over four binary features, trained with
//! semi-gradient Q-learning and acting greedily on the total action.
//!
//! The four indicators:
//!
//! * `cost`: the slot's price is above the rolling median of recent prices
//!   and the station charges at all;
//! * `deadline`: fewer EVs are charged than have zero laxity;
//! * `saturate`: every chargeable EV is charged;
//! * `congested`: more EVs are parked than the configured capacity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agg::{aggregate, AggError, AggState};
use crate::env::{EnvError, EpisodeConfig, Environment, StationState};
use crate::llf::{llf_allocate, LlfError, TieBreak};
use crate::seed::stream_seed;

pub const QE_FEATURES: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum QeError {
    #[error("theta has length {got}, features have length {expected}")]
    Dimension { got: usize, expected: usize },
    #[error("theta norm {norm:.3e} exceeded {bound:.3e} at episode {episode}")]
    Diverged { episode: usize, norm: f64, bound: f64 },
    #[error("invalid QE config: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Llf(#[from] LlfError),
    #[error(transparent)]
    Agg(#[from] AggError),
}

/// Per-slot context the features need besides the aggregated state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QeContext {
    pub chargeable: usize,
    pub urgent: usize,
    pub price_threshold: f64,
    pub capacity: f64,
}

pub fn qe_features(state: &AggState, action: usize, ctx: &QeContext) -> [f64; QE_FEATURES] {
    let ind = |b: bool| if b { 1.0 } else { 0.0 };
    [
        ind(state.price > ctx.price_threshold && action > 0),
        ind(action < ctx.urgent),
        ind(ctx.chargeable > 0 && action == ctx.chargeable),
        ind(state.total() as f64 > ctx.capacity),
    ]
}

pub fn qe_value(theta: &[f64], features: &[f64]) -> Result<f64, QeError> {
    if theta.len() != features.len() {
        return Err(QeError::Dimension {
            got: theta.len(),
            expected: features.len(),
        });
    }
    Ok(theta.iter().zip(features).map(|(a, b)| a * b).sum())
}

/// Greedy total action over `[ctx.urgent, ctx.chargeable]`; ties go to the
/// smallest action.
pub fn qe_greedy_action(theta: &[f64; QE_FEATURES], state: &AggState, ctx: &QeContext) -> usize {
    let mut best = ctx.urgent;
    let mut best_q = f64::NEG_INFINITY;
    for a in ctx.urgent..=ctx.chargeable.max(ctx.urgent) {
        let q = dot4(theta, &qe_features(state, a, ctx));
        if q > best_q {
            best_q = q;
            best = a;
        }
    }
    best
}

fn max_q(theta: &[f64; QE_FEATURES], state: &AggState, ctx: &QeContext) -> f64 {
    let a = qe_greedy_action(theta, state, ctx);
    dot4(theta, &qe_features(state, a, ctx))
}

fn dot4(a: &[f64; QE_FEATURES], b: &[f64; QE_FEATURES]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Median of the last `window` prices up to and including slot `t`.
pub fn rolling_median(prices: &[f64], t: usize, window: usize) -> f64 {
    let start = (t + 1).saturating_sub(window.max(1));
    let mut w: Vec<f64> = prices[start..=t].to_vec();
    w.sort_by(|a, b| a.total_cmp(b));
    let n = w.len();
    if n % 2 == 1 {
        w[n / 2]
    } else {
        0.5 * (w[n / 2 - 1] + w[n / 2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// Slots in the rolling price median.
    pub price_window: usize,
    /// Parked-EV count above which the station counts as congested.
    pub capacity: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            price_window: 48,
            capacity: 12.0,
        }
    }
}

impl FeatureConfig {
    pub fn context(&self, day: &EpisodeConfig, state: &StationState, agg: &AggState) -> QeContext {
        QeContext {
            chargeable: state.chargeable(),
            urgent: agg.urgent() as usize,
            price_threshold: rolling_median(&day.prices, state.t, self.price_window),
            capacity: self.capacity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QeConfig {
    pub step_size: f64,
    /// Step size at update `k` is `step_size / (1 + k * step_decay)`.
    pub step_decay: f64,
    pub discount: f64,
    pub episodes: usize,
    pub seed: u64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub features: FeatureConfig,
    pub max_laxity: usize,
    pub divergence_bound: f64,
}

impl Default for QeConfig {
    fn default() -> Self {
        Self {
            step_size: 0.01,
            step_decay: 1e-5,
            discount: 1.0,
            episodes: 2000,
            seed: 0,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            features: FeatureConfig::default(),
            max_laxity: 12,
            divergence_bound: 1e9,
        }
    }
}

impl QeConfig {
    /// Linear decay from `epsilon_start` to `epsilon_end` over the first
    /// half of training, flat afterwards.
    pub fn epsilon(&self, episode: usize) -> f64 {
        let half = (self.episodes / 2).max(1) as f64;
        let frac = (episode as f64 / half).min(1.0);
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }

    fn validate(&self) -> Result<(), QeError> {
        let bad = |m: &str| Err(QeError::Config(m.to_string()));
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return bad("step_size must be finite and non-negative");
        }
        if !(self.step_decay >= 0.0) {
            return bad("step_decay must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return bad("discount must lie in [0, 1]");
        }
        if !((0.0..=1.0).contains(&self.epsilon_start) && (0.0..=1.0).contains(&self.epsilon_end)) {
            return bad("epsilon must lie in [0, 1]");
        }
        Ok(())
    }
}

/// One observed transition, passed to training observers.
#[derive(Debug, Clone, PartialEq)]
pub struct QeTransition {
    pub features: [f64; QE_FEATURES],
    pub reward: f64,
    /// `max_a' Q(s', a')` under the theta in force, 0 at the horizon.
    pub next_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QeRecord {
    pub episode: usize,
    pub reward: f64,
    pub epsilon: f64,
    pub theta: [f64; QE_FEATURES],
}

#[derive(Debug, Clone, PartialEq)]
pub struct QeOutcome {
    pub theta: [f64; QE_FEATURES],
    pub curve: Vec<QeRecord>,
}

/// Semi-gradient step `theta += step * (target - theta . f) * f`.
pub fn td_update(theta: &mut [f64; QE_FEATURES], features: &[f64; QE_FEATURES], target: f64, step: f64) {
    let err = target - dot4(theta, features);
    for (t, f) in theta.iter_mut().zip(features) {
        *t += step * err * f;
    }
}

pub fn qe_train(days: &[EpisodeConfig], config: &QeConfig) -> Result<QeOutcome, QeError> {
    qe_train_observed(days, config, |_| {})
}

/// Episodic Q-learning with epsilon-greedy exploration over the feasible
/// total actions. `observe` sees every transition before its update.
pub fn qe_train_observed<F>(days: &[EpisodeConfig], config: &QeConfig, mut observe: F) -> Result<QeOutcome, QeError>
where
    F: FnMut(&QeTransition),
{
    config.validate()?;
    if days.is_empty() {
        return Err(QeError::Config("no training days".into()));
    }
    let tie = TieBreak::default();
    let mut theta = [0.0; QE_FEATURES];
    let mut curve = Vec::with_capacity(config.episodes);
    let mut updates = 0u64;

    for ep in 0..config.episodes {
        let day = &days[ep % days.len()];
        let eps = config.epsilon(ep);
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, ep as u64, 0));
        let mut env = Environment::new(day);
        let mut total = 0.0;
        let mut weight = 1.0;

        let mut agg = aggregate(env.state(), config.max_laxity)?;
        let mut ctx = config.features.context(day, env.state(), &agg);
        while !env.is_done() {
            let action = if rng.random::<f64>() < eps {
                rng.random_range(ctx.urgent..=ctx.chargeable.max(ctx.urgent))
            } else {
                qe_greedy_action(&theta, &agg, &ctx)
            };
            let f = qe_features(&agg, action, &ctx);
            let acts = llf_allocate(action as i64, &env.state().evs, &tie)?;
            let out = env.step(&acts)?;
            total += weight * out.reward;
            weight *= config.discount;

            let next_agg = aggregate(env.state(), config.max_laxity)?;
            let next_ctx = config.features.context(day, env.state(), &next_agg);
            let next_value = if env.is_done() { 0.0 } else { max_q(&theta, &next_agg, &next_ctx) };
            observe(&QeTransition {
                features: f,
                reward: out.reward,
                next_value,
            });
            let step = config.step_size / (1.0 + updates as f64 * config.step_decay);
            td_update(&mut theta, &f, out.reward + config.discount * next_value, step);
            updates += 1;
            agg = next_agg;
            ctx = next_ctx;
        }

        let norm = theta.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm <= config.divergence_bound) {
            return Err(QeError::Diverged {
                episode: ep,
                norm,
                bound: config.divergence_bound,
            });
        }
        curve.push(QeRecord {
            episode: ep,
            reward: total,
            epsilon: eps,
            theta,
        });
    }
    Ok(QeOutcome { theta, curve })
}

/// A weighted sample for expected TD updates: `(weight, phi(s,a), r,
/// phi(s',a'))`, with `None` for a terminal successor.
pub type TdSample = (f64, Vec<f64>, f64, Option<Vec<f64>>);

/// Iterates the expected semi-gradient TD update over a fixed weighted
/// sample set until the step falls below `tol`.
pub fn expected_td_fixed_point(
    samples: &[TdSample],
    dim: usize,
    discount: f64,
    step: f64,
    tol: f64,
    max_iter: usize,
) -> Option<Vec<f64>> {
    let mut theta = vec![0.0; dim];
    let dotv = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    for _ in 0..max_iter {
        let mut delta = vec![0.0; dim];
        for (w, phi, r, next) in samples {
            let v_next = next.as_ref().map_or(0.0, |p| dotv(&theta, p));
            let err = r + discount * v_next - dotv(&theta, phi);
            for (d, f) in delta.iter_mut().zip(phi) {
                *d += w * err * f;
            }
        }
        let mut change = 0.0f64;
        for (t, d) in theta.iter_mut().zip(&delta) {
            *t += step * d;
            change = change.max((step * d).abs());
        }
        if !theta.iter().all(|t| t.is_finite()) {
            return None;
        }
        if change < tol {
            return Some(theta);
        }
    }
    None
}

/// Serialized QE baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QeModel {
    pub kind: String,
    pub theta: [f64; QE_FEATURES],
    pub features: FeatureConfig,
    pub max_laxity: usize,
    pub config_hash: String,
}

impl QeModel {
    pub const KIND: &'static str = "evcs-qe/1";

    pub fn new(theta: [f64; QE_FEATURES], config: &QeConfig, config_hash: impl Into<String>) -> Self {
        Self {
            kind: Self::KIND.to_string(),
            theta,
            features: config.features,
            max_laxity: config.max_laxity,
            config_hash: config_hash.into(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let m: Self = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if m.kind != Self::KIND {
            return Err(format!("unexpected model kind `{}`", m.kind));
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(chargeable: usize, urgent: usize, threshold: f64) -> QeContext {
        QeContext {
            chargeable,
            urgent,
            price_threshold: threshold,
            capacity: 10.0,
        }
    }

    fn agg(price: f64, counts: &[u32]) -> AggState {
        AggState {
            price,
            counts: counts.to_vec(),
        }
    }

    #[test]
    fn features_inactive_on_empty_station() {
        assert_eq!(qe_features(&agg(5.0, &[0, 0]), 0, &ctx(0, 0, 5.0)), [0.0; 4]);
    }

    #[test]
    fn cost_and_deadline_features() {
        let s = agg(9.0, &[2, 1]);
        assert_eq!(qe_features(&s, 1, &ctx(3, 2, 5.0))[0], 1.0);
        assert_eq!(qe_features(&s, 0, &ctx(3, 2, 5.0))[0], 0.0);
        assert_eq!(qe_features(&s, 1, &ctx(3, 2, 5.0))[1], 1.0);
        assert_eq!(qe_features(&s, 3, &ctx(3, 2, 5.0)), [1.0, 0.0, 1.0, 0.0]);
        let crowded = agg(1.0, &[6, 6]);
        assert_eq!(qe_features(&crowded, 0, &ctx(12, 6, 5.0))[3], 1.0);
    }

    #[test]
    fn value_is_dot_product() {
        assert_eq!(qe_value(&[0.0; 4], &[1.0, 1.0, 0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(qe_value(&[1.0, 2.0, 3.0, 4.0], &[0.0, 1.0, 0.0, 0.0]).unwrap(), 2.0);
        assert_eq!(qe_value(&[1.0, 2.0, 3.0, 4.0], &[1.0, 0.0, 1.0, 0.0]).unwrap(), 4.0);
        assert!(qe_value(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn greedy_tie_rule() {
        let s = agg(3.0, &[1, 2, 1]);
        assert_eq!(qe_greedy_action(&[0.0; 4], &s, &ctx(4, 1, 5.0)), 1);
        assert_eq!(qe_greedy_action(&[5.0, -1.0, 2.0, 0.0], &s, &ctx(2, 2, 5.0)), 2);
    }

    #[test]
    fn greedy_charges_fully_when_cheap() {
        // saturating is rewarded, charging above the threshold punished
        let theta = [-10.0, -100.0, 1.0, 0.0];
        let cheap = agg(2.0, &[0, 3]);
        let dear = agg(9.0, &[0, 3]);
        let c = ctx(3, 0, 5.0);
        assert_eq!(qe_greedy_action(&theta, &cheap, &c), 3);
        assert_eq!(qe_greedy_action(&theta, &dear, &c), 0);
    }

    #[test]
    fn rolling_median_window() {
        let p = [1.0, 9.0, 3.0, 7.0, 5.0];
        assert_eq!(rolling_median(&p, 0, 4), 1.0);
        assert_eq!(rolling_median(&p, 2, 4), 3.0);
        assert_eq!(rolling_median(&p, 4, 2), 6.0);
        assert_eq!(rolling_median(&p, 4, 100), 5.0);
    }

    #[test]
    fn epsilon_schedule() {
        let c = QeConfig {
            episodes: 100,
            ..QeConfig::default()
        };
        assert_eq!(c.epsilon(0), 1.0);
        assert!((c.epsilon(25) - 0.525).abs() < 1e-12);
        assert!((c.epsilon(50) - 0.05).abs() < 1e-12);
        assert!((c.epsilon(99) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn zero_rewards_keep_theta_at_zero() {
        use crate::env::{ArrivalEvent, Category};
        let day = EpisodeConfig::new(
            6,
            1.0,
            vec![0.0; 7],
            vec![ArrivalEvent::new(0, 2, 5, Category::Normal), ArrivalEvent::new(1, 1, 2, Category::Emergent)],
        )
        .unwrap();
        let out = qe_train(
            &[day],
            &QeConfig {
                episodes: 50,
                max_laxity: 4,
                ..QeConfig::default()
            },
        )
        .unwrap();
        assert_eq!(out.theta, [0.0; 4]);
    }
}
