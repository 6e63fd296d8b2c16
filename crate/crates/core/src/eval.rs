//! Deterministic evaluation of trained policies on whole days.

use crate::agg::aggregate;
use crate::baseline::{qe_greedy_action, QeModel};
use crate::env::{EpisodeConfig, Environment, StationState};
use crate::llf::{llf_allocate, TieBreak};
use crate::policy::{project_action, FeatureMap, PgModel, PolicyParams};
use crate::Error;

/// Chooses the station-wide number of EVs to charge.
pub trait TotalPolicy {
    fn total_action(&mut self, day: &EpisodeConfig, state: &StationState) -> Result<usize, Error>;
}

/// Linear Gaussian policy evaluated at its mean.
#[derive(Debug, Clone)]
pub struct MeanPolicy {
    pub params: PolicyParams,
    pub features: FeatureMap,
}

impl From<&PgModel> for MeanPolicy {
    fn from(m: &PgModel) -> Self {
        Self {
            params: m.params(),
            features: m.feature_map(),
        }
    }
}

impl TotalPolicy for MeanPolicy {
    fn total_action(&mut self, _day: &EpisodeConfig, state: &StationState) -> Result<usize, Error> {
        let (f, agg) = self.features.features(state)?;
        let mean = self.params.mean(&f)?;
        Ok(project_action(mean, state.chargeable(), agg.urgent() as usize))
    }
}

/// Greedy policy of the approximate-Q baseline.
#[derive(Debug, Clone)]
pub struct GreedyQe(pub QeModel);

impl TotalPolicy for GreedyQe {
    fn total_action(&mut self, day: &EpisodeConfig, state: &StationState) -> Result<usize, Error> {
        let agg = aggregate(state, self.0.max_laxity)?;
        let ctx = self.0.features.context(day, state, &agg);
        Ok(qe_greedy_action(&self.0.theta, &agg, &ctx))
    }
}

/// Charges only the zero-laxity EVs.
#[derive(Debug, Clone, Copy, Default)]
pub struct UrgentOnly;

impl TotalPolicy for UrgentOnly {
    fn total_action(&mut self, _day: &EpisodeConfig, state: &StationState) -> Result<usize, Error> {
        Ok(state.urgent())
    }
}

/// Per-slot record of one evaluated day.
#[derive(Debug, Clone, PartialEq)]
pub struct DayResult {
    pub reward: f64,
    pub totals: Vec<usize>,
    pub prices: Vec<f64>,
    pub uncharged: usize,
}

pub fn evaluate_day<P: TotalPolicy + ?Sized>(day: &EpisodeConfig, policy: &mut P) -> Result<DayResult, Error> {
    let tie = TieBreak::default();
    let mut env = Environment::new(day);
    let mut totals = Vec::with_capacity(day.horizon);
    let mut prices = Vec::with_capacity(day.horizon);
    let mut reward = 0.0;
    let mut weight = 1.0;
    while !env.is_done() {
        let state = env.state();
        let total = policy.total_action(day, state)?;
        let acts = llf_allocate(total as i64, &state.evs, &tie)?;
        prices.push(state.price);
        totals.push(total);
        let out = env.step(&acts)?;
        reward += weight * out.reward;
        weight *= day.discount;
    }
    Ok(DayResult {
        reward,
        totals,
        prices,
        uncharged: env.uncharged_departures(),
    })
}

/// `(a - b) / |b| * 100`.
pub fn improvement_pct(a: f64, b: f64) -> f64 {
    (a - b) / b.abs() * 100.0
}
