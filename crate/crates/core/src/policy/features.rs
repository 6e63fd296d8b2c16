use crate::agg::{aggregate, cap_merge, AggState};
use crate::env::{run_episode, EnvError, EpisodeConfig, StationState};
use crate::llf::{llf_allocate, TieBreak};

use super::{mean_std, PolicyError, PolicyParams};

/// Maps a station state to the standardized policy input
/// `[price, n0, ..., n_cap]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub max_laxity: usize,
    /// Levels at or above this are pooled into one count.
    pub l_max: Option<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureMap {
    /// No standardization.
    pub fn identity(max_laxity: usize, l_max: Option<usize>) -> Self {
        let dim = Self::dim_for(max_laxity, l_max);
        Self {
            max_laxity,
            l_max,
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    fn dim_for(max_laxity: usize, l_max: Option<usize>) -> usize {
        Self::levels_for(max_laxity, l_max) + 2
    }

    fn levels_for(max_laxity: usize, l_max: Option<usize>) -> usize {
        l_max.map_or(max_laxity, |c| c.min(max_laxity))
    }

    /// Highest count index in the feature vector.
    pub fn levels(&self) -> usize {
        Self::levels_for(self.max_laxity, self.l_max)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Aggregates and caps without standardizing.
    pub fn aggregate(&self, state: &StationState) -> Result<AggState, PolicyError> {
        let agg = aggregate(state, self.max_laxity)?;
        Ok(match self.l_max {
            Some(c) if c < self.max_laxity => cap_merge(&agg, c)?,
            _ => agg,
        })
    }

    pub fn standardize(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    /// Standardized features together with the (capped) aggregated state.
    pub fn features(&self, state: &StationState) -> Result<(Vec<f64>, AggState), PolicyError> {
        let agg = self.aggregate(state)?;
        Ok((self.standardize(&agg.to_vector()), agg))
    }

    /// Fits means and std-devs on the states visited by two reference
    /// controllers on every day: charging only the urgent EVs, and charging
    /// every EV. Constant features get std-dev 1.
    pub fn fit(days: &[EpisodeConfig], max_laxity: usize, l_max: Option<usize>) -> Result<Self, PolicyError> {
        let base = Self::identity(max_laxity, l_max);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let tie = TieBreak::default();
        for day in days {
            for charge_all in [false, true] {
                let mut err = None;
                let trace = run_episode(day, |s| {
                    match base.aggregate(s) {
                        Ok(agg) => rows.push(agg.to_vector()),
                        Err(e) => err = Some(e),
                    }
                    let total = if charge_all { s.chargeable() } else { s.urgent() };
                    llf_allocate(total as i64, &s.evs, &tie).map_err(|e| EnvError::Controller(e.to_string()))
                });
                if let Some(e) = err {
                    return Err(e);
                }
                trace?;
            }
        }
        let dim = base.dim();
        let mut mean = vec![0.0; dim];
        let mut std = vec![1.0; dim];
        for j in 0..dim {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            let (m, s) = mean_std(&col);
            mean[j] = m;
            std[j] = if s > 1e-9 { s } else { 1.0 };
        }
        Ok(Self {
            max_laxity,
            l_max,
            mean,
            std,
        })
    }

    /// Weights and bias acting on unstandardized features.
    pub fn destandardize(&self, params: &PolicyParams) -> (Vec<f64>, f64) {
        let weights: Vec<f64> = params.weights.iter().zip(&self.std).map(|(w, s)| w / s).collect();
        let shift: f64 = weights.iter().zip(&self.mean).map(|(w, m)| w * m).sum();
        (weights, params.bias - shift)
    }

    /// Inverse of [`destandardize`](Self::destandardize).
    pub fn standardize_params(&self, weights: &[f64], bias: f64, sigma: f64) -> PolicyParams {
        let shift: f64 = weights.iter().zip(&self.mean).map(|(w, m)| w * m).sum();
        PolicyParams {
            weights: weights.iter().zip(&self.std).map(|(w, s)| w * s).collect(),
            bias: bias + shift,
            sigma,
        }
    }
}
