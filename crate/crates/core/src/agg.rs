//! Laxity-group state aggregation.
//!
//! The aggregated state replaces the per-EV list with the count of parked
//! EVs at every laxity level `0..=L`. Charging keeps an EV's laxity, idling
//! lowers it by one, so the counts evolve from the per-level charge
//! allocation plus arrivals and departures.

use thiserror::Error;

use crate::env::{EpisodeConfig, StationState};
use crate::llf::laxity;

#[derive(Debug, Error, PartialEq)]
pub enum AggError {
    #[error("EV with laxity {laxity} lies outside [0, {max}]")]
    LaxityOutOfRange { laxity: i64, max: usize },
    #[error("total action {total} exceeds the {available} aggregated EVs")]
    OverBudget { total: usize, available: usize },
    #[error("flow vectors have length {got}, expected {expected}")]
    FlowLength { got: usize, expected: usize },
    #[error("laxity level {level} would hold a negative count")]
    NegativeCount { level: usize },
    #[error("cannot step past the horizon")]
    PastHorizon,
    #[error("{unserved} zero-laxity EVs left uncharged")]
    DeadlineMissed { unserved: usize },
    #[error("L_max must be at least 1")]
    BadCap,
}

/// Price plus per-laxity counts `n[0..=L]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AggState {
    pub price: f64,
    pub counts: Vec<u32>,
}

impl AggState {
    pub fn max_laxity(&self) -> usize {
        self.counts.len() - 1
    }

    pub fn total(&self) -> u32 {
        self.counts.iter().sum()
    }

    /// EVs that must charge this slot.
    pub fn urgent(&self) -> u32 {
        self.counts[0]
    }

    /// `[price, n0, n1, ..., nL]`.
    pub fn to_vector(&self) -> Vec<f64> {
        std::iter::once(self.price)
            .chain(self.counts.iter().map(|&c| c as f64))
            .collect()
    }
}

/// Group-level flows for one transition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupFlow {
    pub charged: Vec<u32>,
    pub arrived: Vec<u32>,
    pub departed: Vec<u32>,
}

/// Counts parked EVs (with demand left) per laxity level.
pub fn aggregate(state: &StationState, max_laxity: usize) -> Result<AggState, AggError> {
    let mut counts = vec![0u32; max_laxity + 1];
    for ev in state.evs.iter().filter(|e| e.demand > 0) {
        let lax = laxity(ev.demand, ev.parking);
        if lax < 0 || lax as usize > max_laxity {
            return Err(AggError::LaxityOutOfRange {
                laxity: lax,
                max: max_laxity,
            });
        }
        counts[lax as usize] += 1;
    }
    Ok(AggState {
        price: state.price,
        counts,
    })
}

/// Greedy prefix fill of the budget from laxity 0 upward.
pub fn group_allocate(total: usize, counts: &[u32]) -> Result<Vec<u32>, AggError> {
    let available: usize = counts.iter().map(|&c| c as usize).sum();
    if total > available {
        return Err(AggError::OverBudget { total, available });
    }
    let mut left = total;
    Ok(counts
        .iter()
        .map(|&n| {
            let take = (n as usize).min(left);
            left -= take;
            take as u32
        })
        .collect())
}

/// Next counts from the current counts, the total action, and the arrival
/// and departure tallies (indexed by laxity at `t + 1`).
pub fn agg_transition(
    state: &AggState,
    total: usize,
    arrived: &[u32],
    departed: &[u32],
    next_price: f64,
) -> Result<AggState, AggError> {
    let levels = state.counts.len();
    for v in [arrived, departed] {
        if v.len() != levels {
            return Err(AggError::FlowLength {
                got: v.len(),
                expected: levels,
            });
        }
    }
    let charged = group_allocate(total, &state.counts)?;
    let mut counts = Vec::with_capacity(levels);
    for l in 0..levels {
        let (n_up, a_up) = if l + 1 < levels {
            (state.counts[l + 1] as i64, charged[l + 1] as i64)
        } else {
            (0, 0)
        };
        let next = charged[l] as i64 + (n_up - a_up) + arrived[l] as i64 - departed[l] as i64;
        if next < 0 {
            return Err(AggError::NegativeCount { level: l });
        }
        counts.push(next as u32);
    }
    Ok(AggState {
        price: next_price,
        counts,
    })
}

/// Pools every level `>= l_max` into level `l_max`.
pub fn cap_merge(state: &AggState, l_max: usize) -> Result<AggState, AggError> {
    if l_max == 0 {
        return Err(AggError::BadCap);
    }
    let mut counts = vec![0u32; l_max + 1];
    for (l, &n) in state.counts.iter().enumerate() {
        counts[l.min(l_max)] += n;
    }
    Ok(AggState {
        price: state.price,
        counts,
    })
}

/// Per-level counts of EVs charged by a per-EV action map.
pub fn group_tallies(state: &StationState, actions: &crate::env::Actions, max_laxity: usize) -> Vec<u32> {
    let mut charged = vec![0u32; max_laxity + 1];
    for ev in &state.evs {
        if actions.get(ev.id) == Some(true) {
            let lax = ev.laxity().clamp(0, max_laxity as i64) as usize;
            charged[lax] += 1;
        }
    }
    charged
}

/// Simulator that never materializes individual EVs.
///
/// Each laxity group keeps the multiset of remaining demands of its members
/// (largest first), which is all that is needed to know when charged EVs
/// finish and leave. Within a group the largest demands are charged first,
/// the same order LLF uses by default.
#[derive(Debug, Clone, PartialEq)]
pub struct AggSimulator<'a> {
    config: &'a EpisodeConfig,
    max_laxity: usize,
    t: usize,
    next_arrival: usize,
    groups: Vec<Vec<u32>>,
}

/// Result of one aggregated step.
#[derive(Debug, Clone, PartialEq)]
pub struct AggStep {
    pub reward: f64,
    pub flow: GroupFlow,
}

impl<'a> AggSimulator<'a> {
    pub fn new(config: &'a EpisodeConfig, max_laxity: usize) -> Result<Self, AggError> {
        let mut sim = Self {
            config,
            max_laxity,
            t: 0,
            next_arrival: 0,
            groups: vec![Vec::new(); max_laxity + 1],
        };
        sim.admit()?;
        Ok(sim)
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.t >= self.config.horizon
    }

    pub fn state(&self) -> AggState {
        AggState {
            price: self.config.prices[self.t],
            counts: self.groups.iter().map(|g| g.len() as u32).collect(),
        }
    }

    /// Internal bookkeeping: remaining demands per laxity level.
    pub fn groups(&self) -> &[Vec<u32>] {
        &self.groups
    }

    fn admit(&mut self) -> Result<Vec<u32>, AggError> {
        let mut arrived = vec![0u32; self.max_laxity + 1];
        while let Some(a) = self.config.arrivals.get(self.next_arrival) {
            if a.t != self.t {
                break;
            }
            let lax = laxity(a.demand, a.parking);
            if lax < 0 || lax as usize > self.max_laxity {
                return Err(AggError::LaxityOutOfRange {
                    laxity: lax,
                    max: self.max_laxity,
                });
            }
            insert_sorted(&mut self.groups[lax as usize], a.demand);
            arrived[lax as usize] += 1;
            self.next_arrival += 1;
        }
        Ok(arrived)
    }

    /// Applies a total action. Fails if the zero-laxity group is not fully
    /// served, since those EVs would leave uncharged.
    pub fn step(&mut self, total: usize) -> Result<AggStep, AggError> {
        if self.is_done() {
            return Err(AggError::PastHorizon);
        }
        let before = self.state();
        let charged = group_allocate(total, &before.counts)?;
        if charged[0] < before.counts[0] {
            return Err(AggError::DeadlineMissed {
                unserved: (before.counts[0] - charged[0]) as usize,
            });
        }
        let reward = -before.price * total as f64;
        let levels = self.max_laxity + 1;
        let mut next: Vec<Vec<u32>> = vec![Vec::new(); levels];
        let mut departed = vec![0u32; levels];
        for (l, group) in self.groups.iter().enumerate() {
            let k = charged[l] as usize;
            for &d in &group[..k] {
                if d == 1 {
                    departed[l] += 1;
                } else {
                    next[l].push(d - 1);
                }
            }
            for &d in &group[k..] {
                // l >= 1 here because group 0 is fully charged
                next[l - 1].push(d);
            }
        }
        for g in &mut next {
            g.sort_unstable_by(|a, b| b.cmp(a));
        }
        self.groups = next;
        self.t += 1;
        let arrived = self.admit()?;

        debug_assert_eq!(
            agg_transition(&before, total, &arrived, &departed, self.config.prices[self.t])
                .map(|s| s.counts),
            Ok(self.state().counts)
        );
        Ok(AggStep {
            reward,
            flow: GroupFlow {
                charged,
                arrived,
                departed,
            },
        })
    }
}

fn insert_sorted(group: &mut Vec<u32>, demand: u32) {
    let pos = group.partition_point(|&d| d >= demand);
    group.insert(pos, demand);
}
