//! Discrete-time charging-station environment.
//!
//! Each parked EV is tracked by its remaining demand `d` and remaining
//! parking time `p`, both counted in slots. A charged EV loses one unit of
//! demand per slot, and every parked EV loses one unit of parking time per
//! slot. An EV leaves the station as soon as its demand reaches zero or its
//! parking time runs out; the latter with demand left is recorded as an
//! uncharged departure.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("action refers to unknown EV {0}")]
    UnknownEv(EvId),
    #[error("no action given for parked EV {0}")]
    MissingAction(EvId),
    #[error("EV {0} has no remaining demand and cannot be charged")]
    ChargeWithoutDemand(EvId),
    #[error("cannot step past the horizon (t = {t}, horizon = {horizon})")]
    PastHorizon { t: usize, horizon: usize },
    #[error("price sequence has length {got}, expected horizon + 1 = {expected}")]
    PriceLength { got: usize, expected: usize },
    #[error("arrival #{index} at slot {t} is outside [0, {horizon}]")]
    ArrivalOutOfRange { index: usize, t: usize, horizon: usize },
    #[error("arrival #{index} has demand {demand} > parking {parking}")]
    ArrivalInfeasible {
        index: usize,
        demand: u32,
        parking: u32,
    },
    #[error("arrival #{index} must have positive demand and parking")]
    ArrivalEmpty { index: usize },
    #[error("discount must lie in (0, 1], got {0}")]
    Discount(f64),
    #[error("controller error: {0}")]
    Controller(String),
}

/// Identifier of a parked EV, assigned in arrival order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EvId(pub u32);

impl fmt::Display for EvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EV{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EvRecord {
    pub id: EvId,
    /// Remaining full-power charging slots.
    pub demand: u32,
    /// Remaining parked slots.
    pub parking: u32,
}

impl EvRecord {
    pub fn new(id: u32, demand: u32, parking: u32) -> Self {
        Self {
            id: EvId(id),
            demand,
            parking,
        }
    }

    /// Slack in slots: `parking - demand`. Negative once the EV can no
    /// longer be fully charged.
    pub fn laxity(&self) -> i64 {
        crate::llf::laxity(self.demand, self.parking)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Emergent,
    Normal,
    Residential,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Emergent, Category::Normal, Category::Residential];

    pub fn as_str(&self) -> &'static str {
        match self {
            Category::Emergent => "emergent",
            Category::Normal => "normal",
            Category::Residential => "residential",
        }
    }
}

impl std::str::FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "emergent" => Ok(Category::Emergent),
            "normal" => Ok(Category::Normal),
            "residential" => Ok(Category::Residential),
            other => Err(format!("unknown EV category `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrivalEvent {
    pub t: usize,
    pub demand: u32,
    pub parking: u32,
    pub category: Category,
}

impl ArrivalEvent {
    pub fn new(t: usize, demand: u32, parking: u32, category: Category) -> Self {
        Self {
            t,
            demand,
            parking,
            category,
        }
    }
}

/// One simulated day (or any horizon) of prices and arrivals.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeConfig {
    pub horizon: usize,
    pub discount: f64,
    /// `horizon + 1` prices, one per slot including the terminal one.
    pub prices: Vec<f64>,
    /// Arrivals sorted by slot; ties keep their input order.
    pub arrivals: Vec<ArrivalEvent>,
}

impl EpisodeConfig {
    pub fn new(
        horizon: usize,
        discount: f64,
        prices: Vec<f64>,
        mut arrivals: Vec<ArrivalEvent>,
    ) -> Result<Self, EnvError> {
        if prices.len() != horizon + 1 {
            return Err(EnvError::PriceLength {
                got: prices.len(),
                expected: horizon + 1,
            });
        }
        if !(discount > 0.0 && discount <= 1.0) {
            return Err(EnvError::Discount(discount));
        }
        for (index, a) in arrivals.iter().enumerate() {
            if a.t > horizon {
                return Err(EnvError::ArrivalOutOfRange {
                    index,
                    t: a.t,
                    horizon,
                });
            }
            if a.demand == 0 || a.parking == 0 {
                return Err(EnvError::ArrivalEmpty { index });
            }
            if a.demand > a.parking {
                return Err(EnvError::ArrivalInfeasible {
                    index,
                    demand: a.demand,
                    parking: a.parking,
                });
            }
        }
        arrivals.sort_by_key(|a| a.t);
        Ok(Self {
            horizon,
            discount,
            prices,
            arrivals,
        })
    }
}

/// Original (per-EV) MDP state.
#[derive(Debug, Clone, PartialEq)]
pub struct StationState {
    pub t: usize,
    pub price: f64,
    /// Parked EVs, sorted by id.
    pub evs: Vec<EvRecord>,
}

impl StationState {
    pub fn ev(&self, id: EvId) -> Option<&EvRecord> {
        self.evs
            .binary_search_by_key(&id, |e| e.id)
            .ok()
            .map(|i| &self.evs[i])
    }

    /// EVs that can still take a unit of charge.
    pub fn chargeable(&self) -> usize {
        self.evs.iter().filter(|e| e.demand > 0).count()
    }

    /// EVs with zero laxity; all of them must charge this slot.
    pub fn urgent(&self) -> usize {
        self.evs
            .iter()
            .filter(|e| e.demand > 0 && e.laxity() <= 0)
            .count()
    }
}

/// True iff every parked EV can still be fully charged.
pub fn feasibility_invariant(state: &StationState) -> bool {
    state.evs.iter().all(|e| e.parking >= e.demand)
}

/// Per-EV charging decisions for one slot.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Actions(BTreeMap<EvId, bool>);

impl Actions {
    pub fn new() -> Self {
        Self::default()
    }

    /// All parked EVs idle.
    pub fn idle(state: &StationState) -> Self {
        Self(state.evs.iter().map(|e| (e.id, false)).collect())
    }

    pub fn set(&mut self, id: EvId, charge: bool) {
        self.0.insert(id, charge);
    }

    pub fn get(&self, id: EvId) -> Option<bool> {
        self.0.get(&id).copied()
    }

    pub fn total(&self) -> usize {
        self.0.values().filter(|&&c| c).count()
    }

    pub fn charged(&self) -> impl Iterator<Item = EvId> + '_ {
        self.0.iter().filter(|(_, &c)| c).map(|(&id, _)| id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (EvId, bool)> + '_ {
        self.0.iter().map(|(&id, &c)| (id, c))
    }
}

impl FromIterator<(EvId, bool)> for Actions {
    fn from_iter<I: IntoIterator<Item = (EvId, bool)>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// An EV leaving the station at the end of a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Departure {
    pub record: EvRecord,
    /// Laxity just before leaving (after the step's update).
    pub laxity: i64,
}

impl Departure {
    pub fn fully_charged(&self) -> bool {
        self.record.demand == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub total_action: usize,
    pub departures: Vec<Departure>,
    pub arrivals: Vec<EvRecord>,
}

/// Stateful simulator over one [`EpisodeConfig`].
#[derive(Debug, Clone)]
pub struct Environment<'a> {
    config: &'a EpisodeConfig,
    state: StationState,
    next_arrival: usize,
    next_id: u32,
    uncharged: Vec<Departure>,
    origin: BTreeMap<EvId, (usize, Category)>,
}

impl<'a> Environment<'a> {
    /// Builds the environment at `t = 0`, with the slot-0 arrivals parked.
    pub fn new(config: &'a EpisodeConfig) -> Self {
        let mut env = Self {
            config,
            state: StationState {
                t: 0,
                price: config.prices[0],
                evs: Vec::new(),
            },
            next_arrival: 0,
            next_id: 0,
            uncharged: Vec::new(),
            origin: BTreeMap::new(),
        };
        env.admit_arrivals();
        env
    }

    pub fn config(&self) -> &EpisodeConfig {
        self.config
    }

    pub fn state(&self) -> &StationState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.state.t >= self.config.horizon
    }

    /// Departures that left with demand still outstanding, plus EVs still
    /// parked with demand once the horizon is reached.
    pub fn uncharged_departures(&self) -> usize {
        let stranded = if self.is_done() {
            self.state.evs.iter().filter(|e| e.demand > 0).count()
        } else {
            0
        };
        self.uncharged.len() + stranded
    }

    /// Arrival slot and category of an EV that has been admitted.
    pub fn origin(&self, id: EvId) -> Option<(usize, Category)> {
        self.origin.get(&id).copied()
    }

    fn admit_arrivals(&mut self) -> Vec<EvRecord> {
        let mut admitted = Vec::new();
        while let Some(a) = self.config.arrivals.get(self.next_arrival) {
            if a.t != self.state.t {
                break;
            }
            let rec = EvRecord {
                id: EvId(self.next_id),
                demand: a.demand,
                parking: a.parking,
            };
            self.origin.insert(rec.id, (a.t, a.category));
            self.next_id += 1;
            self.next_arrival += 1;
            self.state.evs.push(rec);
            admitted.push(rec);
        }
        admitted
    }

    /// Applies one slot of charging decisions.
    pub fn step(&mut self, actions: &Actions) -> Result<StepOutcome, EnvError> {
        if self.is_done() {
            return Err(EnvError::PastHorizon {
                t: self.state.t,
                horizon: self.config.horizon,
            });
        }
        for (id, _) in actions.iter() {
            if self.state.ev(id).is_none() {
                return Err(EnvError::UnknownEv(id));
            }
        }
        for ev in &self.state.evs {
            match actions.get(ev.id) {
                None => return Err(EnvError::MissingAction(ev.id)),
                Some(true) if ev.demand == 0 => return Err(EnvError::ChargeWithoutDemand(ev.id)),
                _ => {}
            }
        }

        let total_action = actions.total();
        let reward = -self.state.price * total_action as f64;

        let mut departures = Vec::new();
        let mut kept = Vec::with_capacity(self.state.evs.len());
        for mut ev in self.state.evs.drain(..) {
            if actions.get(ev.id) == Some(true) {
                ev.demand -= 1;
            }
            ev.parking = ev.parking.saturating_sub(1);
            if ev.demand == 0 || ev.parking == 0 {
                let dep = Departure {
                    record: ev,
                    laxity: ev.laxity(),
                };
                if !dep.fully_charged() {
                    self.uncharged.push(dep);
                }
                departures.push(dep);
            } else {
                kept.push(ev);
            }
        }
        self.state.evs = kept;
        self.state.t += 1;
        self.state.price = self.config.prices[self.state.t];
        let arrivals = self.admit_arrivals();

        Ok(StepOutcome {
            reward,
            total_action,
            departures,
            arrivals,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStep {
    pub state: StationState,
    pub actions: Actions,
    pub total_action: usize,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub steps: Vec<EpisodeStep>,
    pub final_state: StationState,
    /// `sum_t discount^t * r_t`.
    pub total_reward: f64,
    pub uncharged_departures: usize,
}

impl EpisodeTrace {
    /// False when some EV left (or was stranded at the horizon) uncharged.
    pub fn feasible(&self) -> bool {
        self.uncharged_departures == 0
    }
}

/// Rolls out a whole episode, asking `controller` for per-EV actions at every
/// slot `t = 0, ..., horizon - 1`.
pub fn run_episode<F>(config: &EpisodeConfig, mut controller: F) -> Result<EpisodeTrace, EnvError>
where
    F: FnMut(&StationState) -> Result<Actions, EnvError>,
{
    let mut env = Environment::new(config);
    let mut steps = Vec::with_capacity(config.horizon);
    let mut total_reward = 0.0;
    let mut weight = 1.0;
    while !env.is_done() {
        let state = env.state().clone();
        let actions = controller(&state)?;
        let out = env.step(&actions)?;
        total_reward += weight * out.reward;
        weight *= config.discount;
        steps.push(EpisodeStep {
            state,
            actions,
            total_action: out.total_action,
            reward: out.reward,
        });
    }
    Ok(EpisodeTrace {
        steps,
        final_state: env.state().clone(),
        total_reward,
        uncharged_departures: env.uncharged_departures(),
    })
}
