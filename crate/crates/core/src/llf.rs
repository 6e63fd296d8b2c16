//! Least-laxity-first disaggregation of a station-wide charging budget.

use std::collections::HashMap;

use thiserror::Error;

use crate::env::{run_episode, Actions, EnvError, EpisodeConfig, EvId, EvRecord, StationState};

#[derive(Debug, Error, PartialEq)]
pub enum LlfError {
    #[error("total action {0} is negative")]
    NegativeTotal(i64),
    #[error("total action {total} exceeds the {chargeable} chargeable EVs")]
    OverBudget { total: i64, chargeable: usize },
    #[error("instance has {points} EV-slot decision points, above the enumeration guard of {guard}")]
    TooLarge { points: usize, guard: usize },
    #[error("totals cover {got} slots, horizon is {horizon}")]
    TotalsLength { got: usize, horizon: usize },
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// `parking - demand`.
pub fn laxity(demand: u32, parking: u32) -> i64 {
    parking as i64 - demand as i64
}

/// How EVs of equal laxity are ordered.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum TieBreak {
    /// Larger remaining demand first (equivalently the later deadline),
    /// then ascending id.
    #[default]
    LargestDemand,
    AscendingId,
    /// Position in the list, earlier first. Unlisted EVs go last by id.
    Priority(Vec<EvId>),
}

impl TieBreak {
    fn rank(&self, ev: &EvRecord) -> (i64, u64, EvId) {
        let lax = ev.laxity();
        match self {
            TieBreak::LargestDemand => (lax, u64::MAX - ev.demand as u64, ev.id),
            TieBreak::AscendingId => (lax, 0, ev.id),
            TieBreak::Priority(order) => {
                let pos = order.iter().position(|&id| id == ev.id).unwrap_or(order.len());
                (lax, pos as u64, ev.id)
            }
        }
    }
}

/// EVs that can take charge, in LLF priority order.
pub fn llf_order<'a>(evs: &'a [EvRecord], tie_break: &TieBreak) -> Vec<&'a EvRecord> {
    let mut order: Vec<&EvRecord> = evs.iter().filter(|e| e.demand > 0).collect();
    order.sort_by_key(|e| tie_break.rank(e));
    order
}

/// Charges exactly `total` EVs, least laxity first.
pub fn llf_allocate(total: i64, evs: &[EvRecord], tie_break: &TieBreak) -> Result<Actions, LlfError> {
    if total < 0 {
        return Err(LlfError::NegativeTotal(total));
    }
    let order = llf_order(evs, tie_break);
    if total as usize > order.len() {
        return Err(LlfError::OverBudget {
            total,
            chargeable: order.len(),
        });
    }
    let mut actions: Actions = evs.iter().map(|e| (e.id, false)).collect();
    for ev in order.into_iter().take(total as usize) {
        actions.set(ev.id, true);
    }
    Ok(actions)
}

/// Result of disaggregating a whole sequence of totals with LLF.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LlfOutcome {
    pub uncharged_departures: usize,
    /// Slots where the total exceeded the chargeable EVs; LLF charged every
    /// chargeable EV there instead.
    pub shortfall_slots: usize,
}

impl LlfOutcome {
    /// The totals were realized exactly and every EV left fully charged.
    pub fn realized(&self) -> bool {
        self.uncharged_departures == 0 && self.shortfall_slots == 0
    }
}

/// Runs the environment with LLF disaggregating `totals[t]` at every slot.
pub fn llf_realize(config: &EpisodeConfig, totals: &[usize], tie_break: &TieBreak) -> Result<LlfOutcome, LlfError> {
    if totals.len() != config.horizon {
        return Err(LlfError::TotalsLength {
            got: totals.len(),
            horizon: config.horizon,
        });
    }
    let mut shortfall_slots = 0;
    let trace = run_episode(config, |s| {
        let want = totals[s.t];
        let chargeable = s.chargeable();
        if want > chargeable {
            shortfall_slots += 1;
        }
        llf_allocate(want.min(chargeable) as i64, &s.evs, tie_break).map_err(|e| EnvError::Controller(e.to_string()))
    })?;
    Ok(LlfOutcome {
        uncharged_departures: trace.uncharged_departures,
        shortfall_slots,
    })
}

pub const DEFAULT_ENUMERATION_GUARD: usize = 24;

/// Number of (EV, slot) pairs at which a charging decision exists.
pub fn decision_points(config: &EpisodeConfig) -> usize {
    config
        .arrivals
        .iter()
        .map(|a| (a.parking as usize).min(config.horizon.saturating_sub(a.t)))
        .sum()
}

/// Exhaustive search for per-EV binary schedules whose per-slot sums equal
/// `totals` and which charge every EV fully before it leaves.
///
/// Works directly on `(demand, parking)` pairs rather than through the
/// environment so it can serve as an independent check of it.
pub fn exists_feasible_individual_schedule(
    config: &EpisodeConfig,
    totals: &[usize],
    guard: usize,
) -> Result<bool, LlfError> {
    if totals.len() != config.horizon {
        return Err(LlfError::TotalsLength {
            got: totals.len(),
            horizon: config.horizon,
        });
    }
    let points = decision_points(config);
    if points > guard {
        return Err(LlfError::TooLarge { points, guard });
    }
    let search = Search {
        arrivals: config
            .arrivals
            .iter()
            .map(|a| (a.t, a.demand, a.parking))
            .collect(),
        totals,
        horizon: config.horizon,
        memo: HashMap::new(),
    };
    Ok(search.run())
}

// (demand, parking) per EV; `None` before arrival. Done EVs have demand 0.
type SearchKey = (usize, Vec<Option<(u32, u32)>>);

struct Search<'a> {
    arrivals: Vec<(usize, u32, u32)>,
    totals: &'a [usize],
    horizon: usize,
    memo: HashMap<SearchKey, bool>,
}

impl Search<'_> {
    fn run(mut self) -> bool {
        let start = vec![None; self.arrivals.len()];
        self.go(0, start)
    }

    fn go(&mut self, t: usize, mut evs: Vec<Option<(u32, u32)>>) -> bool {
        for (i, &(at, d, p)) in self.arrivals.iter().enumerate() {
            if at == t {
                evs[i] = Some((d, p));
            }
        }
        let active: Vec<usize> = (0..evs.len())
            .filter(|&i| matches!(evs[i], Some((d, _)) if d > 0))
            .collect();
        if t == self.horizon {
            return active.is_empty() && evs.iter().all(Option::is_some);
        }
        let key = (t, evs.clone());
        if let Some(&hit) = self.memo.get(&key) {
            return hit;
        }
        let k = self.totals[t];
        let mut found = false;
        if k <= active.len() {
            let mut chosen = vec![false; active.len()];
            found = self.subsets(t, &evs, &active, k, 0, &mut chosen);
        }
        self.memo.insert(key, found);
        found
    }

    fn subsets(
        &mut self,
        t: usize,
        evs: &[Option<(u32, u32)>],
        active: &[usize],
        k: usize,
        from: usize,
        chosen: &mut Vec<bool>,
    ) -> bool {
        let picked = chosen.iter().filter(|&&c| c).count();
        if picked == k {
            let mut next = evs.to_vec();
            for (j, &i) in active.iter().enumerate() {
                let (d, p) = next[i].unwrap();
                let d = d - chosen[j] as u32;
                let p = p - 1;
                if d > 0 && p == 0 {
                    return false;
                }
                next[i] = Some((d, p));
            }
            return self.go(t + 1, next);
        }
        if active.len() - from < k - picked {
            return false;
        }
        for j in from..active.len() {
            chosen[j] = true;
            let ok = self.subsets(t, evs, active, k, j + 1, chosen);
            chosen[j] = false;
            if ok {
                return true;
            }
        }
        false
    }
}

/// One cell of a per-EV schedule table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduleCell {
    pub demand: u32,
    pub parking: u32,
    pub laxity: i64,
    pub action: u8,
}

/// Per-EV `d`, `p`, laxity and action for every slot `0..=horizon`.
///
/// After an EV leaves, its parking clock keeps counting down to the
/// deadline it arrived with, its demand is frozen, and a fully charged EV
/// reports laxity 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleTable {
    pub totals: Vec<usize>,
    /// `rows[ev][t]`; `None` before the EV arrives.
    pub rows: Vec<Vec<Option<ScheduleCell>>>,
    pub uncharged_departures: usize,
}

impl ScheduleTable {
    pub fn column(&self, ev: usize, pick: impl Fn(&ScheduleCell) -> i64) -> Vec<i64> {
        self.rows[ev].iter().map(|c| c.as_ref().map_or(0, &pick)).collect()
    }
}

/// Simulates `totals` with a caller-supplied allocator and tabulates every
/// EV's trajectory. The budget handed to `allocate` is capped at the number
/// of chargeable EVs.
pub fn schedule_table<F>(config: &EpisodeConfig, totals: &[usize], mut allocate: F) -> Result<ScheduleTable, LlfError>
where
    F: FnMut(usize, usize, &StationState) -> Result<Actions, LlfError>,
{
    if totals.len() != config.horizon {
        return Err(LlfError::TotalsLength {
            got: totals.len(),
            horizon: config.horizon,
        });
    }
    let n = config.arrivals.len();
    let horizon = config.horizon;
    let mut rows = vec![vec![None; horizon + 1]; n];
    // deadline and last known demand per EV
    let mut last: Vec<Option<(usize, u32)>> = vec![None; n];

    let record = |rows: &mut Vec<Vec<Option<ScheduleCell>>>, last: &mut Vec<Option<(usize, u32)>>, state: &StationState, actions: Option<&Actions>| {
        let t = state.t;
        for ev in &state.evs {
            let i = ev.id.0 as usize;
            if last[i].is_none() {
                last[i] = Some((t + ev.parking as usize, ev.demand));
            }
            last[i] = Some((last[i].unwrap().0, ev.demand));
            rows[i][t] = Some(ScheduleCell {
                demand: ev.demand,
                parking: ev.parking,
                laxity: ev.laxity(),
                action: actions.and_then(|a| a.get(ev.id)).map_or(0, u8::from),
            });
        }
        for i in 0..rows.len() {
            if rows[i][t].is_some() {
                continue;
            }
            if let Some((deadline, demand)) = last[i] {
                let parking = deadline.saturating_sub(t) as u32;
                let laxity = if demand == 0 { 0 } else { laxity(demand, parking) };
                rows[i][t] = Some(ScheduleCell {
                    demand,
                    parking,
                    laxity,
                    action: 0,
                });
            }
        }
    };

    let mut err = None;
    let trace = run_episode(config, |s| {
        let budget = totals[s.t].min(s.chargeable());
        match allocate(s.t, budget, s) {
            Ok(a) => {
                record(&mut rows, &mut last, s, Some(&a));
                // demand after this slot's charge, used once the EV leaves
                for ev in &s.evs {
                    if a.get(ev.id) == Some(true) {
                        let i = ev.id.0 as usize;
                        last[i] = Some((last[i].unwrap().0, ev.demand - 1));
                    }
                }
                Ok(a)
            }
            Err(e) => {
                let msg = e.to_string();
                err = Some(e);
                Err(EnvError::Controller(msg))
            }
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    let trace = trace?;
    record(&mut rows, &mut last, &trace.final_state, None);
    Ok(ScheduleTable {
        totals: totals.to_vec(),
        rows,
        uncharged_departures: trace.uncharged_departures,
    })
}
