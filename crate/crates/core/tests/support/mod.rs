#![allow(dead_code)]

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::path::Path;

use evcs::agg::{aggregate, AggSimulator};
use evcs::data::{load_dir, write_days, DaySpec, GeneratorConfig};
use evcs::env::{ArrivalEvent, Category, EpisodeConfig, EvRecord, StationState};
use evcs::llf::{llf_allocate, TieBreak};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Up to `max_evs` EVs over a horizon of at most `max_horizon`, every EV
/// able to leave fully charged before the horizon, laxity at most
/// `max_laxity`, integer prices in 1..=9.
pub fn random_instance<R: Rng>(rng: &mut R, max_evs: usize, max_horizon: usize, max_laxity: u32) -> EpisodeConfig {
    let horizon = rng.random_range(1..=max_horizon);
    let n = rng.random_range(1..=max_evs);
    let arrivals = (0..n)
        .map(|_| {
            let t = rng.random_range(0..horizon);
            let parking = rng.random_range(1..=(horizon - t) as u32);
            let lo = parking.saturating_sub(max_laxity).max(1);
            let demand = rng.random_range(lo..=parking);
            ArrivalEvent::new(t, demand, parking, Category::Normal)
        })
        .collect();
    let prices = (0..=horizon).map(|_| rng.random_range(1..=9) as f64).collect();
    EpisodeConfig::new(horizon, 1.0, prices, arrivals).unwrap()
}

/// Totals of a random per-EV schedule that charges every EV fully: an EV
/// with no slack is always charged, any other with probability one half.
pub fn random_feasible_totals<R: Rng>(config: &EpisodeConfig, rng: &mut R) -> Vec<usize> {
    let mut remaining: Vec<Option<(u32, u32)>> = vec![None; config.arrivals.len()];
    let mut totals = Vec::with_capacity(config.horizon);
    for t in 0..config.horizon {
        for (i, a) in config.arrivals.iter().enumerate() {
            if a.t == t {
                remaining[i] = Some((a.demand, a.parking));
            }
        }
        let mut k = 0;
        for slot in remaining.iter_mut() {
            if let Some((d, p)) = *slot {
                if d == 0 || p == 0 {
                    continue;
                }
                let charge = d == p || rng.random_bool(0.5);
                let d = d - charge as u32;
                k += charge as usize;
                *slot = Some((d, p - 1));
            }
        }
        totals.push(k);
    }
    totals
}

/// Totals drawn uniformly from `0..=arrivals`.
pub fn random_totals<R: Rng>(config: &EpisodeConfig, rng: &mut R) -> Vec<usize> {
    let n = config.arrivals.len();
    (0..config.horizon).map(|_| rng.random_range(0..=n)).collect()
}

/// `count` generated days written to `dir` and read back.
pub fn synthetic_days(dir: &Path, count: usize, seed: u64) -> Vec<(String, EpisodeConfig)> {
    let cfg = GeneratorConfig {
        days: count,
        ..GeneratorConfig::default()
    };
    write_days(&cfg, seed, dir).unwrap();
    load_dir(dir, &DaySpec::default()).unwrap()
}

/// Finite Markov chain over price levels.
#[derive(Debug, Clone)]
pub struct PriceChain {
    pub levels: Vec<f64>,
    pub transition: Vec<Vec<f64>>,
}

impl PriceChain {
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        let k = rng.random_range(1..=3);
        let levels = (0..k).map(|_| rng.random_range(1..=9) as f64).collect();
        let transition = (0..k)
            .map(|_| {
                let w: Vec<f64> = (0..k).map(|_| rng.random_range(1..=4) as f64).collect();
                let s: f64 = w.iter().sum();
                w.into_iter().map(|x| x / s).collect()
            })
            .collect();
        Self { levels, transition }
    }
}

/// A deterministic but arbitrary total-action rule on `(t, price level,
/// counts)`, always inside `[n0, sum counts]`.
#[derive(Debug, Clone, Copy)]
pub struct HashedPolicy(pub u64);

impl HashedPolicy {
    pub fn pick(&self, t: usize, level: usize, counts: &[u32]) -> usize {
        let mut h = DefaultHasher::new();
        (self.0, t, level, counts).hash(&mut h);
        let lo = counts[0] as u64;
        let hi: u64 = counts.iter().map(|&c| c as u64).sum();
        (lo + h.finish() % (hi - lo + 1)) as usize
    }
}

/// Finite-horizon dynamic programming over the per-EV state with LLF
/// disaggregation. `policy = None` maximizes over `[n0, chargeable]`.
pub struct PerEvDp<'a> {
    pub config: &'a EpisodeConfig,
    pub chain: &'a PriceChain,
    pub max_laxity: usize,
    pub policy: Option<HashedPolicy>,
    memo: HashMap<(usize, usize, Vec<(u32, u32, u32)>), f64>,
}

impl<'a> PerEvDp<'a> {
    pub fn new(config: &'a EpisodeConfig, chain: &'a PriceChain, max_laxity: usize, policy: Option<HashedPolicy>) -> Self {
        Self {
            config,
            chain,
            max_laxity,
            policy,
            memo: HashMap::new(),
        }
    }

    fn arrivals_at(&self, t: usize) -> Vec<(u32, u32, u32)> {
        self.config
            .arrivals
            .iter()
            .enumerate()
            .filter(|(_, a)| a.t == t)
            .map(|(i, a)| (i as u32, a.demand, a.parking))
            .collect()
    }

    pub fn value(&mut self) -> f64 {
        let start = self.arrivals_at(0);
        self.go(0, 0, start)
    }

    fn go(&mut self, t: usize, level: usize, evs: Vec<(u32, u32, u32)>) -> f64 {
        if t == self.config.horizon {
            return 0.0;
        }
        let key = (t, level, evs.clone());
        if let Some(&v) = self.memo.get(&key) {
            return v;
        }
        let price = self.chain.levels[level];
        let state = StationState {
            t,
            price,
            evs: evs.iter().map(|&(id, d, p)| EvRecord::new(id, d, p)).collect(),
        };
        let counts = aggregate(&state, self.max_laxity).unwrap().counts;
        let actions: Vec<usize> = match self.policy {
            Some(pi) => vec![pi.pick(t, level, &counts)],
            None => (state.urgent()..=state.chargeable()).collect(),
        };
        let mut best = f64::NEG_INFINITY;
        for a in actions {
            let acts = llf_allocate(a as i64, &state.evs, &TieBreak::default()).unwrap();
            let mut next: Vec<(u32, u32, u32)> = Vec::new();
            for ev in &state.evs {
                let charged = acts.get(ev.id) == Some(true);
                let d = ev.demand - charged as u32;
                let p = ev.parking - 1;
                assert!(!(d > 0 && p == 0), "EV left uncharged under a >= n0");
                if d > 0 {
                    next.push((ev.id.0, d, p));
                }
            }
            next.extend(self.arrivals_at(t + 1));
            next.sort_unstable();
            let mut v = -price * a as f64;
            for (k, &pk) in self.chain.transition[level].iter().enumerate() {
                if pk > 0.0 {
                    v += pk * self.go(t + 1, k, next.clone());
                }
            }
            best = best.max(v);
        }
        self.memo.insert(key, best);
        best
    }
}

/// The same dynamic program over the laxity-group simulator.
pub struct GroupDp<'a> {
    pub chain: &'a PriceChain,
    pub policy: Option<HashedPolicy>,
    memo: HashMap<(usize, usize, Vec<Vec<u32>>), f64>,
    start: AggSimulator<'a>,
}

impl<'a> GroupDp<'a> {
    pub fn new(config: &'a EpisodeConfig, chain: &'a PriceChain, max_laxity: usize, policy: Option<HashedPolicy>) -> Self {
        Self {
            chain,
            policy,
            memo: HashMap::new(),
            start: AggSimulator::new(config, max_laxity).unwrap(),
        }
    }

    pub fn value(&mut self) -> f64 {
        let sim = self.start.clone();
        self.go(0, sim)
    }

    fn go(&mut self, level: usize, sim: AggSimulator<'a>) -> f64 {
        if sim.is_done() {
            return 0.0;
        }
        let t = sim.t();
        let key = (t, level, sim.groups().to_vec());
        if let Some(&v) = self.memo.get(&key) {
            return v;
        }
        let price = self.chain.levels[level];
        let counts = sim.state().counts;
        let actions: Vec<usize> = match self.policy {
            Some(pi) => vec![pi.pick(t, level, &counts)],
            None => (counts[0] as usize..=counts.iter().sum::<u32>() as usize).collect(),
        };
        let mut best = f64::NEG_INFINITY;
        for a in actions {
            let mut next = sim.clone();
            next.step(a).unwrap();
            let mut v = -price * a as f64;
            for (k, &pk) in self.chain.transition[level].iter().enumerate() {
                if pk > 0.0 {
                    v += pk * self.go(k, next.clone());
                }
            }
            best = best.max(v);
        }
        self.memo.insert(key, best);
        best
    }
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-14 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Central finite-difference gradient.
pub fn finite_difference<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut up = x.to_vec();
            let mut down = x.to_vec();
            up[i] += h;
            down[i] -= h;
            (f(&up) - f(&down)) / (2.0 * h)
        })
        .collect()
}
