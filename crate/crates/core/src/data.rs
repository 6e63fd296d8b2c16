//! Price and arrival files, and synthetic day generation.
//!
//! Price files are `timestamp,price` rows at a fixed resolution (hourly for
//! market data). Arrival files are `slot,demand,parking,category` rows.
//! Generated days use the same two formats.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, Triangular};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{ArrivalEvent, Category, EnvError, EpisodeConfig};
use crate::seed::stream_seed;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{path}: missing timestamp {timestamp}")]
    MissingTimestamp { path: PathBuf, timestamp: String },
    #[error("{path}: {got} slots of prices, need at least {need}")]
    TooShort { path: PathBuf, got: usize, need: usize },
    #[error("{path}: row {row}: {msg}")]
    Row { path: PathBuf, row: usize, msg: String },
    #[error("invalid profile: {0}")]
    Profile(String),
    #[error("{0}")]
    Config(String),
    #[error("no day files found in {0}")]
    EmptyDir(PathBuf),
    #[error(transparent)]
    Env(#[from] EnvError),
}

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    NaiveDateTime::parse_from_str(s, TIMESTAMP_FORMAT)
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M"))
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S"))
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M"))
        .ok()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resample {
    /// Each source value covers all slots of its interval.
    #[default]
    StepHold,
    /// Linear between consecutive source values; the last one is held.
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    pub slot_minutes: u32,
    pub values: Vec<f64>,
}

impl PriceSeries {
    /// `horizon + 1` prices for an episode: the first `horizon` slots plus
    /// a terminal price that repeats the last one.
    pub fn episode_prices(&self, horizon: usize) -> Vec<f64> {
        let mut v = self.values[..horizon].to_vec();
        v.push(*v.last().unwrap_or(&0.0));
        v
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn load_prices(path: &Path, slot_minutes: u32, horizon: usize, resample: Resample) -> Result<PriceSeries, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_prices(&text, path, slot_minutes, horizon, resample)
}

/// Parses a `timestamp,price` table and resamples it to `slot_minutes`.
pub fn parse_prices(
    text: &str,
    path: &Path,
    slot_minutes: u32,
    horizon: usize,
    resample: Resample,
) -> Result<PriceSeries, DataError> {
    let parse_err = |line: usize, msg: String| DataError::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if headers.len() < 2 || &headers[0] != "timestamp" || &headers[1] != "price" {
        return Err(parse_err(1, "expected header `timestamp,price`".into()));
    }
    let mut rows: Vec<(NaiveDateTime, f64)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let ts = parse_timestamp(rec.get(0).unwrap_or(""))
            .ok_or_else(|| parse_err(line, format!("bad timestamp `{}`", rec.get(0).unwrap_or(""))))?;
        let price: f64 = rec
            .get(1)
            .unwrap_or("")
            .parse()
            .map_err(|_| parse_err(line, format!("bad price `{}`", rec.get(1).unwrap_or(""))))?;
        if !price.is_finite() {
            return Err(parse_err(line, "price is not finite".into()));
        }
        rows.push((ts, price));
    }
    if rows.is_empty() {
        return Err(DataError::TooShort {
            path: path.to_path_buf(),
            got: 0,
            need: horizon,
        });
    }
    let step = if rows.len() > 1 {
        rows[1].0 - rows[0].0
    } else {
        Duration::hours(1)
    };
    if step <= Duration::zero() {
        return Err(parse_err(3, "timestamps must increase".into()));
    }
    for w in rows.windows(2) {
        let expected = w[0].0 + step;
        if w[1].0 != expected {
            return Err(DataError::MissingTimestamp {
                path: path.to_path_buf(),
                timestamp: expected.format(TIMESTAMP_FORMAT).to_string(),
            });
        }
    }
    let step_minutes = step.num_minutes();
    if slot_minutes == 0 || step_minutes % slot_minutes as i64 != 0 {
        return Err(DataError::Config(format!(
            "slot length {slot_minutes} min does not divide the price resolution of {step_minutes} min"
        )));
    }
    let factor = (step_minutes / slot_minutes as i64) as usize;
    let mut values = Vec::with_capacity(rows.len() * factor);
    for (i, &(_, p)) in rows.iter().enumerate() {
        let next = rows.get(i + 1).map_or(p, |r| r.1);
        for k in 0..factor {
            values.push(match resample {
                Resample::StepHold => p,
                Resample::Linear => p + (next - p) * k as f64 / factor as f64,
            });
        }
    }
    if values.len() < horizon {
        return Err(DataError::TooShort {
            path: path.to_path_buf(),
            got: values.len(),
            need: horizon,
        });
    }
    values.truncate(horizon);
    Ok(PriceSeries { slot_minutes, values })
}

pub fn load_arrivals(path: &Path) -> Result<Vec<ArrivalEvent>, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_arrivals(&text, path)
}

/// Parses a `slot,demand,parking,category` table. Rows are numbered from 1,
/// not counting the header.
pub fn parse_arrivals(text: &str, path: &Path) -> Result<Vec<ArrivalEvent>, DataError> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let row_err = |row: usize, msg: String| DataError::Row {
        path: path.to_path_buf(),
        row,
        msg,
    };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| row_err(0, e.to_string()))?.clone();
    let expected = ["slot", "demand", "parking", "category"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(row_err(0, "expected header `slot,demand,parking,category`".into()));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| row_err(row, e.to_string()))?;
        let field = |k: usize| rec.get(k).unwrap_or("");
        let num = |k: usize| -> Result<u64, DataError> {
            field(k)
                .parse::<u64>()
                .map_err(|_| row_err(row, format!("bad {} `{}`", expected[k], field(k))))
        };
        let t = num(0)? as usize;
        let demand = num(1)? as u32;
        let parking = num(2)? as u32;
        let category: Category = field(3).parse().map_err(|e: String| row_err(row, e))?;
        if demand == 0 || parking == 0 {
            return Err(row_err(row, "demand and parking must be positive".into()));
        }
        if demand > parking {
            return Err(row_err(row, format!("demand {demand} exceeds parking {parking}")));
        }
        out.push(ArrivalEvent::new(t, demand, parking, category));
    }
    Ok(out)
}

pub fn write_arrivals(path: &Path, arrivals: &[ArrivalEvent]) -> Result<(), DataError> {
    let mut s = String::from("slot,demand,parking,category\n");
    for a in arrivals {
        s.push_str(&format!("{},{},{},{}\n", a.t, a.demand, a.parking, a.category.as_str()));
    }
    fs::write(path, s).map_err(io_err(path))
}

pub fn write_prices(path: &Path, start: NaiveDateTime, step: Duration, prices: &[f64]) -> Result<(), DataError> {
    let mut s = String::from("timestamp,price\n");
    for (i, p) in prices.iter().enumerate() {
        let ts = start + step * i as i32;
        s.push_str(&format!("{},{}\n", ts.format(TIMESTAMP_FORMAT), p));
    }
    fs::write(path, s).map_err(io_err(path))
}

/// Integer triangular distribution on `[min, max]` peaking at `mode`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntTriangular {
    pub min: u32,
    pub max: u32,
    pub mode: u32,
}

impl IntTriangular {
    pub fn point(v: u32) -> Self {
        Self { min: v, max: v, mode: v }
    }

    fn validate(&self, what: &str) -> Result<(), DataError> {
        if !(self.min <= self.mode && self.mode <= self.max) {
            return Err(DataError::Profile(format!("{what}: need min <= mode <= max")));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        if self.min == self.max {
            return self.min;
        }
        let lo = self.min as f64 - 0.5;
        let hi = self.max as f64 + 0.5;
        let tri = Triangular::new(lo, hi, self.mode as f64).expect("validated triangular parameters");
        (tri.sample(rng).round() as i64).clamp(self.min as i64, self.max as i64) as u32
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryProfile {
    pub category: Category,
    /// Expected arrivals in each hour of the day.
    pub hourly_rates: Vec<f64>,
    pub demand: IntTriangular,
    pub parking: IntTriangular,
}

impl CategoryProfile {
    pub fn validate(&self) -> Result<(), DataError> {
        let name = self.category.as_str();
        if self.hourly_rates.len() != 24 {
            return Err(DataError::Profile(format!(
                "{name}: hourly_rates needs 24 entries, got {}",
                self.hourly_rates.len()
            )));
        }
        if self.hourly_rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(DataError::Profile(format!("{name}: hourly_rates must be finite and non-negative")));
        }
        self.demand.validate(&format!("{name}.demand"))?;
        self.parking.validate(&format!("{name}.parking"))?;
        if self.demand.min == 0 {
            return Err(DataError::Profile(format!("{name}.demand: min must be at least 1")));
        }
        let d = &self.demand;
        let p = &self.parking;
        if d.min > p.min || d.mode > p.mode || d.max > p.max {
            return Err(DataError::Profile(format!("{name}: demand support must not exceed parking support")));
        }
        Ok(())
    }
}

/// Synthetic hourly price shape: base level, a morning shoulder and an
/// afternoon peak, AR(1) noise and occasional spikes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriceProfile {
    pub base: f64,
    pub morning: f64,
    pub peak: f64,
    pub noise: f64,
    pub persistence: f64,
    pub spike_probability: f64,
    pub spike: f64,
    pub floor: f64,
}

impl Default for PriceProfile {
    fn default() -> Self {
        Self {
            base: 22.0,
            morning: 8.0,
            peak: 45.0,
            noise: 4.0,
            persistence: 0.6,
            spike_probability: 0.04,
            spike: 60.0,
            floor: 1.0,
        }
    }
}

/// 24 hourly prices.
pub fn gen_prices(profile: &PriceProfile, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, profile.noise.max(0.0)).expect("finite noise");
    let mut ar = 0.0;
    (0..24)
        .map(|h| {
            let hf = h as f64;
            let morning = profile.morning * (-(hf - 8.0).powi(2) / 4.0).exp();
            let peak = profile.peak * (-(hf - 17.0).powi(2) / 6.0).exp();
            ar = profile.persistence * ar + noise.sample(&mut rng);
            let spike = if rng.random::<f64>() < profile.spike_probability {
                profile.spike * rng.random::<f64>()
            } else {
                0.0
            };
            ((profile.base + morning + peak + ar + spike).max(profile.floor) * 100.0).round() / 100.0
        })
        .collect()
}

/// Draws one day of arrivals: a Poisson count per hour and category,
/// uniform slots within the hour, and `(demand, parking)` from the
/// triangular laws, redrawn until the laxity lies in `[0, max_laxity]`.
/// Parking is cut at the horizon, and demand with it.
pub fn gen_day(
    profiles: &[CategoryProfile],
    horizon: usize,
    slots_per_hour: usize,
    max_laxity: u32,
    seed: u64,
) -> Result<Vec<ArrivalEvent>, DataError> {
    for p in profiles {
        p.validate()?;
    }
    if slots_per_hour == 0 {
        return Err(DataError::Config("slots_per_hour must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for h in 0..24 {
        let first = h * slots_per_hour;
        if first >= horizon {
            break;
        }
        let last = (first + slots_per_hour).min(horizon);
        for p in profiles {
            let rate = p.hourly_rates[h];
            let n = if rate > 0.0 {
                Poisson::new(rate).expect("positive rate").sample(&mut rng) as usize
            } else {
                0
            };
            for _ in 0..n {
                let t = rng.random_range(first..last);
                let (demand, parking) = loop {
                    let d = p.demand.sample(&mut rng);
                    let q = p.parking.sample(&mut rng);
                    if d <= q && q - d <= max_laxity {
                        break (d, q);
                    }
                };
                let parking = parking.min((horizon - t) as u32);
                let demand = demand.min(parking);
                out.push(ArrivalEvent::new(t, demand, parking, p.category));
            }
        }
    }
    out.sort_by_key(|a| a.t);
    Ok(out)
}

fn rates(pairs: &[(usize, usize, f64)], background: f64) -> Vec<f64> {
    let mut r = vec![background; 24];
    for &(from, to, v) in pairs {
        for x in &mut r[from..to] {
            *x = v;
        }
    }
    r
}

/// Built-in category profiles: emergent arrivals concentrated around
/// midday, normal ones over the working day, residential ones in the
/// evening.
pub fn default_profiles() -> Vec<CategoryProfile> {
    vec![
        CategoryProfile {
            category: Category::Emergent,
            hourly_rates: rates(&[(10, 15, 1.5), (7, 10, 0.8), (15, 18, 0.8)], 0.2),
            demand: IntTriangular { min: 1, max: 4, mode: 2 },
            parking: IntTriangular { min: 1, max: 8, mode: 3 },
        },
        CategoryProfile {
            category: Category::Normal,
            hourly_rates: rates(&[(7, 11, 1.8), (11, 17, 1.2)], 0.2),
            demand: IntTriangular { min: 2, max: 8, mode: 4 },
            parking: IntTriangular { min: 3, max: 18, mode: 9 },
        },
        CategoryProfile {
            category: Category::Residential,
            hourly_rates: rates(&[(17, 22, 2.0), (14, 17, 0.8)], 0.1),
            demand: IntTriangular { min: 4, max: 12, mode: 6 },
            parking: IntTriangular { min: 6, max: 22, mode: 14 },
        },
    ]
}

/// Everything `generate` needs to write a set of days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub version: u32,
    pub days: usize,
    pub horizon: usize,
    pub slot_minutes: u32,
    pub max_laxity: u32,
    pub start_date: NaiveDate,
    pub price: PriceProfile,
    #[serde(rename = "category")]
    pub categories: Vec<CategoryProfile>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            version: 1,
            days: 20,
            horizon: 96,
            slot_minutes: 15,
            max_laxity: 12,
            start_date: NaiveDate::from_ymd_opt(2023, 7, 3).expect("valid date"),
            price: PriceProfile::default(),
            categories: default_profiles(),
        }
    }
}

impl GeneratorConfig {
    pub fn from_toml(text: &str) -> Result<Self, DataError> {
        let cfg: Self = toml::from_str(text).map_err(|e| DataError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.slot_minutes == 0 || 60 % self.slot_minutes != 0 {
            return Err(DataError::Config("slot_minutes must divide 60".into()));
        }
        let slots_per_day = 24 * 60 / self.slot_minutes as usize;
        if self.horizon == 0 || self.horizon > slots_per_day {
            return Err(DataError::Config(format!("horizon must lie in [1, {slots_per_day}]")));
        }
        for c in &self.categories {
            c.validate()?;
        }
        Ok(())
    }

    pub fn slots_per_hour(&self) -> usize {
        60 / self.slot_minutes as usize
    }
}

/// Paths of one day's file pair inside a data directory.
pub fn day_paths(dir: &Path, index: usize) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("day_{index:03}.prices.csv")),
        dir.join(format!("day_{index:03}.arrivals.csv")),
    )
}

/// Writes `config.days` generated days and returns their file pairs.
pub fn write_days(config: &GeneratorConfig, seed: u64, dir: &Path) -> Result<Vec<(PathBuf, PathBuf)>, DataError> {
    config.validate()?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::with_capacity(config.days);
    for d in 0..config.days {
        let prices = gen_prices(&config.price, stream_seed(seed, d as u64, 2));
        let arrivals = gen_day(
            &config.categories,
            config.horizon,
            config.slots_per_hour(),
            config.max_laxity,
            stream_seed(seed, d as u64, 1),
        )?;
        let (pp, ap) = day_paths(dir, d);
        let start = config.start_date.and_hms_opt(0, 0, 0).expect("midnight") + Duration::days(d as i64);
        write_prices(&pp, start, Duration::hours(1), &prices)?;
        write_arrivals(&ap, &arrivals)?;
        written.push((pp, ap));
    }
    Ok(written)
}

/// Settings for turning a file pair into an episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DaySpec {
    pub horizon: usize,
    pub slot_minutes: u32,
    pub max_laxity: u32,
    pub discount: f64,
    pub resample: Resample,
}

impl Default for DaySpec {
    fn default() -> Self {
        Self {
            horizon: 96,
            slot_minutes: 15,
            max_laxity: 12,
            discount: 1.0,
            resample: Resample::StepHold,
        }
    }
}

pub fn load_day(prices: &Path, arrivals: &Path, spec: &DaySpec) -> Result<EpisodeConfig, DataError> {
    let series = load_prices(prices, spec.slot_minutes, spec.horizon, spec.resample)?;
    let events = load_arrivals(arrivals)?;
    for (i, a) in events.iter().enumerate() {
        if a.t >= spec.horizon {
            return Err(DataError::Row {
                path: arrivals.to_path_buf(),
                row: i + 1,
                msg: format!("slot {} is outside [0, {})", a.t, spec.horizon),
            });
        }
        if a.parking - a.demand > spec.max_laxity {
            return Err(DataError::Row {
                path: arrivals.to_path_buf(),
                row: i + 1,
                msg: format!("laxity {} exceeds {}", a.parking - a.demand, spec.max_laxity),
            });
        }
    }
    Ok(EpisodeConfig::new(
        spec.horizon,
        spec.discount,
        series.episode_prices(spec.horizon),
        events,
    )?)
}

/// Loads every `day_NNN` pair in `dir`, sorted by name.
pub fn load_dir(dir: &Path, spec: &DaySpec) -> Result<Vec<(String, EpisodeConfig)>, DataError> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter_map(|n| n.strip_suffix(".prices.csv").map(str::to_string))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(DataError::EmptyDir(dir.to_path_buf()));
    }
    names
        .into_iter()
        .map(|name| {
            let prices = dir.join(format!("{name}.prices.csv"));
            let arrivals = dir.join(format!("{name}.arrivals.csv"));
            load_day(&prices, &arrivals, spec).map(|d| (name, d))
        })
        .collect()
}
