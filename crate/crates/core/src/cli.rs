//! Command-line front end: `generate`, `train`, `eval`, `compare`.
//!
//! Exit codes: 0 on success, 1 for usage and configuration errors, 2 for
//! unreadable or invalid data, 3 for numerical failures during training.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baseline::{qe_train, QeConfig, QeError, QeModel};
use crate::data::{load_dir, write_days, DaySpec, GeneratorConfig, Resample};
use crate::env::EpisodeConfig;
use crate::eval::{evaluate_day, improvement_pct, DayResult, GreedyQe, MeanPolicy, TotalPolicy};
use crate::policy::{train, FeatureMap, PgModel, PolicyError, PolicyParams, TrainConfig};
use crate::Error;

#[derive(Debug, Parser)]
#[command(name = "evcs", version, about = "EV charging-station scheduling: data, training and evaluation")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Algo {
    Pg,
    Qe,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic days (price and arrival CSVs).
    Generate {
        #[arg(long, env = "EVCS_OUT")]
        out: PathBuf,
        /// Number of days; overrides the configuration.
        #[arg(long)]
        days: Option<usize>,
    },
    /// Train a policy on a directory of days.
    Train {
        #[arg(long, value_enum, default_value = "pg")]
        algo: Algo,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, env = "EVCS_OUT")]
        out: PathBuf,
        /// Iterations (pg) or episodes (qe).
        #[arg(long)]
        iterations: Option<usize>,
        /// Step size.
        #[arg(long)]
        alpha: Option<f64>,
        /// Initial exploration std-dev (pg).
        #[arg(long)]
        sigma: Option<f64>,
        /// Pool laxity levels at or above this value (pg).
        #[arg(long)]
        lmax: Option<usize>,
    },
    /// Evaluate a trained model deterministically on every day.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, env = "EVCS_OUT")]
        out: Option<PathBuf>,
    },
    /// Compare two models on the same days, or two earlier `eval` outputs.
    Compare {
        /// Model file or `eval.csv`.
        a: PathBuf,
        /// Model file or `eval.csv`.
        b: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, env = "EVCS_OUT")]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub horizon: usize,
    pub slot_minutes: u32,
    pub max_laxity: u32,
    pub discount: f64,
    pub resample: Resample,
}

impl Default for DataSection {
    fn default() -> Self {
        let d = DaySpec::default();
        Self {
            horizon: d.horizon,
            slot_minutes: d.slot_minutes,
            max_laxity: d.max_laxity,
            discount: d.discount,
            resample: d.resample,
        }
    }
}

impl DataSection {
    pub fn spec(&self) -> DaySpec {
        DaySpec {
            horizon: self.horizon,
            slot_minutes: self.slot_minutes,
            max_laxity: self.max_laxity,
            discount: self.discount,
            resample: self.resample,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSection {
    pub l_max: Option<usize>,
    /// Standardize features with statistics of two reference controllers.
    pub standardize: bool,
}

impl Default for FeatureSection {
    fn default() -> Self {
        Self {
            l_max: None,
            standardize: true,
        }
    }
}

/// Contents of the `--config` file. Every section is optional.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub features: FeatureSection,
    pub pg: TrainConfig,
    pub qe: QeConfig,
    pub generate: GeneratorConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the effective configuration.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Policy(PolicyError::Diverged { .. } | PolicyError::NonFinite(_)) => CliError::Numerical(msg),
            Error::Qe(QeError::Diverged { .. }) => CliError::Numerical(msg),
            Error::Policy(PolicyError::Config(_)) | Error::Qe(QeError::Config(_)) => CliError::Usage(msg),
            _ => CliError::Data(msg),
        }
    }
}

fn io<T>(path: &Path, r: std::io::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        io(dir, fs::create_dir_all(dir))?;
    }
    io(path, fs::write(path, contents))
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig, CliError> {
    let mut cfg = match path {
        Some(p) => {
            let text = io(p, fs::read_to_string(p))?;
            RunConfig::from_toml(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.pg.seed = s;
        cfg.qe.seed = s;
    }
    cfg.qe.max_laxity = cfg.data.max_laxity as usize;
    Ok(cfg)
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(report) => {
            print!("{report}");
            0
        }
        Err(e) => {
            eprintln!("evcs: {e}");
            e.code()
        }
    }
}

/// Runs a parsed command and returns the text it would print.
pub fn run(cli: Cli) -> Result<String, CliError> {
    let cfg = load_config(cli.config.as_deref(), cli.seed)?;
    match cli.command {
        Command::Generate { out, days } => generate(cfg, cli.seed.unwrap_or(0), &out, days),
        Command::Train {
            algo,
            data,
            out,
            iterations,
            alpha,
            sigma,
            lmax,
        } => {
            let mut cfg = cfg;
            match algo {
                Algo::Pg => {
                    if let Some(n) = iterations {
                        cfg.pg.iterations = n;
                    }
                    if let Some(a) = alpha {
                        cfg.pg.step_size = a;
                    }
                    if let Some(s) = sigma {
                        cfg.pg.sigma.initial = s;
                        cfg.pg.sigma.floor = cfg.pg.sigma.floor.min(s);
                    }
                    if let Some(l) = lmax {
                        cfg.features.l_max = Some(l);
                    }
                    train_pg(&cfg, &data, &out)
                }
                Algo::Qe => {
                    if let Some(n) = iterations {
                        cfg.qe.episodes = n;
                    }
                    if let Some(a) = alpha {
                        cfg.qe.step_size = a;
                    }
                    if sigma.is_some() || lmax.is_some() {
                        return Err(CliError::Usage("--sigma and --lmax apply to --algo pg only".into()));
                    }
                    train_qe(&cfg, &data, &out)
                }
            }
        }
        Command::Eval { model, data, out } => eval(&cfg, &model, &data, out.as_deref()),
        Command::Compare { a, b, data, out } => compare(&cfg, &a, &b, data.as_deref(), out.as_deref()),
    }
}

fn generate(cfg: RunConfig, seed: u64, out: &Path, days: Option<usize>) -> Result<String, CliError> {
    let mut gen = cfg.generate;
    if let Some(d) = days {
        gen.days = d;
    }
    gen.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let files = write_days(&gen, seed, out).map_err(|e| CliError::from(Error::from(e)))?;
    if !files.is_empty() {
        write_file(&out.join("generator.toml"), &gen.to_toml())?;
    }
    Ok(format!("wrote {} days to {}\n", files.len(), out.display()))
}

fn load_days(cfg: &RunConfig, dir: &Path) -> Result<Vec<(String, EpisodeConfig)>, CliError> {
    load_dir(dir, &cfg.data.spec()).map_err(|e| CliError::Data(e.to_string()))
}

fn train_pg(cfg: &RunConfig, data: &Path, out: &Path) -> Result<String, CliError> {
    let days = load_days(cfg, data)?;
    let configs: Vec<EpisodeConfig> = days.into_iter().map(|(_, d)| d).collect();
    let max_laxity = cfg.data.max_laxity as usize;
    let features = if cfg.features.standardize {
        FeatureMap::fit(&configs, max_laxity, cfg.features.l_max).map_err(Error::from)?
    } else {
        FeatureMap::identity(max_laxity, cfg.features.l_max)
    };
    let init = PolicyParams::zeros(features.dim(), cfg.pg.sigma.initial);
    let outcome = train(&configs, init, &cfg.pg, &features).map_err(Error::from)?;

    let model = PgModel::new(&outcome.params, &features, cfg.hash());
    write_file(&out.join("model.json"), &model.to_json())?;

    let dim = features.dim();
    let mut csv = String::from("iteration,mean_reward,sigma,change");
    for j in 0..dim {
        let _ = write!(csv, ",w{j}");
    }
    csv.push_str(",b\n");
    for r in &outcome.curve {
        let _ = write!(csv, "{},{},{},{}", r.iteration, r.mean_reward, r.sigma, r.change);
        for v in &r.params {
            let _ = write!(csv, ",{v}");
        }
        csv.push('\n');
    }
    write_file(&out.join("curve.csv"), &csv)?;
    write_file(&out.join("config.toml"), &cfg.to_toml())?;

    let last = outcome.curve.last().map_or(f64::NAN, |r| r.mean_reward);
    Ok(format!(
        "trained pg on {} days: {} iterations, converged={}, final batch reward {:.3}\nmodel written to {}\n",
        configs.len(),
        outcome.curve.len(),
        outcome.converged,
        last,
        out.join("model.json").display()
    ))
}

fn train_qe(cfg: &RunConfig, data: &Path, out: &Path) -> Result<String, CliError> {
    let days = load_days(cfg, data)?;
    let configs: Vec<EpisodeConfig> = days.into_iter().map(|(_, d)| d).collect();
    let outcome = qe_train(&configs, &cfg.qe).map_err(Error::from)?;
    let model = QeModel::new(outcome.theta, &cfg.qe, cfg.hash());
    write_file(&out.join("model.json"), &model.to_json())?;

    let mut csv = String::from("episode,reward,epsilon,theta0,theta1,theta2,theta3\n");
    for r in &outcome.curve {
        let _ = write!(csv, "{},{},{}", r.episode, r.reward, r.epsilon);
        for v in &r.theta {
            let _ = write!(csv, ",{v}");
        }
        csv.push('\n');
    }
    write_file(&out.join("curve.csv"), &csv)?;
    write_file(&out.join("config.toml"), &cfg.to_toml())?;
    Ok(format!(
        "trained qe on {} days: {} episodes, theta {:?}\nmodel written to {}\n",
        configs.len(),
        outcome.curve.len(),
        outcome.theta,
        out.join("model.json").display()
    ))
}

/// A policy read from a model file of either kind.
pub enum LoadedModel {
    Pg(PgModel),
    Qe(QeModel),
}

impl LoadedModel {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = io(path, fs::read_to_string(path))?;
        let kind = serde_json::from_str::<serde_json::Value>(&text)
            .ok()
            .and_then(|v| v.get("kind").and_then(|k| k.as_str()).map(str::to_string));
        let bad = |e: String| CliError::Data(format!("{}: {e}", path.display()));
        match kind.as_deref() {
            Some(PgModel::KIND) => PgModel::from_json(&text).map(LoadedModel::Pg).map_err(bad),
            Some(QeModel::KIND) => QeModel::from_json(&text).map(LoadedModel::Qe).map_err(bad),
            _ => Err(bad("not a model file".into())),
        }
    }

    pub fn policy(&self) -> Box<dyn TotalPolicy> {
        match self {
            LoadedModel::Pg(m) => Box::new(MeanPolicy::from(m)),
            LoadedModel::Qe(m) => Box::new(GreedyQe(m.clone())),
        }
    }
}

fn evaluate_all(model: &LoadedModel, days: &[(String, EpisodeConfig)]) -> Result<Vec<DayResult>, CliError> {
    let mut policy = model.policy();
    days.iter()
        .map(|(_, d)| evaluate_day(d, policy.as_mut()).map_err(CliError::from))
        .collect()
}

fn eval_csv(days: &[(String, EpisodeConfig)], results: &[DayResult]) -> String {
    let mut s = String::from("day,reward,uncharged\n");
    for ((name, _), r) in days.iter().zip(results) {
        let _ = writeln!(s, "{name},{},{}", r.reward, r.uncharged);
    }
    s
}

fn eval(cfg: &RunConfig, model: &Path, data: &Path, out: Option<&Path>) -> Result<String, CliError> {
    let model = LoadedModel::load(model)?;
    let days = load_days(cfg, data)?;
    let results = evaluate_all(&model, &days)?;
    let mut report = eval_csv(&days, &results);
    let mean = results.iter().map(|r| r.reward).sum::<f64>() / results.len() as f64;
    let _ = writeln!(report, "average,{mean},");
    if let Some(out) = out {
        write_file(&out.join("eval.csv"), &eval_csv(&days, &results))?;
        let mut slots = String::from("day,slot,price,total\n");
        for ((name, _), r) in days.iter().zip(&results) {
            for (t, (p, a)) in r.prices.iter().zip(&r.totals).enumerate() {
                let _ = writeln!(slots, "{name},{t},{p},{a}");
            }
        }
        write_file(&out.join("slots.csv"), &slots)?;
    }
    Ok(report)
}

fn read_eval_csv(path: &Path) -> Result<BTreeMap<String, f64>, CliError> {
    let text = io(path, fs::read_to_string(path))?;
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let bad = |m: String| CliError::Data(format!("{}: {m}", path.display()));
    let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    if headers.get(0) != Some("day") || headers.get(1) != Some("reward") {
        return Err(bad("expected an eval.csv with `day,reward` columns".into()));
    }
    let mut out = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let day = rec.get(0).unwrap_or("").to_string();
        let reward: f64 = rec
            .get(1)
            .unwrap_or("")
            .parse()
            .map_err(|_| bad(format!("row {}: bad reward", i + 1)))?;
        out.insert(day, reward);
    }
    Ok(out)
}

fn is_csv(p: &Path) -> bool {
    p.extension().is_some_and(|e| e == "csv")
}

fn compare(cfg: &RunConfig, a: &Path, b: &Path, data: Option<&Path>, out: Option<&Path>) -> Result<String, CliError> {
    let (ra, rb, slots) = if is_csv(a) && is_csv(b) {
        let ra = read_eval_csv(a)?;
        let rb = read_eval_csv(b)?;
        if ra.keys().ne(rb.keys()) {
            return Err(CliError::Data("the two evaluations cover different days".into()));
        }
        (ra, rb, None)
    } else if !is_csv(a) && !is_csv(b) {
        let data = data.ok_or_else(|| CliError::Usage("comparing models needs --data".into()))?;
        let days = load_days(cfg, data)?;
        let res_a = evaluate_all(&LoadedModel::load(a)?, &days)?;
        let res_b = evaluate_all(&LoadedModel::load(b)?, &days)?;
        let mut slots = String::from("day,slot,price,total_a,total_b\n");
        for ((name, _), (x, y)) in days.iter().zip(res_a.iter().zip(&res_b)) {
            for t in 0..x.totals.len() {
                let _ = writeln!(slots, "{name},{t},{},{},{}", x.prices[t], x.totals[t], y.totals[t]);
            }
        }
        let collect = |rs: &[DayResult]| -> BTreeMap<String, f64> {
            days.iter().zip(rs).map(|((n, _), r)| (n.clone(), r.reward)).collect()
        };
        (collect(&res_a), collect(&res_b), Some(slots))
    } else {
        return Err(CliError::Usage("pass two model files or two eval.csv files".into()));
    };

    let mut table = String::from("day,reward_a,reward_b,improvement_pct\n");
    let mut sum_a = 0.0;
    let mut sum_b = 0.0;
    for (day, x) in &ra {
        let y = rb[day];
        sum_a += x;
        sum_b += y;
        let _ = writeln!(table, "{day},{x},{y},{:.3}", improvement_pct(*x, y));
    }
    let n = ra.len().max(1) as f64;
    let (avg_a, avg_b) = (sum_a / n, sum_b / n);
    let _ = writeln!(table, "average,{avg_a},{avg_b},{:.3}", improvement_pct(avg_a, avg_b));
    if let Some(out) = out {
        write_file(&out.join("compare.csv"), &table)?;
        if let Some(s) = &slots {
            write_file(&out.join("compare_slots.csv"), s)?;
        }
    }
    Ok(table)
}
