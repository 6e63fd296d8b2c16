use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn evcs(args: &[&str]) -> Output {
    evcs_env(args, &[])
}

fn evcs_env(args: &[&str], env: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_evcs"));
    cmd.args(args).env_remove("EVCS_OUT");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn day_files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.starts_with("day_"))
        .collect();
    names.sort();
    names
}

/// One generated day plus a fast training configuration.
fn toy_setup(tmp: &TempDir) -> (std::path::PathBuf, std::path::PathBuf) {
    let data = tmp.path().join("data");
    let out = evcs(&["generate", "--out", s(&data), "--days", "1", "--seed", "3"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let cfg = tmp.path().join("run.toml");
    fs::write(&cfg, "[pg]\nbatch = 1\nrepeats = 4\n\n[qe]\nepisodes = 5\n").unwrap();
    (data, cfg)
}

#[test]
fn generate_writes_one_pair_per_day() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("days");
    let out = evcs(&["generate", "--out", s(&dir), "--days", "20"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let names = day_files(&dir);
    assert_eq!(names.len(), 40);
    for i in 0..20 {
        assert!(names.contains(&format!("day_{i:03}.prices.csv")));
        assert!(names.contains(&format!("day_{i:03}.arrivals.csv")));
    }
    assert!(dir.join("generator.toml").exists());
}

#[test]
fn generate_zero_days_writes_nothing() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("days");
    let out = evcs(&["generate", "--out", s(&dir), "--days", "0"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(!dir.exists() || fs::read_dir(&dir).unwrap().next().is_none());
}

#[test]
fn generate_is_seeded() {
    let tmp = TempDir::new().unwrap();
    let read = |d: &Path| fs::read(d.join("day_001.arrivals.csv")).unwrap();
    let run = |name: &str, seed: &str| {
        let d = tmp.path().join(name);
        assert_eq!(code(&evcs(&["generate", "--out", s(&d), "--days", "2", "--seed", seed])), 0);
        d
    };
    let a = run("a", "5");
    let b = run("b", "5");
    let c = run("c", "6");
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn missing_profile_field_is_named() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("bad.toml");
    let rates = vec!["1.0"; 24].join(", ");
    fs::write(
        &cfg,
        format!(
            "[[generate.category]]\ncategory = \"normal\"\nhourly_rates = [{rates}]\n\
             demand = {{ min = 1, max = 3, mode = 2 }}\n"
        ),
    )
    .unwrap();
    let out = evcs(&["--config", s(&cfg), "generate", "--out", s(&tmp.path().join("d"))]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("parking"), "{}", stderr(&out));
}

#[test]
fn train_eval_compare_round_trip() {
    let tmp = TempDir::new().unwrap();
    let (data, cfg) = toy_setup(&tmp);
    let model_dir = tmp.path().join("pg");
    let out = evcs(&[
        "--config", s(&cfg), "train", "--data", s(&data), "--out", s(&model_dir), "--iterations", "5",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let model = model_dir.join("model.json");
    assert!(model.exists());
    let curve = fs::read_to_string(model_dir.join("curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 1 + 5);
    assert!(model_dir.join("config.toml").exists());

    let eval = |dir: Option<&Path>| {
        let mut args = vec!["eval", "--model", s(&model), "--data", s(&data)];
        if let Some(d) = dir {
            args.extend(["--out", s(d)]);
        }
        let out = evcs(&args);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        stdout(&out)
    };
    let first = eval(None);
    let lines: Vec<&str> = first.lines().collect();
    assert_eq!(lines[0], "day,reward,uncharged");
    assert!(lines[1].starts_with("day_000,"));
    assert!(lines.last().unwrap().starts_with("average,"));
    assert_eq!(lines.len(), 3);
    let eval_dir = tmp.path().join("eval");
    assert_eq!(eval(Some(&eval_dir)), first);
    assert!(eval_dir.join("slots.csv").exists());

    let csv = eval_dir.join("eval.csv");
    let out = evcs(&["compare", s(&csv), s(&csv)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let table = stdout(&out);
    for line in table.lines().skip(1) {
        assert!(line.ends_with(",0.000"), "{line}");
    }

    let out = evcs(&["compare", s(&model), s(&model), "--data", s(&data)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(stdout(&out), table);
}

#[test]
fn qe_training_writes_model() {
    let tmp = TempDir::new().unwrap();
    let (data, cfg) = toy_setup(&tmp);
    let dir = tmp.path().join("qe");
    let out = evcs(&["--config", s(&cfg), "train", "--algo", "qe", "--data", s(&data), "--out", s(&dir)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let curve = fs::read_to_string(dir.join("curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 1 + 5);
    let model = dir.join("model.json");
    let out = evcs(&["eval", "--model", s(&model), "--data", s(&data)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn output_directory_from_environment() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("from_env");
    let out = evcs_env(&["generate", "--days", "1"], &[("EVCS_OUT", &dir)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(day_files(&dir).len(), 2);
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&evcs(&["frobnicate"])), 1);
    assert_eq!(code(&evcs(&["train", "--algo", "sarsa", "--data", "x", "--out", "y"])), 1);
    assert_eq!(code(&evcs(&["--help"])), 0);

    let missing = tmp.path().join("nowhere");
    let out = evcs(&["train", "--data", s(&missing), "--out", s(&tmp.path().join("m"))]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));

    let broken = tmp.path().join("broken");
    fs::create_dir(&broken).unwrap();
    fs::write(broken.join("day_000.prices.csv"), "timestamp,price\n2023-07-03T00:00:00,abc\n").unwrap();
    fs::write(broken.join("day_000.arrivals.csv"), "slot,demand,parking,category\n").unwrap();
    let out = evcs(&["train", "--data", s(&broken), "--out", s(&tmp.path().join("m"))]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));

    let (data, _) = toy_setup(&tmp);
    let cfg = tmp.path().join("diverge.toml");
    fs::write(&cfg, "[pg]\nbatch = 1\nrepeats = 2\ndivergence_bound = 1e-9\n").unwrap();
    let out = evcs(&[
        "--config", s(&cfg), "train", "--data", s(&data), "--out", s(&tmp.path().join("m")), "--iterations", "3",
        "--alpha", "1.0",
    ]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}
