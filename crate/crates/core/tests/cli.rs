use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_signal-dojo"))
        .args(args)
        .output()
        .expect("spawn signal-dojo")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn run_five_seeds_csv() {
    let o = cli(&["run", "--scenario", "single-intersection", "--controller", "maxpressure", "--format", "csv"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().collect();
    // header, five seeds, mean, std
    assert_eq!(rows.len(), 8, "{text}");
    assert!(rows[0].starts_with("seed,"));
    for (i, r) in rows[1..6].iter().enumerate() {
        assert!(r.starts_with(&format!("{i},")), "{r}");
    }
    assert!(rows[6].starts_with("mean,"));
    assert!(rows[7].starts_with("std,"));
}

#[test]
fn run_toml_output_parses() {
    let o = cli(&["run", "--controller", "fixed", "--seeds", "3,4", "--format", "toml"]);
    assert_eq!(o.status.code(), Some(0));
    let doc: toml::Value = toml::from_str(&stdout(&o)).expect("valid toml");
    assert!(doc.get("runs").and_then(|r| r.as_array()).is_some_and(|r| r.len() == 2), "{doc}");
}

#[test]
fn run_writes_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for out in [&a, &b] {
        let o = cli(&["run", "--controller", "sotl", "--seeds", "0,1", "--format", "csv", "--out", p(out)]);
        assert_eq!(o.status.code(), Some(0));
    }
    let (ta, tb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(!ta.is_empty());
    assert_eq!(ta, tb);
}

#[test]
fn usage_errors_exit_2() {
    for args in [
        vec!["run", "--controller", "magic"],
        vec!["compare", "--controller", "fixed"],
        vec!["run", "--format", "table"],
        vec!["run", "--obs", "sonar"],
        vec!["render", "--obs", "feature", "--out", "/tmp/unused-render"],
        vec!["frobnicate"],
    ] {
        let o = cli(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!o.stderr.is_empty());
    }
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t");
    let o = cli(&["train", "--scenario", "/no/such/scenario.toml", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("parse"), "{}", String::from_utf8_lossy(&o.stderr));

    let o = cli(&["run", "--controller", "rl"]);
    assert_eq!(o.status.code(), Some(1));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "this is = = not toml").unwrap();
    let o = cli(&["run", "--scenario", p(&bad)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn compare_keeps_given_order() {
    let o = cli(&["compare", "--controller", "sotl,fixed,maxpressure", "--seeds", "0,1"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let names: Vec<&str> = text
        .lines()
        .skip(1)
        .filter_map(|l| l.split_whitespace().next())
        .collect();
    assert_eq!(names, ["sotl", "fixed", "maxpressure"], "{text}");
    let header = text.lines().next().unwrap();
    for col in ["travel", "throughput", "queue", "delay", "waiting", "co2"] {
        assert!(header.to_lowercase().contains(col), "{header}");
    }
    assert!(text.contains('±'));
}

#[test]
fn train_zero_episodes_gives_empty_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nested/train");
    let o = cli(&["train", "--episodes", "0", "--seeds", "0", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let curve = std::fs::read_to_string(out.join("curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 1);
    let table = std::fs::read_to_string(out.join("qtable.txt")).unwrap();
    assert_eq!(table.lines().count(), 4);
    assert!(out.join("eval.csv").exists());
}

#[test]
fn train_then_run_greedy() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t");
    let o = cli(&["train", "--episodes", "3", "--seeds", "0", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("seed,"));
    let q = out.join("qtable.txt");
    let o = cli(&["run", "--controller", "rl", "--qtable", p(&q), "--seeds", "1", "--format", "csv"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn render_bev_and_views() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("does/not/exist");
    let o = cli(&["render", "--steps", "0,30", "--resolution", "256", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let first = image::open(out.join("step_0000.ppm")).unwrap().to_rgb8();
    assert_eq!(first.dimensions(), (256, 256));
    // vehicles live in the green channel; nothing has spawned before the first step
    assert!(first.pixels().all(|px| px[1] == 0));
    assert!(first.pixels().any(|px| px[0] > 0));
    let later = image::open(out.join("step_0030.ppm")).unwrap().to_rgb8();
    assert!(later.pixels().any(|px| px[1] > 0));

    let views = dir.path().join("views");
    let o = cli(&["render", "--obs", "multiview", "--steps", "10", "--out", p(&views)]);
    assert_eq!(o.status.code(), Some(0));
    for a in ["N", "E", "S", "W"] {
        let img = image::open(views.join(format!("step_0010_{a}.ppm"))).unwrap();
        assert_eq!((img.width(), img.height()), (64, 64));
    }
}

#[test]
fn trajectory_log_columns() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("traj.csv");
    let o = cli(&["run", "--controller", "fixed", "--seeds", "0", "--format", "csv", "--trajectory-log", p(&log)]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(&log).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("seed,t,id,lane,position,speed,waiting_accum"));
    assert!(lines.count() > 100);
}
