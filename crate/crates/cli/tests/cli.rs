use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_randmedia"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const SPEED: &str = r#"
kind = "rwre_speed"
seed = 5
replicas = 8
steps = 100000

[environment]
driver = "iid"
laws = [{ offsets = [1, -1], probs = [0.6, 0.4] }]
"#;

fn report(out: &Path, stem: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join(format!("{stem}.json"))).unwrap()).unwrap()
}

#[test]
fn homogeneous_speed_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "speed.toml", SPEED);
    let o = run(&["run", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(dir.path(), "speed");
    assert_eq!(r["schema_version"], 1);
    assert_eq!(r["config"]["seed"], 5);
    let v = r["results"]["speeds"][0]["v"]["value"].as_f64().unwrap();
    assert!((v - 0.2).abs() < 0.01, "{v}");
    assert!(r["passed"].as_bool().unwrap());
    assert!(r["version"].as_str().unwrap().starts_with(env!("CARGO_PKG_VERSION")));
}

#[test]
fn reports_are_deterministic_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "speed.toml", SPEED);
    let strip = |mut v: Value| {
        v.as_object_mut().unwrap().remove("wall_clock_seconds");
        serde_json::to_string(&v).unwrap()
    };
    let mut outs = Vec::new();
    for threads in ["1", "4", "4"] {
        let o = run(&["run", &cfg, "--threads", threads]);
        assert!(o.status.success());
        outs.push(strip(serde_json::from_slice(&o.stdout).unwrap()));
    }
    assert_eq!(outs[0], outs[1]);
    assert_eq!(outs[1], outs[2]);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "speed.toml", SPEED);
    let a: Value = serde_json::from_slice(&run(&["run", &cfg, "--seed", "99"]).stdout).unwrap();
    assert_eq!(a["config"]["seed"], 99);
    let b: Value = serde_json::from_slice(&run(&["run", &cfg]).stdout).unwrap();
    assert_ne!(a["results"], b["results"]);
}

#[test]
fn driftless_billiard_sets_zero_speed_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "lln.toml",
        "kind = \"billiard_lln\"\nseed = 3\nreplicas = 4\nsteps = 20000\n\n[billiard]\nlambda = 0.0\n\n[tube]\ndriver = \"periodic\"\nradii = [1.0]\nr_min = 1.0\nm_hat = 1.0\n",
    );
    let o = run(&["run", &cfg]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["results"]["tubes"][0]["zero_speed"], true);
}

#[test]
fn diagnostic_failure_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let wrong = write(dir.path(), "wrong.toml", &format!("{SPEED}\n[expect]\nv = 0.5\n"));
    let o = run(&["run", &wrong]);
    assert_eq!(o.status.code(), Some(1));
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["passed"], false);
    let left = write(
        dir.path(),
        "left.toml",
        "kind = \"rwre_speed\"\nseed = 1\nsteps = 1000\nreplicas = 2\ncondition_d = true\nstep_cap = 10000\n\n[environment]\ndriver = \"iid\"\nlaws = [{ offsets = [1, -1], probs = [0.3, 0.7] }]\n",
    );
    let o = run(&["run", &left]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("FAIL condition D guard"));
}

#[test]
fn validate_names_offending_fields() {
    let dir = tempfile::tempdir().unwrap();
    let ok = write(dir.path(), "ok.toml", SPEED);
    let o = run(&["validate", &ok]);
    assert!(o.status.success());
    let no_seed = write(dir.path(), "noseed.toml", &SPEED.replace("seed = 5\n", ""));
    let o = run(&["validate", &no_seed]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed: missing"));
    let small = write(dir.path(), "rho.toml", &format!("rho = [1]\n{SPEED}"));
    let o = run(&["validate", &small]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("rho[0]"));
    let broken = write(dir.path(), "broken.toml", "kind = \"rwre_speed\"\nseed = [\n");
    let o = run(&["validate", &broken]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line"));
}

#[test]
fn suites_are_listed_stable_and_valid() {
    let first = run(&["suites"]);
    let second = run(&["suites"]);
    assert!(first.status.success());
    assert_eq!(first.stdout, second.stdout);
    let ids: Vec<String> =
        String::from_utf8(first.stdout).unwrap().lines().map(|l| l.split_whitespace().next().unwrap().to_string()).collect();
    assert!(ids.len() >= 10);
    let dir = tempfile::tempdir().unwrap();
    assert!(run(&["suites", "--dump", dir.path().to_str().unwrap()]).status.success());
    for id in &ids {
        let path = dir.path().join(format!("{id}.toml"));
        let o = run(&["validate", path.to_str().unwrap()]);
        assert!(o.status.success(), "{id}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn builtin_suite_runs_by_id() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["run", "suite:c09-cosine-sampler", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(dir.path(), "c09-cosine-sampler");
    assert!(r["passed"].as_bool().unwrap());
}

#[test]
fn series_are_written_next_to_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.toml", &format!("series = true\nrho = [4]\n{SPEED}"));
    let out = dir.path().join("out");
    assert!(run(&["run", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let csv = fs::read_to_string(out.join("s_walk_rho_4.csv")).unwrap();
    assert!(csv.lines().count() > 1000);
}
