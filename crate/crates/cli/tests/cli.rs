use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn retf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_retf")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// The scaled config with `edits` applied as `(old line, new line)` pairs.
fn variant(dir: &Path, edits: &[(&str, &str)]) -> String {
    let mut text = std::fs::read_to_string(shipped("scaled.toml")).unwrap();
    for (old, new) in edits {
        assert!(text.contains(old), "missing `{old}`");
        text = text.replace(old, new);
    }
    let path = dir.join("scenario.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

fn small(dir: &Path, sus: usize) -> String {
    variant(
        dir,
        &[
            ("road_length = 400.0", "road_length = 120.0"),
            ("time_step = 0.001", "time_step = 0.005"),
            ("count = 70", "count = 10"),
            ("count = 20", &format!("count = {sus}")),
            ("capacity_mode = \"csi\"", "capacity_mode = \"geometry\""),
        ],
    )
}

fn field(out: &str, prefix: &str, key: &str) -> f64 {
    let line = out.lines().find(|l| l.starts_with(prefix)).unwrap();
    let mut it = line.split_whitespace();
    it.find(|w| *w == key).unwrap();
    it.next().unwrap().parse().unwrap()
}

#[test]
fn validate_accepts_shipped_configs() {
    for name in ["default.toml", "scaled.toml"] {
        let o = retf(&["validate", "--config", shipped(name).to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{name}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn validate_lists_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = variant(
        dir.path(),
        &[("road_length = 400.0", "road_length = -1.0"), ("time_step = 0.001", "time_step = 0.0")],
    );
    let o = retf(&["validate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("road_length") && err.contains("time_step"), "{err}");
}

#[test]
fn unknown_field_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = variant(dir.path(), &[("seed = 1\n", "seed = 1\nbogus = 3\n")]);
    assert_eq!(retf(&["validate", "--config", &cfg]).status.code(), Some(2));
}

#[test]
fn run_twice_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), 3);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = retf(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for name in ["trace.csv", "summary.csv", "su_series.csv", "su_summary.csv", "groups.csv", "result.json", "manifest.json"] {
        let x = std::fs::read(a.join(name)).unwrap();
        assert!(!x.is_empty(), "{name}");
        assert_eq!(x, std::fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn seed_override_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), 3);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    retf(&["run", "--config", &cfg, "--out", a.to_str().unwrap()]);
    retf(&["run", "--config", &cfg, "--seed", "9", "--out", b.to_str().unwrap()]);
    let ma = std::fs::read_to_string(a.join("manifest.json")).unwrap();
    let mb = std::fs::read_to_string(b.join("manifest.json")).unwrap();
    assert!(mb.contains("\"seed\": 9"), "{mb}");
    assert_ne!(ma, mb);
}

#[test]
fn sweep_writes_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), 3);
    let out = dir.path().join("sweep");
    let o = Command::new(env!("CARGO_BIN_EXE_retf"))
        .args(["sweep", "--config", &cfg, "--axis", "rctTeamSize", "--values", "1,2,4,8", "--seeds", "1,2"])
        .args(["--out", out.to_str().unwrap()])
        .env("RETF_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 4, "{csv}");
    assert!(out.join("manifest.json").exists());
}

#[test]
fn bad_thread_cap_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), 0);
    let o = Command::new(env!("CARGO_BIN_EXE_retf"))
        .args(["sweep", "--config", &cfg, "--axis", "suCount", "--values", "0"])
        .args(["--out", dir.path().join("s").to_str().unwrap()])
        .env("RETF_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn oracle_refused_above_fourteen_patches() {
    let o = retf(&["optimize", "--config", shipped("scaled.toml").to_str().unwrap(), "--oracle"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("14"));
}

#[test]
fn oracle_never_beaten_by_greedy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), 3);
    let o = retf(&["optimize", "--config", &cfg, "--oracle"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let s = stdout(&o);
    assert!(field(&s, "oracle: phi", "phi") >= field(&s, "greedy: phi", "phi"));
    assert!(field(&s, "gap:", "gap:") >= 0.0);
}

#[test]
fn no_sus_gives_one_group() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), 0);
    let s = stdout(&retf(&["optimize", "--config", &cfg]));
    assert!(s.contains("greedy: groups [0,9]\n"), "{s}");
    assert_eq!(field(&s, "greedy: phi", "phi_sen"), 1.0);
}

#[test]
fn zero_ilf_echoes_target_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), 4);
    let s = stdout(&retf(&["optimize", "--config", &cfg, "--zeta", "0", "--mode", "geometry"]));
    assert_eq!(field(&s, "greedy: phi", "phi"), field(&s, "greedy: phi", "phi_tar"));
}

#[test]
fn geometry_grid_of_road_length_has_two_points() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), 0);
    let o = retf(&["geometry", "--config", &cfg, "--grid-step", "120"]);
    assert_eq!(o.status.code(), Some(0));
    let s = stdout(&o);
    let rows: Vec<&str> = s.lines().skip(1).collect();
    assert_eq!(rows.len(), 2, "{s}");
    assert!(rows.iter().all(|r| ["DRA", "IDRA", "GAP"].iter().any(|l| r.contains(l))));
}

#[test]
fn geometry_rejects_nonpositive_step() {
    let o = retf(&["geometry", "--config", shipped("scaled.toml").to_str().unwrap(), "--grid-step", "-1"]);
    assert_eq!(o.status.code(), Some(2));
}
