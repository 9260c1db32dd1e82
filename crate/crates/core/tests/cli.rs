use std::process::{Command, Output};

fn dre(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dre")).args(args).output().expect("spawn dre")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn gen_is_deterministic() {
    let args = ["--model", "NE-SW", "--p", "0.5", "--radius", "4", "--seed", "11", "gen"];
    let (a, b) = (dre(&args), dre(&args));
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert!(stdout(&a).starts_with("DRE 1 d=2 seed=11"));
}

#[test]
fn bad_measure_is_a_usage_error() {
    let o = dre(&["--model", "NE-0", "--p", "1.5", "gen"]);
    assert_eq!(o.status.code(), Some(2));
    let o = dre(&["--model", "XYZ", "gen"]);
    assert_eq!(o.status.code(), Some(2));
    let o = dre(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bounds_lists_constants() {
    let o = dre(&["bounds"]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.contains("otsp.lower_bound.derived=0.546602"));
    assert!(s.contains("fsosp.cubic_root=0.569840"));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    std::fs::write(&cfg, "model = NE-SW\np = 0.5\nradius = 3\nseed = 5\n").unwrap();
    let c = cfg.to_str().unwrap();
    let from_file = dre(&["--config", c, "gen"]);
    let flags = dre(&["--model", "NE-SW", "--p", "0.5", "--radius", "3", "--seed", "5", "gen"]);
    assert_eq!(from_file.stdout, flags.stdout);
    let overridden = dre(&["--config", c, "--seed", "6", "gen"]);
    assert!(stdout(&overridden).contains("seed=6"));
}

#[test]
fn snapshot_feeds_cluster_and_render() {
    let dir = tempfile::tempdir().unwrap();
    let snap = dir.path().join("env.txt");
    let s = snap.to_str().unwrap();
    let o = dre(&["--model", "NE-0", "--p", "0.7", "--radius", "6", "--seed", "2", "--out", s, "gen"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let a = dre(&["--input", s, "cluster"]);
    let b = dre(&["--input", s, "cluster"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let pgm = dir.path().join("c.pgm");
    let o = dre(&["--input", s, "--format", "pgm", "--out", pgm.to_str().unwrap(), "render"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(std::fs::read(&pgm).unwrap().starts_with(b"P5\n"));
    assert!(dir.path().join("c.pgm.legend").exists());
}

#[test]
fn estimate_writes_csv_record() {
    let o = dre(&["--model", "NE-0", "--p", "0.8", "--radius", "10", "--trials", "200", "--format", "csv", "estimate"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = stdout(&o);
    let mut lines = s.lines().filter(|l| !l.starts_with('#'));
    assert_eq!(lines.next(), Some("model,p,M,trials,statistic,estimate,se,seed,seconds"));
    assert!(lines.next().unwrap().starts_with("NE-0,0.8,10,200,"));
}
