use std::path::{Path, PathBuf};
use std::process::Command;

use planar_impact::cli::run;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_planar-impact"))
}

fn call(out: &Path, args: &[&str]) -> i32 {
    let mut v = vec!["planar-impact".to_string(), "--out-dir".into(), out.display().to_string()];
    v.extend(args.iter().map(|s| s.to_string()));
    run(v)
}

fn csvs(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    v.sort();
    v
}

fn simulate_and_extract(dir: &Path, n: &str, model: &str) -> PathBuf {
    assert_eq!(call(dir, &["--seed", "7", "simulate", "--n", n, "--model", model]), 0);
    let mut args = vec!["events".to_string()];
    args.extend(csvs(dir).iter().map(|p| p.display().to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    assert_eq!(call(dir, &refs), 0);
    dir.join("events.json")
}

#[test]
fn batch_identify_recovers_truth() {
    let dir = tempfile::tempdir().unwrap();
    let events = simulate_and_extract(dir.path(), "20", "ap_newton");
    let ev = events.display().to_string();
    assert_eq!(call(dir.path(), &["identify", "--events", &ev, "--model", "ap_newton", "--mode", "batch"]), 0);
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("identify_ap_newton.json")).unwrap()).unwrap();
    let mu = v["fit"]["params"]["mu"].as_f64().unwrap();
    let eps = v["fit"]["params"]["eps"].as_f64().unwrap();
    assert!((mu - 0.2).abs() < 1e-3 && (eps - 0.5).abs() < 1e-3, "mu {mu} eps {eps}");
}

#[test]
fn evaluate_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let events = simulate_and_extract(dir.path(), "12", "whittaker");
    let ev = events.display().to_string();
    assert_eq!(call(dir.path(), &["--svg", "evaluate", "--events", &ev]), 0);
    let t1 = std::fs::read_to_string(dir.path().join("table1.csv")).unwrap();
    let mut lines = t1.lines();
    assert_eq!(lines.next().unwrap(), "model,mu,mu_std,eps,eps_std,best_pct,worst_pct");
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    assert_eq!(rows.len(), 6);
    let best: f64 = rows.iter().map(|r| r[5].parse::<f64>().unwrap()).sum();
    assert!((best - 100.0).abs() <= 0.3, "best_pct sums to {best}");
    for name in ["table2.csv", "summary.json", "error_density.svg", "heatmap_whittaker.csv", "error_hist_posthoc.csv"] {
        assert!(dir.path().join(name).exists(), "{name} missing");
    }
}

#[test]
fn regions_all_writes_every_hull() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(call(dir.path(), &["--svg", "regions", "--all"]), 0);
    for m in ["ap_newton", "ap_poisson", "drumwright_shell", "mirtich", "wang_mason", "whittaker"] {
        let hull = std::fs::read_to_string(dir.path().join(format!("hull_{m}.csv"))).unwrap();
        assert!(hull.starts_with("p_t,p_n") && hull.lines().count() > 3, "{m}");
    }
    assert!(dir.path().join("ellipse.csv").exists());
    assert!(dir.path().join("regions.svg").exists());
}

#[test]
fn same_seed_same_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        assert_eq!(call(d.path(), &["--seed", "3", "simulate", "--n", "4"]), 0);
    }
    for name in ["drop_0000.csv", "drop_0003.csv", "drop_0002.events.json", "manifest.json"] {
        assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let usage = bin().args(["--out-dir", &out, "frobnicate"]).output().unwrap();
    assert_eq!(usage.status.code(), Some(2));
    let bad_model = bin().args(["--out-dir", &out, "regions", "--model", "bogus"]).output().unwrap();
    assert_eq!(bad_model.status.code(), Some(2));

    let broken = dir.path().join("broken.csv");
    std::fs::write(&broken, "t,x,y,theta\n0.0,0,1,0\n0.0,0,1,0\n").unwrap();
    let v = bin().args(["--out-dir", &out, "validate", broken.to_str().unwrap()]).output().unwrap();
    assert_eq!(v.status.code(), Some(1));
}
