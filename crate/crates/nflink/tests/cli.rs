use std::fs;
use std::path::Path;
use std::process::Command;

use nflink::config::ScenarioConfig;
use nflink::experiment::{run_experiment, Kind};
use nflink::io;
use nflink_core::link_eval::{run_trial, Method, PreparedScenario, TrialOptions};

fn small_config(extra: &str) -> ScenarioConfig {
    ScenarioConfig::from_toml(&format!("trials = 6\nmethods = [\"perfect-csi\", \"amp\", \"gmp\"]\n{extra}")).unwrap()
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap()
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let cfg = small_config("snr_db = [5, 15]");
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_experiment(&cfg, Kind::RateVsSnr, a.path(), Some(1)).unwrap();
    run_experiment(&cfg, Kind::RateVsSnr, b.path(), Some(3)).unwrap();
    for name in ["aggregate.csv", "raw_snr_5.csv", "raw_snr_15.csv"] {
        assert_eq!(read(&a.path().join(name)), read(&b.path().join(name)), "{name}");
    }
    let agg = read(&a.path().join("aggregate.csv"));
    assert!(agg.starts_with("method,x,scope,count,mean_rate,p10,p50,p90\n"));
    // 2 SNR points x 3 methods x (all + 4 users)
    assert_eq!(agg.lines().count(), 1 + 2 * 3 * 5);
}

#[test]
fn raw_rows_replay_as_single_trials() {
    let cfg = small_config("");
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&cfg, Kind::RateCdf, dir.path(), None).unwrap();
    let raw = read(&dir.path().join("raw.csv"));
    let mut lines = raw.lines();
    assert_eq!(lines.next(), Some("trial,method,user,sinr_db,rate_bps_hz,seed"));
    let prep = PreparedScenario::new(cfg.scenario(16, 10.0)).unwrap();
    let mut checked = 0;
    for line in lines.filter(|l| l.starts_with("2,") || l.starts_with("4,")) {
        let f: Vec<&str> = line.split(',').collect();
        let method: Method = f[1].parse().unwrap();
        let user: usize = f[2].parse().unwrap();
        let rate: f64 = f[4].parse().unwrap();
        let seed: u64 = f[5].parse().unwrap();
        let report = run_trial(&prep, method, seed, &TrialOptions::default()).unwrap();
        assert_eq!(report.rate[user], rate, "{line}");
        checked += 1;
    }
    assert_eq!(checked, 2 * 3 * 4);
    assert!(dir.path().join("cdf.csv").exists());
}

#[test]
fn zero_trials_write_only_the_manifest() {
    let cfg = ScenarioConfig { trials: 0, ..small_config("") };
    let dir = tempfile::tempdir().unwrap();
    let summary = run_experiment(&cfg, Kind::RateCdf, dir.path(), Some(1)).unwrap();
    let mut names: Vec<String> =
        fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["config.resolved.toml", "manifest.txt"]);
    assert_eq!(summary.failures, 0);
    let manifest = read(&dir.path().join("manifest.txt"));
    assert!(manifest.contains("config_sha256: "));
    assert!(manifest.contains("failed_trials: 0"));
    // the echo round-trips to the resolved configuration
    let echo = ScenarioConfig::load(&dir.path().join("config.resolved.toml")).unwrap();
    assert_eq!(echo, cfg);
}

#[test]
fn energy_metric_rows_are_ordered() {
    let cfg = ScenarioConfig::default();
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&cfg, Kind::EnergyMetric, dir.path(), Some(1)).unwrap();
    let text = read(&dir.path().join("energy.csv"));
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("d_m,e_f,e_s"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 30);
    assert!((rows[0][0] - 0.2).abs() < 1e-12 && (rows[29][0] - 3.0).abs() < 1e-12);
    for r in &rows {
        assert!(r[2] >= r[1] - 1e-12, "{r:?}");
    }
}

#[test]
fn aoa_demo_writes_beliefs_and_channel() {
    let cfg = ScenarioConfig::default();
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&cfg, Kind::AoaDemo, dir.path(), Some(1)).unwrap();
    let beliefs = read(&dir.path().join("beliefs.csv"));
    assert!(beliefs.starts_with("subarray,angle_deg,likelihood,forward,backward,combined\n"));
    assert_eq!(beliefs.lines().count(), 1 + 4 * 179);
    let aoa = read(&dir.path().join("aoa.csv"));
    assert_eq!(aoa.lines().count(), 5);
    let h = io::read_channel(&dir.path().join("channel_sta0_sub0.csv")).unwrap();
    assert_eq!(h.shape(), (16, 16));
    assert!(h.norm() > 0.0);
}

#[test]
fn binary_reports_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "m_pilots = 300\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_nflink"))
        .args(["run", "--config", cfg.to_str().unwrap(), "--kind", "rate-cdf"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("m_pilots"));

    fs::write(&cfg, "").unwrap();
    let target = dir.path().join("run");
    let out = Command::new(env!("CARGO_BIN_EXE_nflink"))
        .args(["run", "--config", cfg.to_str().unwrap(), "--kind", "energy-metric", "--threads", "1"])
        .args(["--out", target.to_str().unwrap(), "--seed", "3", "--trials", "0"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = read(&target.join("manifest.txt"));
    assert!(manifest.contains("master_seed: 3"));
    assert!(manifest.contains("file: energy.csv sha256 "));
}
