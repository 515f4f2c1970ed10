//! Monte Carlo campaigns and their output files.
//!
//! Trial `i` always uses seed `trial_seed(master_seed, i)`, whatever the
//! operating point or thread count, so every raw row can be replayed alone
//! and sweeps are paired across points. Trials run on a rayon pool and are
//! collected in index order before anything is reduced or written.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::str::FromStr;

use nflink_core::channel::{energy_metrics, synthesize_channel};
use nflink_core::geo_mp::{ap_local_aoa, estimate_aoa, sta_local_aoa};
use nflink_core::geometry::{build_ap_layout, place_sta};
use nflink_core::link_eval::{aoa_uplink, draw_trial, run_trial_methods, LinkReport, Method, PreparedScenario, TrialOptions};
use nflink_core::rng::trial_seed;
use nflink_core::C64;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ScenarioConfig;
use crate::error::{CliError, Result};
use crate::io;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Kind {
    RateCdf,
    RateVsSnr,
    RateVsM,
    EnergyMetric,
    AoaDemo,
}

impl Kind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Kind::RateCdf => "rate-cdf",
            Kind::RateVsSnr => "rate-vs-snr",
            Kind::RateVsM => "rate-vs-m",
            Kind::EnergyMetric => "energy-metric",
            Kind::AoaDemo => "aoa-demo",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Kind {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        [Kind::RateCdf, Kind::RateVsSnr, Kind::RateVsM, Kind::EnergyMetric, Kind::AoaDemo]
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| CliError::invalid("kind", format!("unknown experiment `{s}`")))
    }
}

/// One row of a raw per-trial file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RawRow {
    pub trial: usize,
    pub method: String,
    pub user: usize,
    pub sinr_db: f64,
    pub rate_bps_hz: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub method: String,
    pub x: f64,
    /// `all` pools every user's rate; `userK` is station `K` alone.
    pub scope: String,
    pub count: usize,
    pub mean_rate: f64,
    pub p10: f64,
    pub p50: f64,
    pub p90: f64,
}

/// Linear-interpolation percentile of sorted data.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn summarize(method: &str, x: f64, scope: String, mut values: Vec<f64>) -> AggregateRow {
    let count = values.len();
    let mean_rate = if count == 0 { f64::NAN } else { values.iter().sum::<f64>() / count as f64 };
    values.sort_by(f64::total_cmp);
    AggregateRow {
        method: method.to_string(),
        x,
        scope,
        count,
        mean_rate,
        p10: percentile(&values, 10.0),
        p50: percentile(&values, 50.0),
        p90: percentile(&values, 90.0),
    }
}

/// Reports of every successful trial at one operating point, in trial order.
#[derive(Debug, Clone)]
pub struct PointResult {
    pub x: f64,
    pub trials: Vec<(usize, Vec<LinkReport>)>,
    pub failures: Vec<(usize, u64, String)>,
}

impl PointResult {
    pub fn raw_rows(&self) -> Vec<RawRow> {
        let mut rows = Vec::new();
        for (trial, reports) in &self.trials {
            for r in reports {
                for (user, (rho, rate)) in r.sinr.iter().zip(&r.rate).enumerate() {
                    rows.push(RawRow {
                        trial: *trial,
                        method: r.method.to_string(),
                        user,
                        sinr_db: 10.0 * rho.log10(),
                        rate_bps_hz: *rate,
                        seed: r.seed,
                    });
                }
            }
        }
        rows
    }

    pub fn aggregate(&self, methods: &[Method]) -> Vec<AggregateRow> {
        let mut out = Vec::new();
        for &m in methods {
            let per_trial: Vec<&LinkReport> =
                self.trials.iter().flat_map(|(_, rs)| rs.iter().filter(|r| r.method == m)).collect();
            let users = per_trial.first().map_or(0, |r| r.rate.len());
            let all = per_trial.iter().flat_map(|r| r.rate.iter().copied()).collect();
            out.push(summarize(m.as_str(), self.x, "all".into(), all));
            for u in 0..users {
                let vals = per_trial.iter().map(|r| r.rate[u]).collect();
                out.push(summarize(m.as_str(), self.x, format!("user{u}"), vals));
            }
        }
        out
    }

    /// Per-trial user-mean rate of `method`, in trial order.
    pub fn mean_rates(&self, method: Method) -> Vec<f64> {
        self.trials
            .iter()
            .filter_map(|(_, rs)| rs.iter().find(|r| r.method == method))
            .map(|r| r.rate.iter().sum::<f64>() / r.rate.len() as f64)
            .collect()
    }
}

/// Runs `trials` seeded trials of `methods` at one operating point.
pub fn run_point(
    prep: &PreparedScenario,
    methods: &[Method],
    master_seed: u64,
    trials: usize,
    x: f64,
    opts: &TrialOptions,
) -> PointResult {
    let results: Vec<(usize, u64, nflink_core::Result<Vec<LinkReport>>)> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let seed = trial_seed(master_seed, i as u64);
            (i, seed, run_trial_methods(prep, methods, seed, opts))
        })
        .collect();
    let mut point = PointResult { x, trials: Vec::new(), failures: Vec::new() };
    for (i, seed, res) in results {
        match res {
            Ok(reports) => point.trials.push((i, reports)),
            Err(e) => {
                log::warn!("trial {i} (seed {seed}) failed: {e}");
                point.failures.push((i, seed, e.to_string()));
            }
        }
    }
    point
}

/// Files written by one run, plus the failure count.
#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    pub files: Vec<PathBuf>,
    pub failures: usize,
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

const RAW_HEADER: [&str; 6] = ["trial", "method", "user", "sinr_db", "rate_bps_hz", "seed"];
const AGG_HEADER: [&str; 8] = ["method", "x", "scope", "count", "mean_rate", "p10", "p50", "p90"];

fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn git_commit() -> String {
    Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

struct Sink<'a> {
    out: &'a Path,
    summary: RunSummary,
}

impl Sink<'_> {
    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.out.join(name);
        self.summary.files.push(p.clone());
        p
    }
}

fn format_x(x: f64) -> String {
    let s = format!("{x}");
    s.replace('-', "m").replace('.', "p")
}

/// Runs one experiment and writes its files into `out`.
pub fn run_experiment(cfg: &ScenarioConfig, kind: Kind, out: &Path, threads: Option<usize>) -> Result<RunSummary> {
    cfg.validate()?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let echo = cfg.to_toml();
    let echo_path = out.join("config.resolved.toml");
    fs::write(&echo_path, &echo).map_err(|e| CliError::io(&echo_path, e))?;

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(k) = threads {
        builder = builder.num_threads(k);
    }
    let pool = builder.build()?;
    let mut sink = Sink { out, summary: RunSummary::default() };
    let realizable = PreparedScenario::new(cfg.scenario(cfg.m_values()[0], cfg.snr_values()[0]))?.zc_realizable;
    if !realizable {
        log::warn!(
            "training sequence (n = {}, root = {}) is not realizable with {}-bit phase shifters",
            cfg.n,
            cfg.zc_root,
            cfg.q_bits
        );
    }
    pool.install(|| run_kind(cfg, kind, &mut sink))?;

    let mut manifest = String::new();
    manifest.push_str(&format!("tool: nflink {}\n", env!("CARGO_PKG_VERSION")));
    manifest.push_str(&format!("kind: {kind}\n"));
    manifest.push_str(&format!("master_seed: {}\n", cfg.master_seed));
    manifest.push_str(&format!("trials: {}\n", cfg.trials));
    manifest.push_str(&format!("threads: {}\n", pool.current_num_threads()));
    manifest.push_str(&format!("config_sha256: {}\n", sha256_hex(echo.as_bytes())));
    manifest.push_str(&format!("git_commit: {}\n", git_commit()));
    manifest.push_str(&format!("zc_realizable: {realizable}\n"));
    manifest.push_str(&format!("failed_trials: {}\n", sink.summary.failures));
    for f in &sink.summary.files {
        let bytes = fs::read(f).map_err(|e| CliError::io(f, e))?;
        let name = f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        manifest.push_str(&format!("file: {name} sha256 {}\n", sha256_hex(&bytes)));
    }
    let manifest_path = out.join("manifest.txt");
    fs::write(&manifest_path, manifest).map_err(|e| CliError::io(&manifest_path, e))?;
    let mut summary = sink.summary;
    summary.files.push(echo_path);
    summary.files.push(manifest_path);
    Ok(summary)
}

fn run_kind(cfg: &ScenarioConfig, kind: Kind, sink: &mut Sink<'_>) -> Result<()> {
    match kind {
        Kind::EnergyMetric => energy_metric(cfg, sink),
        Kind::AoaDemo => aoa_demo(cfg, sink),
        Kind::RateCdf | Kind::RateVsSnr | Kind::RateVsM => rate_campaign(cfg, kind, sink),
    }
}

fn rate_campaign(cfg: &ScenarioConfig, kind: Kind, sink: &mut Sink<'_>) -> Result<()> {
    if cfg.trials == 0 {
        return Ok(());
    }
    let methods = cfg.methods()?;
    let (m0, snr0) = (cfg.m_values()[0], cfg.snr_values()[0]);
    let base = PreparedScenario::new(cfg.scenario(m0, snr0))?;
    let points: Vec<(usize, f64, f64, String)> = match kind {
        Kind::RateCdf => vec![(m0, snr0, snr0, "raw.csv".into())],
        Kind::RateVsSnr => cfg
            .snr_values()
            .into_iter()
            .map(|s| (m0, s, s, format!("raw_snr_{}.csv", format_x(s))))
            .collect(),
        _ => cfg
            .m_values()
            .into_iter()
            .map(|m| (m, snr0, m as f64, format!("raw_m_{m}.csv")))
            .collect(),
    };
    let mut aggregate = Vec::new();
    let mut last = None;
    for (m, snr, x, raw_name) in points {
        let prep = base.with_operating_point(m, snr)?;
        let point = run_point(&prep, &methods, cfg.master_seed, cfg.trials, x, &TrialOptions::default());
        sink.summary.failures += point.failures.len();
        let path = sink.path(&raw_name);
        write_csv(&path, &point.raw_rows(), &RAW_HEADER)?;
        aggregate.extend(point.aggregate(&methods));
        last = Some(point);
    }
    let path = sink.path("aggregate.csv");
    write_csv(&path, &aggregate, &AGG_HEADER)?;

    if let (Kind::RateCdf, Some(point)) = (kind, last) {
        #[derive(Serialize)]
        struct CdfRow<'a> {
            method: &'a str,
            rate_bps_hz: f64,
            cdf: f64,
        }
        let mut rows = Vec::new();
        for &m in &methods {
            let mut rates: Vec<f64> = point
                .trials
                .iter()
                .flat_map(|(_, rs)| rs.iter().filter(|r| r.method == m).flat_map(|r| r.rate.iter().copied()))
                .collect();
            rates.sort_by(f64::total_cmp);
            let n = rates.len() as f64;
            rows.extend(rates.iter().enumerate().map(|(i, &rate)| CdfRow {
                method: m.as_str(),
                rate_bps_hz: rate,
                cdf: (i + 1) as f64 / n,
            }));
        }
        let path = sink.path("cdf.csv");
        write_csv(&path, &rows, &["method", "rate_bps_hz", "cdf"])?;
    }
    Ok(())
}

/// `(d, E_F, E_S)` for a broadside station in free space.
pub fn energy_sweep(cfg: &ScenarioConfig) -> Result<Vec<(f64, f64, f64)>> {
    let ap = build_ap_layout(cfg.n, cfg.n_rf, cfg.wavelength_m, cfg.l_ap_m)?;
    let free = cfg.room.to_room().with_coefficient(C64::new(0.0, 0.0));
    let k = cfg.energy_points;
    (0..k)
        .map(|i| {
            let t = if k == 1 { 0.0 } else { i as f64 / (k - 1) as f64 };
            let d = cfg.energy_d_min_m + t * (cfg.energy_d_max_m - cfg.energy_d_min_m);
            let sta = place_sta(&ap, d, 0.0, 0.0, cfg.n, cfg.l_sta_m)?;
            let ch = synthesize_channel(&ap, &sta, &free)?;
            let (e_f, e_s) = energy_metrics(&ch)?;
            Ok((d, e_f, e_s))
        })
        .collect()
}

fn energy_metric(cfg: &ScenarioConfig, sink: &mut Sink<'_>) -> Result<()> {
    #[derive(Serialize)]
    struct Row {
        d_m: f64,
        e_f: f64,
        e_s: f64,
    }
    let rows: Vec<Row> = energy_sweep(cfg)?.into_iter().map(|(d_m, e_f, e_s)| Row { d_m, e_f, e_s }).collect();
    let path = sink.path("energy.csv");
    write_csv(&path, &rows, &["d_m", "e_f", "e_s"])
}

/// Local-AoA beliefs of station 0 in trial 0.
fn aoa_demo(cfg: &ScenarioConfig, sink: &mut Sink<'_>) -> Result<()> {
    let prep = PreparedScenario::new(cfg.scenario(cfg.m_values()[0], cfg.snr_values()[0]))?;
    let seed = trial_seed(cfg.master_seed, 0);
    let trial = draw_trial(&prep, seed)?;
    let noise_var = trial.gain / prep.scenario.snr_linear();
    let up = aoa_uplink(&prep, &trial, 0, noise_var, seed)?;
    let path = sink.path("beliefs.csv");
    io::write_beliefs(
        &path,
        &prep.grid,
        &[
            ("likelihood", &up.likelihoods),
            ("forward", &up.messages.fwd_in),
            ("backward", &up.messages.bwd_in),
            ("combined", &up.messages.combined),
        ],
    )?;

    #[derive(Serialize)]
    struct Row {
        subarray: usize,
        true_ap_aoa_deg: f64,
        true_sta_aoa_deg: f64,
        ml_deg: f64,
        gmp_deg: f64,
        informative: bool,
    }
    let sta = &trial.stations[0];
    let rows: Vec<Row> = (0..prep.scenario.n_rf)
        .map(|k| Row {
            subarray: k,
            true_ap_aoa_deg: ap_local_aoa(&prep.ap, sta, k).to_degrees(),
            true_sta_aoa_deg: sta_local_aoa(&prep.ap, sta, k).to_degrees(),
            ml_deg: estimate_aoa(&up.likelihoods[k], &prep.grid).to_degrees(),
            gmp_deg: estimate_aoa(&up.messages.combined[k], &prep.grid).to_degrees(),
            informative: !up.uninformative[k],
        })
        .collect();
    let path = sink.path("aoa.csv");
    write_csv(
        &path,
        &rows,
        &["subarray", "true_ap_aoa_deg", "true_sta_aoa_deg", "ml_deg", "gmp_deg", "informative"],
    )?;
    let path = sink.path("channel_sta0_sub0.csv");
    io::write_channel(&path, &trial.channels[0].subchannels[0])
}
