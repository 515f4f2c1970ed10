//! Beamformer selection, effective multi-user channels, MMSE rates and
//! complete seeded trials for every link-configuration method.
#[allow(unused_imports)]
use num_traits::Float;

use alloc::format;
use alloc::string::String;

use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;
use core::str::FromStr;

use rand::Rng;

use crate::acquisition::{aoa_probe_schedule, draw_schedule, measure_shifts, CsOperator};
use crate::channel::{array_response, synthesize_channel, ChannelSet, RoomSpec};
use crate::codebook::{is_realizable, phase_quantize, spectral_mask, zc_sequence, SpectralMask, ZcSequence};
use crate::dcs_amp::{
    dcs_amp, em_bg_amp, group_active, AmpConfig, BgPrior, DcsConfig, EmConfig, Groups,
};
use crate::error::{invalid, Error};
use crate::fft::fft2;
use crate::geo_mp::{
    estimate_aoa, factor_offsets, forward_backward, probe_likelihood, sta_ml_aoa, AngularBelief,
    AngularGrid, FactorChain, MessagePassing,
};
use crate::geometry::{build_ap_layout, place_sta, ApLayout, StaPlacement};
use crate::rng::{complex_gaussian, stream};
use crate::{CMatrix, CVector, Result, C64};

/// STA transmit beam `f` and AP receive beam `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamPair {
    pub f: CVector,
    pub w: CVector,
}

impl BeamPair {
    /// All-phase-zero beams used when a method cannot produce an estimate.
    pub fn fallback(n: usize) -> Self {
        let v = CVector::from_element(n, C64::new(1.0 / (n as f64).sqrt(), 0.0));
        BeamPair { f: v.clone(), w: v }
    }
}

/// Rotates `v` so its largest-magnitude entry is real and positive.
fn fix_phase(v: CVector) -> CVector {
    let mut best = 0;
    for (i, c) in v.iter().enumerate() {
        if c.norm() > v[best].norm() {
            best = i;
        }
    }
    let p = v[best];
    if p.norm() == 0.0 {
        return v;
    }
    let rot = p.conj() / p.norm();
    v.map(|c| c * rot)
}

/// Quantized top singular pair: `f = Q(v1)`, `w = Q(conj(u1))`.
pub fn svd_beamformers(h: &CMatrix, q: u32) -> Result<BeamPair> {
    if h.iter().all(|c| *c == C64::new(0.0, 0.0)) {
        return Err(Error::ZeroChannel);
    }
    if h.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(Error::Numerical("non-finite channel estimate".into()));
    }
    let svd = h.clone().svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::Numerical("SVD did not converge".into())),
    };
    let mut top = 0;
    for (i, s) in svd.singular_values.iter().enumerate() {
        if *s > svd.singular_values[top] {
            top = i;
        }
    }
    let u1 = fix_phase(u.column(top).into_owned());
    let v1 = fix_phase(v_t.row(top).adjoint());
    Ok(BeamPair { f: phase_quantize(&v1, q)?, w: phase_quantize(&u1.map(|c| c.conj()), q)? })
}

/// `Q(conj(a_N(omega)))`.
pub fn steering_beamformer(omega: f64, n: usize, q: u32) -> Result<CVector> {
    if !(omega.abs() < PI / 2.0) {
        return Err(invalid("steering angle must lie in (-pi/2, pi/2)"));
    }
    phase_quantize(&array_response(n, omega).map(|c| c.conj()), q)
}

/// `H_UL(i, j) = w_i^T H_{i,j} f_j`, where `blocks[i][j]` is the channel
/// from station `j` to subarray `i`.
pub fn effective_channel(blocks: &[Vec<CMatrix>], f: &[CVector], w: &[CVector]) -> Result<CMatrix> {
    let k = w.len();
    let u = f.len();
    if blocks.len() != k || blocks.iter().any(|row| row.len() != u) {
        return Err(Error::Dimension("channel blocks do not match the beam counts".into()));
    }
    let mut out = CMatrix::zeros(k, u);
    for i in 0..k {
        for j in 0..u {
            out[(i, j)] = (w[i].transpose() * &blocks[i][j] * &f[j])[(0, 0)];
        }
    }
    Ok(out)
}

/// Post-MMSE SINRs `rho_k = snr / [(H^H H + I/snr)^-1]_kk - 1` and rates.
pub fn mmse_sinr_rates(h_ul: &CMatrix, snr: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(snr > 0.0) {
        return Err(invalid("snr must be positive"));
    }
    let u = h_ul.ncols();
    let gram = h_ul.adjoint() * h_ul + CMatrix::identity(u, u) * C64::new(1.0 / snr, 0.0);
    let inv = gram
        .try_inverse()
        .ok_or_else(|| Error::Numerical("regularized Gram matrix is singular".into()))?;
    let mut sinr = Vec::with_capacity(u);
    for k in 0..u {
        let d = inv[(k, k)].re;
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::Numerical("MMSE diagonal is not positive".into()));
        }
        sinr.push((snr / d - 1.0).max(0.0));
    }
    let rates = sinr.iter().map(|r| (1.0 + r).log2()).collect();
    Ok((sinr, rates))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    PerfectCsi,
    Amp,
    DcsAmp,
    Ml,
    Gmp,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::PerfectCsi, Method::Amp, Method::DcsAmp, Method::Ml, Method::Gmp];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::PerfectCsi => "perfect-csi",
            Method::Amp => "amp",
            Method::DcsAmp => "dcs-amp",
            Method::Ml => "ml",
            Method::Gmp => "gmp",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| invalid(format!("unknown method `{s}`")))
    }
}

/// Physical and algorithmic parameters of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub n: usize,
    pub n_rf: usize,
    pub wavelength: f64,
    pub l_ap: f64,
    pub l_sta: f64,
    pub d: f64,
    pub q_bits: u32,
    pub zc_root: usize,
    pub m_pilots: usize,
    pub snr_db: f64,
    pub d_min: f64,
    pub d_max: f64,
    pub grid_deg: f64,
    pub delta_e: f64,
    pub dcs_passes: usize,
    pub factor_samples: usize,
    pub room: RoomSpec,
    /// Candidate station bearings, drawn without repetition.
    pub gammas: Vec<f64>,
    /// Candidate station tilts, drawn uniformly.
    pub thetas: Vec<f64>,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            n: 16,
            n_rf: 4,
            wavelength: 0.005,
            l_ap: 0.20,
            l_sta: 0.04,
            d: 0.8,
            q_bits: 2,
            zc_root: 9,
            m_pilots: 16,
            snr_db: 10.0,
            d_min: 0.3,
            d_max: 1.3,
            grid_deg: 1.0,
            delta_e: 0.9,
            dcs_passes: 12,
            factor_samples: 2000,
            room: RoomSpec::default(),
            gammas: (1..=9).map(|i| (-75.0 + 15.0 * i as f64).to_radians()).collect(),
            thetas: (1..=18).map(|i| (10.0 * i as f64).to_radians()).collect(),
        }
    }
}

impl Scenario {
    pub fn snr_linear(&self) -> f64 {
        10f64.powf(self.snr_db / 10.0)
    }
}

/// Scenario plus everything that can be computed once and shared.
#[derive(Debug, Clone)]
pub struct PreparedScenario {
    pub scenario: Scenario,
    pub ap: ApLayout,
    pub zc: ZcSequence,
    pub mask: SpectralMask,
    pub grid: AngularGrid,
    pub chain: FactorChain,
    /// Whether every circulant shift of the training sequence lies in the
    /// phase alphabet; when false, training beams need finer phase control
    /// than the data beams.
    pub zc_realizable: bool,
}

impl PreparedScenario {
    pub fn new(scenario: Scenario) -> Result<Self> {
        let ap = build_ap_layout(scenario.n, scenario.n_rf, scenario.wavelength, scenario.l_ap)?;
        let zc = zc_sequence(scenario.n, scenario.zc_root)?;
        let mask = spectral_mask(&zc)?;
        let zc_realizable = is_realizable(&zc, scenario.q_bits)?;
        if scenario.m_pilots == 0 || scenario.m_pilots > scenario.n * scenario.n {
            return Err(invalid("pilot count must lie in [1, n^2]"));
        }
        if scenario.n_rf > scenario.gammas.len() || scenario.thetas.is_empty() {
            return Err(invalid("not enough candidate bearings or tilts for the stations"));
        }
        let grid = AngularGrid::from_degrees(scenario.grid_deg)?;
        let chain = FactorChain::build(
            &grid,
            &factor_offsets(&ap),
            scenario.d_min,
            scenario.d_max,
            scenario.factor_samples,
        )?;
        Ok(PreparedScenario { scenario, ap, zc, mask, grid, chain, zc_realizable })
    }

    /// Same prepared state with a different pilot count or SNR.
    pub fn with_operating_point(&self, m_pilots: usize, snr_db: f64) -> Result<Self> {
        if m_pilots == 0 || m_pilots > self.scenario.n * self.scenario.n {
            return Err(invalid("pilot count must lie in [1, n^2]"));
        }
        let mut out = self.clone();
        out.scenario.m_pilots = m_pilots;
        out.scenario.snr_db = snr_db;
        Ok(out)
    }
}

// RNG stream purposes; the station index is added for per-station streams.
const RNG_GEOMETRY: u64 = 1 << 8;
const RNG_SCHEDULE: u64 = 2 << 8;
const RNG_CS_NOISE: u64 = 3 << 8;
const RNG_AP_PROBE: u64 = 4 << 8;
const RNG_AP_NOISE: u64 = 5 << 8;
const RNG_STA_PROBE: u64 = 6 << 8;
const RNG_STA_NOISE: u64 = 7 << 8;

/// Station placements and channels of one trial.
#[derive(Debug, Clone)]
pub struct TrialChannels {
    pub stations: Vec<StaPlacement>,
    /// `channels[u]` is the full channel of station `u`.
    pub channels: Vec<ChannelSet>,
    /// Reference per-measurement gain `g^2`.
    pub gain: f64,
}

impl TrialChannels {
    /// `H_{k,u}` as `blocks[k][u]`.
    pub fn blocks(&self) -> Vec<Vec<CMatrix>> {
        let n_rf = self.channels.first().map_or(0, |c| c.n_rf());
        (0..n_rf)
            .map(|k| self.channels.iter().map(|c| c.subchannels[k].clone()).collect())
            .collect()
    }
}

pub fn draw_trial(prep: &PreparedScenario, seed: u64) -> Result<TrialChannels> {
    let s = &prep.scenario;
    let mut rng = stream(seed, RNG_GEOMETRY);
    let mut pool: Vec<f64> = s.gammas.clone();
    for i in 0..s.n_rf {
        let j = rng.gen_range(i..pool.len());
        pool.swap(i, j);
    }
    let mut stations = Vec::with_capacity(s.n_rf);
    let mut channels = Vec::with_capacity(s.n_rf);
    for &gamma in &pool[..s.n_rf] {
        let theta = s.thetas[rng.gen_range(0..s.thetas.len())];
        let sta = place_sta(&prep.ap, s.d, gamma, theta, s.n, s.l_sta)?;
        channels.push(synthesize_channel(&prep.ap, &sta, &s.room)?);
        stations.push(sta);
    }
    let total: f64 = channels.iter().flat_map(|c| c.subchannels.iter()).map(|h| h.norm_squared()).sum();
    let gain = total / (s.n_rf * s.n_rf * s.n * s.n) as f64;
    Ok(TrialChannels { stations, channels, gain })
}

/// One method's outcome in one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkReport {
    pub method: Method,
    pub seed: u64,
    pub beams: Vec<BeamPair>,
    pub h_ul: CMatrix,
    pub sinr: Vec<f64>,
    pub rate: Vec<f64>,
    /// Set when the method fell back to default beams for some station.
    pub flagged: bool,
    pub note: Option<String>,
}

/// Per-trial switches that are not part of the physical scenario.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrialOptions {
    /// Pilots are observed without noise; rates still use the scenario SNR.
    pub noiseless_pilots: bool,
}


/// Beams of one station from one method, with a fallback flag.
struct StationBeams {
    beams: BeamPair,
    flagged: bool,
    note: Option<String>,
}

fn fallback(n: usize, err: Error) -> StationBeams {
    StationBeams { beams: BeamPair::fallback(n), flagged: true, note: Some(format!("{err}")) }
}

fn from_estimate(h_hat: &CMatrix, q: u32) -> StationBeams {
    match svd_beamformers(h_hat, q) {
        Ok(beams) => StationBeams { beams, flagged: false, note: None },
        Err(e) => fallback(h_hat.nrows(), e),
    }
}

/// Compressive estimates of all subchannels of one station.
pub struct CsEstimates {
    /// Standard AMP channel estimates `H_k`.
    pub amp: Vec<CMatrix>,
    /// DCS-AMP channel estimates `H_k`.
    pub dcs: Vec<CMatrix>,
}

/// Runs shift-pilot acquisition for station `u`, then standard AMP on each
/// plane and, if requested, DCS-AMP grouped by the AMP energy split.
pub fn cs_estimate_station(
    prep: &PreparedScenario,
    trial: &TrialChannels,
    u: usize,
    noise_var: f64,
    seed: u64,
    with_dcs: bool,
) -> Result<CsEstimates> {
    let s = &prep.scenario;
    let sched = draw_schedule(s.m_pilots, s.n, s.n_rf, &mut stream(seed, RNG_SCHEDULE + u as u64))?;
    let batch = measure_shifts(
        &trial.channels[u].subchannels,
        &sched,
        &prep.zc,
        noise_var,
        &mut stream(seed, RNG_CS_NOISE + u as u64),
    )?;
    let ops: Vec<CsOperator> = (0..s.n_rf).map(|k| CsOperator::from_schedule(&sched, k)).collect();
    let amp_cfg = AmpConfig::default();
    let mut amp_s = Vec::with_capacity(s.n_rf);
    for (y, op) in batch.y.iter().zip(&ops) {
        let (out, _) = em_bg_amp(y, op, noise_var, &amp_cfg, &EmConfig::default())?;
        amp_s.push(out.mean);
    }
    let to_h = |s_hat: &CMatrix| fft2(&prep.mask.unapply(s_hat));
    let amp = amp_s.iter().map(to_h).collect();
    let dcs = if with_dcs {
        let (s1, _) = group_active(&amp_s, s.delta_e)?;
        let groups = Groups::from_split(s.n * s.n, &s1);
        let mut init = BgPrior::initial(&batch.y[0], noise_var);
        let energy: f64 = batch.y.iter().map(|y| y.norm_squared()).sum::<f64>() / s.n_rf as f64;
        init.rho = (energy / (s.m_pilots as f64 * init.eps)).max(1e-12);
        let cfg = DcsConfig { passes: s.dcs_passes, amp: amp_cfg, ..DcsConfig::default() };
        let est = dcs_amp(&batch.y, &ops, &groups, &[init, init], noise_var, &cfg)?;
        est.s_hat.iter().map(to_h).collect()
    } else {
        Vec::new()
    };
    Ok(CsEstimates { amp, dcs })
}

/// Uplink AoA probing of station `u` at every subarray.
pub struct AoaUplink {
    pub likelihoods: Vec<AngularBelief>,
    pub messages: MessagePassing,
    /// Subarrays whose gain estimate tripped the floor.
    pub uninformative: Vec<bool>,
}

pub fn aoa_uplink(
    prep: &PreparedScenario,
    trial: &TrialChannels,
    u: usize,
    noise_var: f64,
    seed: u64,
) -> Result<AoaUplink> {
    let s = &prep.scenario;
    let m_ap = s.m_pilots / 2;
    let mut probe_rng = stream(seed, RNG_AP_PROBE + u as u64);
    let mut noise_rng = stream(seed, RNG_AP_NOISE + u as u64);
    let mut likelihoods = Vec::with_capacity(s.n_rf);
    let mut uninformative = Vec::with_capacity(s.n_rf);
    for k in 0..s.n_rf {
        let psi = aoa_probe_schedule(m_ap, s.n, &prep.zc, &mut probe_rng)?;
        let clean = &psi * (&trial.channels[u].subchannels[k] * &prep.zc.z);
        let y = clean.map(|c| c + complex_gaussian(&mut noise_rng, noise_var));
        let (belief, informative) = probe_likelihood(&y, &psi, noise_var, &prep.grid)?;
        likelihoods.push(belief);
        uninformative.push(!informative);
    }
    let messages = forward_backward(&likelihoods, &prep.chain)?;
    Ok(AoaUplink { likelihoods, messages, uninformative })
}

/// Downlink step: subarray `u` transmits `w`, the station estimates its own
/// AoA and steers its transmit beam.
fn aoa_downlink(
    prep: &PreparedScenario,
    trial: &TrialChannels,
    u: usize,
    w: &CVector,
    noise_var: f64,
    seed: u64,
) -> Result<CVector> {
    let s = &prep.scenario;
    let m_sta = s.m_pilots - s.m_pilots / 2;
    let psi = aoa_probe_schedule(m_sta, s.n, &prep.zc, &mut stream(seed, RNG_STA_PROBE + u as u64))?;
    let mut noise_rng = stream(seed, RNG_STA_NOISE + u as u64);
    let clean = &psi * (trial.channels[u].subchannels[u].transpose() * w);
    let y = clean.map(|c| c + complex_gaussian(&mut noise_rng, noise_var));
    let (phi, _) = sta_ml_aoa(&y, &psi, noise_var, &prep.grid)?;
    steering_beamformer(phi, s.n, s.q_bits)
}

fn geometric_beams(
    prep: &PreparedScenario,
    trial: &TrialChannels,
    u: usize,
    omega: f64,
    noise_var: f64,
    seed: u64,
) -> StationBeams {
    let s = &prep.scenario;
    let run = || -> Result<BeamPair> {
        let w = steering_beamformer(omega, s.n, s.q_bits)?;
        let f = aoa_downlink(prep, trial, u, &w, noise_var, seed)?;
        Ok(BeamPair { f, w })
    };
    match run() {
        Ok(beams) => StationBeams { beams, flagged: false, note: None },
        Err(e) => fallback(s.n, e),
    }
}

/// Runs the requested methods on one seeded trial, sharing pilots between
/// methods that use the same acquisition (AMP with DCS-AMP, ML with GMP).
pub fn run_trial_methods(
    prep: &PreparedScenario,
    methods: &[Method],
    seed: u64,
    opts: &TrialOptions,
) -> Result<Vec<LinkReport>> {
    let s = &prep.scenario;
    let trial = draw_trial(prep, seed)?;
    let snr = s.snr_linear();
    let noise_var = if opts.noiseless_pilots { 0.0 } else { trial.gain / snr };
    let wants = |m: Method| methods.contains(&m);
    let n_users = s.n_rf;
    let mut per_method: Vec<(Method, Vec<StationBeams>)> = Vec::new();

    if wants(Method::PerfectCsi) {
        let beams = (0..n_users).map(|u| from_estimate(&trial.channels[u].subchannels[u], s.q_bits)).collect();
        per_method.push((Method::PerfectCsi, beams));
    }
    if wants(Method::Amp) || wants(Method::DcsAmp) {
        let mut amp = Vec::new();
        let mut dcs = Vec::new();
        for u in 0..n_users {
            match cs_estimate_station(prep, &trial, u, noise_var, seed, wants(Method::DcsAmp)) {
                Ok(est) => {
                    amp.push(from_estimate(&est.amp[u], s.q_bits));
                    if let Some(h) = est.dcs.get(u) {
                        dcs.push(from_estimate(h, s.q_bits));
                    }
                }
                Err(e) => {
                    amp.push(fallback(s.n, e.clone()));
                    dcs.push(fallback(s.n, e));
                }
            }
        }
        if wants(Method::Amp) {
            per_method.push((Method::Amp, amp));
        }
        if wants(Method::DcsAmp) {
            per_method.push((Method::DcsAmp, dcs));
        }
    }
    if wants(Method::Ml) || wants(Method::Gmp) {
        let mut ml = Vec::new();
        let mut gmp = Vec::new();
        for u in 0..n_users {
            match aoa_uplink(prep, &trial, u, noise_var, seed) {
                Ok(up) => {
                    if wants(Method::Ml) {
                        let w = estimate_aoa(&up.likelihoods[u], &prep.grid);
                        ml.push(geometric_beams(prep, &trial, u, w, noise_var, seed));
                    }
                    if wants(Method::Gmp) {
                        let w = estimate_aoa(&up.messages.combined[u], &prep.grid);
                        gmp.push(geometric_beams(prep, &trial, u, w, noise_var, seed));
                    }
                }
                Err(e) => {
                    ml.push(fallback(s.n, e.clone()));
                    gmp.push(fallback(s.n, e));
                }
            }
        }
        if wants(Method::Ml) {
            per_method.push((Method::Ml, ml));
        }
        if wants(Method::Gmp) {
            per_method.push((Method::Gmp, gmp));
        }
    }

    let blocks = trial.blocks();
    let scale = C64::new(1.0 / trial.gain.sqrt(), 0.0);
    let mut reports = Vec::new();
    for &m in methods {
        let Some((_, beams)) = per_method.iter().find(|(pm, _)| *pm == m) else { continue };
        let f: Vec<CVector> = beams.iter().map(|b| b.beams.f.clone()).collect();
        let w: Vec<CVector> = beams.iter().map(|b| b.beams.w.clone()).collect();
        let h_ul = effective_channel(&blocks, &f, &w)?;
        let (sinr, rate) = mmse_sinr_rates(&(&h_ul * scale), snr)?;
        let note = beams.iter().find_map(|b| b.note.clone());
        reports.push(LinkReport {
            method: m,
            seed,
            beams: beams.iter().map(|b| b.beams.clone()).collect(),
            h_ul,
            sinr,
            rate,
            flagged: beams.iter().any(|b| b.flagged),
            note,
        });
    }
    Ok(reports)
}

/// Single-method convenience wrapper around [`run_trial_methods`].
pub fn run_trial(prep: &PreparedScenario, method: Method, seed: u64, opts: &TrialOptions) -> Result<LinkReport> {
    run_trial_methods(prep, &[method], seed, opts)?
        .pop()
        .ok_or_else(|| Error::Numerical("trial produced no report".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::PhaseAlphabet;
    use crate::rng::complex_gaussian;
    use alloc::vec;

    #[test]
    fn mmse_examples() {
        for snr in [0.1, 1.0, 10.0, 1000.0] {
            let (rho, r) = mmse_sinr_rates(&CMatrix::identity(3, 3), snr).unwrap();
            for (x, y) in rho.iter().zip(&r) {
                assert!((x - snr).abs() <= 1e-10 * snr);
                assert_eq!(*y, (1.0 + x).log2());
            }
        }
        let (rho, r) = mmse_sinr_rates(&CMatrix::zeros(2, 2), 10.0).unwrap();
        assert!(rho.iter().chain(&r).all(|v| v.abs() < 1e-12));
        let h = CMatrix::from_row_slice(2, 2, &[
            C64::new(1.0, 0.0), C64::new(0.1, 0.0), C64::new(0.1, 0.0), C64::new(1.0, 0.0),
        ]);
        // hand 2x2 inverse of G = H^H H + I/snr
        let (a, b) = (1.0 + 0.01 + 0.1, 0.2);
        let inv00 = a / (a * a - b * b);
        let (rho, _) = mmse_sinr_rates(&h, 10.0).unwrap();
        assert!((rho[0] - (10.0 / inv00 - 1.0)).abs() < 1e-12);
        assert!((rho[1] - rho[0]).abs() < 1e-12);
        assert!(mmse_sinr_rates(&h, 0.0).is_err());
    }

    #[test]
    fn effective_channel_triple_products() {
        let mut rng = stream(1, 0);
        let blocks: Vec<Vec<CMatrix>> = (0..2)
            .map(|_| (0..2).map(|_| CMatrix::from_fn(4, 4, |_, _| complex_gaussian(&mut rng, 1.0))).collect())
            .collect();
        let f: Vec<CVector> = (0..2).map(|_| CVector::from_fn(4, |_, _| complex_gaussian(&mut rng, 1.0))).collect();
        let w: Vec<CVector> = (0..2).map(|_| CVector::from_fn(4, |_, _| complex_gaussian(&mut rng, 1.0))).collect();
        let h = effective_channel(&blocks, &f, &w).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let mut acc = C64::new(0.0, 0.0);
                for a in 0..4 {
                    for b in 0..4 {
                        acc += w[i][a] * blocks[i][j][(a, b)] * f[j][b];
                    }
                }
                assert!((h[(i, j)] - acc).norm() < 1e-12);
            }
        }
        let single = effective_channel(&[vec![CMatrix::identity(4, 4)]], &f[..1], &w[..1]).unwrap();
        assert!((single[(0, 0)] - w[0].dot(&f[0])).norm() < 1e-12);
    }

    #[test]
    fn svd_beams_on_rank_one_and_identity() {
        let n = 16;
        let a = CVector::from_fn(n, |i, _| C64::from_polar(1.0, 0.7 * i as f64));
        let b = CVector::from_fn(n, |i, _| C64::from_polar(1.0, -0.2 * (i * i) as f64));
        let h = &a * b.adjoint();
        let sigma1 = a.norm() * b.norm();
        let bp = svd_beamformers(&h, 2).unwrap();
        let gain = (bp.w.transpose() * &h * &bp.f)[(0, 0)].norm();
        assert!(gain >= 0.5 * sigma1 - 1e-9);
        let alpha = PhaseAlphabet::new(2, n).unwrap();
        for v in [&bp.f, &bp.w] {
            assert!((v.norm() - 1.0).abs() < 1e-12);
            assert!(v.iter().all(|&c| alpha.contains_phase(c, 1e-12)));
        }
        let bp = svd_beamformers(&CMatrix::identity(4, 4), 2).unwrap();
        assert!((bp.w.transpose() * &bp.f)[(0, 0)].norm() > 0.0);
        assert!(matches!(svd_beamformers(&CMatrix::zeros(4, 4), 2), Err(Error::ZeroChannel)));
    }

    #[test]
    fn svd_beams_against_exhaustive_codebook() {
        // all 4^4 quantized beams per side at N = 4, q = 2
        let n = 4;
        let alpha = PhaseAlphabet::new(2, n).unwrap();
        let codebook: Vec<CVector> = (0..256)
            .map(|code| CVector::from_fn(n, |i, _| alpha.entry((code >> (2 * i)) & 3)))
            .collect();
        for seed in 0..10 {
            let mut rng = stream(seed, 4);
            let h = CMatrix::from_fn(n, n, |_, _| complex_gaussian(&mut rng, 1.0));
            let sigma1 = h.clone().singular_values().max();
            let bp = svd_beamformers(&h, 2).unwrap();
            let gain = (bp.w.transpose() * &h * &bp.f)[(0, 0)].norm();
            let mut best = 0.0f64;
            for w in &codebook {
                let wh = w.transpose() * &h;
                for f in &codebook {
                    best = best.max((&wh * f)[(0, 0)].norm());
                }
            }
            assert!(gain <= best + 1e-12);
            assert!(best <= sigma1 + 1e-12);
            assert!(gain >= 0.5 * best, "seed {seed}: {gain} vs exhaustive {best}");
        }
    }

    #[test]
    fn steering_beam_examples() {
        let w = steering_beamformer(0.0, 16, 2).unwrap();
        assert!(w.iter().all(|c| (c - C64::new(0.25, 0.0)).norm() < 1e-15));
        // sin(omega) = 1/2 advances the phase by pi/2 per element: exact at q = 2
        let w = steering_beamformer((0.5f64).asin(), 16, 2).unwrap();
        let gain = (array_response(16, (0.5f64).asin()).transpose() * &w)[(0, 0)].norm_sqr();
        assert!((gain - 16.0).abs() < 1e-9);
        let mut rng = stream(2, 0);
        for q in 1..=4u32 {
            for _ in 0..200 {
                let omega = rng.gen_range(-1.5..1.5);
                let w = steering_beamformer(omega, 16, q).unwrap();
                let gain = (array_response(16, omega).transpose() * &w)[(0, 0)].norm_sqr();
                let bound = 16.0 * (PI / (1u32 << q) as f64).cos().powi(2);
                assert!(gain >= bound - 1e-9, "q {q}: {gain} < {bound}");
            }
        }
        assert!(steering_beamformer(PI / 2.0, 16, 2).is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("bogus".parse::<Method>().is_err());
    }

    #[test]
    fn trial_is_deterministic_and_stations_distinct() {
        let prep = PreparedScenario::new(Scenario::default()).unwrap();
        let a = draw_trial(&prep, 77).unwrap();
        let b = draw_trial(&prep, 77).unwrap();
        assert_eq!(a.channels[0].h, b.channels[0].h);
        let gammas: Vec<f64> = a.stations.iter().map(|s| s.gamma).collect();
        for i in 0..4 {
            for j in i + 1..4 {
                assert_ne!(gammas[i], gammas[j]);
            }
        }
        let ra = run_trial_methods(&prep, &[Method::Gmp, Method::Amp], 5, &TrialOptions::default()).unwrap();
        let rb = run_trial_methods(&prep, &[Method::Gmp, Method::Amp], 5, &TrialOptions::default()).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(ra[0].method, Method::Gmp);
        for r in &ra {
            for (rho, rate) in r.sinr.iter().zip(&r.rate) {
                assert!(*rho >= 0.0 && *rate == (1.0 + rho).log2());
            }
        }
    }

    #[test]
    fn exact_recovery_matches_perfect_csi() {
        let scn = Scenario { m_pilots: 256, ..Scenario::default() };
        let prep = PreparedScenario::new(scn).unwrap();
        let opts = TrialOptions { noiseless_pilots: true };
        for seed in 0..3 {
            let r = run_trial_methods(&prep, &[Method::PerfectCsi, Method::Amp, Method::DcsAmp], seed, &opts).unwrap();
            for est in &r[1..] {
                for (a, b) in est.rate.iter().zip(&r[0].rate) {
                    assert!((a - b).abs() < 1e-6, "{}: {a} vs {b}", est.method);
                }
            }
        }
    }
}
