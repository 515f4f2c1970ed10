//! Geometry-aided message passing over local angles of arrival.
//!
//! Each AP subarray `k` has a local AoA `omega_k` in the steering convention
//! of [`array_response`]. Under that convention `omega_k` is the negated
//! bearing of the station from subarray `k`, so the geometry factor between
//! adjacent subarrays is evaluated with negated midpoint offsets; see
//! [`factor_offsets`]. Beliefs live on a uniform [`AngularGrid`]; products
//! fall back to log-domain arithmetic when they underflow.
#[allow(unused_imports)]
use num_traits::Float;

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, PI};

use nalgebra::DMatrix;

use crate::acquisition::{gain_compensate, GAIN_FLOOR};
use crate::channel::array_response;
use crate::error::{invalid, Error};
use crate::geometry::{subarray_bearing, ApLayout, StaPlacement};
use crate::{CMatrix, CVector, Result, C64};

/// Angles `k * delta * pi` for `k = -K..=K`, strictly inside `(-pi/2, pi/2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularGrid {
    /// Spacing as a fraction of `pi`.
    pub delta: f64,
    pub angles: Vec<f64>,
}

impl AngularGrid {
    pub fn new(delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 0.5) {
            return Err(invalid("grid spacing must lie in (0, 1/2)"));
        }
        let half = (1.0 / (2.0 * delta)).ceil() as i64 - 1;
        let angles = (-half..=half).map(|k| k as f64 * delta * PI).collect();
        Ok(AngularGrid { delta, angles })
    }

    /// Grid with spacing given in degrees.
    pub fn from_degrees(deg: f64) -> Result<Self> {
        Self::new(deg / 180.0)
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn step(&self) -> f64 {
        self.delta * PI
    }

    /// Nearest grid index; angles past either end clamp to the edge bin.
    pub fn nearest(&self, angle: f64) -> usize {
        let half = (self.len() / 2) as f64;
        let idx = (angle / self.step()).round() + half;
        idx.clamp(0.0, (self.len() - 1) as f64) as usize
    }
}

/// Probability mass over the grid angles.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularBelief {
    pub weights: Vec<f64>,
}

impl AngularBelief {
    pub fn uniform(len: usize) -> Self {
        AngularBelief { weights: vec![1.0 / len as f64; len] }
    }

    pub fn point(len: usize, at: usize) -> Self {
        let mut weights = vec![0.0; len];
        weights[at] = 1.0;
        AngularBelief { weights }
    }

    /// Normalizes log weights with one max subtraction; `None` if every
    /// entry is `-inf` or NaN.
    pub fn from_log(log_w: &[f64]) -> Option<Self> {
        let max = log_w.iter().cloned().filter(|v| !v.is_nan()).fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return None;
        }
        let w: Vec<f64> = log_w.iter().map(|&v| if v.is_nan() { 0.0 } else { (v - max).exp() }).collect();
        let sum: f64 = w.iter().sum();
        Some(AngularBelief { weights: w.into_iter().map(|v| v / sum).collect() })
    }

    pub fn log_weights(&self) -> Vec<f64> {
        self.weights.iter().map(|w| w.ln()).collect()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Grid angle of maximum weight; ties go to the smaller angle.
pub fn estimate_aoa(belief: &AngularBelief, grid: &AngularGrid) -> f64 {
    let mut best = 0;
    for (i, &w) in belief.weights.iter().enumerate() {
        if w > belief.weights[best] {
            best = i;
        }
    }
    grid.angles[best]
}

/// `p(omega) ∝ exp(-|alpha|^2 ||y - Psi a(omega)||^2 / sigma^2)` on the grid.
/// A zero noise variance yields a point mass on the best-fitting angle.
pub fn aoa_likelihood(
    y_tilde: &CVector,
    psi: &CMatrix,
    alpha: C64,
    noise_var: f64,
    grid: &AngularGrid,
) -> Result<AngularBelief> {
    if psi.nrows() != y_tilde.len() {
        return Err(Error::Dimension("probe rows do not match the measurements".into()));
    }
    let n = psi.ncols();
    let resid: Vec<f64> = grid
        .angles
        .iter()
        .map(|&w| (y_tilde - psi * array_response(n, w)).norm_squared())
        .collect();
    if noise_var == 0.0 {
        let mut best = 0;
        for (i, &r) in resid.iter().enumerate() {
            if r < resid[best] {
                best = i;
            }
        }
        return Ok(AngularBelief::point(grid.len(), best));
    }
    let scale = alpha.norm_sqr() / noise_var;
    let log_w: Vec<f64> = resid.iter().map(|r| -scale * r).collect();
    AngularBelief::from_log(&log_w).ok_or_else(|| Error::Numerical("degenerate likelihood".into()))
}

/// Gain-compensated likelihood of raw probe measurements; falls back to a
/// uniform belief when the gain estimate trips the floor.
pub fn probe_likelihood(
    y: &CVector,
    psi: &CMatrix,
    noise_var: f64,
    grid: &AngularGrid,
) -> Result<(AngularBelief, bool)> {
    match gain_compensate(y, psi[(0, 0)], GAIN_FLOOR) {
        Ok((alpha, y_tilde)) => Ok((aoa_likelihood(&y_tilde, psi, alpha, noise_var, grid)?, true)),
        Err(Error::GainBelowFloor) => Ok((AngularBelief::uniform(grid.len()), false)),
        Err(e) => Err(e),
    }
}

/// Maps the local AoA of subarray `a` to that of subarray `b` for a station
/// at distance `d` from the AP midpoint.
pub fn geometry_map(omega_a: f64, d: f64, l_a: f64, l_b: f64) -> Result<f64> {
    let (s, c) = omega_a.sin_cos();
    let disc = d * d - l_a * l_a * c * c;
    if !(disc >= 0.0) {
        return Err(Error::Infeasible);
    }
    let d1 = -l_a * s + disc.sqrt();
    if !(d1 > 0.0) {
        return Err(Error::Infeasible);
    }
    Ok(((l_a - l_b + d1 * s) / (d1 * c)).atan())
}

/// Offsets to pass to [`geometry_map`] for each subarray of `ap`.
pub fn factor_offsets(ap: &ApLayout) -> Vec<f64> {
    ap.subarray_offsets.iter().map(|l| -l).collect()
}

/// True local AoA at AP subarray `k` under the steering convention.
pub fn ap_local_aoa(ap: &ApLayout, sta: &StaPlacement, k: usize) -> f64 {
    -subarray_bearing(ap, sta, k)
}

/// True local AoA at the station toward AP subarray `k`.
pub fn sta_local_aoa(ap: &ApLayout, sta: &StaPlacement, k: usize) -> f64 {
    let center = nalgebra::Point2::new(ap.subarray_offsets[k], 0.0);
    let u = (center - sta.midpoint).normalize();
    (-sta.axis().dot(&u)).clamp(-1.0, 1.0).asin()
}

/// Conditional `p_g(omega_out | omega_in)` with rows indexed by `omega_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryFactorTable {
    pub table: DMatrix<f64>,
    pub d_min: f64,
    pub d_max: f64,
    pub l_a: f64,
    pub l_b: f64,
}

pub fn build_factor_table(
    grid: &AngularGrid,
    d_min: f64,
    d_max: f64,
    l_a: f64,
    l_b: f64,
    n_samples: usize,
) -> Result<GeometryFactorTable> {
    if !(d_min > 0.0 && d_min <= d_max) || n_samples == 0 {
        return Err(invalid("need 0 < d_min <= d_max and at least one sample"));
    }
    let g = grid.len();
    let mut table = DMatrix::zeros(g, g);
    let width = d_max - d_min;
    for (i, &w) in grid.angles.iter().enumerate() {
        let mut mass = 0.0;
        for s in 0..n_samples {
            let r = d_min + (s as f64 + 0.5) * width / n_samples as f64;
            if let Ok(out) = geometry_map(w, r, l_a, l_b) {
                table[(i, grid.nearest(out))] += 1.0;
                mass += 1.0;
            }
        }
        for j in 0..g {
            table[(i, j)] = if mass > 0.0 { table[(i, j)] / mass } else { 1.0 / g as f64 };
        }
    }
    Ok(GeometryFactorTable { table, d_min, d_max, l_a, l_b })
}

/// Forward and backward tables for a chain of subarrays; `fwd[k]` maps node
/// `k` to `k + 1` and `bwd[k]` maps node `k + 1` back to `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorChain {
    pub fwd: Vec<GeometryFactorTable>,
    pub bwd: Vec<GeometryFactorTable>,
}

impl FactorChain {
    pub fn build(
        grid: &AngularGrid,
        offsets: &[f64],
        d_min: f64,
        d_max: f64,
        n_samples: usize,
    ) -> Result<Self> {
        let mut fwd = Vec::new();
        let mut bwd = Vec::new();
        for w in offsets.windows(2) {
            fwd.push(build_factor_table(grid, d_min, d_max, w[0], w[1], n_samples)?);
            bwd.push(build_factor_table(grid, d_min, d_max, w[1], w[0], n_samples)?);
        }
        Ok(FactorChain { fwd, bwd })
    }
}

/// Per-node messages and the combined belief.
#[derive(Debug, Clone, PartialEq)]
pub struct MessagePassing {
    pub fwd_in: Vec<AngularBelief>,
    pub bwd_in: Vec<AngularBelief>,
    pub combined: Vec<AngularBelief>,
}

/// `out[j] = sum_i msg[i] * t[i, j]`.
fn propagate(msg: &AngularBelief, t: &DMatrix<f64>) -> AngularBelief {
    let g = msg.len();
    let mut out = vec![0.0; g];
    for (j, o) in out.iter_mut().enumerate() {
        let col = t.column(j);
        let mut acc = 0.0;
        for i in 0..g {
            acc += msg.weights[i] * col[i];
        }
        *o = acc;
    }
    let sum: f64 = out.iter().sum();
    if sum > 0.0 {
        for o in &mut out {
            *o /= sum;
        }
        AngularBelief { weights: out }
    } else {
        AngularBelief::uniform(g)
    }
}

/// Normalized product of beliefs; falls back to `fallback` when the
/// product vanishes everywhere.
fn log_product(parts: &[&AngularBelief], fallback: &AngularBelief) -> AngularBelief {
    let g = fallback.len();
    // direct product with per-part peak scaling; the log domain is only
    // needed when the peaks do not overlap and the product underflows
    let mut w = vec![1.0; g];
    for p in parts {
        let peak = p.weights.iter().cloned().fold(0.0, f64::max);
        if !(peak > 0.0) {
            return fallback.clone();
        }
        for (o, v) in w.iter_mut().zip(&p.weights) {
            *o *= v / peak;
        }
    }
    let sum: f64 = w.iter().sum();
    if sum > 1e-200 && sum.is_finite() {
        for o in &mut w {
            *o /= sum;
        }
        return AngularBelief { weights: w };
    }
    let mut log_w = vec![0.0; g];
    for p in parts {
        for (l, w) in log_w.iter_mut().zip(&p.weights) {
            *l += w.ln();
        }
    }
    AngularBelief::from_log(&log_w).unwrap_or_else(|| fallback.clone())
}

/// One forward and one backward pass over the subarray chain.
pub fn forward_backward(likelihoods: &[AngularBelief], chain: &FactorChain) -> Result<MessagePassing> {
    let k_nodes = likelihoods.len();
    if k_nodes == 0 || chain.fwd.len() + 1 != k_nodes || chain.bwd.len() + 1 != k_nodes {
        return Err(Error::Dimension("need N_RF - 1 forward and backward tables".into()));
    }
    let g = likelihoods[0].len();
    if likelihoods.iter().any(|l| l.len() != g)
        || chain.fwd.iter().chain(&chain.bwd).any(|t| t.table.shape() != (g, g))
    {
        return Err(Error::Dimension("beliefs and tables use different grids".into()));
    }
    let mut fwd_in = vec![AngularBelief::uniform(g)];
    for k in 0..k_nodes - 1 {
        let out = log_product(&[&likelihoods[k], &fwd_in[k]], &likelihoods[k]);
        fwd_in.push(propagate(&out, &chain.fwd[k].table));
    }
    let mut bwd_in = vec![AngularBelief::uniform(g); k_nodes];
    for k in (1..k_nodes).rev() {
        let out = log_product(&[&likelihoods[k], &bwd_in[k]], &likelihoods[k]);
        bwd_in[k - 1] = propagate(&out, &chain.bwd[k - 1].table);
    }
    let combined = (0..k_nodes)
        .map(|k| log_product(&[&likelihoods[k], &fwd_in[k], &bwd_in[k]], &likelihoods[k]))
        .collect();
    Ok(MessagePassing { fwd_in, bwd_in, combined })
}

/// Downlink ML AoA at a station from `M_STA` probe measurements.
pub fn sta_ml_aoa(
    y: &CVector,
    psi: &CMatrix,
    noise_var: f64,
    grid: &AngularGrid,
) -> Result<(f64, AngularBelief)> {
    let (belief, _) = probe_likelihood(y, psi, noise_var, grid)?;
    Ok((estimate_aoa(&belief, grid), belief))
}

/// Whether `angle` lies strictly inside the visible half-plane.
pub fn is_visible(angle: f64) -> bool {
    angle.abs() < FRAC_PI_2
}
