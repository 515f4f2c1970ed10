//! Pilot schedules and measurement models.
//!
//! Two pipelines share this module: random circulant shifts of a ZC
//! sequence feeding compressive recovery through a partial 2D-DFT operator,
//! and AoA probing with a sign-flipped twin probe for gain compensation.
//!
//! Index convention: with `(J_l v)[i] = v[(i + l) mod N]`, the DFT of a
//! shifted sequence satisfies `U J_l z = diag(U e_{-l}) sqrt(N) U z`, so the
//! beam pair `(J_r z, J_c z)` observes the masked beamspace at DFT bin
//! `(-r mod N, -c mod N)`. [`CsOperator::from_schedule`] applies that
//! negation so the compressive model reproduces the beam-level measurement.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::codebook::ZcSequence;
use crate::error::{invalid, Error};
use crate::fft::{fft2, ifft2};
use crate::rng::complex_gaussian;
use crate::{CMatrix, CVector, Result, C64};

/// Circulant-shift indices: `c[m]` at the STA and `r[k][m]` at subarray `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShiftSchedule {
    pub n: usize,
    pub c: Vec<usize>,
    pub r: Vec<Vec<usize>>,
}

impl ShiftSchedule {
    pub fn len(&self) -> usize {
        self.c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c.is_empty()
    }

    pub fn n_rf(&self) -> usize {
        self.r.len()
    }

    /// True when every subarray samples pairwise-distinct coordinates.
    pub fn coordinates_distinct(&self) -> bool {
        self.r.iter().all(|rk| {
            let mut seen = alloc::vec![false; self.n * self.n];
            rk.iter().zip(&self.c).all(|(&r, &c)| {
                let idx = r * self.n + c;
                !core::mem::replace(&mut seen[idx], true)
            })
        })
    }
}

/// Draws `m` slots. `c[m]` is uniform; each `r_k[m]` is uniform over the AP
/// shifts not yet paired with `c[m]` on subarray `k`. A full `m = n^2`
/// schedule is the deterministic row-major sweep.
pub fn draw_schedule<R: Rng + ?Sized>(
    m: usize,
    n: usize,
    n_rf: usize,
    rng: &mut R,
) -> Result<ShiftSchedule> {
    if n == 0 || n_rf == 0 {
        return Err(invalid("schedule needs n >= 1 and n_rf >= 1"));
    }
    if m > n * n {
        return Err(invalid(format!("{m} slots exceed the {} distinct coordinates", n * n)));
    }
    if m == n * n {
        let c = (0..m).map(|i| i % n).collect();
        let r = alloc::vec![(0..m).map(|i| i / n).collect(); n_rf];
        return Ok(ShiftSchedule { n, c, r });
    }
    // used[k][c][r]: coordinate (r, c) already sampled on subarray k
    let mut used: Vec<Vec<Vec<bool>>> = alloc::vec![alloc::vec![alloc::vec![false; n]; n]; n_rf];
    let mut c_out = Vec::with_capacity(m);
    let mut r_out: Vec<Vec<usize>> = alloc::vec![Vec::with_capacity(m); n_rf];
    for slot in 0..m {
        let mut chosen = None;
        for _ in 0..64 {
            let c = rng.gen_range(0..n);
            if used.iter().all(|uk| uk[c].iter().any(|&u| !u)) {
                chosen = Some(c);
                break;
            }
        }
        let c = chosen.ok_or(Error::ScheduleExhausted(slot))?;
        for k in 0..n_rf {
            let free: Vec<usize> = (0..n).filter(|&r| !used[k][c][r]).collect();
            let r = free[rng.gen_range(0..free.len())];
            used[k][c][r] = true;
            r_out[k].push(r);
        }
        c_out.push(c);
    }
    Ok(ShiftSchedule { n, c: c_out, r: r_out })
}

/// Noisy measurements per subarray (or per station on the downlink).
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementBatch {
    pub y: Vec<CVector>,
    pub noise_var: f64,
}

/// `y_k[m] = w_k[m]^T H_k f[m] + v_k[m]` with `v ~ CN(0, noise_var)`.
/// `w[k][m]` is the receive beam of subarray `k` in slot `m`.
pub fn measure<R: Rng + ?Sized>(
    subchannels: &[CMatrix],
    f: &[CVector],
    w: &[Vec<CVector>],
    noise_var: f64,
    rng: &mut R,
) -> Result<MeasurementBatch> {
    if !(noise_var >= 0.0) {
        return Err(invalid("noise variance must be nonnegative"));
    }
    if w.len() != subchannels.len() {
        return Err(Error::Dimension(format!(
            "{} beam sets for {} subchannels",
            w.len(),
            subchannels.len()
        )));
    }
    let mut y = Vec::with_capacity(subchannels.len());
    for (hk, wk) in subchannels.iter().zip(w) {
        if wk.len() != f.len() {
            return Err(Error::Dimension("receive and transmit slot counts differ".into()));
        }
        let mut yk = CVector::zeros(f.len());
        for (m, (fm, wm)) in f.iter().zip(wk).enumerate() {
            if fm.len() != hk.ncols() || wm.len() != hk.nrows() {
                return Err(Error::Dimension("beam length does not match channel".into()));
            }
            let clean = (wm.transpose() * hk * fm)[(0, 0)];
            yk[m] = clean + complex_gaussian(rng, noise_var);
        }
        y.push(yk);
    }
    Ok(MeasurementBatch { y, noise_var })
}

/// Shift-pilot acquisition of every subchannel: the STA sends `J_{c[m]} z`
/// while subarray `k` combines with `J_{r_k[m]} z`.
pub fn measure_shifts<R: Rng + ?Sized>(
    subchannels: &[CMatrix],
    schedule: &ShiftSchedule,
    z: &ZcSequence,
    noise_var: f64,
    rng: &mut R,
) -> Result<MeasurementBatch> {
    if schedule.n_rf() != subchannels.len() {
        return Err(Error::Dimension("schedule and channel disagree on N_RF".into()));
    }
    let f: Vec<CVector> = schedule.c.iter().map(|&c| z.shifted(c)).collect();
    let w: Vec<Vec<CVector>> =
        schedule.r.iter().map(|rk| rk.iter().map(|&r| z.shifted(r)).collect()).collect();
    measure(subchannels, &f, &w, noise_var, rng)
}

/// Partial 2D-DFT: `y[m] = (U S U)[rows[m], cols[m]]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsOperator {
    pub n: usize,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
}

impl CsOperator {
    pub fn new(n: usize, rows: Vec<usize>, cols: Vec<usize>) -> Result<Self> {
        if rows.len() != cols.len() || rows.iter().chain(&cols).any(|&i| i >= n) {
            return Err(invalid("sample coordinates must pair up and lie in [0, n)"));
        }
        Ok(CsOperator { n, rows, cols })
    }

    /// Operator observed by subarray `k` under a shift schedule.
    pub fn from_schedule(schedule: &ShiftSchedule, k: usize) -> Self {
        let n = schedule.n;
        let neg = |i: usize| (n - i % n) % n;
        CsOperator {
            n,
            rows: schedule.r[k].iter().map(|&r| neg(r)).collect(),
            cols: schedule.c.iter().map(|&c| neg(c)).collect(),
        }
    }

    pub fn m(&self) -> usize {
        self.rows.len()
    }

    /// Whether every one of the `n^2` coordinates is sampled exactly once,
    /// making the operator unitary.
    pub fn is_complete(&self) -> bool {
        if self.m() != self.n * self.n {
            return false;
        }
        let mut seen = alloc::vec![false; self.m()];
        self.rows.iter().zip(&self.cols).all(|(&r, &c)| !core::mem::replace(&mut seen[r * self.n + c], true))
    }

    pub fn forward(&self, s: &CMatrix) -> CVector {
        let full = fft2(s);
        CVector::from_iterator(self.m(), self.rows.iter().zip(&self.cols).map(|(&r, &c)| full[(r, c)]))
    }

    pub fn adjoint(&self, y: &CVector) -> CMatrix {
        let mut e = CMatrix::zeros(self.n, self.n);
        for ((&r, &c), &v) in self.rows.iter().zip(&self.cols).zip(y.iter()) {
            e[(r, c)] += v;
        }
        ifft2(&e)
    }
}

/// AoA probe matrix (`m_ap x n`): rows `0..m_ap-1` are distinct random
/// circulant shifts of `z`; the last row is row 0 with every entry but the
/// first negated.
pub fn aoa_probe_schedule<R: Rng + ?Sized>(
    m_ap: usize,
    n: usize,
    z: &ZcSequence,
    rng: &mut R,
) -> Result<CMatrix> {
    if m_ap < 2 {
        return Err(invalid("AoA probing needs at least two probes"));
    }
    if m_ap - 1 > n || z.len() != n {
        return Err(invalid(format!("{} distinct shifts requested from length {n}", m_ap - 1)));
    }
    // partial Fisher-Yates for distinct shifts
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..m_ap - 1 {
        let j = rng.gen_range(i..n);
        pool.swap(i, j);
    }
    let mut psi = CMatrix::zeros(m_ap, n);
    for (row, &l) in pool[..m_ap - 1].iter().enumerate() {
        let s = z.shifted(l);
        for col in 0..n {
            psi[(row, col)] = s[col];
        }
    }
    for col in 0..n {
        let sign = if col == 0 { 1.0 } else { -1.0 };
        psi[(m_ap - 1, col)] = psi[(0, col)] * sign;
    }
    Ok(psi)
}

/// Default relative floor on `|alpha|^2` against the mean measurement power.
pub const GAIN_FLOOR: f64 = 1e-6;

/// `alpha = (y[0] + y[M-1]) / (2 w)`, returning `(alpha, y / alpha)`.
pub fn gain_compensate(y: &CVector, w_tilde: C64, floor: f64) -> Result<(C64, CVector)> {
    let m = y.len();
    if m < 2 {
        return Err(invalid("gain compensation needs at least two measurements"));
    }
    if w_tilde == C64::new(0.0, 0.0) {
        return Err(invalid("probe reference entry is zero"));
    }
    let alpha = (y[0] + y[m - 1]) / (w_tilde * 2.0);
    let mean_power = y.iter().map(|c| c.norm_sqr()).sum::<f64>() / m as f64;
    if !(alpha.norm_sqr() >= floor * mean_power) || alpha.norm_sqr() == 0.0 {
        return Err(Error::GainBelowFloor);
    }
    Ok((alpha, y.map(|c| c / alpha)))
}

/// Mean per-measurement channel power `E|w^T H f|^2` under uniformly random
/// unit-norm ZC shifts, which equals `||H||_F^2 / N^2` by the CAZAC property.
pub fn reference_gain(subchannels: &[CMatrix]) -> f64 {
    if subchannels.is_empty() {
        return 0.0;
    }
    let total: f64 = subchannels
        .iter()
        .map(|h| h.norm_squared() / (h.nrows() * h.ncols()) as f64)
        .sum();
    total / subchannels.len() as f64
}
