//! Zadoff-Chu training beams, circulant shifts, the spectral mask and q-bit
//! phase quantization.
#[allow(unused_imports)]
use num_traits::Float;

use alloc::vec::Vec;
use core::f64::consts::PI;


use crate::error::Error;
use crate::fft::dft_in_place;
use crate::{CMatrix, CVector, Result, C64};

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Unit-norm Zadoff-Chu sequence of length `n` and root `root`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZcSequence {
    pub z: CVector,
    pub root: usize,
}

impl ZcSequence {
    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    /// `J_l z`.
    pub fn shifted(&self, l: usize) -> CVector {
        circulant_shift(&self.z, l)
    }

    /// `sqrt(N) U z`, the diagonal of the spectral mask.
    pub fn scaled_dft(&self) -> CVector {
        let n = self.len();
        let mut buf: Vec<C64> = self.z.iter().cloned().collect();
        dft_in_place(&mut buf, false);
        let s = (n as f64).sqrt();
        CVector::from_iterator(n, buf.into_iter().map(|c| c * s))
    }
}

pub fn zc_sequence(n: usize, root: usize) -> Result<ZcSequence> {
    if n == 0 || root == 0 || gcd(n, root) != 1 {
        return Err(Error::NotCoprime { n, root });
    }
    let scale = 1.0 / (n as f64).sqrt();
    let t = root as u128;
    let period = 2 * n as u128;
    // reduce the exponent modulo 2n exactly so large k keeps full precision
    let z = CVector::from_fn(n, |k, _| {
        let k = k as u128;
        let num = if n.is_multiple_of(2) { t * k * k } else { t * k * (k + 1) } % period;
        C64::from_polar(scale, PI * num as f64 / n as f64)
    });
    Ok(ZcSequence { z, root })
}

/// `(J_l v)[i] = v[(i + l) mod N]`: `J` has first row `(0, 1, 0, ..., 0)`.
pub fn circulant_shift(v: &CVector, l: usize) -> CVector {
    let n = v.len();
    if n == 0 {
        return v.clone();
    }
    let l = l % n;
    CVector::from_fn(n, |i, _| v[(i + l) % n])
}

/// Diagonal `Lambda = diag(sqrt(N) U z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralMask {
    pub diag: CVector,
}

pub fn spectral_mask(z: &ZcSequence) -> Result<SpectralMask> {
    let diag = z.scaled_dft();
    let dev = diag.iter().map(|c| (c.norm() - 1.0).abs()).fold(0.0, f64::max);
    if dev > 1e-6 {
        return Err(Error::MaskNotUnimodular(dev));
    }
    Ok(SpectralMask { diag })
}

impl SpectralMask {
    /// `Lambda X Lambda`.
    pub fn apply(&self, x: &CMatrix) -> CMatrix {
        CMatrix::from_fn(x.nrows(), x.ncols(), |r, c| self.diag[r] * x[(r, c)] * self.diag[c])
    }

    /// `Lambda^{-1} S Lambda^{-1}`.
    pub fn unapply(&self, s: &CMatrix) -> CMatrix {
        CMatrix::from_fn(s.nrows(), s.ncols(), |r, c| s[(r, c)] / (self.diag[r] * self.diag[c]))
    }
}

/// The `2^q` phase-shifter values `e^{j 2 pi l / 2^q} / sqrt(N)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhaseAlphabet {
    pub q: u32,
    pub n: usize,
}

impl PhaseAlphabet {
    pub fn new(q: u32, n: usize) -> Result<Self> {
        if q == 0 || q > 16 || n == 0 {
            return Err(crate::error::invalid("need 1 <= q <= 16 and n >= 1"));
        }
        Ok(PhaseAlphabet { q, n })
    }

    pub fn size(&self) -> usize {
        1 << self.q
    }

    pub fn step(&self) -> f64 {
        2.0 * PI / self.size() as f64
    }

    pub fn entry(&self, index: usize) -> C64 {
        C64::from_polar(1.0 / (self.n as f64).sqrt(), self.step() * (index % self.size()) as f64)
    }

    pub fn entries(&self) -> Vec<C64> {
        (0..self.size()).map(|l| self.entry(l)).collect()
    }

    /// Nearest alphabet index to the phase of `c`; ties go to the smaller
    /// index (the wrap-around tie goes to 0) and zero maps to 0.
    pub fn index_of(&self, c: C64) -> usize {
        if c == C64::new(0.0, 0.0) {
            return 0;
        }
        let size = self.size();
        let mut phase = c.arg();
        if phase < 0.0 {
            phase += 2.0 * PI;
        }
        let x = phase / self.step();
        let lo = x.floor();
        let frac = x - lo;
        let lo = lo as usize % size;
        let hi = (lo + 1) % size;
        if (frac - 0.5).abs() < 1e-12 {
            lo.min(hi)
        } else if frac < 0.5 {
            lo
        } else {
            hi
        }
    }

    /// Whether the phase of `c` lies on the alphabet (within `tol` radians).
    pub fn contains_phase(&self, c: C64, tol: f64) -> bool {
        let diff = (c * self.entry(self.index_of(c)).conj()).arg().abs();
        diff <= tol
    }
}

pub fn phase_quantize(v: &CVector, q: u32) -> Result<CVector> {
    let alphabet = PhaseAlphabet::new(q, v.len().max(1))?;
    Ok(v.map(|c| alphabet.entry(alphabet.index_of(c))))
}

/// Checks that every entry of every circulant shift of `z` has its phase in
/// the q-bit alphabet. Shifts only permute entries, so checking `z` suffices.
pub fn is_realizable(z: &ZcSequence, q: u32) -> Result<bool> {
    let alphabet = PhaseAlphabet::new(q, z.len())?;
    Ok(z.z.iter().all(|&c| alphabet.contains_phase(c, 1e-9)))
}
