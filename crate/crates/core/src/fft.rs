//! Unitary DFTs used by the beamspace transforms and the CS operator.
//!
//! `U_N(a, b) = exp(-j 2 pi a b / N) / sqrt(N)`. Power-of-two lengths use an
//! iterative radix-2 transform; other lengths fall back to the direct sum.
#[allow(unused_imports)]
use num_traits::Float;

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::{CMatrix, C64};

/// Precomputed transform of one length.
struct Plan {
    n: usize,
    /// `exp(-j 2 pi k / n)` and its conjugate for `k < n / 2` (radix-2 lengths only).
    fwd: Vec<C64>,
    inv: Vec<C64>,
    bit_rev: Vec<usize>,
}

impl Plan {
    fn new(n: usize) -> Self {
        if !n.is_power_of_two() || n < 2 {
            return Plan { n, fwd: Vec::new(), inv: Vec::new(), bit_rev: Vec::new() };
        }
        let fwd: Vec<C64> = (0..n / 2).map(|k| C64::from_polar(1.0, -2.0 * PI * k as f64 / n as f64)).collect();
        let inv = fwd.iter().map(|w| w.conj()).collect();
        let bits = n.trailing_zeros();
        let bit_rev = (0..n).map(|i| i.reverse_bits() >> (usize::BITS - bits)).collect();
        Plan { n, fwd, inv, bit_rev }
    }

    /// Unnormalized transform; callers apply the `1/sqrt(n)` factors.
    fn run_unscaled(&self, buf: &mut [C64], inverse: bool) {
        if self.n <= 1 {
            return;
        }
        if self.bit_rev.is_empty() {
            let out = naive(buf, inverse);
            buf.copy_from_slice(&out);
            return;
        }
        for (i, &j) in self.bit_rev.iter().enumerate() {
            if j > i {
                buf.swap(i, j);
            }
        }
        for pair in buf.chunks_exact_mut(2) {
            let (a, b) = (pair[0], pair[1]);
            pair[0] = a + b;
            pair[1] = a - b;
        }
        let tw = if inverse { &self.inv } else { &self.fwd };
        let mut len = 4;
        while len <= self.n {
            let half = len / 2;
            let stride = self.n / len;
            for chunk in buf.chunks_exact_mut(len) {
                let (lo, hi) = chunk.split_at_mut(half);
                for (k, (a, b)) in lo.iter_mut().zip(hi.iter_mut()).enumerate() {
                    let t = *b * tw[k * stride];
                    *b = *a - t;
                    *a += t;
                }
            }
            len <<= 1;
        }
    }
}

/// In-place unitary DFT (`inverse = false`) or its adjoint.
pub fn dft_in_place(buf: &mut [C64], inverse: bool) {
    Plan::new(buf.len()).run_unscaled(buf, inverse);
    let scale = 1.0 / (buf.len() as f64).sqrt();
    for v in buf.iter_mut() {
        *v *= scale;
    }
}

fn naive(buf: &[C64], inverse: bool) -> Vec<C64> {
    let n = buf.len();
    let sign = if inverse { 1.0 } else { -1.0 };
    (0..n)
        .map(|k| {
            buf.iter().enumerate().fold(C64::new(0.0, 0.0), |acc, (i, &x)| {
                let ph = sign * 2.0 * PI * ((i * k) % n) as f64 / n as f64;
                acc + x * C64::from_polar(1.0, ph)
            })
        })
        .collect()
}

/// Dense unitary DFT matrix `U_N`.
pub fn dft_matrix(n: usize) -> CMatrix {
    let scale = 1.0 / (n as f64).sqrt();
    CMatrix::from_fn(n, n, |a, b| {
        C64::from_polar(scale, -2.0 * PI * ((a * b) % n) as f64 / n as f64)
    })
}

fn transform_2d(m: &CMatrix, inverse: bool) -> CMatrix {
    let mut out = m.clone();
    let (rows, cols) = out.shape();
    if rows == 0 || cols == 0 {
        return out;
    }
    let col_plan = Plan::new(rows);
    // column-major storage: each column is a contiguous run
    for col in out.as_mut_slice().chunks_exact_mut(rows) {
        col_plan.run_unscaled(col, inverse);
    }
    let row_plan = if cols == rows { col_plan } else { Plan::new(cols) };
    let scale = 1.0 / ((rows * cols) as f64).sqrt();
    let mut row = alloc::vec![C64::new(0.0, 0.0); cols];
    let data = out.as_mut_slice();
    for r in 0..rows {
        for (c, slot) in row.iter_mut().enumerate() {
            *slot = data[c * rows + r];
        }
        row_plan.run_unscaled(&mut row, inverse);
        for (c, v) in row.iter().enumerate() {
            data[c * rows + r] = *v * scale;
        }
    }
    out
}

/// `U M U` for square or rectangular `M` (each axis transformed with its own size).
pub fn fft2(m: &CMatrix) -> CMatrix {
    transform_2d(m, false)
}

/// `U^H M U^H`, the inverse of [`fft2`].
pub fn ifft2(m: &CMatrix) -> CMatrix {
    transform_2d(m, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::complex_gaussian;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, seed: u64) -> CMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CMatrix::from_fn(n, n, |_, _| complex_gaussian(&mut rng, 1.0))
    }

    #[test]
    fn fast_path_matches_dense_matrix() {
        for &n in &[1usize, 2, 4, 6, 16, 12] {
            let x = random_matrix(n, n as u64);
            let u = dft_matrix(n);
            let dense = &u * &x * &u;
            let fast = fft2(&x);
            assert!((dense - &fast).norm() < 1e-12 * (1.0 + x.norm()), "n={n}");
            let back = ifft2(&fast);
            assert!((back - x).norm() < 1e-12);
        }
    }

    #[test]
    fn dft_matrix_is_unitary() {
        let u = dft_matrix(16);
        let eye = u.adjoint() * &u;
        assert!((eye - CMatrix::identity(16, 16)).norm() < 1e-12);
    }
}
