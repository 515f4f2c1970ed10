//! Seed derivation and Gaussian sampling.
//!
//! Trial seeds come from a counter-based split of the master seed:
//! `trial_seed(master, i) = splitmix64(master + (i + 1) * 0x9E3779B97F4A7C15)`.
//! Inside a trial, independent purposes (placement, CS pilots, AoA pilots, ...)
//! use distinct ChaCha8 streams of the same key, see [`stream`].
#[allow(unused_imports)]
use num_traits::Float;

use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::C64;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of trial `index` under `master`.
pub fn trial_seed(master: u64, index: u64) -> u64 {
    splitmix64(master.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN)))
}

/// Generator for one purpose within a trial.
pub fn stream(seed: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng
}

/// Standard normal via Box-Muller.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Circularly-symmetric complex Gaussian with total variance `var`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, var: f64) -> C64 {
    let s = (0.5 * var).sqrt();
    C64::new(s * standard_normal(rng), s * standard_normal(rng))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trial_seeds_are_distinct_and_stable() {
        let a: alloc::vec::Vec<u64> = (0..100).map(|i| trial_seed(7, i)).collect();
        let b: alloc::vec::Vec<u64> = (0..100).map(|i| trial_seed(7, i)).collect();
        assert_eq!(a, b);
        let mut s = a.clone();
        s.sort_unstable();
        s.dedup();
        assert_eq!(s.len(), 100);
    }

    #[test]
    fn complex_gaussian_variance() {
        let mut rng = stream(1, 0);
        let n = 20000;
        let mut acc = 0.0;
        for _ in 0..n {
            acc += complex_gaussian(&mut rng, 2.0).norm_sqr();
        }
        let v = acc / n as f64;
        assert!((v - 2.0).abs() < 0.06, "{v}");
    }
}
