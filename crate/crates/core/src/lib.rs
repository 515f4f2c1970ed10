//! Near-field mmWave link configuration.
//!
//! The crate models a subarray-based hybrid-beamforming access point talking
//! to short-range stations whose distance is comparable to the array length.
//! It covers the whole link-configuration pipeline:
//!
//! * [`geometry`] and [`channel`]: element layouts, image-method channel
//!   synthesis, beamspace transforms and rank-one energy metrics.
//! * [`codebook`] and [`acquisition`]: Zadoff-Chu training beams, the spectral
//!   mask, circulant-shift schedules and the FFT-backed partial 2D-DFT operator.
//! * [`dcs_amp`]: Bernoulli-Gaussian AMP and its dynamic (cross-subchannel)
//!   extension with EM parameter learning.
//! * [`geo_mp`]: geometry-aided message passing over local angles of arrival.
//! * [`link_eval`]: beamformer selection, effective multi-user channels, MMSE
//!   SINRs and complete seeded trials.
//!
//! The crate is `no_std` and only needs an allocator.

#![no_std]
// `!(x > 0.0)` style guards are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod acquisition;
pub mod channel;
pub mod codebook;
pub mod dcs_amp;
pub mod fft;
pub mod geo_mp;
pub mod geometry;
pub mod link_eval;
pub mod rng;

mod error;

pub use error::Error;

/// Complex double used throughout.
pub type C64 = num_complex::Complex<f64>;
/// Dense complex matrix (column-major).
pub type CMatrix = nalgebra::DMatrix<C64>;
/// Dense complex column vector.
pub type CVector = nalgebra::DVector<C64>;

pub type Result<T> = core::result::Result<T, Error>;
