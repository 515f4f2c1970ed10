//! Antenna layouts in the common horizontal plane.
//!
//! Coordinates are `(x, y)` in meters: `x` runs along the AP array axis and
//! `y` along the AP broadside normal, with the AP midpoint at the origin.
//! A station bearing `gamma` is measured from the normal, positive toward
//! increasing `x`; the station tilt `theta` is measured from the `x` axis.
#[allow(unused_imports)]
use num_traits::Float;

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, Point2, Vector2};

use crate::error::Error;
use crate::Result;

/// Subarray-based AP: `n_rf` half-wavelength ULAs of `n` elements on the x axis.
#[derive(Debug, Clone, PartialEq)]
pub struct ApLayout {
    pub element_positions: Vec<Point2<f64>>,
    /// Signed x offset of each subarray midpoint from the AP midpoint.
    pub subarray_offsets: Vec<f64>,
    pub n_per_subarray: usize,
    pub n_subarrays: usize,
    pub wavelength: f64,
    /// Edge-to-edge gap between consecutive subarrays.
    pub gap: f64,
}

impl ApLayout {
    pub fn span(&self) -> f64 {
        let xs = self.element_positions.iter().map(|p| p.x);
        let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
        let min = xs.fold(f64::INFINITY, f64::min);
        max - min
    }

    /// Element positions of subarray `k`.
    pub fn subarray(&self, k: usize) -> &[Point2<f64>] {
        let n = self.n_per_subarray;
        &self.element_positions[k * n..(k + 1) * n]
    }
}

/// Station ULA placed by `(d, gamma, theta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StaPlacement {
    pub d: f64,
    pub gamma: f64,
    pub theta: f64,
    pub midpoint: Point2<f64>,
    pub element_positions: Vec<Point2<f64>>,
}

impl StaPlacement {
    /// Unit vector along the station array (increasing element index).
    pub fn axis(&self) -> Vector2<f64> {
        Vector2::new(self.theta.cos(), self.theta.sin())
    }

    pub fn reversed(&self) -> StaPlacement {
        let mut out = self.clone();
        out.element_positions.reverse();
        out
    }
}

/// `d_ij` between AP element `i` and station element `j`.
pub type DistanceMatrix = DMatrix<f64>;

/// Builds the AP layout with equal edge-to-edge gaps so that the extreme
/// elements span exactly `l_ap`.
pub fn build_ap_layout(n: usize, n_rf: usize, wavelength: f64, l_ap: f64) -> Result<ApLayout> {
    if n < 2 {
        return Err(Error::Geometry(format!("need at least 2 elements per subarray, got {n}")));
    }
    if n_rf < 1 {
        return Err(Error::Geometry("need at least one subarray".into()));
    }
    if !(wavelength > 0.0) || !(l_ap > 0.0) {
        return Err(Error::Geometry("wavelength and L_AP must be positive".into()));
    }
    let pitch = wavelength / 2.0;
    let sub_len = (n - 1) as f64 * pitch;
    let occupied = n_rf as f64 * sub_len;
    let gap = if n_rf == 1 {
        if (l_ap - sub_len).abs() > 1e-12 {
            return Err(Error::Geometry(format!(
                "a single subarray spans {sub_len} m, cannot span L_AP = {l_ap} m"
            )));
        }
        0.0
    } else {
        (l_ap - occupied) / (n_rf - 1) as f64
    };
    if gap < 0.0 {
        return Err(Error::Geometry(format!(
            "L_AP = {l_ap} m cannot hold {n_rf} subarrays of {sub_len} m"
        )));
    }
    let start = -l_ap / 2.0;
    let mut element_positions = Vec::with_capacity(n * n_rf);
    let mut subarray_offsets = Vec::with_capacity(n_rf);
    for k in 0..n_rf {
        let first = start + k as f64 * (sub_len + gap);
        for e in 0..n {
            element_positions.push(Point2::new(first + e as f64 * pitch, 0.0));
        }
        subarray_offsets.push(first + sub_len / 2.0);
    }
    // pin the last element so the span is exact despite accumulated rounding
    if let Some(last) = element_positions.last_mut() {
        last.x = l_ap / 2.0;
    }
    Ok(ApLayout {
        element_positions,
        subarray_offsets,
        n_per_subarray: n,
        n_subarrays: n_rf,
        wavelength,
        gap,
    })
}

/// Places a station ULA of `n` elements with midpoint at distance `d` along
/// bearing `gamma`, laid along direction `theta`. The element pitch is
/// `l_sta / n` (the array occupies `l_sta`, half a pitch beyond each end
/// element), which equals lambda/2 for the default 16-element, 4 cm array.
pub fn place_sta(
    ap: &ApLayout,
    d: f64,
    gamma: f64,
    theta: f64,
    n: usize,
    l_sta: f64,
) -> Result<StaPlacement> {
    if !(d > 0.0) {
        return Err(Error::Geometry(format!("distance must be positive, got {d}")));
    }
    if !(gamma.abs() < core::f64::consts::FRAC_PI_2) {
        return Err(Error::Geometry(format!("|gamma| must be below pi/2, got {gamma}")));
    }
    if n < 1 || !(l_sta > 0.0) {
        return Err(Error::Geometry("station needs elements and positive length".into()));
    }
    let midpoint = Point2::new(d * gamma.sin(), d * gamma.cos());
    let pitch = l_sta / n as f64;
    let axis = Vector2::new(theta.cos(), theta.sin());
    let center = (n as f64 - 1.0) / 2.0;
    let element_positions: Vec<Point2<f64>> = (0..n)
        .map(|j| midpoint + axis * ((j as f64 - center) * pitch))
        .collect();
    let sta = StaPlacement { d, gamma, theta, midpoint, element_positions };
    let dist = pairwise_distances(ap, &sta);
    if dist.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Geometry("station overlaps the AP array".into()));
    }
    Ok(sta)
}

pub fn pairwise_distances(ap: &ApLayout, sta: &StaPlacement) -> DistanceMatrix {
    DMatrix::from_fn(ap.element_positions.len(), sta.element_positions.len(), |i, j| {
        (ap.element_positions[i] - sta.element_positions[j]).norm()
    })
}

/// Bearing of the station midpoint from AP subarray `k`, measured from the
/// normal and positive toward increasing `x`.
pub fn subarray_bearing(ap: &ApLayout, sta: &StaPlacement, k: usize) -> f64 {
    let dx = sta.midpoint.x - ap.subarray_offsets[k];
    dx.atan2(sta.midpoint.y)
}
