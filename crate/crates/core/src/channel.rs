//! Near-field channel synthesis: line of sight plus mirror-image reflections
//! in a rectangular room, subchannel extraction and beamspace transforms.
#[allow(unused_imports)]
use num_traits::Float;

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{DMatrix, Point2, Point3};

use crate::error::Error;
use crate::fft::{fft2, ifft2};
use crate::geometry::{pairwise_distances, ApLayout, DistanceMatrix, StaPlacement};
use crate::{CMatrix, CVector, Result, C64};

/// Path gain and phase of a single ray of length `len`.
#[inline]
pub fn ray_gain(len: f64, wavelength: f64) -> C64 {
    C64::from_polar(wavelength / (4.0 * PI * len), -2.0 * PI * len / wavelength)
}

pub fn los_channel(distances: &DistanceMatrix, wavelength: f64) -> Result<CMatrix> {
    if distances.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::Geometry("distances must be strictly positive".into()));
    }
    Ok(distances.map(|d| ray_gain(d, wavelength)))
}

/// Half-wavelength ULA response `a_N(omega)[n] = exp(-j pi n sin(omega))`.
pub fn array_response(n: usize, omega: f64) -> CVector {
    let s = omega.sin();
    CVector::from_fn(n, |i, _| C64::from_polar(1.0, -PI * i as f64 * s))
}

/// Rectangular room with the AP mounted on the far wall `Y = depth`, its
/// array axis along `+X` and its broadside normal pointing toward `-Y`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoomSpec {
    pub width: f64,
    pub depth: f64,
    pub height: f64,
    /// Room coordinates of the AP midpoint; `y` must equal `depth`.
    pub ap_center: [f64; 3],
    pub ceiling: C64,
    /// Sidewall at `X = 0`.
    pub wall_x0: C64,
    /// Sidewall at `X = width`.
    pub wall_x1: C64,
    pub floor: C64,
    pub floor_reflections_enabled: bool,
}

impl Default for RoomSpec {
    fn default() -> Self {
        let c = C64::new(-0.6, 0.0);
        RoomSpec {
            width: 5.0,
            depth: 5.0,
            height: 3.0,
            ap_center: [2.5, 5.0, 1.5],
            ceiling: c,
            wall_x0: c,
            wall_x1: c,
            floor: c,
            floor_reflections_enabled: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Surface {
    Ceiling,
    Floor,
    WallX0,
    WallX1,
}

impl RoomSpec {
    /// Free space: every reflection coefficient zero.
    pub fn anechoic() -> Self {
        let z = C64::new(0.0, 0.0);
        RoomSpec { ceiling: z, wall_x0: z, wall_x1: z, floor: z, ..Self::default() }
    }

    pub fn with_coefficient(mut self, c: C64) -> Self {
        self.ceiling = c;
        self.wall_x0 = c;
        self.wall_x1 = c;
        self.floor = c;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.depth > 0.0 && self.height > 0.0) {
            return Err(Error::Room("room dimensions must be positive".into()));
        }
        for (name, c) in [
            ("ceiling", self.ceiling),
            ("wall_x0", self.wall_x0),
            ("wall_x1", self.wall_x1),
            ("floor", self.floor),
        ] {
            if !(c.norm() <= 1.0) {
                return Err(Error::Room(format!("|{name} coefficient| = {} exceeds 1", c.norm())));
            }
        }
        if (self.ap_center[1] - self.depth).abs() > 1e-12 {
            return Err(Error::Room("the AP must be mounted on the wall y = depth".into()));
        }
        Ok(())
    }

    /// Lifts an array-plane point to room coordinates.
    pub fn to_room(&self, p: &Point2<f64>) -> Point3<f64> {
        Point3::new(self.ap_center[0] + p.x, self.ap_center[1] - p.y, self.ap_center[2])
    }

    fn contains(&self, p: &Point3<f64>) -> bool {
        (0.0..=self.width).contains(&p.x)
            && (0.0..=self.depth).contains(&p.y)
            && (0.0..=self.height).contains(&p.z)
    }

    fn coefficient(&self, s: Surface) -> C64 {
        match s {
            Surface::Ceiling => self.ceiling,
            Surface::Floor => self.floor,
            Surface::WallX0 => self.wall_x0,
            Surface::WallX1 => self.wall_x1,
        }
    }

    fn mirror(&self, s: Surface, p: Point3<f64>) -> Point3<f64> {
        match s {
            Surface::Ceiling => Point3::new(p.x, p.y, 2.0 * self.height - p.z),
            Surface::Floor => Point3::new(p.x, p.y, -p.z),
            Surface::WallX0 => Point3::new(-p.x, p.y, p.z),
            Surface::WallX1 => Point3::new(2.0 * self.width - p.x, p.y, p.z),
        }
    }

    /// Reflection sequences traced per element pair (excluding the direct ray).
    fn bounce_sequences(&self) -> Vec<Vec<Surface>> {
        use Surface::*;
        let mut seqs: Vec<Vec<Surface>> = alloc::vec![
            alloc::vec![Ceiling],
            alloc::vec![WallX0],
            alloc::vec![WallX1],
            alloc::vec![WallX0, WallX1],
            alloc::vec![WallX1, WallX0],
            alloc::vec![Ceiling, WallX0],
            alloc::vec![Ceiling, WallX1],
        ];
        if self.floor_reflections_enabled {
            seqs.push(alloc::vec![Floor]);
            seqs.push(alloc::vec![Floor, WallX0]);
            seqs.push(alloc::vec![Floor, WallX1]);
        }
        seqs
    }

    /// Number of rays per element pair, direct path included.
    pub fn rays_per_pair(&self) -> usize {
        1 + self.bounce_sequences().len()
    }
}

/// Full channel `H` plus its subchannels and their beamspace forms.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    pub h: CMatrix,
    pub subchannels: Vec<CMatrix>,
    pub beamspace: Vec<CMatrix>,
    pub wavelength: f64,
}

impl ChannelSet {
    /// Splits a stacked `(n·n_rf) × n` matrix into its square blocks.
    pub fn from_matrix(h: CMatrix, n_rf: usize, wavelength: f64) -> Result<Self> {
        let n = h.ncols();
        if n_rf == 0 || h.nrows() != n * n_rf {
            return Err(Error::Dimension(format!(
                "{}x{} matrix is not {} stacked {n}x{n} blocks",
                h.nrows(),
                h.ncols(),
                n_rf
            )));
        }
        let subchannels: Vec<CMatrix> =
            (0..n_rf).map(|k| h.view((k * n, 0), (n, n)).into_owned()).collect();
        let beamspace = subchannels.iter().map(beamspace).collect();
        Ok(ChannelSet { h, subchannels, beamspace, wavelength })
    }

    pub fn n(&self) -> usize {
        self.h.ncols()
    }

    pub fn n_rf(&self) -> usize {
        self.subchannels.len()
    }
}

pub fn synthesize_channel(ap: &ApLayout, sta: &StaPlacement, room: &RoomSpec) -> Result<ChannelSet> {
    room.validate()?;
    let ap3: Vec<Point3<f64>> = ap.element_positions.iter().map(|p| room.to_room(p)).collect();
    let sta3: Vec<Point3<f64>> = sta.element_positions.iter().map(|p| room.to_room(p)).collect();
    if !ap3.iter().chain(sta3.iter()).all(|p| room.contains(p)) {
        return Err(Error::Room("both arrays must lie inside the room".into()));
    }
    let lambda = ap.wavelength;
    let mut h = los_channel(&pairwise_distances(ap, sta), lambda)?;
    for seq in room.bounce_sequences() {
        let coef = seq.iter().fold(C64::new(1.0, 0.0), |acc, &s| acc * room.coefficient(s));
        if coef == C64::new(0.0, 0.0) {
            continue;
        }
        for (j, q) in sta3.iter().enumerate() {
            let image = seq.iter().fold(*q, |p, &s| room.mirror(s, p));
            for (i, p) in ap3.iter().enumerate() {
                h[(i, j)] += coef * ray_gain((image - p).norm(), lambda);
            }
        }
    }
    ChannelSet::from_matrix(h, ap.n_subarrays, lambda)
}

/// `X = U^H H U^H`, so that `H = U X U`.
pub fn beamspace(subchannel: &CMatrix) -> CMatrix {
    ifft2(subchannel)
}

/// Inverse of [`beamspace`].
pub fn antenna_domain(x: &CMatrix) -> CMatrix {
    fft2(x)
}

fn spectral_norm_sq(m: &CMatrix) -> f64 {
    let sv = m.clone().singular_values();
    let s = sv.iter().cloned().fold(0.0, f64::max);
    s * s
}

/// Rank-one energy fractions `(E_F, E_S)` of the full channel and, averaged,
/// of its subchannels.
pub fn energy_metrics(channel: &ChannelSet) -> Result<(f64, f64)> {
    let total = channel.h.norm_squared();
    if !(total > 0.0) {
        return Err(Error::ZeroChannel);
    }
    let e_f = spectral_norm_sq(&channel.h) / total;
    let mut e_s = 0.0;
    for hk in &channel.subchannels {
        let f = hk.norm_squared();
        if !(f > 0.0) {
            return Err(Error::ZeroChannel);
        }
        e_s += spectral_norm_sq(hk) / f;
    }
    Ok((e_f, e_s / channel.n_rf() as f64))
}

/// Magnitude of `H`, used by symmetry checks.
pub fn magnitude(h: &CMatrix) -> DMatrix<f64> {
    h.map(|c| c.norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fft::dft_matrix;
    use crate::geometry::{build_ap_layout, place_sta};
    use crate::rng::{complex_gaussian, stream};

    fn reference_ap() -> ApLayout {
        build_ap_layout(16, 4, 0.005, 0.20).unwrap()
    }

    fn rel_err(a: &CMatrix, b: &CMatrix) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }

    #[test]
    fn los_scalar_examples() {
        let h = los_channel(&DMatrix::from_element(1, 1, 0.8), 0.005).unwrap();
        assert!((h[(0, 0)].norm() - 0.005 / (4.0 * PI * 0.8)).abs() < 1e-15);
        assert!((h[(0, 0)].norm() - 4.9736e-4).abs() < 1e-7);
        assert!(h[(0, 0)].im.abs() < 1e-12 * h[(0, 0)].norm() * 1e3);
        let h = los_channel(&DMatrix::from_element(1, 1, 0.005), 0.005).unwrap();
        assert!((h[(0, 0)] - C64::new(1.0 / (4.0 * PI), 0.0)).norm() < 1e-14);
        assert!(los_channel(&DMatrix::from_element(1, 1, 0.0), 0.005).is_err());
    }

    #[test]
    fn los_matches_scalar_oracle() {
        let ap = reference_ap();
        let sta = place_sta(&ap, 0.8, 0.0, PI / 4.0, 16, 0.04).unwrap();
        let h = los_channel(&pairwise_distances(&ap, &sta), 0.005).unwrap();
        for (i, a) in ap.element_positions.iter().enumerate() {
            for (j, b) in sta.element_positions.iter().enumerate() {
                let d = ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt();
                let amp = 0.005 / (4.0 * PI * d);
                let ph = -2.0 * PI * d / 0.005;
                let want = C64::new(amp * ph.cos(), amp * ph.sin());
                assert!((h[(i, j)] - want).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn anechoic_room_is_los() {
        let ap = reference_ap();
        let sta = place_sta(&ap, 0.8, 0.2, 0.7, 16, 0.04).unwrap();
        let ch = synthesize_channel(&ap, &sta, &RoomSpec::anechoic()).unwrap();
        let los = los_channel(&pairwise_distances(&ap, &sta), 0.005).unwrap();
        assert_eq!(ch.h, los);
    }

    #[test]
    fn ceiling_bounce_matches_hand_image() {
        // single pair at broadside, ceiling only
        let room = RoomSpec { ceiling: C64::new(-0.6, 0.0), ..RoomSpec::anechoic() };
        let ap = ApLayout {
            element_positions: alloc::vec![Point2::new(0.0, 0.0)],
            subarray_offsets: alloc::vec![0.0],
            n_per_subarray: 1,
            n_subarrays: 1,
            wavelength: 0.005,
            gap: 0.0,
        };
        let d = 0.8;
        let sta = StaPlacement {
            d,
            gamma: 0.0,
            theta: 0.0,
            midpoint: Point2::new(0.0, d),
            element_positions: alloc::vec![Point2::new(0.0, d)],
        };
        let ch = synthesize_channel(&ap, &sta, &room).unwrap();
        let h_gap = 3.0 - 1.5;
        let path = 2.0 * (h_gap * h_gap + (d / 2.0) * (d / 2.0)).sqrt();
        let want = ray_gain(d, 0.005) + C64::new(-0.6, 0.0) * ray_gain(path, 0.005);
        assert!((ch.h[(0, 0)] - want).norm() < 1e-15);
    }

    #[test]
    fn reference_room_ray_count() {
        let room = RoomSpec::default();
        assert_eq!(room.rays_per_pair(), 8);
        let with_floor = RoomSpec { floor_reflections_enabled: true, ..room };
        assert!(with_floor.rays_per_pair() > 8);
    }

    #[test]
    fn room_rejections() {
        let ap = reference_ap();
        let sta = place_sta(&ap, 6.0, 0.0, 0.0, 16, 0.04).unwrap();
        assert!(matches!(
            synthesize_channel(&ap, &sta, &RoomSpec::default()),
            Err(Error::Room(_))
        ));
        let bad = RoomSpec::default().with_coefficient(C64::new(1.2, 0.0));
        assert!(bad.validate().is_err());
    }

    #[test]
    fn subchannels_stack_and_beamspace_round_trip() {
        let ap = reference_ap();
        let sta = place_sta(&ap, 0.8, 0.0, PI / 4.0, 16, 0.04).unwrap();
        let ch = synthesize_channel(&ap, &sta, &RoomSpec::default()).unwrap();
        assert_eq!(ch.n_rf(), 4);
        for k in 0..4 {
            assert_eq!(ch.h.view((16 * k, 0), (16, 16)), ch.subchannels[k]);
            let back = antenna_domain(&ch.beamspace[k]);
            assert!(rel_err(&back, &ch.subchannels[k]) < 1e-10);
            let ratio = ch.beamspace[k].norm() / ch.subchannels[k].norm();
            assert!((ratio - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn beamspace_basis_and_grid_cases() {
        let n = 16;
        let u = dft_matrix(n);
        let mut e00 = CMatrix::zeros(n, n);
        e00[(0, 0)] = C64::new(1.0, 0.0);
        let h = &u * &e00 * &u;
        assert!(rel_err(&beamspace(&h), &e00) < 1e-12);

        // on-grid steering vectors: sin(omega) = 2p/n
        let steer = |s: f64| {
            nalgebra::DVector::from_fn(n, |i, _| C64::from_polar(1.0, -PI * i as f64 * s))
        };
        let h = steer(2.0 * 3.0 / 16.0) * steer(-2.0 * 5.0 / 16.0).transpose();
        let x = beamspace(&h);
        let big = x.iter().filter(|c| c.norm() > 1e-9).count();
        assert_eq!(big, 1);
    }

    #[test]
    fn beamspace_matches_dense_oracle() {
        let n = 16;
        let mut rng = stream(7, 1);
        let h = CMatrix::from_fn(n, n, |_, _| complex_gaussian(&mut rng, 1.0));
        let u = dft_matrix(n);
        let uh = u.adjoint();
        let want = &uh * &h * &uh;
        assert!(rel_err(&beamspace(&h), &want) < 1e-12);
        assert!(rel_err(&antenna_domain(&beamspace(&h)), &h) < 1e-12);
    }

    fn power_iteration_norm_sq(m: &CMatrix) -> f64 {
        let g = m.adjoint() * m;
        let mut v = nalgebra::DVector::from_element(m.ncols(), C64::new(1.0, 0.3));
        let mut lam = 0.0;
        for _ in 0..2000 {
            let w = &g * &v;
            lam = w.norm();
            v = w / C64::new(lam, 0.0);
        }
        lam
    }

    #[test]
    fn energy_metrics_rank_one_and_oracle() {
        let mut rng = stream(3, 2);
        let a = nalgebra::DVector::from_fn(64, |_, _| complex_gaussian(&mut rng, 1.0));
        let b = nalgebra::DVector::from_fn(16, |_, _| complex_gaussian(&mut rng, 1.0));
        let ch = ChannelSet::from_matrix(&a * b.transpose(), 4, 0.005).unwrap();
        let (ef, es) = energy_metrics(&ch).unwrap();
        assert!((ef - 1.0).abs() < 1e-10 && (es - 1.0).abs() < 1e-10);

        let ap = reference_ap();
        let sta = place_sta(&ap, 0.5, 0.0, 0.0, 16, 0.04).unwrap();
        let ch = synthesize_channel(&ap, &sta, &RoomSpec::anechoic()).unwrap();
        let (ef, _) = energy_metrics(&ch).unwrap();
        let oracle = power_iteration_norm_sq(&ch.h) / ch.h.norm_squared();
        assert!((ef - oracle).abs() < 1e-8);

        let zero = ChannelSet::from_matrix(CMatrix::zeros(32, 16), 2, 0.005).unwrap();
        assert!(matches!(energy_metrics(&zero), Err(Error::ZeroChannel)));
    }

    #[test]
    fn energy_sweep_ordering_and_trend() {
        let ap = reference_ap();
        let mut prev = (0.0, 0.0);
        for i in 0..30 {
            let d = 0.2 + 2.8 * i as f64 / 29.0;
            let sta = place_sta(&ap, d, 0.0, 0.0, 16, 0.04).unwrap();
            let ch = synthesize_channel(&ap, &sta, &RoomSpec::anechoic()).unwrap();
            let (ef, es) = energy_metrics(&ch).unwrap();
            assert!(es >= ef, "d = {d}: E_S {es} < E_F {ef}");
            assert!(ef > 0.0 && ef <= 1.0 + 1e-12 && es <= 1.0 + 1e-12);
            assert!(ef >= prev.0 - 1e-9 && es >= prev.1 - 1e-9, "non-monotone at d = {d}");
            prev = (ef, es);
        }
        // the 20 cm aperture is still well inside its Rayleigh distance at 3 m
        assert!(prev.1 >= 0.95 && prev.0 > 0.9 && prev.0 < 0.95);
    }

    #[test]
    fn beamspace_peak_drifts_smoothly() {
        let ap = reference_ap();
        let sta = place_sta(&ap, 0.8, 0.0, PI / 4.0, 16, 0.04).unwrap();
        let ch = synthesize_channel(&ap, &sta, &RoomSpec::default()).unwrap();
        let peaks: Vec<(usize, usize)> = ch
            .beamspace
            .iter()
            .map(|x| {
                let (mut best, mut at) = (0.0, (0, 0));
                for r in 0..16 {
                    for c in 0..16 {
                        if x[(r, c)].norm() > best {
                            best = x[(r, c)].norm();
                            at = (r, c);
                        }
                    }
                }
                at
            })
            .collect();
        let circ = |a: usize, b: usize| {
            let d = (a as i64 - b as i64).rem_euclid(16) as usize;
            d.min(16 - d)
        };
        for w in peaks.windows(2) {
            assert!(circ(w[0].0, w[1].0) <= 3 && circ(w[0].1, w[1].1) <= 3, "{peaks:?}");
        }
    }

    #[test]
    fn mirror_symmetry_of_magnitude() {
        let ap = reference_ap();
        let room = RoomSpec::default();
        let a = synthesize_channel(&ap, &place_sta(&ap, 0.8, 0.5, 0.9, 16, 0.04).unwrap(), &room)
            .unwrap();
        let b =
            synthesize_channel(&ap, &place_sta(&ap, 0.8, -0.5, -0.9, 16, 0.04).unwrap(), &room)
                .unwrap();
        let (ma, mb) = (magnitude(&a.h), magnitude(&b.h));
        for i in 0..64 {
            for j in 0..16 {
                assert!((ma[(i, j)] - mb[(63 - i, 15 - j)]).abs() < 1e-10);
            }
        }
    }
}
