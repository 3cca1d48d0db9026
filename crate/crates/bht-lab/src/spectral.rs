//! Truncated 2D Fourier lattice: wavevectors, fields, dyadic bands and the
//! spectral advection convolution.
//!
//! Fields live on the square lattice `|kx|, |ky| <= K_max` with the zero mode
//! pinned to 0 (all fields are mean-free). Reality symmetry
//! `f(-k) = conj(f(k))` is maintained by construction in every operation; the
//! L2 norm convention is the plain coefficient sum `|f|^2 = sum_k |f_k|^2`.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Integer wavevector on the Fourier lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WaveVector {
    pub kx: i32,
    pub ky: i32,
}

impl WaveVector {
    pub const fn new(kx: i32, ky: i32) -> Self {
        Self { kx, ky }
    }

    /// |k|^2 in exact integer arithmetic.
    pub fn norm_sq(self) -> i64 {
        self.kx as i64 * self.kx as i64 + self.ky as i64 * self.ky as i64
    }

    pub fn norm(self) -> f64 {
        (self.norm_sq() as f64).sqrt()
    }

    /// Wedge product `self ∧ other = kx*oy - ky*ox`.
    pub fn wedge(self, other: WaveVector) -> i64 {
        self.kx as i64 * other.ky as i64 - self.ky as i64 * other.kx as i64
    }

    pub fn is_zero(self) -> bool {
        self.kx == 0 && self.ky == 0
    }

    /// Membership in the upper half-plane (ky > 0, or ky == 0 and kx > 0).
    pub fn in_upper_half_plane(self) -> bool {
        self.ky > 0 || (self.ky == 0 && self.kx > 0)
    }
}

impl std::ops::Neg for WaveVector {
    type Output = WaveVector;
    fn neg(self) -> WaveVector {
        WaveVector::new(-self.kx, -self.ky)
    }
}

impl std::ops::Add for WaveVector {
    type Output = WaveVector;
    fn add(self, rhs: WaveVector) -> WaveVector {
        WaveVector::new(self.kx + rhs.kx, self.ky + rhs.ky)
    }
}

impl std::ops::Sub for WaveVector {
    type Output = WaveVector;
    fn sub(self, rhs: WaveVector) -> WaveVector {
        WaveVector::new(self.kx - rhs.kx, self.ky - rhs.ky)
    }
}

/// Enumerate the truncated upper half-plane in a fixed canonical order:
/// ky = 0 row first (kx = 1..K), then rows ky = 1..K with kx = -K..K.
/// Phase samplers and field mirroring all rely on this order.
pub fn upper_half_plane(k_max: i32) -> impl Iterator<Item = WaveVector> {
    let row0 = (1..=k_max).map(|kx| WaveVector::new(kx, 0));
    let rows = (1..=k_max)
        .flat_map(move |ky| (-k_max..=k_max).map(move |kx| WaveVector::new(kx, ky)));
    row0.chain(rows)
}

/// Number of modes in the truncated upper half-plane.
pub fn upper_half_plane_len(k_max: i32) -> usize {
    (k_max as usize) * (2 * k_max as usize + 2)
}

/// Canonical index of a mode within [`upper_half_plane`] order; the mode is
/// first mapped to the upper half-plane (k and -k share an index).
pub fn half_plane_index(k: WaveVector, k_max: i32) -> usize {
    let c = if k.in_upper_half_plane() { k } else { -k };
    debug_assert!(c.kx.abs() <= k_max && c.ky.abs() <= k_max);
    if c.ky == 0 {
        (c.kx - 1) as usize
    } else {
        let row = k_max as usize + (c.ky as usize - 1) * (2 * k_max as usize + 1);
        row + (c.kx + k_max) as usize
    }
}

/// Complex spectral field on the truncated lattice.
///
/// Storage is dense over `[-K_max, K_max]^2`; the zero mode is forced to 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    k_max: i32,
    side: usize,
    coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn zeros(k_max: i32) -> Self {
        assert!(k_max >= 1, "truncation must be at least 1");
        let side = 2 * k_max as usize + 1;
        Self {
            k_max,
            side,
            coeffs: vec![Complex64::default(); side * side],
        }
    }

    pub fn k_max(&self) -> i32 {
        self.k_max
    }

    #[inline]
    fn idx(&self, k: WaveVector) -> usize {
        let ix = (k.kx + self.k_max) as usize;
        let iy = (k.ky + self.k_max) as usize;
        ix * self.side + iy
    }

    #[inline]
    pub fn contains(&self, k: WaveVector) -> bool {
        k.kx.abs() <= self.k_max && k.ky.abs() <= self.k_max
    }

    /// Coefficient at `k`; zero outside the truncation.
    #[inline]
    pub fn get(&self, k: WaveVector) -> Complex64 {
        if self.contains(k) {
            self.coeffs[self.idx(k)]
        } else {
            Complex64::default()
        }
    }

    /// Set the coefficient at `k`. Panics on the zero mode or outside the
    /// truncation; fields are mean-free by contract.
    pub fn set(&mut self, k: WaveVector, value: Complex64) {
        assert!(!k.is_zero(), "zero mode carries no coefficient");
        assert!(self.contains(k), "mode outside truncation");
        let i = self.idx(k);
        self.coeffs[i] = value;
    }

    /// Set `f(k) = value` and `f(-k) = conj(value)` in one call.
    pub fn set_pair(&mut self, k: WaveVector, value: Complex64) {
        self.set(k, value);
        self.set(-k, value.conj());
    }

    /// All modes `0 < |k|`, including both half-planes.
    pub fn modes(&self) -> impl Iterator<Item = WaveVector> + '_ {
        let k_max = self.k_max;
        (-k_max..=k_max)
            .flat_map(move |kx| (-k_max..=k_max).map(move |ky| WaveVector::new(kx, ky)))
            .filter(|k| !k.is_zero())
    }

    /// Modes with nonzero coefficient, collected for convolution loops.
    pub fn support(&self) -> Vec<(WaveVector, Complex64)> {
        self.modes()
            .filter_map(|k| {
                let v = self.get(k);
                (v != Complex64::default()).then_some((k, v))
            })
            .collect()
    }

    /// Sum of squared moduli over all stored modes.
    pub fn l2_norm_sq(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    /// `sum_k |f_k|`, an upper bound for the physical-space sup norm.
    pub fn sup_norm_bound(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).sum()
    }

    /// Largest coefficient-wise deviation from reality symmetry.
    pub fn reality_defect(&self) -> f64 {
        self.modes()
            .filter(|k| k.in_upper_half_plane())
            .map(|k| (self.get(k) - self.get(-k).conj()).norm())
            .fold(0.0, f64::max)
    }

    /// Apply `-Delta^{-1}` (divide each coefficient by |k|^2).
    pub fn inv_neg_laplacian(&self) -> SpectralField {
        let mut out = SpectralField::zeros(self.k_max);
        for k in self.modes() {
            let v = self.get(k);
            if v != Complex64::default() {
                out.set(k, v / k.norm_sq() as f64);
            }
        }
        out
    }

    /// Apply `-Delta` (multiply each coefficient by |k|^2).
    pub fn neg_laplacian(&self) -> SpectralField {
        let mut out = SpectralField::zeros(self.k_max);
        for k in self.modes() {
            let v = self.get(k);
            if v != Complex64::default() {
                out.set(k, v * k.norm_sq() as f64);
            }
        }
        out
    }

    pub fn scaled(&self, factor: f64) -> SpectralField {
        let mut out = self.clone();
        for c in &mut out.coeffs {
            *c *= factor;
        }
        out
    }

    pub fn add_field(&self, other: &SpectralField) -> Result<SpectralField> {
        self.check_truncation(other)?;
        let mut out = self.clone();
        for (a, b) in out.coeffs.iter_mut().zip(other.coeffs.iter()) {
            *a += b;
        }
        Ok(out)
    }

    pub fn sub_field(&self, other: &SpectralField) -> Result<SpectralField> {
        self.check_truncation(other)?;
        let mut out = self.clone();
        for (a, b) in out.coeffs.iter_mut().zip(other.coeffs.iter()) {
            *a -= b;
        }
        Ok(out)
    }

    pub fn check_truncation(&self, other: &SpectralField) -> Result<()> {
        if self.k_max != other.k_max {
            return Err(Error::TruncationMismatch {
                left: self.k_max,
                right: other.k_max,
            });
        }
        Ok(())
    }

    pub fn has_non_finite(&self) -> bool {
        self.coeffs.iter().any(|c| !c.re.is_finite() || !c.im.is_finite())
    }
}

/// Dyadic band: all lattice modes with `kappa <= |k| < 2*kappa`.
///
/// Membership is decided on exact squared magnitudes.
#[derive(Debug, Clone)]
pub struct DyadicBand {
    pub kappa: f64,
    pub members: Vec<WaveVector>,
}

/// Build the dyadic band `[kappa, 2*kappa)` inside truncation `k_max`.
///
/// Requires `2*kappa <= K_max + 1` so the band is fully resolved.
pub fn dyadic_band(kappa: f64, k_max: i32) -> Result<DyadicBand> {
    if !(kappa > 0.0) {
        return Err(Error::InvalidSpec(format!("kappa must be positive, got {kappa}")));
    }
    if 2.0 * kappa > k_max as f64 + 1.0 {
        return Err(Error::BandTruncated {
            kappa,
            upper: 2.0 * kappa,
            k_max,
        });
    }
    let lo = kappa * kappa;
    let hi = 4.0 * kappa * kappa;
    let r = (2.0 * kappa).floor() as i32;
    let mut members = Vec::new();
    for kx in -r..=r {
        for ky in -r..=r {
            let q = (kx as i64 * kx as i64 + ky as i64 * ky as i64) as f64;
            if q >= lo && q < hi {
                members.push(WaveVector::new(kx, ky));
            }
        }
    }
    Ok(DyadicBand { kappa, members })
}

/// `sum_{k in band} |f_k|^2`.
pub fn band_power(f: &SpectralField, band: &DyadicBand) -> Result<f64> {
    if 2.0 * band.kappa > f.k_max() as f64 + 1.0 {
        return Err(Error::BandTruncated {
            kappa: band.kappa,
            upper: 2.0 * band.kappa,
            k_max: f.k_max(),
        });
    }
    Ok(band.members.iter().map(|&k| f.get(k).norm_sqr()).sum())
}

/// Spectral advection term `(u . grad theta)_k = sum_j u_{k-j} . (i j) theta_j`,
/// Galerkin-truncated to `|k| <= K_max` and mean-free.
///
/// Only upper-half-plane outputs are accumulated; the lower half is mirrored,
/// so reality symmetry of the output is exact whenever the inputs satisfy it.
pub fn convolve_advection(
    u: &(SpectralField, SpectralField),
    theta: &SpectralField,
) -> Result<SpectralField> {
    u.0.check_truncation(&u.1)?;
    u.0.check_truncation(theta)?;
    let k_max = theta.k_max();
    let support = theta.support();
    let (ux, uy) = u;

    let half: Vec<WaveVector> = upper_half_plane(k_max).collect();
    let values: Vec<Complex64> = half
        .par_iter()
        .map(|&k| {
            let mut acc = Complex64::default();
            for &(j, tj) in &support {
                let m = k - j;
                if m.is_zero() || !ux.contains(m) {
                    continue;
                }
                // u_{k-j} . (i j)
                let dot = ux.get(m) * j.kx as f64 + uy.get(m) * j.ky as f64;
                acc += Complex64::new(0.0, 1.0) * dot * tj;
            }
            acc
        })
        .collect();

    let mut out = SpectralField::zeros(k_max);
    for (&k, &v) in half.iter().zip(values.iter()) {
        out.set_pair(k, v);
    }
    Ok(out)
}

/// Direct dense evaluation of the advection double sum, used as an
/// independent oracle for [`convolve_advection`] on small truncations.
pub fn convolve_advection_dense_oracle(
    u: &(SpectralField, SpectralField),
    theta: &SpectralField,
) -> Result<SpectralField> {
    u.0.check_truncation(&u.1)?;
    u.0.check_truncation(theta)?;
    let k_max = theta.k_max();
    let mut out = SpectralField::zeros(k_max);
    for m in u.0.modes() {
        let um = (u.0.get(m), u.1.get(m));
        if um.0 == Complex64::default() && um.1 == Complex64::default() {
            continue;
        }
        for j in theta.modes() {
            let tj = theta.get(j);
            if tj == Complex64::default() {
                continue;
            }
            let k = m + j;
            if k.is_zero() || !out.contains(k) {
                continue;
            }
            let dot = um.0 * j.kx as f64 + um.1 * j.ky as f64;
            let v = out.get(k) + Complex64::new(0.0, 1.0) * dot * tj;
            out.set(k, v);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_pair(k_max: i32, k: WaveVector, v: Complex64) -> SpectralField {
        let mut f = SpectralField::zeros(k_max);
        f.set_pair(k, v);
        f
    }

    #[test]
    fn dyadic_band_kappa1_has_eight_points() {
        let band = dyadic_band(1.0, 8).unwrap();
        assert_eq!(band.members.len(), 8);
        for &k in &band.members {
            assert!(k.norm_sq() >= 1 && k.norm_sq() < 4);
            assert!(band.members.contains(&-k));
        }
    }

    #[test]
    fn dyadic_band_kappa2_has_36_points() {
        let band = dyadic_band(2.0, 8).unwrap();
        assert_eq!(band.members.len(), 36);
    }

    #[test]
    fn dyadic_band_outside_truncation_errors() {
        let err = dyadic_band(3.5, 4).unwrap_err();
        assert!(err.to_string().contains("band-truncated"));
    }

    #[test]
    fn band_count_approaches_annulus_area() {
        // |#band - 3*pi*kappa^2| / kappa^2 small for kappa = 32
        let band = dyadic_band(32.0, 80).unwrap();
        let count = band.members.len() as f64;
        let area = 3.0 * std::f64::consts::PI * 32.0 * 32.0;
        assert!(
            (count - area).abs() / (32.0 * 32.0) < 0.05 * 3.0 * std::f64::consts::PI,
            "count {count} vs area {area}"
        );
    }

    #[test]
    fn band_power_single_pair() {
        let f = single_pair(4, WaveVector::new(1, 0), Complex64::new(1.0, 0.0));
        let band = dyadic_band(1.0, 4).unwrap();
        assert_eq!(band_power(&f, &band).unwrap(), 2.0);
    }

    #[test]
    fn band_power_zero_field() {
        let f = SpectralField::zeros(4);
        let band = dyadic_band(1.0, 4).unwrap();
        assert_eq!(band_power(&f, &band).unwrap(), 0.0);
    }

    #[test]
    fn band_power_power_law_example() {
        // f_k = |k|^{-3} on the kappa = 1 band: 4*1 + 4*(1/8) = 4.5
        let mut f = SpectralField::zeros(4);
        for k in dyadic_band(1.0, 4).unwrap().members {
            let amp = (k.norm_sq() as f64).powf(-1.5);
            f.set(k, Complex64::new(amp, 0.0));
        }
        let band = dyadic_band(1.0, 4).unwrap();
        assert!((band_power(&f, &band).unwrap() - 4.5).abs() < 1e-14);
    }

    #[test]
    fn band_power_invariant_under_global_phase() {
        let mut f = SpectralField::zeros(6);
        f.set_pair(WaveVector::new(2, 1), Complex64::new(0.3, -0.2));
        f.set_pair(WaveVector::new(1, 2), Complex64::new(-0.1, 0.7));
        let band = dyadic_band(2.0, 6).unwrap();
        let p0 = band_power(&f, &band).unwrap();
        let rot = Complex64::from_polar(1.0, 1.234);
        let mut g = SpectralField::zeros(6);
        for k in f.modes().filter(|k| k.in_upper_half_plane()) {
            let v = f.get(k);
            if v != Complex64::default() {
                g.set_pair(k, v * rot);
            }
        }
        let p1 = band_power(&g, &band).unwrap();
        assert!((p0 - p1).abs() < 1e-15 * p0.max(1.0));
    }

    #[test]
    fn parseval_additivity_over_dyads() {
        let mut f = SpectralField::zeros(15);
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for k in upper_half_plane(15) {
            f.set_pair(k, Complex64::new(next(), next()));
        }
        // Dyads 1,2,4,8 partition 1 <= |k|^2 < 256, i.e. all modes except
        // the corners with |k| > 15; restrict the total to |k| <= 15.
        let mut total_bands = 0.0;
        for kappa in [1.0, 2.0, 4.0, 8.0] {
            let band = dyadic_band(kappa, 15).unwrap();
            total_bands += band
                .members
                .iter()
                .filter(|k| k.norm_sq() <= 225)
                .map(|&k| f.get(k).norm_sqr())
                .sum::<f64>();
        }
        let total: f64 = f
            .modes()
            .filter(|k| k.norm_sq() <= 225)
            .map(|k| f.get(k).norm_sqr())
            .sum();
        assert!((total_bands - total).abs() < 1e-12 * total);
    }

    #[test]
    fn convolution_zero_velocity() {
        let u = (SpectralField::zeros(4), SpectralField::zeros(4));
        let theta = single_pair(4, WaveVector::new(0, 1), Complex64::new(1.0, 0.0));
        let out = convolve_advection(&u, &theta).unwrap();
        assert_eq!(out.l2_norm_sq(), 0.0);
    }

    #[test]
    fn convolution_single_mode_support() {
        // psi at +-(1,0), theta at +-(0,1): output supported on +-(1,1), +-(1,-1)
        let psi = single_pair(4, WaveVector::new(1, 0), Complex64::new(0.5, 0.0));
        let u = crate::fields::velocity_from_streamfunction(&psi);
        let theta = single_pair(4, WaveVector::new(0, 1), Complex64::new(1.0, 0.0));
        let out = convolve_advection(&u, &theta).unwrap();
        let expected_support = [
            WaveVector::new(1, 1),
            WaveVector::new(-1, -1),
            WaveVector::new(1, -1),
            WaveVector::new(-1, 1),
        ];
        for k in out.modes() {
            let v = out.get(k);
            if expected_support.contains(&k) {
                assert!(v.norm() > 1e-12, "missing output at {k:?}");
            } else {
                assert!(v.norm() < 1e-15, "spurious output at {k:?}: {v}");
            }
        }
    }

    #[test]
    fn convolution_matches_dense_oracle() {
        let k_max = 8;
        let mut psi = SpectralField::zeros(k_max);
        let mut theta = SpectralField::zeros(k_max);
        let mut state = 42u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for k in upper_half_plane(k_max) {
            psi.set_pair(k, Complex64::new(next(), next()));
            theta.set_pair(k, Complex64::new(next(), next()));
        }
        let u = crate::fields::velocity_from_streamfunction(&psi);
        let fast = convolve_advection(&u, &theta).unwrap();
        let slow = convolve_advection_dense_oracle(&u, &theta).unwrap();
        let diff = fast.sub_field(&slow).unwrap().l2_norm_sq().sqrt();
        let scale = slow.l2_norm_sq().sqrt();
        assert!(diff <= 1e-12 * scale, "diff {diff:.3e} vs scale {scale:.3e}");
    }

    #[test]
    fn convolution_preserves_reality_exactly() {
        let k_max = 6;
        let mut psi = SpectralField::zeros(k_max);
        let mut theta = SpectralField::zeros(k_max);
        let mut state = 7u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for k in upper_half_plane(k_max) {
            psi.set_pair(k, Complex64::new(next(), next()));
            theta.set_pair(k, Complex64::new(next(), next()));
        }
        let u = crate::fields::velocity_from_streamfunction(&psi);
        let out = convolve_advection(&u, &theta).unwrap();
        assert_eq!(out.reality_defect(), 0.0);
    }

    #[test]
    fn level_set_preserving_velocity_annihilates_theta0() {
        // u = grad^perp psi with psi = Delta^{-1} g gives u . grad(-Delta^{-1} g) = 0
        let k_max = 12;
        let mut g = SpectralField::zeros(k_max);
        let mut state = 11u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for k in upper_half_plane(k_max).filter(|k| k.norm_sq() < 16) {
            g.set_pair(k, Complex64::new(next(), next()));
        }
        let psi = g.inv_neg_laplacian().scaled(-1.0); // Delta^{-1} g
        let u = crate::fields::velocity_from_streamfunction(&psi);
        let theta0 = g.inv_neg_laplacian(); // -Delta^{-1} g
        let out = convolve_advection(&u, &theta0).unwrap();
        assert!(out.l2_norm_sq().sqrt() < 1e-14);
    }

    #[test]
    fn truncation_mismatch_rejected() {
        let u = (SpectralField::zeros(4), SpectralField::zeros(4));
        let theta = SpectralField::zeros(5);
        assert!(matches!(
            convolve_advection(&u, &theta),
            Err(Error::TruncationMismatch { .. })
        ));
    }

    #[test]
    fn half_plane_index_is_canonical_enumeration() {
        let k_max = 5;
        for (i, k) in upper_half_plane(k_max).enumerate() {
            assert_eq!(half_plane_index(k, k_max), i);
            assert_eq!(half_plane_index(-k, k_max), i);
        }
        assert_eq!(
            upper_half_plane(k_max).count(),
            upper_half_plane_len(k_max)
        );
    }
}
