//! Synthetic velocity and tracer-source construction: power-law stream
//! function with random phases, band-limited source, and the source
//! functionals entering the analytic predictions.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phases::PhaseAssignment;
use crate::spectral::{upper_half_plane, SpectralField, WaveVector};

/// Parameters of the synthetic velocity `psi_k = U |k|^beta e^{i phi_k}`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct VelocitySpec {
    /// Amplitude U.
    #[serde(rename = "U")]
    pub amplitude: f64,
    /// Spectral exponent of the stream function; must satisfy beta < -2.
    pub beta: f64,
    /// Lattice truncation.
    pub k_max: i32,
}

impl VelocitySpec {
    pub fn new(amplitude: f64, beta: f64, k_max: i32) -> Result<Self> {
        if !(amplitude > 0.0) {
            return Err(Error::InvalidSpec(format!("U must be positive, got {amplitude}")));
        }
        if !(beta < -2.0) {
            return Err(Error::OutOfTheory(format!(
                "beta must satisfy beta < -2, got {beta}"
            )));
        }
        if k_max < 1 {
            return Err(Error::InvalidSpec(format!("K_max must be >= 1, got {k_max}")));
        }
        Ok(Self { amplitude, beta, k_max })
    }
}

/// Band-limited tracer source `g_k = -gamma(|k|) |k|^2 e^{i xi_k}`.
///
/// The radial profile is tabulated over exact integer squared magnitudes;
/// `gamma(|k|) = 0` for `|k| >= kappa_g` always.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SourceSpec {
    pub kappa_g: f64,
    /// Optional profile table keyed by |k|^2; absent entries with
    /// `|k| < kappa_g` default to `gamma = 1`.
    #[serde(default)]
    pub gamma_table: Vec<(i64, f64)>,
}

impl SourceSpec {
    pub fn flat(kappa_g: f64) -> Result<Self> {
        if !(kappa_g > 1.0) {
            return Err(Error::InvalidSpec(format!(
                "kappa_g must exceed 1 so the source is nonempty, got {kappa_g}"
            )));
        }
        Ok(Self {
            kappa_g,
            gamma_table: Vec::new(),
        })
    }

    pub fn with_table(kappa_g: f64, table: Vec<(i64, f64)>) -> Result<Self> {
        if table.iter().any(|&(q, g)| q <= 0 || g < 0.0) {
            return Err(Error::InvalidSpec(
                "gamma table entries need positive |k|^2 and nonnegative gamma".into(),
            ));
        }
        let mut s = Self::flat(kappa_g)?;
        s.gamma_table = table;
        Ok(s)
    }

    /// `gamma(|k|)` for a mode with squared magnitude `norm_sq`.
    pub fn gamma_of_norm_sq(&self, norm_sq: i64) -> f64 {
        if norm_sq <= 0 || (norm_sq as f64) >= self.kappa_g * self.kappa_g {
            return 0.0;
        }
        self.gamma_table
            .iter()
            .find(|&&(q, _)| q == norm_sq)
            .map(|&(_, g)| g)
            .unwrap_or(1.0)
    }

    pub fn gamma(&self, k: WaveVector) -> f64 {
        self.gamma_of_norm_sq(k.norm_sq())
    }

    /// All modes carrying source amplitude (both half-planes).
    pub fn support(&self) -> Vec<WaveVector> {
        let r = self.kappa_g.ceil() as i32;
        let mut out = Vec::new();
        for kx in -r..=r {
            for ky in -r..=r {
                let k = WaveVector::new(kx, ky);
                if !k.is_zero() && self.gamma(k) > 0.0 {
                    out.push(k);
                }
            }
        }
        out
    }
}

/// `psi_k = U |k|^beta e^{i phi_k}` over the whole truncated lattice.
pub fn build_streamfunction(spec: &VelocitySpec, phases: &PhaseAssignment) -> SpectralField {
    assert!(
        phases.k_max() >= spec.k_max,
        "phase assignment does not cover the truncation"
    );
    let mut psi = SpectralField::zeros(spec.k_max);
    for k in upper_half_plane(spec.k_max) {
        let amp = spec.amplitude * k.norm().powf(spec.beta);
        psi.set_pair(k, Complex64::from_polar(amp, phases.phase(k)));
    }
    psi
}

/// `u = grad^perp psi`, i.e. `u_k = i (-k_y, k_x) psi_k`. Divergence-free by
/// construction: `k . u_k = 0` exactly.
pub fn velocity_from_streamfunction(psi: &SpectralField) -> (SpectralField, SpectralField) {
    let mut ux = SpectralField::zeros(psi.k_max());
    let mut uy = SpectralField::zeros(psi.k_max());
    for k in psi.modes().filter(|k| k.in_upper_half_plane()) {
        let p = psi.get(k);
        if p == Complex64::default() {
            continue;
        }
        let i = Complex64::new(0.0, 1.0);
        ux.set_pair(k, i * (-(k.ky as f64)) * p);
        uy.set_pair(k, i * (k.kx as f64) * p);
    }
    (ux, uy)
}

/// `g_k = -gamma(|k|) |k|^2 e^{i xi_k}`, supported strictly inside `kappa_g`.
pub fn build_source(spec: &SourceSpec, xi: &PhaseAssignment) -> SpectralField {
    let k_max = xi.k_max().min(spec.kappa_g.ceil() as i32 + 1);
    let mut g = SpectralField::zeros(k_max.max(1));
    for k in spec.support() {
        if !k.in_upper_half_plane() {
            continue;
        }
        let amp = -spec.gamma(k) * k.norm_sq() as f64;
        g.set_pair(k, Complex64::from_polar(1.0, xi.phase(k)) * amp);
    }
    g
}

/// Same source embedded in a field of truncation `k_max` (for solver inputs).
pub fn build_source_truncated(
    spec: &SourceSpec,
    xi: &PhaseAssignment,
    k_max: i32,
) -> SpectralField {
    let mut g = SpectralField::zeros(k_max);
    for k in spec.support() {
        if !k.in_upper_half_plane() || !g.contains(k) {
            continue;
        }
        let amp = -spec.gamma(k) * k.norm_sq() as f64;
        g.set_pair(k, Complex64::from_polar(1.0, xi.phase(k)) * amp);
    }
    g
}

/// The three source functionals used by the predictions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceFunctionals {
    /// `G0 = sum_j |j|^2 gamma_j^2 = |grad^{-1} g|_{L2}^2`.
    pub g0: f64,
    /// `G1 = sum_{i,j} (3 ix^2 jx^2 + ix^2 jy^2 + iy^2 jx^2 + 3 iy^2 jy^2
    ///                  + 4 ix iy jx jy) gamma_i^2 gamma_j^2`.
    pub g1: f64,
    /// `sum_j |j| gamma_j`, the sup-norm surrogate for `|grad^{-1} g|_{L_inf}`.
    pub grad_inv_sup: f64,
}

pub fn source_functionals(spec: &SourceSpec) -> SourceFunctionals {
    let support = spec.support();
    let mut g0 = 0.0;
    let mut grad_inv_sup = 0.0;
    // Accumulate the quadratic moments once; G1 factorizes over them.
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for &j in &support {
        let gj = spec.gamma(j);
        let q = j.norm_sq() as f64;
        g0 += q * gj * gj;
        grad_inv_sup += q.sqrt() * gj;
        sxx += (j.kx * j.kx) as f64 * gj * gj;
        syy += (j.ky * j.ky) as f64 * gj * gj;
        sxy += (j.kx * j.ky) as f64 * gj * gj;
    }
    let g1 = 3.0 * sxx * sxx + 2.0 * sxx * syy + 3.0 * syy * syy + 4.0 * sxy * sxy;
    SourceFunctionals { g0, g1, grad_inv_sup }
}
