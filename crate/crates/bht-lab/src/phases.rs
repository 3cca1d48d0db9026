//! Random phases: static i.i.d. assignments with the reality constraint
//! `phi(-k) = -phi(k)`, and stationary time-dependent phase processes with
//! prescribed correlation `Phi(chi_k |t|)`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::spectral::{half_plane_index, upper_half_plane, upper_half_plane_len, WaveVector};

/// splitmix64 step, used to derive independent sub-seeds from a master seed.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Deterministic per-task seed: `master` split by `(index, purpose)`.
pub fn derive_seed(master: u64, index: u64, purpose: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(index)) ^ purpose.wrapping_mul(0xd1342543de82ef95))
}

/// Static phase assignment `phi_k in [0, 2pi)` on the truncated lattice.
///
/// Phases on the upper half-plane are i.i.d. uniform; the lower half-plane is
/// the negation, so `e^{i phi}`-weighted fields are real-valued.
#[derive(Debug, Clone)]
pub struct PhaseAssignment {
    k_max: i32,
    /// One phase per upper-half-plane mode, canonical order.
    half: Vec<f64>,
    pub seed: u64,
}

impl PhaseAssignment {
    /// All-zero phases; deterministic field builds for oracles and tests.
    pub fn zeros(k_max: i32) -> Self {
        assert!(k_max >= 1);
        Self {
            k_max,
            half: vec![0.0; upper_half_plane_len(k_max)],
            seed: 0,
        }
    }

    pub fn k_max(&self) -> i32 {
        self.k_max
    }

    /// Phase at `k` (negated for lower half-plane modes).
    pub fn phase(&self, k: WaveVector) -> f64 {
        let v = self.half[half_plane_index(k, self.k_max)];
        if k.in_upper_half_plane() {
            v
        } else {
            -v
        }
    }
}

/// Draw i.i.d. uniform phases on the upper half-plane; deterministic in `seed`.
pub fn sample_static_phases(seed: u64, k_max: i32) -> PhaseAssignment {
    assert!(k_max >= 1);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let half = (0..upper_half_plane_len(k_max))
        .map(|_| rng.gen_range(0.0..TAU))
        .collect();
    PhaseAssignment { k_max, half, seed }
}

/// Shape of the stationary correlation function `Phi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrelationShape {
    /// Frozen phases, `Phi == 1` (static limit).
    ConstantOne,
    /// `Phi(s) = exp(-s^2/2)`.
    Gaussian,
    /// `Phi(s) = 1/cosh(s)`; correlation oracle and series only, no sampler.
    SechType,
}

impl std::fmt::Display for CorrelationShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CorrelationShape::ConstantOne => write!(f, "constant-one"),
            CorrelationShape::Gaussian => write!(f, "gaussian"),
            CorrelationShape::SechType => write!(f, "sech-type"),
        }
    }
}

/// Time-correlation law `Phi_k(t) = Phi(chi_k |t|)` with `chi_k = chi |k|^eta`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CorrelationLaw {
    pub shape: CorrelationShape,
    pub chi0: f64,
    pub eta: f64,
}

impl CorrelationLaw {
    pub fn new(shape: CorrelationShape, chi0: f64, eta: f64) -> Result<Self> {
        if !(chi0 > 0.0) {
            return Err(Error::InvalidSpec(format!("chi must be positive, got {chi0}")));
        }
        if !(0.0..2.0).contains(&eta) {
            // Exponent 2 or more breaks the slow-correlation hypothesis
            // chi_k / |k|^alpha -> 0 for alpha >= 2.
            return Err(Error::InvalidSpec(format!("eta must satisfy 0 <= eta < 2, got {eta}")));
        }
        Ok(Self { shape, chi0, eta })
    }

    pub fn constant_one() -> Self {
        Self {
            shape: CorrelationShape::ConstantOne,
            chi0: 1.0,
            eta: 0.0,
        }
    }

    /// Per-mode correlation rate `chi_k = chi |k|^eta`.
    pub fn chi_k(&self, k: WaveVector) -> f64 {
        match self.shape {
            CorrelationShape::ConstantOne => 0.0,
            _ => self.chi0 * k.norm().powf(self.eta),
        }
    }

    /// `Phi(s)` for `s >= 0`.
    pub fn phi(&self, s: f64) -> f64 {
        debug_assert!(s >= 0.0);
        match self.shape {
            CorrelationShape::ConstantOne => 1.0,
            CorrelationShape::Gaussian => (-0.5 * s * s).exp(),
            CorrelationShape::SechType => 1.0 / s.cosh(),
        }
    }

    /// `Phi^{(n)}(0)`. Odd derivatives vanish for every shipped shape.
    pub fn phi_deriv0(&self, n: usize) -> Result<f64> {
        match self.shape {
            CorrelationShape::ConstantOne => Ok(if n == 0 { 1.0 } else { 0.0 }),
            CorrelationShape::Gaussian => {
                if n % 2 == 1 {
                    Ok(0.0)
                } else {
                    // (-1)^{n/2} (n-1)!! from the Taylor series of exp(-s^2/2)
                    let m = n / 2;
                    let mut v = 1.0;
                    for i in 0..m {
                        v *= (2 * i + 1) as f64;
                    }
                    Ok(if m % 2 == 0 { v } else { -v })
                }
            }
            CorrelationShape::SechType => match n {
                0 => Ok(1.0),
                1 | 3 => Ok(0.0),
                2 => Ok(-1.0),
                4 => Ok(5.0),
                _ => Err(Error::InvalidSpec(format!(
                    "sech-type derivatives implemented only to order 4, requested {n}"
                ))),
            },
        }
    }

    /// `Phi^{(n)}(s)`.
    pub fn phi_deriv(&self, n: usize, s: f64) -> Result<f64> {
        match self.shape {
            CorrelationShape::ConstantOne => Ok(if n == 0 { 1.0 } else { 0.0 }),
            CorrelationShape::Gaussian => {
                // d^n/ds^n exp(-s^2/2) = (-1)^n He_n(s) exp(-s^2/2)
                let he = hermite_prob(n, s);
                let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
                Ok(sign * he * (-0.5 * s * s).exp())
            }
            CorrelationShape::SechType => {
                let sech = 1.0 / s.cosh();
                let tanh = s.tanh();
                match n {
                    0 => Ok(sech),
                    1 => Ok(-sech * tanh),
                    2 => Ok(sech * tanh * tanh - sech.powi(3)),
                    3 => Ok(-sech * tanh.powi(3) + 5.0 * sech.powi(3) * tanh),
                    4 => Ok(sech * tanh.powi(4) - 18.0 * sech.powi(3) * tanh * tanh
                        + 5.0 * sech.powi(5)),
                    _ => Err(Error::InvalidSpec(format!(
                        "sech-type derivatives implemented only to order 4, requested {n}"
                    ))),
                }
            }
        }
    }
}

/// Probabilists' Hermite polynomial He_n(s).
fn hermite_prob(n: usize, s: f64) -> f64 {
    let mut h0 = 1.0;
    if n == 0 {
        return h0;
    }
    let mut h1 = s;
    for m in 1..n {
        let h2 = s * h1 - m as f64 * h0;
        h0 = h1;
        h1 = h2;
    }
    h1
}

/// `Phi(chi_k * dt)` for `dt >= 0`.
pub fn correlation_oracle(law: &CorrelationLaw, k: WaveVector, dt: f64) -> f64 {
    debug_assert!(dt >= 0.0);
    law.phi(law.chi_k(k) * dt)
}

/// One realized phase trajectory for a single mode, on a sample grid.
#[derive(Debug, Clone)]
pub struct PhasePath {
    pub k: WaveVector,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

/// A full family of phase paths `phi_k(t) = phi_k(0) + chi_k t Z_k`, with
/// `Z_k` standard normal, independent across the upper half-plane and
/// negated on the lower half-plane.
///
/// The linear drift with Gaussian random rate realizes exactly
/// `E e^{i(phi(s) - phi(r))} = exp(-(chi_k (s-r))^2 / 2)`, the gaussian shape.
/// Constant-one paths are frozen at `phi_k(0)`.
#[derive(Debug, Clone)]
pub struct PhasePathFamily {
    pub initial: PhaseAssignment,
    /// Drift rate `chi_k Z_k` per upper-half-plane mode; empty for frozen phases.
    rates: Vec<f64>,
    pub law: CorrelationLaw,
}

impl PhasePathFamily {
    pub fn sample(seed: u64, k_max: i32, law: CorrelationLaw) -> Result<Self> {
        let initial = sample_static_phases(derive_seed(seed, 0, PURPOSE_PHASE0), k_max);
        let rates = match law.shape {
            CorrelationShape::ConstantOne => Vec::new(),
            CorrelationShape::Gaussian => {
                let mut rng =
                    ChaCha12Rng::seed_from_u64(derive_seed(seed, 0, PURPOSE_RATE));
                upper_half_plane(k_max)
                    .map(|k| law.chi_k(k) * standard_normal(&mut rng))
                    .collect()
            }
            CorrelationShape::SechType => {
                return Err(Error::NoSampler("sech-type".to_string()))
            }
        };
        Ok(Self { initial, rates, law })
    }

    /// Build a frozen family from an existing static assignment.
    pub fn frozen(initial: PhaseAssignment) -> Self {
        Self {
            initial,
            rates: Vec::new(),
            law: CorrelationLaw::constant_one(),
        }
    }

    pub fn k_max(&self) -> i32 {
        self.initial.k_max()
    }

    pub fn phase_at(&self, k: WaveVector, t: f64) -> f64 {
        let base = self.initial.phase(k);
        if self.rates.is_empty() {
            return base;
        }
        let r = self.rates[half_plane_index(k, self.k_max())];
        let signed = if k.in_upper_half_plane() { r } else { -r };
        base + signed * t
    }
}

const PURPOSE_PHASE0: u64 = 0x70;
const PURPOSE_RATE: u64 = 0x72;

fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller; two uniforms per draw keeps the stream layout simple.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..TAU);
    (-2.0 * u1.ln()).sqrt() * u2.cos()
}

/// Sample one phase path for mode `k` on an increasing time grid.
///
/// Distinct modes draw from independent streams derived from `seed` and the
/// canonical mode index, so paths for different `k` are independent while
/// `path(-k) = -path(k)` holds exactly.
pub fn sample_phase_path(
    seed: u64,
    k: WaveVector,
    law: &CorrelationLaw,
    times: &[f64],
) -> Result<PhasePath> {
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidSpec("time grid must be strictly increasing".into()));
    }
    let stream = half_plane_index(k, i32::MAX / 4) as u64;
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, stream, PURPOSE_PATH));
    let phi0 = rng.gen_range(0.0..TAU);
    let rate = match law.shape {
        CorrelationShape::ConstantOne => 0.0,
        CorrelationShape::Gaussian => law.chi_k(k) * standard_normal(&mut rng),
        CorrelationShape::SechType => return Err(Error::NoSampler("sech-type".to_string())),
    };
    let sign = if k.in_upper_half_plane() { 1.0 } else { -1.0 };
    let values = times.iter().map(|&t| sign * (phi0 + rate * t)).collect();
    Ok(PhasePath {
        k,
        times: times.to_vec(),
        values,
    })
}

const PURPOSE_PATH: u64 = 0x50;
