//! Monte Carlo orchestration: independent seeded realizations, band
//! statistics, verdicts against the analytic predictions, and scaling fits.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{
    build_source_truncated, build_streamfunction, source_functionals,
    velocity_from_streamfunction, SourceSpec, VelocitySpec,
};
use crate::phases::{derive_seed, sample_static_phases, CorrelationLaw, PhasePathFamily};
use crate::predictor::{gamma_envelope, smallness_diagnostics, PredictionReport};
use crate::spectral::{band_power, dyadic_band, DyadicBand, WaveVector};
use crate::static_solver::{first_order_term_direct, iterate_static};
use crate::timedep::{mode_power_quadrature, theta1_path, TimeHorizon};

const PURPOSE_PHI: u64 = 0x01;
const PURPOSE_XI: u64 = 0x02;
const PURPOSE_PATH_FAMILY: u64 = 0x03;

/// Static (frozen velocity) or time-dependent ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnsembleMode {
    Static,
    Timedep,
}

/// Full parameter set for one ensemble run.
#[derive(Debug, Clone)]
pub struct EnsembleConfig {
    pub mode: EnsembleMode,
    pub n_samples: usize,
    pub master_seed: u64,
    pub velocity: VelocitySpec,
    pub source: SourceSpec,
    pub correlation: CorrelationLaw,
    /// Dyadic band ladder (values of kappa).
    pub bands: Vec<f64>,
    /// Freeze the source phases across samples (conditional statistics).
    pub freeze_source_phases: bool,
    /// Slack multiplier on one-sided bounds.
    pub slack: f64,
    /// End time for time-dependent sampling; `None` picks several relaxation
    /// times of the slowest band mode.
    pub t_end: Option<f64>,
    /// Also solve for the full tracer per sample (static: fixed-point solve).
    pub measure_full_theta: bool,
    /// Count per-realization envelope violations over all modes.
    pub check_envelope: bool,
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 2 {
            return Err(Error::InvalidSpec(format!(
                "n_samples must be >= 2, got {}",
                self.n_samples
            )));
        }
        for &kappa in &self.bands {
            // surface the band-truncated error early
            dyadic_band(kappa, self.velocity.k_max)?;
        }
        if !(self.slack > 0.0) {
            return Err(Error::InvalidSpec("slack must be positive".into()));
        }
        Ok(())
    }
}

/// Per-band sample statistics over the ensemble.
#[derive(Debug, Clone, Serialize)]
pub struct BandStatistics {
    pub kappa: f64,
    pub sample_mean: f64,
    /// Unbiased sample variance.
    pub sample_variance: f64,
    /// `sqrt(sample_variance / n)`.
    pub std_error: f64,
    pub n: usize,
}

impl BandStatistics {
    pub fn from_samples(kappa: f64, values: &[f64]) -> Self {
        let n = values.len();
        assert!(n >= 2, "statistics need at least two samples");
        let mean = values.iter().sum::<f64>() / n as f64;
        let variance =
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
        Self {
            kappa,
            sample_mean: mean,
            sample_variance: variance,
            std_error: (variance / n as f64).sqrt(),
            n,
        }
    }
}

/// Everything an ensemble run produces.
#[derive(Debug, Clone)]
pub struct EnsembleOutcome {
    pub stats: Vec<BandStatistics>,
    pub report: PredictionReport,
    /// Per-sample band powers of the first-order term, `[band][sample]`.
    pub sample_powers: Vec<Vec<f64>>,
    /// Envelope violations summed over samples and modes (first-order term).
    pub envelope_violations: usize,
    /// Band statistics of `theta - theta0` when the full solve is enabled.
    pub full_theta_stats: Option<Vec<BandStatistics>>,
    /// Per-sample worst contraction ratio of the fixed-point increments
    /// (full static solve only).
    pub contraction_ratios: Vec<f64>,
}

struct SampleResult {
    band_powers: Vec<f64>,
    full_band_powers: Option<Vec<f64>>,
    envelope_violations: usize,
    contraction_ratio: Option<f64>,
}

/// Run a static-velocity ensemble: fresh phases per sample, first-order term
/// via the direct formula, optional full fixed-point solve.
pub fn run_static_ensemble(config: &EnsembleConfig) -> Result<EnsembleOutcome> {
    config.validate()?;
    let small = smallness_diagnostics(&config.velocity, &config.source)?;
    if !small.all_ok {
        return Err(Error::OutOfTheory(format!(
            "smallness gates fail: sup_norm_sq = {:.3e}, sqrt(U) c4 = {:.3}",
            small.sup_norm_sq,
            config.velocity.amplitude.sqrt() * small.contraction_constant
        )));
    }
    let bands = resolve_bands(config)?;
    let funcs = source_functionals(&config.source);
    let envelope_bound = |k: WaveVector| {
        funcs.grad_inv_sup
            * config.velocity.amplitude
            * gamma_envelope(k.norm(), config.velocity.beta, config.source.kappa_g)
    };

    let results: Result<Vec<SampleResult>> = (0..config.n_samples)
        .into_par_iter()
        .map(|i| {
            sample_static(config, &bands, i as u64, &envelope_bound)
                .map_err(|e| Error::SampleFailed {
                    index: i,
                    source: Box::new(e),
                })
        })
        .collect();
    let results = results?;
    Ok(assemble(config, &bands, results, None))
}

fn sample_static(
    config: &EnsembleConfig,
    bands: &[DyadicBand],
    index: u64,
    envelope_bound: &dyn Fn(WaveVector) -> f64,
) -> Result<SampleResult> {
    let k_max = config.velocity.k_max;
    let phi = sample_static_phases(derive_seed(config.master_seed, index, PURPOSE_PHI), k_max);
    let xi_index = if config.freeze_source_phases { 0 } else { index };
    let xi = sample_static_phases(derive_seed(config.master_seed, xi_index, PURPOSE_XI), k_max);

    let vartheta = first_order_term_direct(&config.velocity, &phi, &config.source, &xi);
    let band_powers: Result<Vec<f64>> =
        bands.iter().map(|b| band_power(&vartheta, b)).collect();
    let band_powers = band_powers?;

    let envelope_violations = if config.check_envelope {
        vartheta
            .modes()
            .filter(|&k| vartheta.get(k).norm() > envelope_bound(k) * (1.0 + 1e-12))
            .count()
    } else {
        0
    };

    let (full_band_powers, contraction_ratio) = if config.measure_full_theta {
        let psi = build_streamfunction(&config.velocity, &phi);
        let u = velocity_from_streamfunction(&psi);
        let g = build_source_truncated(&config.source, &xi, k_max);
        let solve = iterate_static(&u, &g, None, 0)?;
        let fluct = solve.theta.sub_field(&solve.theta0)?;
        let powers: Result<Vec<f64>> = bands.iter().map(|b| band_power(&fluct, b)).collect();
        let worst = solve
            .increment_norms
            .windows(2)
            .filter(|w| w[0] > 1e-280)
            .map(|w| w[1] / w[0])
            .fold(0.0f64, f64::max);
        (Some(powers?), Some(worst))
    } else {
        (None, None)
    };

    Ok(SampleResult {
        band_powers,
        full_band_powers,
        envelope_violations,
        contraction_ratio,
    })
}

/// Run a time-dependent ensemble: phase-path family per sample, first-order
/// term per band mode by damped path quadrature at `t_end`.
pub fn run_timedep_ensemble(config: &EnsembleConfig) -> Result<EnsembleOutcome> {
    config.validate()?;
    let small = smallness_diagnostics(&config.velocity, &config.source)?;
    if !small.all_ok {
        return Err(Error::OutOfTheory("smallness gates fail".into()));
    }
    // sampler availability check up front
    PhasePathFamily::sample(0, 1, config.correlation)?;

    let bands = resolve_bands(config)?;
    let slowest = bands
        .iter()
        .flat_map(|b| b.members.iter())
        .map(|k| k.norm_sq())
        .min()
        .ok_or_else(|| Error::InvalidSpec("empty band ladder".into()))? as f64;
    let t_end = config.t_end.unwrap_or(20.0 / slowest);

    let results: Result<Vec<SampleResult>> = (0..config.n_samples)
        .into_par_iter()
        .map(|i| {
            sample_timedep(config, &bands, i as u64, t_end).map_err(|e| Error::SampleFailed {
                index: i,
                source: Box::new(e),
            })
        })
        .collect();
    let results = results?;
    Ok(assemble(config, &bands, results, Some(t_end)))
}

fn sample_timedep(
    config: &EnsembleConfig,
    bands: &[DyadicBand],
    index: u64,
    t_end: f64,
) -> Result<SampleResult> {
    let k_max = config.velocity.k_max;
    let family = PhasePathFamily::sample(
        derive_seed(config.master_seed, index, PURPOSE_PATH_FAMILY),
        k_max,
        config.correlation,
    )?;
    let xi_index = if config.freeze_source_phases { 0 } else { index };
    let xi = sample_static_phases(derive_seed(config.master_seed, xi_index, PURPOSE_XI), k_max);

    let mut band_powers = Vec::with_capacity(bands.len());
    for band in bands {
        let mut power = 0.0;
        for &k in &band.members {
            if !k.in_upper_half_plane() {
                continue; // |vartheta_{-k}| = |vartheta_k|
            }
            let a = k.norm_sq() as f64;
            // fastest scale among the diffusive rate and the phase rates
            // chi_{k-j} over the source support
            let chi_max = config.correlation.chi0 * (k.norm() + config.source.kappa_g).powf(config.correlation.eta);
            let rate = a.max(chi_max);
            let n_steps = ((t_end * rate * 24.0).ceil() as usize).max(32);
            let v = theta1_path(
                &config.velocity,
                &family,
                &config.source,
                &xi,
                k,
                t_end,
                n_steps,
            )?;
            power += 2.0 * v.norm_sqr();
        }
        band_powers.push(power);
    }

    Ok(SampleResult {
        band_powers,
        full_band_powers: None,
        envelope_violations: 0,
        contraction_ratio: None,
    })
}

fn resolve_bands(config: &EnsembleConfig) -> Result<Vec<DyadicBand>> {
    config
        .bands
        .iter()
        .map(|&kappa| dyadic_band(kappa, config.velocity.k_max))
        .collect()
}

fn assemble(
    config: &EnsembleConfig,
    bands: &[DyadicBand],
    results: Vec<SampleResult>,
    t_end: Option<f64>,
) -> EnsembleOutcome {
    let n_bands = bands.len();
    let mut sample_powers = vec![Vec::with_capacity(results.len()); n_bands];
    let mut full_powers = vec![Vec::with_capacity(results.len()); n_bands];
    let mut envelope_violations = 0;
    let mut contraction_ratios = Vec::new();
    for r in &results {
        for (b, &p) in r.band_powers.iter().enumerate() {
            sample_powers[b].push(p);
        }
        if let Some(fp) = &r.full_band_powers {
            for (b, &p) in fp.iter().enumerate() {
                full_powers[b].push(p);
            }
        }
        envelope_violations += r.envelope_violations;
        if let Some(c) = r.contraction_ratio {
            contraction_ratios.push(c);
        }
    }

    let stats: Vec<BandStatistics> = bands
        .iter()
        .zip(sample_powers.iter())
        .map(|(b, v)| BandStatistics::from_samples(b.kappa, v))
        .collect();
    let full_theta_stats = if full_powers.iter().all(|v| v.len() >= 2) && !full_powers.is_empty() {
        Some(
            bands
                .iter()
                .zip(full_powers.iter())
                .map(|(b, v)| BandStatistics::from_samples(b.kappa, v))
                .collect(),
        )
    } else {
        None
    };

    let law = (config.mode == EnsembleMode::Timedep).then_some(&config.correlation);
    let mut report = PredictionReport::new(
        &config.bands,
        &config.source,
        config.velocity.amplitude,
        config.velocity.beta,
        law,
        config.slack,
    );
    let mut all_pass = true;
    for (row, stat) in report.rows.iter_mut().zip(stats.iter()) {
        row.measured_mean = Some(stat.sample_mean);
        row.measured_variance = Some(stat.sample_variance);
        row.std_error = Some(stat.std_error);
        // mean check against the lattice-exact expectation; time-dependent
        // runs compare against the per-mode quadrature prediction instead
        let target = match (config.mode, t_end) {
            (EnsembleMode::Timedep, Some(t)) => timedep_band_prediction(config, row.kappa, t),
            _ => row.expected_vartheta_lattice,
        };
        let sig = (stat.sample_mean - target).abs() / stat.std_error.max(1e-300);
        row.mean_margin_sigmas = Some(sig);
        row.mean_ok = Some(sig <= 3.0);
        let vr = stat.sample_variance / row.variance_bound.max(1e-300);
        row.variance_ratio = Some(vr);
        row.variance_ok = Some(vr <= config.slack);
        if !row.mean_ok.unwrap() {
            all_pass = false;
        }
        if !row.below_validity && !row.variance_ok.unwrap() {
            all_pass = false;
        }
    }
    report.all_pass = Some(all_pass);

    EnsembleOutcome {
        stats,
        report,
        sample_powers,
        envelope_violations,
        full_theta_stats,
        contraction_ratios,
    }
}

/// Band-level expectation at finite time by summing per-mode quadrature.
fn timedep_band_prediction(config: &EnsembleConfig, kappa: f64, t_end: f64) -> f64 {
    let band = dyadic_band(kappa, config.velocity.k_max).expect("validated");
    band.members
        .iter()
        .filter(|k| k.in_upper_half_plane())
        .map(|&k| {
            2.0 * mode_power_quadrature(
                k,
                &config.correlation,
                &config.source,
                &config.velocity,
                TimeHorizon::Finite(t_end),
            )
            .map(|e| e.value)
            .unwrap_or(f64::NAN)
        })
        .sum()
}

/// Ordinary least squares of `ln(mean)` against `ln(kappa)`.
///
/// Returns the slope and its standard error.
pub fn fit_scaling_exponent(stats: &[BandStatistics]) -> Result<(f64, f64)> {
    if stats.len() < 3 {
        return Err(Error::InvalidSpec(format!(
            "scaling fit needs >= 3 bands, got {}",
            stats.len()
        )));
    }
    for s in stats {
        if !(s.sample_mean > 0.0) {
            return Err(Error::NonPositiveMean { kappa: s.kappa });
        }
    }
    let pts: Vec<(f64, f64)> = stats
        .iter()
        .map(|s| (s.kappa.ln(), s.sample_mean.ln()))
        .collect();
    Ok(fit_line(&pts))
}

/// Least-squares line fit returning `(slope, slope standard error)`.
pub fn fit_line(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = points
        .iter()
        .map(|p| {
            let r = p.1 - (slope * p.0 + intercept);
            r * r
        })
        .sum();
    let dof = (n - 2.0).max(1.0);
    let stderr = (ss_res / dof / sxx).sqrt();
    (slope, stderr)
}

/// Lag-1 autocorrelation of a sample series.
pub fn lag1_autocorrelation(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 3 {
        return 0.0;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let var: f64 = series.iter().map(|v| (v - mean) * (v - mean)).sum();
    if var == 0.0 {
        return 0.0;
    }
    let cov: f64 = series
        .windows(2)
        .map(|w| (w[0] - mean) * (w[1] - mean))
        .sum();
    cov / var
}
