//! TOML run configuration: sections `[velocity]`, `[source]`,
//! `[correlation]`, `[ensemble]`, `[solver]`, `[bands]` with keys named after
//! the usual symbols (`U`, `beta`, `kappa_g`, `chi`, `eta`, `K_max`, ...).

use serde::{Deserialize, Serialize};

use crate::ensemble::{EnsembleConfig, EnsembleMode};
use crate::error::{Error, Result};
use crate::fields::{SourceSpec, VelocitySpec};
use crate::phases::{CorrelationLaw, CorrelationShape};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub velocity: VelocitySection,
    pub source: SourceSection,
    #[serde(default)]
    pub correlation: CorrelationSection,
    #[serde(default)]
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub bands: BandsSection,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct VelocitySection {
    #[serde(rename = "U")]
    pub amplitude: f64,
    pub beta: f64,
    #[serde(rename = "K_max")]
    pub k_max: i32,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SourceSection {
    pub kappa_g: f64,
    /// Optional radial profile rows `[|k|^2, gamma]`.
    #[serde(default)]
    pub gamma_table: Vec<(i64, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct CorrelationSection {
    pub shape: CorrelationShape,
    pub chi: f64,
    pub eta: f64,
}

impl Default for CorrelationSection {
    fn default() -> Self {
        Self {
            shape: CorrelationShape::ConstantOne,
            chi: 1.0,
            eta: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleSection {
    pub mode: EnsembleMode,
    pub n_samples: usize,
    pub seed: u64,
    pub freeze_xi: bool,
    pub slack: f64,
    pub threads: usize,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        Self {
            mode: EnsembleMode::Static,
            n_samples: 400,
            seed: 42,
            freeze_xi: false,
            slack: 2.0,
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    /// Fixed-point tolerance; 0 means the default `1e-13 ||theta0||`.
    pub tol: f64,
    pub max_iter: usize,
    /// Time step; 0 means the default `1/(2 K_max^2)`.
    pub dt: f64,
    /// End time; 0 means several relaxation times of the slowest band mode.
    pub t_end: f64,
    pub order: u8,
    pub full_theta: bool,
    pub check_envelope: bool,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            tol: 0.0,
            max_iter: 200,
            dt: 0.0,
            t_end: 0.0,
            order: 1,
            full_theta: false,
            check_envelope: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct BandsSection {
    pub kappas: Vec<f64>,
}

impl Default for BandsSection {
    fn default() -> Self {
        Self {
            kappas: vec![8.0, 11.0, 16.0, 22.0, 32.0],
        }
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidSpec(format!("config parse error: {e}")))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::InvalidSpec(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_toml_str(&text)
    }

    pub fn velocity_spec(&self) -> Result<VelocitySpec> {
        VelocitySpec::new(
            self.velocity.amplitude,
            self.velocity.beta,
            self.velocity.k_max,
        )
    }

    pub fn source_spec(&self) -> Result<SourceSpec> {
        if self.source.gamma_table.is_empty() {
            SourceSpec::flat(self.source.kappa_g)
        } else {
            SourceSpec::with_table(self.source.kappa_g, self.source.gamma_table.clone())
        }
    }

    pub fn correlation_law(&self) -> Result<CorrelationLaw> {
        CorrelationLaw::new(
            self.correlation.shape,
            self.correlation.chi,
            self.correlation.eta,
        )
    }

    pub fn ensemble_config(&self) -> Result<EnsembleConfig> {
        Ok(EnsembleConfig {
            mode: self.ensemble.mode,
            n_samples: self.ensemble.n_samples,
            master_seed: self.ensemble.seed,
            velocity: self.velocity_spec()?,
            source: self.source_spec()?,
            correlation: self.correlation_law()?,
            bands: self.bands.kappas.clone(),
            freeze_source_phases: self.ensemble.freeze_xi,
            slack: self.ensemble.slack,
            t_end: (self.solver.t_end > 0.0).then_some(self.solver.t_end),
            measure_full_theta: self.solver.full_theta,
            check_envelope: self.solver.check_envelope,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[velocity]
U = 0.01
beta = -3.0
K_max = 64

[source]
kappa_g = 4.0
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = Config::from_toml_str(MINIMAL).unwrap();
        assert_eq!(c.ensemble.n_samples, 400);
        assert_eq!(c.ensemble.seed, 42);
        assert_eq!(c.bands.kappas.len(), 5);
        assert_eq!(c.correlation.shape, CorrelationShape::ConstantOne);
        assert!(c.ensemble_config().is_ok());
    }

    #[test]
    fn round_trip_is_identity() {
        let c = Config::from_toml_str(MINIMAL).unwrap();
        let text = c.to_toml_string();
        let c2 = Config::from_toml_str(&text).unwrap();
        assert_eq!(c, c2);
    }

    #[test]
    fn malformed_key_is_rejected_with_name() {
        let bad = MINIMAL.to_string() + "\n[ensemble]\nnsamples = 4\n";
        let err = Config::from_toml_str(&bad).unwrap_err().to_string();
        assert!(err.contains("nsamples"), "{err}");
    }

    #[test]
    fn correlation_section_parses_shapes() {
        let text = MINIMAL.to_string() + "\n[correlation]\nshape = \"gaussian\"\nchi = 2.5\neta = 0.5\n";
        let c = Config::from_toml_str(&text).unwrap();
        assert_eq!(c.correlation.shape, CorrelationShape::Gaussian);
        let law = c.correlation_law().unwrap();
        assert_eq!(law.chi0, 2.5);
    }
}
