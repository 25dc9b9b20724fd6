//! JSON run configuration. Every physical quantity names its SI unit.

use std::path::{Path, PathBuf};

use nvsense::ensemble::EnsembleConfig;
use nvsense::experiments::vector::Calibration;
use nvsense::experiments::EchoSetup;
use nvsense::geometry::{calibrate_static_field, Branch, CalibrationOptions, SplittingMode};
use nvsense::sequence::{ChannelAssignment, SequenceMode};
use nvsense::{Vec3f, Error};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
    pub static_field: StaticFieldConfig,
    #[serde(default)]
    pub echo: EchoSection,
    /// AC field to measure in `vector`.
    #[serde(default)]
    pub ac_field_t: Option<[f64; 3]>,
    #[serde(default)]
    pub odmr: OdmrSection,
    #[serde(default)]
    pub rabi: RabiSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub sensitivity: SensitivitySection,
    #[serde(default)]
    pub vector: VectorSection,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

/// Bias field, given directly or through four measured resonances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaticFieldConfig {
    #[serde(default)]
    pub vector_t: Option<[f64; 3]>,
    #[serde(default)]
    pub measured_frequencies_hz: Option<[f64; 4]>,
    #[serde(default)]
    pub branch: Branch,
    #[serde(default = "default_splitting_mode")]
    pub splitting: SplittingMode,
    #[serde(default = "default_max_residual")]
    pub max_residual_hz: f64,
}

fn default_splitting_mode() -> SplittingMode {
    SplittingMode::Fitted
}

fn default_max_residual() -> f64 {
    10e6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EchoSection {
    pub tau_s: f64,
    pub f_ac_hz: f64,
    pub phase0_rad: f64,
    pub rabi_frequency_hz: f64,
    /// Minimum carrier spacing in units of the Rabi frequency.
    pub channel_margin_factor: f64,
    /// Source pairs sharing an IQ modulator.
    pub source_pairs: [[usize; 2]; 2],
}

impl Default for EchoSection {
    fn default() -> Self {
        Self {
            tau_s: 10e-6,
            f_ac_hz: 100e3,
            phase0_rad: 0.0,
            rabi_frequency_hz: 2.5e6,
            channel_margin_factor: 10.0,
            source_pairs: [[1, 2], [3, 4]],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OdmrSection {
    /// Grid bounds; derived from the resonances when absent.
    pub start_hz: Option<f64>,
    pub stop_hz: Option<f64>,
    pub points: usize,
    pub linewidth_hz: f64,
    pub saturation: f64,
    pub integration_s: f64,
}

impl Default for OdmrSection {
    fn default() -> Self {
        Self {
            start_hz: None,
            stop_hz: None,
            points: 2001,
            linewidth_hz: 6e6,
            saturation: 1.0,
            integration_s: 1e4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RabiSection {
    /// Longest pulse; four Rabi periods when absent.
    pub stop_s: Option<f64>,
    pub points: usize,
    pub integration_s: f64,
    pub detuning_hz: [f64; 4],
}

impl Default for RabiSection {
    fn default() -> Self {
        Self {
            stop_s: None,
            points: 201,
            integration_s: 600.0,
            detuning_hz: [0.0; 4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub mode: String,
    pub direction: [f64; 3],
    pub amplitude_max_t: f64,
    pub points: usize,
    pub integration_s: f64,
    pub repeats: usize,
    pub window_fraction: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            mode: "multi:z".into(),
            direction: [0.0, 0.0, 1.0],
            amplitude_max_t: 1e-6,
            points: 201,
            integration_s: 1.0,
            repeats: 4,
            window_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensitivitySection {
    pub amplitude_max_t: f64,
    pub points: usize,
    pub sweep_integration_s: f64,
    pub sweep_repeats: usize,
    pub noise_integration_s: f64,
    pub noise_repeats: usize,
    /// Field direction of the single-axis sweeps; each axis is swept along
    /// itself when absent.
    pub single_direction: Option<[f64; 3]>,
    pub min_gradient_per_t: f64,
}

impl Default for SensitivitySection {
    fn default() -> Self {
        Self {
            amplitude_max_t: 0.2e-6,
            points: 201,
            sweep_integration_s: 1e4,
            sweep_repeats: 1,
            noise_integration_s: 1.0,
            noise_repeats: 4000,
            single_direction: None,
            min_gradient_per_t: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VectorSection {
    pub integration_s: f64,
    pub max_phase_rad: f64,
    pub calibration: Calibration,
}

impl Default for VectorSection {
    fn default() -> Self {
        Self {
            integration_s: 3600.0,
            max_phase_rad: 0.3,
            calibration: Calibration::Model,
        }
    }
}

/// Static field resolved from either form, with the splitting it implies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedField {
    pub field_t: Vec3f,
    pub zero_field_splitting_hz: f64,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "unsupported schema_version {}, expected {SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        match (&self.static_field.vector_t, &self.static_field.measured_frequencies_hz) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => {
                return Err(CliError::Config(
                    "static_field needs exactly one of vector_t and measured_frequencies_hz".into(),
                ))
            }
        }
        self.ensemble.validate().map_err(CliError::from)?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    pub fn static_field(&self) -> Result<ResolvedField, CliError> {
        let sf = &self.static_field;
        if let Some(v) = sf.vector_t {
            return Ok(ResolvedField {
                field_t: Vec3f::from_array(v),
                zero_field_splitting_hz: self.ensemble.zero_field_splitting_hz,
            });
        }
        let measured = sf.measured_frequencies_hz.expect("validated");
        let options = CalibrationOptions {
            branch: sf.branch,
            splitting: sf.splitting,
            max_residual_hz: sf.max_residual_hz,
            ..CalibrationOptions::default()
        };
        let cal = calibrate_static_field(
            measured,
            self.ensemble.zero_field_splitting_hz,
            self.ensemble.gamma_hz_per_t,
            &options,
        )?;
        Ok(ResolvedField {
            field_t: cal.field_t,
            zero_field_splitting_hz: cal.zero_field_splitting_hz,
        })
    }

    /// Channel `n` on NVn's lower-branch resonance.
    pub fn assignment(&self) -> Result<ChannelAssignment, CliError> {
        let resolved = self.static_field()?;
        let pairs = nvsense::geometry::resonance_frequencies(
            resolved.field_t,
            resolved.zero_field_splitting_hz,
            self.ensemble.gamma_hz_per_t,
        );
        let margin = self.echo.channel_margin_factor * self.echo.rabi_frequency_hz;
        let assignment = ChannelAssignment::from_frequencies(pairs.map(|p| p.0), margin)
            .map_err(|e| CliError::Config(format!("channel assignment: {e}")))?;
        assignment
            .with_source_pairs(self.echo.source_pairs)
            .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn echo_setup(&self) -> Result<EchoSetup, CliError> {
        Ok(EchoSetup {
            tau_s: self.echo.tau_s,
            f_ac_hz: self.echo.f_ac_hz,
            phase0_rad: self.echo.phase0_rad,
            rabi_frequency_hz: self.echo.rabi_frequency_hz,
            assignment: self.assignment()?,
        })
    }

    pub fn sweep_mode(&self) -> Result<SequenceMode, CliError> {
        self.sweep
            .mode
            .parse()
            .map_err(|e: String| CliError::Config(format!("sweep.mode: {e}")))
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_)
            | Error::InvalidBranch
            | Error::NoConsistentSignAssignment { .. }
            | Error::Parse { .. }
            | Error::Validation(_)
            | Error::InvalidTiming(_) => CliError::Config(e.to_string()),
            Error::ZeroGradient { .. } => CliError::Degenerate(e.to_string()),
            _ => CliError::Simulation(e.to_string()),
        }
    }
}
