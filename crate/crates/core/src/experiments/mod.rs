//! Simulated experiments: ODMR, Rabi calibration, echo amplitude sweeps,
//! sensitivity accounting and vector estimation.

pub mod odmr;
pub mod rabi;
pub mod sensitivity;
pub mod sweep;
pub mod vector;

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::ensemble::EnsembleConfig;
use crate::error::{Error, Result};
use crate::fit::LinearFit;
use crate::geometry::{axis_unit_vectors, Axis, Vec3};
use crate::sequence::{build_echo_sequence, ChannelAssignment, SequenceMode, SequenceProgram};
use crate::linalg;
use crate::spin::{accumulated_phase, echo_population, echo_visibility, DriveConfig, EchoConfig};

pub use odmr::{simulate_odmr, OdmrOptions, OdmrResult};
pub use rabi::{simulate_rabi, RabiOptions, RabiResult};
pub use sensitivity::{
    compute_sensitivity, gradient_improvement_ratios, run_sensitivity, Scheme, SensitivityData,
    SensitivityOptions, SensitivityReport, Uncertain,
};
pub use sweep::{echo_amplitude_sweep, SweepOptions};
pub use vector::{estimate_vector, Calibration, VectorEstimate, VectorOptions, VectorScheme};

/// AC field and echo timing shared by all echo experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EchoSetup {
    pub tau_s: f64,
    pub f_ac_hz: f64,
    pub phase0_rad: f64,
    pub rabi_frequency_hz: f64,
    pub assignment: ChannelAssignment,
}

impl Default for EchoSetup {
    /// 100 kHz field locked to a 10 us echo, 2.5 MHz Rabi frequency.
    fn default() -> Self {
        Self {
            tau_s: 10e-6,
            f_ac_hz: 100e3,
            phase0_rad: 0.0,
            rabi_frequency_hz: 2.5e6,
            assignment: ChannelAssignment::identity(),
        }
    }
}

impl EchoSetup {
    pub fn program(&self, mode: SequenceMode) -> Result<SequenceProgram> {
        build_echo_sequence(
            mode,
            self.tau_s,
            &DriveConfig::on_resonance(self.rabi_frequency_hz, 0.0, 0.0),
            &self.assignment,
        )
    }

    /// Echo configuration with a program's own tau and a given relative
    /// readout phase.
    pub fn echo(&self, tau_s: f64, relative_readout_rad: f64) -> EchoConfig<f64> {
        EchoConfig {
            tau_s,
            f_ac_hz: self.f_ac_hz,
            phase0_rad: self.phase0_rad,
            readout_phase_rad: FRAC_PI_2 + relative_readout_rad,
        }
    }

    /// Echo phase per tesla of on-axis amplitude.
    pub fn phase_per_tesla(&self, config: &EnsembleConfig) -> f64 {
        self.echo(self.tau_s, 0.0).phase_per_tesla(config.gamma_hz_per_t)
    }
}

/// Spin-level echo visibility of one axis.
pub fn axis_visibility(config: &EnsembleConfig, tau_s: f64, axis: Axis) -> f64 {
    echo_visibility(tau_s, config.t2_s, config.stretch, config.pulse_fidelity[axis.index()])
}

/// `P(|0>)` per axis after `program` for AC amplitude vector `field_t`.
/// Axes the program does not drive stay at 1.
pub fn program_populations(
    config: &EnsembleConfig,
    setup: &EchoSetup,
    program: &SequenceProgram,
    field_t: Vec3<f64>,
) -> [f64; 4] {
    let axes = axis_unit_vectors::<f64>();
    let rel = program.relative_readout_phases(&setup.assignment);
    let mut out = [1.0; 4];
    for axis in Axis::ALL {
        if let Some(r) = rel[axis.index()] {
            let echo = setup.echo(program.tau_s, r);
            let phi = accumulated_phase(axes.axis(axis).dot(field_t), &echo, config.gamma_hz_per_t);
            let v = axis_visibility(config, program.tau_s, axis);
            out[axis.index()] = echo_population(phi, v, echo.readout_phase_rad);
        }
    }
    out
}

/// Noiseless normalized PL after `program`.
pub fn program_signal(
    config: &EnsembleConfig,
    setup: &EchoSetup,
    program: &SequenceProgram,
    field_t: Vec3<f64>,
) -> f64 {
    config.signal(program_populations(config, setup, program, field_t))
}

/// Analytic signal response `dS_p/dB_j` at `field_t` for each program `p`.
pub fn program_jacobian(
    config: &EnsembleConfig,
    setup: &EchoSetup,
    programs: &[&SequenceProgram],
    field_t: Vec3<f64>,
) -> linalg::Matrix<f64> {
    let axes = axis_unit_vectors::<f64>();
    programs
        .iter()
        .map(|program| {
            let rel = program.relative_readout_phases(&setup.assignment);
            let mut row = vec![0.0; 3];
            for axis in Axis::ALL {
                let Some(r) = rel[axis.index()] else { continue };
                let echo = setup.echo(program.tau_s, r);
                let u = axes.axis(axis);
                let kappa = echo.phase_per_tesla(config.gamma_hz_per_t);
                let phi = accumulated_phase(u.dot(field_t), &echo, config.gamma_hz_per_t);
                let v = axis_visibility(config, program.tau_s, axis);
                let dp_dphi = -0.5 * v * (phi - echo.readout_phase_rad).sin();
                let w = config.ratios[axis.index()] * config.contrast * dp_dphi * kappa;
                for (j, slot) in row.iter_mut().enumerate() {
                    *slot += w * u.to_array()[j];
                }
            }
            row
        })
        .collect()
}

/// Signal of a program versus an independent variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// Name and unit of the independent variable, e.g. `amplitude_t`.
    pub variable: String,
    pub grid: Vec<f64>,
    /// Mean normalized PL per point.
    pub mean: Vec<f64>,
    /// `delta P` per point: empirical over repeats, or the expected shot
    /// noise for noiseless runs.
    pub std: Vec<f64>,
    /// Photons summed over the repeats of each point.
    pub counts: Vec<u64>,
    /// Noiseless model value per point.
    pub model: Vec<f64>,
    /// Program mode or experiment label.
    pub mode: String,
    pub seed: u64,
    /// Central gradient `dP/dB` for amplitude sweeps.
    pub gradient: Option<LinearFit>,
}

impl SweepResult {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }
}

pub(crate) fn check_ascending(grid: &[f64], what: &str) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::InvalidConfig(format!("{what} grid needs at least two points")));
    }
    if grid.iter().any(|v| !v.is_finite()) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidConfig(format!("{what} grid must be finite and strictly ascending")));
    }
    Ok(())
}
