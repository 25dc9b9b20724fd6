//! Full vector estimation with either control scheme.
//!
//! Conventional: four single-axis echoes give the projections `B_n`, which
//! are inverted by least squares. Multi-frequency: the three component
//! programs are read out and inverted through their response model, which
//! for equal ratios is a diagonal gain of `4 / sqrt 3` per component.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::sweep::{echo_amplitude_sweep, symmetric_grid, SweepOptions};
use super::{axis_visibility, program_jacobian as response_jacobian, program_signal, EchoSetup};
use crate::ensemble::{sample_readout_with, shot_noise_std, EnsembleConfig};
use crate::error::{Error, Result};
use crate::geometry::{axis_unit_vectors, Axis, Component, Vec3};
use crate::linalg;
use crate::rng::{derive_seed, task_rng};
use crate::sequence::{SequenceMode, SequenceProgram};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VectorScheme {
    Conventional,
    Multi,
}

impl fmt::Display for VectorScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VectorScheme::Conventional => "conventional",
            VectorScheme::Multi => "multi",
        })
    }
}

impl FromStr for VectorScheme {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "conventional" => Ok(VectorScheme::Conventional),
            "multi" => Ok(VectorScheme::Multi),
            _ => Err(format!("unknown vector scheme '{s}'")),
        }
    }
}

/// Where the field-to-signal conversion comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Calibration {
    /// Known gamma, tau, visibility and ratios; full nonlinear inversion.
    Model,
    /// Linear response measured by sweeping known fields along x, y and z.
    Sweep {
        amplitude_t: f64,
        points: usize,
        integration_s: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VectorOptions {
    /// Integration time of each program's readout.
    pub integration_s: f64,
    pub seed: u64,
    #[serde(default)]
    pub noiseless: bool,
    /// Largest allowed echo phase on any axis.
    #[serde(default = "default_max_phase")]
    pub max_phase_rad: f64,
    #[serde(default = "default_calibration")]
    pub calibration: Calibration,
}

fn default_max_phase() -> f64 {
    0.3
}

fn default_calibration() -> Calibration {
    Calibration::Model
}

impl Default for VectorOptions {
    fn default() -> Self {
        Self {
            integration_s: 3600.0,
            seed: 0,
            noiseless: false,
            max_phase_rad: default_max_phase(),
            calibration: default_calibration(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorEstimate {
    pub scheme: VectorScheme,
    /// Per-program dimensionless response: `(2P_n - 1) / V_n` per axis for
    /// the conventional scheme, the ratio-weighted mean of those for each
    /// multi-frequency component.
    pub responses: Vec<f64>,
    pub field_t: [f64; 3],
    /// Unit vector along `field_t`.
    pub direction: [f64; 3],
    pub amplitude_t: f64,
    pub amplitude_sigma_t: f64,
    pub covariance_t2: [[f64; 3]; 3],
}

/// Angle between two directions in degrees.
pub fn angular_error_deg(a: Vec3<f64>, b: Vec3<f64>) -> f64 {
    a.angle_to(b).to_degrees()
}

struct Readout {
    program: SequenceProgram,
    measured: f64,
    sigma: f64,
}

fn read_programs(
    config: &EnsembleConfig,
    setup: &EchoSetup,
    modes: &[SequenceMode],
    field_t: Vec3<f64>,
    options: &VectorOptions,
) -> Result<Vec<Readout>> {
    modes
        .iter()
        .enumerate()
        .map(|(i, &mode)| {
            let program = setup.program(mode)?;
            let model = program_signal(config, setup, &program, field_t);
            let shots = config.shots_in(options.integration_s, program.tau_s);
            let measured = if options.noiseless {
                model
            } else {
                let mut rng = task_rng(options.seed, i as u64);
                sample_readout_with(model, config, shots, &mut rng).estimate
            };
            let sigma = shot_noise_std(model, config, shots);
            Ok(Readout { program, measured, sigma })
        })
        .collect()
}

fn finish(
    noiseless: bool,
    scheme: VectorScheme,
    responses: Vec<f64>,
    field: Vec<f64>,
    cov: linalg::Matrix<f64>,
) -> Result<VectorEstimate> {
    let b = Vec3::new(field[0], field[1], field[2]);
    let amplitude = b.norm();
    let covariance_t2: [[f64; 3]; 3] = std::array::from_fn(|i| std::array::from_fn(|j| cov[i][j]));
    let dir = if amplitude > 0.0 { b.scale(1.0 / amplitude) } else { Vec3::zero() };
    let d = dir.to_array();
    let var: f64 = (0..3).map(|i| (0..3).map(|j| d[i] * cov[i][j] * d[j]).sum::<f64>()).sum();
    let trace_sigma = ((0..3).map(|i| cov[i][i]).sum::<f64>() / 3.0).sqrt();
    let sigma = if amplitude > 0.0 { var.max(0.0).sqrt() } else { trace_sigma };
    let consistent_with_zero = if noiseless { !(amplitude > 0.0) } else { !(amplitude > 3.0 * sigma) };
    if consistent_with_zero {
        return Err(Error::AmbiguousSign {
            amplitude_t: amplitude,
            sigma_t: sigma,
        });
    }
    Ok(VectorEstimate {
        scheme,
        responses,
        field_t: b.to_array(),
        direction: d,
        amplitude_t: amplitude,
        amplitude_sigma_t: sigma,
        covariance_t2,
    })
}

/// `A^+ Sigma A^+T` for the unweighted least-squares solution of `A x = y`.
fn least_squares_covariance(a: &[Vec<f64>], sigma: &[f64]) -> Result<linalg::Matrix<f64>> {
    let at = linalg::transpose(a);
    let ata_inv = linalg::invert(&linalg::mat_mul(&at, a))?;
    let pinv = linalg::mat_mul(&ata_inv, &at);
    let n = pinv.len();
    Ok((0..n)
        .map(|i| {
            (0..n)
                .map(|j| (0..sigma.len()).map(|m| pinv[i][m] * sigma[m] * sigma[m] * pinv[j][m]).sum())
                .collect()
        })
        .collect())
}

fn check_window(config: &EnsembleConfig, setup: &EchoSetup, field_t: Vec3<f64>, max_phase: f64) -> Result<()> {
    let kappa = setup.phase_per_tesla(config);
    let axes = axis_unit_vectors::<f64>();
    for axis in Axis::ALL {
        let phi = (kappa * axes.axis(axis).dot(field_t)).abs();
        if phi >= max_phase {
            return Err(Error::InvalidConfig(format!(
                "field drives a {phi:.3} rad echo phase on {axis}, outside the {max_phase} rad linear window"
            )));
        }
    }
    Ok(())
}

/// Linear response of each program to known fields along x, y and z, and
/// the fitted zero-field baselines.
fn sweep_calibration(
    config: &EnsembleConfig,
    setup: &EchoSetup,
    programs: &[&SequenceProgram],
    amplitude_t: f64,
    points: usize,
    integration_s: f64,
    options: &VectorOptions,
) -> Result<(linalg::Matrix<f64>, Vec<f64>)> {
    let grid = symmetric_grid(amplitude_t, points);
    let mut matrix = Vec::new();
    let mut baselines = Vec::new();
    for (p, program) in programs.iter().enumerate() {
        let mut row = Vec::new();
        let mut intercept = 0.0;
        for k in Component::ALL {
            let opts = SweepOptions {
                integration_s,
                repeats: 1,
                seed: derive_seed(options.seed, 1000 + 10 * p as u64 + k.index() as u64),
                noiseless: options.noiseless,
                window_fraction: 1.0,
            };
            let sweep = echo_amplitude_sweep(config, setup, &grid, program, k.unit(), &opts)?;
            let fit = sweep.gradient.expect("amplitude sweeps carry a gradient");
            row.push(fit.slope);
            intercept += fit.intercept / 3.0;
        }
        matrix.push(row);
        baselines.push(intercept);
    }
    Ok((matrix, baselines))
}

/// Measures `field_t` with `scheme` and reconstructs it.
///
/// Program `i` of the scheme draws its readout from RNG stream `i` of
/// `options.seed`.
pub fn estimate_vector(
    config: &EnsembleConfig,
    setup: &EchoSetup,
    field_t: Vec3<f64>,
    scheme: VectorScheme,
    options: &VectorOptions,
) -> Result<VectorEstimate> {
    config.validate()?;
    check_window(config, setup, field_t, options.max_phase_rad)?;
    let modes: Vec<SequenceMode> = match scheme {
        VectorScheme::Conventional => Axis::ALL.into_iter().map(SequenceMode::SingleFrequency).collect(),
        VectorScheme::Multi => Component::ALL.into_iter().map(SequenceMode::MultiFrequency).collect(),
    };
    let readouts = read_programs(config, setup, &modes, field_t, options)?;
    let programs: Vec<&SequenceProgram> = readouts.iter().map(|r| &r.program).collect();
    let sigma: Vec<f64> = readouts.iter().map(|r| r.sigma).collect();
    let axes = axis_unit_vectors::<f64>();

    let responses: Vec<f64> = match scheme {
        VectorScheme::Conventional => Axis::ALL
            .iter()
            .zip(&readouts)
            .map(|(&axis, r)| {
                let rho_c = config.ratios[axis.index()] * config.contrast;
                let p = 1.0 - (1.0 - r.measured) / rho_c;
                (2.0 * p - 1.0) / axis_visibility(config, r.program.tau_s, axis)
            })
            .collect(),
        VectorScheme::Multi => readouts
            .iter()
            .map(|r| {
                let weight: f64 = Axis::ALL
                    .iter()
                    .map(|&a| config.ratios[a.index()] * axis_visibility(config, r.program.tau_s, a))
                    .sum();
                let baseline = program_signal(config, setup, &r.program, Vec3::zero());
                2.0 * (r.measured - baseline) / (config.contrast * weight)
            })
            .collect(),
    };

    if let Calibration::Sweep {
        amplitude_t,
        points,
        integration_s,
    } = options.calibration
    {
        let (matrix, baselines) =
            sweep_calibration(config, setup, &programs, amplitude_t, points, integration_s, options)?;
        let delta: Vec<f64> = readouts.iter().zip(&baselines).map(|(r, b)| r.measured - b).collect();
        let field = linalg::least_squares(&matrix, &delta)?;
        let cov = least_squares_covariance(&matrix, &sigma)?;
        return finish(options.noiseless, scheme, responses, field, cov);
    }

    match scheme {
        VectorScheme::Conventional => {
            let mut projections = Vec::with_capacity(4);
            let mut proj_sigma = Vec::with_capacity(4);
            for ((&axis, r), &c) in Axis::ALL.iter().zip(&readouts).zip(&responses) {
                let sign = r.program.readout_signs(&setup.assignment)[axis.index()].ok_or_else(|| {
                    Error::Validation(format!("{axis} readout is not a 0 or pi flip"))
                })?;
                let kappa = setup.echo(r.program.tau_s, 0.0).phase_per_tesla(config.gamma_hz_per_t);
                if !(kappa.abs() > 0.0) {
                    return Err(Error::ZeroGradient {
                        context: format!("{axis}: echo has no AC response"),
                        gradient: kappa,
                    });
                }
                let phi = (f64::from(sign) * c).clamp(-1.0, 1.0).asin();
                projections.push(phi / kappa);
                let slope = config.ratios[axis.index()] * config.contrast * 0.5
                    * axis_visibility(config, r.program.tau_s, axis)
                    * kappa.abs()
                    * phi.cos();
                proj_sigma.push(r.sigma / slope);
            }
            let design = axes.design_matrix();
            let field = linalg::least_squares(&design, &projections)?;
            let cov = least_squares_covariance(&design, &proj_sigma)?;
            finish(options.noiseless, scheme, responses, field, cov)
        }
        VectorScheme::Multi => {
            let zero = response_jacobian(config, setup, &programs, Vec3::zero());
            let baseline: Vec<f64> = programs
                .iter()
                .map(|p| program_signal(config, setup, p, Vec3::zero()))
                .collect();
            let delta: Vec<f64> = readouts.iter().zip(&baseline).map(|(r, b)| r.measured - b).collect();
            let mut b = Vec3::from_array(
                linalg::solve(&zero, &delta)?
                    .try_into()
                    .expect("three components"),
            );
            for _ in 0..100 {
                let jac = response_jacobian(config, setup, &programs, b);
                let resid: Vec<f64> = readouts
                    .iter()
                    .map(|r| r.measured - program_signal(config, setup, &r.program, b))
                    .collect();
                let step = linalg::solve(&jac, &resid)?;
                let step = Vec3::new(step[0], step[1], step[2]);
                b = b + step;
                if step.norm() <= 1e-15 * b.norm().max(1e-30) {
                    break;
                }
            }
            let jac = response_jacobian(config, setup, &programs, b);
            let inv = linalg::invert(&jac)?;
            let cov = (0..3)
                .map(|i| {
                    (0..3)
                        .map(|j| (0..3).map(|m| inv[i][m] * sigma[m] * sigma[m] * inv[j][m]).sum())
                        .collect()
                })
                .collect();
            finish(options.noiseless, scheme, responses, b.to_array().to_vec(), cov)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noiseless() -> VectorOptions {
        VectorOptions {
            noiseless: true,
            ..VectorOptions::default()
        }
    }

    #[test]
    fn noiseless_round_trip_both_schemes() {
        let b = Vec3::new(0.23, 0.16, -0.97).normalized().scale(0.25e-6);
        for cfg in [EnsembleConfig::default(), EnsembleConfig::measured_ratios()] {
            for scheme in [VectorScheme::Conventional, VectorScheme::Multi] {
                let est = estimate_vector(&cfg, &EchoSetup::default(), b, scheme, &noiseless()).unwrap();
                let err = (Vec3::from_array(est.field_t) - b).norm() / b.norm();
                assert!(err < 1e-9, "{scheme} {err}");
            }
        }
    }

    #[test]
    fn equal_ratio_multi_gain_is_diagonal() {
        let cfg = EnsembleConfig::default();
        let setup = EchoSetup::default();
        let programs: Vec<SequenceProgram> = Component::ALL
            .iter()
            .map(|&k| setup.program(SequenceMode::MultiFrequency(k)).unwrap())
            .collect();
        let refs: Vec<&SequenceProgram> = programs.iter().collect();
        let j = response_jacobian(&cfg, &setup, &refs, Vec3::zero());
        let v = axis_visibility(&cfg, setup.tau_s, Axis::Nv1);
        let gain = 0.25 * cfg.contrast * 0.5 * v * setup.phase_per_tesla(&cfg) * 4.0 / 3f64.sqrt();
        for r in 0..3 {
            for c in 0..3 {
                let want = if r == c { gain } else { 0.0 };
                assert!((j[r][c] - want).abs() < 1e-12 * gain);
            }
        }
    }

    #[test]
    fn zero_field_is_ambiguous() {
        let r = estimate_vector(
            &EnsembleConfig::default(),
            &EchoSetup::default(),
            Vec3::zero(),
            VectorScheme::Multi,
            &noiseless(),
        );
        assert!(matches!(r, Err(Error::AmbiguousSign { .. })));
    }

    #[test]
    fn outside_linear_window_is_rejected() {
        let r = estimate_vector(
            &EnsembleConfig::default(),
            &EchoSetup::default(),
            Vec3::new(0.0, 0.0, 1e-6),
            VectorScheme::Conventional,
            &noiseless(),
        );
        assert!(matches!(r, Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn sweep_calibration_recovers_direction() {
        let b = Vec3::new(1.0, 0.0, 0.0).scale(0.2e-6);
        let opts = VectorOptions {
            calibration: Calibration::Sweep {
                amplitude_t: 0.02e-6,
                points: 21,
                integration_s: 1.0,
            },
            ..noiseless()
        };
        for scheme in [VectorScheme::Conventional, VectorScheme::Multi] {
            let est = estimate_vector(&EnsembleConfig::default(), &EchoSetup::default(), b, scheme, &opts).unwrap();
            let angle = angular_error_deg(Vec3::from_array(est.direction), b);
            assert!(angle < 0.5, "{scheme} {angle}");
        }
    }
}
