//! Magnetic sensitivity of the conventional and multi-frequency schemes.
//!
//! Every sensitivity is `delta P sqrt(T) / |dP/dB|`, i.e. referred to one
//! second of measurement (tesla per root hertz).
//!
//! Conventional component `k` combines the two single-axis signals whose
//! axes the readout pattern of `k` leaves unflipped (x: NV1 + NV3,
//! y: NV1 + NV2, z: NV1 + NV4). Their summed signal has gradient
//! `sum_a (u_a . e_k) dP_a/dB_a` and noise `sqrt(dP_a^2 + dP_b^2)`, and the
//! two measurements share the time budget, which costs a factor `sqrt 2`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::sweep::{echo_amplitude_sweep, symmetric_grid, SweepOptions};
use super::{program_jacobian, program_signal, EchoSetup, SweepResult};
use crate::ensemble::{estimate_noise, shot_noise_std, EnsembleConfig, NoiseEstimate};
use crate::error::{Error, Result};
use crate::fit::LinearFit;
use crate::geometry::{axis_unit_vectors, sign_pattern, Axis, Component, Vec3};
use crate::rng::{derive_seed, task_rng};
use crate::sequence::SequenceMode;

/// A value with its one-sigma uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Uncertain {
    pub value: f64,
    pub uncertainty: f64,
}

impl Uncertain {
    fn relative(&self) -> f64 {
        self.uncertainty / self.value.abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Single,
    Multi,
    #[default]
    Both,
}

impl Scheme {
    pub fn includes_single(self) -> bool {
        matches!(self, Scheme::Single | Scheme::Both)
    }

    pub fn includes_multi(self) -> bool {
        matches!(self, Scheme::Multi | Scheme::Both)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Single => "single",
            Scheme::Multi => "multi",
            Scheme::Both => "both",
        })
    }
}

impl FromStr for Scheme {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "single" => Ok(Scheme::Single),
            "multi" => Ok(Scheme::Multi),
            "both" => Ok(Scheme::Both),
            _ => Err(format!("unknown scheme '{s}' (expected single, multi or both)")),
        }
    }
}

/// Gradients and noise feeding [`compute_sensitivity`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityData {
    /// Fitted `dP/dB` of single-frequency NVn along its sweep direction.
    pub axis_gradients: Option<[LinearFit; 4]>,
    /// `u_n . d` for each single-axis sweep direction `d`.
    pub axis_projections: [f64; 4],
    /// `delta P` at each single-axis operating point.
    pub axis_noise: Option<[NoiseEstimate; 4]>,
    /// Fitted `dP/dB_k` of the multi-frequency program for component k.
    pub multi_gradients: Option<[LinearFit; 3]>,
    pub multi_noise: Option<[NoiseEstimate; 3]>,
    /// Gradients below this magnitude (1/T) count as zero.
    pub min_gradient_per_t: f64,
}

impl SensitivityData {
    /// Exact zero-field gradients of the analytic model and expected shot
    /// noise for one second of integration, without sweeps or sampling.
    pub fn analytic(
        config: &EnsembleConfig,
        setup: &EchoSetup,
        scheme: Scheme,
        single_direction: Option<Vec3<f64>>,
        min_gradient_per_t: f64,
    ) -> Result<Self> {
        config.validate()?;
        let axes = axis_unit_vectors::<f64>();
        let exact = |slope: f64| LinearFit {
            slope,
            intercept: 0.0,
            slope_stderr: 0.0,
            intercept_stderr: 0.0,
            residual_rms: 0.0,
        };
        let expected_noise = |mode: SequenceMode| -> Result<(f64, NoiseEstimate, crate::sequence::SequenceProgram)> {
            let program = setup.program(mode)?;
            let baseline = program_signal(config, setup, &program, Vec3::zero());
            let shots = config.shots_in(1.0, program.tau_s);
            let noise = NoiseEstimate {
                integration_s: 1.0,
                shots,
                mean: baseline,
                std: shot_noise_std(baseline, config, shots),
                std_stderr: 0.0,
                repeats: 0,
            };
            Ok((baseline, noise, program))
        };
        let mut data = SensitivityData {
            axis_gradients: None,
            axis_projections: [1.0; 4],
            axis_noise: None,
            multi_gradients: None,
            multi_noise: None,
            min_gradient_per_t,
        };
        if scheme.includes_single() {
            let mut fits = [exact(0.0); 4];
            let mut noises = Vec::new();
            for axis in Axis::ALL {
                let u = axes.axis(axis);
                let d = single_direction.map_or(u, |d| d.normalized());
                data.axis_projections[axis.index()] = u.dot(d);
                let (_, noise, program) = expected_noise(SequenceMode::SingleFrequency(axis))?;
                let row = &program_jacobian(config, setup, &[&program], Vec3::zero())[0];
                fits[axis.index()] = exact(Vec3::new(row[0], row[1], row[2]).dot(d));
                noises.push(noise);
            }
            data.axis_gradients = Some(fits);
            data.axis_noise = Some(std::array::from_fn(|i| noises[i]));
        }
        if scheme.includes_multi() {
            let mut fits = [exact(0.0); 3];
            let mut noises = Vec::new();
            for k in Component::ALL {
                let (_, noise, program) = expected_noise(SequenceMode::MultiFrequency(k))?;
                let row = &program_jacobian(config, setup, &[&program], Vec3::zero())[0];
                fits[k.index()] = exact(row[k.index()]);
                noises.push(noise);
            }
            data.multi_gradients = Some(fits);
            data.multi_noise = Some(std::array::from_fn(|i| noises[i]));
        }
        Ok(data)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    /// `delta B_n` per axis.
    pub per_axis_t_per_rthz: Option<[Uncertain; 4]>,
    /// Conventional two-axis estimate of each component.
    pub conventional_t_per_rthz: Option<[Uncertain; 3]>,
    /// Multi-frequency estimate of each component.
    pub multi_component_t_per_rthz: Option<[Uncertain; 3]>,
    /// Mean of the three multi-frequency component sensitivities.
    pub multi_frequency_t_per_rthz: Option<Uncertain>,
    /// Conventional over multi-frequency, per component.
    pub improvement_ratio: Option<[Uncertain; 3]>,
}

fn checked_gradient(fit: &LinearFit, min: f64, context: impl Into<String>) -> Result<Uncertain> {
    let threshold = min.max(3.0 * fit.slope_stderr);
    if !(fit.slope.abs() > threshold) {
        return Err(Error::ZeroGradient {
            context: context.into(),
            gradient: fit.slope,
        });
    }
    Ok(Uncertain {
        value: fit.slope,
        uncertainty: fit.slope_stderr,
    })
}

/// `delta P sqrt(T)` with its uncertainty.
fn noise_density(n: &NoiseEstimate) -> Uncertain {
    let root = n.integration_s.sqrt();
    Uncertain {
        value: n.std * root,
        uncertainty: n.std_stderr * root,
    }
}

fn quotient(num: Uncertain, den: Uncertain) -> Uncertain {
    let value = num.value / den.value.abs();
    Uncertain {
        value,
        uncertainty: value * num.relative().hypot(den.relative()),
    }
}

/// Per-axis gradients `dP_n/dB_n` referred to the axis direction.
fn axis_gradients(data: &SensitivityData) -> Result<Option<[Uncertain; 4]>> {
    let Some(fits) = &data.axis_gradients else {
        return Ok(None);
    };
    let mut out = [Uncertain { value: 0.0, uncertainty: 0.0 }; 4];
    for axis in Axis::ALL {
        let i = axis.index();
        let context = format!("single_frequency {axis}: field direction orthogonal to the axis");
        let g = checked_gradient(&fits[i], data.min_gradient_per_t, context.clone())?;
        let proj = data.axis_projections[i];
        if !(proj.abs() > 1e-12) {
            return Err(Error::ZeroGradient {
                context,
                gradient: g.value,
            });
        }
        out[i] = Uncertain {
            value: g.value / proj,
            uncertainty: g.uncertainty / proj.abs(),
        };
    }
    Ok(Some(out))
}

/// Conventional pair gradient for component `k`: `sum_a (u_a . e_k) g_a`.
fn pair_gradient(axis_g: &[Uncertain; 4], k: Component) -> (Vec<Axis>, Uncertain) {
    let axes = axis_unit_vectors::<f64>();
    let pattern = sign_pattern(k);
    let pair: Vec<Axis> = Axis::ALL.into_iter().filter(|&a| pattern.sign(a) > 0).collect();
    let mut value = 0.0;
    let mut var = 0.0;
    for &a in &pair {
        let w = axes.axis(a).component(k);
        value += w * axis_g[a.index()].value;
        var += (w * axis_g[a.index()].uncertainty).powi(2);
    }
    (pair, Uncertain { value, uncertainty: var.sqrt() })
}

/// Builds the report from whatever parts of `data` are present.
pub fn compute_sensitivity(data: &SensitivityData) -> Result<SensitivityReport> {
    let axis_g = axis_gradients(data)?;
    let mut report = SensitivityReport {
        per_axis_t_per_rthz: None,
        conventional_t_per_rthz: None,
        multi_component_t_per_rthz: None,
        multi_frequency_t_per_rthz: None,
        improvement_ratio: None,
    };

    if let (Some(g), Some(noise)) = (axis_g, &data.axis_noise) {
        let dens = noise.each_ref().map(noise_density);
        report.per_axis_t_per_rthz = Some(std::array::from_fn(|i| quotient(dens[i], g[i])));
        let mut conv = [Uncertain { value: 0.0, uncertainty: 0.0 }; 3];
        for k in Component::ALL {
            let (pair, grad) = pair_gradient(&g, k);
            if !(grad.value.abs() > data.min_gradient_per_t) {
                return Err(Error::ZeroGradient {
                    context: format!("conventional {k} pair"),
                    gradient: grad.value,
                });
            }
            let var: f64 = pair.iter().map(|a| dens[a.index()].value.powi(2)).sum();
            let var_err: f64 = pair
                .iter()
                .map(|a| (dens[a.index()].value * dens[a.index()].uncertainty).powi(2))
                .sum::<f64>();
            let single = Uncertain {
                value: std::f64::consts::SQRT_2 * var.sqrt(),
                uncertainty: std::f64::consts::SQRT_2 * var_err.sqrt() / var.sqrt(),
            };
            conv[k.index()] = quotient(single, grad);
        }
        report.conventional_t_per_rthz = Some(conv);
    }

    if let (Some(fits), Some(noise)) = (&data.multi_gradients, &data.multi_noise) {
        let mut multi = [Uncertain { value: 0.0, uncertainty: 0.0 }; 3];
        for k in Component::ALL {
            let g = checked_gradient(
                &fits[k.index()],
                data.min_gradient_per_t,
                format!("multi_frequency {k}: no response along e_{k}"),
            )?;
            multi[k.index()] = quotient(noise_density(&noise[k.index()]), g);
        }
        let mean = multi.iter().map(|m| m.value).sum::<f64>() / 3.0;
        let unc = multi.iter().map(|m| m.uncertainty.powi(2)).sum::<f64>().sqrt() / 3.0;
        report.multi_component_t_per_rthz = Some(multi);
        report.multi_frequency_t_per_rthz = Some(Uncertain {
            value: mean,
            uncertainty: unc,
        });
    }

    if let (Some(conv), Some(multi)) = (&report.conventional_t_per_rthz, &report.multi_component_t_per_rthz) {
        report.improvement_ratio = Some(std::array::from_fn(|k| quotient(conv[k], multi[k])));
    }
    Ok(report)
}

/// Improvement ratios from the gradients alone, with identical noise on
/// every readout.
pub fn gradient_improvement_ratios(data: &SensitivityData) -> Result<[f64; 3]> {
    let unit = |n: &NoiseEstimate| NoiseEstimate {
        integration_s: 1.0,
        std: 1.0,
        std_stderr: 0.0,
        ..*n
    };
    let equal = SensitivityData {
        axis_noise: data.axis_noise.as_ref().map(|a| a.each_ref().map(unit)),
        multi_noise: data.multi_noise.as_ref().map(|a| a.each_ref().map(unit)),
        ..data.clone()
    };
    let report = compute_sensitivity(&equal)?;
    report
        .improvement_ratio
        .map(|r| r.map(|u| u.value))
        .ok_or_else(|| Error::InvalidConfig("both schemes are needed for a ratio".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivityOptions {
    /// Sweeps span `[-amplitude_max_t, amplitude_max_t]`.
    pub amplitude_max_t: f64,
    pub points: usize,
    pub sweep: SweepOptions,
    /// Integration time of each `delta P` readout.
    pub noise_integration_s: f64,
    pub noise_repeats: usize,
    /// Field direction of the single-axis sweeps; each axis is swept along
    /// itself when absent.
    #[serde(default)]
    pub single_direction: Option<[f64; 3]>,
    pub min_gradient_per_t: f64,
}

impl Default for SensitivityOptions {
    fn default() -> Self {
        Self {
            amplitude_max_t: 1e-6,
            points: 201,
            sweep: SweepOptions::default(),
            noise_integration_s: 1.0,
            noise_repeats: 2000,
            single_direction: None,
            min_gradient_per_t: 1e-3,
        }
    }
}

/// Runs the sweeps and noise estimates of `scheme` and builds the report.
///
/// Sub-experiments draw from seeds derived from `options.sweep.seed`: axis
/// `n` sweeps use label `n`, component `k` sweeps label `10 + k`, and the
/// matching noise estimates add 100.
pub fn run_sensitivity(
    config: &EnsembleConfig,
    setup: &EchoSetup,
    scheme: Scheme,
    options: &SensitivityOptions,
) -> Result<(SensitivityReport, SensitivityData, Vec<SweepResult>)> {
    config.validate()?;
    let grid = symmetric_grid(options.amplitude_max_t, options.points);
    let axes = axis_unit_vectors::<f64>();
    let seed = options.sweep.seed;
    let mut sweeps = Vec::new();

    let run = |mode: SequenceMode, direction: Vec3<f64>, label: u64| -> Result<(SweepResult, NoiseEstimate)> {
        let program = setup.program(mode)?;
        let opts = SweepOptions {
            seed: derive_seed(seed, label),
            ..options.sweep
        };
        let sweep = echo_amplitude_sweep(config, setup, &grid, &program, direction, &opts)?;
        let baseline = program_signal(config, setup, &program, Vec3::zero());
        let mut rng = task_rng(derive_seed(seed, 100 + label), 0);
        let noise = estimate_noise(
            baseline,
            config,
            options.noise_integration_s,
            program.tau_s,
            options.noise_repeats,
            &mut rng,
        );
        Ok((sweep, noise))
    };

    let mut data = SensitivityData {
        axis_gradients: None,
        axis_projections: [1.0; 4],
        axis_noise: None,
        multi_gradients: None,
        multi_noise: None,
        min_gradient_per_t: options.min_gradient_per_t,
    };

    if scheme.includes_single() {
        let mut fits = Vec::new();
        let mut noises = Vec::new();
        for axis in Axis::ALL {
            let u = axes.axis(axis);
            let direction = match options.single_direction {
                Some(d) => Vec3::from_array(d),
                None => u,
            };
            if !(direction.norm() > 0.0) {
                return Err(Error::InvalidConfig("single-axis sweep direction must be non-zero".into()));
            }
            data.axis_projections[axis.index()] = u.dot(direction.normalized());
            let (sweep, noise) = run(SequenceMode::SingleFrequency(axis), direction, axis.index() as u64)?;
            fits.push(sweep.gradient.expect("amplitude sweeps carry a gradient"));
            noises.push(noise);
            sweeps.push(sweep);
        }
        data.axis_gradients = Some(std::array::from_fn(|i| fits[i]));
        data.axis_noise = Some(std::array::from_fn(|i| noises[i]));
    }

    if scheme.includes_multi() {
        let mut fits = Vec::new();
        let mut noises = Vec::new();
        for k in Component::ALL {
            let (sweep, noise) = run(SequenceMode::MultiFrequency(k), k.unit(), 10 + k.index() as u64)?;
            fits.push(sweep.gradient.expect("amplitude sweeps carry a gradient"));
            noises.push(noise);
            sweeps.push(sweep);
        }
        data.multi_gradients = Some(std::array::from_fn(|i| fits[i]));
        data.multi_noise = Some(std::array::from_fn(|i| noises[i]));
    }

    let report = compute_sensitivity(&data)?;
    Ok((report, data, sweeps))
}
