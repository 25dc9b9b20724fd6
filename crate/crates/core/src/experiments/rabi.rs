//! Rabi oscillations per axis and the orientation ratios they imply.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sweep::sample_point;
use super::{check_ascending, SweepResult};
use crate::ensemble::EnsembleConfig;
use crate::error::{Error, Result};
use crate::fit::{levenberg_marquardt, LmOptions, Model};
use crate::geometry::Axis;
use crate::rng::{derive_seed, task_rng};
use crate::spin::{rabi_excited_population, DriveConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RabiOptions {
    /// Integration time per duration point.
    pub integration_s: f64,
    pub seed: u64,
    #[serde(default)]
    pub noiseless: bool,
    /// Fit residual, in units of the expected point noise, above which the
    /// fit is rejected.
    #[serde(default = "default_max_residual")]
    pub max_residual_sigma: f64,
}

fn default_max_residual() -> f64 {
    5.0
}

impl Default for RabiOptions {
    fn default() -> Self {
        Self {
            integration_s: 600.0,
            seed: 0,
            noiseless: false,
            max_residual_sigma: default_max_residual(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RabiResult {
    pub sweeps: Vec<SweepResult>,
    /// Fitted PL oscillation amplitude per axis.
    pub amplitudes: [f64; 4],
    pub amplitude_stderr: [f64; 4],
    pub rabi_frequencies_hz: [f64; 4],
    /// Amplitudes corrected for detuning and normalized to sum to one.
    pub ratios: [f64; 4],
}

/// `a - A sin^2(pi f t)` with `t` in microseconds and `f` in MHz.
/// Parameters: `[a, A, f]`.
struct RabiModel;

impl Model for RabiModel {
    fn eval(&self, t: f64, p: &[f64]) -> f64 {
        let s = (std::f64::consts::PI * p[2] * t).sin();
        p[0] - p[1] * s * s
    }

    fn gradient(&self, t: f64, p: &[f64], out: &mut [f64]) {
        let arg = std::f64::consts::PI * p[2] * t;
        let s = arg.sin();
        out[0] = 1.0;
        out[1] = -s * s;
        out[2] = -p[1] * 2.0 * s * arg.cos() * std::f64::consts::PI * t;
    }
}

/// Drives each axis alone for every duration in `durations_s` and fits the
/// PL oscillation. `drives[n]` sets NVn's Rabi frequency and detuning.
///
/// Axis `n` samples from the seed derived with label `n`.
pub fn simulate_rabi(
    config: &EnsembleConfig,
    durations_s: &[f64],
    drives: &[DriveConfig<f64>; 4],
    options: &RabiOptions,
) -> Result<RabiResult> {
    config.validate()?;
    check_ascending(durations_s, "duration")?;
    if durations_s[0] < 0.0 {
        return Err(Error::InvalidConfig("durations must be non-negative".into()));
    }
    let t_max = durations_s[durations_s.len() - 1];

    let mut sweeps = Vec::with_capacity(4);
    let mut amplitudes = [0.0; 4];
    let mut amplitude_stderr = [0.0; 4];
    let mut rabi_frequencies_hz = [0.0; 4];
    let mut corrected = [0.0; 4];

    for axis in Axis::ALL {
        let n = axis.index();
        let drive = drives[n];
        drive.validate()?;
        let f_eff = drive.effective_frequency();
        if !(f_eff * t_max >= 3.0) {
            return Err(Error::InvalidConfig(format!(
                "duration grid covers {:.2} Rabi periods of {axis}, need at least 3",
                f_eff * t_max
            )));
        }
        let seed = derive_seed(options.seed, n as u64);
        let rho_c = config.ratios[n] * config.contrast;
        let points: Vec<(f64, f64, f64, u64)> = durations_s
            .par_iter()
            .enumerate()
            .map(|(i, &t)| {
                let p1 = rabi_excited_population(&DriveConfig { duration_s: t, ..drive });
                let model = 1.0 - rho_c * p1;
                let shots = config.shots_in(options.integration_s, t);
                let mut rng = task_rng(seed, i as u64);
                let (mean, std, counts) = sample_point(model, config, shots, 1, options.noiseless, &mut rng);
                (model, mean, std, counts)
            })
            .collect();
        let sweep = SweepResult {
            variable: "duration_s".into(),
            grid: durations_s.to_vec(),
            model: points.iter().map(|p| p.0).collect(),
            mean: points.iter().map(|p| p.1).collect(),
            std: points.iter().map(|p| p.2).collect(),
            counts: points.iter().map(|p| p.3).collect(),
            mode: format!("rabi:{axis}"),
            seed,
            gradient: None,
        };

        let t_us: Vec<f64> = durations_s.iter().map(|t| t * 1e6).collect();
        let mean_y = sweep.mean.iter().sum::<f64>() / sweep.mean.len() as f64;
        let a0 = sweep.mean.iter().cloned().fold(f64::MIN, f64::max);
        let initial = [a0, 2.0 * (a0 - mean_y).max(1e-9), f_eff / 1e6];
        let opts = LmOptions {
            max_iterations: 500,
            ..LmOptions::default()
        };
        let fit = levenberg_marquardt(&RabiModel, &t_us, &sweep.mean, &initial, &opts)?;
        let expected = sweep.std.iter().sum::<f64>() / sweep.std.len() as f64;
        let threshold = options.max_residual_sigma * expected + 1e-9;
        if !(fit.residual_rms <= threshold) {
            return Err(Error::FitDiverged(format!(
                "{axis}: residual {:.3e} exceeds {:.3e}",
                fit.residual_rms, threshold
            )));
        }
        amplitudes[n] = fit.params[1];
        amplitude_stderr[n] = fit.stderr[1];
        rabi_frequencies_hz[n] = fit.params[2].abs() * 1e6;
        let drive_weight = (drive.rabi_frequency_hz / f_eff).powi(2);
        corrected[n] = fit.params[1] / drive_weight;
        sweeps.push(sweep);
    }

    let total: f64 = corrected.iter().sum();
    if !(total > 0.0) {
        return Err(Error::FitDiverged("no Rabi oscillation found on any axis".into()));
    }
    Ok(RabiResult {
        sweeps,
        amplitudes,
        amplitude_stderr,
        rabi_frequencies_hz,
        ratios: corrected.map(|c| c / total),
    })
}

/// Evenly spaced durations over `[0, stop]`.
pub fn duration_grid(stop_s: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n).map(|i| stop_s * i as f64 / (n - 1) as f64).collect()
}
