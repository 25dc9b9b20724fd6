//! Echo signal versus AC field amplitude, with the central gradient.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_ascending, program_signal, EchoSetup, SweepResult};
use crate::ensemble::{mean_and_std, sample_readout_with, shot_noise_std, EnsembleConfig};
use crate::error::{Error, Result};
use crate::fit::{linear_fit, LinearFit};
use crate::geometry::Vec3;
use crate::rng::{task_rng, TaskRng};
use crate::sequence::SequenceProgram;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepOptions {
    /// Integration time of one readout at each point.
    pub integration_s: f64,
    /// Independent readouts per point.
    pub repeats: usize,
    pub seed: u64,
    #[serde(default)]
    pub noiseless: bool,
    /// Fraction of the swept range, centered on zero, used for the
    /// gradient fit.
    #[serde(default = "default_window")]
    pub window_fraction: f64,
}

fn default_window() -> f64 {
    0.2
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            integration_s: 1.0,
            repeats: 4,
            seed: 0,
            noiseless: false,
            window_fraction: default_window(),
        }
    }
}

/// Mean, spread and total counts of `repeats` readouts at one point.
pub(crate) fn sample_point(
    model: f64,
    config: &EnsembleConfig,
    shots: u64,
    repeats: usize,
    noiseless: bool,
    rng: &mut TaskRng,
) -> (f64, f64, u64) {
    if noiseless {
        return (model, shot_noise_std(model, config, shots), 0);
    }
    let mut counts = 0;
    let estimates: Vec<f64> = (0..repeats.max(1))
        .map(|_| {
            let s = sample_readout_with(model, config, shots, rng);
            counts += s.counts;
            s.estimate
        })
        .collect();
    let (mean, std) = mean_and_std(&estimates);
    let std = if estimates.len() < 2 {
        shot_noise_std(model, config, shots)
    } else {
        std
    };
    (mean, std, counts)
}

/// Symmetric linear fit of `y(x)` over `|x| <= fraction * range / 2`.
pub fn central_gradient(x: &[f64], y: &[f64], fraction: f64) -> Result<LinearFit> {
    let range = x.last().copied().unwrap_or(0.0) - x.first().copied().unwrap_or(0.0);
    let half = fraction * range / 2.0;
    let (xs, ys): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(y)
        .filter(|(xi, _)| xi.abs() <= half * (1.0 + 1e-12))
        .map(|(a, b)| (*a, *b))
        .unzip();
    if xs.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "gradient window of {:.0}% holds {} points, need at least two",
            fraction * 100.0,
            xs.len()
        )));
    }
    linear_fit(&xs, &ys)
}

/// Runs `program` at every amplitude of `amplitudes_t` with the AC field
/// along `direction`, samples the readout, and fits `dP/dB` around zero.
///
/// Point `i` draws from RNG stream `i` of `options.seed`.
pub fn echo_amplitude_sweep(
    config: &EnsembleConfig,
    setup: &EchoSetup,
    amplitudes_t: &[f64],
    program: &SequenceProgram,
    direction: Vec3<f64>,
    options: &SweepOptions,
) -> Result<SweepResult> {
    config.validate()?;
    program.validate(&setup.assignment)?;
    check_ascending(amplitudes_t, "amplitude")?;
    if !amplitudes_t.contains(&0.0) {
        return Err(Error::InvalidConfig("amplitude grid must include 0".into()));
    }
    let norm = direction.norm();
    if !(norm > 0.0) {
        return Err(Error::InvalidConfig("field direction must be non-zero".into()));
    }
    let dir = direction.scale(1.0 / norm);
    let shots = config.shots_in(options.integration_s, program.tau_s);

    let points: Vec<(f64, f64, f64, u64)> = amplitudes_t
        .par_iter()
        .enumerate()
        .map(|(i, &b)| {
            let model = program_signal(config, setup, program, dir.scale(b));
            let mut rng = task_rng(options.seed, i as u64);
            let (mean, std, counts) =
                sample_point(model, config, shots, options.repeats, options.noiseless, &mut rng);
            (model, mean, std, counts)
        })
        .collect();

    let mean: Vec<f64> = points.iter().map(|p| p.1).collect();
    let gradient = central_gradient(amplitudes_t, &mean, options.window_fraction)?;
    Ok(SweepResult {
        variable: "amplitude_t".into(),
        grid: amplitudes_t.to_vec(),
        model: points.iter().map(|p| p.0).collect(),
        mean,
        std: points.iter().map(|p| p.2).collect(),
        counts: points.iter().map(|p| p.3).collect(),
        mode: program.mode.to_string(),
        seed: options.seed,
        gradient: Some(gradient),
    })
}

/// `n` evenly spaced amplitudes over `[-max, max]` with an exact zero at
/// the center (`n` odd).
pub fn symmetric_grid(max_t: f64, n: usize) -> Vec<f64> {
    let n = if n % 2 == 0 { n + 1 } else { n.max(3) };
    let half = (n / 2) as i64;
    (-half..=half).map(|k| max_t * k as f64 / half as f64).collect()
}
