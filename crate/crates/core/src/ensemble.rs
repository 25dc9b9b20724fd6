//! Photoluminescence of the whole ensemble and its photon shot noise.
//!
//! The PL model is affine: an axis sub-ensemble in |0> is bright (level 1),
//! in |1> it is dark (level `1 - C`). Axes not driven by the sequence stay in
//! |0> and add light without signal.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::linear_fit;
use crate::rng::{task_rng, TaskRng};
use crate::scalar::Scalar;

/// Physical parameters of the NV ensemble and its optical readout.
///
/// `photon_rate_hz * readout_window_s` is the mean photon count per shot from
/// a fully bright ensemble. No absolute count rates are known for the
/// modelled sample; the default of 0.05 counts per shot is a typical
/// single-readout confocal scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    /// Fraction of centers along NV1..NV4; sums to 1.
    pub ratios: [f64; 4],
    /// Relative PL drop from |0> to |1>.
    pub contrast: f64,
    pub t2_s: f64,
    /// Stretch exponent of the echo decay.
    #[serde(default = "default_stretch")]
    pub stretch: f64,
    pub photon_rate_hz: f64,
    pub readout_window_s: f64,
    /// Initialization and readout time added to every shot.
    #[serde(default = "default_overhead")]
    pub shot_overhead_s: f64,
    #[serde(default = "default_splitting")]
    pub zero_field_splitting_hz: f64,
    #[serde(default = "default_gamma")]
    pub gamma_hz_per_t: f64,
    /// Per-axis pulse fidelity scaling the echo visibility.
    #[serde(default = "default_fidelity")]
    pub pulse_fidelity: [f64; 4],
    #[serde(default)]
    pub noise_floor: Option<NoiseFloor>,
}

fn default_stretch() -> f64 {
    1.0
}
fn default_overhead() -> f64 {
    3e-6
}
fn default_splitting() -> f64 {
    2.870e9
}
fn default_gamma() -> f64 {
    28.024e9
}
fn default_fidelity() -> [f64; 4] {
    [1.0; 4]
}

/// Technical noise on top of photon statistics; off by default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseFloor {
    /// Extra white noise, relative to the signal, per square-root shot.
    pub excess_white_rel: f64,
    /// Laser-intensity drift, relative to the signal, independent of
    /// integration time.
    pub flicker_rel: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            ratios: [0.25; 4],
            contrast: 0.03,
            t2_s: 20e-6,
            stretch: default_stretch(),
            photon_rate_hz: 0.05 / 300e-9,
            readout_window_s: 300e-9,
            shot_overhead_s: default_overhead(),
            zero_field_splitting_hz: default_splitting(),
            gamma_hz_per_t: default_gamma(),
            pulse_fidelity: default_fidelity(),
            noise_floor: None,
        }
    }
}

impl EnsembleConfig {
    /// Defaults with the measured orientation ratios 29 : 35 : 21 : 15.
    pub fn measured_ratios() -> Self {
        Self {
            ratios: [0.29, 0.35, 0.21, 0.15],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ratios.iter().any(|&r| !(r >= 0.0)) {
            return Err(Error::InvalidConfig("orientation ratios must be non-negative".into()));
        }
        let total: f64 = self.ratios.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "orientation ratios sum to {total}, expected 1"
            )));
        }
        if !(self.contrast > 0.0 && self.contrast <= 1.0) {
            return Err(Error::InvalidConfig("contrast must lie in (0, 1]".into()));
        }
        if !(self.photon_rate_hz > 0.0) || !(self.readout_window_s > 0.0) {
            return Err(Error::InvalidConfig("photon rate and readout window must be positive".into()));
        }
        if !(self.t2_s > 0.0) || !(self.stretch > 0.0) {
            return Err(Error::InvalidConfig("T2 and stretch exponent must be positive".into()));
        }
        if !(self.shot_overhead_s >= 0.0) {
            return Err(Error::InvalidConfig("shot overhead must be non-negative".into()));
        }
        if !(self.zero_field_splitting_hz > 0.0) || !(self.gamma_hz_per_t > 0.0) {
            return Err(Error::InvalidConfig("D and gamma must be positive".into()));
        }
        if self.pulse_fidelity.iter().any(|&f| !(0.0..=1.0).contains(&f)) {
            return Err(Error::InvalidConfig("pulse fidelity must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Mean photons per shot from a fully bright ensemble.
    pub fn counts_per_shot(&self) -> f64 {
        self.photon_rate_hz * self.readout_window_s
    }

    /// Repetition period of one echo shot.
    pub fn shot_period_s(&self, tau_s: f64) -> f64 {
        tau_s + self.shot_overhead_s
    }

    /// Whole shots that fit in `integration_s`, at least one.
    pub fn shots_in(&self, integration_s: f64, tau_s: f64) -> u64 {
        ((integration_s / self.shot_period_s(tau_s)).floor() as u64).max(1)
    }

    /// Normalized PL for per-axis `P(|0>)` values.
    pub fn signal(&self, populations: [f64; 4]) -> f64 {
        ensemble_signal(populations, self.ratios, self.contrast)
    }
}

/// `S = sum_n rho_n [(1 - C) + C P_n]`, between `1 - C` (all dark) and 1.
pub fn ensemble_signal<T: Scalar>(populations: [T; 4], ratios: [T; 4], contrast: T) -> T {
    populations
        .iter()
        .zip(ratios)
        .fold(T::zero(), |acc, (&p, rho)| {
            acc + rho * ((T::one() - contrast) + contrast * p)
        })
}

/// One simulated photon-counting readout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadoutSample {
    pub mean_signal: f64,
    pub counts: u64,
    /// Counts normalized by the fully-bright expectation.
    pub estimate: f64,
    pub shots: u64,
}

/// Draws Poisson photon counts for `shots` repetitions of a readout whose
/// normalized mean is `mean_signal`.
pub fn sample_readout_with<R: Rng + ?Sized>(
    mean_signal: f64,
    config: &EnsembleConfig,
    shots: u64,
    rng: &mut R,
) -> ReadoutSample {
    let shots = shots.max(1);
    let scale = shots as f64 * config.counts_per_shot();
    let lambda = (scale * mean_signal).max(0.0);
    let counts = if lambda > 0.0 {
        Poisson::new(lambda)
            .map(|d| d.sample(rng) as u64)
            .unwrap_or(0)
    } else {
        0
    };
    let mut estimate = counts as f64 / scale;
    if let Some(floor) = config.noise_floor {
        let sigma = mean_signal.abs()
            * (floor.excess_white_rel.powi(2) / shots as f64 + floor.flicker_rel.powi(2)).sqrt();
        if sigma > 0.0 {
            if let Ok(n) = Normal::new(0.0, sigma) {
                estimate += n.sample(rng);
            }
        }
    }
    ReadoutSample {
        mean_signal,
        counts,
        estimate,
        shots,
    }
}

/// Deterministic readout for a fixed seed.
pub fn sample_readout(mean_signal: f64, config: &EnsembleConfig, shots: u64, seed: u64) -> ReadoutSample {
    let mut rng = task_rng(seed, 0);
    sample_readout_with(mean_signal, config, shots, &mut rng)
}

/// Poisson-limited standard deviation of `estimate` at this mean.
pub fn shot_noise_std(mean_signal: f64, config: &EnsembleConfig, shots: u64) -> f64 {
    let scale = shots.max(1) as f64 * config.counts_per_shot();
    (mean_signal.max(0.0) / scale).sqrt()
}

/// Sample mean and standard deviation (n - 1 normalization).
pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Empirical spread of repeated readouts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseEstimate {
    pub integration_s: f64,
    pub shots: u64,
    pub mean: f64,
    /// Standard deviation of `estimate` over the repetitions.
    pub std: f64,
    /// Standard error of `std` itself.
    pub std_stderr: f64,
    pub repeats: usize,
}

/// Monte Carlo `delta P` for one integration time.
pub fn estimate_noise(
    mean_signal: f64,
    config: &EnsembleConfig,
    integration_s: f64,
    tau_s: f64,
    repeats: usize,
    rng: &mut TaskRng,
) -> NoiseEstimate {
    let shots = config.shots_in(integration_s, tau_s);
    let samples: Vec<f64> = (0..repeats.max(2))
        .map(|_| sample_readout_with(mean_signal, config, shots, rng).estimate)
        .collect();
    let (mean, std) = mean_and_std(&samples);
    NoiseEstimate {
        integration_s,
        shots,
        mean,
        std,
        std_stderr: std / (2.0 * (samples.len() as f64 - 1.0)).sqrt(),
        repeats: samples.len(),
    }
}

/// `delta P` versus integration time with its log-log slope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSeries {
    pub points: Vec<NoiseEstimate>,
    pub slope: f64,
    pub slope_stderr: f64,
}

/// Monte Carlo `delta P(T)` on an ascending grid of integration times, with
/// shots proportional to `T`. Each grid point owns RNG stream `index`.
pub fn noise_vs_integration_time(
    config: &EnsembleConfig,
    mean_signal: f64,
    tau_s: f64,
    times_s: &[f64],
    repeats: usize,
    seed: u64,
) -> Result<NoiseSeries> {
    if times_s.len() < 2 {
        return Err(Error::InvalidConfig("need at least two integration times".into()));
    }
    if times_s.iter().any(|&t| !(t > 0.0)) || times_s.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidConfig("integration times must be positive and ascending".into()));
    }
    let points: Vec<NoiseEstimate> = times_s
        .par_iter()
        .enumerate()
        .map(|(i, &t)| {
            let mut rng = task_rng(seed, i as u64);
            estimate_noise(mean_signal, config, t, tau_s, repeats, &mut rng)
        })
        .collect();
    let lx: Vec<f64> = points.iter().map(|p| p.integration_s.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.std.ln()).collect();
    let fit = linear_fit(&lx, &ly)?;
    Ok(NoiseSeries {
        points,
        slope: fit.slope,
        slope_stderr: fit.slope_stderr,
    })
}
