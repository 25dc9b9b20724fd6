//! Continuous-wave ODMR spectrum of the four axis sub-ensembles.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sweep::sample_point;
use super::{check_ascending, SweepResult};
use crate::ensemble::EnsembleConfig;
use crate::error::{Error, Result};
use crate::fit::{levenberg_marquardt, LmOptions, Model};
use crate::geometry::{resonance_frequencies, Vec3};
use crate::rng::task_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdmrOptions {
    /// Full width at half maximum of every dip.
    pub linewidth_hz: f64,
    /// Microwave saturation parameter; a dip reaches `s / (1 + s)` of half
    /// the axis contrast.
    pub saturation: f64,
    /// Integration time per frequency point.
    pub integration_s: f64,
    pub seed: u64,
    #[serde(default)]
    pub noiseless: bool,
}

impl Default for OdmrOptions {
    fn default() -> Self {
        Self {
            linewidth_hz: 6e6,
            saturation: 1.0,
            integration_s: 1e4,
            seed: 0,
            noiseless: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdmrResult {
    pub sweep: SweepResult,
    /// The eight model transitions, ascending.
    pub model_resonances_hz: Vec<f64>,
    /// Local minima found in the spectrum, ascending.
    pub minima_hz: Vec<f64>,
    /// Lorentzian-fit centers, one per minimum.
    pub fitted_resonances_hz: Vec<f64>,
    pub fitted_depths: Vec<f64>,
    pub fitted_linewidth_hz: f64,
}

/// Unit-height Lorentzian with full width `w`.
fn lorentzian(f: f64, center: f64, w: f64) -> f64 {
    let h = w / 2.0;
    h * h / ((f - center) * (f - center) + h * h)
}

/// `a - sum_i d_i L(x; c_i, w)` with `x` in MHz relative to a reference.
/// Parameters: `[a, w, c_1, d_1, c_2, d_2, ...]`.
struct DipModel;

impl Model for DipModel {
    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        let w = p[1];
        p[0] - p[2..].chunks(2).map(|cd| cd[1] * lorentzian(x, cd[0], w)).sum::<f64>()
    }

    fn gradient(&self, x: f64, p: &[f64], out: &mut [f64]) {
        let w = p[1];
        let h = w / 2.0;
        out[0] = 1.0;
        out[1] = 0.0;
        for (i, cd) in p[2..].chunks(2).enumerate() {
            let dx = x - cd[0];
            let den = dx * dx + h * h;
            let l = h * h / den;
            // dL/dh = 2 h dx^2 / den^2, dL/dc = 2 h^2 dx / den^2
            out[1] -= cd[1] * (h * dx * dx / (den * den));
            out[2 + 2 * i] = -cd[1] * 2.0 * h * h * dx / (den * den);
            out[3 + 2 * i] = -l;
        }
    }
}

/// PL spectrum for a static field, with dips of depth
/// `rho_n C s / (2 (1 + s))` at both transitions of every axis.
pub fn simulate_odmr(
    config: &EnsembleConfig,
    static_field_t: Vec3<f64>,
    zero_field_splitting_hz: f64,
    frequencies_hz: &[f64],
    options: &OdmrOptions,
) -> Result<OdmrResult> {
    config.validate()?;
    check_ascending(frequencies_hz, "frequency")?;
    if !(options.linewidth_hz > 0.0) || !(options.saturation > 0.0) {
        return Err(Error::InvalidConfig("linewidth and saturation must be positive".into()));
    }
    let pairs = resonance_frequencies(static_field_t, zero_field_splitting_hz, config.gamma_hz_per_t);
    let mut resonances: Vec<(f64, f64)> = Vec::with_capacity(8);
    let depth_scale = config.contrast * options.saturation / (2.0 * (1.0 + options.saturation));
    for (n, (lo, hi)) in pairs.iter().enumerate() {
        resonances.push((*lo, config.ratios[n] * depth_scale));
        resonances.push((*hi, config.ratios[n] * depth_scale));
    }
    resonances.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (first, last) = (frequencies_hz[0], frequencies_hz[frequencies_hz.len() - 1]);
    if resonances.first().unwrap().0 <= first || resonances.last().unwrap().0 >= last {
        return Err(Error::InvalidConfig(format!(
            "frequency grid [{first:e}, {last:e}] Hz does not span every resonance"
        )));
    }

    // continuous readout: one shot per readout window
    let shots = ((options.integration_s / config.readout_window_s).floor() as u64).max(1);
    let points: Vec<(f64, f64, f64, u64)> = frequencies_hz
        .par_iter()
        .enumerate()
        .map(|(i, &f)| {
            let model = 1.0
                - resonances
                    .iter()
                    .map(|&(c, d)| d * lorentzian(f, c, options.linewidth_hz))
                    .sum::<f64>();
            let mut rng = task_rng(options.seed, i as u64);
            let (mean, std, counts) = sample_point(model, config, shots, 1, options.noiseless, &mut rng);
            (model, mean, std, counts)
        })
        .collect();
    let sweep = SweepResult {
        variable: "frequency_hz".into(),
        grid: frequencies_hz.to_vec(),
        model: points.iter().map(|p| p.0).collect(),
        mean: points.iter().map(|p| p.1).collect(),
        std: points.iter().map(|p| p.2).collect(),
        counts: points.iter().map(|p| p.3).collect(),
        mode: "odmr".into(),
        seed: options.seed,
        gradient: None,
    };

    let minima = find_minima(&sweep, options.linewidth_hz, options.noiseless);
    let (fitted_resonances_hz, fitted_depths, fitted_linewidth_hz) =
        fit_dips(&sweep, &minima, options.linewidth_hz)?;
    Ok(OdmrResult {
        sweep,
        model_resonances_hz: resonances.iter().map(|r| r.0).collect(),
        minima_hz: minima,
        fitted_resonances_hz,
        fitted_depths,
        fitted_linewidth_hz,
    })
}

/// Points that are the lowest within half a linewidth on either side and
/// lie more than five point sigmas below the median level within two
/// linewidths on both sides.
fn find_minima(sweep: &SweepResult, linewidth_hz: f64, noiseless: bool) -> Vec<f64> {
    let x = &sweep.grid;
    let y = &sweep.mean;
    let side_level = |i: usize, range: std::ops::Range<usize>| {
        let mut side: Vec<f64> = range
            .filter(|&j| (x[j] - x[i]).abs() <= 2.0 * linewidth_hz)
            .map(|j| y[j])
            .collect();
        if side.is_empty() {
            return f64::NEG_INFINITY;
        }
        side.sort_by(f64::total_cmp);
        side[side.len() / 2]
    };
    let mut out = Vec::new();
    for i in 1..x.len() - 1 {
        let floor = if noiseless { 1e-12 } else { 5.0 * sweep.std[i] };
        let prominence = side_level(i, 0..i).min(side_level(i, i + 1..x.len())) - y[i];
        if !(prominence > floor) {
            continue;
        }
        let lowest = x
            .iter()
            .zip(y)
            .enumerate()
            .filter(|(_, (xj, _))| (*xj - x[i]).abs() <= linewidth_hz / 2.0)
            .all(|(j, (_, yj))| *yj > y[i] || (*yj == y[i] && j >= i));
        if lowest {
            out.push(x[i]);
        }
    }
    out
}

fn fit_dips(sweep: &SweepResult, minima: &[f64], linewidth_hz: f64) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    if minima.is_empty() {
        return Ok((Vec::new(), Vec::new(), f64::NAN));
    }
    let reference = minima[0];
    let to_mhz = |f: f64| (f - reference) / 1e6;
    let x: Vec<f64> = sweep.grid.iter().map(|&f| to_mhz(f)).collect();
    let mut initial = vec![1.0, linewidth_hz / 1e6];
    for &m in minima {
        let i = sweep.grid.iter().position(|&f| f == m).expect("minimum on grid");
        initial.push(to_mhz(m));
        initial.push((1.0 - sweep.mean[i]).max(1e-6));
    }
    let opts = LmOptions {
        max_iterations: 500,
        ..LmOptions::default()
    };
    let fit = levenberg_marquardt(&DipModel, &x, &sweep.mean, &initial, &opts)?;
    let mut dips: Vec<(f64, f64)> = fit.params[2..]
        .chunks(2)
        .map(|cd| (reference + cd[0] * 1e6, cd[1]))
        .collect();
    dips.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok((
        dips.iter().map(|d| d.0).collect(),
        dips.iter().map(|d| d.1).collect(),
        fit.params[1].abs() * 1e6,
    ))
}

/// Evenly spaced grid of `n` frequencies over `[start, stop]`.
pub fn frequency_grid(start_hz: f64, stop_hz: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n)
        .map(|i| start_hz + (stop_hz - start_hz) * i as f64 / (n - 1) as f64)
        .collect()
}
