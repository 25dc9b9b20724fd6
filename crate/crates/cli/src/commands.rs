use std::path::{Path, PathBuf};

use nvsense::experiments::odmr::frequency_grid;
use nvsense::experiments::rabi::duration_grid;
use nvsense::experiments::sweep::symmetric_grid;
use nvsense::experiments::vector::angular_error_deg;
use nvsense::experiments::{
    echo_amplitude_sweep, estimate_vector, run_sensitivity, simulate_odmr, simulate_rabi, OdmrOptions,
    RabiOptions, Scheme, SensitivityOptions, SensitivityReport, SweepOptions, Uncertain, VectorEstimate,
    VectorOptions, VectorScheme,
};
use nvsense::fit::LinearFit;
use nvsense::geometry::{resonance_frequencies, Axis, Component};
use nvsense::report::Provenance;
use nvsense::rng::derive_seed;
use nvsense::sequence::{
    parse_sequence_with, serialize_sequence, validate_against_topology, ChannelAssignment,
};
use nvsense::spin::DriveConfig;
use nvsense::Vec3f;
use serde::Serialize;

use crate::config::RunConfig;
use crate::output::{file_stem, write_json, write_sweep};
use crate::CliError;

pub struct Context {
    pub config: RunConfig,
    pub provenance: Provenance,
    pub seed: u64,
    pub out: PathBuf,
}

pub fn odmr(ctx: &Context) -> Result<(), CliError> {
    let c = &ctx.config;
    let field = c.static_field()?;
    let pairs = resonance_frequencies(field.field_t, field.zero_field_splitting_hz, c.ensemble.gamma_hz_per_t);
    let lowest = pairs.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let highest = pairs.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let pad = 15.0 * c.odmr.linewidth_hz;
    let grid = frequency_grid(
        c.odmr.start_hz.unwrap_or(lowest - pad),
        c.odmr.stop_hz.unwrap_or(highest + pad),
        c.odmr.points,
    );
    let options = OdmrOptions {
        linewidth_hz: c.odmr.linewidth_hz,
        saturation: c.odmr.saturation,
        integration_s: c.odmr.integration_s,
        seed: ctx.seed,
        noiseless: false,
    };
    let result = simulate_odmr(&c.ensemble, field.field_t, field.zero_field_splitting_hz, &grid, &options)?;
    write_sweep(&ctx.out, "odmr.csv", &ctx.provenance, &result.sweep)?;
    println!("{} resonance(s) fitted:", result.fitted_resonances_hz.len());
    for (f, d) in result.fitted_resonances_hz.iter().zip(&result.fitted_depths) {
        println!("  {:.6} GHz  depth {:.3e}", f / 1e9, d);
    }
    Ok(())
}

#[derive(Serialize)]
struct RabiDoc {
    ratios: [f64; 4],
    amplitudes: [f64; 4],
    amplitude_stderr: [f64; 4],
    rabi_frequencies_hz: [f64; 4],
}

pub fn rabi(ctx: &Context) -> Result<(), CliError> {
    let c = &ctx.config;
    let omega = c.echo.rabi_frequency_hz;
    let drives: [DriveConfig<f64>; 4] = std::array::from_fn(|n| DriveConfig {
        detuning_hz: c.rabi.detuning_hz[n],
        ..DriveConfig::on_resonance(omega, 0.0, 0.0)
    });
    let stop = c.rabi.stop_s.unwrap_or(4.0 / omega);
    let options = RabiOptions {
        integration_s: c.rabi.integration_s,
        seed: ctx.seed,
        ..RabiOptions::default()
    };
    let result = simulate_rabi(&c.ensemble, &duration_grid(stop, c.rabi.points), &drives, &options)?;
    for (axis, sweep) in Axis::ALL.iter().zip(&result.sweeps) {
        write_sweep(&ctx.out, &format!("rabi_{axis}.csv"), &ctx.provenance, sweep)?;
    }
    let doc = RabiDoc {
        ratios: result.ratios,
        amplitudes: result.amplitudes,
        amplitude_stderr: result.amplitude_stderr,
        rabi_frequencies_hz: result.rabi_frequencies_hz,
    };
    write_json(&ctx.out, "rabi.json", &ctx.provenance, &doc)?;
    println!("axis  ratio    Rabi (MHz)");
    for axis in Axis::ALL {
        let n = axis.index();
        println!("{axis}   {:.4}   {:.4}", result.ratios[n], result.rabi_frequencies_hz[n] / 1e6);
    }
    Ok(())
}

#[derive(Serialize)]
struct EchoSweepDoc<'a> {
    mode: &'a str,
    direction: [f64; 3],
    gradient_per_t: Option<LinearFit>,
}

pub fn echo_sweep(ctx: &Context, sequence: Option<&Path>) -> Result<(), CliError> {
    let c = &ctx.config;
    let setup = c.echo_setup()?;
    let program = match sequence {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read sequence {}: {e}", path.display())))?;
            let parsed = parse_sequence_with(&text, &setup.assignment)?;
            for w in &parsed.warnings {
                eprintln!("warning: {w}");
            }
            parsed.program
        }
        None => setup.program(c.sweep_mode()?)?,
    };
    let grid = symmetric_grid(c.sweep.amplitude_max_t, c.sweep.points);
    let options = SweepOptions {
        integration_s: c.sweep.integration_s,
        repeats: c.sweep.repeats,
        seed: ctx.seed,
        noiseless: false,
        window_fraction: c.sweep.window_fraction,
    };
    let direction = Vec3f::from_array(c.sweep.direction);
    let sweep = echo_amplitude_sweep(&c.ensemble, &setup, &grid, &program, direction, &options)?;
    let stem = file_stem(&sweep.mode);
    write_sweep(&ctx.out, &format!("echo_sweep_{stem}.csv"), &ctx.provenance, &sweep)?;
    write_json(
        &ctx.out,
        &format!("echo_sweep_{stem}.json"),
        &ctx.provenance,
        &EchoSweepDoc {
            mode: &sweep.mode,
            direction: c.sweep.direction,
            gradient_per_t: sweep.gradient,
        },
    )?;
    if let Some(g) = sweep.gradient {
        println!(
            "{}: dP/dB = {:.6e} +/- {:.2e} per T",
            sweep.mode, g.slope, g.slope_stderr
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct SensitivityDoc<'a> {
    scheme: Scheme,
    report: &'a SensitivityReport,
}

fn nt(u: &Uncertain) -> String {
    format!("{:>10.3} +/- {:<8.3}", u.value * 1e9, u.uncertainty * 1e9)
}

pub fn sensitivity(ctx: &Context, scheme: Scheme) -> Result<(), CliError> {
    let c = &ctx.config;
    let setup = c.echo_setup()?;
    let s = &c.sensitivity;
    let options = SensitivityOptions {
        amplitude_max_t: s.amplitude_max_t,
        points: s.points,
        sweep: SweepOptions {
            integration_s: s.sweep_integration_s,
            repeats: s.sweep_repeats,
            seed: ctx.seed,
            noiseless: false,
            window_fraction: c.sweep.window_fraction,
        },
        noise_integration_s: s.noise_integration_s,
        noise_repeats: s.noise_repeats,
        single_direction: s.single_direction,
        min_gradient_per_t: s.min_gradient_per_t,
    };
    let (report, _, sweeps) = run_sensitivity(&c.ensemble, &setup, scheme, &options)?;
    for sweep in &sweeps {
        write_sweep(
            &ctx.out,
            &format!("sweep_{}.csv", file_stem(&sweep.mode)),
            &ctx.provenance,
            sweep,
        )?;
    }
    write_json(
        &ctx.out,
        "sensitivity.json",
        &ctx.provenance,
        &SensitivityDoc {
            scheme,
            report: &report,
        },
    )?;

    println!("{:<14}{:<6}{:>28}", "scheme", "", "dB (nT/sqrt(Hz))");
    if let Some(axes) = &report.per_axis_t_per_rthz {
        for (axis, u) in Axis::ALL.iter().zip(axes) {
            println!("{:<14}{:<6}{}", "single", axis.to_string(), nt(u));
        }
    }
    if let Some(conv) = &report.conventional_t_per_rthz {
        for (k, u) in Component::ALL.iter().zip(conv) {
            println!("{:<14}{:<6}{}", "conventional", k.to_string(), nt(u));
        }
    }
    if let Some(multi) = &report.multi_component_t_per_rthz {
        for (k, u) in Component::ALL.iter().zip(multi) {
            println!("{:<14}{:<6}{}", "multi", k.to_string(), nt(u));
        }
    }
    if let Some(ratio) = &report.improvement_ratio {
        for (k, u) in Component::ALL.iter().zip(ratio) {
            println!(
                "{:<14}{:<6}{:>10.3} +/- {:<8.3}",
                "ratio", k.to_string(), u.value, u.uncertainty
            );
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct SchemeResult {
    estimate: VectorEstimate,
    angular_error_deg: f64,
}

#[derive(Serialize)]
struct VectorDoc {
    truth_t: [f64; 3],
    truth_direction: [f64; 3],
    conventional: SchemeResult,
    multi: SchemeResult,
    scheme_separation_deg: f64,
}

pub fn vector(ctx: &Context) -> Result<(), CliError> {
    let c = &ctx.config;
    let truth = Vec3f::from_array(
        c.ac_field_t
            .ok_or_else(|| CliError::Config("vector needs \"ac_field_t\" in the config".into()))?,
    );
    let setup = c.echo_setup()?;
    let run = |scheme: VectorScheme, label: u64| -> Result<SchemeResult, CliError> {
        let options = VectorOptions {
            integration_s: c.vector.integration_s,
            seed: derive_seed(ctx.seed, label),
            noiseless: false,
            max_phase_rad: c.vector.max_phase_rad,
            calibration: c.vector.calibration,
        };
        let estimate = estimate_vector(&c.ensemble, &setup, truth, scheme, &options)?;
        let angular_error_deg = angular_error_deg(Vec3f::from_array(estimate.direction), truth);
        Ok(SchemeResult {
            estimate,
            angular_error_deg,
        })
    };
    let conventional = run(VectorScheme::Conventional, 1)?;
    let multi = run(VectorScheme::Multi, 2)?;
    let scheme_separation_deg = angular_error_deg(
        Vec3f::from_array(conventional.estimate.direction),
        Vec3f::from_array(multi.estimate.direction),
    );
    let doc = VectorDoc {
        truth_t: truth.to_array(),
        truth_direction: truth.normalized().to_array(),
        conventional,
        multi,
        scheme_separation_deg,
    };
    write_json(&ctx.out, "vector.json", &ctx.provenance, &doc)?;
    let t = doc.truth_direction;
    println!("truth         ({:+.3}, {:+.3}, {:+.3})", t[0], t[1], t[2]);
    for (name, r) in [("conventional", &doc.conventional), ("multi", &doc.multi)] {
        let d = r.estimate.direction;
        println!(
            "{name:<14}({:+.3}, {:+.3}, {:+.3})  error {:.3} deg",
            d[0], d[1], d[2], r.angular_error_deg
        );
    }
    println!("separation    {:.3} deg", doc.scheme_separation_deg);
    Ok(())
}

pub fn seq_check(file: &Path, config: Option<&Path>, strict: bool, canonical: bool) -> Result<(), CliError> {
    let assignment = match config {
        Some(path) => RunConfig::load(path)?.assignment()?,
        None => ChannelAssignment::identity(),
    };
    let text = std::fs::read_to_string(file)
        .map_err(|e| CliError::Config(format!("cannot read sequence {}: {e}", file.display())))?;
    let parsed = parse_sequence_with(&text, &assignment)?;
    for w in &parsed.warnings {
        eprintln!("warning: {w}");
    }
    let violations = validate_against_topology(&parsed.program, &assignment, strict);
    if violations.is_empty() {
        println!("{}: valid, realizable ({})", file.display(), parsed.program.mode);
    } else {
        println!("{}: valid, {} topology violation(s)", file.display(), violations.len());
        for v in &violations {
            println!("  pulse {}: {}", v.pulse, v.message);
        }
    }
    if canonical {
        print!("{}", serialize_sequence(&parsed.program));
    }
    Ok(())
}
