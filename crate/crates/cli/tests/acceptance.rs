//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.

use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nvsense::ensemble::{noise_vs_integration_time, EnsembleConfig};
use nvsense::experiments::odmr::frequency_grid;
use nvsense::experiments::rabi::duration_grid;
use nvsense::experiments::sensitivity::{gradient_improvement_ratios, SensitivityData};
use nvsense::experiments::vector::angular_error_deg;
use nvsense::experiments::{
    estimate_vector, run_sensitivity, simulate_odmr, simulate_rabi, EchoSetup, OdmrOptions, RabiOptions,
    Scheme, SensitivityOptions, SensitivityReport, SweepOptions, VectorOptions, VectorScheme,
};
use nvsense::geometry::{
    axis_unit_vectors, calibrate_static_field, exact, sign_pattern, Branch, CalibrationOptions, SplittingMode,
};
use nvsense::rng::task_rng;
use nvsense::sequence::{serialize_sequence, SequenceMode};
use nvsense::spin::{accumulated_phase, propagate_two_level, DriveConfig, EchoConfig, TwoLevelState};
use nvsense::{Axis, Component, Vec3f};
use rand::Rng;

const MEASURED_HZ: [f64; 4] = [2.720e9, 2.806e9, 2.826e9, 2.862e9];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Measured ratios with the photon budget used for the sensitivity-scale
/// checks: 285 detected photons per shot.
fn tuned_config() -> EnsembleConfig {
    EnsembleConfig {
        photon_rate_hz: 9.5e8,
        ..EnsembleConfig::measured_ratios()
    }
}

fn criterion_1() -> Outcome {
    let third = exact::Rational::new(-1, 3);
    let mut ok = true;
    for a in Axis::ALL {
        for b in Axis::ALL {
            let want = if a == b { exact::Rational::from_integer(1) } else { third };
            ok &= exact::unit_dot(a, b) == want;
        }
    }
    ok &= exact::is_zero(exact::scaled_axis_sum());
    for k in Component::ALL {
        let p = sign_pattern(k);
        for j in Component::ALL {
            let want = exact::Rational::from_integer(i64::from(j == k));
            ok &= exact::normalized_signed_component(&p, j) == want;
        }
    }
    outcome(ok, "pairwise dots -1/3, zero sum, signed sums (4/sqrt3) e_k in rationals".into())
}

/// Adaptive Simpson quadrature.
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn step(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 40)
}

fn criterion_2() -> Outcome {
    let gamma = EnsembleConfig::default().gamma_hz_per_t;
    let b = 1e-6;
    let taus: Vec<f64> = (0..10).map(|i| 1e-6 * 50f64.powf(i as f64 / 9.0)).collect();
    let freqs: Vec<f64> = (0..10).map(|i| 5e3 * 100f64.powf(i as f64 / 9.0)).collect();
    let phases: Vec<f64> = (0..10).map(|i| 2.0 * PI * i as f64 / 10.0 + 0.1).collect();
    let mut worst: f64 = 0.0;
    for &tau in &taus {
        for &f in &freqs {
            for &p0 in &phases {
                let echo = EchoConfig {
                    tau_s: tau,
                    f_ac_hz: f,
                    phase0_rad: p0,
                    readout_phase_rad: 0.0,
                };
                let field = |t: f64| b * (2.0 * PI * f * t + p0).sin();
                let scale = b * tau;
                let first = simpson(&field, 0.0, tau / 2.0, 1e-14 * scale);
                let second = simpson(&field, tau / 2.0, tau, 1e-14 * scale);
                let oracle = 2.0 * PI * gamma * (first - second);
                let got = accumulated_phase(b, &echo, gamma);
                // relative to the value, floored at 1e-3 of the peak 4 gamma b tau
                let denom = oracle.abs().max(1e-3 * 4.0 * gamma * b * tau);
                worst = worst.max((got - oracle).abs() / denom);
            }
        }
    }
    let sync = EchoConfig::synchronized(100e3);
    let got = accumulated_phase(b, &sync, gamma);
    let analytic = 2.0 / PI * 2.0 * PI * gamma * b * sync.tau_s;
    let sync_rel = (got - analytic).abs() / analytic;
    outcome(
        worst <= 1e-9 && sync_rel <= 1e-12,
        format!("worst relative error {worst:.2e} over 1000 points, synchronized {sync_rel:.2e}"),
    )
}

fn criterion_3() -> Outcome {
    let omega = 2.5e6;
    let mut worst: f64 = 0.0;
    for ratio in [0.0, 0.5, 1.0, 2.0] {
        let delta = ratio * omega;
        let bound = omega * omega / (omega * omega + delta * delta);
        let drive = |t: f64| DriveConfig {
            rabi_frequency_hz: omega,
            detuning_hz: delta,
            pulse_phase_rad: 0.0,
            duration_s: t,
        };
        let period = 1.0 / drive(0.0).effective_frequency();
        let at_peak = propagate_two_level(TwoLevelState::ground(), &drive(period / 2.0)).unwrap().p1();
        worst = worst.max((at_peak - bound).abs());
        let sampled = (0..=100)
            .map(|i| propagate_two_level(TwoLevelState::ground(), &drive(period * i as f64 / 100.0)).unwrap().p1())
            .fold(f64::NEG_INFINITY, f64::max);
        worst = worst.max((sampled - bound).max(0.0));
    }
    let t_pi = DriveConfig::pulse_duration(omega, PI);
    let flipped = propagate_two_level(TwoLevelState::ground(), &DriveConfig::on_resonance(omega, 0.0, t_pi))
        .unwrap()
        .p1();
    outcome(
        worst <= 1e-6 && (t_pi - 200e-9).abs() < 1e-15 && (flipped - 1.0).abs() <= 1e-6,
        format!("max |P_max - O^2/(O^2+D^2)| = {worst:.2e}, pi time {:.1} ns", t_pi * 1e9),
    )
}

fn criterion_4() -> Outcome {
    let config = EnsembleConfig::default();
    let times: Vec<f64> = (0..7).map(|i| 1e-3 * 10f64.powf(i as f64 / 2.0)).collect();
    let series = noise_vs_integration_time(&config, 0.99625, 10e-6, &times, 4000, 11).unwrap();
    outcome(
        (-0.52..=-0.48).contains(&series.slope),
        format!("log-log slope {:.4} +/- {:.4}", series.slope, series.slope_stderr),
    )
}

fn ratio_values(report: &SensitivityReport) -> [f64; 3] {
    report.improvement_ratio.expect("both schemes").map(|u| u.value)
}

fn criterion_5() -> Outcome {
    let config = EnsembleConfig::default();
    let setup = EchoSetup::default();
    let data = SensitivityData::analytic(&config, &setup, Scheme::Both, None, 1e-3).unwrap();
    let exact_ratios = gradient_improvement_ratios(&data).unwrap();
    let options = SensitivityOptions {
        amplitude_max_t: 0.05e-6,
        points: 101,
        sweep: SweepOptions {
            integration_s: 1e8,
            repeats: 1,
            seed: 5,
            noiseless: false,
            window_fraction: 1.0,
        },
        noise_integration_s: 1.0,
        noise_repeats: 40_000,
        single_direction: None,
        min_gradient_per_t: 1e-3,
    };
    let (report, _, _) = run_sensitivity(&config, &setup, Scheme::Both, &options).unwrap();
    let mc = ratio_values(&report);
    let exact_ok = exact_ratios.iter().all(|r| (r - 4.0).abs() <= 1e-12);
    let mc_ok = mc.iter().all(|r| (r / 4.0 - 1.0).abs() <= 0.02);
    outcome(
        exact_ok && mc_ok,
        format!(
            "noiseless {:.12?}, Monte Carlo x {:.4} y {:.4} z {:.4}",
            exact_ratios, mc[0], mc[1], mc[2]
        ),
    )
}

fn criterion_6() -> Outcome {
    let config = tuned_config();
    let setup = EchoSetup::default();
    let truth = Vec3f::new(0.23, 0.16, -0.97).normalized().scale(0.3e-6);
    let options = VectorOptions {
        seed: 6,
        ..VectorOptions::default()
    };
    let conv = estimate_vector(&config, &setup, truth, VectorScheme::Conventional, &options).unwrap();
    let multi = estimate_vector(&config, &setup, truth, VectorScheme::Multi, &options).unwrap();
    let dir = |e: &nvsense::experiments::VectorEstimate| Vec3f::from_array(e.direction);
    let err_c = angular_error_deg(dir(&conv), truth);
    let err_m = angular_error_deg(dir(&multi), truth);
    let between = angular_error_deg(dir(&conv), dir(&multi));

    let noiseless = VectorOptions {
        noiseless: true,
        ..VectorOptions::default()
    };
    let mut rng = task_rng(66, 0);
    let mut worst: f64 = 0.0;
    let mut drawn = 0;
    while drawn < 100 {
        let v = Vec3f::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if !(v.norm() > 0.1 && v.norm() <= 1.0) {
            continue;
        }
        drawn += 1;
        let b = v.normalized().scale(0.25e-6);
        for scheme in [VectorScheme::Conventional, VectorScheme::Multi] {
            let est = estimate_vector(&config, &setup, b, scheme, &noiseless).unwrap();
            let rel = (Vec3f::from_array(est.field_t) - b).norm() / b.norm();
            worst = worst.max(rel).max(angular_error_deg(Vec3f::from_array(est.direction), b));
        }
    }
    let d = |e: &nvsense::experiments::VectorEstimate| {
        format!("({:+.3}, {:+.3}, {:+.3})", e.direction[0], e.direction[1], e.direction[2])
    };
    outcome(
        err_c <= 2.0 && err_m <= 2.0 && between <= 1.5 && worst <= 1e-6,
        format!(
            "conventional {} {err_c:.3} deg, multi {} {err_m:.3} deg, between {between:.3} deg, noiseless worst {worst:.1e}",
            d(&conv),
            d(&multi)
        ),
    )
}

fn tuned_sensitivity() -> SensitivityReport {
    let options = SensitivityOptions {
        amplitude_max_t: 0.2e-6,
        points: 201,
        sweep: SweepOptions {
            integration_s: 1e4,
            repeats: 1,
            seed: 8,
            noiseless: false,
            window_fraction: 0.2,
        },
        noise_integration_s: 1.0,
        noise_repeats: 4000,
        single_direction: None,
        min_gradient_per_t: 1e-3,
    };
    run_sensitivity(&tuned_config(), &EchoSetup::default(), Scheme::Both, &options)
        .unwrap()
        .0
}

fn criterion_7(report: &SensitivityReport) -> Outcome {
    let r = ratio_values(report);
    let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = r.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = r.iter().sum::<f64>() / 3.0;
    let spread = (max - min) / mean;
    outcome(
        spread > 0.05,
        format!("ratios x {:.3} y {:.3} z {:.3}, spread {:.1}%", r[0], r[1], r[2], spread * 100.0),
    )
}

fn criterion_8(report: &SensitivityReport) -> Outcome {
    let per_axis = report.per_axis_t_per_rthz.expect("single scheme").map(|u| u.value * 1e9);
    let mf = report.multi_frequency_t_per_rthz.expect("multi scheme").value * 1e9;
    let best = per_axis.iter().copied().fold(f64::INFINITY, f64::min);
    let factor = best / mf;
    outcome(
        per_axis.iter().all(|v| (40.0..=170.0).contains(v)) && (1.5..=4.0).contains(&factor),
        format!(
            "per-axis nT/rtHz [{:.1}, {:.1}, {:.1}, {:.1}], multi {mf:.1}, factor {factor:.3}",
            per_axis[0], per_axis[1], per_axis[2], per_axis[3]
        ),
    )
}

fn criterion_9() -> Outcome {
    let config = EnsembleConfig::measured_ratios();
    let options = CalibrationOptions {
        branch: Branch::Lower,
        splitting: SplittingMode::Fitted,
        ..CalibrationOptions::default()
    };
    let cal = calibrate_static_field(MEASURED_HZ, config.zero_field_splitting_hz, config.gamma_hz_per_t, &options)
        .unwrap();
    let model_err = cal
        .model_frequencies()
        .iter()
        .zip(MEASURED_HZ)
        .map(|(m, f)| (m - f).abs())
        .fold(0.0, f64::max);

    let grid = frequency_grid(2.62e9, 3.16e9, 2701);
    let odmr = simulate_odmr(
        &config,
        cal.field_t,
        cal.zero_field_splitting_hz,
        &grid,
        &OdmrOptions {
            seed: 9,
            ..OdmrOptions::default()
        },
    )
    .unwrap();
    let fit_err = if odmr.fitted_resonances_hz.len() == 8 {
        odmr.fitted_resonances_hz[..4]
            .iter()
            .zip(MEASURED_HZ)
            .map(|(m, f)| (m - f).abs())
            .fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };

    let drives = [DriveConfig::on_resonance(2.5e6, 0.0, 0.0); 4];
    let rabi = simulate_rabi(
        &config,
        &duration_grid(1.6e-6, 201),
        &drives,
        &RabiOptions {
            seed: 9,
            ..RabiOptions::default()
        },
    )
    .unwrap();
    let ratio_err = rabi
        .ratios
        .iter()
        .zip(config.ratios)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    outcome(
        model_err <= 1e6 && fit_err <= 1e6 && ratio_err <= 0.02,
        format!(
            "calibrated model {:.3e} Hz, ODMR fit {:.3e} Hz, Rabi ratios {:.4?} (max error {ratio_err:.4})",
            model_err, fit_err, rabi.ratios
        ),
    )
}

fn run_cli(args: &[&str], out: &Path, threads: usize) -> Result<Vec<u8>, String> {
    let output = Command::new(env!("CARGO_BIN_EXE_nvsense"))
        .args(args)
        .arg("--out")
        .arg(out)
        .arg("--threads")
        .arg(threads.to_string())
        .output()
        .map_err(|e| e.to_string())?;
    if !output.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&output.stderr)));
    }
    Ok(output.stdout)
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn criterion_10() -> Outcome {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/measured.json");
    let config = root.to_str().unwrap();
    let work = tempfile::tempdir().unwrap();
    let seq_path = work.path().join("multi_y.seq");
    let setup = EchoSetup::default();
    let program = setup.program(SequenceMode::MultiFrequency(Component::Y)).unwrap();
    std::fs::write(&seq_path, serialize_sequence(&program)).unwrap();
    let seq = seq_path.to_str().unwrap();

    let commands: Vec<Vec<&str>> = vec![
        vec!["odmr"],
        vec!["rabi"],
        vec!["echo-sweep"],
        vec!["echo-sweep", "--sequence", seq],
        vec!["sensitivity"],
        vec!["vector"],
        vec!["seq", "check", seq, "--canonical"],
    ];
    let mut checked = 0;
    for cmd in &commands {
        let mut runs = Vec::new();
        for threads in [1, 4] {
            let out = work.path().join(format!("{}_{threads}", cmd.join("_").replace('/', "_")));
            std::fs::create_dir_all(&out).unwrap();
            let mut args = vec!["--config", config, "--seed", "42"];
            args.extend(cmd.iter().copied());
            match run_cli(&args, &out, threads) {
                Ok(stdout) => runs.push((stdout, snapshot(&out))),
                Err(e) => return outcome(false, e),
            }
        }
        if runs[0] != runs[1] {
            return outcome(false, format!("{cmd:?} differs between 1 and 4 threads"));
        }
        checked += runs[0].1.len();
    }
    outcome(
        true,
        format!("{} subcommands, {checked} files byte-identical at 1 and 4 threads", commands.len()),
    )
}

fn main() {
    let axes = axis_unit_vectors::<f64>();
    assert!((axes.axis(Axis::Nv1).norm() - 1.0).abs() < 1e-15);

    let mut failures = 0;
    let mut report = |n: u32, limit_s: f64, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = f();
        let elapsed = start.elapsed().as_secs_f64();
        let pass = o.pass && elapsed < limit_s;
        if !pass {
            failures += 1;
        }
        println!(
            "{} criterion {n}: {} ({elapsed:.2} s, limit {limit_s} s)",
            if pass { "PASS" } else { "FAIL" },
            o.detail
        );
    };
    report(1, 1.0, &mut criterion_1);
    report(2, 10.0, &mut criterion_2);
    report(3, 10.0, &mut criterion_3);
    report(4, 60.0, &mut criterion_4);
    report(5, 120.0, &mut criterion_5);
    report(6, 120.0, &mut criterion_6);
    let mut tuned = None;
    report(7, 120.0, &mut || criterion_7(tuned.get_or_insert_with(tuned_sensitivity)));
    report(8, 120.0, &mut || criterion_8(tuned.get_or_insert_with(tuned_sensitivity)));
    report(9, 60.0, &mut criterion_9);
    report(10, 60.0, &mut criterion_10);
    if failures > 0 {
        println!("{failures} criterion(s) failed");
        std::process::exit(1);
    }
}
