use nvsense::ensemble::EnsembleConfig;
use nvsense::experiments::sensitivity::{gradient_improvement_ratios, SensitivityData};
use nvsense::experiments::{EchoSetup, Scheme};
use nvsense::geometry::{
    calibrate_static_field, project_field, sign_pattern, Branch, CalibrationOptions, SplittingMode,
};
use nvsense::spin::DriveConfig;
use nvsense::{Axis, Component, Vec3f};

const MEASURED_HZ: [f64; 4] = [2.720e9, 2.806e9, 2.826e9, 2.862e9];
const D_HZ: f64 = 2.87e9;
const GAMMA: f64 = 28.024e9;

#[test]
fn x_and_y_patterns_flip_the_published_axes() {
    assert_eq!(sign_pattern(Component::X).flipped(), vec![Axis::Nv2, Axis::Nv4]);
    assert_eq!(sign_pattern(Component::Y).flipped(), vec![Axis::Nv3, Axis::Nv4]);
    assert_eq!(sign_pattern(Component::Z).signs, [1, -1, -1, 1]);
}

#[test]
fn tilted_field_projections_match_hand_dot_products() {
    let d = Vec3f::new(0.23, 0.16, -0.97).normalized().scale(1e-6);
    let s = 1.0 / 3f64.sqrt();
    let lattice = [[1.0, 1.0, 1.0], [-1.0, 1.0, -1.0], [1.0, -1.0, -1.0], [-1.0, -1.0, 1.0]];
    let mut sum = 0.0;
    for (axis, l) in Axis::ALL.iter().zip(lattice) {
        let want = s * (l[0] * d.x + l[1] * d.y + l[2] * d.z);
        let got = project_field(d, *axis);
        assert!((got - want).abs() < 1e-21);
        sum += got;
    }
    assert!(sum.abs() < 1e-21);
}

#[test]
fn measured_resonances_give_projection_magnitudes() {
    let want_mt = [5.353, 2.284, 1.570, 0.285];
    for (f, w) in MEASURED_HZ.iter().zip(want_mt) {
        assert!(((D_HZ - f) / GAMMA * 1e3 - w).abs() < 5e-4);
    }
}

#[test]
fn fitted_splitting_reproduces_measured_resonances() {
    let options = CalibrationOptions {
        branch: Branch::Lower,
        splitting: SplittingMode::Fitted,
        ..CalibrationOptions::default()
    };
    let cal = calibrate_static_field(MEASURED_HZ, D_HZ, GAMMA, &options).unwrap();
    for (m, f) in cal.model_frequencies().iter().zip(MEASURED_HZ) {
        assert!((m - f).abs() < 1e6);
    }
    let projections = Axis::ALL.map(|a| project_field(cal.field_t, a));
    assert!(projections.iter().sum::<f64>().abs() < 1e-12);
}

#[test]
fn fixed_splitting_leaves_megahertz_residual() {
    let cal = calibrate_static_field(MEASURED_HZ, D_HZ, GAMMA, &CalibrationOptions::default()).unwrap();
    assert!(cal.residual_hz > 1e6 && cal.residual_hz < 10e6, "{}", cal.residual_hz);
}

#[test]
fn pi_pulse_at_2_5_mhz_lasts_200_ns() {
    let t = DriveConfig::pulse_duration(2.5e6, std::f64::consts::PI);
    assert!((t - 200e-9).abs() < 1e-18);
}

#[test]
fn measured_ratios_sum_to_one() {
    let r = EnsembleConfig::measured_ratios().ratios;
    assert_eq!(r, [0.29, 0.35, 0.21, 0.15]);
    assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-15);
}

/// Equal noise reduces the ratio to `2 / (rho_a + rho_b)` for the axes a
/// component's pattern leaves unflipped.
#[test]
fn improvement_ratio_closed_form() {
    let config = EnsembleConfig::measured_ratios();
    let data = SensitivityData::analytic(&config, &EchoSetup::default(), Scheme::Both, None, 1e-3).unwrap();
    let got = gradient_improvement_ratios(&data).unwrap();
    let r = config.ratios;
    let want = [2.0 / (r[0] + r[2]), 2.0 / (r[0] + r[1]), 2.0 / (r[0] + r[3])];
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() < 1e-9, "{g} vs {w}");
    }
}
