//! Effective two-level spin model for one axis sub-ensemble.
//!
//! The analytic echo path (phase, visibility, population) is what the
//! experiments use. The RK4 Bloch propagator is an independent numeric
//! route used to cross-check pulses and the full pi/2 - pi - pi/2 echo.
//!
//! Readout convention: `P(|0>) = (1 + V cos(phi - theta)) / 2`, with `theta`
//! measured from the phase of the first pulse. The quadrature operating point
//! is `theta = pi/2`, and a 180 degree flip of the last pulse adds `pi`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::scalar::Scalar;

/// Hahn-echo timing and AC-field synchronization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EchoConfig<T> {
    /// Total free-evolution time; the pi pulse sits at `tau / 2`.
    pub tau_s: T,
    /// AC field frequency. Zero selects the static-field branch.
    pub f_ac_hz: T,
    /// AC field phase at the start of the sequence.
    pub phase0_rad: T,
    /// Phase of the readout pulse relative to the first, flips excluded.
    pub readout_phase_rad: T,
}

impl<T: Scalar> EchoConfig<T> {
    /// Echo locked to one AC period, zero crossing at the first pulse,
    /// quadrature readout.
    pub fn synchronized(f_ac_hz: T) -> Self {
        Self {
            tau_s: T::one() / f_ac_hz,
            f_ac_hz,
            phase0_rad: T::zero(),
            readout_phase_rad: T::FRAC_PI_2(),
        }
    }

    pub fn is_synchronized(&self) -> bool {
        (self.tau_s * self.f_ac_hz - T::one()).abs() <= T::lit(1e-12).max(T::tolerance())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_s > T::zero()) || !self.tau_s.is_finite() {
            return Err(Error::InvalidConfig("echo tau must be positive".into()));
        }
        if !(self.f_ac_hz >= T::zero()) || !self.f_ac_hz.is_finite() {
            return Err(Error::InvalidConfig("AC frequency must be non-negative".into()));
        }
        Ok(())
    }

    /// Readout phase including an optional 180 degree flip.
    pub fn readout_phase(&self, sign: i8) -> T {
        if sign < 0 {
            self.readout_phase_rad + T::PI()
        } else {
            self.readout_phase_rad
        }
    }

    /// Phase accumulated per tesla of on-axis AC amplitude.
    pub fn phase_per_tesla(&self, gamma_hz_per_t: T) -> T {
        accumulated_phase(T::one(), self, gamma_hz_per_t)
    }

    /// On-axis AC field at time `t` for unit amplitude.
    pub fn waveform(&self, t: T) -> T {
        if self.f_ac_hz == T::zero() {
            self.phase0_rad.sin()
        } else {
            (T::TAU() * self.f_ac_hz * t + self.phase0_rad).sin()
        }
    }
}

/// Echo phase `2 pi gamma [int_0^{tau/2} b dt - int_{tau/2}^{tau} b dt]` for
/// `b(t) = b_parallel sin(2 pi f t + phase0)`, in closed form.
///
/// Written as `-(4 gamma b / f) cos(phase0 + pi f tau) sin^2(pi f tau / 2)`,
/// which has no cancellation at small `f tau`. A static field refocuses.
pub fn accumulated_phase<T: Scalar>(b_parallel_t: T, echo: &EchoConfig<T>, gamma_hz_per_t: T) -> T {
    if echo.f_ac_hz == T::zero() || b_parallel_t == T::zero() {
        return T::zero();
    }
    let x = T::PI() * echo.f_ac_hz * echo.tau_s;
    let half = (x / T::lit(2.0)).sin();
    -T::lit(4.0) * gamma_hz_per_t * b_parallel_t / echo.f_ac_hz * (echo.phase0_rad + x).cos() * half * half
}

/// `P(|0>) = (1 + V cos(phi - theta)) / 2`.
pub fn echo_population<T: Scalar>(phase_rad: T, visibility: T, readout_phase_rad: T) -> T {
    (T::one() + visibility * (phase_rad - readout_phase_rad).cos()) / T::lit(2.0)
}

/// `V = C exp(-(tau / T2)^p)`.
pub fn echo_visibility<T: Scalar>(tau_s: T, t2_s: T, stretch: T, contrast: T) -> T {
    contrast * (-(tau_s / t2_s).powf(stretch)).exp()
}

/// Bloch-vector state of the effective {|0>, |1>} qubit; `z = +1` is |0>.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoLevelState<T> {
    pub bloch: Vec3<T>,
}

impl<T: Scalar> TwoLevelState<T> {
    pub fn ground() -> Self {
        Self {
            bloch: Vec3::new(T::zero(), T::zero(), T::one()),
        }
    }

    pub fn excited() -> Self {
        Self {
            bloch: Vec3::new(T::zero(), T::zero(), -T::one()),
        }
    }

    pub fn p0(&self) -> T {
        (T::one() + self.bloch.z) / T::lit(2.0)
    }

    pub fn p1(&self) -> T {
        (T::one() - self.bloch.z) / T::lit(2.0)
    }

    pub fn norm(&self) -> T {
        self.bloch.norm()
    }
}

/// Constant microwave drive in the rotating frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveConfig<T> {
    pub rabi_frequency_hz: T,
    pub detuning_hz: T,
    pub pulse_phase_rad: T,
    pub duration_s: T,
}

impl<T: Scalar> DriveConfig<T> {
    pub fn on_resonance(rabi_frequency_hz: T, pulse_phase_rad: T, duration_s: T) -> Self {
        Self {
            rabi_frequency_hz,
            detuning_hz: T::zero(),
            pulse_phase_rad,
            duration_s,
        }
    }

    /// Duration of a resonant pulse of the given rotation angle.
    pub fn pulse_duration(rabi_frequency_hz: T, angle_rad: T) -> T {
        angle_rad / (T::TAU() * rabi_frequency_hz)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rabi_frequency_hz >= T::zero()) {
            return Err(Error::InvalidConfig("Rabi frequency must be non-negative".into()));
        }
        if !(self.duration_s >= T::zero()) {
            return Err(Error::InvalidConfig("pulse duration must be non-negative".into()));
        }
        Ok(())
    }

    /// Generalized Rabi frequency `sqrt(Omega^2 + Delta^2)`.
    pub fn effective_frequency(&self) -> T {
        self.rabi_frequency_hz.hypot(self.detuning_hz)
    }

    /// Angular velocity of the Bloch vector, rad/s.
    fn angular_velocity(&self) -> Vec3<T> {
        let w = T::TAU();
        Vec3::new(
            w * self.rabi_frequency_hz * self.pulse_phase_rad.cos(),
            w * self.rabi_frequency_hz * self.pulse_phase_rad.sin(),
            w * self.detuning_hz,
        )
    }
}

/// Step control for the RK4 propagator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagatorOptions {
    /// Steps per period of the fastest rotation. Must be at least 100.
    pub steps_per_period: f64,
    pub max_steps: u64,
}

impl Default for PropagatorOptions {
    fn default() -> Self {
        Self {
            steps_per_period: 1000.0,
            max_steps: 50_000_000,
        }
    }
}

fn cross<T: Scalar>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    Vec3::new(
        a.y * b.z - a.z * b.y,
        a.z * b.x - a.x * b.z,
        a.x * b.y - a.y * b.x,
    )
}

/// RK4 integration of `dr/dt = w(t) x r` over `[t0, t0 + duration]`.
fn integrate_bloch<T: Scalar>(
    r0: Vec3<T>,
    t0: T,
    duration: T,
    fastest_hz: T,
    opts: &PropagatorOptions,
    omega: impl Fn(T) -> Vec3<T>,
) -> Result<Vec3<T>> {
    if duration <= T::zero() {
        return Ok(r0);
    }
    let per_period = opts.steps_per_period.max(100.0);
    let required = if fastest_hz > T::zero() {
        (duration * fastest_hz * T::lit(per_period)).ceil().to_f64().unwrap_or(f64::INFINITY)
    } else {
        1.0
    };
    let required = required.max(1.0);
    if required > opts.max_steps as f64 {
        return Err(Error::StepSizeUnderflow {
            required: required.min(u64::MAX as f64) as u64,
            max: opts.max_steps,
        });
    }
    let n = required as u64;
    let h = duration / T::lit(n as f64);
    let half = h / T::lit(2.0);
    let sixth = h / T::lit(6.0);
    let two = T::lit(2.0);
    let mut r = r0;
    for i in 0..n {
        let t = t0 + h * T::lit(i as f64);
        let w0 = omega(t);
        let wm = omega(t + half);
        let w1 = omega(t + h);
        let k1 = cross(w0, r);
        let k2 = cross(wm, r + k1.scale(half));
        let k3 = cross(wm, r + k2.scale(half));
        let k4 = cross(w1, r + k3.scale(h));
        r = r + (k1 + k2.scale(two) + k3.scale(two) + k4).scale(sixth);
    }
    Ok(r)
}

/// Numeric rotating-frame evolution under
/// `H/h = (Delta/2) sz + (Omega/2)(cos(phase) sx + sin(phase) sy)`.
pub fn propagate_two_level<T: Scalar>(
    state: TwoLevelState<T>,
    drive: &DriveConfig<T>,
) -> Result<TwoLevelState<T>> {
    propagate_two_level_with(state, drive, &PropagatorOptions::default())
}

pub fn propagate_two_level_with<T: Scalar>(
    state: TwoLevelState<T>,
    drive: &DriveConfig<T>,
    opts: &PropagatorOptions,
) -> Result<TwoLevelState<T>> {
    drive.validate()?;
    let w = drive.angular_velocity();
    let bloch = integrate_bloch(
        state.bloch,
        T::zero(),
        drive.duration_s,
        drive.effective_frequency(),
        opts,
        |_| w,
    )?;
    Ok(TwoLevelState { bloch })
}

/// Closed-form rotation for a constant drive (Rodrigues formula).
pub fn rotate_exact<T: Scalar>(state: TwoLevelState<T>, drive: &DriveConfig<T>) -> TwoLevelState<T> {
    let w = drive.angular_velocity();
    let rate = w.norm();
    if rate == T::zero() {
        return state;
    }
    let n = w.scale(T::one() / rate);
    let angle = rate * drive.duration_s;
    let (s, c) = angle.sin_cos();
    let r = state.bloch;
    let bloch = r.scale(c) + cross(n, r).scale(s) + n.scale(n.dot(r) * (T::one() - c));
    TwoLevelState { bloch }
}

/// Excited-state population after a constant drive from |0>:
/// `Omega^2 / (Omega^2 + Delta^2) * sin^2(pi sqrt(Omega^2 + Delta^2) t)`.
pub fn rabi_excited_population<T: Scalar>(drive: &DriveConfig<T>) -> T {
    let eff = drive.effective_frequency();
    if eff == T::zero() {
        return T::zero();
    }
    let amp = drive.rabi_frequency_hz * drive.rabi_frequency_hz / (eff * eff);
    let s = (T::PI() * eff * drive.duration_s).sin();
    amp * s * s
}

/// Per-axis inputs of one echo run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EchoAxis<T> {
    /// AC amplitude projected on this axis.
    pub b_parallel_t: T,
    /// `-1` phase-inverts the readout pulse.
    pub sign: i8,
    /// Spin-level echo visibility (decay times pulse fidelity).
    pub visibility: T,
}

/// Analytic Hahn echo for each requested axis: `P(|0>)` per entry.
pub fn run_hahn_echo<T: Scalar>(axes: &[EchoAxis<T>], echo: &EchoConfig<T>, gamma_hz_per_t: T) -> Result<Vec<T>> {
    echo.validate()?;
    axes.iter()
        .map(|a| {
            if !(a.visibility >= T::zero() && a.visibility <= T::one()) {
                return Err(Error::InvalidConfig("visibility must lie in [0, 1]".into()));
            }
            let phi = accumulated_phase(a.b_parallel_t, echo, gamma_hz_per_t);
            Ok(echo_population(phi, a.visibility, echo.readout_phase(a.sign)))
        })
        .collect()
}

/// How pulses are modelled by the numeric echo.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PulseModel<T> {
    /// Instantaneous rotations.
    Ideal,
    /// Resonant pulses of finite length at this Rabi frequency; the AC
    /// field keeps acting during them.
    Finite { rabi_frequency_hz: T },
}

/// Numeric pi/2 - pi - pi/2 echo with the AC field entering as a
/// time-dependent detuning `gamma b(t)`. Independent of `accumulated_phase`.
pub fn simulate_echo_numeric<T: Scalar>(
    axis: &EchoAxis<T>,
    echo: &EchoConfig<T>,
    gamma_hz_per_t: T,
    pulses: PulseModel<T>,
    opts: &PropagatorOptions,
) -> Result<T> {
    echo.validate()?;
    let tau = echo.tau_s;
    let two = T::lit(2.0);
    let detuning = |t: T| gamma_hz_per_t * axis.b_parallel_t * echo.waveform(t);
    let max_detuning = (gamma_hz_per_t * axis.b_parallel_t).abs();
    let readout_pulse_phase = -echo.readout_phase(axis.sign);

    let bloch = match pulses {
        PulseModel::Ideal => {
            let quarter = DriveConfig::pulse_duration(T::one(), T::FRAC_PI_2());
            let half_turn = DriveConfig::pulse_duration(T::one(), T::PI());
            let free_rate = max_detuning.max(echo.f_ac_hz);
            let free = |r: Vec3<T>, t0: T| {
                integrate_bloch(r, t0, tau / two, free_rate, opts, |t| {
                    Vec3::new(T::zero(), T::zero(), T::TAU() * detuning(t))
                })
            };
            let mut s = TwoLevelState::ground();
            s = rotate_exact(s, &DriveConfig::on_resonance(T::one(), T::zero(), quarter));
            s.bloch = free(s.bloch, T::zero())?;
            s = rotate_exact(s, &DriveConfig::on_resonance(T::one(), T::zero(), half_turn));
            s.bloch = free(s.bloch, tau / two)?;
            s = rotate_exact(s, &DriveConfig::on_resonance(T::one(), readout_pulse_phase, quarter));
            s.bloch
        }
        PulseModel::Finite { rabi_frequency_hz } => {
            let d90 = DriveConfig::pulse_duration(rabi_frequency_hz, T::FRAC_PI_2());
            let d180 = DriveConfig::pulse_duration(rabi_frequency_hz, T::PI());
            let pi_start = tau / two - d180 / two;
            if d90 > pi_start {
                return Err(Error::InvalidTiming(
                    "pulses overlap: tau too short for the Rabi frequency".into(),
                ));
            }
            // (start, end, drive on, pulse phase)
            let segments = [
                (T::zero(), d90, true, T::zero()),
                (d90, pi_start, false, T::zero()),
                (pi_start, pi_start + d180, true, T::zero()),
                (pi_start + d180, tau - d90, false, T::zero()),
                (tau - d90, tau, true, readout_pulse_phase),
            ];
            let mut r = TwoLevelState::<T>::ground().bloch;
            for (start, end, on, phase) in segments {
                let rabi = if on { rabi_frequency_hz } else { T::zero() };
                let rate = rabi.hypot(max_detuning).max(echo.f_ac_hz);
                let (c, s) = (phase.cos(), phase.sin());
                r = integrate_bloch(r, start, end - start, rate, opts, |t| {
                    Vec3::new(
                        T::TAU() * rabi * c,
                        T::TAU() * rabi * s,
                        T::TAU() * detuning(t),
                    )
                })?;
            }
            r
        }
    };
    Ok((T::one() + axis.visibility * bloch.z) / two)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    const GAMMA: f64 = 28.024e9;

    #[test]
    fn zero_field_no_phase() {
        let e = EchoConfig::synchronized(100e3);
        assert_eq!(accumulated_phase(0.0, &e, GAMMA), 0.0);
    }

    #[test]
    fn synchronized_phase_is_four_gamma_b_tau() {
        let e = EchoConfig::synchronized(100e3);
        assert!(e.is_synchronized());
        let phi = accumulated_phase(1e-6, &e, GAMMA);
        let expected = 4.0 * GAMMA * 1e-6 * 1e-5;
        assert!((phi - expected).abs() <= 1e-12 * expected);
        assert!((phi - 1.12096).abs() < 1e-5);
    }

    #[test]
    fn static_field_refocuses() {
        let e = EchoConfig {
            tau_s: 1e-5,
            f_ac_hz: 0.0,
            phase0_rad: 0.3,
            readout_phase_rad: FRAC_PI_2,
        };
        assert_eq!(accumulated_phase(5e-6, &e, GAMMA), 0.0);
    }

    #[test]
    fn phase_flips_with_half_period_shift() {
        let mut e = EchoConfig::synchronized(83e3);
        e.tau_s = 1.3e-5;
        e.phase0_rad = 0.4;
        let a = accumulated_phase(7e-7, &e, GAMMA);
        e.phase0_rad += PI;
        let b = accumulated_phase(7e-7, &e, GAMMA);
        assert!((a + b).abs() <= 1e-12 * a.abs());
    }

    #[test]
    fn population_examples() {
        assert!((echo_population(0.0, 0.7, FRAC_PI_2) - 0.5).abs() < 1e-15);
        assert!((echo_population(FRAC_PI_2, 1.0, FRAC_PI_2) - 1.0).abs() < 1e-15);
        let a = echo_population(0.4, 0.6, FRAC_PI_2);
        let b = echo_population(0.4, 0.6, FRAC_PI_2 + PI);
        assert!((a + b - 1.0).abs() < 1e-15);
    }

    #[test]
    fn visibility_examples() {
        assert_eq!(echo_visibility(0.0, 20e-6, 1.0, 0.3), 0.3);
        assert!((echo_visibility(20e-6, 20e-6, 1.0, 1.0_f64) - 0.367_879_441_171_442_3).abs() < 1e-15);
        // 0.3 * exp(-0.25) evaluated independently as 0.3 / e^(1/4)
        let oracle = 0.3 / 1.0f64.exp().sqrt().sqrt();
        assert!((echo_visibility(10e-6, 20e-6, 2.0, 0.3) - oracle).abs() < 1e-15);
        assert!((oracle - 0.2336).abs() < 1e-4);
    }

    #[test]
    fn pi_pulse_flips() {
        let omega = 2.5e6;
        let d = DriveConfig::<f64>::on_resonance(omega, 0.0, 1.0 / (2.0 * omega));
        assert!((d.duration_s - 200e-9).abs() < 1e-18);
        let s = propagate_two_level(TwoLevelState::ground(), &d).unwrap();
        assert!((s.p1() - 1.0).abs() < 1e-6);
        assert!((s.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn inverse_pulse_restores_state() {
        let d = DriveConfig {
            rabi_frequency_hz: 2.5e6,
            detuning_hz: 0.0,
            pulse_phase_rad: 0.3,
            duration_s: 137e-9,
        };
        let inv = DriveConfig {
            pulse_phase_rad: 0.3 + PI,
            ..d
        };
        let s0 = TwoLevelState::ground();
        let s1 = propagate_two_level(s0, &d).unwrap();
        let s2 = propagate_two_level(s1, &inv).unwrap();
        assert!((s2.bloch - s0.bloch).norm() < 1e-6);
    }

    #[test]
    fn step_limit_is_enforced() {
        let d = DriveConfig::on_resonance(2.5e6, 0.0, 1.0);
        let opts = PropagatorOptions {
            steps_per_period: 1000.0,
            max_steps: 1000,
        };
        assert!(matches!(
            propagate_two_level_with(TwoLevelState::ground(), &d, &opts),
            Err(Error::StepSizeUnderflow { .. })
        ));
    }

    #[test]
    fn exact_rotation_matches_propagator() {
        let d = DriveConfig::<f64> {
            rabi_frequency_hz: 2.5e6,
            detuning_hz: 1.1e6,
            pulse_phase_rad: 1.2,
            duration_s: 333e-9,
        };
        let a = rotate_exact(TwoLevelState::ground(), &d);
        let b = propagate_two_level(TwoLevelState::ground(), &d).unwrap();
        assert!((a.bloch - b.bloch).norm() < 1e-9);
        assert!((a.p1() - rabi_excited_population(&d)).abs() < 1e-12);
    }

    #[test]
    fn echo_without_field_is_at_quadrature() {
        let e = EchoConfig::synchronized(100e3);
        let axes = [
            EchoAxis { b_parallel_t: 0.0, sign: 1, visibility: 0.6 },
            EchoAxis { b_parallel_t: 0.0, sign: -1, visibility: 0.6 },
        ];
        for p in run_hahn_echo(&axes, &e, GAMMA).unwrap() {
            assert!((p - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn echo_sign_mirrors() {
        let e = EchoConfig::synchronized(100e3);
        let axes = [
            EchoAxis { b_parallel_t: 2e-7, sign: 1, visibility: 0.6 },
            EchoAxis { b_parallel_t: 2e-7, sign: -1, visibility: 0.6 },
        ];
        let p = run_hahn_echo(&axes, &e, GAMMA).unwrap();
        assert!((p[0] + p[1] - 1.0).abs() < 1e-15);
        assert!(p[0] > 0.5);
    }

    #[test]
    fn numeric_echo_matches_analytic() {
        let e = EchoConfig::synchronized(100e3);
        for sign in [1, -1] {
            let axis = EchoAxis { b_parallel_t: 1e-6, sign, visibility: 0.8 };
            let analytic = run_hahn_echo(&[axis], &e, GAMMA).unwrap()[0];
            let numeric =
                simulate_echo_numeric(&axis, &e, GAMMA, PulseModel::Ideal, &PropagatorOptions::default())
                    .unwrap();
            assert!((analytic - numeric).abs() < 1e-6, "{analytic} vs {numeric}");
        }
    }

    #[test]
    fn finite_pulses_stay_close_to_ideal() {
        let e = EchoConfig::synchronized(100e3);
        let axis = EchoAxis { b_parallel_t: 2e-7, sign: 1, visibility: 1.0 };
        let ideal = run_hahn_echo(&[axis], &e, GAMMA).unwrap()[0];
        let finite = simulate_echo_numeric(
            &axis,
            &e,
            GAMMA,
            PulseModel::Finite { rabi_frequency_hz: 2.5e6 },
            &PropagatorOptions::default(),
        )
        .unwrap();
        // 200 ns pulses against a 10 us echo shift the signal only slightly
        assert!((ideal - finite).abs() < 0.02, "{ideal} vs {finite}");
    }

    #[test]
    fn finite_pulses_reject_overlap() {
        let mut e = EchoConfig::synchronized(100e3);
        e.tau_s = 300e-9;
        let axis = EchoAxis { b_parallel_t: 0.0, sign: 1, visibility: 1.0 };
        let r = simulate_echo_numeric(
            &axis,
            &e,
            GAMMA,
            PulseModel::Finite { rabi_frequency_hz: 2.5e6 },
            &PropagatorOptions::default(),
        );
        assert!(matches!(r, Err(Error::InvalidTiming(_))));
    }
}
