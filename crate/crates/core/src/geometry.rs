//! NV crystallographic axes, field projections, the first-order Zeeman
//! model, readout sign patterns, and static bias-field calibration.
//!
//! Axis order is fixed to NV1..NV4 = [111], [-1 1 -1], [1 -1 -1], [-1 -1 1].
//! Every other module indexes per-axis arrays in this order.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_rational::Ratio;
use num_traits::{Num, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::Scalar;

/// Three-component Cartesian vector.
///
/// Generic over any numeric ring so the tetrahedral identities can be checked
/// with integers or rationals as well as with floats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T> Vec3<T> {
    pub const fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }
}

impl<T: Copy> Vec3<T> {
    pub fn to_array(self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [T; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn map<U>(self, f: impl Fn(T) -> U) -> Vec3<U> {
        Vec3::new(f(self.x), f(self.y), f(self.z))
    }
}

impl<T: Copy + Num> Vec3<T> {
    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn dot(self, other: Self) -> T {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm_squared(self) -> T {
        self.dot(self)
    }

    pub fn scale(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn component(self, c: Component) -> T {
        match c {
            Component::X => self.x,
            Component::Y => self.y,
            Component::Z => self.z,
        }
    }
}

impl<T: Scalar> Vec3<T> {
    pub fn norm(self) -> T {
        self.norm_squared().sqrt()
    }

    /// Unit vector along `self`; the zero vector is returned unchanged.
    pub fn normalized(self) -> Self {
        let n = self.norm();
        if n == T::zero() {
            self
        } else {
            self.scale(T::one() / n)
        }
    }

    /// Angle between two vectors in radians, robust near 0 and pi.
    pub fn angle_to(self, other: Self) -> T {
        let cross = Vec3::new(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        );
        cross.norm().atan2(self.dot(other))
    }
}

impl<T: Copy + Num> Add for Vec3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Copy + Num> Sub for Vec3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Copy + Num + Neg<Output = T>> Neg for Vec3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

impl<T: Copy + Num> Mul<T> for Vec3<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        self.scale(s)
    }
}

/// One of the four NV orientation classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Axis {
    Nv1,
    Nv2,
    Nv3,
    Nv4,
}

impl Axis {
    pub const ALL: [Axis; 4] = [Axis::Nv1, Axis::Nv2, Axis::Nv3, Axis::Nv4];

    /// Zero-based position in per-axis arrays.
    pub fn index(self) -> usize {
        self as usize
    }

    /// Axis from its 1-based label number.
    pub fn from_number(n: usize) -> Option<Axis> {
        Self::ALL.get(n.checked_sub(1)?).copied()
    }

    pub fn number(self) -> usize {
        self.index() + 1
    }

    /// Integer lattice direction; the unit axis is this divided by sqrt(3).
    pub fn lattice(self) -> Vec3<i64> {
        let [x, y, z] = LATTICE[self.index()];
        Vec3::new(x, y, z)
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NV{}", self.number())
    }
}

impl std::str::FromStr for Axis {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let digits = s
            .strip_prefix("NV")
            .or_else(|| s.strip_prefix("nv"))
            .unwrap_or(s);
        digits
            .parse::<usize>()
            .ok()
            .and_then(Axis::from_number)
            .ok_or_else(|| format!("unknown axis '{s}' (expected NV1..NV4)"))
    }
}

const LATTICE: [[i64; 3]; 4] = [[1, 1, 1], [-1, 1, -1], [1, -1, -1], [-1, -1, 1]];

/// Cartesian field component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Component {
    X,
    Y,
    Z,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::X, Component::Y, Component::Z];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn unit<T: Copy + Num>(self) -> Vec3<T> {
        let (o, z) = (T::one(), T::zero());
        match self {
            Component::X => Vec3::new(o, z, z),
            Component::Y => Vec3::new(z, o, z),
            Component::Z => Vec3::new(z, z, o),
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Component::X => "x",
            Component::Y => "y",
            Component::Z => "z",
        })
    }
}

impl std::str::FromStr for Component {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "x" | "X" => Ok(Component::X),
            "y" | "Y" => Ok(Component::Y),
            "z" | "Z" => Ok(Component::Z),
            _ => Err(format!("unknown component '{s}' (expected x, y or z)")),
        }
    }
}

/// The four NV unit axes in NV1..NV4 order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisSet<T> {
    pub axes: [Vec3<T>; 4],
}

impl<T: Scalar> AxisSet<T> {
    pub fn axis(&self, axis: Axis) -> Vec3<T> {
        self.axes[axis.index()]
    }

    /// Signed projections of `field` onto every axis.
    pub fn projections(&self, field: Vec3<T>) -> [T; 4] {
        self.axes.map(|u| u.dot(field))
    }

    /// The 4x3 design matrix whose rows are the axes.
    pub fn design_matrix(&self) -> linalg::Matrix<T> {
        self.axes.iter().map(|u| u.to_array().to_vec()).collect()
    }
}

/// Returns the normalized tetrahedral axes.
pub fn axis_unit_vectors<T: Scalar>() -> AxisSet<T> {
    let inv_sqrt3 = T::one() / T::lit(3.0).sqrt();
    AxisSet {
        axes: Axis::ALL.map(|a| a.lattice().map(|c| T::lit(c as f64) * inv_sqrt3)),
    }
}

/// Signed projection `B . u_n`.
pub fn project_field<T: Scalar>(field: Vec3<T>, axis: Axis) -> T {
    axis_unit_vectors::<T>().axis(axis).dot(field)
}

/// Exact tetrahedral identities in rational arithmetic.
///
/// Unit axes are `a_n / sqrt(3)` with integer lattice vectors `a_n`, so every
/// inner product of unit axes is the rational number `(a_m . a_n) / 3`.
pub mod exact {
    use super::*;

    pub type Rational = Ratio<i64>;

    /// `u_m . u_n` as an exact rational.
    pub fn unit_dot(a: Axis, b: Axis) -> Rational {
        Ratio::new(a.lattice().dot(b.lattice()), 3)
    }

    /// `sum_n u_n`, scaled by sqrt(3) so it is an integer vector.
    pub fn scaled_axis_sum() -> Vec3<i64> {
        Axis::ALL
            .iter()
            .fold(Vec3::zero(), |acc, a| acc + a.lattice())
    }

    /// `sqrt(3) * sum_n s_n u_n` for a sign pattern; equals `4 e_k` exactly.
    pub fn scaled_signed_sum(pattern: &SignPattern) -> Vec3<i64> {
        Axis::ALL.iter().fold(Vec3::zero(), |acc, &a| {
            acc + a.lattice().scale(i64::from(pattern.sign(a)))
        })
    }

    /// `(sum_n s_n u_n) . e_j` times sqrt(3)/4, as a rational: 1 on the
    /// selected component, 0 elsewhere.
    pub fn normalized_signed_component(pattern: &SignPattern, c: Component) -> Rational {
        Ratio::new(scaled_signed_sum(pattern).component(c), 4)
    }

    pub fn is_zero(v: Vec3<i64>) -> bool {
        v.x.is_zero() && v.y.is_zero() && v.z.is_zero()
    }
}

/// Per-axis +/-1 readout flips that make the summed echo response select
/// one Cartesian component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignPattern {
    pub component: Component,
    pub signs: [i8; 4],
}

impl SignPattern {
    pub fn sign(&self, axis: Axis) -> i8 {
        self.signs[axis.index()]
    }

    pub fn sign_as<T: Scalar>(&self, axis: Axis) -> T {
        T::lit(f64::from(self.sign(axis)))
    }

    /// Axes whose final pulse is phase-inverted.
    pub fn flipped(&self) -> Vec<Axis> {
        Axis::ALL
            .into_iter()
            .filter(|&a| self.sign(a) < 0)
            .collect()
    }

    /// Multiplies per-axis values by the pattern.
    pub fn apply<T: Scalar>(&self, values: [T; 4]) -> [T; 4] {
        let mut out = values;
        for a in Axis::ALL {
            out[a.index()] = values[a.index()] * self.sign_as::<T>(a);
        }
        out
    }

    /// `sum_n s_n u_n` in floating point.
    pub fn weighted_axis_sum<T: Scalar>(&self) -> Vec3<T> {
        let axes = axis_unit_vectors::<T>();
        Axis::ALL.iter().fold(Vec3::zero(), |acc, &a| {
            acc + axes.axis(a).scale(self.sign_as::<T>(a))
        })
    }
}

/// Readout sign pattern selecting `component`.
///
/// x flips NV2 and NV4, y flips NV3 and NV4, z flips NV2 and NV3; NV1 is
/// never flipped.
pub fn sign_pattern(component: Component) -> SignPattern {
    let signs = match component {
        Component::X => [1, -1, 1, -1],
        Component::Y => [1, 1, -1, -1],
        Component::Z => [1, -1, -1, 1],
    };
    SignPattern { component, signs }
}

/// Sign pattern maximizing the summed response to a field along `direction`:
/// each axis takes the sign of its projection (ties resolve to +1).
pub fn aligned_signs<T: Scalar>(direction: Vec3<T>) -> [i8; 4] {
    axis_unit_vectors::<T>()
        .projections(direction)
        .map(|p| if p < T::zero() { -1 } else { 1 })
}

/// First-order, strain-free resonances `(D - g|B.u_n|, D + g|B.u_n|)` per axis.
pub fn resonance_frequencies<T: Scalar>(
    static_field_t: Vec3<T>,
    zero_field_splitting_hz: T,
    gamma_hz_per_t: T,
) -> [(T, T); 4] {
    axis_unit_vectors::<T>()
        .projections(static_field_t)
        .map(|p| {
            let shift = gamma_hz_per_t * p.abs();
            (zero_field_splitting_hz - shift, zero_field_splitting_hz + shift)
        })
}

/// Which transition the measured resonances belong to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    #[default]
    Lower,
    Upper,
}

impl Branch {
    fn sign<T: Scalar>(self) -> T {
        match self {
            Branch::Lower => -T::one(),
            Branch::Upper => T::one(),
        }
    }
}

/// Whether the zero-field splitting is held at its configured value or
/// solved jointly with the field as an effective offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplittingMode {
    #[default]
    Fixed,
    Fitted,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationOptions {
    pub branch: Branch,
    pub splitting: SplittingMode,
    /// Largest acceptable rms frequency residual of the best assignment.
    pub max_residual_hz: f64,
    /// Assignments within this factor of the best residual are reported.
    pub candidate_factor: f64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            branch: Branch::Lower,
            splitting: SplittingMode::Fixed,
            max_residual_hz: 10e6,
            candidate_factor: 2.0,
        }
    }
}

/// One sign assignment of the projection magnitudes and its solution.
#[derive(Debug, Clone, PartialEq)]
pub struct SignCandidate<T> {
    pub signs: [i8; 4],
    pub field_t: Vec3<T>,
    pub zero_field_splitting_hz: T,
    /// rms mismatch between model and measured resonances.
    pub residual_hz: T,
}

/// Result of inverting four measured resonances into a static bias field.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticFieldCalibration<T> {
    pub field_t: Vec3<T>,
    /// Measured resonances the calibration was built from.
    pub frequencies_hz: [T; 4],
    pub zero_field_splitting_hz: T,
    pub gamma_hz_per_t: T,
    pub branch: Branch,
    pub signs: [i8; 4],
    pub residual_hz: T,
    /// Every assignment within `candidate_factor` of the best residual,
    /// best first. Always includes the global sign twin `-B`.
    pub candidates: Vec<SignCandidate<T>>,
}

impl<T: Scalar> StaticFieldCalibration<T> {
    /// Model resonances on the calibrated branch.
    pub fn model_frequencies(&self) -> [T; 4] {
        let pairs = resonance_frequencies(
            self.field_t,
            self.zero_field_splitting_hz,
            self.gamma_hz_per_t,
        );
        pairs.map(|(lo, hi)| match self.branch {
            Branch::Lower => lo,
            Branch::Upper => hi,
        })
    }
}

fn rms_residual<T: Scalar>(
    field: Vec3<T>,
    splitting: T,
    gamma: T,
    branch: Branch,
    measured: &[T; 4],
) -> T {
    let proj = axis_unit_vectors::<T>().projections(field);
    let sum = proj.iter().zip(measured).fold(T::zero(), |acc, (&p, &f)| {
        let model = splitting + branch.sign::<T>() * gamma * p.abs();
        acc + (model - f) * (model - f)
    });
    (sum / T::lit(4.0)).sqrt()
}

/// Recovers the static field from four single-branch resonances.
///
/// Magnitudes `|B.u_n| = |f_n - D| / gamma` are known; the signs are not. All
/// 16 assignments are solved by least squares (fixed splitting) or exactly
/// together with an effective splitting (fitted), and ranked by rms frequency
/// residual. Ties between `B` and `-B` resolve to `B.u_1 >= 0`.
pub fn calibrate_static_field<T: Scalar>(
    measured_hz: [T; 4],
    zero_field_splitting_hz: T,
    gamma_hz_per_t: T,
    options: &CalibrationOptions,
) -> Result<StaticFieldCalibration<T>> {
    if !(zero_field_splitting_hz > T::zero()) || !(gamma_hz_per_t > T::zero()) {
        return Err(Error::InvalidConfig(
            "zero-field splitting and gyromagnetic ratio must be positive".into(),
        ));
    }
    let axes = axis_unit_vectors::<T>();
    let branch_sign = options.branch.sign::<T>();
    let on_d = T::one();

    if options.splitting == SplittingMode::Fixed {
        let below = measured_hz
            .iter()
            .any(|&f| f < zero_field_splitting_hz - on_d);
        let above = measured_hz
            .iter()
            .any(|&f| f > zero_field_splitting_hz + on_d);
        let wrong_side = match options.branch {
            Branch::Lower => above,
            Branch::Upper => below,
        };
        if (below && above) || wrong_side {
            return Err(Error::InvalidBranch);
        }
    }

    let magnitudes =
        measured_hz.map(|f| ((f - zero_field_splitting_hz) / gamma_hz_per_t).abs());
    let design = axes.design_matrix();

    let mut solutions: Vec<SignCandidate<T>> = Vec::with_capacity(16);
    for mask in 0u8..16 {
        let signs: [i8; 4] =
            std::array::from_fn(|n| if mask & (1 << n) != 0 { -1 } else { 1 });
        let (field, splitting) = match options.splitting {
            SplittingMode::Fixed => {
                let rhs: Vec<T> = (0..4)
                    .map(|n| T::lit(f64::from(signs[n])) * magnitudes[n])
                    .collect();
                let b = linalg::least_squares(&design, &rhs)?;
                (Vec3::new(b[0], b[1], b[2]), zero_field_splitting_hz)
            }
            SplittingMode::Fitted => {
                // f_n = D + branch * gamma * s_n * (u_n . B)
                let rows: Vec<Vec<T>> = (0..4)
                    .map(|n| {
                        let k = branch_sign * gamma_hz_per_t * T::lit(f64::from(signs[n]));
                        let u = axes.axes[n];
                        vec![k * u.x, k * u.y, k * u.z, T::one()]
                    })
                    .collect();
                match linalg::solve(&rows, &measured_hz) {
                    Ok(sol) => (Vec3::new(sol[0], sol[1], sol[2]), sol[3]),
                    Err(Error::Singular) => continue,
                    Err(e) => return Err(e),
                }
            }
        };
        if !(splitting > T::zero()) {
            continue;
        }
        let residual = rms_residual(field, splitting, gamma_hz_per_t, options.branch, &measured_hz);
        solutions.push(SignCandidate {
            signs,
            field_t: field,
            zero_field_splitting_hz: splitting,
            residual_hz: residual,
        });
    }

    if solutions.is_empty() {
        return Err(Error::NoConsistentSignAssignment {
            residual_hz: f64::INFINITY,
            threshold_hz: options.max_residual_hz,
        });
    }

    // Residuals that differ only by rounding count as ties.
    let scale = measured_hz
        .iter()
        .fold(T::zero(), |acc, f| acc.max(f.abs()));
    let tie = scale * T::lit(1e-12);
    let u1 = axes.axes[0];
    solutions.sort_by(|a, b| {
        let by_residual = if (a.residual_hz - b.residual_hz).abs() <= tie {
            std::cmp::Ordering::Equal
        } else {
            a.residual_hz.partial_cmp(&b.residual_hz).unwrap()
        };
        by_residual
            .then_with(|| {
                let da = (a.zero_field_splitting_hz - zero_field_splitting_hz).abs();
                let db = (b.zero_field_splitting_hz - zero_field_splitting_hz).abs();
                da.partial_cmp(&db).unwrap()
            })
            .then_with(|| {
                let pa = u1.dot(a.field_t) >= T::zero();
                let pb = u1.dot(b.field_t) >= T::zero();
                pb.cmp(&pa)
            })
    });

    let best = solutions[0].clone();
    let best_residual = best.residual_hz;
    if best_residual.to_f64().unwrap_or(f64::INFINITY) > options.max_residual_hz {
        return Err(Error::NoConsistentSignAssignment {
            residual_hz: best_residual.to_f64().unwrap_or(f64::INFINITY),
            threshold_hz: options.max_residual_hz,
        });
    }

    let limit = best_residual * T::lit(options.candidate_factor) + tie;
    let field_tol = T::lit(1e-12) * best.field_t.norm().max(T::min_positive_value());
    let mut candidates: Vec<SignCandidate<T>> = Vec::new();
    for s in solutions.into_iter().filter(|s| s.residual_hz <= limit) {
        let duplicate = candidates.iter().any(|c| {
            (c.field_t - s.field_t).norm() <= field_tol
                && (c.zero_field_splitting_hz - s.zero_field_splitting_hz).abs() <= tie
        });
        if !duplicate {
            candidates.push(s);
        }
    }

    Ok(StaticFieldCalibration {
        field_t: best.field_t,
        frequencies_hz: measured_hz,
        zero_field_splitting_hz: best.zero_field_splitting_hz,
        gamma_hz_per_t,
        branch: options.branch,
        signs: best.signs,
        residual_hz: best_residual,
        candidates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const D: f64 = 2.870e9;
    const GAMMA: f64 = 28.024e9;

    #[test]
    fn unit_axes_have_tetrahedral_geometry() {
        let axes = axis_unit_vectors::<f64>();
        let u = axes.axes;
        assert!((u[0].dot(u[0]) - 1.0).abs() < 1e-15);
        assert!((u[0].dot(u[1]) + 1.0 / 3.0).abs() < 1e-15);
        let sum = u.iter().fold(Vec3::zero(), |acc, &v| acc + v);
        assert!(sum.norm() < 1e-15);
    }

    #[test]
    fn exact_identities() {
        for a in Axis::ALL {
            assert_eq!(exact::unit_dot(a, a), Ratio::from_integer(1));
            for b in Axis::ALL.into_iter().filter(|&b| b != a) {
                assert_eq!(exact::unit_dot(a, b), Ratio::new(-1, 3));
            }
        }
        assert!(exact::is_zero(exact::scaled_axis_sum()));
        for c in Component::ALL {
            let p = sign_pattern(c);
            assert_eq!(exact::scaled_signed_sum(&p), c.unit::<i64>().scale(4));
        }
    }

    #[test]
    fn projection_examples() {
        let b = Vec3::new(0.0, 0.0, 1e-6);
        assert!((project_field(b, Axis::Nv1) - 1e-6 / 3f64.sqrt()).abs() < 1e-21);
        let u1 = axis_unit_vectors::<f64>().axes[0];
        assert!((project_field(u1.scale(2.5e-6), Axis::Nv1) - 2.5e-6).abs() < 1e-20);
    }

    #[test]
    fn fig5_direction_projections_sum_to_zero() {
        let b = Vec3::new(0.23, 0.16, -0.97).normalized().scale(1e-6);
        // independent evaluation with the raw lattice vectors
        let s3 = 3f64.sqrt();
        let expected = [
            (b.x + b.y + b.z) / s3,
            (-b.x + b.y - b.z) / s3,
            (b.x - b.y - b.z) / s3,
            (-b.x - b.y + b.z) / s3,
        ];
        let mut total = 0.0;
        for a in Axis::ALL {
            let p = project_field(b, a);
            assert!((p - expected[a.index()]).abs() < 1e-21);
            total += p;
        }
        assert!(total.abs() < 1e-21);
    }

    #[test]
    fn sign_patterns_match_flip_sets() {
        assert_eq!(sign_pattern(Component::X).flipped(), vec![Axis::Nv2, Axis::Nv4]);
        assert_eq!(sign_pattern(Component::Y).flipped(), vec![Axis::Nv3, Axis::Nv4]);
        assert_eq!(sign_pattern(Component::Z).flipped(), vec![Axis::Nv2, Axis::Nv3]);
        let z = sign_pattern(Component::Z).weighted_axis_sum::<f64>();
        assert!(z.x.abs() < 1e-15 && z.y.abs() < 1e-15);
        assert!((z.z - 4.0 / 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn sign_pattern_is_involutive() {
        for c in Component::ALL {
            let p = sign_pattern(c);
            let v = [0.1, -0.7, 2.0, 3.5];
            assert_eq!(p.apply(p.apply(v)), v);
        }
    }

    #[test]
    fn zero_field_is_degenerate() {
        for (lo, hi) in resonance_frequencies(Vec3::zero(), D, GAMMA) {
            assert_eq!(lo, D);
            assert_eq!(hi, D);
        }
    }

    #[test]
    fn resonance_mean_is_splitting() {
        let pairs = resonance_frequencies(Vec3::new(1.2e-3, -3.4e-3, 0.7e-3), D, GAMMA);
        let mean = pairs.iter().map(|(a, b)| a + b).sum::<f64>() / 8.0;
        assert!((mean - D).abs() < 1e-3);
    }

    #[test]
    fn calibration_round_trips() {
        let truth = Vec3::new(2.1e-3, -1.3e-3, 3.7e-3);
        assert!(project_field(truth, Axis::Nv1) > 0.0);
        let f = resonance_frequencies(truth, D, GAMMA).map(|(lo, _)| lo);
        let cal = calibrate_static_field(f, D, GAMMA, &CalibrationOptions::default()).unwrap();
        assert!((cal.field_t - truth).norm() <= 1e-9 * truth.norm());
        assert!(cal.residual_hz < 1e-3);
        // the global sign twin is always reported
        assert!(cal
            .candidates
            .iter()
            .any(|c| (c.field_t + truth).norm() <= 1e-9 * truth.norm()));
    }

    #[test]
    fn degenerate_input_gives_zero_field() {
        let cal =
            calibrate_static_field([D; 4], D, GAMMA, &CalibrationOptions::default()).unwrap();
        assert!(cal.field_t.norm() < 1e-15);
    }

    #[test]
    fn straddling_resonances_are_rejected() {
        let f = [2.80e9, 2.85e9, 2.90e9, 2.86e9];
        assert_eq!(
            calibrate_static_field(f, D, GAMMA, &CalibrationOptions::default()),
            Err(Error::InvalidBranch)
        );
    }

    #[test]
    fn measured_magnitudes() {
        let f = [2.720e9, 2.806e9, 2.826e9, 2.862e9];
        let mags = f.map(|fi| (D - fi) / GAMMA * 1e3);
        let expected = [5.353, 2.284, 1.570, 0.285];
        for (m, e) in mags.iter().zip(expected) {
            assert!((m - e).abs() < 5e-4, "{m} vs {e}");
        }
    }

    #[test]
    fn impossible_residual_threshold_fails() {
        let f = [2.720e9, 2.806e9, 2.826e9, 2.862e9];
        let opts = CalibrationOptions {
            max_residual_hz: 1e6,
            ..Default::default()
        };
        assert!(matches!(
            calibrate_static_field(f, D, GAMMA, &opts),
            Err(Error::NoConsistentSignAssignment { .. })
        ));
    }

    #[test]
    fn fitted_splitting_reproduces_measured_resonances() {
        let f = [2.720e9, 2.806e9, 2.826e9, 2.862e9];
        let opts = CalibrationOptions {
            splitting: SplittingMode::Fitted,
            ..Default::default()
        };
        let cal = calibrate_static_field(f, D, GAMMA, &opts).unwrap();
        for (m, e) in cal.model_frequencies().iter().zip(f) {
            assert!((m - e).abs() < 1.0, "{m} vs {e}");
        }
        assert_eq!(cal.signs, [1, -1, -1, -1]);
    }

    #[test]
    fn works_in_single_precision() {
        let axes = axis_unit_vectors::<f32>();
        assert!((axes.axes[1].dot(axes.axes[2]) + 1.0 / 3.0).abs() < 1e-6);
    }
}
