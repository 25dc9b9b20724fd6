//! Multi-channel Hahn-echo programs and their line-oriented text format.
//!
//! ```text
//! # comment
//! seq v1 tau=<seconds> mode=<single:NVn|multi:x|y|z>
//! pulse t=<s> dur=<s> angle=<pi/2|pi> ch=<1,2,4> phase=<rad,rad,rad>
//! ```
//!
//! Canonical form orders pulses by start time and channels ascending. Files
//! carry no channel map: unless told otherwise, channel `n` drives NVn.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{sign_pattern, Axis, Component};
use crate::spin::DriveConfig;

/// 1-based microwave channel number.
pub type ChannelId = usize;

const PHASE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub carrier_hz: f64,
    pub axis: Axis,
}

/// Which channel drives which axis, and how channels share IQ sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelAssignment {
    channels: [Channel; 4],
    /// Two channels per microwave source, modulated as +/- sidebands.
    source_pairs: [[ChannelId; 2]; 2],
}

impl ChannelAssignment {
    /// Validates that every axis has exactly one channel and that carriers
    /// are at least `min_separation_hz` apart.
    pub fn new(channels: [Channel; 4], min_separation_hz: f64) -> Result<Self> {
        for axis in Axis::ALL {
            let count = channels.iter().filter(|c| c.axis == axis).count();
            if count != 1 {
                return Err(Error::Validation(format!(
                    "{axis} is targeted by {count} channels, expected exactly one"
                )));
            }
        }
        for i in 0..4 {
            for j in i + 1..4 {
                let sep = (channels[i].carrier_hz - channels[j].carrier_hz).abs();
                if sep < min_separation_hz {
                    return Err(Error::Validation(format!(
                        "channels {} and {} are {:.3} MHz apart, below the selectivity margin {:.3} MHz",
                        i + 1,
                        j + 1,
                        sep / 1e6,
                        min_separation_hz / 1e6
                    )));
                }
            }
        }
        Ok(Self {
            channels,
            source_pairs: [[1, 2], [3, 4]],
        })
    }

    /// Channel `n` on carrier `frequencies[n - 1]`, driving NVn.
    pub fn from_frequencies(frequencies_hz: [f64; 4], min_separation_hz: f64) -> Result<Self> {
        let channels = std::array::from_fn(|n| Channel {
            carrier_hz: frequencies_hz[n],
            axis: Axis::ALL[n],
        });
        Self::new(channels, min_separation_hz)
    }

    /// Identity map with nominal carriers, for programs read from files.
    pub fn identity() -> Self {
        let channels = std::array::from_fn(|n| Channel {
            carrier_hz: n as f64,
            axis: Axis::ALL[n],
        });
        Self {
            channels,
            source_pairs: [[1, 2], [3, 4]],
        }
    }

    /// Default selectivity margin: ten Rabi frequencies.
    pub fn default_margin(rabi_frequency_hz: f64) -> f64 {
        10.0 * rabi_frequency_hz
    }

    pub fn with_source_pairs(mut self, pairs: [[ChannelId; 2]; 2]) -> Result<Self> {
        let mut seen = [pairs[0][0], pairs[0][1], pairs[1][0], pairs[1][1]];
        seen.sort_unstable();
        if seen != [1, 2, 3, 4] {
            return Err(Error::Validation(
                "source pairs must partition channels 1..4".into(),
            ));
        }
        self.source_pairs = pairs;
        Ok(self)
    }

    pub fn channels(&self) -> &[Channel; 4] {
        &self.channels
    }

    pub fn source_pairs(&self) -> [[ChannelId; 2]; 2] {
        self.source_pairs
    }

    pub fn channel(&self, id: ChannelId) -> Option<&Channel> {
        id.checked_sub(1).and_then(|i| self.channels.get(i))
    }

    pub fn channel_for(&self, axis: Axis) -> ChannelId {
        self.channels
            .iter()
            .position(|c| c.axis == axis)
            .expect("every axis has a channel")
            + 1
    }

    pub fn axis_of(&self, id: ChannelId) -> Option<Axis> {
        self.channel(id).map(|c| c.axis)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PulseAngle {
    HalfPi,
    Pi,
}

impl PulseAngle {
    pub fn radians(self) -> f64 {
        match self {
            PulseAngle::HalfPi => FRAC_PI_2,
            PulseAngle::Pi => PI,
        }
    }
}

impl fmt::Display for PulseAngle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PulseAngle::HalfPi => "pi/2",
            PulseAngle::Pi => "pi",
        })
    }
}

impl FromStr for PulseAngle {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "pi/2" => Ok(PulseAngle::HalfPi),
            "pi" => Ok(PulseAngle::Pi),
            _ => Err(format!("unknown angle '{s}' (expected pi/2 or pi)")),
        }
    }
}

/// One microwave pulse fired on a set of channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseEvent {
    pub start_s: f64,
    pub duration_s: f64,
    pub angle: PulseAngle,
    /// Ascending channel numbers.
    pub channels: Vec<ChannelId>,
    /// Phase per entry of `channels`, in `[0, 2 pi)`.
    pub phases_rad: Vec<f64>,
}

impl PulseEvent {
    pub fn end_s(&self) -> f64 {
        self.start_s + self.duration_s
    }

    pub fn midpoint_s(&self) -> f64 {
        self.start_s + self.duration_s / 2.0
    }

    pub fn phase_of(&self, ch: ChannelId) -> Option<f64> {
        self.channels
            .iter()
            .position(|&c| c == ch)
            .map(|i| self.phases_rad[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SequenceMode {
    /// Conventional control: one tone, one axis.
    SingleFrequency(Axis),
    /// Four tones with the readout flips selecting one component.
    MultiFrequency(Component),
}

impl fmt::Display for SequenceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SequenceMode::SingleFrequency(a) => write!(f, "single:{a}"),
            SequenceMode::MultiFrequency(c) => write!(f, "multi:{c}"),
        }
    }
}

impl FromStr for SequenceMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.split_once(':') {
            Some(("single", a)) => a.parse().map(SequenceMode::SingleFrequency),
            Some(("multi", c)) => c.parse().map(SequenceMode::MultiFrequency),
            _ => Err(format!(
                "unknown mode '{s}' (expected single:NV1..NV4 or multi:x|y|z)"
            )),
        }
    }
}

/// A validated pi/2 - pi - pi/2 echo program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceProgram {
    pub tau_s: f64,
    pub mode: SequenceMode,
    pub pulses: Vec<PulseEvent>,
}

fn wrap_phase(phase: f64) -> f64 {
    let w = phase.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Signed difference `a - b` folded into `(-pi, pi]`.
fn phase_difference(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    if d > PI {
        d - TAU
    } else {
        d
    }
}

impl SequenceProgram {
    /// Checks every structural invariant against a channel map.
    pub fn validate(&self, assignment: &ChannelAssignment) -> Result<()> {
        if !(self.tau_s > 0.0) || !self.tau_s.is_finite() {
            return Err(Error::Validation("tau must be positive".into()));
        }
        let expected = [PulseAngle::HalfPi, PulseAngle::Pi, PulseAngle::HalfPi];
        if self.pulses.len() != 3 {
            return Err(Error::Validation(format!(
                "echo needs exactly three pulses, found {}",
                self.pulses.len()
            )));
        }
        for (i, (p, want)) in self.pulses.iter().zip(expected).enumerate() {
            if p.angle != want {
                return Err(Error::Validation(format!(
                    "pulse {} has angle {}, expected {want}",
                    i + 1,
                    p.angle
                )));
            }
            if !(p.duration_s > 0.0) {
                return Err(Error::Validation(format!("pulse {} has non-positive duration", i + 1)));
            }
            if p.channels.is_empty() || p.channels.len() != p.phases_rad.len() {
                return Err(Error::Validation(format!(
                    "pulse {} needs one phase per channel",
                    i + 1
                )));
            }
            if p.channels.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::Validation(format!(
                    "pulse {} channels must be ascending and distinct",
                    i + 1
                )));
            }
            if p.channels.iter().any(|&c| !(1..=4).contains(&c)) {
                return Err(Error::Validation(format!("pulse {} uses a channel outside 1..4", i + 1)));
            }
            if p.phases_rad.iter().any(|&ph| !(0.0..TAU).contains(&ph)) {
                return Err(Error::Validation(format!("pulse {} has a phase outside [0, 2pi)", i + 1)));
            }
        }
        let timing_tol = 1e-12 * self.tau_s;
        for (i, w) in self.pulses.windows(2).enumerate() {
            if w[0].end_s() > w[1].start_s + timing_tol {
                return Err(Error::InvalidTiming(format!(
                    "pulse {} ends at {:e} s after pulse {} starts at {:e} s",
                    i + 1,
                    w[0].end_s(),
                    i + 2,
                    w[1].start_s
                )));
            }
        }
        let [first, pi, last] = [&self.pulses[0], &self.pulses[1], &self.pulses[2]];
        if (pi.midpoint_s() - self.tau_s / 2.0).abs() > timing_tol {
            return Err(Error::InvalidTiming(format!(
                "pi pulse centered at {:e} s, expected tau/2 = {:e} s",
                pi.midpoint_s(),
                self.tau_s / 2.0
            )));
        }
        let window_mid = (first.end_s() + last.start_s) / 2.0;
        if (pi.midpoint_s() - window_mid).abs() > timing_tol {
            return Err(Error::InvalidTiming(
                "pi pulse is not centered between the pi/2 pulses".into(),
            ));
        }
        if !(first.channels == pi.channels && pi.channels == last.channels) {
            return Err(Error::Validation("all three pulses must fire the same channels".into()));
        }

        match self.mode {
            SequenceMode::SingleFrequency(axis) => {
                let want = assignment.channel_for(axis);
                if first.channels != [want] {
                    return Err(Error::Validation(format!(
                        "single-frequency {axis} program must fire channel {want} only"
                    )));
                }
            }
            SequenceMode::MultiFrequency(component) => {
                if first.channels != [1, 2, 3, 4] {
                    return Err(Error::Validation(
                        "multi-frequency program must fire all four channels".into(),
                    ));
                }
                let pattern = sign_pattern(component);
                for &ch in &first.channels {
                    let axis = assignment.axis_of(ch).expect("channel in range");
                    let rel = phase_difference(
                        last.phase_of(ch).unwrap(),
                        first.phase_of(ch).unwrap(),
                    );
                    let want = if pattern.sign(axis) < 0 { PI } else { 0.0 };
                    if phase_difference(rel, want).abs() > PHASE_TOL {
                        return Err(Error::Validation(format!(
                            "multi:{component} readout phase on channel {ch} ({axis}) must be first phase + {}",
                            if want == 0.0 { "0" } else { "pi" }
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Readout-pulse phase relative to the first pulse for every driven
    /// axis; `None` for axes this program leaves alone.
    pub fn relative_readout_phases(&self, assignment: &ChannelAssignment) -> [Option<f64>; 4] {
        let mut out = [None; 4];
        if let (Some(first), Some(last)) = (self.pulses.first(), self.pulses.last()) {
            for &ch in &first.channels {
                if let (Some(axis), Some(a), Some(b)) =
                    (assignment.axis_of(ch), last.phase_of(ch), first.phase_of(ch))
                {
                    out[axis.index()] = Some(phase_difference(a, b));
                }
            }
        }
        out
    }

    /// `+1` / `-1` readout sign per driven axis when the relative phase is
    /// 0 or pi; `None` when undriven or not a pure flip.
    pub fn readout_signs(&self, assignment: &ChannelAssignment) -> [Option<i8>; 4] {
        self.relative_readout_phases(assignment).map(|rel| {
            rel.and_then(|r| {
                if r.abs() <= PHASE_TOL {
                    Some(1)
                } else if (r.abs() - PI).abs() <= PHASE_TOL {
                    Some(-1)
                } else {
                    None
                }
            })
        })
    }
}

/// Emits the three-pulse echo for `mode`.
///
/// Pulses are resonant at `drive.rabi_frequency_hz`: the first pi/2 starts
/// at 0, the pi pulse is centered at `tau/2`, and the last pi/2 ends at `tau`.
/// In multi-frequency mode the readout pulse is phase-inverted on the axes
/// the component's sign pattern flips.
pub fn build_echo_sequence(
    mode: SequenceMode,
    tau_s: f64,
    drive: &DriveConfig<f64>,
    assignment: &ChannelAssignment,
) -> Result<SequenceProgram> {
    if !(tau_s > 0.0) {
        return Err(Error::InvalidTiming("tau must be positive".into()));
    }
    if !(drive.rabi_frequency_hz > 0.0) {
        return Err(Error::InvalidConfig("Rabi frequency must be positive".into()));
    }
    let d90 = DriveConfig::pulse_duration(drive.rabi_frequency_hz, FRAC_PI_2);
    let d180 = DriveConfig::pulse_duration(drive.rabi_frequency_hz, PI);
    let pi_start = tau_s / 2.0 - d180 / 2.0;
    if d90 > pi_start {
        return Err(Error::InvalidTiming(format!(
            "tau = {tau_s:e} s is shorter than two pi pulses ({:e} s)",
            2.0 * d180
        )));
    }

    let (channels, flips): (Vec<ChannelId>, Vec<bool>) = match mode {
        SequenceMode::SingleFrequency(axis) => (vec![assignment.channel_for(axis)], vec![false]),
        SequenceMode::MultiFrequency(component) => {
            let pattern = sign_pattern(component);
            (1..=4)
                .map(|ch| {
                    let axis = assignment.axis_of(ch).expect("channel in range");
                    (ch, pattern.sign(axis) < 0)
                })
                .unzip()
        }
    };
    let zeros = vec![0.0; channels.len()];
    let readout: Vec<f64> = flips.iter().map(|&f| if f { PI } else { 0.0 }).collect();
    let pulses = vec![
        PulseEvent {
            start_s: 0.0,
            duration_s: d90,
            angle: PulseAngle::HalfPi,
            channels: channels.clone(),
            phases_rad: zeros.clone(),
        },
        PulseEvent {
            start_s: pi_start,
            duration_s: d180,
            angle: PulseAngle::Pi,
            channels: channels.clone(),
            phases_rad: zeros,
        },
        PulseEvent {
            start_s: tau_s - d90,
            duration_s: d90,
            angle: PulseAngle::HalfPi,
            channels,
            phases_rad: readout,
        },
    ];
    let program = SequenceProgram {
        tau_s,
        mode,
        pulses,
    };
    program.validate(assignment)?;
    Ok(program)
}

/// Canonical text form.
pub fn serialize_sequence(program: &SequenceProgram) -> String {
    let mut pulses: Vec<&PulseEvent> = program.pulses.iter().collect();
    pulses.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    let mut out = String::new();
    let _ = writeln!(out, "seq v1 tau={:e} mode={}", program.tau_s, program.mode);
    for p in pulses {
        let mut pairs: Vec<(ChannelId, f64)> =
            p.channels.iter().copied().zip(p.phases_rad.iter().copied()).collect();
        pairs.sort_by_key(|&(c, _)| c);
        let ch: Vec<String> = pairs.iter().map(|(c, _)| c.to_string()).collect();
        let ph: Vec<String> = pairs.iter().map(|(_, v)| format!("{v}")).collect();
        let _ = writeln!(
            out,
            "pulse t={:e} dur={:e} angle={} ch={} phase={}",
            p.start_s,
            p.duration_s,
            p.angle,
            ch.join(","),
            ph.join(",")
        );
    }
    out
}

/// A parsed program plus any non-fatal normalizations applied on load.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedSequence {
    pub program: SequenceProgram,
    pub warnings: Vec<String>,
}

/// Parses and validates a sequence file, assuming channel `n` drives NVn.
pub fn parse_sequence(text: &str) -> Result<ParsedSequence> {
    parse_sequence_with(text, &ChannelAssignment::identity())
}

pub fn parse_sequence_with(text: &str, assignment: &ChannelAssignment) -> Result<ParsedSequence> {
    let mut header: Option<(f64, SequenceMode)> = None;
    let mut pulses = Vec::new();
    let mut warnings = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let content = raw.split('#').next().unwrap_or("");
        if content.trim().is_empty() {
            continue;
        }
        let tokens = tokenize(content);
        let (keyword, kw_col) = tokens[0];
        match keyword {
            "seq" => {
                if header.is_some() {
                    return Err(parse_err(line_no, kw_col, "duplicate header"));
                }
                if !pulses.is_empty() {
                    return Err(parse_err(line_no, kw_col, "header must precede pulses"));
                }
                match tokens.get(1) {
                    Some(&("v1", _)) => {}
                    Some(&(other, col)) => {
                        return Err(parse_err(line_no, col, &format!("unsupported version '{other}'")))
                    }
                    None => return Err(parse_err(line_no, kw_col, "missing version")),
                }
                let fields = key_values(&tokens[2..], line_no, &["tau", "mode"])?;
                let tau = parse_f64(fields[0], line_no)?;
                let (mode_str, mode_col) = fields[1];
                let mode = mode_str
                    .parse::<SequenceMode>()
                    .map_err(|m| parse_err(line_no, mode_col, &m))?;
                header = Some((tau, mode));
            }
            "pulse" => {
                if header.is_none() {
                    return Err(parse_err(line_no, kw_col, "pulse before header"));
                }
                let fields =
                    key_values(&tokens[1..], line_no, &["t", "dur", "angle", "ch", "phase"])?;
                let start_s = parse_f64(fields[0], line_no)?;
                let duration_s = parse_f64(fields[1], line_no)?;
                let (angle_str, angle_col) = fields[2];
                let angle = angle_str
                    .parse::<PulseAngle>()
                    .map_err(|m| parse_err(line_no, angle_col, &m))?;
                let channels = parse_list(fields[3], line_no, |s| s.parse::<ChannelId>().ok())?;
                let phases = parse_list(fields[4], line_no, |s| {
                    s.parse::<f64>().ok().filter(|v| v.is_finite())
                })?;
                if channels.len() != phases.len() {
                    return Err(parse_err(
                        line_no,
                        fields[4].1,
                        &format!("{} channels but {} phases", channels.len(), phases.len()),
                    ));
                }
                let mut pairs: Vec<(ChannelId, f64)> = Vec::with_capacity(channels.len());
                for (c, ph) in channels.into_iter().zip(phases) {
                    let wrapped = wrap_phase(ph);
                    if wrapped != ph {
                        warnings.push(format!(
                            "line {line_no}: phase {ph} rad on channel {c} normalized to {wrapped} rad"
                        ));
                    }
                    pairs.push((c, wrapped));
                }
                pairs.sort_by_key(|&(c, _)| c);
                pulses.push(PulseEvent {
                    start_s,
                    duration_s,
                    angle,
                    channels: pairs.iter().map(|&(c, _)| c).collect(),
                    phases_rad: pairs.iter().map(|&(_, p)| p).collect(),
                });
            }
            other => {
                return Err(parse_err(line_no, kw_col, &format!("unknown record '{other}'")));
            }
        }
    }

    let (tau_s, mode) = header.ok_or_else(|| parse_err(1, 1, "missing 'seq v1' header"))?;
    pulses.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    let program = SequenceProgram {
        tau_s,
        mode,
        pulses,
    };
    program.validate(assignment)?;
    Ok(ParsedSequence { program, warnings })
}

fn parse_err(line: usize, column: usize, message: &str) -> Error {
    Error::Parse {
        line,
        column,
        message: message.to_string(),
    }
}

/// Whitespace-separated tokens with 1-based columns.
fn tokenize(line: &str) -> Vec<(&str, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in line.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                out.push((&line[s..i], line[..s].chars().count() + 1));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push((&line[s..], line[..s].chars().count() + 1));
    }
    out
}

/// Values of `keys` (each exactly once, any order), with value columns.
fn key_values<'a>(
    tokens: &[(&'a str, usize)],
    line: usize,
    keys: &[&str],
) -> Result<Vec<(&'a str, usize)>> {
    let mut found: Vec<Option<(&'a str, usize)>> = vec![None; keys.len()];
    for &(tok, col) in tokens {
        let (key, value) = tok
            .split_once('=')
            .ok_or_else(|| parse_err(line, col, &format!("expected key=value, found '{tok}'")))?;
        let slot = keys
            .iter()
            .position(|&k| k == key)
            .ok_or_else(|| parse_err(line, col, &format!("unknown key '{key}'")))?;
        if found[slot].is_some() {
            return Err(parse_err(line, col, &format!("duplicate key '{key}'")));
        }
        found[slot] = Some((value, col + key.chars().count() + 1));
    }
    found
        .into_iter()
        .zip(keys)
        .map(|(v, k)| {
            v.ok_or_else(|| parse_err(line, tokens.last().map_or(1, |t| t.1), &format!("missing key '{k}'")))
        })
        .collect()
}

fn parse_f64((value, col): (&str, usize), line: usize) -> Result<f64> {
    value
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| parse_err(line, col, &format!("invalid number '{value}'")))
}

fn parse_list<T>(
    (value, col): (&str, usize),
    line: usize,
    item: impl Fn(&str) -> Option<T>,
) -> Result<Vec<T>> {
    let mut out = Vec::new();
    let mut offset = 0;
    for part in value.split(',') {
        let parsed = item(part)
            .ok_or_else(|| parse_err(line, col + offset, &format!("invalid list item '{part}'")))?;
        out.push(parsed);
        offset += part.chars().count() + 1;
    }
    Ok(out)
}

/// One reason a program cannot be played on the switch topology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyViolation {
    /// 1-based pulse index.
    pub pulse: usize,
    pub message: String,
}

/// Checks a program against the two-source IQ hardware: each source emits
/// its two channels as sidebands through either the I ("x") or the Q ("y")
/// switch, so within one pulse the two channels of a source can differ only
/// by 0 or pi. With `strict`, phases must also be multiples of pi/2.
///
/// Advisory: an empty list means realizable, but nothing stops simulating an
/// unrealizable program.
pub fn validate_against_topology(
    program: &SequenceProgram,
    assignment: &ChannelAssignment,
    strict: bool,
) -> Vec<TopologyViolation> {
    let mut out = Vec::new();
    for (i, pulse) in program.pulses.iter().enumerate() {
        let idx = i + 1;
        if strict {
            for (&ch, &ph) in pulse.channels.iter().zip(&pulse.phases_rad) {
                let quarter = ph / FRAC_PI_2;
                if (quarter - quarter.round()).abs() > 1e-9 {
                    out.push(TopologyViolation {
                        pulse: idx,
                        message: format!(
                            "channel {ch} phase {ph} rad is not a multiple of pi/2 (x/y switch paths only)"
                        ),
                    });
                }
            }
        }
        for pair in assignment.source_pairs() {
            let phases: Vec<f64> = pair.iter().filter_map(|&c| pulse.phase_of(c)).collect();
            if phases.len() == 2 {
                let d = phase_difference(phases[0], phases[1]);
                let along_axis = d.abs() <= 1e-9 || (d.abs() - PI).abs() <= 1e-9;
                if !along_axis {
                    out.push(TopologyViolation {
                        pulse: idx,
                        message: format!(
                            "channels {} and {} share a source but need phases {} and {} rad, which require independent I and Q settings",
                            pair[0], pair[1], phases[0], phases[1]
                        ),
                    });
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn drive() -> DriveConfig<f64> {
        DriveConfig::on_resonance(2.5e6, 0.0, 0.0)
    }

    fn multi(c: Component) -> SequenceProgram {
        build_echo_sequence(
            SequenceMode::MultiFrequency(c),
            10e-6,
            &drive(),
            &ChannelAssignment::identity(),
        )
        .unwrap()
    }

    #[test]
    fn multi_x_flips_nv2_and_nv4() {
        let p = multi(Component::X);
        assert_eq!(p.pulses[2].phases_rad, vec![0.0, PI, 0.0, PI]);
        assert_eq!(p.pulses[0].phases_rad, vec![0.0; 4]);
    }

    #[test]
    fn multi_z_flips_nv2_and_nv3() {
        let p = multi(Component::Z);
        assert_eq!(
            p.readout_signs(&ChannelAssignment::identity()),
            [Some(1), Some(-1), Some(-1), Some(1)]
        );
    }

    #[test]
    fn flips_compose_with_sign_pattern_to_identity() {
        for c in Component::ALL {
            let signs = multi(c).readout_signs(&ChannelAssignment::identity());
            let pattern = sign_pattern(c);
            for a in Axis::ALL {
                assert_eq!(signs[a.index()].unwrap() * pattern.sign(a), 1);
            }
        }
    }

    #[test]
    fn single_frequency_uses_one_channel() {
        let p = build_echo_sequence(
            SequenceMode::SingleFrequency(Axis::Nv1),
            10e-6,
            &drive(),
            &ChannelAssignment::identity(),
        )
        .unwrap();
        for pulse in &p.pulses {
            assert_eq!(pulse.channels, vec![1]);
        }
    }

    #[test]
    fn single_frequency_follows_channel_map() {
        let a = ChannelAssignment::new(
            [
                Channel { carrier_hz: 2.72e9, axis: Axis::Nv3 },
                Channel { carrier_hz: 2.80e9, axis: Axis::Nv1 },
                Channel { carrier_hz: 2.83e9, axis: Axis::Nv2 },
                Channel { carrier_hz: 2.86e9, axis: Axis::Nv4 },
            ],
            5e6,
        )
        .unwrap();
        let p = build_echo_sequence(SequenceMode::SingleFrequency(Axis::Nv1), 10e-6, &drive(), &a).unwrap();
        assert_eq!(p.pulses[0].channels, vec![2]);
    }

    #[test]
    fn timing_is_symmetric() {
        let p = multi(Component::Y);
        let mid = (p.pulses[0].end_s() + p.pulses[2].start_s) / 2.0;
        assert!((p.pulses[1].midpoint_s() - mid).abs() <= 1e-12 * p.tau_s);
        assert!((p.pulses[1].midpoint_s() - 5e-6).abs() <= 1e-12 * p.tau_s);
    }

    #[test]
    fn short_tau_is_rejected() {
        let r = build_echo_sequence(
            SequenceMode::MultiFrequency(Component::X),
            300e-9,
            &drive(),
            &ChannelAssignment::identity(),
        );
        assert!(matches!(r, Err(Error::InvalidTiming(_))));
    }

    #[test]
    fn round_trip_is_byte_identical() {
        for c in Component::ALL {
            let p = multi(c);
            let text = serialize_sequence(&p);
            let parsed = parse_sequence(&text).unwrap();
            assert!(parsed.warnings.is_empty());
            assert_eq!(parsed.program, p);
            assert_eq!(serialize_sequence(&parsed.program), text);
        }
    }

    #[test]
    fn overlapping_pulses_fail_timing() {
        let text = "seq v1 tau=1e-5 mode=single:NV1\n\
                    pulse t=0 dur=5e-6 angle=pi/2 ch=1 phase=0\n\
                    pulse t=4.9e-6 dur=2e-7 angle=pi ch=1 phase=0\n\
                    pulse t=9.9e-6 dur=1e-7 angle=pi/2 ch=1 phase=0\n";
        assert!(matches!(parse_sequence(text), Err(Error::InvalidTiming(_))));
    }

    #[test]
    fn phase_is_normalized_with_warning() {
        let text = "# single-axis echo\n\
                    seq v1 tau=1e-5 mode=single:NV2\n\
                    pulse t=0 dur=1e-7 angle=pi/2 ch=2 phase=7.0  # wraps\n\
                    pulse t=4.9e-6 dur=2e-7 angle=pi ch=2 phase=0\n\
                    pulse t=9.9e-6 dur=1e-7 angle=pi/2 ch=2 phase=0\n";
        let parsed = parse_sequence(text).unwrap();
        let ph = parsed.program.pulses[0].phases_rad[0];
        assert!((ph - (7.0 - 2.0 * PI)).abs() < 1e-15);
        assert!((ph - 0.716_814_692_820_413_8).abs() < 1e-15);
        assert_eq!(parsed.warnings.len(), 1);
    }

    #[test]
    fn parse_errors_carry_position() {
        let text = "seq v1 tau=1e-5 mode=multi:w\n";
        match parse_sequence(text) {
            Err(Error::Parse { line, column, .. }) => {
                assert_eq!(line, 1);
                assert_eq!(column, 22);
            }
            other => panic!("unexpected {other:?}"),
        }
        let text = "seq v1 tau=1e-5 mode=multi:x\npulse t=0 dur=abc angle=pi/2 ch=1 phase=0\n";
        match parse_sequence(text) {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (2, 15)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_multi_flip_is_a_validation_error() {
        let mut p = multi(Component::X);
        p.pulses[2].phases_rad = vec![0.0, 0.0, PI, PI];
        let text = serialize_sequence(&p);
        assert!(matches!(parse_sequence(&text), Err(Error::Validation(_))));
    }

    #[test]
    fn component_programs_are_realizable() {
        for c in Component::ALL {
            assert!(validate_against_topology(&multi(c), &ChannelAssignment::identity(), true).is_empty());
        }
        for a in Axis::ALL {
            let p = build_echo_sequence(
                SequenceMode::SingleFrequency(a),
                10e-6,
                &drive(),
                &ChannelAssignment::identity(),
            )
            .unwrap();
            assert!(validate_against_topology(&p, &ChannelAssignment::identity(), true).is_empty());
        }
    }

    #[test]
    fn four_distinct_phases_violate_topology() {
        let mut p = multi(Component::X);
        p.pulses[1].phases_rad = vec![0.0, FRAC_PI_2, PI, 3.0 * FRAC_PI_2];
        let v = validate_against_topology(&p, &ChannelAssignment::identity(), true);
        assert_eq!(v.len(), 2);
        assert!(v.iter().all(|x| x.pulse == 2));
    }

    #[test]
    fn arbitrary_phase_only_flagged_when_strict() {
        let mut p = multi(Component::X);
        p.pulses[0].phases_rad = vec![0.3, 0.3, 0.3, 0.3];
        p.pulses[2].phases_rad = vec![0.3, 0.3 + PI, 0.3, 0.3 + PI];
        assert!(p.validate(&ChannelAssignment::identity()).is_ok());
        assert!(validate_against_topology(&p, &ChannelAssignment::identity(), false).is_empty());
        assert!(!validate_against_topology(&p, &ChannelAssignment::identity(), true).is_empty());
    }

    #[test]
    fn channel_margin_is_enforced() {
        let f = [2.720e9, 2.806e9, 2.826e9, 2.862e9];
        assert!(ChannelAssignment::from_frequencies(f, ChannelAssignment::default_margin(2.5e6)).is_err());
        assert!(ChannelAssignment::from_frequencies(f, 5.0 * 2.5e6).is_ok());
    }
}
