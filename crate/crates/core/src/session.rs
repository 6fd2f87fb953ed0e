//! Domain types shared by every pipeline stage.
//!
//! Timestamps are integer nanoseconds so alignment and splitting are exact
//! and order-stable. All types are immutable once constructed.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(u64);

impl Timestamp {
    pub const fn from_nanos(nanos: u64) -> Self {
        Timestamp(nanos)
    }

    pub fn from_secs_f64(secs: f64) -> Self {
        Timestamp((secs * 1e9).round().max(0.0) as u64)
    }

    pub const fn nanos(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 * 1e-9
    }

    /// Shift by a signed offset, saturating at zero and `u64::MAX`.
    pub fn offset(self, delta_ns: i64) -> Self {
        Timestamp(self.0.saturating_add_signed(delta_ns))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ns", self.0)
    }
}

/// Exact signed duration `b - a` in nanoseconds.
pub fn duration_between(a: Timestamp, b: Timestamp) -> Result<i64> {
    let d = b.0 as i128 - a.0 as i128;
    i64::try_from(d).map_err(|_| Error::TimestampOverflow { a: a.0, b: b.0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelMeta {
    pub name: String,
    #[serde(rename = "pos")]
    pub position: [f64; 3],
}

impl ChannelMeta {
    pub fn new(name: impl Into<String>, position: [f64; 3]) -> Result<Self> {
        let name = name.into();
        let norm = position.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::Data(format!(
                "channel {name}: position norm {norm} is not 1"
            )));
        }
        Ok(ChannelMeta { name, position })
    }

    /// Great-circle distance on the unit sphere.
    pub fn angular_distance(&self, other: &ChannelMeta) -> f64 {
        let dot: f64 = self
            .position
            .iter()
            .zip(other.position.iter())
            .map(|(a, b)| a * b)
            .sum();
        dot.clamp(-1.0, 1.0).acos()
    }
}

/// Electrode names of the 16-channel montage, in recording order.
pub const MONTAGE_16: [&str; 16] = [
    "Fp1", "Fp2", "F3", "F4", "F7", "F8", "C3", "C4", "T3", "T4", "T5", "T6", "P3", "P4", "O1",
    "O2",
];

// Idealized spherical coordinates (polar angle from Cz, azimuth), in degrees.
// Negative polar angle = left hemisphere. x points to the right ear, y to the nasion.
const MONTAGE_16_SPHERICAL: [(f64, f64); 16] = [
    (-90.0, -72.0),
    (90.0, 72.0),
    (-60.0, -51.0),
    (60.0, 51.0),
    (-90.0, -36.0),
    (90.0, 36.0),
    (-45.0, 0.0),
    (45.0, 0.0),
    (-90.0, 0.0),
    (90.0, 0.0),
    (-90.0, 36.0),
    (90.0, -36.0),
    (-60.0, 51.0),
    (60.0, -51.0),
    (-90.0, 72.0),
    (90.0, -72.0),
];

fn spherical_to_unit(theta_deg: f64, phi_deg: f64) -> [f64; 3] {
    let (t, p) = (theta_deg.to_radians(), phi_deg.to_radians());
    let v = [t.sin() * p.cos(), t.sin() * p.sin(), t.cos()];
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// The built-in 10-20 montage with unit-sphere positions.
pub fn standard_montage() -> Vec<ChannelMeta> {
    MONTAGE_16
        .iter()
        .zip(MONTAGE_16_SPHERICAL.iter())
        .map(|(name, &(t, p))| ChannelMeta {
            name: (*name).to_string(),
            position: spherical_to_unit(t, p),
        })
        .collect()
}

/// A montage of `n` channels: the standard 16 first, then extra points on a
/// Fibonacci lattice over the upper hemisphere.
pub fn montage_of_size(n: usize) -> Vec<ChannelMeta> {
    let mut m = standard_montage();
    m.truncate(n);
    let extra = n.saturating_sub(m.len());
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    for i in 0..extra {
        let z = 1.0 - (i as f64 + 0.5) / extra as f64;
        let r = (1.0 - z * z).sqrt();
        let a = golden * i as f64;
        m.push(ChannelMeta {
            name: format!("X{}", i + 17),
            position: [r * a.cos(), r * a.sin(), z],
        });
    }
    m
}

pub fn check_montage(channels: &[ChannelMeta]) -> Result<()> {
    if channels.len() < 2 {
        return Err(Error::Montage(format!(
            "need at least 2 channels, got {}",
            channels.len()
        )));
    }
    for (i, ch) in channels.iter().enumerate() {
        ChannelMeta::new(ch.name.clone(), ch.position)?;
        if channels[..i].iter().any(|o| o.name == ch.name) {
            return Err(Error::Montage(format!("duplicate channel name {}", ch.name)));
        }
    }
    Ok(())
}

/// Multichannel recording: one row of samples (microvolts) per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct EegRecording {
    channels: Vec<ChannelMeta>,
    timestamps: Vec<Timestamp>,
    samples: Vec<Vec<f64>>,
    sample_rate_hz: f64,
}

impl EegRecording {
    /// Checks dimensions and the sample rate. Timestamp monotonicity is
    /// reported by [`validate_recording`] rather than rejected here.
    pub fn new(
        channels: Vec<ChannelMeta>,
        timestamps: Vec<Timestamp>,
        samples: Vec<Vec<f64>>,
        sample_rate_hz: f64,
    ) -> Result<Self> {
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(Error::Data(format!("sample rate {sample_rate_hz} must be > 0")));
        }
        if samples.len() != channels.len() {
            return Err(Error::Shape(format!(
                "{} sample rows for {} channels",
                samples.len(),
                channels.len()
            )));
        }
        if let Some((i, row)) = samples
            .iter()
            .enumerate()
            .find(|(_, r)| r.len() != timestamps.len())
        {
            return Err(Error::Shape(format!(
                "channel {} has {} samples, expected {}",
                channels[i].name,
                row.len(),
                timestamps.len()
            )));
        }
        Ok(EegRecording {
            channels,
            timestamps,
            samples,
            sample_rate_hz,
        })
    }

    pub fn channels(&self) -> &[ChannelMeta] {
        &self.channels
    }

    pub fn channel_names(&self) -> Vec<&str> {
        self.channels.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c.name == name)
    }

    pub fn timestamps(&self) -> &[Timestamp] {
        &self.timestamps
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn channel(&self, idx: usize) -> &[f64] {
        &self.samples[idx]
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn n_samples(&self) -> usize {
        self.timestamps.len()
    }

    /// Same metadata, new sample matrix.
    pub fn with_samples(&self, samples: Vec<Vec<f64>>) -> Result<Self> {
        EegRecording::new(
            self.channels.clone(),
            self.timestamps.clone(),
            samples,
            self.sample_rate_hz,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JoystickSample {
    pub t: Timestamp,
    pub v_x: f64,
    pub omega_z: f64,
}

impl JoystickSample {
    /// Rejects commands outside [-1, 1]; values are never clamped.
    pub fn new(t: Timestamp, v_x: f64, omega_z: f64) -> Result<Self> {
        if !(v_x.abs() <= 1.0) || !(omega_z.abs() <= 1.0) {
            return Err(Error::Data(format!(
                "joystick command ({v_x}, {omega_z}) at {t} outside [-1, 1]"
            )));
        }
        Ok(JoystickSample { t, v_x, omega_z })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum CommandLabel {
    Forward = 0,
    Reverse = 1,
    Left = 2,
    Right = 3,
    Stop = 4,
}

impl CommandLabel {
    pub const COUNT: usize = 5;
    pub const ALL: [CommandLabel; 5] = [
        CommandLabel::Forward,
        CommandLabel::Reverse,
        CommandLabel::Left,
        CommandLabel::Right,
        CommandLabel::Stop,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            CommandLabel::Forward => "forward",
            CommandLabel::Reverse => "reverse",
            CommandLabel::Left => "left",
            CommandLabel::Right => "right",
            CommandLabel::Stop => "stop",
        }
    }
}

impl fmt::Display for CommandLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Labelling horizon in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct Horizon(u32);

impl Horizon {
    pub const VALID_MS: [u32; 9] = [0, 300, 400, 500, 600, 700, 800, 900, 1000];

    pub fn new(delta_ms: u32) -> Result<Self> {
        if Self::VALID_MS.contains(&delta_ms) {
            Ok(Horizon(delta_ms))
        } else {
            Err(Error::Config(format!(
                "horizon {delta_ms} ms not in {:?}",
                Self::VALID_MS
            )))
        }
    }

    pub fn all() -> Vec<Horizon> {
        Self::VALID_MS.iter().map(|&d| Horizon(d)).collect()
    }

    pub fn ms(self) -> u32 {
        self.0
    }

    pub fn nanos(self) -> i64 {
        self.0 as i64 * 1_000_000
    }
}

impl TryFrom<u32> for Horizon {
    type Error = Error;
    fn try_from(v: u32) -> Result<Self> {
        Horizon::new(v)
    }
}

impl From<Horizon> for u32 {
    fn from(h: Horizon) -> u32 {
        h.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionManifest {
    pub format_version: u32,
    pub subject_id: String,
    pub session_id: String,
    pub sample_rate_hz: f64,
    #[serde(rename = "channels")]
    pub montage: Vec<ChannelMeta>,
    #[serde(default)]
    pub reserved_streams: Vec<String>,
}

impl SessionManifest {
    pub const FORMAT_VERSION: u32 = 1;

    pub fn validate(&self) -> Result<()> {
        if self.format_version != Self::FORMAT_VERSION {
            return Err(Error::Data(format!(
                "unsupported manifest format_version {}",
                self.format_version
            )));
        }
        if self.subject_id.is_empty() || self.session_id.is_empty() {
            return Err(Error::Data("subject_id and session_id must be non-empty".into()));
        }
        if !(self.sample_rate_hz > 0.0) {
            return Err(Error::Data(format!(
                "sample_rate_hz {} must be > 0",
                self.sample_rate_hz
            )));
        }
        check_montage(&self.montage)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateDrift {
    pub median_gap_ns: i64,
    pub nominal_gap_ns: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    /// Indices `i` where `timestamps[i] <= timestamps[i - 1]`.
    pub monotonicity_violations: Vec<usize>,
    /// (channel name, sample index) of NaN/Inf samples.
    pub non_finite: Vec<(String, usize)>,
    pub rate_drift: Option<RateDrift>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.monotonicity_violations.is_empty()
            && self.non_finite.is_empty()
            && self.rate_drift.is_none()
    }
}

const RATE_DRIFT_TOLERANCE: f64 = 0.01;

pub fn validate_recording(rec: &EegRecording) -> ValidationReport {
    let ts = rec.timestamps();
    let monotonicity_violations = (1..ts.len()).filter(|&i| ts[i] <= ts[i - 1]).collect();

    let non_finite = rec
        .samples()
        .iter()
        .enumerate()
        .flat_map(|(c, row)| {
            row.iter()
                .enumerate()
                .filter(|(_, v)| !v.is_finite())
                .map(move |(i, _)| (rec.channels()[c].name.clone(), i))
        })
        .collect();

    let rate_drift = if ts.len() >= 2 {
        let mut gaps: Vec<i64> = ts
            .windows(2)
            .map(|w| w[1].nanos() as i64 - w[0].nanos() as i64)
            .collect();
        gaps.sort_unstable();
        let median_gap_ns = gaps[gaps.len() / 2];
        let nominal_gap_ns = 1e9 / rec.sample_rate_hz();
        let relative_error = (median_gap_ns as f64 - nominal_gap_ns).abs() / nominal_gap_ns;
        (relative_error > RATE_DRIFT_TOLERANCE).then_some(RateDrift {
            median_gap_ns,
            nominal_gap_ns,
            relative_error,
        })
    } else {
        None
    };

    ValidationReport {
        monotonicity_violations,
        non_finite,
        rate_drift,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp_recording(gap_ns: u64, n: usize, rate: f64) -> EegRecording {
        let ts = (0..n as u64).map(|i| Timestamp::from_nanos(i * gap_ns)).collect();
        let montage = montage_of_size(2);
        let samples = vec![vec![0.0; n], (0..n).map(|i| i as f64).collect()];
        EegRecording::new(montage, ts, samples, rate).unwrap()
    }

    #[test]
    fn duration_examples() {
        let t = Timestamp::from_nanos;
        assert_eq!(duration_between(t(0), t(8_000_000)).unwrap(), 8_000_000);
        assert_eq!(duration_between(t(42), t(42)).unwrap(), 0);
        assert_eq!(
            duration_between(t(1_000_000_000), t(300_000_000)).unwrap(),
            -700_000_000
        );
        assert!(duration_between(t(0), t(u64::MAX)).is_err());
    }

    #[test]
    fn montage_positions_are_unit_and_unique() {
        let m = standard_montage();
        assert_eq!(m.len(), 16);
        check_montage(&m).unwrap();
        check_montage(&montage_of_size(24)).unwrap();
        // Left/right mirror pairs.
        let c3 = &m[6].position;
        let c4 = &m[7].position;
        assert!((c3[0] + c4[0]).abs() < 1e-12 && (c3[2] - c4[2]).abs() < 1e-12);
    }

    #[test]
    fn clean_recording_has_empty_report() {
        let rec = ramp_recording(8_000_000, 500, 125.0);
        assert!(validate_recording(&rec).is_empty());
    }

    #[test]
    fn repeated_timestamp_is_reported() {
        let mut ts: Vec<Timestamp> = (0..10u64).map(|i| Timestamp::from_nanos(i * 8_000_000)).collect();
        ts[5] = ts[4];
        let rec = EegRecording::new(montage_of_size(2), ts, vec![vec![0.0; 10]; 2], 125.0).unwrap();
        let rep = validate_recording(&rec);
        assert_eq!(rep.monotonicity_violations, vec![5]);
    }

    #[test]
    fn drift_flagged_for_9ms_gaps() {
        let rec = ramp_recording(9_000_000, 200, 125.0);
        let drift = validate_recording(&rec).rate_drift.expect("drift expected");
        assert_eq!(drift.median_gap_ns, 9_000_000);
        assert!((drift.relative_error - 0.125).abs() < 1e-12);
    }

    #[test]
    fn non_finite_samples_reported() {
        let mut rec = ramp_recording(8_000_000, 20, 125.0);
        let mut s = rec.samples().to_vec();
        s[1][3] = f64::NAN;
        s[0][7] = f64::INFINITY;
        rec = rec.with_samples(s).unwrap();
        let rep = validate_recording(&rec);
        assert_eq!(rep.non_finite.len(), 2);
    }

    #[test]
    fn joystick_rejects_out_of_range() {
        assert!(JoystickSample::new(Timestamp::from_nanos(0), 1.7, 0.0).is_err());
        assert!(JoystickSample::new(Timestamp::from_nanos(0), 0.0, f64::NAN).is_err());
        assert!(JoystickSample::new(Timestamp::from_nanos(0), -1.0, 1.0).is_ok());
    }

    #[test]
    fn horizon_membership() {
        assert!(Horizon::new(300).is_ok());
        assert!(Horizon::new(350).is_err());
        assert_eq!(Horizon::all().len(), 9);
        let h: Horizon = serde_json::from_str("700").unwrap();
        assert_eq!(h.ms(), 700);
        assert!(serde_json::from_str::<Horizon>("1200").is_err());
    }

    #[test]
    fn label_codes_round_trip() {
        for l in CommandLabel::ALL {
            assert_eq!(CommandLabel::from_code(l.code()), Some(l));
        }
        assert_eq!(CommandLabel::from_code(5), None);
    }

    proptest! {
        #[test]
        fn duration_is_antisymmetric(a in 0u64..(1u64 << 62), b in 0u64..(1u64 << 62)) {
            let (ta, tb) = (Timestamp::from_nanos(a), Timestamp::from_nanos(b));
            prop_assert_eq!(duration_between(ta, tb).unwrap(), -duration_between(tb, ta).unwrap());
        }

        #[test]
        fn accepted_recordings_satisfy_invariants(gaps in proptest::collection::vec(1u64..20_000_000, 1..200)) {
            let mut t = 0u64;
            let ts: Vec<Timestamp> = std::iter::once(0).chain(gaps.iter().copied()).map(|g| { t += g; Timestamp::from_nanos(t) }).collect();
            let n = ts.len();
            let rec = EegRecording::new(montage_of_size(3), ts, vec![vec![1.0; n]; 3], 125.0).unwrap();
            if validate_recording(&rec).is_empty() {
                prop_assert!(rec.timestamps().windows(2).all(|w| w[0] < w[1]));
                prop_assert!(rec.samples().iter().all(|r| r.len() == n && r.iter().all(|v| v.is_finite())));
                check_montage(rec.channels()).unwrap();
            }
        }
    }
}
