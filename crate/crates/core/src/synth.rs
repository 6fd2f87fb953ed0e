//! Synthetic sessions with a known command schedule.
//!
//! The EEG at time t carries a class sinusoid for the command that becomes
//! active on the joystick at t + label_lag, so decoding is easiest when the
//! labelling horizon matches the lag.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::ingest::{create_file, write_session, SessionDir};
use crate::models::derive_seed;
use crate::session::{
    montage_of_size, CommandLabel, EegRecording, JoystickSample, SessionManifest, Timestamp,
};

/// First EEG timestamp of every synthetic session (2023-11-14T22:13:20Z).
pub const SYNTH_EPOCH_NS: u64 = 1_700_000_000_000_000_000;
pub const JOYSTICK_PERIOD_MS: u64 = 100;
pub const JOYSTICK_MAGNITUDE: f64 = 0.8;
pub const TRUTH_FILE: &str = "truth_labels.csv";

/// Spatially smooth noise sources shared across channels.
const BACKGROUND_SOURCES: usize = 8;
/// Angular width (radians) of each background source's scalp footprint.
const BACKGROUND_WIDTH: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    White,
    #[default]
    Pink,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassFreqs {
    pub forward: f64,
    pub reverse: f64,
    pub left: f64,
    pub right: f64,
    pub stop: f64,
}

impl Default for ClassFreqs {
    fn default() -> Self {
        ClassFreqs { forward: 30.0, reverse: 15.0, left: 10.0, right: 20.0, stop: 5.0 }
    }
}

impl ClassFreqs {
    pub fn get(&self, c: CommandLabel) -> f64 {
        match c {
            CommandLabel::Forward => self.forward,
            CommandLabel::Reverse => self.reverse,
            CommandLabel::Left => self.left,
            CommandLabel::Right => self.right,
            CommandLabel::Stop => self.stop,
        }
    }
}

/// Accepts a number or the string "inf" (noise off).
mod snr_serde {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Snr {
            Num(f64),
            Text(String),
        }
        match Snr::deserialize(d)? {
            Snr::Num(v) => Ok(v),
            Snr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Snr::Text(t) => Err(serde::de::Error::custom(format!("bad snr_db `{t}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    pub n_channels: usize,
    pub class_freqs_hz: ClassFreqs,
    /// Class-signal energy summed over its channel subset, over the noise
    /// power of one channel.
    #[serde(with = "snr_serde")]
    pub snr_db: f64,
    /// Mean dwell per command; dwells are uniform in [0.5, 1.5] times this.
    pub segment_len_s: f64,
    pub noise_model: NoiseModel,
    pub label_lag_ms: f64,
    pub rng_seed: u64,
    /// Channels carrying each class signal, nearest to a random centre.
    pub cluster_size: usize,
    /// Class-signal amplitude of the unit-energy spatial pattern, microvolts.
    pub amplitude_uv: f64,
    /// Share of noise variance coming from the spatially smooth background.
    pub background_fraction: f64,
    /// 50 Hz interference amplitude as a multiple of `amplitude_uv`.
    pub line_noise_factor: Option<f64>,
    /// Channel replaced by a flat zero trace.
    pub dead_channel: Option<String>,
    pub subject_id: String,
    pub session_id: Option<String>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            duration_s: 240.0,
            sample_rate_hz: 125.0,
            n_channels: 16,
            class_freqs_hz: ClassFreqs::default(),
            snr_db: 6.0,
            segment_len_s: 4.0,
            noise_model: NoiseModel::Pink,
            label_lag_ms: 300.0,
            rng_seed: 0,
            cluster_size: 6,
            amplitude_uv: 10.0,
            background_fraction: 0.95,
            line_noise_factor: None,
            dead_channel: None,
            subject_id: "synth".into(),
            session_id: None,
        }
    }
}

/// Samples per class needed by the default split (one per chunk).
const MIN_SAMPLES_PER_CLASS: f64 = 100.0;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("synth: {m}")));
        let nyq = self.sample_rate_hz / 2.0;
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return bad("sample_rate_hz must be positive".into());
        }
        for c in CommandLabel::ALL {
            let f = self.class_freqs_hz.get(c);
            if !(f > 0.0 && f < nyq) {
                return bad(format!("{c} frequency {f} Hz must lie in (0, {nyq})"));
            }
        }
        if self.n_channels < 4 {
            return bad("need at least 4 channels".into());
        }
        if self.cluster_size == 0 || self.cluster_size > self.n_channels {
            return bad(format!("cluster_size must lie in 1..={}", self.n_channels));
        }
        if !(self.segment_len_s >= 0.2) {
            return bad("segment_len_s must be >= 0.2".into());
        }
        if self.duration_s * self.sample_rate_hz / CommandLabel::COUNT as f64 <= MIN_SAMPLES_PER_CLASS
            || !self.duration_s.is_finite()
        {
            return bad(format!(
                "duration {} s too short for {MIN_SAMPLES_PER_CLASS} samples per class",
                self.duration_s
            ));
        }
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return bad("snr_db must be a number or inf".into());
        }
        if !(self.label_lag_ms >= 0.0 && self.label_lag_ms.is_finite()) {
            return bad("label_lag_ms must be >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.background_fraction) {
            return bad("background_fraction must lie in [0, 1]".into());
        }
        if !(self.amplitude_uv > 0.0) {
            return bad("amplitude_uv must be > 0".into());
        }
        if let Some(f) = self.line_noise_factor {
            if !(f >= 0.0 && f.is_finite()) {
                return bad("line_noise_factor must be >= 0".into());
            }
            if 50.0 >= nyq {
                return bad("50 Hz interference needs sample_rate_hz > 100".into());
            }
        }
        if let Some(name) = &self.dead_channel {
            if !montage_of_size(self.n_channels).iter().any(|c| &c.name == name) {
                return bad(format!("dead_channel `{name}` not in montage"));
            }
        }
        Ok(())
    }

    pub fn session_id(&self) -> String {
        self.session_id.clone().unwrap_or_else(|| format!("synth-{}", self.rng_seed))
    }
}

/// A command held over `[start_ms, end_ms)` relative to the first sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start_ms: u64,
    pub end_ms: u64,
    pub command: CommandLabel,
}

#[derive(Debug, Clone)]
pub struct SynthSession {
    pub session: SessionDir,
    pub schedule: Vec<Segment>,
    /// Per EEG sample, the class its signal encodes (None past the schedule).
    pub truth: Vec<Option<CommandLabel>>,
    /// Per class, the (channel, gain) pairs carrying its sinusoid.
    pub clusters: Vec<Vec<(usize, f64)>>,
}

/// Markov walk over the commands. Boundaries fall halfway between joystick
/// samples so nearest-neighbour labelling reproduces the schedule exactly.
pub fn command_schedule(cfg: &SynthConfig, span_ms: u64) -> Vec<Segment> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.rng_seed, &[10]));
    let half = JOYSTICK_PERIOD_MS / 2;
    let mut command = CommandLabel::ALL[rng.random_range(0..CommandLabel::COUNT)];
    let mut start = 0u64;
    let mut out = Vec::new();
    while start < span_ms {
        let dwell_ms = rng.random_range(0.5..1.5) * cfg.segment_len_s * 1000.0;
        let steps = ((start as f64 + dwell_ms - half as f64) / JOYSTICK_PERIOD_MS as f64).round();
        let end = (half + steps.max(0.0) as u64 * JOYSTICK_PERIOD_MS).max(start + JOYSTICK_PERIOD_MS);
        out.push(Segment { start_ms: start, end_ms: end, command });
        start = end;
        let next = rng.random_range(0..CommandLabel::COUNT - 1);
        let others: Vec<CommandLabel> = CommandLabel::ALL.into_iter().filter(|c| *c != command).collect();
        command = others[next];
    }
    out
}

fn command_at(schedule: &[Segment], ms: f64) -> Option<CommandLabel> {
    let i = schedule.partition_point(|s| (s.end_ms as f64) <= ms);
    schedule.get(i).filter(|s| s.start_ms as f64 <= ms).map(|s| s.command)
}

pub fn joystick_command(c: CommandLabel) -> (f64, f64) {
    let m = JOYSTICK_MAGNITUDE;
    match c {
        CommandLabel::Forward => (m, 0.0),
        CommandLabel::Reverse => (-m, 0.0),
        CommandLabel::Left => (0.0, m),
        CommandLabel::Right => (0.0, -m),
        CommandLabel::Stop => (0.0, 0.0),
    }
}

/// Kellet's economy pink filter: three first-order low-passes summed with
/// the white input, about -3 dB/octave above a few Hz at 125 Hz.
fn pink(white: &[f64]) -> Vec<f64> {
    let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
    white
        .iter()
        .map(|&w| {
            b0 = 0.99765 * b0 + w * 0.099_046_0;
            b1 = 0.96300 * b1 + w * 0.296_516_4;
            b2 = 0.57000 * b2 + w * 1.052_691_3;
            b0 + b1 + b2 + w * 0.1848
        })
        .collect()
}

fn unit_noise(rng: &mut ChaCha8Rng, n: usize, model: NoiseModel) -> Vec<f64> {
    // Burn-in lets the slow pink pole settle before the recording starts.
    let burn = if model == NoiseModel::Pink { 2000 } else { 0 };
    let white: Vec<f64> = (0..n + burn).map(|_| rng.sample(StandardNormal)).collect();
    let mut v = match model {
        NoiseModel::White => white,
        NoiseModel::Pink => pink(&white).split_off(burn),
    };
    let mean = v.iter().sum::<f64>() / n as f64;
    let std = (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64).sqrt();
    for x in &mut v {
        *x = (*x - mean) / std;
    }
    v
}

fn round_uv(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

pub fn generate_session(cfg: &SynthConfig) -> Result<SynthSession> {
    cfg.validate()?;
    let fs = cfg.sample_rate_hz;
    let n = (cfg.duration_s * fs).round() as usize;
    let c = cfg.n_channels;
    let montage = montage_of_size(c);
    let lag_ms = cfg.label_lag_ms;
    let span_ms = (cfg.duration_s * 1000.0 + lag_ms).ceil() as u64 + 1000;
    let schedule = command_schedule(cfg, span_ms);

    // Class clusters: nearest channels to a random centre, Gaussian falloff,
    // scaled to unit energy so the SNR is that of the optimally combined subset.
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.rng_seed, &[11]));
    // Centres spread by farthest-point sampling from a random first channel.
    let mut centres = vec![rng.random_range(0..c)];
    while centres.len() < CommandLabel::COUNT.min(c) {
        let next = (0..c)
            .filter(|i| !centres.contains(i))
            .map(|i| {
                let d = centres.iter().map(|&j| montage[i].angular_distance(&montage[j])).fold(f64::INFINITY, f64::min);
                (i, d)
            })
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
            .expect("candidates remain")
            .0;
        centres.push(next);
    }
    let clusters: Vec<Vec<(usize, f64)>> = (0..CommandLabel::COUNT)
        .map(|k| {
            let centre = &montage[centres[k % centres.len()]];
            let mut by_dist: Vec<(usize, f64)> =
                montage.iter().enumerate().map(|(i, m)| (i, centre.angular_distance(m))).collect();
            by_dist.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            by_dist
                .into_iter()
                .take(cfg.cluster_size)
                .map(|(i, d)| (i, (-d * d / (2.0 * 0.5 * 0.5)).exp()))
                .collect::<Vec<_>>()
        })
        .map(|gains| {
            let norm = gains.iter().map(|(_, g)| g * g).sum::<f64>().sqrt();
            gains.into_iter().map(|(i, g)| (i, g / norm)).collect()
        })
        .collect();

    let times: Vec<f64> = (0..n).map(|i| i as f64 / fs).collect();
    let truth: Vec<Option<CommandLabel>> =
        times.iter().map(|t| command_at(&schedule, t * 1000.0 + lag_ms)).collect();

    let amp = cfg.amplitude_uv;
    let mut rows = vec![vec![0.0; n]; c];

    // Per-segment phases keep the class sinusoid continuous within a segment.
    let mut phase_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.rng_seed, &[12]));
    let phases: Vec<f64> = schedule.iter().map(|_| phase_rng.random_range(0.0..2.0 * PI)).collect();
    for (i, &t) in times.iter().enumerate() {
        let ms = t * 1000.0 + lag_ms;
        let si = schedule.partition_point(|s| (s.end_ms as f64) <= ms);
        let Some(seg) = schedule.get(si) else { continue };
        let f = cfg.class_freqs_hz.get(seg.command);
        let v = amp * (2.0 * PI * f * t + phases[si]).sin();
        for &(ch, g) in &clusters[seg.command.index()] {
            rows[ch][i] += g * v;
        }
    }

    if cfg.snr_db.is_finite() {
        // Per-channel noise std so that the subset signal energy (amp^2 / 2,
        // unit-energy gains) over sigma^2 is 10^(snr/10).
        let sigma = amp / 2f64.sqrt() * 10f64.powf(-cfg.snr_db / 20.0);
        let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.rng_seed, &[13]));
        let centres: Vec<[f64; 3]> = (0..BACKGROUND_SOURCES)
            .map(|_| {
                let v: [f64; 3] = [
                    noise_rng.sample(StandardNormal),
                    noise_rng.sample(StandardNormal),
                    noise_rng.sample(StandardNormal),
                ];
                let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                [v[0] / norm, v[1] / norm, v[2] / norm]
            })
            .collect();
        let sources: Vec<Vec<f64>> =
            (0..BACKGROUND_SOURCES).map(|_| unit_noise(&mut noise_rng, n, cfg.noise_model)).collect();
        let bg = (cfg.background_fraction).sqrt() * sigma;
        let sensor = (1.0 - cfg.background_fraction).sqrt() * sigma;
        for (ch, m) in montage.iter().enumerate() {
            let gains: Vec<f64> = centres
                .iter()
                .map(|p| {
                    let d = (m.position[0] * p[0] + m.position[1] * p[1] + m.position[2] * p[2])
                        .clamp(-1.0, 1.0)
                        .acos();
                    (-d * d / (2.0 * BACKGROUND_WIDTH * BACKGROUND_WIDTH)).exp()
                })
                .collect();
            let norm = gains.iter().map(|g| g * g).sum::<f64>().sqrt();
            let own = unit_noise(&mut noise_rng, n, cfg.noise_model);
            for i in 0..n {
                let mut v = sensor * own[i];
                for (g, s) in gains.iter().zip(&sources) {
                    v += bg * g / norm * s[i];
                }
                rows[ch][i] += v;
            }
        }
    }

    if let Some(factor) = cfg.line_noise_factor {
        let mut line_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.rng_seed, &[14]));
        let phase = line_rng.random_range(0.0..2.0 * PI);
        for row in rows.iter_mut() {
            let g = factor * amp * line_rng.random_range(0.8..1.2);
            for (v, &t) in row.iter_mut().zip(&times) {
                *v += g * (2.0 * PI * 50.0 * t + phase).sin();
            }
        }
    }

    if let Some(name) = &cfg.dead_channel {
        let idx = montage.iter().position(|m| &m.name == name).expect("validated channel");
        rows[idx].fill(0.0);
    }

    for row in rows.iter_mut() {
        for v in row.iter_mut() {
            *v = round_uv(*v);
        }
    }

    let step_ns = 1e9 / fs;
    let ts: Vec<Timestamp> = (0..n)
        .map(|i| Timestamp::from_nanos(SYNTH_EPOCH_NS + (i as f64 * step_ns).round() as u64))
        .collect();
    let eeg = EegRecording::new(montage.clone(), ts, rows, fs)?;

    let n_joy = (cfg.duration_s * 1000.0 / JOYSTICK_PERIOD_MS as f64).floor() as u64 + 1;
    let joystick = (0..n_joy)
        .map(|j| {
            let ms = j * JOYSTICK_PERIOD_MS;
            let cmd = command_at(&schedule, ms as f64).expect("schedule covers the session");
            let (vx, wz) = joystick_command(cmd);
            JoystickSample::new(Timestamp::from_nanos(SYNTH_EPOCH_NS + ms * 1_000_000), vx, wz)
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest = SessionManifest {
        format_version: 1,
        subject_id: cfg.subject_id.clone(),
        session_id: cfg.session_id(),
        sample_rate_hz: fs,
        montage,
        reserved_streams: vec!["camera".into(), "gnss".into(), "imu".into(), "lux".into()],
    };
    manifest.validate()?;
    Ok(SynthSession { session: SessionDir { manifest, eeg, joystick }, schedule, truth, clusters })
}

/// Write the session files plus `truth_labels.csv` (`t_ns,label_code`).
pub fn write_synth_session(dir: &Path, s: &SynthSession) -> Result<()> {
    write_session(dir, &s.session)?;
    let path = dir.join(TRUTH_FILE);
    let mut text = String::from("t_ns,label_code\n");
    for (t, l) in s.session.eeg.timestamps().iter().zip(&s.truth) {
        if let Some(l) = l {
            let _ = writeln!(text, "{},{}", t.nanos(), l.code());
        }
    }
    let mut f = create_file(&path)?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(&path, e))
}
