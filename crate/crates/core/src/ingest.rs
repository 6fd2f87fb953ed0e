//! Session directory I/O and cross-stream timestamp alignment.
//!
//! A session directory holds three files:
//!
//! * `manifest.json` - subject/session ids, sample rate, montage, reserved streams
//! * `eeg.csv` - header `timestamp_ns,<ch1>,...,<chC>`, one row per sample (microvolts)
//! * `joystick.jsonl` - one `{"t_ns": .., "vx": .., "wz": ..}` object per line

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::session::{EegRecording, JoystickSample, SessionManifest, Timestamp};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const EEG_FILE: &str = "eeg.csv";
pub const JOYSTICK_FILE: &str = "joystick.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TieBreak {
    #[default]
    Earlier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignmentConfig {
    pub max_gap_ms: f64,
    pub tie_break: TieBreak,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        AlignmentConfig {
            max_gap_ms: 100.0,
            tie_break: TieBreak::Earlier,
        }
    }
}

impl AlignmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_gap_ms > 0.0 && self.max_gap_ms.is_finite()) {
            return Err(Error::Config(format!(
                "alignment.max_gap_ms must be > 0, got {}",
                self.max_gap_ms
            )));
        }
        Ok(())
    }

    fn max_gap_ns(&self) -> u64 {
        (self.max_gap_ms * 1e6).round() as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionDir {
    pub manifest: SessionManifest,
    pub eeg: EegRecording,
    pub joystick: Vec<JoystickSample>,
}

/// For each target timestamp, the index of the nearest reference timestamp,
/// or `None` when the nearest one is further than `cfg.max_gap_ms`.
///
/// Both sequences must be non-decreasing; equidistant candidates resolve to
/// the earlier reference. Runs as a single two-pointer sweep.
pub fn align_timestamps(
    targets: impl IntoIterator<Item = Timestamp>,
    reference: &[Timestamp],
    cfg: &AlignmentConfig,
) -> Vec<Option<usize>> {
    let max_gap = cfg.max_gap_ns();
    let mut j = 0usize;
    targets
        .into_iter()
        .map(|t| {
            if reference.is_empty() {
                return None;
            }
            // Advance to the last reference at or before t.
            while j + 1 < reference.len() && reference[j + 1] <= t {
                j += 1;
            }
            let dist = |k: usize| reference[k].nanos().abs_diff(t.nanos());
            let mut best = j;
            if j + 1 < reference.len() && dist(j + 1) < dist(j) {
                best = j + 1;
            }
            (dist(best) <= max_gap).then_some(best)
        })
        .collect()
}

pub fn align_nearest(
    eeg_ts: &[Timestamp],
    joy: &[JoystickSample],
    cfg: &AlignmentConfig,
) -> Vec<Option<usize>> {
    let joy_ts: Vec<Timestamp> = joy.iter().map(|j| j.t).collect();
    align_timestamps(eeg_ts.iter().copied(), &joy_ts, cfg)
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn load_manifest(path: &Path) -> Result<SessionManifest> {
    let text = read_to_string(path)?;
    let manifest: SessionManifest =
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    manifest.validate()?;
    Ok(manifest)
}

fn parse_err(file: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

pub fn load_eeg_csv(path: &Path, manifest: &SessionManifest) -> Result<EegRecording> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(h) => h.map_err(|e| Error::io(path, e))?,
        None => return Err(parse_err(path, 1, "empty file")),
    };
    let cols: Vec<&str> = header.trim_end().split(',').collect();
    if cols.first() != Some(&"timestamp_ns") {
        return Err(parse_err(path, 1, "first column must be timestamp_ns"));
    }
    let names: Vec<&str> = cols[1..].to_vec();
    let expected: Vec<&str> = manifest.montage.iter().map(|c| c.name.as_str()).collect();
    if names != expected {
        return Err(Error::Montage(format!(
            "eeg.csv header lists {} channels {:?}, manifest lists {} {:?}",
            names.len(),
            names,
            expected.len(),
            expected
        )));
    }

    let n_ch = names.len();
    let mut timestamps = Vec::new();
    let mut samples = vec![Vec::new(); n_ch];
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.trim_end().split(',');
        let t: u64 = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| parse_err(path, lineno, "bad timestamp"))?;
        let mut n = 0;
        for (c, f) in fields.enumerate() {
            if c >= n_ch {
                return Err(parse_err(path, lineno, format!("more than {n_ch} channel values")));
            }
            let v: f64 = f
                .parse()
                .map_err(|_| parse_err(path, lineno, format!("bad value {f:?}")))?;
            samples[c].push(v);
            n += 1;
        }
        if n != n_ch {
            return Err(parse_err(path, lineno, format!("expected {n_ch} values, got {n}")));
        }
        if let Some(prev) = timestamps.last() {
            if Timestamp::from_nanos(t) <= *prev {
                return Err(parse_err(path, lineno, "timestamps not strictly increasing"));
            }
        }
        timestamps.push(Timestamp::from_nanos(t));
    }
    EegRecording::new(manifest.montage.clone(), timestamps, samples, manifest.sample_rate_hz)
}

#[derive(Serialize, Deserialize)]
struct JoystickLine {
    t_ns: u64,
    vx: f64,
    wz: f64,
}

pub fn load_joystick(path: &Path) -> Result<Vec<JoystickSample>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out: Vec<JoystickSample> = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JoystickLine = serde_json::from_str(&line)
            .map_err(|e| parse_err(path, lineno, e.to_string()))?;
        let t = Timestamp::from_nanos(rec.t_ns);
        let s = JoystickSample::new(t, rec.vx, rec.wz)
            .map_err(|e| parse_err(path, lineno, e.to_string()))?;
        if out.last().is_some_and(|p| p.t >= t) {
            return Err(parse_err(path, lineno, "timestamps not strictly increasing"));
        }
        out.push(s);
    }
    Ok(out)
}

pub fn load_session(dir: &Path) -> Result<SessionDir> {
    let manifest = load_manifest(&dir.join(MANIFEST_FILE))?;
    let eeg = load_eeg_csv(&dir.join(EEG_FILE), &manifest)?;
    let joystick = load_joystick(&dir.join(JOYSTICK_FILE))?;
    Ok(SessionDir {
        manifest,
        eeg,
        joystick,
    })
}

pub(crate) fn create_file(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create_file(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::json(path, e))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

pub fn write_eeg_csv(path: &Path, rec: &EegRecording) -> Result<()> {
    let mut w = create_file(path)?;
    let mut line = String::from("timestamp_ns");
    for ch in rec.channels() {
        line.push(',');
        line.push_str(&ch.name);
    }
    line.push('\n');
    let io = |e| Error::io(path, e);
    w.write_all(line.as_bytes()).map_err(io)?;
    for (i, t) in rec.timestamps().iter().enumerate() {
        line.clear();
        write!(line, "{}", t.nanos()).unwrap();
        for row in rec.samples() {
            // `{}` prints the shortest representation that round-trips exactly.
            write!(line, ",{}", row[i]).unwrap();
        }
        line.push('\n');
        w.write_all(line.as_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_joystick(path: &Path, joy: &[JoystickSample]) -> Result<()> {
    let mut w = create_file(path)?;
    for s in joy {
        let line = serde_json::to_string(&JoystickLine {
            t_ns: s.t.nanos(),
            vx: s.v_x,
            wz: s.omega_z,
        })
        .map_err(|e| Error::json(path, e))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_session(dir: &Path, session: &SessionDir) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join(MANIFEST_FILE), &session.manifest)?;
    write_eeg_csv(&dir.join(EEG_FILE), &session.eeg)?;
    write_joystick(&dir.join(JOYSTICK_FILE), &session.joystick)?;
    Ok(dir.to_path_buf())
}
