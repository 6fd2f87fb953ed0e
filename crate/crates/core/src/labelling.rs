//! Rule-based joystick thresholding and multi-horizon label assignment.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{align_timestamps, create_file, AlignmentConfig};
use crate::session::{CommandLabel, Horizon, JoystickSample, Timestamp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelRule {
    /// Dead-band threshold in normalized command units.
    pub tau: f64,
}

impl Default for LabelRule {
    fn default() -> Self {
        LabelRule { tau: 0.1 }
    }
}

impl LabelRule {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config(format!("label.tau must be in (0, 1), got {}", self.tau)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSample {
    /// Index of the EEG sample within its recording.
    pub index: usize,
    pub t: Timestamp,
    pub label: CommandLabel,
    pub delta: Horizon,
}

/// Map a velocity command to a label. Activation is strict (`> tau`), the
/// dead-band inclusive (`<= tau`); `None` when both axes are active.
pub fn classify_command(v_x: f64, omega_z: f64, rule: &LabelRule) -> Option<CommandLabel> {
    let tau = rule.tau;
    let lin_quiet = v_x.abs() <= tau;
    let ang_quiet = omega_z.abs() <= tau;
    match (lin_quiet, ang_quiet) {
        (true, true) => Some(CommandLabel::Stop),
        (false, true) if v_x > tau => Some(CommandLabel::Forward),
        (false, true) => Some(CommandLabel::Reverse),
        (true, false) if omega_z > tau => Some(CommandLabel::Left),
        (true, false) => Some(CommandLabel::Right),
        (false, false) => None,
    }
}

/// `Label(t) = Joystick(t + delta)`: each EEG sample takes the class of the
/// joystick sample nearest to its shifted timestamp. Samples with no match
/// within tolerance, or whose command is discarded, are omitted.
pub fn label_at_horizon(
    eeg_ts: &[Timestamp],
    joy: &[JoystickSample],
    rule: &LabelRule,
    delta: Horizon,
    align: &AlignmentConfig,
) -> Vec<LabeledSample> {
    let joy_ts: Vec<Timestamp> = joy.iter().map(|j| j.t).collect();
    let shifted = eeg_ts.iter().map(|t| t.offset(delta.nanos()));
    align_timestamps(shifted, &joy_ts, align)
        .into_iter()
        .enumerate()
        .filter_map(|(i, m)| {
            let j = &joy[m?];
            let label = classify_command(j.v_x, j.omega_z, rule)?;
            Some(LabeledSample {
                index: i,
                t: eeg_ts[i],
                label,
                delta,
            })
        })
        .collect()
}

pub fn write_labels_csv(path: &Path, labels: &[LabeledSample]) -> Result<()> {
    let mut w = create_file(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "t_ns,label_code").map_err(io)?;
    for l in labels {
        writeln!(w, "{},{}", l.t.nanos(), l.label.code()).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Read a labels file back, resolving each timestamp to its EEG sample index.
pub fn read_labels_csv(
    path: &Path,
    eeg_ts: &[Timestamp],
    delta: Horizon,
) -> Result<Vec<LabeledSample>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: &str| Error::Parse {
            file: path.to_path_buf(),
            line: i + 1,
            msg: msg.to_string(),
        };
        let (t, code) = line.split_once(',').ok_or_else(|| err("expected t_ns,label_code"))?;
        let t = Timestamp::from_nanos(t.trim().parse().map_err(|_| err("bad t_ns"))?);
        let label = code
            .trim()
            .parse::<u8>()
            .ok()
            .and_then(CommandLabel::from_code)
            .ok_or_else(|| err("bad label code"))?;
        let index = eeg_ts
            .binary_search(&t)
            .map_err(|_| err("timestamp not present in EEG recording"))?;
        out.push(LabeledSample {
            index,
            t,
            label,
            delta,
        });
    }
    Ok(out)
}

pub fn labels_file_name(delta: Horizon) -> String {
    format!("labels_{}.csv", delta.ms())
}
