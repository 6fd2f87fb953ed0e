//! Cleaning chain: high-pass, notch, robust average reference with bad-channel
//! detection, interpolation of the final bad set, per-channel z-scoring.

pub mod filter;
pub mod interp;
pub mod prep;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use filter::{design_highpass, design_notch, filter_zero_phase, Biquad, FilterSpec, Sos};
pub use interp::interpolate_channels;
pub use prep::{
    detect_bad_channels, robust_average_reference, BadChannel, BadChannelCriteria, BadReason,
    PreprocessReport,
};

use crate::error::{Error, Result};
use crate::session::EegRecording;

/// Where z-scoring statistics come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZScoreScope {
    /// Whole-session statistics, applied during preprocessing.
    #[default]
    Session,
    /// Statistics of the training partition, applied when windows are built.
    TrainPartition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub filter: FilterSpec,
    pub bad_channels: BadChannelCriteria,
    pub reference_max_iter: usize,
    pub zscore: ZScoreScope,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            filter: FilterSpec::default(),
            bad_channels: BadChannelCriteria::default(),
            reference_max_iter: 4,
            zscore: ZScoreScope::Session,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self, fs: f64) -> Result<()> {
        self.filter.validate(fs)?;
        self.bad_channels.validate()?;
        if self.reference_max_iter == 0 {
            return Err(Error::Config("reference_max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

/// Apply a filter cascade to every channel, zero-phase or causal.
pub fn filter_recording(rec: &EegRecording, sos: &Sos, zero_phase: bool) -> Result<EegRecording> {
    let rows = rec
        .samples()
        .par_iter()
        .map(|row| {
            if zero_phase {
                filter_zero_phase(row, sos)
            } else {
                Ok(sos.filter(row))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    rec.with_samples(rows)
}

/// Per-channel mean and population standard deviation.
pub fn channel_stats(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Standardise each channel to zero mean and unit population variance.
pub fn zscore_channels(rec: &EegRecording) -> Result<EegRecording> {
    let mut rows = Vec::with_capacity(rec.n_channels());
    for (c, row) in rec.samples().iter().enumerate() {
        let (mean, std) = channel_stats(row);
        if !(std > 1e-12 * mean.abs().max(1.0)) {
            return Err(Error::Data(format!(
                "channel {} has zero variance; cannot z-score",
                rec.channels()[c].name
            )));
        }
        let first: Vec<f64> = row.iter().map(|v| (v - mean) / std).collect();
        // One refinement pass removes the rounding left by the first.
        let (m2, s2) = channel_stats(&first);
        rows.push(first.into_iter().map(|v| (v - m2) / s2).collect());
    }
    rec.with_samples(rows)
}

/// High-pass, notch, robust reference, interpolation, z-score, in that order.
pub fn preprocess_session(
    rec: &EegRecording,
    cfg: &PreprocessConfig,
) -> Result<(EegRecording, PreprocessReport)> {
    let fs = rec.sample_rate_hz();
    cfg.validate(fs)?;
    let mut stages = Vec::new();

    let hp = design_highpass(&cfg.filter, fs)?;
    let x = filter_recording(rec, &hp, cfg.filter.zero_phase)?;
    stages.push(format!(
        "highpass {} Hz order {}{}",
        cfg.filter.highpass_hz,
        cfg.filter.highpass_order,
        if cfg.filter.zero_phase { " zero-phase" } else { "" }
    ));

    let notch = design_notch(&cfg.filter, fs)?;
    let x = filter_recording(&x, &notch, cfg.filter.zero_phase)?;
    stages.push(format!("notch {} Hz Q {}", cfg.filter.notch_hz, cfg.filter.notch_q));

    let (x, mut report) = robust_average_reference(&x, &cfg.bad_channels, cfg.reference_max_iter)?;
    stages.push(format!(
        "robust average reference ({} iterations)",
        report.reference_iterations
    ));

    let bad: std::collections::BTreeSet<usize> = report
        .final_bad
        .iter()
        .filter_map(|n| x.channel_index(n))
        .collect();
    let x = if bad.is_empty() {
        x
    } else {
        interpolate_channels(&x, &bad)?
    };
    report.interpolated = report.final_bad.clone();
    stages.push(format!("interpolate {:?}", report.interpolated));

    let x = match cfg.zscore {
        ZScoreScope::Session => {
            stages.push("z-score (session statistics)".into());
            zscore_channels(&x)?
        }
        ZScoreScope::TrainPartition => {
            stages.push("z-score deferred to train partition".into());
            x
        }
    };
    report.stages = stages;
    Ok((x, report))
}
