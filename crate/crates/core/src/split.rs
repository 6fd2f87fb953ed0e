//! Temporal-aware, label-stratified splitting and sliding-window extraction.
//!
//! Per class, samples are sorted by time and cut into contiguous chunks; the
//! head of every chunk goes to training and the tail to testing. Both
//! partitions are re-sorted by time, windowed independently, and only the
//! training windows are oversampled.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelling::LabeledSample;
use crate::preprocess::channel_stats;
use crate::session::{CommandLabel, EegRecording, Horizon, Timestamp};
use crate::tensorfile::{
    expand_runs, index_runs, read_windows, write_windows, Partition, WindowsSidecar, DTYPE_F32LE,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub n_chunks: usize,
    pub train_fraction: f64,
    pub window_len: usize,
    pub overlap_fraction: f64,
    pub oversample: bool,
    pub rng_seed: u64,
    /// When set, windows never span a timestamp gap larger than this.
    pub gap_break_ns: Option<u64>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            n_chunks: 100,
            train_fraction: 0.7,
            window_len: 125,
            overlap_fraction: 0.5,
            oversample: true,
            rng_seed: 0,
            gap_break_ns: None,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.n_chunks >= 1
            && self.train_fraction > 0.0
            && self.train_fraction < 1.0
            && self.overlap_fraction > 0.0
            && self.overlap_fraction < 1.0
            && self.window_len >= 2;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid split config {self:?}")))
        }
    }

    /// Window hop in samples, `floor(S * (1 - overlap))`, at least 1.
    pub fn hop(&self) -> usize {
        ((self.window_len as f64 * (1.0 - self.overlap_fraction) + 1e-9).floor() as usize).max(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledWindow {
    /// Row-major `C x S` samples.
    pub data: Vec<f32>,
    pub label: CommandLabel,
    pub start_t: Timestamp,
    pub partition: Partition,
    /// Source sample indices, in window order.
    pub sources: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: Vec<LabeledWindow>,
    pub test: Vec<LabeledWindow>,
    pub n_channels: usize,
    pub window_len: usize,
    /// Train window counts per class before oversampling.
    pub train_counts_pre_oversample: [usize; 5],
    pub absent_classes: Vec<CommandLabel>,
}

/// Chunk sizes for `count` samples: `min(n_chunks, count)` chunks, the first
/// `count mod k` one larger than the rest.
pub fn chunk_sizes(count: usize, n_chunks: usize) -> Vec<usize> {
    let k = n_chunks.min(count);
    if k == 0 {
        return Vec::new();
    }
    let base = count / k;
    let extra = count % k;
    (0..k).map(|i| base + usize::from(i < extra)).collect()
}

/// Train samples for the chunk spanning `[start, start + chunk)` of a class.
/// Flooring the cumulative target instead of each chunk keeps the class-level
/// fraction at `floor(f * n)` even for small chunks; each chunk still gets the
/// floor or ceiling of `f * chunk`, and at least one sample.
pub fn train_take(start: usize, chunk: usize, train_fraction: f64) -> usize {
    let target = |m: usize| (train_fraction * m as f64 + 1e-9).floor() as usize;
    (target(start + chunk) - target(start)).clamp(1, chunk)
}

/// Returns (train, test) positions into `samples`, each sorted by timestamp.
pub fn stratified_temporal_split(
    samples: &[LabeledSample],
    cfg: &SplitConfig,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if samples.is_empty() {
        return Err(Error::Data("cannot split an empty label set".into()));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in CommandLabel::ALL {
        let mut members: Vec<usize> = (0..samples.len())
            .filter(|&i| samples[i].label == class)
            .collect();
        members.sort_by_key(|&i| (samples[i].t, samples[i].index));
        let mut start = 0;
        for size in chunk_sizes(members.len(), cfg.n_chunks) {
            let chunk = &members[start..start + size];
            let k = train_take(start, size, cfg.train_fraction);
            train.extend_from_slice(&chunk[..k]);
            test.extend_from_slice(&chunk[k..]);
            start += size;
        }
    }
    let key = |&i: &usize| (samples[i].t, samples[i].index);
    train.sort_by_key(key);
    test.sort_by_key(key);
    Ok((train, test))
}

/// Most frequent label; ties go to the lowest class code.
pub fn majority_label(labels: impl IntoIterator<Item = CommandLabel>) -> Option<CommandLabel> {
    let mut counts = [0usize; CommandLabel::COUNT];
    let mut any = false;
    for l in labels {
        counts[l.index()] += 1;
        any = true;
    }
    if !any {
        return None;
    }
    let best = (0..CommandLabel::COUNT)
        .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
        .unwrap();
    CommandLabel::from_code(best as u8)
}

/// Start positions of sliding windows over a partition of the given
/// timestamps. With `gap_break_ns`, runs separated by a larger gap are
/// windowed independently.
pub fn window_starts(times: &[Timestamp], window_len: usize, hop: usize, gap_break_ns: Option<u64>) -> Vec<usize> {
    let mut segments = Vec::new();
    let mut seg_start = 0;
    if let Some(max_gap) = gap_break_ns {
        for i in 1..times.len() {
            if times[i].nanos().saturating_sub(times[i - 1].nanos()) > max_gap {
                segments.push((seg_start, i));
                seg_start = i;
            }
        }
    }
    segments.push((seg_start, times.len()));
    segments
        .into_iter()
        .flat_map(|(s, e)| {
            let n = e - s;
            let count = if n >= window_len { (n - window_len) / hop + 1 } else { 0 };
            (0..count).map(move |k| s + k * hop)
        })
        .collect()
}

/// Slide windows over one partition (positions into `samples`, sorted by time)
/// and gather the window data from `rec`.
pub fn extract_windows(
    rec: &EegRecording,
    samples: &[LabeledSample],
    partition: &[usize],
    cfg: &SplitConfig,
    kind: Partition,
) -> Vec<LabeledWindow> {
    let s = cfg.window_len;
    let times: Vec<Timestamp> = partition.iter().map(|&p| samples[p].t).collect();
    window_starts(&times, s, cfg.hop(), cfg.gap_break_ns)
        .into_iter()
        .map(|start| {
            let members = &partition[start..start + s];
            let sources: Vec<usize> = members.iter().map(|&p| samples[p].index).collect();
            let label = majority_label(members.iter().map(|&p| samples[p].label)).unwrap();
            let mut data = Vec::with_capacity(rec.n_channels() * s);
            for row in rec.samples() {
                data.extend(sources.iter().map(|&i| row[i] as f32));
            }
            LabeledWindow {
                data,
                label,
                start_t: times[start],
                partition: kind,
                sources,
            }
        })
        .collect()
}

pub fn class_counts(windows: &[LabeledWindow]) -> [usize; 5] {
    let mut c = [0usize; 5];
    for w in windows {
        c[w.label.index()] += 1;
    }
    c
}

/// Duplicate randomly chosen minority-class windows until every present class
/// matches the largest. Originals are kept; duplicates sit right after their
/// source so the list stays ordered by start time.
pub fn oversample_train(train: Vec<LabeledWindow>, seed: u64) -> Result<Vec<LabeledWindow>> {
    if train.is_empty() {
        return Err(Error::Data("cannot oversample an empty training set".into()));
    }
    let counts = class_counts(&train);
    let target = *counts.iter().max().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut extra = vec![0usize; train.len()];
    for class in CommandLabel::ALL {
        let members: Vec<usize> = (0..train.len()).filter(|&i| train[i].label == class).collect();
        if members.is_empty() {
            continue;
        }
        for _ in members.len()..target {
            extra[members[rng.random_range(0..members.len())]] += 1;
        }
    }
    let total = train.len() + extra.iter().sum::<usize>();
    let mut out = Vec::with_capacity(total);
    for (w, n) in train.into_iter().zip(extra) {
        for _ in 0..n {
            out.push(w.clone());
        }
        out.push(w);
    }
    Ok(out)
}

/// Drop labelled samples within `trim_s` seconds of either recording edge.
pub fn trim_edges(labels: &[LabeledSample], rec: &EegRecording, trim_s: f64) -> Vec<LabeledSample> {
    let trim = (trim_s * rec.sample_rate_hz()).round() as usize;
    let n = rec.n_samples();
    labels
        .iter()
        .filter(|l| l.index >= trim && l.index + trim < n)
        .copied()
        .collect()
}

/// Standardise every channel with the mean/std of the given sample indices.
pub fn zscore_with_indices(rec: &EegRecording, indices: &[usize]) -> Result<EegRecording> {
    let rows = rec
        .samples()
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let subset: Vec<f64> = indices.iter().map(|&i| row[i]).collect();
            let (m, s) = channel_stats(&subset);
            if !(s > 0.0) {
                return Err(Error::Data(format!(
                    "channel {} has zero variance in the training partition",
                    rec.channels()[c].name
                )));
            }
            Ok(row.iter().map(|v| (v - m) / s).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    rec.with_samples(rows)
}

/// Split, window and (optionally) oversample one session at one horizon.
pub fn build_split(
    rec: &EegRecording,
    labels: &[LabeledSample],
    cfg: &SplitConfig,
    zscore_with_train: bool,
) -> Result<SplitDataset> {
    cfg.validate()?;
    let (train_pos, test_pos) = stratified_temporal_split(labels, cfg)?;
    let normalized;
    let rec = if zscore_with_train {
        let idx: Vec<usize> = train_pos.iter().map(|&p| labels[p].index).collect();
        normalized = zscore_with_indices(rec, &idx)?;
        &normalized
    } else {
        rec
    };
    let train = extract_windows(rec, labels, &train_pos, cfg, Partition::Train);
    let test = extract_windows(rec, labels, &test_pos, cfg, Partition::Test);
    if train.is_empty() {
        return Err(Error::Data(format!(
            "training partition too short for a {}-sample window",
            cfg.window_len
        )));
    }
    let pre = class_counts(&train);
    let present: BTreeSet<CommandLabel> = labels.iter().map(|l| l.label).collect();
    let absent_classes = CommandLabel::ALL
        .into_iter()
        .filter(|c| !present.contains(c))
        .collect();
    let train = if cfg.oversample {
        oversample_train(train, cfg.rng_seed)?
    } else {
        train
    };
    Ok(SplitDataset {
        train,
        test,
        n_channels: rec.n_channels(),
        window_len: cfg.window_len,
        train_counts_pre_oversample: pre,
        absent_classes,
    })
}

/// True when no source sample appears in both partitions.
pub fn no_leakage(ds: &SplitDataset) -> bool {
    let train: BTreeSet<usize> = ds.train.iter().flat_map(|w| w.sources.iter().copied()).collect();
    ds.test
        .iter()
        .all(|w| w.sources.iter().all(|i| !train.contains(i)))
}

pub fn windows_file_name(delta: Horizon, partition: Partition) -> String {
    format!("windows_{}_{}.f32", delta.ms(), partition.as_str())
}

/// Write one tensor file + sidecar per partition into `dir`.
pub fn write_split(
    dir: &Path,
    ds: &SplitDataset,
    delta: Horizon,
    session_id: &str,
    channels: &[String],
) -> Result<[PathBuf; 2]> {
    let write = |windows: &[LabeledWindow], kind: Partition| -> Result<PathBuf> {
        let path = dir.join(windows_file_name(delta, kind));
        let mut data = Vec::with_capacity(windows.len() * ds.n_channels * ds.window_len);
        for w in windows {
            data.extend_from_slice(&w.data);
        }
        let sidecar = WindowsSidecar {
            shape: [windows.len(), ds.n_channels, ds.window_len],
            dtype: DTYPE_F32LE.into(),
            labels: windows.iter().map(|w| w.label.code()).collect(),
            delta_ms: delta.ms(),
            partition: kind,
            session_id: session_id.to_string(),
            channels: channels.to_vec(),
            start_t_ns: windows.iter().map(|w| w.start_t.nanos()).collect(),
            provenance: windows
                .iter()
                .map(|w| {
                    let mut s = w.sources.clone();
                    s.sort_unstable();
                    index_runs(&s)
                })
                .collect(),
            class_counts_pre_oversample: (kind == Partition::Train)
                .then_some(ds.train_counts_pre_oversample),
            absent_classes: ds.absent_classes.iter().map(|c| c.code()).collect(),
        };
        write_windows(&path, &data, &sidecar)?;
        Ok(path)
    };
    Ok([
        write(&ds.train, Partition::Train)?,
        write(&ds.test, Partition::Test)?,
    ])
}

/// Windows read back from a tensor file.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    pub data: Vec<f32>,
    pub labels: Vec<CommandLabel>,
    pub n_channels: usize,
    pub window_len: usize,
    pub sidecar: WindowsSidecar,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn window(&self, i: usize) -> &[f32] {
        let sz = self.n_channels * self.window_len;
        &self.data[i * sz..(i + 1) * sz]
    }

    pub fn from_windows(windows: &[LabeledWindow], n_channels: usize, window_len: usize) -> Self {
        let mut data = Vec::with_capacity(windows.len() * n_channels * window_len);
        for w in windows {
            data.extend_from_slice(&w.data);
        }
        WindowSet {
            data,
            labels: windows.iter().map(|w| w.label).collect(),
            n_channels,
            window_len,
            sidecar: WindowsSidecar {
                shape: [windows.len(), n_channels, window_len],
                dtype: DTYPE_F32LE.into(),
                labels: windows.iter().map(|w| w.label.code()).collect(),
                delta_ms: 0,
                partition: windows.first().map_or(Partition::Train, |w| w.partition),
                session_id: String::new(),
                channels: Vec::new(),
                start_t_ns: windows.iter().map(|w| w.start_t.nanos()).collect(),
                provenance: Vec::new(),
                class_counts_pre_oversample: None,
                absent_classes: Vec::new(),
            },
        }
    }

    pub fn source_indices(&self) -> Vec<Vec<usize>> {
        self.sidecar.provenance.iter().map(|r| expand_runs(r)).collect()
    }
}

pub fn load_window_set(path: &Path) -> Result<WindowSet> {
    let (data, sidecar) = read_windows(path)?;
    let labels = sidecar
        .labels
        .iter()
        .map(|&c| {
            CommandLabel::from_code(c)
                .ok_or_else(|| Error::Data(format!("{}: bad label code {c}", path.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WindowSet {
        data,
        labels,
        n_channels: sidecar.shape[1],
        window_len: sidecar.shape[2],
        sidecar,
    })
}
