//! Stage commands over a fixed output layout. `cmd_run_all` chains the same
//! stage functions through the same files, so running stages one by one gives
//! identical outputs.
//!
//! ```text
//! <out>/sessions/<id>/                      simulated sessions
//! <out>/runs/<id>/preprocessed/             cleaned session + preprocess_report.json
//! <out>/runs/<id>/labels/labels_<ms>.csv
//! <out>/runs/<id>/windows/windows_<ms>_{train,test}.{f32,json}
//! <out>/runs/<id>/models/<model>_<ms>/{checkpoint.bin,loss.csv}
//! <out>/runs/<id>/eval/<model>_<ms>.json
//! <out>/report/
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::ingest::{create_file, load_session, read_json, write_json, write_session, SessionDir};
use crate::labelling::{label_at_horizon, labels_file_name, read_labels_csv, write_labels_csv};
use crate::metrics::confusion;
use crate::models::{
    derive_seed, read_checkpoint, train, write_checkpoint, Checkpoint, ModelKind, ModelSpec, Network,
};
use crate::preprocess::{preprocess_session, PreprocessReport, ZScoreScope};
use crate::report::{emit_report, BenchmarkReport, RunRecord};
use crate::session::{validate_recording, Horizon, ValidationReport};
use crate::split::{build_split, load_window_set, trim_edges, windows_file_name, write_split};
use crate::synth::{generate_session, write_synth_session};
use crate::tensorfile::Partition;

pub const INCOMPLETE_MARKER: &str = "INCOMPLETE";
pub const PREPROCESS_REPORT_FILE: &str = "preprocess_report.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOSS_FILE: &str = "loss.csv";

const TAG_SYNTH: u64 = 0x5147;
const TAG_PREP: u64 = 0x9e9;
const TAG_SPLIT: u64 = 0x5b17;
const TAG_TRAIN: u64 = 0x7a11;

/// Paths of every artifact under one output root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn sessions_dir(&self) -> PathBuf {
        self.root.join("sessions")
    }

    pub fn session(&self, id: &str) -> PathBuf {
        self.sessions_dir().join(id)
    }

    pub fn run_dir(&self, id: &str) -> PathBuf {
        self.root.join("runs").join(id)
    }

    pub fn preprocessed(&self, id: &str) -> PathBuf {
        self.run_dir(id).join("preprocessed")
    }

    pub fn labels_dir(&self, id: &str) -> PathBuf {
        self.run_dir(id).join("labels")
    }

    pub fn labels(&self, id: &str, h: Horizon) -> PathBuf {
        self.labels_dir(id).join(labels_file_name(h))
    }

    pub fn windows_dir(&self, id: &str) -> PathBuf {
        self.run_dir(id).join("windows")
    }

    pub fn windows(&self, id: &str, h: Horizon, part: Partition) -> PathBuf {
        self.windows_dir(id).join(windows_file_name(h, part))
    }

    pub fn model_dir(&self, id: &str, model: ModelKind, h: Horizon) -> PathBuf {
        self.run_dir(id).join("models").join(format!("{}_{}", model.name(), h.ms()))
    }

    pub fn checkpoint(&self, id: &str, model: ModelKind, h: Horizon) -> PathBuf {
        self.model_dir(id, model, h).join(CHECKPOINT_FILE)
    }

    pub fn eval_dir(&self, id: &str) -> PathBuf {
        self.run_dir(id).join("eval")
    }

    pub fn eval(&self, id: &str, model: ModelKind, h: Horizon) -> PathBuf {
        self.eval_dir(id).join(format!("{}_{}.json", model.name(), h.ms()))
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }
}

/// 64-bit FNV-1a, used to fold session ids into seeds.
pub fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn model_code(m: ModelKind) -> u64 {
    match m {
        ModelKind::Linear => 1,
        ModelKind::ShallowConvnet => 2,
    }
}

pub fn split_seed(cfg: &RunConfig, session_id: &str, h: Horizon) -> u64 {
    derive_seed(cfg.seed, &[TAG_SPLIT, cfg.split.rng_seed, fnv1a(session_id), h.ms() as u64])
}

pub fn train_seed(cfg: &RunConfig, session_id: &str, h: Horizon, model: ModelKind) -> u64 {
    derive_seed(
        cfg.seed,
        &[TAG_TRAIN, cfg.train.rng_seed, fnv1a(session_id), h.ms() as u64, model_code(model)],
    )
}

/// Run `f` with an INCOMPLETE marker in `dir` that is removed only on success.
/// On failure the marker keeps the error text.
fn staged<T>(stage: &'static str, dir: &Path, f: impl FnOnce() -> Result<T>) -> Result<T> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e).in_stage(stage))?;
    let marker = dir.join(INCOMPLETE_MARKER);
    fs::write(&marker, format!("{stage}: running\n")).map_err(|e| Error::io(&marker, e).in_stage(stage))?;
    match f() {
        Ok(v) => {
            fs::remove_file(&marker).map_err(|e| Error::io(&marker, e).in_stage(stage))?;
            Ok(v)
        }
        Err(e) => {
            let e = e.in_stage(stage);
            let _ = fs::write(&marker, format!("{e}\n"));
            Err(e)
        }
    }
}

pub fn session_id_of(dir: &Path) -> Result<String> {
    let manifest: crate::session::SessionManifest = read_json(&dir.join(crate::ingest::MANIFEST_FILE))?;
    Ok(manifest.session_id)
}

/// Generate the configured synthetic sessions under `<out>/sessions`.
pub fn cmd_simulate(cfg: &RunConfig, layout: &Layout) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    (0..cfg.n_sessions)
        .into_par_iter()
        .map(|i| {
            let mut sc = cfg.synth.clone();
            let base = sc.session_id();
            sc.rng_seed = derive_seed(cfg.seed, &[TAG_SYNTH, cfg.synth.rng_seed, i as u64]);
            let id = if cfg.n_sessions == 1 { base } else { format!("{base}-{i}") };
            sc.session_id = Some(id.clone());
            let dir = layout.session(&id);
            staged("simulate", &dir, || {
                let s = generate_session(&sc)?;
                write_synth_session(&dir, &s)
            })?;
            Ok(dir)
        })
        .collect()
}

/// Load a session and check its timestamps and samples.
pub fn cmd_validate(session: &Path) -> Result<ValidationReport> {
    let s = load_session(session).map_err(|e| e.in_stage("validate"))?;
    Ok(validate_recording(&s.eeg))
}

fn ensure_valid(s: &SessionDir, dir: &Path) -> Result<()> {
    let v = validate_recording(&s.eeg);
    if v.monotonicity_violations.is_empty() && v.non_finite.is_empty() {
        Ok(())
    } else {
        Err(Error::Data(format!(
            "{}: {} timestamp violations, {} non-finite samples",
            dir.display(),
            v.monotonicity_violations.len(),
            v.non_finite.len()
        )))
    }
}

/// Clean one session into `<out>/runs/<id>/preprocessed`.
pub fn cmd_preprocess(session: &Path, cfg: &RunConfig, layout: &Layout) -> Result<PreprocessReport> {
    let s = load_session(session).map_err(|e| e.in_stage("preprocess"))?;
    let id = s.manifest.session_id.clone();
    let dir = layout.preprocessed(&id);
    staged("preprocess", &dir, || {
        ensure_valid(&s, session)?;
        let mut pc = cfg.preprocess.clone();
        pc.bad_channels.ransac_seed =
            derive_seed(cfg.seed, &[TAG_PREP, cfg.preprocess.bad_channels.ransac_seed, fnv1a(&id)]);
        let (eeg, report) = preprocess_session(&s.eeg, &pc)?;
        log::info!("{id}: bad channels {:?}", report.final_bad);
        let cleaned = SessionDir { manifest: s.manifest.clone(), eeg, joystick: s.joystick.clone() };
        write_session(&dir, &cleaned)?;
        write_json(&dir.join(PREPROCESS_REPORT_FILE), &report)?;
        Ok(report)
    })
}

/// Write one label file per configured horizon.
pub fn cmd_label(session: &Path, cfg: &RunConfig, layout: &Layout) -> Result<Vec<PathBuf>> {
    let s = load_session(session).map_err(|e| e.in_stage("label"))?;
    let id = s.manifest.session_id.clone();
    let dir = layout.labels_dir(&id);
    staged("label", &dir, || {
        let ts = s.eeg.timestamps();
        cfg.horizons_ms
            .iter()
            .map(|&h| {
                let labels = label_at_horizon(ts, &s.joystick, &cfg.labelling, h, &cfg.alignment);
                if labels.is_empty() {
                    return Err(Error::Data(format!("{id}: no samples labelled at {} ms", h.ms())));
                }
                let path = layout.labels(&id, h);
                write_labels_csv(&path, &labels)?;
                Ok(path)
            })
            .collect()
    })
}

/// Window the preprocessed session at every horizon whose labels exist.
pub fn cmd_split(session_id: &str, cfg: &RunConfig, layout: &Layout) -> Result<Vec<[PathBuf; 2]>> {
    cfg.horizons_ms.par_iter().map(|&h| split_one(session_id, h, cfg, layout)).collect()
}

pub fn split_one(id: &str, h: Horizon, cfg: &RunConfig, layout: &Layout) -> Result<[PathBuf; 2]> {
    let dir = layout.windows_dir(id);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e).in_stage("split"))?;
    let run = || -> Result<[PathBuf; 2]> {
        let s = load_session(&layout.preprocessed(id))?;
        let labels = read_labels_csv(&layout.labels(id, h), s.eeg.timestamps(), h)?;
        let labels = trim_edges(&labels, &s.eeg, cfg.preprocess.filter.edge_trim_s);
        let mut sc = cfg.split.clone();
        sc.rng_seed = split_seed(cfg, id, h);
        let per_train = cfg.preprocess.zscore == ZScoreScope::TrainPartition;
        let ds = build_split(&s.eeg, &labels, &sc, per_train)?;
        let names: Vec<String> = s.eeg.channel_names().iter().map(|n| n.to_string()).collect();
        write_split(&dir, &ds, h, id, &names)
    };
    run().map_err(|e| e.in_stage("split"))
}

/// Train one model on a training windows file. Output goes next to the
/// session's other artifacts, located through the sidecar.
pub fn cmd_train(windows: &Path, model: ModelKind, cfg: &RunConfig, layout: &Layout) -> Result<PathBuf> {
    let ws = load_window_set(windows).map_err(|e| e.in_stage("train"))?;
    if ws.sidecar.partition != Partition::Train {
        return Err(Error::Data(format!("{} is not a training partition", windows.display())).in_stage("train"));
    }
    let h = Horizon::new(ws.sidecar.delta_ms).map_err(|e| e.in_stage("train"))?;
    let id = ws.sidecar.session_id.clone();
    let dir = layout.model_dir(&id, model, h);
    staged("train", &dir, || {
        let spec = match model {
            ModelKind::Linear => ModelSpec::linear(ws.n_channels, ws.window_len),
            ModelKind::ShallowConvnet => {
                ModelSpec::shallow(ws.n_channels, ws.window_len, cfg.shallow_convnet.clone())
            }
        };
        let counts = ws.sidecar.class_counts_pre_oversample.unwrap_or_else(|| {
            let mut c = [0; 5];
            for l in &ws.labels {
                c[l.index()] += 1;
            }
            c
        });
        let mut tc = cfg.train.clone();
        tc.rng_seed = train_seed(cfg, &id, h, model);
        let weights = tc.resolve_weights(&counts);
        let out = train::<f32>(&spec, &ws.data, &ws.labels, weights, &tc)?;
        let ckpt = Checkpoint {
            spec,
            seed: tc.rng_seed,
            delta_ms: h.ms(),
            class_weights: out.class_weights,
            params: out.params,
        };
        let path = dir.join(CHECKPOINT_FILE);
        write_checkpoint(&path, &ckpt)?;
        let loss_path = dir.join(LOSS_FILE);
        let mut f = create_file(&loss_path)?;
        let io = |e| Error::io(&loss_path, e);
        writeln!(f, "epoch,loss").map_err(io)?;
        for (i, l) in out.loss_trace.iter().enumerate() {
            writeln!(f, "{i},{l:.9}").map_err(io)?;
        }
        f.flush().map_err(io)?;
        Ok(path)
    })
}

/// Evaluate a checkpoint on a test windows file and store the run record.
pub fn cmd_eval(checkpoint: &Path, test: &Path, layout: &Layout) -> Result<RunRecord> {
    let run = || -> Result<(RunRecord, PathBuf)> {
        let ckpt = read_checkpoint(checkpoint)?;
        let ws = load_window_set(test)?;
        if ws.sidecar.partition != Partition::Test {
            return Err(Error::Data(format!("{} is not a test partition", test.display())));
        }
        if ws.sidecar.delta_ms != ckpt.delta_ms {
            return Err(Error::Data(format!(
                "checkpoint horizon {} ms vs windows horizon {} ms",
                ckpt.delta_ms, ws.sidecar.delta_ms
            )));
        }
        if ws.is_empty() {
            return Err(Error::Data(format!("{}: no test windows", test.display())));
        }
        let pred = Network::new(&ckpt.spec, &ckpt.params)?.predict(&ws.data)?;
        let cm = confusion(&ws.labels, &pred)?;
        let h = Horizon::new(ckpt.delta_ms)?;
        let id = &ws.sidecar.session_id;
        let rec = RunRecord::new(ckpt.spec.kind.name(), h.ms(), id, cm)?;
        Ok((rec, layout.eval(id, ckpt.spec.kind, h)))
    };
    let (rec, path) = run().map_err(|e| e.in_stage("eval"))?;
    write_json(&path, &rec).map_err(|e| e.in_stage("eval"))?;
    Ok(rec)
}

/// Collect the run records of the configured models and horizons and write
/// the report files.
pub fn cmd_report(cfg: &RunConfig, layout: &Layout) -> Result<BenchmarkReport> {
    let dir = layout.report_dir();
    let runs_root = layout.root.join("runs");
    staged("report", &dir, || {
        let mut ids: Vec<String> = fs::read_dir(&runs_root)
            .map_err(|e| Error::io(&runs_root, e))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .filter_map(|e| e.file_name().into_string().ok())
            .collect();
        ids.sort();
        let mut runs = Vec::new();
        for id in &ids {
            for &m in &cfg.models {
                for &h in &cfg.horizons_ms {
                    let p = layout.eval(id, m, h);
                    if p.exists() {
                        runs.push(read_json::<RunRecord>(&p)?);
                    }
                }
            }
        }
        if runs.is_empty() {
            return Err(Error::Data(format!("no evaluation records under {}", runs_root.display())));
        }
        let report = BenchmarkReport::from_runs(runs)?;
        emit_report(&report, &dir)?;
        Ok(report)
    })
}

/// Everything after the session files exist, for one session.
fn run_session(session: &Path, cfg: &RunConfig, layout: &Layout) -> Result<()> {
    let id = session_id_of(session).map_err(|e| e.in_stage("preprocess"))?;
    cmd_preprocess(session, cfg, layout)?;
    cmd_label(session, cfg, layout)?;
    let tasks: Vec<(Horizon, ModelKind)> = cfg
        .horizons_ms
        .iter()
        .flat_map(|&h| cfg.models.iter().map(move |&m| (h, m)))
        .collect();
    cmd_split(&id, cfg, layout)?;
    tasks.par_iter().try_for_each(|&(h, m)| {
        let ckpt = cmd_train(&layout.windows(&id, h, Partition::Train), m, cfg, layout)?;
        cmd_eval(&ckpt, &layout.windows(&id, h, Partition::Test), layout)?;
        Ok(())
    })
}

/// Simulate (when no sessions are configured), then run every stage for
/// every session and write the report.
pub fn cmd_run_all(cfg: &RunConfig, layout: &Layout) -> Result<BenchmarkReport> {
    cfg.validate()?;
    let sessions = if cfg.sessions.is_empty() {
        cmd_simulate(cfg, layout)?
    } else {
        cfg.sessions.clone()
    };
    sessions.par_iter().try_for_each(|s| run_session(s, cfg, layout))?;
    cmd_report(cfg, layout)
}

/// Run `f` on a rayon pool of `jobs` threads (0 = all cores).
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}
