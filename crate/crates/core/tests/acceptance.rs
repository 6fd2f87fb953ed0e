//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any criterion fails.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use bcv_bench::config::RunConfig;
use bcv_bench::ingest::{align_nearest, AlignmentConfig};
use bcv_bench::labelling::{classify_command, LabelRule, LabeledSample};
use bcv_bench::metrics::{confusion, metrics_from_confusion, ConfusionMatrix};
use bcv_bench::models::{Dropout, ModelKind, ModelParams, ModelSpec, Network, ShallowConvNetSpec};
use bcv_bench::pipeline::{cmd_run_all, Layout, PREPROCESS_REPORT_FILE};
use bcv_bench::preprocess::{design_highpass, design_notch, filter_zero_phase, FilterSpec, PreprocessReport};
use bcv_bench::report::BenchmarkReport;
use bcv_bench::session::{montage_of_size, CommandLabel, EegRecording, Horizon, JoystickSample, Timestamp};
use bcv_bench::split::{build_split, class_counts, stratified_temporal_split, SplitConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn within(elapsed: Duration, budget_s: f64) -> bool {
    elapsed.as_secs_f64() < budget_s
}

// 1. Labelling truth table over the 49-point grid.
fn labelling_oracle() -> Outcome {
    let t0 = Instant::now();
    let (tau, eps) = (0.1, 1e-6);
    let grid = [-1.0, -0.5, -tau - eps, -tau, 0.0, tau, tau + eps, 0.5, 1.0];
    // Whether each grid value is outside the dead band, and its sign.
    let active = [true, true, true, false, false, false, true, true, true];
    let positive = [false, false, false, false, false, true, true, true, true];
    let rule = LabelRule { tau };
    let mut mismatches = Vec::new();
    for (i, &v) in grid.iter().enumerate() {
        for (j, &w) in grid.iter().enumerate() {
            let expected = match (active[i], active[j]) {
                (false, false) => Some(CommandLabel::Stop),
                (true, false) if positive[i] => Some(CommandLabel::Forward),
                (true, false) => Some(CommandLabel::Reverse),
                (false, true) if positive[j] => Some(CommandLabel::Left),
                (false, true) => Some(CommandLabel::Right),
                (true, true) => None,
            };
            if classify_command(v, w, &rule) != expected {
                mismatches.push((v, w));
            }
        }
    }
    let el = t0.elapsed();
    outcome(
        mismatches.is_empty() && within(el, 1.0),
        format!("{} of 81 cells wrong, {:.1} ms", mismatches.len(), el.as_secs_f64() * 1e3),
    )
}

// 2. Nearest-neighbour alignment against brute force.
fn alignment_oracle() -> Outcome {
    let t0 = Instant::now();
    let cfg = AlignmentConfig::default();
    let max_gap = (cfg.max_gap_ms * 1e6) as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut bad = 0;
    for _ in 0..200 {
        let nt = rng.random_range(1..=2000);
        let nj = rng.random_range(1..=2000);
        // Millisecond-quantised times make equidistant ties common.
        let mut t = 0u64;
        let eeg: Vec<Timestamp> = (0..nt)
            .map(|_| {
                t += rng.random_range(0..=12) * 1_000_000;
                Timestamp::from_nanos(t)
            })
            .collect();
        let mut t = 0u64;
        let joy: Vec<JoystickSample> = (0..nj)
            .map(|_| {
                t += rng.random_range(1..=300) * 1_000_000;
                JoystickSample::new(Timestamp::from_nanos(t), 0.0, 0.0).unwrap()
            })
            .collect();
        let got = align_nearest(&eeg, &joy, &cfg);
        for (i, e) in eeg.iter().enumerate() {
            let mut best: Option<(u64, usize)> = None;
            for (j, s) in joy.iter().enumerate() {
                let d = e.nanos().abs_diff(s.t.nanos());
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, j));
                }
            }
            let expect = best.and_then(|(d, j)| (d <= max_gap).then_some(j));
            if got[i] != expect {
                bad += 1;
            }
        }
    }
    let el = t0.elapsed();
    outcome(bad == 0 && within(el, 10.0), format!("{bad} mismatched samples over 200 instances, {:.2} s", el.as_secs_f64()))
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

fn sine(f: f64, fs: f64, n: usize, phase: f64) -> Vec<f64> {
    (0..n).map(|i| (2.0 * PI * f * i as f64 / fs + phase).sin()).collect()
}

// 3. Filter responses of the default high-pass + notch chain.
fn filter_responses() -> Outcome {
    let t0 = Instant::now();
    let fs = 125.0;
    let spec = FilterSpec::default();
    let sos = design_highpass(&spec, fs).unwrap().then(&design_notch(&spec, fs).unwrap());
    let n = (4.0 * fs) as usize;

    let x50 = sine(50.0, fs, n, 0.3);
    let att = 20.0 * (rms(&x50) / rms(&filter_zero_phase(&x50, &sos).unwrap())).log10();
    let x10 = sine(10.0, fs, n, 0.3);
    let y10 = filter_zero_phase(&x10, &sos).unwrap();
    let loss = 20.0 * (rms(&x10) / rms(&y10)).log10();

    let dc = vec![3.0; n];
    let ydc = filter_zero_phase(&dc, &sos).unwrap();
    let trim = fs as usize;
    let dc_rel = ydc[trim..n - trim].iter().fold(0.0f64, |m, v| m.max(v.abs())) / 3.0;

    let xcorr = |lag: i64| -> f64 {
        (0..n as i64)
            .filter_map(|i| {
                let j = i + lag;
                (0..n as i64).contains(&j).then(|| x10[i as usize] * y10[j as usize])
            })
            .sum()
    };
    let peak = (-10i64..=10).max_by(|&a, &b| xcorr(a).total_cmp(&xcorr(b))).unwrap();

    let el = t0.elapsed();
    let pass = att >= 30.0 && loss <= 1.0 && dc_rel <= 1e-6 && peak == 0 && within(el, 5.0);
    outcome(
        pass,
        format!(
            "50 Hz -{att:.1} dB, 10 Hz loss {loss:.3} dB, DC residual {dc_rel:.1e}, lag {peak}, {:.2} s",
            el.as_secs_f64()
        ),
    )
}

fn random_label_stream(rng: &mut ChaCha8Rng) -> (EegRecording, Vec<LabeledSample>) {
    let n = rng.random_range(3000..9000);
    let mut labels = Vec::with_capacity(n);
    let mut class = CommandLabel::ALL[rng.random_range(0..5)];
    let mut left = 0;
    let ts: Vec<Timestamp> = (0..n).map(|i| Timestamp::from_nanos(i as u64 * 8_000_000)).collect();
    let delta = Horizon::new(0).unwrap();
    for (i, &t) in ts.iter().enumerate() {
        if left == 0 {
            class = CommandLabel::ALL[rng.random_range(0..5)];
            left = rng.random_range(20..600);
        }
        left -= 1;
        // Occasional unlabelled samples leave gaps in the stream.
        if rng.random_bool(0.03) {
            continue;
        }
        labels.push(LabeledSample { index: i, t, label: class, delta });
    }
    let rows = (0..2).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let rec = EegRecording::new(montage_of_size(2), ts, rows, 125.0).unwrap();
    (rec, labels)
}

// 4. Split integrity on random label streams.
fn split_integrity() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut failures = Vec::new();
    let mut worst_frac = 0.0f64;
    for stream in 0..50 {
        let (rec, labels) = random_label_stream(&mut rng);
        let cfg = SplitConfig { rng_seed: stream, ..SplitConfig::default() };
        let (train_pos, _) = stratified_temporal_split(&labels, &cfg).unwrap();
        let ds = build_split(&rec, &labels, &cfg, false).unwrap();
        let plain = build_split(&rec, &labels, &SplitConfig { oversample: false, ..cfg.clone() }, false).unwrap();

        let train_src: BTreeSet<usize> = ds.train.iter().flat_map(|w| w.sources.iter().copied()).collect();
        if ds.test.iter().any(|w| w.sources.iter().any(|i| train_src.contains(i))) {
            failures.push(format!("stream {stream}: train/test overlap"));
        }

        for class in CommandLabel::ALL {
            let total = labels.iter().filter(|l| l.label == class).count();
            if total >= 400 {
                let tr = train_pos.iter().filter(|&&p| labels[p].label == class).count();
                let frac = tr as f64 / total as f64;
                worst_frac = worst_frac.max((frac - 0.7).abs());
                if !(0.68..=0.72).contains(&frac) {
                    failures.push(format!("stream {stream}: {class} train fraction {frac:.3}"));
                }
            }
        }

        let by_index: std::collections::HashMap<usize, CommandLabel> =
            labels.iter().map(|l| (l.index, l.label)).collect();
        for w in ds.train.iter().chain(&ds.test) {
            let mut counts = [0usize; 5];
            for i in &w.sources {
                counts[by_index[i].index()] += 1;
            }
            let top = *counts.iter().max().unwrap();
            let first = counts.iter().position(|&c| c == top).unwrap();
            if w.label.index() != first {
                failures.push(format!("stream {stream}: window majority mismatch"));
                break;
            }
        }

        let hist = class_counts(&ds.train);
        let present: Vec<usize> = hist.iter().copied().filter(|&c| c > 0).collect();
        if present.windows(2).any(|p| p[0] != p[1]) {
            failures.push(format!("stream {stream}: train histogram {hist:?}"));
        }
        if ds.train_counts_pre_oversample != class_counts(&plain.train) {
            failures.push(format!("stream {stream}: pre-oversampling counts differ"));
        }
        if class_counts(&ds.test) != class_counts(&plain.test) || ds.test != plain.test {
            failures.push(format!("stream {stream}: test partition changed by oversampling"));
        }
    }
    let el = t0.elapsed();
    outcome(
        failures.is_empty() && within(el, 30.0),
        match failures.first() {
            None => format!("50 streams clean, max |train fraction - 0.7| {worst_frac:.4}, {:.2} s", el.as_secs_f64()),
            Some(f) => format!("{} failures, first: {f}", failures.len()),
        },
    )
}

/// Norm-relative central-difference error per tensor over sampled coordinates.
fn gradient_errors(spec: &ModelSpec, seed: u64, per_tensor: usize) -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = ModelParams::<f64>::init(spec, seed);
    let n = 8;
    let x: Vec<f64> = (0..n * spec.window_size()).map(|_| rng.random_range(-2.0..2.0)).collect();
    let y: Vec<CommandLabel> = (0..n).map(|_| CommandLabel::ALL[rng.random_range(0..5)]).collect();
    let w = [1.4, 0.6, 1.0, 2.2, 0.8];
    let drop = match spec.kind {
        ModelKind::ShallowConvnet => Some(Dropout { p: 0.5, seed: seed ^ 0xd0, step: 1 }),
        ModelKind::Linear => None,
    };
    let (_, g) = Network::new(spec, &p).unwrap().loss_and_grad(&x, &y, &w, drop).unwrap();
    let h = 1e-4;
    p.tensors
        .iter()
        .enumerate()
        .map(|(ti, t)| {
            let coords: Vec<usize> = if t.data.len() <= per_tensor {
                (0..t.data.len()).collect()
            } else {
                rand::seq::index::sample(&mut rng, t.data.len(), per_tensor).into_vec()
            };
            let (mut num, mut den) = (0.0f64, 0.0f64);
            for i in coords {
                let mut q = p.clone();
                q.tensors[ti].data[i] += h;
                let lp = Network::new(spec, &q).unwrap().loss(&x, &y, &w, drop).unwrap();
                q.tensors[ti].data[i] -= 2.0 * h;
                let lm = Network::new(spec, &q).unwrap().loss(&x, &y, &w, drop).unwrap();
                let fd = (lp - lm) / (2.0 * h);
                let a = g.tensors[ti].data[i];
                num += (a - fd) * (a - fd);
                den += a * a;
            }
            (t.name.clone(), num.sqrt() / den.sqrt().max(1e-12))
        })
        .collect()
}

// 5. Gradient checks on the default geometries.
fn gradient_checks() -> Outcome {
    let t0 = Instant::now();
    let specs = [
        ModelSpec::linear(16, 125),
        ModelSpec::shallow(16, 125, ShallowConvNetSpec::default()),
    ];
    let mut worst = ("", String::new(), 0.0f64);
    for spec in &specs {
        for (name, err) in gradient_errors(spec, 5, 64) {
            if err >= worst.2 {
                worst = (spec.kind.name(), name, err);
            }
        }
    }
    let el = t0.elapsed();
    outcome(
        worst.2 < 1e-4 && within(el, 60.0),
        format!("worst {} {} rel err {:.2e}, {:.1} s", worst.0, worst.1, worst.2, el.as_secs_f64()),
    )
}

fn f1(report: &BenchmarkReport, model: ModelKind, ms: u32) -> f64 {
    report.aggregate(model.name(), ms).map_or(f64::NAN, |a| a.mean.macro_f1)
}

fn cores() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

// 6. Full synthetic benchmark; the report is reused by criterion 7.
fn synthetic_benchmark(root: &Path) -> (Outcome, Option<BenchmarkReport>) {
    let cfg = RunConfig { out_dir: Some(root.to_path_buf()), ..RunConfig::default() };
    let t0 = Instant::now();
    let report = match cmd_run_all(&cfg, &Layout::new(root)) {
        Ok(r) => r,
        Err(e) => return (outcome(false, format!("run-all failed: {e}")), None),
    };
    let el = t0.elapsed();
    // 10 minutes on a 4-core reference machine, scaled to the cores present.
    let budget = 600.0 * 4.0 / cores().min(4) as f64;
    let shallow = f1(&report, ModelKind::ShallowConvnet, 300);
    let linear = f1(&report, ModelKind::Linear, 300);
    let chance3 = 3.0 * 0.2;
    let pass = shallow >= 0.85 && linear >= 0.55 && shallow >= chance3 && linear >= chance3 && within(el, budget);
    let o = outcome(
        pass,
        format!(
            "macro-F1 at 300 ms: shallow_convnet {shallow:.3} (>= 0.85), linear {linear:.3} (>= 0.55), \
             3x chance {chance3:.2}; {:.0} s on {} core(s), budget {budget:.0} s",
            el.as_secs_f64(),
            cores()
        ),
    );
    (o, Some(report))
}

// 7. F1 must drop when the horizon moves away from the generative lag.
fn horizon_sensitivity(report: Option<&BenchmarkReport>) -> Outcome {
    let Some(r) = report else {
        return outcome(false, "no benchmark report");
    };
    let (a, b) = (f1(r, ModelKind::ShallowConvnet, 300), f1(r, ModelKind::ShallowConvnet, 1000));
    outcome(a - b >= 0.05, format!("shallow_convnet F1 300 ms {a:.3} vs 1000 ms {b:.3}, drop {:.3} (>= 0.05)", a - b))
}

/// Per-class counts straight from the pairs, then the metric definitions.
fn brute_force_metrics(t: &[CommandLabel], p: &[CommandLabel]) -> (f64, f64, f64, f64) {
    let mut correct = 0usize;
    let (mut sp, mut sr, mut sf, mut present) = (0.0, 0.0, 0.0, 0.0);
    for k in CommandLabel::ALL {
        let (mut tp, mut fp, mut fnn) = (0usize, 0usize, 0usize);
        for (a, b) in t.iter().zip(p) {
            match (*a == k, *b == k) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fnn += 1,
                _ => {}
            }
        }
        correct += tp;
        if tp + fnn == 0 {
            continue;
        }
        let prec = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let rec = tp as f64 / (tp + fnn) as f64;
        let f = if prec + rec == 0.0 { 0.0 } else { 2.0 * prec * rec / (prec + rec) };
        sp += prec;
        sr += rec;
        sf += f;
        present += 1.0;
    }
    (correct as f64 / t.len() as f64, sp / present, sr / present, sf / present)
}

// 8. Metrics against brute force, plus the constant-predictor value.
fn metrics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let mut cm = ConfusionMatrix::default();
        while cm.total() == 0 {
            for row in cm.counts.iter_mut() {
                for c in row.iter_mut() {
                    *c = if rng.random_bool(0.2) { 0 } else { rng.random_range(0..40) };
                }
            }
        }
        let (mut t, mut p) = (Vec::new(), Vec::new());
        for i in 0..5 {
            for j in 0..5 {
                for _ in 0..cm.counts[i][j] {
                    t.push(CommandLabel::ALL[i]);
                    p.push(CommandLabel::ALL[j]);
                }
            }
        }
        let m = metrics_from_confusion(&cm).unwrap();
        let b = brute_force_metrics(&t, &p);
        for (x, y) in [(m.accuracy, b.0), (m.macro_precision, b.1), (m.macro_recall, b.2), (m.macro_f1, b.3)] {
            worst = worst.max((x - y).abs());
        }
    }
    let truth: Vec<CommandLabel> = CommandLabel::ALL.iter().flat_map(|&c| [c; 20]).collect();
    let constant = vec![CommandLabel::Stop; truth.len()];
    let m = metrics_from_confusion(&confusion(&truth, &constant).unwrap()).unwrap();
    let pass = worst <= 1e-12 && m.macro_f1 == 1.0 / 15.0;
    outcome(pass, format!("max deviation {worst:.1e} over 100 matrices, constant predictor macro-F1 {:.17}", m.macro_f1))
}

fn checkpoints(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).into_iter().flatten().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n == "checkpoint.bin") {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

// 9. Two identical run-all executions give identical bytes.
fn determinism(root: &Path) -> Outcome {
    let mut cfg = RunConfig::default();
    cfg.n_sessions = 1;
    cfg.horizons_ms = vec![Horizon::new(300).unwrap()];
    cfg.synth.duration_s = 60.0;
    cfg.train.epochs = 3;
    cfg.seed = 9;
    let (a, b) = (root.join("a"), root.join("b"));
    for dir in [&a, &b] {
        if let Err(e) = cmd_run_all(&cfg, &Layout::new(dir)) {
            return outcome(false, format!("run-all failed: {e}"));
        }
    }
    let same = |x: &Path, y: &Path| fs::read(x).ok().is_some_and(|bx| fs::read(y).ok() == Some(bx));
    let metrics_same = same(&a.join("report/metrics.csv"), &b.join("report/metrics.csv"));
    let (ca, cb) = (checkpoints(&a), checkpoints(&b));
    let ckpt_same = !ca.is_empty()
        && ca.len() == cb.len()
        && ca.iter().all(|p| same(p, &b.join(p.strip_prefix(&a).unwrap())));
    outcome(
        metrics_same && ckpt_same,
        format!("metrics.csv identical: {metrics_same}, {} checkpoints identical: {ckpt_same}", ca.len()),
    )
}

// 10. Dead channel plus 10x line noise.
fn corruption_recovery(root: &Path) -> Outcome {
    let mut cfg = RunConfig::default();
    cfg.n_sessions = 1;
    cfg.horizons_ms = vec![Horizon::new(300).unwrap()];
    cfg.models = vec![ModelKind::ShallowConvnet];
    cfg.synth.dead_channel = Some("C3".into());
    cfg.synth.line_noise_factor = Some(10.0);
    let layout = Layout::new(root);
    let report = match cmd_run_all(&cfg, &layout) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("run-all failed: {e}")),
    };
    let id = &report.runs[0].run_id;
    let prep: PreprocessReport =
        serde_json::from_slice(&fs::read(layout.preprocessed(id).join(PREPROCESS_REPORT_FILE)).unwrap()).unwrap();
    let flagged = prep.final_bad.iter().any(|c| c == "C3");
    let interpolated = prep.interpolated.iter().any(|c| c == "C3");
    let score = f1(&report, ModelKind::ShallowConvnet, 300);
    outcome(
        flagged && interpolated && score >= 0.85 - 0.05,
        format!(
            "C3 flagged {flagged}, interpolated {interpolated}, bad set {:?}, shallow_convnet F1 {score:.3} (>= 0.80)",
            prep.final_bad
        ),
    )
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        outcome(false, format!("panicked: {msg}"))
    })
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut record = |name, o: Outcome| {
        println!("[{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((name, o));
    };

    record("1 labelling oracle", guarded(labelling_oracle));
    record("2 alignment oracle", guarded(alignment_oracle));
    record("3 filter responses", guarded(filter_responses));
    record("4 split integrity", guarded(split_integrity));
    record("5 gradient checks", guarded(gradient_checks));
    let mut bench = None;
    let c6 = guarded(|| {
        let (o, r) = synthetic_benchmark(&tmp.path().join("bench"));
        bench = r;
        o
    });
    record("6 synthetic benchmark", c6);
    record("7 horizon sensitivity", guarded(|| horizon_sensitivity(bench.as_ref())));
    record("8 metrics oracle", guarded(metrics_oracle));
    record("9 determinism", guarded(|| determinism(&tmp.path().join("det"))));
    record("10 corruption recovery", guarded(|| corruption_recovery(&tmp.path().join("corrupt"))));

    let failed: Vec<&str> = results.iter().filter(|(_, o)| !o.pass).map(|(n, _)| *n).collect();
    println!("{} of {} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
