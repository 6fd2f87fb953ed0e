use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use bcv_bench::config::RunConfig;
use bcv_bench::pipeline::{self, Layout, INCOMPLETE_MARKER};
use bcv_bench::session::Horizon;
use bcv_bench::tensorfile::Partition;

fn small_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.n_sessions = 1;
    cfg.horizons_ms = vec![Horizon::new(300).unwrap()];
    cfg.synth.duration_s = 60.0;
    cfg.train.epochs = 2;
    cfg
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn stages_run_one_by_one_match_run_all() {
    let cfg = small_config();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pipeline::cmd_run_all(&cfg, &Layout::new(a.path())).unwrap();

    let layout = Layout::new(b.path());
    let sessions = pipeline::cmd_simulate(&cfg, &layout).unwrap();
    assert_eq!(sessions.len(), 1);
    let session = &sessions[0];
    assert!(pipeline::cmd_validate(session).unwrap().is_empty());
    pipeline::cmd_preprocess(session, &cfg, &layout).unwrap();
    pipeline::cmd_label(session, &cfg, &layout).unwrap();
    let id = pipeline::session_id_of(session).unwrap();
    pipeline::cmd_split(&id, &cfg, &layout).unwrap();
    let h = cfg.horizons_ms[0];
    for &m in &cfg.models {
        let ckpt = pipeline::cmd_train(&layout.windows(&id, h, Partition::Train), m, &cfg, &layout).unwrap();
        assert_eq!(ckpt, layout.checkpoint(&id, m, h));
        pipeline::cmd_eval(&ckpt, &layout.windows(&id, h, Partition::Test), &layout).unwrap();
    }
    pipeline::cmd_report(&cfg, &layout).unwrap();

    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (k, v) in &ta {
        assert!(tb[k] == *v, "{} differs", k.display());
    }
    assert!(!ta.keys().any(|k| k.ends_with(INCOMPLETE_MARKER)));
}

#[test]
fn eval_rejects_a_training_partition() {
    let cfg = small_config();
    let dir = tempfile::tempdir().unwrap();
    let layout = Layout::new(dir.path());
    pipeline::cmd_run_all(&cfg, &layout).unwrap();
    let id = pipeline::session_id_of(&layout.session("synth-0")).unwrap();
    let h = cfg.horizons_ms[0];
    let m = cfg.models[0];
    let err = pipeline::cmd_eval(&layout.checkpoint(&id, m, h), &layout.windows(&id, h, Partition::Train), &layout)
        .unwrap_err();
    assert_eq!(err.exit_code(), 3);
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bcv-bench"))
}

#[test]
fn unknown_model_fails_before_any_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    fs::write(&cfg_path, r#"{"models": ["linear", "eegnet"]}"#).unwrap();
    let out = dir.path().join("out");
    let res = cli().arg("--config").arg(&cfg_path).arg("--out").arg(&out).arg("run-all").output().unwrap();
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("eegnet"));
    assert!(!out.exists());
}

#[test]
fn cli_reports_data_errors_and_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let res = cli().arg("validate").arg(dir.path().join("missing")).output().unwrap();
    assert_eq!(res.status.code(), Some(3));

    let res = cli().args(["config", "--print-defaults"]).output().unwrap();
    assert!(res.status.success());
    let text = String::from_utf8(res.stdout).unwrap();
    let parsed = RunConfig::from_json(&text, Path::new("stdout")).unwrap();
    assert_eq!(parsed, RunConfig::default());
}
