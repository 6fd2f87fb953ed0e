use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bcv_bench::config::RunConfig;
use bcv_bench::models::ModelKind;
use bcv_bench::pipeline::{self, Layout};
use bcv_bench::Result;

#[derive(Parser)]
#[command(name = "bcv-bench", version, about = "Multi-horizon EEG driving-command decoding benchmark")]
struct Cli {
    /// JSON run configuration; omitted fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output root (overrides `out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads, 0 for all cores (overrides `jobs`).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Global seed (overrides `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate synthetic sessions under <out>/sessions.
    Simulate,
    /// Check a session's timestamps and samples.
    Validate { session: PathBuf },
    /// Filter, re-reference, interpolate and z-score a session.
    Preprocess { session: PathBuf },
    /// Write label files for every configured horizon.
    Label { session: PathBuf },
    /// Build train/test windows from the preprocessed session and labels.
    Split { session: PathBuf },
    /// Train one model on a training windows file.
    Train {
        windows: PathBuf,
        #[arg(long, value_parser = parse_model)]
        model: ModelKind,
    },
    /// Evaluate a checkpoint on a test windows file.
    Eval { checkpoint: PathBuf, windows: PathBuf },
    /// Aggregate evaluation records into the report.
    Report,
    /// Every stage for every session, then the report.
    RunAll,
    /// Show the effective configuration.
    Config {
        /// Print the built-in defaults instead of the merged configuration.
        #[arg(long)]
        print_defaults: bool,
    },
}

fn parse_model(s: &str) -> std::result::Result<ModelKind, String> {
    ModelKind::parse(s).map_err(|e| e.to_string())
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.out_dir = Some(out.clone());
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serialisable"));
}

fn run(cli: Cli) -> Result<()> {
    if let Cmd::Config { print_defaults: true } = cli.cmd {
        println!("{}", RunConfig::default().to_json());
        return Ok(());
    }
    let cfg = load_config(&cli)?;
    let layout = Layout::new(cfg.out_dir());
    let session_id = |p: &Path| pipeline::session_id_of(p);
    pipeline::with_jobs(cfg.jobs, || -> Result<()> {
        match &cli.cmd {
            Cmd::Simulate => {
                for d in pipeline::cmd_simulate(&cfg, &layout)? {
                    println!("{}", d.display());
                }
            }
            Cmd::Validate { session } => {
                let report = pipeline::cmd_validate(session)?;
                print_json(&report);
                if !report.is_empty() {
                    return Err(bcv_bench::Error::Data(format!("{} failed validation", session.display())));
                }
            }
            Cmd::Preprocess { session } => print_json(&pipeline::cmd_preprocess(session, &cfg, &layout)?),
            Cmd::Label { session } => {
                for p in pipeline::cmd_label(session, &cfg, &layout)? {
                    println!("{}", p.display());
                }
            }
            Cmd::Split { session } => {
                let id = session_id(session)?;
                for pair in pipeline::cmd_split(&id, &cfg, &layout)? {
                    for p in pair {
                        println!("{}", p.display());
                    }
                }
            }
            Cmd::Train { windows, model } => {
                println!("{}", pipeline::cmd_train(windows, *model, &cfg, &layout)?.display());
            }
            Cmd::Eval { checkpoint, windows } => {
                print_json(&pipeline::cmd_eval(checkpoint, windows, &layout)?.metrics);
            }
            Cmd::Report => {
                let r = pipeline::cmd_report(&cfg, &layout)?;
                println!("{} runs -> {}", r.runs.len(), layout.report_dir().display());
            }
            Cmd::RunAll => {
                let r = pipeline::cmd_run_all(&cfg, &layout)?;
                for a in &r.aggregates {
                    println!(
                        "{:<16} {:>5} ms  macro-F1 {:.3} +- {:.3}  acc {:.3}",
                        a.model, a.horizon_ms, a.mean.macro_f1, a.std.macro_f1, a.mean.accuracy
                    );
                }
            }
            Cmd::Config { .. } => println!("{}", cfg.to_json()),
        }
        Ok(())
    })?
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
