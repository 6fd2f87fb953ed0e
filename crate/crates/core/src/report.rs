//! Benchmark report: per-run metrics in long CSV form, summed confusion
//! matrices, a mean/std summary table and the F1-versus-horizon figure.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::create_file;
use crate::metrics::{aggregate_runs, metrics_from_confusion, ConfusionMatrix, MetricSet};
use crate::session::CommandLabel;

/// One evaluated (model, horizon, run) triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub model: String,
    pub horizon_ms: u32,
    pub run_id: String,
    pub n_test_windows: usize,
    pub confusion: ConfusionMatrix,
    pub metrics: MetricSet,
}

impl RunRecord {
    pub fn new(model: &str, horizon_ms: u32, run_id: &str, confusion: ConfusionMatrix) -> Result<Self> {
        Ok(RunRecord {
            model: model.to_string(),
            horizon_ms,
            run_id: run_id.to_string(),
            n_test_windows: confusion.total() as usize,
            metrics: metrics_from_confusion(&confusion)?,
            confusion,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub model: String,
    pub horizon_ms: u32,
    pub n_runs: usize,
    pub mean: MetricSet,
    pub std: MetricSet,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub runs: Vec<RunRecord>,
    pub aggregates: Vec<Aggregate>,
}

impl BenchmarkReport {
    /// Sort runs canonically and aggregate per (model, horizon).
    pub fn from_runs(mut runs: Vec<RunRecord>) -> Result<Self> {
        runs.sort_by(|a, b| {
            (&a.model, a.horizon_ms, &a.run_id).cmp(&(&b.model, b.horizon_ms, &b.run_id))
        });
        let mut groups: BTreeMap<(String, u32), Vec<&RunRecord>> = BTreeMap::new();
        for r in &runs {
            groups.entry((r.model.clone(), r.horizon_ms)).or_default().push(r);
        }
        let aggregates = groups
            .into_iter()
            .map(|((model, horizon_ms), rs)| {
                let sets: Vec<MetricSet> = rs.iter().map(|r| r.metrics).collect();
                let (mean, std) = aggregate_runs(&sets)?;
                let mut confusion = ConfusionMatrix::default();
                for r in &rs {
                    confusion.add(&r.confusion);
                }
                Ok(Aggregate { model, horizon_ms, n_runs: rs.len(), mean, std, confusion })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BenchmarkReport { runs, aggregates })
    }

    pub fn aggregate(&self, model: &str, horizon_ms: u32) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.model == model && a.horizon_ms == horizon_ms)
    }
}

pub fn confusion_file_name(model: &str, horizon_ms: u32) -> String {
    format!("confusion_{model}_{horizon_ms}.csv")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = create_file(path)?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn metrics_csv(report: &BenchmarkReport) -> String {
    let mut s = String::from("model,horizon_ms,run_id,metric,value\n");
    for r in &report.runs {
        for (name, v) in r.metrics.headline() {
            let _ = writeln!(s, "{},{},{},{name},{v:.12}", r.model, r.horizon_ms, r.run_id);
        }
    }
    s
}

pub fn summary_csv(report: &BenchmarkReport) -> String {
    let mut s = String::from(
        "model,horizon_ms,n_runs,aggregation,accuracy_mean,accuracy_std,macro_precision_mean,\
         macro_precision_std,macro_recall_mean,macro_recall_std,macro_f1_mean,macro_f1_std\n",
    );
    for a in &report.aggregates {
        let _ = write!(s, "{},{},{},pooled_runs_sample_std", a.model, a.horizon_ms, a.n_runs);
        for ((_, m), (_, d)) in a.mean.headline().iter().zip(a.std.headline()) {
            let _ = write!(s, ",{m:.12},{d:.12}");
        }
        s.push('\n');
    }
    s
}

pub fn confusion_csv(cm: &ConfusionMatrix) -> String {
    let mut s = String::from("true\\pred");
    for c in CommandLabel::ALL {
        let _ = write!(s, ",{}", c.name());
    }
    s.push('\n');
    for (i, row) in cm.counts.iter().enumerate() {
        s.push_str(CommandLabel::ALL[i].name());
        for v in row {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Mean macro-F1 against horizon, one polyline per model, with +-1 std bars.
pub fn f1_svg(report: &BenchmarkReport) -> String {
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (70.0, 150.0, 30.0, 60.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let horizons: Vec<u32> = {
        let mut v: Vec<u32> = report.aggregates.iter().map(|a| a.horizon_ms).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let (hmin, hmax) = (
        horizons.first().copied().unwrap_or(0) as f64,
        horizons.last().copied().unwrap_or(1000) as f64,
    );
    let span = if hmax > hmin { hmax - hmin } else { 1.0 };
    let x = |ms: f64| left + (ms - hmin) / span * pw;
    let y = |v: f64| top + (1.0 - v.clamp(0.0, 1.0)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        top + ph,
        left + pw,
        top + ph
    );
    let _ = writeln!(s, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/>"#, top + ph);
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{0:.2}" x2="{1:.2}" y2="{0:.2}" stroke="#dddddd"/><text x="{2}" y="{3:.2}" text-anchor="end">{v:.1}</text>"##,
            y(v),
            left + pw,
            left - 6.0,
            y(v) + 4.0
        );
    }
    for &ms in &horizons {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{ms}</text>"#,
            x(ms as f64),
            top + ph + 18.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{}" text-anchor="middle">prediction horizon (ms)</text>"#,
        left + pw / 2.0,
        h - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(20,{:.2}) rotate(-90)" text-anchor="middle">macro F1 (mean over runs)</text>"#,
        top + ph / 2.0
    );

    let mut models: Vec<&str> = report.aggregates.iter().map(|a| a.model.as_str()).collect();
    models.dedup();
    for (mi, model) in models.iter().enumerate() {
        let color = PALETTE[mi % PALETTE.len()];
        let pts: Vec<&Aggregate> = report.aggregates.iter().filter(|a| a.model == *model).collect();
        let mut d = String::new();
        for (i, a) in pts.iter().enumerate() {
            let _ = write!(
                d,
                "{}{:.2},{:.2}",
                if i == 0 { "M" } else { " L" },
                x(a.horizon_ms as f64),
                y(a.mean.macro_f1)
            );
        }
        let _ = writeln!(
            s,
            r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="2"><title>{model}</title></path>"#
        );
        for a in &pts {
            let (cx, m, sd) = (x(a.horizon_ms as f64), a.mean.macro_f1, a.std.macro_f1);
            let _ = writeln!(
                s,
                r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="{color}"/><circle cx="{cx:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                y(m - sd),
                y(m + sd),
                y(m)
            );
        }
        let ly = top + 10.0 + 20.0 * mi as f64;
        let lx = left + pw + 15.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{model}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Write metrics.csv, summary.csv, report.json, per-(model, horizon)
/// confusion CSVs and f1_vs_horizon.svg into `out_dir`.
pub fn emit_report(report: &BenchmarkReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: &str, text: &str| -> Result<()> {
        let p = out_dir.join(name);
        write_text(&p, text)?;
        written.push(p);
        Ok(())
    };
    put("metrics.csv", &metrics_csv(report))?;
    put("summary.csv", &summary_csv(report))?;
    for a in &report.aggregates {
        put(&confusion_file_name(&a.model, a.horizon_ms), &confusion_csv(&a.confusion))?;
    }
    put("f1_vs_horizon.svg", &f1_svg(report))?;
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::json(out_dir, e))?;
    put("report.json", &json)?;
    Ok(written)
}
