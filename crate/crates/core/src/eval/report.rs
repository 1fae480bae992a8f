use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::bootstrap::bootstrap_ci;
use super::metrics::{evaluate_metrics, ClassMetrics, Metrics};
use crate::config::RUN_CONFIG_FILE;
use crate::data::MagTag;
use crate::distill::AblationRow;
use crate::error::{Error, Result};
use crate::model::{count_flops, ModelConfig};

/// Directory of a run holding one `MetricsReport` JSON per evaluated model.
pub const EVAL_DIR: &str = "eval";
/// Directory `emit_report` writes into.
pub const REPORT_DIR: &str = "report";
/// Ablation rows written by the ablation driver, relative to the run.
pub const ABLATION_FILE: &str = "ablation/ablation.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

/// Test-set evaluation of one model at one magnification.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub magnification: MagTag,
    pub input_side: usize,
    /// Checkpoint path relative to the run directory.
    pub checkpoint: PathBuf,
    pub n_test: usize,
    pub flops: u64,
    pub gflops: f64,
    pub accuracy: Estimate,
    pub macro_precision: Estimate,
    pub macro_recall: Estimate,
    pub macro_f1: Estimate,
    pub per_class: Vec<ClassMetrics>,
}

impl MetricsReport {
    /// Metrics, bootstrap intervals and forward-pass FLOPs.
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        model: &str,
        magnification: MagTag,
        input_side: usize,
        checkpoint: PathBuf,
        model_cfg: &ModelConfig,
        predictions: &[usize],
        labels: &[usize],
        iterations: usize,
        alpha: f64,
        seed: u64,
    ) -> Result<Self> {
        let k = model_cfg.num_classes;
        let point = evaluate_metrics(predictions, labels, k)?;
        let est = |name: &str, pick: fn(&Metrics) -> f64| -> Result<Estimate> {
            let (ci_lower, ci_upper) = bootstrap_ci(
                predictions,
                labels,
                |p, l| Ok(pick(&evaluate_metrics(p, l, k)?)),
                iterations,
                alpha,
                crate::seed::derive(seed, name),
            )?;
            Ok(Estimate {
                value: pick(&point),
                ci_lower,
                ci_upper,
            })
        };
        let flops = count_flops(model_cfg, input_side, input_side)?;
        Ok(MetricsReport {
            model: model.to_string(),
            magnification,
            input_side,
            checkpoint,
            n_test: labels.len(),
            flops,
            gflops: flops as f64 / 1e9,
            accuracy: est("accuracy", |m| m.accuracy)?,
            macro_precision: est("precision", |m| m.macro_precision)?,
            macro_recall: est("recall", |m| m.macro_recall)?,
            macro_f1: est("f1", |m| m.macro_f1)?,
            per_class: point.per_class,
        })
    }

    /// File name under `eval/`: one per (model, magnification).
    pub fn file_name(&self) -> String {
        format!("{}_{}.json", self.model, self.magnification)
    }

    pub fn save(&self, run_dir: &Path) -> Result<PathBuf> {
        let dir = run_dir.join(EVAL_DIR);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = dir.join(self.file_name());
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TradeoffRow {
    pub model: String,
    pub magnification: MagTag,
    pub gflops: f64,
    pub accuracy: Estimate,
    pub f1: Estimate,
    pub precision: Estimate,
    pub recall: Estimate,
}

/// One row per report, ascending by GFLOPs (then model name).
pub fn tradeoff_table(reports: &[MetricsReport]) -> Vec<TradeoffRow> {
    let mut rows: Vec<TradeoffRow> = reports
        .iter()
        .map(|r| TradeoffRow {
            model: r.model.clone(),
            magnification: r.magnification,
            gflops: r.gflops,
            accuracy: r.accuracy.clone(),
            f1: r.macro_f1.clone(),
            precision: r.macro_precision.clone(),
            recall: r.macro_recall.clone(),
        })
        .collect();
    rows.sort_by(|a, b| a.gflops.total_cmp(&b.gflops).then_with(|| a.model.cmp(&b.model)));
    rows
}

pub fn tradeoff_csv(rows: &[TradeoffRow]) -> String {
    let mut out = String::from(
        "model,magnification,gflops,accuracy,acc_ci_lo,acc_ci_hi,f1,f1_ci_lo,f1_ci_hi,\
         precision,precision_ci_lo,precision_ci_hi,recall,recall_ci_lo,recall_ci_hi\n",
    );
    for r in rows {
        let _ = write!(out, "{},{},{:.6}", r.model, r.magnification, r.gflops);
        for e in [&r.accuracy, &r.f1, &r.precision, &r.recall] {
            let _ = write!(out, ",{:.2},{:.2},{:.2}", e.value, e.ci_lower, e.ci_upper);
        }
        out.push('\n');
    }
    out
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Accuracy against GFLOPs on a log-scaled x axis, one line per model,
/// with bootstrap intervals as vertical bars.
pub fn render_svg(rows: &[TradeoffRow]) -> String {
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (70.0, 170.0, 30.0, 60.0);
    let logs: Vec<f64> = rows.iter().map(|r| r.gflops.max(1e-12).log10()).collect();
    let mut lo = logs.iter().copied().fold(f64::INFINITY, f64::min).floor();
    let mut hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max).ceil();
    if !lo.is_finite() || !hi.is_finite() {
        (lo, hi) = (-3.0, 0.0);
    }
    if hi <= lo {
        hi = lo + 1.0;
    }
    let x = |g: f64| left + (g.max(1e-12).log10() - lo) / (hi - lo) * (w - left - right);
    let y = |a: f64| top + (100.0 - a) / 100.0 * (h - top - bottom);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let (x0, x1, y0, y1) = (left, w - right, y(0.0), y(100.0));
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    for d in (lo as i32)..=(hi as i32) {
        let px = x(10f64.powi(d));
        let _ = writeln!(
            s,
            r#"<line x1="{px:.2}" y1="{y0}" x2="{px:.2}" y2="{:.2}" stroke="black"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">1e{d}</text>"#,
            y0 + 5.0,
            y0 + 20.0
        );
    }
    for a in (0..=100).step_by(20) {
        let py = y(a as f64);
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{py:.2}" x2="{x0}" y2="{py:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{a}</text>"#,
            x0 - 5.0,
            x0 - 8.0,
            py + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">GFLOPs per forward pass (log scale)</text>"#,
        (x0 + x1) / 2.0,
        h - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">Test accuracy (%)</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );

    let mut families: BTreeMap<&str, Vec<&TradeoffRow>> = BTreeMap::new();
    for r in rows {
        families.entry(r.model.as_str()).or_default().push(r);
    }
    for (i, (name, pts)) in families.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = pts
            .iter()
            .map(|r| format!("{:.2},{:.2}", x(r.gflops), y(r.accuracy.value)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#,
            path.join(" ")
        );
        for r in pts {
            let (px, py) = (x(r.gflops), y(r.accuracy.value));
            let _ = writeln!(
                s,
                r#"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="{colour}"/><circle cx="{px:.2}" cy="{py:.2}" r="4" fill="{colour}"/>"#,
                y(r.accuracy.ci_lower),
                y(r.accuracy.ci_upper)
            );
        }
        let ly = top + 20.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{:.2}" y="{:.2}" width="12" height="12" fill="{colour}"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            w - right + 15.0,
            ly,
            w - right + 32.0,
            ly + 10.0,
            xml_escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[derive(Serialize)]
struct ReportJson<'a> {
    reports: &'a [MetricsReport],
}

/// Collects every `eval/*.json` report of a run and writes `report.json`,
/// `tradeoff.csv`, `tradeoff.svg` and `ablation.csv` into `report/`.
/// Output depends only on the run's artifacts, so repeated calls produce
/// identical bytes.
pub fn emit_report(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let eval_dir = run_dir.join(EVAL_DIR);
    let mut files: Vec<PathBuf> = match std::fs::read_dir(&eval_dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .filter(|p| p.file_name().is_some_and(|n| n != RUN_CONFIG_FILE))
            .collect(),
        Err(_) => Vec::new(),
    };
    if files.is_empty() {
        return Err(Error::MissingArtifacts(vec![eval_dir]));
    }
    files.sort();
    let mut reports = Vec::with_capacity(files.len());
    for f in &files {
        let text = std::fs::read_to_string(f).map_err(|e| Error::io(f, e))?;
        reports.push(serde_json::from_str::<MetricsReport>(&text)?);
    }
    let missing: Vec<PathBuf> = reports
        .iter()
        .map(|r| run_dir.join(&r.checkpoint))
        .filter(|p| !p.is_file())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingArtifacts(missing));
    }

    let ablation_path = run_dir.join(ABLATION_FILE);
    let ablation: Vec<AblationRow> = if ablation_path.is_file() {
        let text = std::fs::read_to_string(&ablation_path).map_err(|e| Error::io(&ablation_path, e))?;
        serde_json::from_str(&text)?
    } else {
        Vec::new()
    };

    let out_dir = run_dir.join(REPORT_DIR);
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let rows = tradeoff_table(&reports);
    let outputs = [
        (
            "report.json",
            serde_json::to_string_pretty(&ReportJson { reports: &reports })? + "\n",
        ),
        ("tradeoff.csv", tradeoff_csv(&rows)),
        ("tradeoff.svg", render_svg(&rows)),
        ("ablation.csv", AblationRow::csv(&ablation)),
    ];
    let mut written = Vec::new();
    for (name, text) in outputs {
        let p = out_dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        written.push(p);
    }
    Ok(written)
}
