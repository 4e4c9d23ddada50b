use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub train_s: f64,
    pub unlearn_s: f64,
    pub attack_s: f64,
}

/// Metrics of one (model, method, backend, seed) cell. Percentages are in [0, 100].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub model: String,
    pub method: String,
    pub backend: String,
    pub seed: u64,
    pub unlearn_class: u8,
    pub acc_u: f64,
    pub acc_r: f64,
    pub acc_test: f64,
    pub mia_loss: Option<f64>,
    pub mia_logit: Option<f64>,
    pub mia_softmax: Option<f64>,
    pub mia_measurement: Option<f64>,
    /// Wall time of the method itself: training for `original`/`target`, unlearning otherwise.
    pub wall_s: f64,
    pub phases: PhaseTimes,
    pub effective_ascent_epochs: Option<f64>,
}

impl MetricsRow {
    /// Equality of everything except wall-clock measurements.
    pub fn same_metrics(&self, other: &Self) -> bool {
        let strip = |r: &Self| Self { wall_s: 0.0, phases: PhaseTimes::default(), ..r.clone() };
        strip(self) == strip(other)
    }

    pub fn mia(&self) -> [Option<f64>; 4] {
        [self.mia_loss, self.mia_logit, self.mia_softmax, self.mia_measurement]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub model: String,
    pub method: String,
    pub backend: String,
    pub seed: u64,
    pub error: String,
}

/// Mean over the seeds of one (model, method, backend) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub model: String,
    pub method: String,
    pub backend: String,
    pub n_seeds: usize,
    pub acc_u: f64,
    pub acc_r: f64,
    pub acc_test: f64,
    pub mia_loss: Option<f64>,
    pub mia_logit: Option<f64>,
    pub mia_softmax: Option<f64>,
    pub mia_measurement: Option<f64>,
    pub wall_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
    pub failures: Vec<CellFailure>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn mean_opt<'a>(rows: &[&'a MetricsRow], f: impl Fn(&'a MetricsRow) -> Option<f64>) -> Option<f64> {
    let vals: Option<Vec<f64>> = rows.iter().map(|r| f(r)).collect();
    vals.filter(|v| !v.is_empty()).map(|v| mean(v.into_iter()))
}

impl MetricsReport {
    /// Groups rows by (model, method, backend) in first-appearance order and averages them.
    pub fn aggregates(&self) -> Vec<AggregateRow> {
        let mut keys: Vec<(String, String, String)> = Vec::new();
        for r in &self.rows {
            let k = (r.model.clone(), r.method.clone(), r.backend.clone());
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        keys.into_iter()
            .map(|(model, method, backend)| {
                let group: Vec<&MetricsRow> =
                    self.rows.iter().filter(|r| r.model == model && r.method == method && r.backend == backend).collect();
                AggregateRow {
                    n_seeds: group.len(),
                    acc_u: mean(group.iter().map(|r| r.acc_u)),
                    acc_r: mean(group.iter().map(|r| r.acc_r)),
                    acc_test: mean(group.iter().map(|r| r.acc_test)),
                    mia_loss: mean_opt(&group, |r| r.mia_loss),
                    mia_logit: mean_opt(&group, |r| r.mia_logit),
                    mia_softmax: mean_opt(&group, |r| r.mia_softmax),
                    mia_measurement: mean_opt(&group, |r| r.mia_measurement),
                    wall_s: mean(group.iter().map(|r| r.wall_s)),
                    model,
                    method,
                    backend,
                }
            })
            .collect()
    }

    pub fn find(&self, method: &str, seed: u64) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.method == method && r.seed == seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReportFormat {
    Csv,
    Json,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            other => Err(HarnessError::Config(format!("unknown report format {other:?}"))),
        }
    }
}

pub const CSV_HEADER: [&str; 11] = [
    "model",
    "method",
    "backend",
    "seed",
    "acc_u",
    "acc_r",
    "mia_loss",
    "mia_logit",
    "mia_softmax",
    "mia_measurement",
    "wall_s",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Per-seed rows followed by one `mean(n=K)` row per group.
pub fn render_csv(report: &MetricsReport) -> Result<String, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| HarnessError::Report(e.to_string());
    w.write_record(CSV_HEADER).map_err(io)?;
    for r in &report.rows {
        let m = r.mia();
        w.write_record([
            r.model.clone(),
            r.method.clone(),
            r.backend.clone(),
            r.seed.to_string(),
            r.acc_u.to_string(),
            r.acc_r.to_string(),
            opt(m[0]),
            opt(m[1]),
            opt(m[2]),
            opt(m[3]),
            r.wall_s.to_string(),
        ])
        .map_err(io)?;
    }
    for a in report.aggregates() {
        w.write_record([
            a.model.clone(),
            a.method.clone(),
            a.backend.clone(),
            format!("mean(n={})", a.n_seeds),
            a.acc_u.to_string(),
            a.acc_r.to_string(),
            opt(a.mia_loss),
            opt(a.mia_logit),
            opt(a.mia_softmax),
            opt(a.mia_measurement),
            a.wall_s.to_string(),
        ])
        .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Report(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| HarnessError::Report(e.to_string()))
}

#[derive(Serialize)]
struct JsonReport<'a> {
    rows: &'a [MetricsRow],
    aggregates: Vec<AggregateRow>,
    failures: &'a [CellFailure],
}

pub fn render_json(report: &MetricsReport) -> Result<String, HarnessError> {
    Ok(serde_json::to_string_pretty(&JsonReport {
        rows: &report.rows,
        aggregates: report.aggregates(),
        failures: &report.failures,
    })?)
}

/// One table per (model, backend), one row per method, values averaged over seeds.
pub fn render_markdown(report: &MetricsReport) -> String {
    let aggs = report.aggregates();
    let mut groups: Vec<(String, String)> = Vec::new();
    for a in &aggs {
        let k = (a.model.clone(), a.backend.clone());
        if !groups.contains(&k) {
            groups.push(k);
        }
    }
    let cell = |v: Option<f64>| v.map(|x| format!("{x:.1}")).unwrap_or_else(|| "-".into());
    let mut s = String::new();
    for (model, backend) in groups {
        let rows: Vec<&AggregateRow> = aggs.iter().filter(|a| a.model == model && a.backend == backend).collect();
        let n = rows.iter().map(|r| r.n_seeds).max().unwrap_or(0);
        let _ = writeln!(s, "### {model} ({backend}, mean over {n} seeds)\n");
        s.push_str("| Method | Acc_U | Acc_R | Acc_test | MIA loss | MIA logit | MIA softmax | MIA measurement | Time (s) |\n");
        s.push_str("|---|---|---|---|---|---|---|---|---|\n");
        for r in rows {
            let label = match r.method.as_str() {
                "original" => "A_o".to_string(),
                "target" => "A_t".to_string(),
                m => m.to_string(),
            };
            let _ = writeln!(
                s,
                "| {label} | {:.1} | {:.1} | {:.1} | {} | {} | {} | {} | {:.1} |",
                r.acc_u,
                r.acc_r,
                r.acc_test,
                cell(r.mia_loss),
                cell(r.mia_logit),
                cell(r.mia_softmax),
                cell(r.mia_measurement),
                r.wall_s
            );
        }
        s.push('\n');
    }
    if !report.failures.is_empty() {
        s.push_str("### Failed cells\n\n");
        for f in &report.failures {
            let _ = writeln!(s, "- {} {} {} seed {}: {}", f.model, f.method, f.backend, f.seed, f.error);
        }
    }
    s
}

/// Writes `report.{csv,json,md}` under `dir` for each requested format.
pub fn emit_report(report: &MetricsReport, dir: &Path, formats: &[ReportFormat]) -> Result<Vec<PathBuf>, HarnessError> {
    if report.rows.is_empty() && report.failures.is_empty() {
        return Err(HarnessError::Report("report is empty".into()));
    }
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut written = Vec::new();
    for f in formats {
        let (name, body) = match f {
            ReportFormat::Csv => ("report.csv", render_csv(report)?),
            ReportFormat::Json => ("report.json", render_json(report)?),
            ReportFormat::Markdown => ("report.md", render_markdown(report)),
        };
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| HarnessError::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
