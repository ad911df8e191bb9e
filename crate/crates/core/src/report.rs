//! Table-shaped summaries of an evaluation and the files they are written to.
//!
//! Layout under the output root: `<experiment>/<estimator>/report.{txt,csv,json}`
//! and `<experiment>/<estimator>/plotdata/<category>.csv`.

use crate::metrics::{overall_pdp, EvalOutput};
use crate::orchestrator::{intersect_valid, BenchmarkManifest};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("category {0} has no evaluated poses")]
    EmptyCategory(String),
    #[error("category {category}: evaluated {evaluated} poses, manifest intersection has {manifest}")]
    IntersectionMismatch {
        category: String,
        evaluated: usize,
        manifest: usize,
    },
    #[error("{0}")]
    Manifest(String),
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    #[error("csv: {0}")]
    Csv(String),
    #[error("json: {0}")]
    Json(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeReport {
    pub attribute_id: String,
    pub label: String,
    pub poses: usize,
    pub pdp: f64,
    pub stability: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    pub category: String,
    pub label: String,
    /// Size of the pose intersection the category was evaluated on.
    pub poses: usize,
    pub pdp: f64,
    pub attributes: Vec<AttributeReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub experiment: String,
    pub estimator: String,
    pub tau_mm: f64,
    pub base_mpjpe_mm: Option<f64>,
    pub base_pa_mpjpe_mm: Option<f64>,
    pub categories: Vec<CategoryReport>,
    pub overall_pdp: f64,
    /// Externally computed FID values, passed through unchanged.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub fid: BTreeMap<String, f64>,
}

/// Display labels keyed by category or attribute id; ids without an entry
/// are shown as is.
pub type Labels = BTreeMap<String, String>;

fn label(labels: &Labels, id: &str) -> String {
    labels.get(id).cloned().unwrap_or_else(|| id.to_string())
}

/// Builds the report, checking every category has results and that its
/// size agrees with the manifest when the evaluation used intersections.
pub fn summarize(
    experiment: &str,
    eval: &EvalOutput,
    manifest: &BenchmarkManifest,
    labels: &Labels,
    fid: BTreeMap<String, f64>,
    intersected: bool,
) -> Result<Report, ReportError> {
    let mut categories = Vec::new();
    for c in &eval.categories {
        let pdp = c
            .pdp
            .ok_or_else(|| ReportError::EmptyCategory(c.category.clone()))?;
        if intersected {
            let ids: Vec<&str> = c.attributes.iter().map(String::as_str).collect();
            let expected = intersect_valid(manifest, &ids)
                .map_err(|e| ReportError::Manifest(e.to_string()))?
                .len();
            if expected != c.poses {
                return Err(ReportError::IntersectionMismatch {
                    category: c.category.clone(),
                    evaluated: c.poses,
                    manifest: expected,
                });
            }
        }
        let mut attributes = Vec::new();
        for a in eval.attributes.iter().filter(|a| a.category == c.category) {
            attributes.push(AttributeReport {
                attribute_id: a.attribute_id.clone(),
                label: label(labels, &a.attribute_id),
                poses: a.poses,
                pdp: a
                    .pdp
                    .ok_or_else(|| ReportError::EmptyCategory(c.category.clone()))?,
                stability: a.stability.clone(),
            });
        }
        categories.push(CategoryReport {
            category: c.category.clone(),
            label: label(labels, &c.category),
            poses: c.poses,
            pdp,
            attributes,
        });
    }
    if categories.is_empty() {
        return Err(ReportError::EmptyCategory("(none)".into()));
    }
    let means: Vec<f64> = categories.iter().map(|c| c.pdp).collect();
    let overall = overall_pdp(&means).map_err(|e| ReportError::Manifest(e.to_string()))?;
    Ok(Report {
        experiment: experiment.to_string(),
        estimator: eval.estimator.clone(),
        tau_mm: eval.tau_mm,
        base_mpjpe_mm: eval.base_mpjpe_mm,
        base_pa_mpjpe_mm: eval.base_pa_mpjpe_mm,
        categories,
        overall_pdp: overall,
        fid,
    })
}

/// One line of the sensitivity table: label, base errors, category PDPs,
/// mean.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub label: String,
    pub mpjpe_mm: Option<f64>,
    pub pa_mpjpe_mm: Option<f64>,
    pub category_pdps: Vec<(String, f64)>,
    pub mean: f64,
}

impl TableRow {
    /// Row whose mean is computed from the category values.
    pub fn from_category_pdps(
        label: &str,
        mpjpe_mm: Option<f64>,
        pa_mpjpe_mm: Option<f64>,
        category_pdps: Vec<(String, f64)>,
    ) -> Result<Self, ReportError> {
        let values: Vec<f64> = category_pdps.iter().map(|c| c.1).collect();
        let mean = overall_pdp(&values).map_err(|e| ReportError::Manifest(e.to_string()))?;
        Ok(Self {
            label: label.to_string(),
            mpjpe_mm,
            pa_mpjpe_mm,
            category_pdps,
            mean,
        })
    }
}

impl Report {
    pub fn table_row(&self) -> TableRow {
        TableRow {
            label: self.estimator.clone(),
            mpjpe_mm: self.base_mpjpe_mm,
            pa_mpjpe_mm: self.base_pa_mpjpe_mm,
            category_pdps: self
                .categories
                .iter()
                .map(|c| (c.label.clone(), c.pdp))
                .collect(),
            mean: self.overall_pdp,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, ReportError> {
        serde_json::from_str(text).map_err(|e| ReportError::Json(e.to_string()))
    }

    /// `category,attribute_id,label,poses,pdp` for one category.
    pub fn plotdata_csv(&self, category: &CategoryReport) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["attribute_id", "label", "poses", "pdp"])
            .expect("in-memory csv");
        for a in &category.attributes {
            w.write_record([
                a.attribute_id.clone(),
                a.label.clone(),
                a.poses.to_string(),
                a.pdp.to_string(),
            ])
            .expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
    }

    /// Cumulative PDP series of every attribute, long format.
    pub fn stability_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["attribute_id", "n", "pdp"]).expect("in-memory csv");
        for c in &self.categories {
            for a in &c.attributes {
                for (n, p) in &a.stability {
                    w.write_record([a.attribute_id.clone(), n.to_string(), p.to_string()])
                        .expect("in-memory csv");
                }
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_opt(s: &str) -> Result<Option<f64>, ReportError> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|e| ReportError::Csv(format!("{s:?}: {e}")))
}

/// Rows sharing one category header. Numbers keep full precision.
pub fn table_csv(rows: &[TableRow]) -> Result<String, ReportError> {
    let first = rows
        .first()
        .ok_or_else(|| ReportError::Csv("no rows".into()))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["label".to_string(), "mpjpe_mm".into(), "pa_mpjpe_mm".into()];
    header.extend(first.category_pdps.iter().map(|c| c.0.clone()));
    header.push("mean".into());
    w.write_record(&header).map_err(|e| ReportError::Csv(e.to_string()))?;
    for r in rows {
        let names: Vec<&String> = r.category_pdps.iter().map(|c| &c.0).collect();
        if names != first.category_pdps.iter().map(|c| &c.0).collect::<Vec<_>>() {
            return Err(ReportError::Csv(format!("row {} has different categories", r.label)));
        }
        let mut rec = vec![r.label.clone(), fmt_opt(r.mpjpe_mm), fmt_opt(r.pa_mpjpe_mm)];
        rec.extend(r.category_pdps.iter().map(|c| c.1.to_string()));
        rec.push(r.mean.to_string());
        w.write_record(&rec).map_err(|e| ReportError::Csv(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| ReportError::Csv(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| ReportError::Csv(e.to_string()))
}

pub fn parse_table_csv(text: &str) -> Result<Vec<TableRow>, ReportError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r
        .headers()
        .map_err(|e| ReportError::Csv(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.len() < 4 || header[0] != "label" || header.last().map(String::as_str) != Some("mean") {
        return Err(ReportError::Csv("unexpected header".into()));
    }
    let cats = &header[3..header.len() - 1];
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| ReportError::Csv(e.to_string()))?;
        if rec.len() != header.len() {
            return Err(ReportError::Csv(format!("{} fields, expected {}", rec.len(), header.len())));
        }
        let num = |i: usize| -> Result<f64, ReportError> {
            rec[i]
                .parse()
                .map_err(|e| ReportError::Csv(format!("{:?}: {e}", &rec[i])))
        };
        let mut category_pdps = Vec::new();
        for (k, name) in cats.iter().enumerate() {
            category_pdps.push((name.clone(), num(3 + k)?));
        }
        rows.push(TableRow {
            label: rec[0].to_string(),
            mpjpe_mm: parse_opt(&rec[1])?,
            pa_mpjpe_mm: parse_opt(&rec[2])?,
            category_pdps,
            mean: num(header.len() - 1)?,
        });
    }
    Ok(rows)
}

/// Fixed-width text table, two decimals.
pub fn table_text(rows: &[TableRow], tau_mm: f64) -> String {
    let Some(first) = rows.first() else {
        return String::new();
    };
    let mut header = vec!["Method".to_string(), "MPJPE".into(), "PA-MPJPE".into()];
    header.extend(first.category_pdps.iter().map(|c| c.0.clone()));
    header.push("Mean".into());
    let cell = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into());
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut line = vec![r.label.clone(), cell(r.mpjpe_mm), cell(r.pa_mpjpe_mm)];
            line.extend(r.category_pdps.iter().map(|c| cell(Some(c.1))));
            line.push(cell(Some(r.mean)));
            line
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|i| {
            body.iter()
                .map(|l| l[i].chars().count())
                .chain([header[i].chars().count()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let fmt_line = |cells: &[String]| {
        cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i == 0 {
                    format!("{c:<w$}", w = widths[i])
                } else {
                    format!("{c:>w$}", w = widths[i])
                }
            })
            .collect::<Vec<_>>()
            .join(" | ")
    };
    let mut out = format!("Base error (mm) and sensitivity to attributes (PDP %, tau = {tau_mm} mm)\n");
    out.push_str(&fmt_line(&header));
    out.push('\n');
    out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-|-"));
    out.push('\n');
    for line in &body {
        out.push_str(&fmt_line(line));
        out.push('\n');
    }
    out
}

pub fn report_dir(root: &Path, experiment: &str, estimator: &str) -> PathBuf {
    root.join(experiment).join(estimator)
}

fn write(path: &Path, text: &str) -> Result<(), ReportError> {
    let err = |e: std::io::Error| ReportError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(err)?;
    }
    std::fs::write(path, text).map_err(err)
}

/// Writes every format into `dir` and returns the written paths.
pub fn emit(report: &Report, dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    let row = report.table_row();
    let mut files = vec![
        (dir.join("report.txt"), table_text(std::slice::from_ref(&row), report.tau_mm)),
        (dir.join("report.csv"), table_csv(std::slice::from_ref(&row))?),
        (dir.join("report.json"), report.to_json()),
    ];
    for c in &report.categories {
        files.push((
            dir.join("plotdata").join(format!("{}.csv", c.category)),
            report.plotdata_csv(c),
        ));
    }
    files.push((dir.join("plotdata").join("stability.csv"), report.stability_csv()));
    for (path, text) in &files {
        write(path, text)?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}
