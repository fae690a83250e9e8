//! Baseline-vs-inpainted comparison tables and ROC plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::verification::{compute_auc, roc_curve, ScoreSet, TrialSummary};

/// Relative gap below the baseline still highlighted as close.
pub const CLOSE_TOLERANCE: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellClass {
    Surpass,
    #[serde(rename = "close_within_3pct")]
    CloseWithin3Pct,
    Neither,
}

impl CellClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            CellClass::Surpass => "surpass",
            CellClass::CloseWithin3Pct => "close_within_3pct",
            CellClass::Neither => "neither",
        }
    }

    /// Background colour used in HTML output.
    pub fn html_color(&self) -> Option<&'static str> {
        match self {
            CellClass::Surpass => Some("#C6EFCE"),
            CellClass::CloseWithin3Pct => Some("#FFE5CC"),
            CellClass::Neither => None,
        }
    }
}

/// `surpass` if the inpainted mean is above the baseline, `close` if it is
/// at most 3% (relative) below it, `neither` otherwise.
pub fn classify_cell(baseline_mean: f64, inpainted_mean: f64) -> Result<CellClass> {
    classify_cell_with_tolerance(baseline_mean, inpainted_mean, CLOSE_TOLERANCE)
}

pub fn classify_cell_with_tolerance(baseline_mean: f64, inpainted_mean: f64, tolerance: f64) -> Result<CellClass> {
    if baseline_mean == 0.0 {
        return Err(Error::Classification("baseline mean is zero".into()));
    }
    if !baseline_mean.is_finite() || !inpainted_mean.is_finite() {
        return Err(Error::Classification("non-finite mean".into()));
    }
    if inpainted_mean > baseline_mean {
        Ok(CellClass::Surpass)
    } else if (baseline_mean - inpainted_mean) / baseline_mean <= tolerance {
        Ok(CellClass::CloseWithin3Pct)
    } else {
        Ok(CellClass::Neither)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonCell {
    pub baseline: TrialSummary,
    pub inpainted: TrialSummary,
    pub classification: CellClass,
}

impl ComparisonCell {
    pub fn new(baseline: TrialSummary, inpainted: TrialSummary) -> Result<Self> {
        let classification = classify_cell(baseline.mean, inpainted.mean)?;
        Ok(Self {
            baseline,
            inpainted,
            classification,
        })
    }
}

/// Row label of the comparison table.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ModelKey {
    pub model: String,
    pub patch: u32,
}

impl ModelKey {
    pub fn label(&self) -> String {
        format!("{}_p{}", self.model, self.patch)
    }
}

/// Cells keyed by (model, patch, dataset). Rows and columns keep insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ComparisonGrid {
    rows: Vec<ModelKey>,
    datasets: Vec<String>,
    cells: BTreeMap<(ModelKey, String), ComparisonCell>,
}

impl ComparisonGrid {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_row(&mut self, key: ModelKey) {
        if !self.rows.contains(&key) {
            self.rows.push(key);
        }
    }

    pub fn add_dataset(&mut self, dataset: &str) {
        if !self.datasets.iter().any(|d| d == dataset) {
            self.datasets.push(dataset.to_string());
        }
    }

    pub fn insert(&mut self, key: ModelKey, dataset: &str, cell: ComparisonCell) {
        self.add_row(key.clone());
        self.add_dataset(dataset);
        self.cells.insert((key, dataset.to_string()), cell);
    }

    pub fn get(&self, key: &ModelKey, dataset: &str) -> Option<&ComparisonCell> {
        self.cells.get(&(key.clone(), dataset.to_string()))
    }

    pub fn rows(&self) -> &[ModelKey] {
        &self.rows
    }

    pub fn datasets(&self) -> &[String] {
        &self.datasets
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

const MISSING: &str = "—";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedTable {
    pub csv: String,
    pub html: String,
    pub text: String,
}

impl RenderedTable {
    /// Writes `report.csv`, `report.html` and `report.txt` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        io::write_bytes(&dir.join("report.csv"), self.csv.as_bytes())?;
        io::write_bytes(&dir.join("report.html"), self.html.as_bytes())?;
        io::write_bytes(&dir.join("report.txt"), self.text.as_bytes())
    }
}

pub fn render_comparison_table(grid: &ComparisonGrid) -> RenderedTable {
    RenderedTable {
        csv: render_csv(grid),
        html: render_html(grid),
        text: render_text(grid),
    }
}

fn render_csv(grid: &ComparisonGrid) -> String {
    let mut out = String::from("model,patch,dataset,baseline,inpainted,classification\n");
    for row in grid.rows() {
        for ds in grid.datasets() {
            let (b, i, c) = match grid.get(row, ds) {
                Some(cell) => (
                    cell.baseline.to_string(),
                    cell.inpainted.to_string(),
                    cell.classification.as_str().to_string(),
                ),
                None => (MISSING.into(), MISSING.into(), MISSING.into()),
            };
            writeln!(out, "{},{},{},{b},{i},{c}", row.model, row.patch, ds).unwrap();
        }
    }
    out
}

fn html_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn render_html(grid: &ComparisonGrid) -> String {
    let mut out = String::new();
    out.push_str("<!DOCTYPE html>\n<html>\n<head><meta charset=\"utf-8\"><title>AUC comparison</title>\n");
    out.push_str("<style>table{border-collapse:collapse}td,th{border:1px solid #999;padding:4px 8px;text-align:center}</style>\n");
    out.push_str("</head>\n<body>\n<table>\n<tr><th>Model</th><th>Patch</th><th>Input</th>");
    for ds in grid.datasets() {
        write!(out, "<th>{}</th>", html_escape(ds)).unwrap();
    }
    out.push_str("</tr>\n");
    for row in grid.rows() {
        for inpainted in [false, true] {
            write!(
                out,
                "<tr><td>{}</td><td>{}</td><td>{}</td>",
                html_escape(&row.label()),
                row.patch,
                if inpainted { "Inpainted" } else { "Baseline" }
            )
            .unwrap();
            for ds in grid.datasets() {
                match grid.get(row, ds) {
                    None => write!(out, "<td>{MISSING}</td>").unwrap(),
                    Some(cell) if inpainted => {
                        let text = cell.inpainted.to_string();
                        match cell.classification.html_color() {
                            Some(color) => write!(
                                out,
                                "<td class=\"{}\" style=\"background-color:{color}\">{text}</td>",
                                cell.classification.as_str()
                            )
                            .unwrap(),
                            None => write!(out, "<td>{text}</td>").unwrap(),
                        }
                    }
                    Some(cell) => write!(out, "<td>{}</td>", cell.baseline).unwrap(),
                }
            }
            out.push_str("</tr>\n");
        }
    }
    out.push_str("</table>\n</body>\n</html>\n");
    out
}

fn render_text(grid: &ComparisonGrid) -> String {
    let mut header = vec!["Model".to_string(), "Patch".into(), "Input".into()];
    header.extend(grid.datasets().iter().cloned());
    let mut rows = vec![header];
    for row in grid.rows() {
        for inpainted in [false, true] {
            let mut r = vec![
                row.label(),
                row.patch.to_string(),
                if inpainted { "Inpainted" } else { "Baseline" }.to_string(),
            ];
            for ds in grid.datasets() {
                r.push(match grid.get(row, ds) {
                    None => MISSING.to_string(),
                    Some(c) if inpainted => {
                        let mark = match c.classification {
                            CellClass::Surpass => " [+]",
                            CellClass::CloseWithin3Pct => " [~]",
                            CellClass::Neither => "",
                        };
                        format!("{}{mark}", c.inpainted)
                    }
                    Some(c) => c.baseline.to_string(),
                });
            }
            rows.push(r);
        }
    }
    let ncol = rows[0].len();
    let widths: Vec<usize> = (0..ncol)
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, r) in rows.iter().enumerate() {
        let line: Vec<String> = r
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell}{}", " ".repeat(w - cell.chars().count())))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
            out.push('\n');
        }
    }
    out.push_str("\n[+] surpasses baseline   [~] within 3% of baseline without surpassing it\n");
    out
}

/// Renders the ROC curve as a standalone SVG with the AUC in the legend.
pub fn roc_svg(scores: &ScoreSet, title: &str) -> Result<String> {
    let points = roc_curve(scores)?;
    let auc = compute_auc(scores)?;
    let (size, margin) = (400.0, 50.0);
    let plot = size - 2.0 * margin;
    let px = |fpr: f64| margin + fpr * plot;
    let py = |tpr: f64| size - margin - tpr * plot;

    let mut path = String::new();
    for (i, p) in points.iter().enumerate() {
        write!(path, "{}{:.3},{:.3}", if i == 0 { "M" } else { " L" }, px(p.fpr), py(p.tpr)).unwrap();
    }
    let mut svg = String::new();
    writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" viewBox=\"0 0 {size} {size}\">"
    )
    .unwrap();
    writeln!(svg, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>").unwrap();
    writeln!(
        svg,
        "<rect x=\"{margin}\" y=\"{margin}\" width=\"{plot}\" height=\"{plot}\" fill=\"none\" stroke=\"black\"/>"
    )
    .unwrap();
    writeln!(
        svg,
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#bbb\" stroke-dasharray=\"4 4\"/>",
        px(0.0),
        py(0.0),
        px(1.0),
        py(1.0)
    )
    .unwrap();
    writeln!(svg, "<path d=\"{path}\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\"/>").unwrap();
    writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-size=\"14\" text-anchor=\"middle\">{}</text>",
        size / 2.0,
        margin / 2.0,
        html_escape(title)
    )
    .unwrap();
    writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"end\">AUC = {auc:.4}</text>",
        size - margin - 8.0,
        size - margin - 8.0
    )
    .unwrap();
    writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">False accept rate</text>",
        size / 2.0,
        size - 15.0
    )
    .unwrap();
    writeln!(
        svg,
        "<text x=\"15\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 15 {})\">True accept rate</text>",
        size / 2.0,
        size / 2.0
    )
    .unwrap();
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn emit_roc_plot(scores: &ScoreSet, path: &Path, title: &str) -> Result<()> {
    let svg = roc_svg(scores, title)?;
    io::write_bytes(path, svg.as_bytes())
}
