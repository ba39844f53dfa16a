use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgfreq::FilterKind;

use super::compare::GridComparison;
use super::grid::{AccuracyGrid, CellKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Markdown => "md",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "markdown" | "md" => Ok(Self::Markdown),
            other => Err(Error::invalid(format!(
                "unknown report format `{other}` (csv or markdown)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Report<'a> {
    Grid(&'a AccuracyGrid),
    Comparison(&'a GridComparison),
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

fn signed_pct(v: f64) -> String {
    // avoid printing "-0.00"
    let p = (100.0 * v * 100.0).round() / 100.0;
    format!("{:+.2}", if p == 0.0 { 0.0 } else { p })
}

/// Renders a grid or comparison. Accuracies are percentages with two
/// decimals; comparison deltas are `treated - baseline` in points.
pub fn emit_report(report: Report<'_>, format: ReportFormat) -> Result<String> {
    let grid = match report {
        Report::Grid(g) => g,
        Report::Comparison(c) => &c.treated,
    };
    grid.check_rectangular()?;
    let cmp = match report {
        Report::Comparison(c) => Some(c),
        Report::Grid(_) => None,
    };
    Ok(match format {
        ReportFormat::Csv => csv(grid, cmp),
        ReportFormat::Markdown => markdown(grid, cmp),
    })
}

fn csv(grid: &AccuracyGrid, cmp: Option<&GridComparison>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# model={}", grid.model_id);
    let _ = writeln!(out, "# dataset={}", grid.dataset_id);
    if let Some(c) = cmp {
        let _ = writeln!(out, "# baseline_model={}", c.baseline.model_id);
        let _ = writeln!(out, "kind,sigma,width,accuracy,delta");
        let _ = writeln!(
            out,
            "Clean,,,{},{}",
            pct(grid.clean()),
            signed_pct(c.clean_delta())
        );
    } else {
        let _ = writeln!(out, "kind,sigma,width,accuracy");
        let _ = writeln!(out, "Clean,,,{}", pct(grid.clean()));
    }
    for (key, acc) in grid.cells() {
        let _ = write!(
            out,
            "{},{},{},{}",
            key.kind,
            key.sigma(),
            key.width,
            pct(acc)
        );
        if let Some(c) = cmp {
            let d = c
                .delta(key.kind, key.sigma(), key.width)
                .expect("shared keys");
            let _ = write!(out, ",{}", signed_pct(d));
        }
        out.push('\n');
    }
    out
}

fn markdown(grid: &AccuracyGrid, cmp: Option<&GridComparison>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "## {} on {}", grid.model_id, grid.dataset_id);
    out.push('\n');
    match cmp {
        Some(c) => {
            let _ = writeln!(
                out,
                "Clean accuracy: {} ({} vs {})",
                pct(grid.clean()),
                signed_pct(c.clean_delta()),
                c.baseline.model_id
            );
        }
        None => {
            let _ = writeln!(out, "Clean accuracy: {}", pct(grid.clean()));
        }
    }
    for kind in grid.kinds() {
        let widths = grid.widths(kind);
        out.push('\n');
        let _ = writeln!(out, "### {kind}");
        out.push('\n');
        let _ = write!(out, "| Sigma \\ Width |");
        for w in &widths {
            let _ = write!(out, " {w} |");
        }
        out.push('\n');
        let _ = writeln!(out, "|---|{}", "---:|".repeat(widths.len()));
        for sigma in grid.sigmas(kind) {
            let _ = write!(out, "| {sigma} |");
            for &w in &widths {
                let acc = grid.get(kind, sigma, w).expect("rectangular grid");
                match cmp.and_then(|c| c.delta(kind, sigma, w)) {
                    Some(d) => {
                        let _ = write!(out, " {} ({}) |", pct(acc), signed_pct(d));
                    }
                    None => {
                        let _ = write!(out, " {} |", pct(acc));
                    }
                }
            }
            out.push('\n');
        }
    }
    out
}

/// Parses the grid CSV written by [`emit_report`] (a `delta` column, if
/// present, is ignored). `# model=` and `# dataset=` comments set the ids.
pub fn parse_grid_csv(text: &str) -> Result<AccuracyGrid> {
    let bad = |line: usize, msg: &str| Error::invalid(format!("grid csv line {line}: {msg}"));
    let (mut model_id, mut dataset_id) = (String::new(), String::new());
    let mut clean = None;
    let mut cells = Vec::new();
    let mut header_seen = false;
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let comment = comment.trim();
            if let Some(v) = comment.strip_prefix("model=") {
                model_id = v.to_string();
            } else if let Some(v) = comment.strip_prefix("dataset=") {
                dataset_id = v.to_string();
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if !header_seen {
            if fields.len() < 4 || fields[..4] != ["kind", "sigma", "width", "accuracy"] {
                return Err(bad(n, "expected header kind,sigma,width,accuracy"));
            }
            header_seen = true;
            continue;
        }
        if fields.len() < 4 {
            return Err(bad(n, "expected at least 4 fields"));
        }
        let acc: f64 = fields[3]
            .parse()
            .map_err(|_| bad(n, "accuracy is not a number"))?;
        let acc = acc / 100.0;
        if fields[0] == "Clean" {
            if clean.replace(acc).is_some() {
                return Err(bad(n, "duplicate Clean row"));
            }
            continue;
        }
        let kind: FilterKind = fields[0]
            .parse()
            .map_err(|_| bad(n, "unknown filter kind"))?;
        let sigma: f64 = fields[1]
            .parse()
            .map_err(|_| bad(n, "sigma is not a number"))?;
        let width: usize = fields[2]
            .parse()
            .map_err(|_| bad(n, "width is not an integer"))?;
        cells.push((CellKey::new(kind, sigma, width), acc));
    }
    let clean = clean.ok_or_else(|| Error::invalid("grid csv has no Clean row"))?;
    let mut grid = AccuracyGrid::new(model_id, dataset_id, clean)?;
    for (key, acc) in cells {
        grid.insert(key, acc)?;
    }
    Ok(grid)
}
