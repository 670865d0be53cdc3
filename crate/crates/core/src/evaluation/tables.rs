//! Text renderings of the comparison tables. Numbers are percentages with
//! two decimals; the best value of each column is wrapped in `**`.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::datamodel::catalog::{DEFECT_CLASSES, ELEMENT_CLASSES};
use crate::error::{Error, Result};
use crate::metrics::{ClassMetric, TaskReport};

use super::grid::GridRecord;

pub const COMPARISON_COLUMNS: [&str; 8] = [
    "E-mIoU", "E-mP", "E-mR", "E-mF1", "D-mIoU", "D-mP", "D-mR", "D-mF1",
];

/// One row of the variant comparison: name plus eight headline metrics
/// (element then defect, each `[mIoU, mP, mR, mF1]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub values: [Option<f64>; 8],
    pub failed: bool,
}

fn headline(r: Option<&TaskReport>) -> [Option<f64>; 4] {
    match r {
        Some(r) => r.headline().map(Some),
        None => [None; 4],
    }
}

pub fn comparison_rows(record: &GridRecord) -> Vec<ComparisonRow> {
    record
        .variants
        .iter()
        .map(|v| {
            let (e, d) = match &v.report {
                Some(r) => (headline(r.element.as_ref()), headline(r.defect.as_ref())),
                None => ([None; 4], [None; 4]),
            };
            let mut values = [None; 8];
            values[..4].copy_from_slice(&e);
            values[4..].copy_from_slice(&d);
            ComparisonRow {
                name: v.name.clone(),
                values,
                failed: v.error.is_some(),
            }
        })
        .collect()
}

/// Percentage with two decimals, as printed in the tables.
pub fn percent(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

fn bold_max(cells: &mut [Vec<String>], values: &[Vec<Option<f64>>]) {
    let cols = values.first().map_or(0, Vec::len);
    for c in 0..cols {
        let best = values
            .iter()
            .filter_map(|row| row[c].map(percent))
            .max_by(|a, b| {
                a.parse::<f64>()
                    .unwrap()
                    .total_cmp(&b.parse::<f64>().unwrap())
            });
        if let Some(best) = best {
            for (r, row) in values.iter().enumerate() {
                if row[c].map(percent).as_deref() == Some(best.as_str()) {
                    cells[r][c] = format!("**{best}**");
                }
            }
        }
    }
}

fn render_grid_text(
    title: &str,
    header: &[String],
    names: &[String],
    cells: &[Vec<String>],
) -> String {
    let name_w = names
        .iter()
        .map(|n| n.chars().count())
        .chain([header[0].len()])
        .max()
        .unwrap_or(8);
    let col_w = cells
        .iter()
        .flatten()
        .map(String::len)
        .chain(header[1..].iter().map(String::len))
        .max()
        .unwrap_or(6);
    let mut s = format!("{title}\n");
    let _ = write!(s, "{:<name_w$}", header[0]);
    for h in &header[1..] {
        let _ = write!(s, " | {h:>col_w$}");
    }
    s.push('\n');
    let _ = writeln!(
        s,
        "{}",
        "-".repeat(name_w + (col_w + 3) * (header.len() - 1))
    );
    for (name, row) in names.iter().zip(cells) {
        let _ = write!(s, "{name:<name_w$}");
        for c in row {
            let _ = write!(s, " | {c:>col_w$}");
        }
        s.push('\n');
    }
    s
}

/// Variant comparison table (one row per variant, eight metric columns).
pub fn render_comparison_table(rows: &[ComparisonRow]) -> String {
    let values: Vec<Vec<Option<f64>>> = rows.iter().map(|r| r.values.to_vec()).collect();
    let mut cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            r.values
                .iter()
                .map(|v| match (v, r.failed) {
                    (_, true) => "failed".to_string(),
                    (Some(v), _) => percent(*v),
                    (None, _) => "-".to_string(),
                })
                .collect()
        })
        .collect();
    bold_max(&mut cells, &values);
    let header: Vec<String> = std::iter::once("Model".to_string())
        .chain(COMPARISON_COLUMNS.iter().map(|s| s.to_string()))
        .collect();
    let names: Vec<String> = rows.iter().map(|r| r.name.clone()).collect();
    render_grid_text(
        "Performance comparison (%, E = element parsing, D = corrosion segmentation)",
        &header,
        &names,
        &cells,
    )
}

/// Reads the numbers back out of [`render_comparison_table`] output.
pub fn parse_comparison_table(text: &str) -> Result<Vec<(String, [Option<f64>; 8])>> {
    let mut rows = Vec::new();
    for line in text.lines().skip(3) {
        let parts: Vec<&str> = line.split(" | ").map(str::trim).collect();
        if parts.len() != 9 {
            return Err(Error::Parse(format!("expected 9 cells in `{line}`")));
        }
        let mut values = [None; 8];
        for (slot, cell) in values.iter_mut().zip(&parts[1..]) {
            let cell = cell.trim_matches('*');
            if cell != "-" && cell != "failed" {
                *slot = Some(
                    cell.parse::<f64>()
                        .map_err(|e| Error::Parse(format!("`{cell}`: {e}")))?,
                );
            }
        }
        rows.push((parts[0].to_string(), values));
    }
    Ok(rows)
}

fn class_triplet(m: Option<&ClassMetric>) -> [Option<f64>; 3] {
    match m {
        Some(m) => [m.iou, m.precision, m.recall],
        None => [None; 3],
    }
}

/// Class-level table (IoU, precision, recall per class) for the named
/// variants that are present in the record.
pub fn render_class_table(record: &GridRecord, variants: &[String]) -> String {
    let chosen: Vec<_> = variants
        .iter()
        .filter_map(|n| {
            record
                .variants
                .iter()
                .find(|v| &v.name == n && v.report.is_some())
        })
        .collect();
    let mut out = String::new();
    for (task, class_names) in [
        ("Element", &ELEMENT_CLASSES[..]),
        ("Defect", &DEFECT_CLASSES[..]),
    ] {
        let with_task: Vec<_> = chosen
            .iter()
            .filter_map(|v| {
                let r = v.report.as_ref()?;
                let t = if task == "Element" {
                    r.element.as_ref()
                } else {
                    r.defect.as_ref()
                }?;
                Some((v.name.as_str(), t))
            })
            .collect();
        if with_task.is_empty() {
            continue;
        }
        let mut header = vec![format!("{task} class")];
        for (name, _) in &with_task {
            for m in ["IoU", "P", "R"] {
                header.push(format!("{name} {m}"));
            }
        }
        let values: Vec<Vec<Option<f64>>> = (0..class_names.len())
            .map(|k| {
                with_task
                    .iter()
                    .flat_map(|(_, t)| class_triplet(t.classes.get(k)))
                    .collect()
            })
            .collect();
        let cells: Vec<Vec<String>> = values
            .iter()
            .map(|row| row.iter().map(|v| v.map_or("-".into(), percent)).collect())
            .collect();
        let names: Vec<String> = class_names.iter().map(|s| s.to_string()).collect();
        out.push_str(&render_grid_text(
            &format!("Class-level comparison, {} (%)", task.to_lowercase()),
            &header,
            &names,
            &cells,
        ));
        out.push('\n');
    }
    out
}
