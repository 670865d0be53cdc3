//! Per-element corrosion report built from aligned task predictions.

use std::fmt::Write;

use image::GrayImage;
use serde::{Deserialize, Serialize};

use crate::datamodel::catalog::{ClassCatalog, BACKGROUND};
use crate::error::Result;
use crate::metrics::condition_assessment;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionLine {
    pub class: usize,
    pub name: String,
    pub pixels: u64,
    pub corroded_pixels: u64,
    pub proportion: f64,
}

/// Bridge-element classes (background excluded) with at least one
/// predicted pixel, most corroded first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub lines: Vec<ConditionLine>,
    pub total_pixels: u64,
}

pub fn render_condition_report(
    element_pred: &GrayImage,
    defect_pred: &GrayImage,
    catalog: &ClassCatalog,
) -> Result<ConditionReport> {
    let mut lines: Vec<ConditionLine> = condition_assessment(element_pred, defect_pred)?
        .into_iter()
        .filter(|e| e.class != BACKGROUND as usize)
        .map(|e| ConditionLine {
            class: e.class,
            name: catalog.element_classes[e.class].clone(),
            pixels: e.pixels,
            corroded_pixels: e.corroded_pixels,
            proportion: e.proportion,
        })
        .collect();
    lines.sort_by(|a, b| {
        b.proportion
            .total_cmp(&a.proportion)
            .then(a.class.cmp(&b.class))
    });
    Ok(ConditionReport {
        lines,
        total_pixels: element_pred.as_raw().len() as u64,
    })
}

impl ConditionReport {
    pub fn to_text(&self) -> String {
        let mut s =
            String::from("Condition assessment (corroded share of each predicted element)\n");
        if self.lines.is_empty() {
            s.push_str("no elements detected\n");
            return s;
        }
        let _ = writeln!(
            s,
            "{:<14} {:>10} {:>10} {:>9} {:>8}",
            "element", "pixels", "corroded", "area %", "corr. %"
        );
        for l in &self.lines {
            let _ = writeln!(
                s,
                "{:<14} {:>10} {:>10} {:>9.2} {:>8.2}",
                l.name,
                l.pixels,
                l.corroded_pixels,
                100.0 * l.pixels as f64 / self.total_pixels as f64,
                100.0 * l.proportion
            );
        }
        s
    }
}
