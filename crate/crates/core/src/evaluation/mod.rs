//! Experiment grid, comparison tables, inference benchmarks, overlays and
//! condition reports.

pub mod benchmark;
pub mod grid;
pub mod overlay;
pub mod report;
pub mod tables;

pub use benchmark::{
    benchmark_inference, hardware_descriptor, render_benchmark_table, BenchmarkResult, Pipeline,
};
pub use grid::{run_grid, run_grid_on_manifest, GridOutcome, GridRecord, GridSpec, VariantResult};
pub use overlay::{
    overlay_image, render_overlay, CORROSION_COLOR, ELEMENT_PALETTE, NO_CORROSION_COLOR,
};
pub use report::{render_condition_report, ConditionLine, ConditionReport};
pub use tables::{
    comparison_rows, parse_comparison_table, render_class_table, render_comparison_table,
    ComparisonRow,
};
