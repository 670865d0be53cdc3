//! Trains and scores a list of model configurations under one shared
//! training setup.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::tables::{comparison_rows, render_class_table, render_comparison_table};
use crate::datamodel::manifest::{DatasetManifest, Split};
use crate::datamodel::sample::{load_split, Sample};
use crate::error::{Error, Result};
use crate::network::config::{Dims, ModelConfig};
use crate::network::model::build_model;
use crate::training::{evaluate_samples, train_samples, EvalReport, RunDir, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub variants: Vec<ModelConfig>,
    pub train: TrainConfig,
    /// Per-variant run directories and the rendered tables go here.
    pub output_dir: Option<PathBuf>,
    /// Variants shown in the class-level table.
    pub class_table_variants: Vec<String>,
}

impl GridSpec {
    /// The full comparison: three baselines and MTL-A … MTL-L.
    pub fn paper(dims: Dims, train: TrainConfig) -> Self {
        Self::with_variants(ModelConfig::all_variants(dims), train)
    }

    pub fn with_variants(variants: Vec<ModelConfig>, train: TrainConfig) -> Self {
        Self {
            variants,
            train,
            output_dir: None,
            class_table_variants: ["single-element", "single-defect", "MTL-D", "MTL-I"]
                .map(String::from)
                .to_vec(),
        }
    }

    /// Looks up variants by name (`single-element`, `merged`, `MTL-C`, ...).
    pub fn named(names: &[&str], dims: Dims, train: TrainConfig) -> Result<Self> {
        let variants = names
            .iter()
            .map(|n| ModelConfig::variant(n.trim(), dims))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::with_variants(variants, train))
    }

    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() {
            return Err(Error::Validation("grid has no variants".into()));
        }
        let mut seen = HashSet::new();
        for v in &self.variants {
            if !seen.insert(v.name.as_str()) {
                return Err(Error::Validation(format!(
                    "variant `{}` listed twice",
                    v.name
                )));
            }
            v.validate()?;
        }
        self.train.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub name: String,
    pub config: ModelConfig,
    pub report: Option<EvalReport>,
    pub training_seconds: f64,
    pub error: Option<String>,
}

/// Machine-readable grid outcome; the text tables are rendered from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRecord {
    pub train: TrainConfig,
    pub variants: Vec<VariantResult>,
}

impl GridRecord {
    pub fn failures(&self) -> usize {
        self.variants.iter().filter(|v| v.error.is_some()).count()
    }

    pub fn get(&self, name: &str) -> Option<&VariantResult> {
        self.variants.iter().find(|v| v.name == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOutcome {
    pub record: GridRecord,
    pub comparison_table: String,
    pub class_table: String,
}

fn run_variant(
    config: &ModelConfig,
    train: &TrainConfig,
    train_set: &[Sample],
    eval_set: &[Sample],
    dir: Option<&Path>,
) -> Result<(EvalReport, f64)> {
    let model = build_model(config.clone())?;
    let run_dir = dir.map(|d| RunDir::new(d.join(&config.name))).transpose()?;
    let start = Instant::now();
    let eval = (train.eval_every > 0).then_some(eval_set);
    let (model, _) = train_samples(
        model,
        train_set.to_vec(),
        eval,
        train.clone(),
        run_dir.as_ref(),
    )?;
    let seconds = start.elapsed().as_secs_f64();
    let report = evaluate_samples(&model, eval_set)?;
    if let Some(run) = &run_dir {
        write_json(&run.root.join("report.json"), &report)?;
    }
    Ok((report, seconds))
}

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    write_text(path, &text)
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Trains and evaluates every variant on the same data with the same
/// schedule and seeds. A failing variant is recorded and the grid goes on.
pub fn run_grid(spec: &GridSpec, train_set: &[Sample], eval_set: &[Sample]) -> Result<GridOutcome> {
    spec.validate()?;
    if train_set.is_empty() || eval_set.is_empty() {
        return Err(Error::Validation(
            "grid needs nonempty training and evaluation sets".into(),
        ));
    }
    let mut variants = Vec::with_capacity(spec.variants.len());
    for config in &spec.variants {
        let result = run_variant(
            config,
            &spec.train,
            train_set,
            eval_set,
            spec.output_dir.as_deref(),
        );
        variants.push(match result {
            Ok((report, seconds)) => VariantResult {
                name: config.name.clone(),
                config: config.clone(),
                report: Some(report),
                training_seconds: seconds,
                error: None,
            },
            Err(e) => VariantResult {
                name: config.name.clone(),
                config: config.clone(),
                report: None,
                training_seconds: 0.0,
                error: Some(e.to_string()),
            },
        });
    }
    let record = GridRecord {
        train: spec.train.clone(),
        variants,
    };
    let outcome = GridOutcome {
        comparison_table: render_comparison_table(&comparison_rows(&record)),
        class_table: render_class_table(&record, &spec.class_table_variants),
        record,
    };
    if let Some(dir) = &spec.output_dir {
        write_json(&dir.join("grid.json"), &outcome.record)?;
        write_text(&dir.join("comparison.txt"), &outcome.comparison_table)?;
        write_text(&dir.join("class_level.txt"), &outcome.class_table)?;
    }
    Ok(outcome)
}

/// Runs the grid on a dataset's train and test splits, resized to the
/// variants' (square) input size.
pub fn run_grid_on_manifest(spec: &GridSpec, manifest: &DatasetManifest) -> Result<GridOutcome> {
    let dims = spec
        .variants
        .first()
        .map(|v| v.dims)
        .ok_or_else(|| Error::Validation("grid has no variants".into()))?;
    if spec.variants.iter().any(|v| v.dims != dims) || dims.height != dims.width {
        return Err(Error::Validation(
            "grid variants must share one square input size".into(),
        ));
    }
    let train_set = load_split(manifest, Split::Train, dims.height as u32)?;
    let test_set = load_split(manifest, Split::Test, dims.height as u32)?;
    run_grid(spec, &train_set, &test_set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::synthetic;
    use crate::datamodel::AugmentationConfig;
    use crate::evaluation::tables::{parse_comparison_table, percent};

    fn train(steps: usize) -> TrainConfig {
        TrainConfig {
            total_steps: steps,
            batch_size: 2,
            lr_init: 2e-3,
            lr_min: 2e-4,
            augmentation: AugmentationConfig::identity(),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn three_variant_grid_structure_and_round_trip() {
        let dims = Dims::square(32, 8);
        let data = synthetic::dataset(2, 32, 0);
        let dir = tempfile::tempdir().unwrap();
        let mut spec = GridSpec::named(
            &["single-element", "single-defect", "MTL-A"],
            dims,
            train(2),
        )
        .unwrap();
        spec.output_dir = Some(dir.path().to_path_buf());
        let out = run_grid(&spec, &data, &data).unwrap();
        assert_eq!(out.record.failures(), 0);
        let parsed = parse_comparison_table(&out.comparison_table).unwrap();
        assert_eq!(parsed.len(), 3);
        assert!(parsed.iter().all(|(_, v)| v.len() == 8));
        assert_eq!(parsed[0].1[4], None);
        assert_eq!(parsed[1].1[0], None);

        // numbers in the text equal the record's values at print precision
        let text = std::fs::read_to_string(dir.path().join("grid.json")).unwrap();
        let record: GridRecord = serde_json::from_str(&text).unwrap();
        assert_eq!(record, out.record);
        for ((name, values), row) in parsed.iter().zip(comparison_rows(&record)) {
            assert_eq!(name, &row.name);
            for (p, r) in values.iter().zip(row.values) {
                assert_eq!(p.map(|v| format!("{v:.2}")), r.map(percent));
            }
        }
        assert!(dir.path().join("MTL-A/report.json").exists());
        assert!(dir.path().join("comparison.txt").exists());
        assert!(out.class_table.contains("single-element IoU"));
    }

    #[test]
    fn results_do_not_depend_on_variant_order() {
        let dims = Dims::square(32, 8);
        let data = synthetic::dataset(2, 32, 1);
        let a = run_grid(
            &GridSpec::named(&["MTL-B", "merged"], dims, train(2)).unwrap(),
            &data,
            &data,
        )
        .unwrap();
        let b = run_grid(
            &GridSpec::named(&["merged", "MTL-B"], dims, train(2)).unwrap(),
            &data,
            &data,
        )
        .unwrap();
        for name in ["MTL-B", "merged"] {
            assert_eq!(
                a.record.get(name).unwrap().report,
                b.record.get(name).unwrap().report
            );
        }
    }

    #[test]
    fn failures_are_recorded_and_grid_continues() {
        let dims = Dims::square(32, 8);
        let data = synthetic::dataset(2, 32, 1);
        let mut spec = GridSpec::named(&["MTL-A", "MTL-E"], dims, train(1)).unwrap();
        spec.variants[0].extractor_id = "hrnet_w32_external".into();
        let out = run_grid(&spec, &data, &data).unwrap();
        assert_eq!(out.record.failures(), 1);
        assert!(out.record.get("MTL-E").unwrap().report.is_some());
        assert!(out.comparison_table.contains("failed"));
    }

    #[test]
    fn duplicate_names_rejected() {
        let dims = Dims::square(32, 8);
        assert!(GridSpec::named(&["MTL-A", "MTL-A"], dims, train(1))
            .unwrap()
            .validate()
            .is_err());
        assert_eq!(GridSpec::paper(dims, train(1)).variants.len(), 15);
    }
}
