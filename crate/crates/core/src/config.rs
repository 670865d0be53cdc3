//! Flat `key = value` run settings shared by every command.
//!
//! ```text
//! # comments start with '#'
//! seed = 7
//! model.variant = MTL-I
//! train.total_steps = 2000
//! ```
//!
//! Every key is declared in [`SCHEMA`]; unknown keys and malformed values are
//! rejected with the key named in the error. Later assignments (for example
//! command-line overrides applied after the file) replace earlier ones.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::datamodel::AugmentationConfig;
use crate::error::{Error, Result};
use crate::network::config::{CrossTalkMode, Dims, ModelConfig, BASELINES, MTL_VARIANTS};
use crate::training::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueKind {
    Int,
    Float,
    Text,
    FilePath,
    Choice(&'static [&'static str]),
    /// Comma-separated variant names.
    VariantList,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeySpec {
    pub key: &'static str,
    pub kind: ValueKind,
    /// `None` marks an optional key with no default.
    pub default: Option<&'static str>,
    pub help: &'static str,
}

const fn key(
    key: &'static str,
    kind: ValueKind,
    default: Option<&'static str>,
    help: &'static str,
) -> KeySpec {
    KeySpec {
        key,
        kind,
        default,
        help,
    }
}

use ValueKind::*;

pub const SCHEMA: &[KeySpec] = &[
    key(
        "seed",
        Int,
        Some("0"),
        "seed for initialisation, shuffling and augmentation",
    ),
    key(
        "data.root",
        FilePath,
        None,
        "dataset directory holding manifest.json",
    ),
    key("output.dir", FilePath, None, "directory for run artifacts"),
    key(
        "model.variant",
        Text,
        Some("MTL-A"),
        "single-element, single-defect, merged or MTL-A .. MTL-L",
    ),
    key(
        "model.input_size",
        Int,
        Some("64"),
        "square input side; images are resized to it",
    ),
    key(
        "model.channels",
        Int,
        Some("32"),
        "channels of the shared embedding",
    ),
    key(
        "model.extractor",
        Choice(&["reference_tiny", "hrnet_w32_external"]),
        Some("reference_tiny"),
        "feature extractor id",
    ),
    key(
        "model.crosstalk_mode",
        Choice(&["within_image_two_pass", "stale_buffer"]),
        Some("within_image_two_pass"),
        "how partner score maps are obtained",
    ),
    key(
        "model.checkpoint",
        FilePath,
        None,
        "model archive for eval, infer and visualize",
    ),
    key(
        "model.backbone",
        FilePath,
        None,
        "archive whose extractor.* tensors initialise the backbone",
    ),
    key(
        "train.lr_init",
        Float,
        Some("5e-4"),
        "initial learning rate",
    ),
    key("train.lr_min", Float, Some("5e-6"), "final learning rate"),
    key("train.batch_size", Int, Some("8"), "images per step"),
    key("train.total_steps", Int, Some("1000"), "optimiser steps"),
    key(
        "train.eval_every",
        Int,
        Some("0"),
        "steps between test-split evaluations; 0 disables",
    ),
    key("train.adam_beta1", Float, Some("0.9"), "first-moment decay"),
    key(
        "train.adam_beta2",
        Float,
        Some("0.999"),
        "second-moment decay",
    ),
    key("train.adam_eps", Float, Some("1e-8"), "denominator offset"),
    key(
        "augment.scale_min",
        Float,
        Some("0.75"),
        "lower scale factor",
    ),
    key(
        "augment.scale_max",
        Float,
        Some("1.25"),
        "upper scale factor",
    ),
    key("augment.zoom_min", Float, Some("0.75"), "lower zoom factor"),
    key("augment.zoom_max", Float, Some("1.25"), "upper zoom factor"),
    key(
        "augment.rotation_deg",
        Float,
        Some("10"),
        "maximum absolute rotation in degrees",
    ),
    key(
        "augment.hflip_prob",
        Float,
        Some("0.5"),
        "horizontal flip probability",
    ),
    key(
        "augment.noise_kernel",
        Int,
        Some("5"),
        "Gaussian blur kernel side; 1 disables",
    ),
    key("augment.hue", Float, Some("0.015"), "hue gain bound"),
    key(
        "augment.saturation",
        Float,
        Some("0.4"),
        "saturation gain bound",
    ),
    key("augment.value", Float, Some("0.3"), "value gain bound"),
    key(
        "grid.variants",
        VariantList,
        Some("all"),
        "variants to train, or `all`",
    ),
    key(
        "bench.warmup",
        Int,
        Some("5"),
        "warmup passes (at least 5 are run)",
    ),
    key("bench.timed", Int, Some("20"), "timed passes per run"),
    key("bench.images", Int, Some("4"), "synthetic probe images"),
    key(
        "bench.train_steps",
        Int,
        Some("0"),
        "training steps timed per pipeline; 0 skips training",
    ),
];

pub fn key_spec(name: &str) -> Option<&'static KeySpec> {
    SCHEMA.iter().find(|k| k.key == name)
}

fn check_value(spec: &KeySpec, value: &str) -> Result<()> {
    let bad = |why: String| {
        Err(Error::Validation(format!(
            "invalid value `{value}` for `{}`: {why}",
            spec.key
        )))
    };
    match spec.kind {
        Int => {
            if let Err(e) = value.parse::<u64>() {
                return bad(e.to_string());
            }
        }
        Float => match value.parse::<f64>() {
            Ok(v) if v.is_finite() => {}
            Ok(_) => return bad("not finite".into()),
            Err(e) => return bad(e.to_string()),
        },
        Text | FilePath => {
            if value.is_empty() {
                return bad("empty".into());
            }
        }
        Choice(options) => {
            if !options.contains(&value) {
                return bad(format!("expected one of {}", options.join(", ")));
            }
        }
        VariantList => {
            if value != "all" {
                for name in value.split(',').map(str::trim) {
                    if ModelConfig::variant(name, Dims::tiny()).is_err() {
                        return bad(format!("unknown variant `{name}`"));
                    }
                }
            }
        }
    }
    Ok(())
}

fn message(e: Error) -> String {
    match e {
        Error::Validation(m) => m,
        other => other.to_string(),
    }
}

/// Explicitly assigned values; unassigned keys fall back to the schema.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Settings {
    values: BTreeMap<&'static str, String>,
}

impl Settings {
    pub fn new() -> Self {
        Self::default()
    }

    /// Assigns one key after checking it against the schema.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let spec = key_spec(key)
            .ok_or_else(|| Error::Validation(format!("unknown config key `{key}`")))?;
        let value = value.trim();
        check_value(spec, value)?;
        self.values.insert(spec.key, value.to_string());
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment.split_once('=').ok_or_else(|| {
            Error::Validation(format!(
                "override `{assignment}` is not of the form key=value"
            ))
        })?;
        self.set(k.trim(), v)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut s = Self::new();
        let mut seen = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |m: String| Error::Validation(format!("line {}: {m}", i + 1));
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected key = value, got `{line}`")))?;
            let k = k.trim();
            if let Some(prev) = seen.insert(k.to_string(), i + 1) {
                return Err(at(format!("`{k}` already set on line {prev}")));
            }
            s.set(k, v).map_err(|e| at(message(e)))?;
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
            .map_err(|e| Error::Validation(format!("{}: {}", path.display(), message(e))))
    }

    pub fn is_set(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    /// The assigned value or the schema default.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.values
            .get(key)
            .map(String::as_str)
            .or_else(|| key_spec(key).and_then(|k| k.default))
    }

    fn int(&self, key: &str) -> u64 {
        self.get(key)
            .and_then(|v| v.parse().ok())
            .expect("schema-checked integer")
    }

    fn usize(&self, key: &str) -> usize {
        self.int(key) as usize
    }

    fn float(&self, key: &str) -> f64 {
        self.get(key)
            .and_then(|v| v.parse().ok())
            .expect("schema-checked float")
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(PathBuf::from)
    }

    pub fn seed(&self) -> u64 {
        self.int("seed")
    }

    pub fn data_root(&self) -> Option<PathBuf> {
        self.path("data.root")
    }

    pub fn output_dir(&self) -> Option<PathBuf> {
        self.path("output.dir")
    }

    pub fn checkpoint(&self) -> Option<PathBuf> {
        self.path("model.checkpoint")
    }

    pub fn backbone(&self) -> Option<PathBuf> {
        self.path("model.backbone")
    }

    pub fn input_size(&self) -> usize {
        self.usize("model.input_size")
    }

    pub fn dims(&self) -> Result<Dims> {
        let size = self.input_size();
        if size == 0 || !size.is_multiple_of(4) {
            return Err(Error::Validation(format!(
                "`model.input_size` must be a positive multiple of 4, got {size}"
            )));
        }
        let channels = self.usize("model.channels");
        if channels == 0 {
            return Err(Error::Validation(
                "`model.channels` must be positive".into(),
            ));
        }
        Ok(Dims::square(size, channels))
    }

    /// Applies size, extractor, cross-talk mode and seed to a named variant.
    pub fn model_config_for(&self, variant: &str) -> Result<ModelConfig> {
        let mode: CrossTalkMode = self
            .get("model.crosstalk_mode")
            .unwrap_or_default()
            .parse()?;
        let config = ModelConfig::variant(variant, self.dims()?)
            .map_err(|e| Error::Validation(format!("`model.variant`: {}", message(e))))?
            .with_extractor(self.get("model.extractor").unwrap_or_default())
            .with_crosstalk_mode(mode)
            .with_seed(self.seed());
        config.validate()?;
        Ok(config)
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        self.model_config_for(self.get("model.variant").unwrap_or_default())
    }

    pub fn augmentation(&self) -> Result<AugmentationConfig> {
        let cfg = AugmentationConfig {
            scale_range: (
                self.float("augment.scale_min"),
                self.float("augment.scale_max"),
            ),
            zoom_range: (
                self.float("augment.zoom_min"),
                self.float("augment.zoom_max"),
            ),
            rotation_deg: self.float("augment.rotation_deg"),
            hflip_prob: self.float("augment.hflip_prob"),
            noise_kernel: self.usize("augment.noise_kernel"),
            hsv_jitter: [
                self.float("augment.hue"),
                self.float("augment.saturation"),
                self.float("augment.value"),
            ],
            seed: self.seed(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            lr_init: self.float("train.lr_init"),
            lr_min: self.float("train.lr_min"),
            batch_size: self.usize("train.batch_size"),
            total_steps: self.usize("train.total_steps"),
            seed: self.seed(),
            adam_beta1: self.float("train.adam_beta1"),
            adam_beta2: self.float("train.adam_beta2"),
            adam_eps: self.float("train.adam_eps"),
            augmentation: self.augmentation()?,
            eval_every: self.usize("train.eval_every"),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn grid_variants(&self) -> Vec<String> {
        match self.get("grid.variants").unwrap_or("all") {
            "all" => BASELINES
                .iter()
                .chain(MTL_VARIANTS.iter())
                .map(|s| s.to_string())
                .collect(),
            list => list.split(',').map(|s| s.trim().to_string()).collect(),
        }
    }

    /// `(warmup, timed, images)`.
    pub fn bench(&self) -> (usize, usize, usize) {
        (
            self.usize("bench.warmup"),
            self.usize("bench.timed"),
            self.usize("bench.images"),
        )
    }

    pub fn bench_train_steps(&self) -> usize {
        self.usize("bench.train_steps")
    }

    /// Every key with its final value, in schema order; unset optional keys
    /// are written as comments. Parsing the snapshot yields the same
    /// resolved values.
    pub fn snapshot(&self) -> String {
        let mut out = String::from("# resolved settings\n");
        for spec in SCHEMA {
            match self.get(spec.key) {
                Some(v) => writeln!(out, "{} = {v}", spec.key),
                None => writeln!(out, "# {} (unset)", spec.key),
            }
            .expect("write to string");
        }
        out
    }

    pub fn write_snapshot(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("config.resolved");
        std::fs::write(&path, self.snapshot()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_reproduce_library_defaults() {
        let s = Settings::new();
        let t = s.train_config().unwrap();
        let d = TrainConfig::default();
        assert_eq!(
            (t.lr_init, t.lr_min, t.batch_size, t.total_steps),
            (d.lr_init, d.lr_min, d.batch_size, d.total_steps)
        );
        assert_eq!(t.augmentation, AugmentationConfig::default());
        assert_eq!(
            s.model_config().unwrap(),
            ModelConfig::variant("MTL-A", Dims::tiny()).unwrap()
        );
        assert_eq!(s.grid_variants().len(), 15);
    }

    #[test]
    fn file_then_overrides() {
        let mut s = Settings::parse(
            "# run\nseed = 3\nmodel.variant = MTL-K  # matrix\n\ntrain.total_steps=50\n",
        )
        .unwrap();
        s.apply_override("train.total_steps=7").unwrap();
        assert_eq!(s.seed(), 3);
        assert_eq!(s.train_config().unwrap().total_steps, 7);
        let m = s.model_config().unwrap();
        assert_eq!((m.name.as_str(), m.seed), ("MTL-K", 3));
    }

    #[test]
    fn errors_name_the_field() {
        let e = Settings::parse("train.lr_init = fast")
            .unwrap_err()
            .to_string();
        assert!(e.contains("train.lr_init") && e.contains("line 1"), "{e}");
        let e = Settings::parse("a = 1\n").unwrap_err().to_string();
        assert!(e.contains("unknown config key `a`"), "{e}");
        assert!(Settings::parse("seed = 1\nseed = 2").is_err());
        assert!(Settings::parse("grid.variants = MTL-A, MTL-Z").is_err());
        assert!(Settings::new().apply_override("seed").is_err());
        let mut s = Settings::new();
        s.set("augment.hflip_prob", "2").unwrap();
        assert!(s
            .train_config()
            .unwrap_err()
            .to_string()
            .contains("hflip_prob"));
        s = Settings::new();
        s.set("model.input_size", "30").unwrap();
        assert!(s
            .model_config()
            .unwrap_err()
            .to_string()
            .contains("model.input_size"));
    }

    #[test]
    fn snapshot_round_trips() {
        let mut s = Settings::new();
        s.set("data.root", "/data/bridges").unwrap();
        s.set("grid.variants", "MTL-A,MTL-D").unwrap();
        let back = Settings::parse(&s.snapshot()).unwrap();
        for spec in SCHEMA {
            assert_eq!(back.get(spec.key), s.get(spec.key), "{}", spec.key);
        }
        assert_eq!(back.grid_variants(), ["MTL-A", "MTL-D"]);
        assert!(s.snapshot().contains("# model.checkpoint (unset)"));
    }
}
