use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datamodel::catalog::{NUM_DEFECT_CLASSES, NUM_ELEMENT_CLASSES, NUM_MERGED_CLASSES};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    SingleElement,
    SingleDefect,
    Merged,
    Mtl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionMode {
    Scalar,
    Vector,
    Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossTalkMode {
    /// Two passes per image; the second pass consumes the first pass's
    /// detached partner maps.
    #[default]
    WithinImageTwoPass,
    /// Partner maps come from the previous forward call (previous step).
    StaleBuffer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Additive,
    Uncertainty,
}

macro_rules! str_enum {
    ($t:ty { $($v:ident => $s:literal),* $(,)? }) => {
        impl $t {
            pub fn as_str(self) -> &'static str {
                match self { $(<$t>::$v => $s),* }
            }
        }
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
        impl FromStr for $t {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok(<$t>::$v),)*
                    other => Err(Error::Validation(format!(
                        "unknown {} `{other}`", stringify!($t)
                    ))),
                }
            }
        }
    };
}

str_enum!(ModelKind { SingleElement => "single_element", SingleDefect => "single_defect", Merged => "merged", Mtl => "mtl" });
str_enum!(ProjectionMode { Scalar => "scalar", Vector => "vector", Matrix => "matrix" });
str_enum!(CrossTalkMode { WithinImageTwoPass => "within_image_two_pass", StaleBuffer => "stale_buffer" });
str_enum!(LossKind { Additive => "additive", Uncertainty => "uncertainty" });

/// Spatial and channel sizes of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub height: usize,
    pub width: usize,
    /// Channels of the shared embedding.
    pub channels: usize,
    pub feat_height: usize,
    pub feat_width: usize,
    pub element_classes: usize,
    pub defect_classes: usize,
}

impl Dims {
    /// Square input with a stride-4 embedding.
    pub fn square(size: usize, channels: usize) -> Self {
        Self {
            height: size,
            width: size,
            channels,
            feat_height: size / 4,
            feat_width: size / 4,
            element_classes: NUM_ELEMENT_CLASSES,
            defect_classes: NUM_DEFECT_CLASSES,
        }
    }

    /// 3×480×480 input, 480×120×120 embedding.
    pub fn paper() -> Self {
        Self::square(480, 480)
    }

    /// 3×64×64 input, 32×16×16 embedding.
    pub fn tiny() -> Self {
        Self::square(64, 32)
    }

    pub fn merged_classes(&self) -> usize {
        self.element_classes * self.defect_classes
    }
}

/// One model of the comparison: a single-task baseline, the merged-task
/// baseline or a multitask variant.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: String,
    pub kind: ModelKind,
    /// Multitask only.
    pub projection: Option<ProjectionMode>,
    /// Multitask only; `None` disables cross-talk.
    pub crosstalk: Option<CrossTalkMode>,
    /// Multitask only.
    pub loss: Option<LossKind>,
    pub dims: Dims,
    pub extractor_id: String,
    pub seed: u64,
}

pub const REFERENCE_EXTRACTOR: &str = "reference_tiny";
pub const HRNET_EXTRACTOR: &str = "hrnet_w32_external";

/// Names of the twelve multitask variants, in table order.
pub const MTL_VARIANTS: [&str; 12] = [
    "MTL-A", "MTL-B", "MTL-C", "MTL-D", "MTL-E", "MTL-F", "MTL-G", "MTL-H", "MTL-I", "MTL-J",
    "MTL-K", "MTL-L",
];

pub const BASELINES: [&str; 3] = ["single-element", "single-defect", "merged"];

impl ModelConfig {
    pub fn single_element(dims: Dims) -> Self {
        Self::baseline("single-element", ModelKind::SingleElement, dims)
    }

    pub fn single_defect(dims: Dims) -> Self {
        Self::baseline("single-defect", ModelKind::SingleDefect, dims)
    }

    pub fn merged(dims: Dims) -> Self {
        Self::baseline("merged", ModelKind::Merged, dims)
    }

    fn baseline(name: &str, kind: ModelKind, dims: Dims) -> Self {
        Self {
            name: name.into(),
            kind,
            projection: None,
            crosstalk: None,
            loss: None,
            dims,
            extractor_id: REFERENCE_EXTRACTOR.into(),
            seed: 0,
        }
    }

    pub fn mtl(
        name: &str,
        projection: ProjectionMode,
        crosstalk: bool,
        loss: LossKind,
        dims: Dims,
    ) -> Self {
        Self {
            name: name.into(),
            kind: ModelKind::Mtl,
            projection: Some(projection),
            crosstalk: crosstalk.then_some(CrossTalkMode::default()),
            loss: Some(loss),
            dims,
            extractor_id: REFERENCE_EXTRACTOR.into(),
            seed: 0,
        }
    }

    /// Looks up a named configuration: `single-element`, `single-defect`,
    /// `merged` or `MTL-A` … `MTL-L`.
    pub fn variant(name: &str, dims: Dims) -> Result<Self> {
        match name {
            "single-element" => return Ok(Self::single_element(dims)),
            "single-defect" => return Ok(Self::single_defect(dims)),
            "merged" => return Ok(Self::merged(dims)),
            _ => {}
        }
        let index = MTL_VARIANTS
            .iter()
            .position(|v| v.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Validation(format!("unknown variant `{name}`")))?;
        // rows cycle loss fastest, then cross-talk, then projection
        let projection = [
            ProjectionMode::Scalar,
            ProjectionMode::Vector,
            ProjectionMode::Matrix,
        ][index / 4];
        let crosstalk = (index / 2) % 2 == 1;
        let loss = if index % 2 == 0 {
            LossKind::Additive
        } else {
            LossKind::Uncertainty
        };
        Ok(Self::mtl(
            MTL_VARIANTS[index],
            projection,
            crosstalk,
            loss,
            dims,
        ))
    }

    /// All fifteen configurations: the three baselines then MTL-A … MTL-L.
    pub fn all_variants(dims: Dims) -> Vec<Self> {
        BASELINES
            .iter()
            .chain(MTL_VARIANTS.iter())
            .map(|n| Self::variant(n, dims).expect("known variant"))
            .collect()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_crosstalk_mode(mut self, mode: CrossTalkMode) -> Self {
        if self.crosstalk.is_some() {
            self.crosstalk = Some(mode);
        }
        self
    }

    pub fn with_extractor(mut self, id: &str) -> Self {
        self.extractor_id = id.into();
        self
    }

    pub fn has_element_head(&self) -> bool {
        matches!(self.kind, ModelKind::SingleElement | ModelKind::Mtl)
    }

    pub fn has_defect_head(&self) -> bool {
        matches!(self.kind, ModelKind::SingleDefect | ModelKind::Mtl)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(format!("model `{}`: {m}", self.name)));
        match self.kind {
            ModelKind::Mtl => {
                if self.projection.is_none() {
                    return bad("multitask models need a projection mode".into());
                }
                if self.loss.is_none() {
                    return bad("multitask models need a loss kind".into());
                }
            }
            kind => {
                if self.projection.is_some() || self.crosstalk.is_some() || self.loss.is_some() {
                    return bad(format!("projection, cross-talk and loss kind apply only to multitask models, not {kind}"));
                }
            }
        }
        let d = &self.dims;
        if d.height == 0 || d.width == 0 || d.channels == 0 {
            return bad("dimensions must be positive".into());
        }
        if d.element_classes != NUM_ELEMENT_CLASSES || d.defect_classes != NUM_DEFECT_CLASSES {
            return bad(format!(
                "class counts must be {NUM_ELEMENT_CLASSES} (element) and {NUM_DEFECT_CLASSES} (defect)"
            ));
        }
        debug_assert_eq!(d.merged_classes(), NUM_MERGED_CLASSES);
        if !d.height.is_multiple_of(4) || !d.width.is_multiple_of(4) {
            return bad(format!(
                "input {}×{} must be divisible by 4",
                d.height, d.width
            ));
        }
        if d.feat_height * 4 != d.height || d.feat_width * 4 != d.width {
            return bad("embedding size must be a quarter of the input size".into());
        }
        if d.channels < 4 {
            return bad("embedding needs at least 4 channels".into());
        }
        Ok(())
    }
}
