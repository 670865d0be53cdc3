//! The assembled dual-branch network.
//!
//! A [`Model`] owns its configuration, its named parameters and a feature
//! extractor. Forward passes return per-branch score maps together with an
//! opaque [`ForwardCache`] that [`Model::backward`] consumes to accumulate
//! parameter gradients.

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};

use image::{GrayImage, RgbImage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{CrossTalkMode, Dims, LossKind, ModelConfig, ModelKind, ProjectionMode};
use super::extractor::{build_extractor, image_tensor, ExtractorCache, FeatureExtractor};
use super::head::{
    head_backward, head_forward_raw, head_param_shapes, init_head, HeadCache, HeadSpec,
    UpsampleCache, Upsampler,
};
use super::projection::{self, project_backward, project_with, ProjectionParams};
use crate::datamodel::labels::split_merged;
use crate::error::{Error, Result};
use crate::losses::UncertaintyParams;
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Output branch of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    Element,
    Defect,
    /// The single 14-class head of the merged-task baseline.
    Merged,
}

impl Task {
    /// Parameter-name prefix of the branch.
    pub fn prefix(self) -> &'static str {
        match self {
            Task::Element => "element",
            Task::Defect => "defect",
            Task::Merged => "merged",
        }
    }

    pub fn classes(self, dims: &Dims) -> usize {
        match self {
            Task::Element => dims.element_classes,
            Task::Defect => dims.defect_classes,
            Task::Merged => dims.merged_classes(),
        }
    }

    /// The branch whose coarse maps feed this one under cross-talk.
    fn partner(self) -> Option<Task> {
        match self {
            Task::Element => Some(Task::Defect),
            Task::Defect => Some(Task::Element),
            Task::Merged => None,
        }
    }
}

pub const LOG_VAR_ELEMENT: &str = "uncertainty.log_var_element";
pub const LOG_VAR_DEFECT: &str = "uncertainty.log_var_defect";

/// One branch's result for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchOutput {
    /// Full-resolution pre-softmax scores, `classes × H × W`.
    pub scores: Tensor,
    /// Coarse head output `O`, `classes × h × w`.
    pub coarse: Tensor,
    /// Coarse output of the first pass in two-pass cross-talk mode.
    pub provisional: Option<Tensor>,
}

/// Result of a forward pass on one image. Branches absent from the model's
/// kind are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub element: Option<BranchOutput>,
    pub defect: Option<BranchOutput>,
    pub merged: Option<BranchOutput>,
}

impl ModelOutput {
    pub fn branch(&self, task: Task) -> Option<&BranchOutput> {
        match task {
            Task::Element => self.element.as_ref(),
            Task::Defect => self.defect.as_ref(),
            Task::Merged => self.merged.as_ref(),
        }
    }

    fn branch_mut(&mut self, task: Task) -> &mut Option<BranchOutput> {
        match task {
            Task::Element => &mut self.element,
            Task::Defect => &mut self.defect,
            Task::Merged => &mut self.merged,
        }
    }
}

/// Gradients of the loss w.r.t. each branch's full-resolution scores.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreGrads {
    pub element: Option<Tensor>,
    pub defect: Option<Tensor>,
    pub merged: Option<Tensor>,
}

impl ScoreGrads {
    fn get(&self, task: Task) -> Option<&Tensor> {
        match task {
            Task::Element => self.element.as_ref(),
            Task::Defect => self.defect.as_ref(),
            Task::Merged => self.merged.as_ref(),
        }
    }
}

/// Partner maps kept between forward calls in stale-buffer mode, one slot
/// per position in the batch. Buffers are plain tensors, so they never carry
/// gradient.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CrossTalkState {
    pub element: Vec<Option<Tensor>>,
    pub defect: Vec<Option<Tensor>>,
}

impl CrossTalkState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.element.iter().chain(&self.defect).all(Option::is_none)
    }

    pub fn clear(&mut self) {
        self.element.clear();
        self.defect.clear();
    }

    /// Buffered coarse maps of `task` at `slot`, if any.
    pub fn get(&self, task: Task, slot: usize) -> Option<&Tensor> {
        let buf = match task {
            Task::Element => &self.element,
            Task::Defect => &self.defect,
            Task::Merged => return None,
        };
        buf.get(slot).and_then(Option::as_ref)
    }

    pub fn set(&mut self, task: Task, slot: usize, maps: Tensor) {
        let buf = match task {
            Task::Element => &mut self.element,
            Task::Defect => &mut self.defect,
            Task::Merged => return,
        };
        if buf.len() <= slot {
            buf.resize(slot + 1, None);
        }
        buf[slot] = Some(maps);
    }
}

struct BranchCache {
    task: Task,
    head: HeadCache,
    upsample: UpsampleCache,
}

/// Intermediate values of one forward pass, needed by [`Model::backward`].
pub struct ForwardCache {
    extractor: ExtractorCache,
    features: Tensor,
    branches: Vec<BranchCache>,
}

impl fmt::Debug for ForwardCache {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ForwardCache")
            .field("features", &self.features.shape())
            .field(
                "branches",
                &self.branches.iter().map(|b| b.task).collect::<Vec<_>>(),
            )
            .finish()
    }
}

/// Argmax class maps of one prediction. Merged models fill all three.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub element: Option<GrayImage>,
    pub defect: Option<GrayImage>,
    pub merged: Option<GrayImage>,
}

pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    extractor: Box<dyn FeatureExtractor>,
    extractor_calls: AtomicUsize,
}

impl fmt::Debug for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Model")
            .field("config", &self.config)
            .field("extractor", &self.extractor.id())
            .field("parameters", &self.params.numel())
            .finish()
    }
}

/// Builds a model with freshly initialised parameters.
pub fn build_model(config: ModelConfig) -> Result<Model> {
    Model::new(config)
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let extractor = build_extractor(&config.extractor_id, &config.dims)?;
        Self::with_extractor(config, extractor)
    }

    /// Builds a model around an externally supplied extractor. The extractor
    /// must produce `dims.channels` channels at a quarter of the input size.
    pub fn with_extractor(
        config: ModelConfig,
        extractor: Box<dyn FeatureExtractor>,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.dims;
        let out = extractor.output_shape(&[3, d.height, d.width])?;
        if out != [d.channels, d.feat_height, d.feat_width] {
            return Err(Error::Shape(format!(
                "extractor `{}` produces {out:?}, model expects {:?}",
                extractor.id(),
                [d.channels, d.feat_height, d.feat_width]
            )));
        }
        let mut model = Self {
            config,
            params: ParamStore::new(),
            extractor,
            extractor_calls: AtomicUsize::new(0),
        };
        model.init_params();
        Ok(model)
    }

    fn init_params(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let mut params = ParamStore::new();
        self.extractor.init_params(&mut rng, &mut params);
        for task in self.tasks() {
            let prefix = task.prefix();
            if let Some(mode) = self.config.projection {
                let p = ProjectionParams::identity(mode, self.config.dims.channels);
                params.insert(format!("{prefix}.projection.phi"), p.phi);
                params.insert(format!("{prefix}.projection.beta"), p.beta);
            }
            init_head(
                &self.head_spec(task),
                &format!("{prefix}.head"),
                &mut rng,
                &mut params,
            );
            self.upsampler(task)
                .init(&format!("{prefix}.upsample"), &mut params);
        }
        if self.config.loss == Some(LossKind::Uncertainty) {
            params.insert(LOG_VAR_ELEMENT, Tensor::zeros(&[1]));
            params.insert(LOG_VAR_DEFECT, Tensor::zeros(&[1]));
        }
        self.params = params;
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn dims(&self) -> &Dims {
        &self.config.dims
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Every parameter name and shape this model expects.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut shapes = self.extractor.param_shapes();
        for task in self.tasks() {
            let prefix = task.prefix();
            if let Some(mode) = self.config.projection {
                let (phi, beta) = projection::param_shapes(mode, self.config.dims.channels);
                shapes.push((format!("{prefix}.projection.phi"), phi));
                shapes.push((format!("{prefix}.projection.beta"), beta));
            }
            shapes.extend(head_param_shapes(
                &self.head_spec(task),
                &format!("{prefix}.head"),
            ));
            shapes.extend(
                self.upsampler(task)
                    .param_shapes(&format!("{prefix}.upsample")),
            );
        }
        if self.config.loss == Some(LossKind::Uncertainty) {
            shapes.push((LOG_VAR_ELEMENT.into(), vec![1]));
            shapes.push((LOG_VAR_DEFECT.into(), vec![1]));
        }
        shapes
    }

    /// Replaces all parameters after checking names and shapes.
    pub fn set_params(&mut self, params: ParamStore) -> Result<()> {
        let expected = self.param_shapes();
        let mut problems = Vec::new();
        for (name, shape) in &expected {
            match params.get(name) {
                Ok(t) if t.shape() == shape.as_slice() => {}
                Ok(t) => {
                    problems.push(format!("{name}: expected {shape:?}, found {:?}", t.shape()))
                }
                Err(_) => problems.push(format!("{name}: missing")),
            }
        }
        for name in params.names() {
            if !expected.iter().any(|(n, _)| n == name) {
                problems.push(format!("{name}: not a parameter of this model"));
            }
        }
        if !problems.is_empty() {
            return Err(Error::Shape(problems.join("; ")));
        }
        self.params = params;
        Ok(())
    }

    pub fn extractor(&self) -> &dyn FeatureExtractor {
        self.extractor.as_ref()
    }

    /// Number of extractor invocations since construction or the last reset.
    pub fn extractor_calls(&self) -> usize {
        self.extractor_calls.load(Ordering::Relaxed)
    }

    pub fn reset_extractor_calls(&self) {
        self.extractor_calls.store(0, Ordering::Relaxed);
    }

    /// Output branches in the order they are stored and run.
    pub fn tasks(&self) -> Vec<Task> {
        match self.config.kind {
            ModelKind::SingleElement => vec![Task::Element],
            ModelKind::SingleDefect => vec![Task::Defect],
            ModelKind::Merged => vec![Task::Merged],
            ModelKind::Mtl => vec![Task::Element, Task::Defect],
        }
    }

    pub fn crosstalk(&self) -> Option<CrossTalkMode> {
        self.config.crosstalk
    }

    pub fn head_spec(&self, task: Task) -> HeadSpec {
        let d = &self.config.dims;
        let partner = match (self.config.crosstalk, task.partner()) {
            (Some(_), Some(p)) => p.classes(d),
            _ => 0,
        };
        HeadSpec::new(d.channels, partner, task.classes(d))
    }

    pub fn upsampler(&self, task: Task) -> Upsampler {
        Upsampler {
            classes: task.classes(&self.config.dims),
            height: self.config.dims.height,
            width: self.config.dims.width,
        }
    }

    pub fn projection(&self, task: Task) -> Result<Option<ProjectionParams>> {
        let Some(mode) = self.config.projection else {
            return Ok(None);
        };
        let prefix = task.prefix();
        Ok(Some(ProjectionParams {
            mode,
            phi: self
                .params
                .get(&format!("{prefix}.projection.phi"))?
                .clone(),
            beta: self
                .params
                .get(&format!("{prefix}.projection.beta"))?
                .clone(),
        }))
    }

    /// Current log-variances of an uncertainty-weighted model.
    pub fn uncertainty(&self) -> Option<UncertaintyParams> {
        Some(UncertaintyParams {
            log_var_element: self.params.get(LOG_VAR_ELEMENT).ok()?.data()[0],
            log_var_defect: self.params.get(LOG_VAR_DEFECT).ok()?.data()[0],
        })
    }

    fn zero_partner(&self, task: Task) -> Tensor {
        let d = &self.config.dims;
        Tensor::zeros(&[task.classes(d), d.feat_height, d.feat_width])
    }

    fn check_image(&self, image: &Tensor) -> Result<()> {
        let d = &self.config.dims;
        if image.shape() != [3, d.height, d.width] {
            return Err(Error::Shape(format!(
                "model `{}` expects 3×{}×{} input, got {:?}",
                self.config.name,
                d.height,
                d.width,
                image.shape()
            )));
        }
        if !image.all_finite() {
            return Err(Error::Validation(
                "input image has non-finite values".into(),
            ));
        }
        Ok(())
    }

    fn head(
        &self,
        task: Task,
        f: &Tensor,
        partner: Option<&Tensor>,
    ) -> Result<(Tensor, HeadCache)> {
        let prefix = task.prefix();
        let get = |n: &str| self.params.get(&format!("{prefix}.head.{n}"));
        head_forward_raw(
            &self.head_spec(task),
            [
                get("conv1.weight")?,
                get("conv1.bias")?,
                get("conv2.weight")?,
                get("conv2.bias")?,
            ],
            f,
            partner,
        )
    }

    fn project(&self, task: Task, features: &Tensor) -> Result<Tensor> {
        match self.config.projection {
            None => Ok(features.clone()),
            Some(mode) => {
                let prefix = task.prefix();
                project_with(
                    mode,
                    self.params.get(&format!("{prefix}.projection.phi"))?,
                    self.params.get(&format!("{prefix}.projection.beta"))?,
                    features,
                )
            }
        }
    }

    /// Core forward pass. `partners` maps each cross-talk branch to the
    /// partner maps it should consume; `None` selects the two-pass scheme.
    fn run(
        &self,
        image: &Tensor,
        partners: Option<[&Tensor; 2]>,
    ) -> Result<(ModelOutput, ForwardCache)> {
        self.check_image(image)?;
        let (features, ex_cache) = self.extractor.forward(&self.params, image)?;
        self.extractor_calls.fetch_add(1, Ordering::Relaxed);

        let tasks = self.tasks();
        let projected = tasks
            .iter()
            .map(|&t| self.project(t, &features))
            .collect::<Result<Vec<_>>>()?;

        // partner input for each branch, in `tasks` order
        let mut provisional: Vec<Option<Tensor>> = vec![None; tasks.len()];
        let partner_maps: Vec<Option<Tensor>> = match (self.config.crosstalk, partners) {
            (None, Some(_)) => {
                return Err(Error::Validation(format!(
                    "model `{}` has no cross-talk but partner maps were supplied",
                    self.config.name
                )))
            }
            (None, None) => vec![None; tasks.len()],
            (Some(_), Some([for_element, for_defect])) => {
                vec![Some(for_element.clone()), Some(for_defect.clone())]
            }
            (Some(_), None) => {
                // pass 1 with zero partners; its outputs are used as constants
                let first = tasks
                    .iter()
                    .zip(&projected)
                    .map(|(&t, f)| {
                        let zeros = self.zero_partner(t.partner().expect("multitask branch"));
                        self.head(t, f, Some(&zeros)).map(|(o, _)| o)
                    })
                    .collect::<Result<Vec<_>>>()?;
                provisional = first.iter().cloned().map(Some).collect();
                vec![Some(first[1].clone()), Some(first[0].clone())]
            }
        };

        let mut output = ModelOutput {
            element: None,
            defect: None,
            merged: None,
        };
        let mut branches = Vec::with_capacity(tasks.len());
        for (i, &task) in tasks.iter().enumerate() {
            let (coarse, head) = self.head(task, &projected[i], partner_maps[i].as_ref())?;
            let prefix = task.prefix();
            let (scores, upsample) = self.upsampler(task).forward(
                self.params.get(&format!("{prefix}.upsample.weight"))?,
                self.params.get(&format!("{prefix}.upsample.bias"))?,
                &coarse,
            )?;
            *output.branch_mut(task) = Some(BranchOutput {
                scores,
                coarse,
                provisional: provisional[i].take(),
            });
            branches.push(BranchCache {
                task,
                head,
                upsample,
            });
        }
        Ok((
            output,
            ForwardCache {
                extractor: ex_cache,
                features,
                branches,
            },
        ))
    }

    /// Forward pass on one normalised `3 × H × W` image. In stale-buffer
    /// mode the partner maps come from slot 0 of `state` (zeros when empty)
    /// and the slot is then overwritten with this image's coarse maps.
    pub fn forward(&self, image: &Tensor, state: &mut CrossTalkState) -> Result<ModelOutput> {
        let mut out = self.forward_batch(std::slice::from_ref(image), state)?;
        Ok(out.pop().expect("one image").0)
    }

    /// Forward pass over a batch, keeping the caches needed for backward.
    /// In stale-buffer mode image `i` reads slot `i` of `state`; all slots
    /// are updated after the whole batch has run.
    pub fn forward_batch(
        &self,
        images: &[Tensor],
        state: &mut CrossTalkState,
    ) -> Result<Vec<(ModelOutput, ForwardCache)>> {
        let stale = self.config.crosstalk == Some(CrossTalkMode::StaleBuffer);
        let mut results = Vec::with_capacity(images.len());
        for (slot, image) in images.iter().enumerate() {
            let result = if stale {
                let for_element = state
                    .get(Task::Defect, slot)
                    .cloned()
                    .unwrap_or_else(|| self.zero_partner(Task::Defect));
                let for_defect = state
                    .get(Task::Element, slot)
                    .cloned()
                    .unwrap_or_else(|| self.zero_partner(Task::Element));
                self.run(image, Some([&for_element, &for_defect]))?
            } else {
                self.run(image, None)?
            };
            results.push(result);
        }
        if stale {
            for (slot, (out, _)) in results.iter().enumerate() {
                for task in [Task::Element, Task::Defect] {
                    let coarse = out.branch(task).expect("multitask branch").coarse.clone();
                    state.set(task, slot, coarse);
                }
            }
        }
        Ok(results)
    }

    /// Single pass with explicitly supplied partner maps: `for_element` is
    /// the defect-shaped map fed to the element head and `for_defect` the
    /// element-shaped map fed to the defect head.
    pub fn forward_with_partners(
        &self,
        image: &Tensor,
        for_element: &Tensor,
        for_defect: &Tensor,
    ) -> Result<(ModelOutput, ForwardCache)> {
        self.run(image, Some([for_element, for_defect]))
    }

    /// Forward pass that also returns the cache for [`Model::backward`].
    /// Stale-buffer models read zero partners here; use
    /// [`Model::forward_batch`] to thread a state through.
    pub fn forward_cached(&self, image: &Tensor) -> Result<(ModelOutput, ForwardCache)> {
        let mut state = CrossTalkState::new();
        let mut out = self.forward_batch(std::slice::from_ref(image), &mut state)?;
        Ok(out.pop().expect("one image"))
    }

    /// Accumulates into `grads` the gradient of a loss whose derivatives
    /// w.r.t. the full-resolution scores are `score_grads`. Partner maps are
    /// constants, so no gradient flows between branches.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        score_grads: &ScoreGrads,
        grads: &mut ParamStore,
    ) -> Result<()> {
        let mut grad_features: Option<Tensor> = None;
        for branch in &cache.branches {
            let Some(g) = score_grads.get(branch.task) else {
                continue;
            };
            let prefix = branch.task.prefix();
            let g_coarse = self.upsampler(branch.task).backward(
                &format!("{prefix}.upsample"),
                &self.params,
                &branch.upsample,
                g,
                grads,
            )?;
            let g_f = head_backward(
                &self.head_spec(branch.task),
                &format!("{prefix}.head"),
                &self.params,
                &branch.head,
                &g_coarse,
                grads,
            )?;
            let g_features = match self.config.projection {
                None => g_f,
                Some(mode) => {
                    let phi = self.params.get(&format!("{prefix}.projection.phi"))?;
                    let (gi, gphi, gbeta) = project_backward(mode, phi, &cache.features, &g_f)?;
                    grads.accumulate(&format!("{prefix}.projection.phi"), &gphi);
                    grads.accumulate(&format!("{prefix}.projection.beta"), &gbeta);
                    gi
                }
            };
            match grad_features.as_mut() {
                Some(acc) => acc.add_assign(&g_features),
                None => grad_features = Some(g_features),
            }
        }
        if let Some(g) = grad_features {
            self.extractor
                .backward(&self.params, &cache.extractor, &g, grads)?;
        }
        Ok(())
    }

    /// Class maps for an RGB image of the model's input size.
    pub fn predict(&self, image: &RgbImage, state: &mut CrossTalkState) -> Result<Prediction> {
        let out = self.forward(&image_tensor(image), state)?;
        prediction_from_output(&out)
    }

    /// Runs the extractor alone on an RGB image.
    pub fn extract(&self, image: &RgbImage) -> Result<Tensor> {
        let t = image_tensor(image);
        self.check_image(&t)?;
        self.extractor_calls.fetch_add(1, Ordering::Relaxed);
        Ok(self.extractor.forward(&self.params, &t)?.0)
    }

    pub fn projection_mode(&self) -> Option<ProjectionMode> {
        self.config.projection
    }
}

/// Argmax class maps from a model output; merged scores are also split into
/// element and defect maps.
pub fn prediction_from_output(out: &ModelOutput) -> Result<Prediction> {
    let element = out
        .element
        .as_ref()
        .map(|b| argmax_map(&b.scores))
        .transpose()?;
    let defect = out
        .defect
        .as_ref()
        .map(|b| argmax_map(&b.scores))
        .transpose()?;
    let merged = out
        .merged
        .as_ref()
        .map(|b| argmax_map(&b.scores))
        .transpose()?;
    if let Some(m) = &merged {
        let (e, d) = split_merged(m)?;
        return Ok(Prediction {
            element: Some(e),
            defect: Some(d),
            merged,
        });
    }
    Ok(Prediction {
        element,
        defect,
        merged,
    })
}

/// Per-pixel argmax over the class axis; ties go to the lowest class index.
pub fn argmax_map(scores: &Tensor) -> Result<GrayImage> {
    let (c, h, w) = scores.dims3()?;
    if c > 256 {
        return Err(Error::Shape(format!("{c} classes do not fit an 8-bit map")));
    }
    let plane = h * w;
    let data = scores.data();
    let labels = (0..plane)
        .map(|p| {
            let mut best = 0;
            for k in 1..c {
                if data[k * plane + p] > data[best * plane + p] {
                    best = k;
                }
            }
            best as u8
        })
        .collect();
    Ok(GrayImage::from_raw(w as u32, h as u32, labels).expect("dimensions match buffer"))
}
