use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::evaluate::{evaluate_samples, EvalReport};
use super::optimizer::Adam;
use super::schedule::lr_at;
use crate::datamodel::augment::{augment, AugmentationConfig};
use crate::datamodel::labels::merge_labels;
use crate::datamodel::manifest::{DatasetManifest, Split};
use crate::datamodel::sample::{load_split, Sample};
use crate::error::{Error, Result};
use crate::losses::{
    cross_entropy_with_grad, uncertainty_loss, uncertainty_loss_grad, UncertaintyParams,
};
use crate::network::checkpoint::save_checkpoint;
use crate::network::config::{LossKind, ModelKind};
use crate::network::extractor::image_tensor;
use crate::network::model::{
    CrossTalkState, Model, ScoreGrads, Task, LOG_VAR_DEFECT, LOG_VAR_ELEMENT,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr_init: f64,
    pub lr_min: f64,
    pub batch_size: usize,
    pub total_steps: usize,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub augmentation: AugmentationConfig,
    /// Evaluate and checkpoint every this many steps; 0 disables both.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_init: 5e-4,
            lr_min: 5e-6,
            batch_size: 8,
            total_steps: 1000,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            augmentation: AugmentationConfig::default(),
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Validation(format!("training: {m}")));
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr_init && self.lr_init.is_finite()) {
            return bad("learning rates must satisfy 0 < lr_min <= lr_init");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.total_steps == 0 {
            return bad("total_steps must be at least 1");
        }
        if !(0.0..1.0).contains(&self.adam_beta1)
            || !(0.0..1.0).contains(&self.adam_beta2)
            || self.adam_eps <= 0.0
        {
            return bad("Adam moment coefficients must lie in [0, 1) and eps must be positive");
        }
        self.augmentation.validate()
    }
}

/// Losses and rates of one optimisation step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss_element: Option<f64>,
    pub loss_defect: Option<f64>,
    /// Merged-taxonomy cross-entropy for merged models.
    pub loss_merged: Option<f64>,
    pub loss_total: f64,
    pub lr: f64,
    /// Log-variances after the update, for uncertainty-weighted models.
    pub log_var_element: Option<f64>,
    pub log_var_defect: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    /// Number of steps completed when the evaluation ran.
    pub step: usize,
    pub report: EvalReport,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
    pub best_step: Option<usize>,
}

impl TrainHistory {
    pub fn total_losses(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.loss_total).collect()
    }
}

/// Step-by-step optimisation of one model on in-memory samples.
pub struct Trainer {
    model: Model,
    cfg: TrainConfig,
    samples: Vec<Sample>,
    optimizer: Adam,
    state: CrossTalkState,
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
    step: usize,
    history: TrainHistory,
}

impl Trainer {
    pub fn new(model: Model, samples: Vec<Sample>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if samples.is_empty() {
            return Err(Error::Validation("the training split is empty".into()));
        }
        let d = model.dims();
        for s in &samples {
            s.validate()?;
            if s.dimensions() != (d.width as u32, d.height as u32) {
                return Err(Error::Entry {
                    id: s.id.clone(),
                    message: format!(
                        "sample is {:?} but the model expects {}×{}",
                        s.dimensions(),
                        d.width,
                        d.height
                    ),
                });
            }
        }
        let optimizer =
            Adam::with_moments(model.params(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
        let mut t = Self {
            model,
            cfg,
            samples,
            optimizer,
            state: CrossTalkState::new(),
            order: Vec::new(),
            cursor: 0,
            epoch: 0,
            step: 0,
            history: TrainHistory::default(),
        };
        t.reshuffle();
        Ok(t)
    }

    fn reshuffle(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.cfg.seed ^ self.epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        self.order = (0..self.samples.len()).collect();
        self.order.shuffle(&mut rng);
        self.cursor = 0;
    }

    /// Next batch of sample indices; the last batch of an epoch may be short.
    fn next_batch(&mut self) -> Vec<usize> {
        if self.cursor >= self.order.len() {
            self.epoch += 1;
            self.reshuffle();
        }
        let end = (self.cursor + self.cfg.batch_size).min(self.order.len());
        let batch = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        batch
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn history(&self) -> &TrainHistory {
        &self.history
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.cfg.total_steps
    }

    pub fn into_parts(self) -> (Model, TrainHistory) {
        (self.model, self.history)
    }

    /// Runs one optimisation step on the next batch.
    pub fn step(&mut self) -> Result<StepRecord> {
        let batch = self.next_batch();
        let aug_identity = self.cfg.augmentation.is_identity();
        let mut samples = Vec::with_capacity(batch.len());
        for &i in &batch {
            let s = &self.samples[i];
            samples.push(if aug_identity {
                s.clone()
            } else {
                augment(
                    s,
                    &self.cfg.augmentation,
                    &mut self.cfg.augmentation.rng_for(&s.id, self.epoch),
                )?
            });
        }
        let images: Vec<Tensor> = samples.iter().map(|s| image_tensor(&s.image)).collect();
        let outputs = self.model.forward_batch(&images, &mut self.state)?;

        let n = samples.len() as f64;
        let kind = self.model.config().kind;
        let mut per_image = Vec::with_capacity(samples.len());
        let (mut le, mut ld, mut lm) = (0.0, 0.0, 0.0);
        for (s, (out, _)) in samples.iter().zip(&outputs) {
            for task in [Task::Element, Task::Defect, Task::Merged] {
                if out.branch(task).is_some_and(|b| !b.scores.all_finite()) {
                    return Err(Error::NonFinite {
                        what: format!("{} scores for `{}`", task.prefix(), s.id),
                        step: self.step,
                    });
                }
            }
            let mut grads = ScoreGrads::default();
            if let Some(b) = &out.element {
                let (l, g) = cross_entropy_with_grad(&b.scores, s.element_map.as_raw())?;
                le += l / n;
                grads.element = Some(g);
            }
            if let Some(b) = &out.defect {
                let (l, g) = cross_entropy_with_grad(&b.scores, s.defect_map.as_raw())?;
                ld += l / n;
                grads.defect = Some(g);
            }
            if let Some(b) = &out.merged {
                let merged = merge_labels(&s.element_map, &s.defect_map)?;
                let (l, g) = cross_entropy_with_grad(&b.scores, merged.as_raw())?;
                lm += l / n;
                grads.merged = Some(g);
            }
            per_image.push(grads);
        }

        let uncertainty = match self.model.config().loss {
            Some(LossKind::Uncertainty) => self.model.uncertainty(),
            _ => None,
        };
        let (total, w_e, w_d, d_log_var) = match kind {
            ModelKind::SingleElement => (le, 1.0, 0.0, None),
            ModelKind::SingleDefect => (ld, 0.0, 1.0, None),
            ModelKind::Merged => (lm, 0.0, 0.0, None),
            ModelKind::Mtl => match uncertainty {
                Some(p) => {
                    let g = uncertainty_loss_grad(le, ld, &p);
                    (
                        uncertainty_loss(le, ld, &p),
                        g.d_element,
                        g.d_defect,
                        g.d_log_var,
                    )
                }
                None => (le + ld, 1.0, 1.0, None),
            },
        };
        if !total.is_finite() {
            return Err(Error::NonFinite {
                what: format!("training loss (element {le}, defect {ld})"),
                step: self.step,
            });
        }

        let mut grads = self.model.params().zeros_like();
        for ((_, cache), mut g) in outputs.iter().zip(per_image) {
            for (t, w) in [
                (&mut g.element, w_e),
                (&mut g.defect, w_d),
                (&mut g.merged, 1.0),
            ] {
                if let Some(t) = t {
                    t.scale(w / n);
                }
            }
            self.model.backward(cache, &g, &mut grads)?;
        }
        if let Some((gse, gsd)) = d_log_var {
            grads.insert(LOG_VAR_ELEMENT, Tensor::full(&[1], gse));
            grads.insert(LOG_VAR_DEFECT, Tensor::full(&[1], gsd));
        }
        for (name, g) in grads.iter() {
            if !g.all_finite() {
                return Err(Error::NonFinite {
                    what: format!("gradient of {name}"),
                    step: self.step,
                });
            }
        }

        let lr = lr_at(self.step, &self.cfg);
        self.optimizer.step(self.model.params_mut(), &grads, lr);
        let after: Option<UncertaintyParams> = uncertainty.and(self.model.uncertainty());
        let record = StepRecord {
            step: self.step,
            loss_element: self.model.tasks().contains(&Task::Element).then_some(le),
            loss_defect: self.model.tasks().contains(&Task::Defect).then_some(ld),
            loss_merged: (kind == ModelKind::Merged).then_some(lm),
            loss_total: total,
            lr,
            log_var_element: after.map(|p| p.log_var_element),
            log_var_defect: after.map(|p| p.log_var_defect),
        };
        self.step += 1;
        self.history.steps.push(record.clone());
        Ok(record)
    }

    /// Evaluates the current model and appends the result to the history.
    pub fn evaluate(&mut self, samples: &[Sample]) -> Result<&EvalRecord> {
        let report = evaluate_samples(&self.model, samples)?;
        self.history.evals.push(EvalRecord {
            step: self.step,
            report,
        });
        Ok(self.history.evals.last().expect("just pushed"))
    }

    fn record_best(&mut self) -> bool {
        let Some(last) = self.history.evals.last() else {
            return false;
        };
        let score = last.report.selection_score();
        let best = self
            .history
            .best_step
            .and_then(|s| self.history.evals.iter().find(|e| e.step == s))
            .map(|e| e.report.selection_score());
        if best.is_none_or(|b| score > b) {
            self.history.best_step = Some(last.step);
            true
        } else {
            false
        }
    }
}

/// Where a training run writes its artifacts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Self { root })
    }

    pub fn history_path(&self) -> PathBuf {
        self.root.join("history.jsonl")
    }

    pub fn last_checkpoint(&self) -> PathBuf {
        self.root.join("last.ckpt")
    }

    pub fn best_checkpoint(&self) -> PathBuf {
        self.root.join("best.ckpt")
    }

    pub fn final_checkpoint(&self) -> PathBuf {
        self.root.join("final.ckpt")
    }
}

fn json_line(out: &mut impl Write, path: &Path, value: &impl Serialize) -> Result<()> {
    let line = serde_json::to_string(value).map_err(|e| Error::Parse(e.to_string()))?;
    writeln!(out, "{line}").map_err(|e| Error::io(path, e))
}

/// Trains on in-memory samples. With `eval_samples` and a positive
/// `eval_every`, the model is evaluated periodically; with `run_dir`, each
/// step is appended to `history.jsonl` and checkpoints are written (the
/// latest evaluation as `last.ckpt`, the best mean mIoU as `best.ckpt`, the
/// end state as `final.ckpt`).
pub fn train_samples(
    model: Model,
    samples: Vec<Sample>,
    eval_samples: Option<&[Sample]>,
    cfg: TrainConfig,
    run_dir: Option<&RunDir>,
) -> Result<(Model, TrainHistory)> {
    let mut trainer = Trainer::new(model, samples, cfg)?;
    let mut log = match run_dir {
        Some(dir) => {
            let p = dir.history_path();
            Some((
                BufWriter::new(File::create(&p).map_err(|e| Error::io(&p, e))?),
                p,
            ))
        }
        None => None,
    };
    let eval_every = trainer.cfg.eval_every;
    while !trainer.is_finished() {
        let rec = trainer.step()?;
        if let Some((out, p)) = log.as_mut() {
            json_line(out, p, &rec)?;
        }
        let done = trainer.steps_done();
        if let (Some(eval), true) = (eval_samples, eval_every > 0 && done % eval_every == 0) {
            let rec = trainer.evaluate(eval)?.clone();
            let improved = trainer.record_best();
            if let Some((out, p)) = log.as_mut() {
                json_line(out, p, &rec)?;
            }
            if let Some(dir) = run_dir {
                save_checkpoint(trainer.model(), &dir.last_checkpoint())?;
                if improved {
                    save_checkpoint(trainer.model(), &dir.best_checkpoint())?;
                }
            }
        }
    }
    if let Some((mut out, p)) = log {
        out.flush().map_err(|e| Error::io(&p, e))?;
    }
    if let Some(dir) = run_dir {
        save_checkpoint(trainer.model(), &dir.final_checkpoint())?;
    }
    Ok(trainer.into_parts())
}

/// Trains on the train split of a dataset, evaluating on the test split
/// when `eval_every` is positive and that split is nonempty.
pub fn train(
    model: Model,
    manifest: &DatasetManifest,
    cfg: TrainConfig,
    run_dir: Option<&RunDir>,
) -> Result<(Model, TrainHistory)> {
    let d = *model.dims();
    if d.height != d.width {
        return Err(Error::Validation(
            "dataset training needs a square model input".into(),
        ));
    }
    let train_set = load_split(manifest, Split::Train, d.height as u32)?;
    if train_set.is_empty() {
        return Err(Error::Validation("the training split is empty".into()));
    }
    let test_set = if cfg.eval_every > 0 {
        load_split(manifest, Split::Test, d.height as u32)?
    } else {
        Vec::new()
    };
    let eval = (!test_set.is_empty()).then_some(test_set.as_slice());
    train_samples(model, train_set, eval, cfg, run_dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::synthetic;
    use crate::network::config::{Dims, ModelConfig};
    use crate::network::model::build_model;

    fn quick(steps: usize) -> TrainConfig {
        TrainConfig {
            total_steps: steps,
            batch_size: 2,
            lr_init: 1e-3,
            lr_min: 1e-4,
            ..TrainConfig::default()
        }
    }

    fn model(name: &str) -> Model {
        build_model(
            ModelConfig::variant(name, Dims::square(32, 8))
                .unwrap()
                .with_seed(1),
        )
        .unwrap()
    }

    #[test]
    fn invalid_configs_rejected() {
        let data = synthetic::dataset(2, 32, 0);
        for cfg in [
            quick(0),
            TrainConfig {
                batch_size: 0,
                ..quick(1)
            },
            TrainConfig {
                lr_min: 1.0,
                ..quick(1)
            },
        ] {
            assert!(Trainer::new(model("MTL-A"), data.clone(), cfg).is_err());
        }
        assert!(Trainer::new(model("MTL-A"), Vec::new(), quick(1)).is_err());
        assert!(Trainer::new(model("MTL-A"), synthetic::dataset(1, 16, 0), quick(1)).is_err());
    }

    #[test]
    fn batches_cover_each_epoch_and_keep_the_remainder() {
        let mut t = Trainer::new(
            model("single-element"),
            synthetic::dataset(5, 32, 0),
            quick(10),
        )
        .unwrap();
        let mut seen = Vec::new();
        let sizes: Vec<usize> = (0..3)
            .map(|_| {
                let b = t.next_batch();
                seen.extend(b.clone());
                b.len()
            })
            .collect();
        assert_eq!(sizes, vec![2, 2, 1]);
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2, 3, 4]);
        assert_eq!(t.next_batch().len(), 2);
        assert_eq!(t.epoch, 1);
    }

    #[test]
    fn single_task_training_leaves_other_branch_untouched() {
        let data = synthetic::dataset(2, 32, 0);
        let m = model("single-element");
        let (trained, h) = train_samples(m, data, None, quick(3), None).unwrap();
        assert!(h
            .steps
            .iter()
            .all(|s| s.loss_defect.is_none() && s.loss_element.is_some()));
        assert!(trained.params().names().all(|n| !n.starts_with("defect.")));

        let mtl = model("MTL-A");
        let extractor_before = mtl.params().fingerprint("extractor.");
        let (trained, _) =
            train_samples(mtl, synthetic::dataset(2, 32, 0), None, quick(2), None).unwrap();
        assert_ne!(trained.params().fingerprint("extractor."), extractor_before);
    }

    #[test]
    fn uncertainty_parameters_get_gradients_every_step() {
        let (trained, h) = train_samples(
            model("MTL-B"),
            synthetic::dataset(2, 32, 0),
            None,
            quick(4),
            None,
        )
        .unwrap();
        let mut prev = (0.0, 0.0);
        for s in &h.steps {
            let cur = (s.log_var_element.unwrap(), s.log_var_defect.unwrap());
            assert!(cur.0 != prev.0 && cur.1 != prev.1);
            prev = cur;
        }
        assert!(trained.uncertainty().is_some());
        let (_, h) = train_samples(
            model("MTL-A"),
            synthetic::dataset(2, 32, 0),
            None,
            quick(2),
            None,
        )
        .unwrap();
        assert!(h.steps.iter().all(|s| s.log_var_element.is_none()));
    }

    #[test]
    fn fixed_seed_reproduces_losses_bitwise() {
        let cfg = TrainConfig {
            augmentation: AugmentationConfig {
                seed: 7,
                ..AugmentationConfig::default()
            },
            ..quick(10)
        };
        let run = || {
            let (_, h) = train_samples(
                model("MTL-H"),
                synthetic::dataset(3, 32, 4),
                None,
                cfg.clone(),
                None,
            )
            .unwrap();
            h.total_losses()
                .iter()
                .map(|l| l.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn stale_buffer_state_is_threaded_through_training() {
        let cfg = ModelConfig::variant("MTL-C", Dims::square(32, 8))
            .unwrap()
            .with_crosstalk_mode(crate::network::config::CrossTalkMode::StaleBuffer);
        let mut t = Trainer::new(
            build_model(cfg).unwrap(),
            synthetic::dataset(2, 32, 0),
            quick(2),
        )
        .unwrap();
        assert!(t.state.is_empty());
        t.step().unwrap();
        assert!(t.state.get(Task::Element, 1).is_some());
    }

    #[test]
    fn run_directory_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::new(dir.path().join("run")).unwrap();
        let data = synthetic::dataset(2, 32, 0);
        let cfg = TrainConfig {
            eval_every: 2,
            ..quick(4)
        };
        let (m, h) =
            train_samples(model("MTL-A"), data.clone(), Some(&data), cfg, Some(&run)).unwrap();
        assert_eq!(h.steps.len(), 4);
        assert_eq!(h.evals.len(), 2);
        assert!(h.best_step.is_some());
        let lines = std::fs::read_to_string(run.history_path()).unwrap();
        assert_eq!(lines.lines().count(), 6);
        for p in [
            run.last_checkpoint(),
            run.best_checkpoint(),
            run.final_checkpoint(),
        ] {
            assert!(p.exists(), "{}", p.display());
        }
        let back = crate::network::checkpoint::load_checkpoint(&run.final_checkpoint()).unwrap();
        assert_eq!(back.params(), m.params());
    }

    #[test]
    fn non_finite_loss_names_the_step() {
        let mut m = model("MTL-A");
        for (_, t) in m.params_mut().iter_mut() {
            t.fill(f64::NAN);
        }
        let err = train_samples(m, synthetic::dataset(2, 32, 0), None, quick(2), None).unwrap_err();
        assert!(err.to_string().contains("step 0"), "{err}");
    }
}
