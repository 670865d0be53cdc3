//! WebAssembly bindings behind `www/index.html`.
//!
//! Two things are exposed: the uncertainty-weighted loss as a function of
//! the two log-variances, and a training playground that steps a small
//! multitask model on synthetic scenes and renders its predictions.

use bridge_mtl::datamodel::{synthetic, AugmentationConfig, ClassCatalog, Sample};
use bridge_mtl::evaluation::{overlay_image, render_condition_report};
use bridge_mtl::losses::{
    additive_loss, uncertainty_loss, uncertainty_loss_grad, UncertaintyParams,
};
use bridge_mtl::network::{build_model, CrossTalkState, Dims, ModelConfig, Prediction};
use bridge_mtl::training::{evaluate_samples, TrainConfig, Trainer};
use serde_json::json;
use wasm_bindgen::prelude::*;

/// Combined loss on an `n × n` grid of `(s_e, s_d)` spanning
/// `[s_min, s_max]` on both axes; row `i` holds `s_e = s_min + i·step`.
#[wasm_bindgen]
pub fn uncertainty_surface(
    loss_element: f64,
    loss_defect: f64,
    s_min: f64,
    s_max: f64,
    n: usize,
) -> Vec<f64> {
    let n = n.max(2);
    let step = (s_max - s_min) / (n - 1) as f64;
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let p = UncertaintyParams {
                log_var_element: s_min + i as f64 * step,
                log_var_defect: s_min + j as f64 * step,
            };
            out.push(uncertainty_loss(loss_element, loss_defect, &p));
        }
    }
    out
}

/// Loss, task weights and log-variance gradients at one point, as JSON.
/// For fixed task losses the minimum lies at `s = ln L` per task.
#[wasm_bindgen]
pub fn uncertainty_point(
    loss_element: f64,
    loss_defect: f64,
    s_element: f64,
    s_defect: f64,
) -> String {
    let p = UncertaintyParams {
        log_var_element: s_element,
        log_var_defect: s_defect,
    };
    let g = uncertainty_loss_grad(loss_element, loss_defect, &p);
    let (sigma_e, sigma_d) = p.sigmas();
    let (gs_e, gs_d) = g.d_log_var.unwrap_or_default();
    json!({
        "loss": uncertainty_loss(loss_element, loss_defect, &p),
        "additive": additive_loss(loss_element, loss_defect),
        "weight_element": g.d_element,
        "weight_defect": g.d_defect,
        "grad_s_element": gs_e,
        "grad_s_defect": gs_d,
        "sigma_element": sigma_e,
        "sigma_defect": sigma_d,
        "optimum_s_element": loss_element.ln(),
        "optimum_s_defect": loss_defect.ln(),
    })
    .to_string()
}

const SCENE_SIZE: u32 = 32;
const SCENES: usize = 4;

/// A small model trained one step at a time on four synthetic scenes.
#[wasm_bindgen]
pub struct Playground {
    trainer: Trainer,
    scenes: Vec<Sample>,
    losses: Vec<f64>,
}

#[wasm_bindgen]
impl Playground {
    /// `variant` is any configuration name (`MTL-A` … `MTL-L`,
    /// `single-element`, `single-defect`, `merged`).
    #[wasm_bindgen(constructor)]
    pub fn new(variant: &str, seed: u32, total_steps: usize) -> Result<Playground, String> {
        let dims = Dims::square(SCENE_SIZE as usize, 16);
        let config = ModelConfig::variant(variant, dims)
            .map_err(|e| e.to_string())?
            .with_seed(seed as u64);
        let model = build_model(config).map_err(|e| e.to_string())?;
        let scenes = synthetic::dataset(SCENES, SCENE_SIZE, seed as u64);
        let cfg = TrainConfig {
            lr_init: 5e-3,
            lr_min: 5e-5,
            batch_size: SCENES,
            total_steps: total_steps.max(1),
            seed: seed as u64,
            augmentation: AugmentationConfig::identity(),
            ..TrainConfig::default()
        };
        let trainer = Trainer::new(model, scenes.clone(), cfg).map_err(|e| e.to_string())?;
        Ok(Playground {
            trainer,
            scenes,
            losses: Vec::new(),
        })
    }

    /// Runs up to `n` optimiser steps and returns the last step record as
    /// JSON (`null` once the schedule is finished).
    pub fn step(&mut self, n: usize) -> Result<String, String> {
        let mut last = None;
        for _ in 0..n {
            if self.trainer.is_finished() {
                break;
            }
            let rec = self.trainer.step().map_err(|e| e.to_string())?;
            self.losses.push(rec.loss_total);
            last = Some(rec);
        }
        serde_json::to_string(&last).map_err(|e| e.to_string())
    }

    pub fn steps_done(&self) -> usize {
        self.trainer.steps_done()
    }

    pub fn total_steps(&self) -> usize {
        self.trainer.config().total_steps
    }

    pub fn loss_history(&self) -> Vec<f64> {
        self.losses.clone()
    }

    pub fn scene_count(&self) -> usize {
        self.scenes.len()
    }

    fn predict(&self, scene: usize) -> Result<(&Sample, Prediction), String> {
        let sample = self
            .scenes
            .get(scene)
            .ok_or_else(|| format!("scene {scene} out of range"))?;
        let pred = self
            .trainer
            .model()
            .predict(&sample.image, &mut CrossTalkState::new())
            .map_err(|e| e.to_string())?;
        Ok((sample, pred))
    }

    /// Input, element mask, defect mask and hatched combination side by
    /// side, as RGBA bytes of a `4·32 × 32` image.
    pub fn overlay_rgba(&self, scene: usize) -> Result<Vec<u8>, String> {
        let (sample, pred) = self.predict(scene)?;
        let (e, d) = complete(sample, &pred);
        let rgb = overlay_image(&sample.image, &e, &d).map_err(|e| e.to_string())?;
        Ok(rgb.pixels().flat_map(|p| [p[0], p[1], p[2], 255]).collect())
    }

    /// The same composite for the ground-truth labels.
    pub fn truth_rgba(&self, scene: usize) -> Result<Vec<u8>, String> {
        let sample = self.scenes.get(scene).ok_or("scene out of range")?;
        let rgb = overlay_image(&sample.image, &sample.element_map, &sample.defect_map)
            .map_err(|e| e.to_string())?;
        Ok(rgb.pixels().flat_map(|p| [p[0], p[1], p[2], 255]).collect())
    }

    pub fn overlay_width(&self) -> u32 {
        4 * SCENE_SIZE
    }

    pub fn overlay_height(&self) -> u32 {
        SCENE_SIZE
    }

    /// Training-set metrics of the current parameters as text.
    pub fn metrics(&self) -> Result<String, String> {
        evaluate_samples(self.trainer.model(), &self.scenes)
            .map(|r| r.render())
            .map_err(|e| e.to_string())
    }

    /// Corrosion share per predicted element class for one scene.
    pub fn condition_report(&self, scene: usize) -> Result<String, String> {
        let (sample, pred) = self.predict(scene)?;
        let (e, d) = complete(sample, &pred);
        render_condition_report(&e, &d, &ClassCatalog::default())
            .map(|r| r.to_text())
            .map_err(|e| e.to_string())
    }
}

/// Fills a task the model does not predict with background.
fn complete(sample: &Sample, pred: &Prediction) -> (image::GrayImage, image::GrayImage) {
    let (w, h) = sample.dimensions();
    let blank = || image::GrayImage::new(w, h);
    (
        pred.element.clone().unwrap_or_else(blank),
        pred.defect.clone().unwrap_or_else(blank),
    )
}
