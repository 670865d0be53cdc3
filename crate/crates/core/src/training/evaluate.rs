use serde::{Deserialize, Serialize};

use crate::datamodel::catalog::{ClassCatalog, NUM_DEFECT_CLASSES, NUM_ELEMENT_CLASSES};
use crate::datamodel::manifest::{DatasetManifest, Split};
use crate::datamodel::sample::{load_split, Sample};
use crate::error::{Error, Result};
use crate::metrics::{accumulate_confusion, task_report, ConfusionMatrix, TaskReport};
use crate::network::extractor::image_tensor;
use crate::network::model::{prediction_from_output, CrossTalkState, Model, Prediction};

/// Anything that maps a sample to class maps.
pub trait Predictor {
    fn predict(&mut self, sample: &Sample) -> Result<Prediction>;
}

/// Runs a model image by image. In stale-buffer mode the cross-talk state
/// carries over from one image to the next, in sample order.
pub struct ModelPredictor<'a> {
    model: &'a Model,
    state: CrossTalkState,
}

impl<'a> ModelPredictor<'a> {
    pub fn new(model: &'a Model) -> Self {
        Self {
            model,
            state: CrossTalkState::new(),
        }
    }
}

impl Predictor for ModelPredictor<'_> {
    fn predict(&mut self, sample: &Sample) -> Result<Prediction> {
        let out = self
            .model
            .forward(&image_tensor(&sample.image), &mut self.state)?;
        prediction_from_output(&out)
    }
}

/// Task reports from one global confusion matrix per task. A task the
/// predictor does not produce is `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub images: usize,
    pub element: Option<TaskReport>,
    pub defect: Option<TaskReport>,
    pub element_confusion: Option<ConfusionMatrix>,
    pub defect_confusion: Option<ConfusionMatrix>,
}

impl EvalReport {
    /// Mean of the available task mIoUs; used for model selection.
    pub fn selection_score(&self) -> f64 {
        let v: Vec<f64> = self
            .element
            .iter()
            .chain(&self.defect)
            .map(|r| r.m_iou)
            .collect();
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    }

    /// Plain-text summary: mean metrics per task, then per-class rows.
    pub fn render(&self) -> String {
        let catalog = ClassCatalog::default();
        let pct = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{:.2}", 100.0 * v));
        let mut out = format!("images: {}\n", self.images);
        for (task, report, names) in [
            ("element", &self.element, &catalog.element_classes),
            ("defect", &self.defect, &catalog.defect_classes),
        ] {
            let Some(r) = report else { continue };
            let [p, rc, f1, iou] = r.headline();
            out.push_str(&format!(
                "{task}: mP {} | mR {} | mF1 {} | mIoU {}\n",
                pct(Some(p)),
                pct(Some(rc)),
                pct(Some(f1)),
                pct(Some(iou))
            ));
            for (name, c) in names.iter().zip(&r.classes) {
                out.push_str(&format!(
                    "  {name:<14} IoU {:>6}  P {:>6}  R {:>6}  F1 {:>6}  pixels {}\n",
                    pct(c.iou),
                    pct(c.precision),
                    pct(c.recall),
                    pct(c.f1),
                    c.support
                ));
            }
        }
        out
    }
}

pub fn evaluate_predictor(predictor: &mut dyn Predictor, samples: &[Sample]) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Validation(
            "cannot evaluate on an empty split".into(),
        ));
    }
    let mut ce: Option<ConfusionMatrix> = None;
    let mut cd: Option<ConfusionMatrix> = None;
    for sample in samples {
        let p = predictor.predict(sample)?;
        if let Some(e) = &p.element {
            let cm = ce.get_or_insert_with(|| ConfusionMatrix::new(NUM_ELEMENT_CLASSES));
            accumulate_confusion(e, &sample.element_map, cm)?;
        }
        if let Some(d) = &p.defect {
            let cm = cd.get_or_insert_with(|| ConfusionMatrix::new(NUM_DEFECT_CLASSES));
            accumulate_confusion(d, &sample.defect_map, cm)?;
        }
    }
    Ok(EvalReport {
        images: samples.len(),
        element: ce.as_ref().map(task_report).transpose()?,
        defect: cd.as_ref().map(task_report).transpose()?,
        element_confusion: ce,
        defect_confusion: cd,
    })
}

/// Scores a model on in-memory samples without augmentation.
pub fn evaluate_samples(model: &Model, samples: &[Sample]) -> Result<EvalReport> {
    evaluate_predictor(&mut ModelPredictor::new(model), samples)
}

/// Scores a model on one split of a dataset, resizing to the model's input.
pub fn evaluate(model: &Model, manifest: &DatasetManifest, split: Split) -> Result<EvalReport> {
    let size = model.dims().height;
    if model.dims().width != size {
        return Err(Error::Validation(
            "dataset evaluation needs a square model input".into(),
        ));
    }
    let samples = load_split(manifest, split, size as u32)?;
    if samples.is_empty() {
        return Err(Error::Validation(format!("the {split} split is empty")));
    }
    evaluate_samples(model, &samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::labels::merge_labels;
    use crate::datamodel::synthetic;
    use crate::metrics::merged_to_task_reports;
    use crate::network::config::{Dims, ModelConfig};
    use crate::network::model::build_model;
    use image::{GrayImage, Luma};

    struct Oracle;
    impl Predictor for Oracle {
        fn predict(&mut self, s: &Sample) -> Result<Prediction> {
            Ok(Prediction {
                element: Some(s.element_map.clone()),
                defect: Some(s.defect_map.clone()),
                merged: None,
            })
        }
    }

    struct Constant(u8);
    impl Predictor for Constant {
        fn predict(&mut self, s: &Sample) -> Result<Prediction> {
            let (w, h) = s.dimensions();
            Ok(Prediction {
                element: None,
                defect: Some(GrayImage::from_pixel(w, h, Luma([self.0]))),
                merged: None,
            })
        }
    }

    #[test]
    fn ground_truth_predictor_scores_one() {
        let samples = synthetic::dataset(3, 32, 1);
        let r = evaluate_predictor(&mut Oracle, &samples).unwrap();
        let text = r.render();
        assert!(
            text.contains("element: mP 100.00 | mR 100.00 | mF1 100.00 | mIoU 100.00"),
            "{text}"
        );
        assert!(text.contains("corrosion"), "{text}");
        for t in [r.element.unwrap(), r.defect.unwrap()] {
            assert_eq!(t.headline(), [1.0; 4]);
        }
    }

    #[test]
    fn constant_predictor_on_balanced_set() {
        let mut s = synthetic::scene("b", 8, 0);
        s.defect_map = GrayImage::from_fn(8, 8, |x, _| Luma([u8::from(x >= 4)]));
        let r = evaluate_predictor(&mut Constant(1), &[s]).unwrap();
        assert!(r.element.is_none());
        let d = r.defect.unwrap();
        // predicted class: TP 32, FP 32; the other class is never predicted
        assert_eq!(d.classes[1].recall, Some(1.0));
        assert_eq!(d.classes[1].precision, Some(0.5));
        assert_eq!(d.classes[1].iou, Some(0.5));
        assert_eq!(d.classes[0].recall, Some(0.0));
        assert_eq!(d.classes[0].precision, None);
        assert_eq!(d.classes[0].iou, Some(0.0));
        assert_eq!(d.m_precision, 0.5);
    }

    #[test]
    fn merged_model_scoring_matches_split_scoring() {
        let d = Dims::square(32, 8);
        let model = build_model(ModelConfig::merged(d).with_seed(5)).unwrap();
        let samples = synthetic::dataset(2, 32, 9);
        let r = evaluate_samples(&model, &samples).unwrap();
        // independent route: merged argmax map scored per image, summed confusions
        let mut state = CrossTalkState::new();
        let mut ce = ConfusionMatrix::new(7);
        let mut cd = ConfusionMatrix::new(2);
        for s in &samples {
            let merged = model.predict(&s.image, &mut state).unwrap().merged.unwrap();
            let (e, dd) =
                crate::metrics::merged_confusions(&merged, &s.element_map, &s.defect_map).unwrap();
            ce.merge(&e).unwrap();
            cd.merge(&dd).unwrap();
            if samples.len() == 1 {
                let (re, rd) =
                    merged_to_task_reports(&merged, &s.element_map, &s.defect_map).unwrap();
                assert_eq!(Some(re), r.element);
                assert_eq!(Some(rd), r.defect);
            }
        }
        assert_eq!(r.element_confusion.unwrap(), ce);
        assert_eq!(r.defect_confusion.unwrap(), cd);
        assert_eq!(
            merge_labels(&samples[0].element_map, &samples[0].defect_map)
                .unwrap()
                .dimensions(),
            (32, 32)
        );
    }

    #[test]
    fn evaluation_leaves_parameters_alone_and_rejects_empty() {
        let model =
            build_model(ModelConfig::variant("MTL-L", Dims::square(32, 8)).unwrap()).unwrap();
        let before = model.params().fingerprint("");
        evaluate_samples(&model, &synthetic::dataset(2, 32, 0)).unwrap();
        assert_eq!(model.params().fingerprint(""), before);
        assert!(evaluate_samples(&model, &[]).is_err());
    }
}
