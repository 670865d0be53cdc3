//! Shared feature extractors.
//!
//! Any backbone can be plugged in through [`FeatureExtractor`] as long as it
//! maps a `3 × H × W` image to a `c × H/4 × W/4` embedding and stores its
//! parameters under the `extractor.` prefix.

use std::any::Any;

use image::RgbImage;
use rand_chacha::ChaCha8Rng;

use super::config::{Dims, HRNET_EXTRACTOR, REFERENCE_EXTRACTOR};
use crate::error::{Error, Result};
use crate::params::{he_uniform, ParamStore};
use crate::tensor::{relu, relu_backward, Conv2d, ConvCache, Tensor};

/// Opaque per-call state an extractor keeps for its backward pass.
pub type ExtractorCache = Box<dyn Any + Send + Sync>;

pub trait FeatureExtractor: Send + Sync {
    fn id(&self) -> &str;

    /// Embedding channel count `c`.
    fn channels(&self) -> usize;

    /// Parameter names (all prefixed `extractor.`) and shapes.
    fn param_shapes(&self) -> Vec<(String, Vec<usize>)>;

    fn init_params(&self, rng: &mut ChaCha8Rng, params: &mut ParamStore);

    fn output_shape(&self, input: &[usize]) -> Result<[usize; 3]>;

    fn forward(&self, params: &ParamStore, image: &Tensor) -> Result<(Tensor, ExtractorCache)>;

    /// Accumulates parameter gradients for `grad` (shaped like the embedding).
    fn backward(
        &self,
        params: &ParamStore,
        cache: &ExtractorCache,
        grad: &Tensor,
        grads: &mut ParamStore,
    ) -> Result<()>;
}

/// Resolves an extractor id. The external HRNet-W32 backbone is never
/// bundled; asking for it fails instead of falling back.
pub fn build_extractor(id: &str, dims: &Dims) -> Result<Box<dyn FeatureExtractor>> {
    match id {
        REFERENCE_EXTRACTOR => Ok(Box::new(ReferenceExtractor::new(dims.channels)?)),
        HRNET_EXTRACTOR => Err(Error::ExtractorNotInstalled(format!(
            "`{HRNET_EXTRACTOR}` needs an externally supplied implementation; \
             plug it in with Model::with_extractor"
        ))),
        other => Err(Error::UnknownExtractor(other.to_string())),
    }
}

/// Per-channel normalisation applied to 8-bit RGB input.
pub const PIXEL_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const PIXEL_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// Converts an RGB image to a normalised `3 × H × W` tensor.
pub fn image_tensor(img: &RgbImage) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut t = Tensor::zeros(&[3, h, w]);
    let data = t.data_mut();
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            data[c * h * w + i] = (px[c] as f64 / 255.0 - PIXEL_MEAN[c]) / PIXEL_STD[c];
        }
    }
    t
}

/// Small stride-4 convolutional stack: two stride-2 3×3 convolutions
/// followed by a stride-1 3×3 convolution, each with ReLU.
#[derive(Debug, Clone)]
pub struct ReferenceExtractor {
    convs: [Conv2d; 3],
}

struct ReferenceCache {
    convs: Vec<ConvCache>,
    activations: Vec<Tensor>,
}

const LAYER_NAMES: [&str; 3] = ["extractor.conv1", "extractor.conv2", "extractor.conv3"];

impl ReferenceExtractor {
    pub fn new(channels: usize) -> Result<Self> {
        if channels < 2 {
            return Err(Error::Validation(
                "reference extractor needs at least 2 channels".into(),
            ));
        }
        let mid = channels / 2;
        Ok(Self {
            convs: [
                Conv2d::strided(3, mid, 3, 2),
                Conv2d::strided(mid, channels, 3, 2),
                Conv2d::same(channels, channels, 3),
            ],
        })
    }
}

impl FeatureExtractor for ReferenceExtractor {
    fn id(&self) -> &str {
        REFERENCE_EXTRACTOR
    }

    fn channels(&self) -> usize {
        self.convs[2].out_channels
    }

    fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        LAYER_NAMES
            .iter()
            .zip(&self.convs)
            .flat_map(|(name, conv)| {
                [
                    (format!("{name}.weight"), conv.weight_shape().to_vec()),
                    (format!("{name}.bias"), vec![conv.out_channels]),
                ]
            })
            .collect()
    }

    fn init_params(&self, rng: &mut ChaCha8Rng, params: &mut ParamStore) {
        for (name, conv) in LAYER_NAMES.iter().zip(&self.convs) {
            params.insert(
                format!("{name}.weight"),
                he_uniform(&conv.weight_shape(), conv.fan_in(), rng),
            );
            params.insert(format!("{name}.bias"), Tensor::zeros(&[conv.out_channels]));
        }
    }

    fn output_shape(&self, input: &[usize]) -> Result<[usize; 3]> {
        if let [_, h, w] = input {
            if h % 4 != 0 || w % 4 != 0 {
                return Err(Error::Shape(format!("input {h}×{w} is not divisible by 4")));
            }
        }
        let mut shape = input.to_vec();
        for conv in &self.convs {
            shape = conv.output_shape(&shape)?.to_vec();
        }
        Ok([shape[0], shape[1], shape[2]])
    }

    fn forward(&self, params: &ParamStore, image: &Tensor) -> Result<(Tensor, ExtractorCache)> {
        self.output_shape(image.shape())?;
        let mut x = image.clone();
        let mut cache = ReferenceCache {
            convs: Vec::with_capacity(3),
            activations: Vec::with_capacity(3),
        };
        for (name, conv) in LAYER_NAMES.iter().zip(&self.convs) {
            let w = params.get(&format!("{name}.weight"))?;
            let b = params.get(&format!("{name}.bias"))?;
            let (y, c) = conv.forward(w, b, &x)?;
            x = relu(&y);
            cache.convs.push(c);
            cache.activations.push(x.clone());
        }
        Ok((x, Box::new(cache)))
    }

    fn backward(
        &self,
        params: &ParamStore,
        cache: &ExtractorCache,
        grad: &Tensor,
        grads: &mut ParamStore,
    ) -> Result<()> {
        let cache = cache
            .downcast_ref::<ReferenceCache>()
            .ok_or_else(|| Error::Validation("extractor cache of the wrong type".into()))?;
        let mut g = grad.clone();
        for i in (0..3).rev() {
            let name = LAYER_NAMES[i];
            let w = params.get(&format!("{name}.weight"))?;
            let g_pre = relu_backward(&cache.activations[i], &g);
            let (gx, gw, gb) = self.convs[i].backward(w, &cache.convs[i], &g_pre, i > 0);
            grads.accumulate(&format!("{name}.weight"), &gw);
            grads.accumulate(&format!("{name}.bias"), &gb);
            if let Some(gx) = gx {
                g = gx;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn tiny_output_shape() {
        let dims = Dims::square(64, 32);
        let ex = build_extractor(REFERENCE_EXTRACTOR, &dims).unwrap();
        let mut params = ParamStore::new();
        ex.init_params(&mut ChaCha8Rng::seed_from_u64(0), &mut params);
        let (f, _) = ex.forward(&params, &Tensor::zeros(&[3, 64, 64])).unwrap();
        assert_eq!(f.shape(), &[32, 16, 16]);
    }

    #[test]
    fn paper_output_shape() {
        let ex = build_extractor(REFERENCE_EXTRACTOR, &Dims::paper()).unwrap();
        assert_eq!(ex.output_shape(&[3, 480, 480]).unwrap(), [480, 120, 120]);
    }

    #[test]
    fn unknown_and_missing_extractors() {
        assert!(matches!(
            build_extractor("foo", &Dims::tiny()),
            Err(Error::UnknownExtractor(_))
        ));
        assert!(matches!(
            build_extractor(HRNET_EXTRACTOR, &Dims::tiny()),
            Err(Error::ExtractorNotInstalled(_))
        ));
    }

    #[test]
    fn rejects_sizes_not_divisible_by_four() {
        let ex = ReferenceExtractor::new(8).unwrap();
        assert!(ex.output_shape(&[3, 30, 32]).is_err());
    }

    #[test]
    #[ignore = "full-resolution run; several seconds and ~1 GB"]
    fn paper_dims_forward() {
        let dims = Dims::paper();
        let ex = build_extractor(REFERENCE_EXTRACTOR, &dims).unwrap();
        let mut params = ParamStore::new();
        ex.init_params(&mut ChaCha8Rng::seed_from_u64(0), &mut params);
        let (f, _) = ex.forward(&params, &Tensor::zeros(&[3, 480, 480])).unwrap();
        assert_eq!(f.shape(), &[480, 120, 120]);
    }
}
