//! Per-task segmentation head and score upsampler.
//!
//! The head maps a task embedding (optionally concatenated with the partner
//! branch's coarse score maps) through two 3×3 convolutions to one coarse
//! map per class. The upsampler resizes the coarse maps bilinearly to the
//! input resolution and mixes classes with a learnable 1×1 convolution.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::{he_uniform, ParamStore};
use crate::tensor::{
    bilinear_resize, bilinear_resize_backward, concat_channels, leading_channels, relu,
    relu_backward, Conv2d, ConvCache, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadSpec {
    pub in_channels: usize,
    /// Channels of the partner maps concatenated onto the input; 0 when
    /// cross-talk is off.
    pub partner_channels: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl HeadSpec {
    pub fn new(in_channels: usize, partner_channels: usize, classes: usize) -> Self {
        Self {
            in_channels,
            partner_channels,
            hidden: (in_channels / 4).max(1),
            classes,
        }
    }

    pub fn conv1(&self) -> Conv2d {
        Conv2d::same(self.in_channels + self.partner_channels, self.hidden, 3)
    }

    pub fn conv2(&self) -> Conv2d {
        Conv2d::same(self.hidden, self.classes, 3)
    }

    /// Validates input shapes and returns the coarse output shape.
    pub fn output_shape(
        &self,
        features: &[usize],
        partner: Option<&[usize]>,
    ) -> Result<[usize; 3]> {
        let &[c, h, w] = features else {
            return Err(Error::Shape(format!(
                "head input must be c×h×w, got {features:?}"
            )));
        };
        if c != self.in_channels {
            return Err(Error::Shape(format!(
                "head expects {} feature channels, got {c}",
                self.in_channels
            )));
        }
        match (self.partner_channels, partner) {
            (0, None) => {}
            (0, Some(_)) => {
                return Err(Error::Shape(
                    "partner maps given to a head without cross-talk".into(),
                ))
            }
            (_, None) => {
                return Err(Error::Shape(
                    "cross-talk head called without partner maps".into(),
                ))
            }
            (pc, Some(shape)) => {
                if shape != [pc, h, w] {
                    return Err(Error::Shape(format!(
                        "partner maps must be {pc}×{h}×{w}, got {shape:?}"
                    )));
                }
            }
        }
        Ok([self.classes, h, w])
    }
}

/// Owned head parameters, for calling the head outside a model.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub spec: HeadSpec,
    pub conv1_weight: Tensor,
    pub conv1_bias: Tensor,
    pub conv2_weight: Tensor,
    pub conv2_bias: Tensor,
}

impl HeadParams {
    pub fn from_store(spec: HeadSpec, params: &ParamStore, prefix: &str) -> Result<Self> {
        Ok(Self {
            spec,
            conv1_weight: params.get(&format!("{prefix}.conv1.weight"))?.clone(),
            conv1_bias: params.get(&format!("{prefix}.conv1.bias"))?.clone(),
            conv2_weight: params.get(&format!("{prefix}.conv2.weight"))?.clone(),
            conv2_bias: params.get(&format!("{prefix}.conv2.bias"))?.clone(),
        })
    }

    pub fn random(spec: HeadSpec, rng: &mut ChaCha8Rng) -> Self {
        let mut store = ParamStore::new();
        init_head(&spec, "head", rng, &mut store);
        Self::from_store(spec, &store, "head").expect("just initialised")
    }
}

pub(crate) fn init_head(
    spec: &HeadSpec,
    prefix: &str,
    rng: &mut ChaCha8Rng,
    params: &mut ParamStore,
) {
    for (name, conv) in [("conv1", spec.conv1()), ("conv2", spec.conv2())] {
        params.insert(
            format!("{prefix}.{name}.weight"),
            he_uniform(&conv.weight_shape(), conv.fan_in(), rng),
        );
        params.insert(
            format!("{prefix}.{name}.bias"),
            Tensor::zeros(&[conv.out_channels]),
        );
    }
}

pub fn head_param_shapes(spec: &HeadSpec, prefix: &str) -> Vec<(String, Vec<usize>)> {
    [("conv1", spec.conv1()), ("conv2", spec.conv2())]
        .into_iter()
        .flat_map(|(name, conv)| {
            [
                (
                    format!("{prefix}.{name}.weight"),
                    conv.weight_shape().to_vec(),
                ),
                (format!("{prefix}.{name}.bias"), vec![conv.out_channels]),
            ]
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct HeadCache {
    conv1: ConvCache,
    hidden: Tensor,
    conv2: ConvCache,
}

/// `O = Conv(ReLU(Conv(Cat(f, partner))))`.
pub fn head_forward(features: &Tensor, partner: Option<&Tensor>, p: &HeadParams) -> Result<Tensor> {
    head_forward_raw(
        &p.spec,
        [
            &p.conv1_weight,
            &p.conv1_bias,
            &p.conv2_weight,
            &p.conv2_bias,
        ],
        features,
        partner,
    )
    .map(|(o, _)| o)
}

pub(crate) fn head_forward_raw(
    spec: &HeadSpec,
    [w1, b1, w2, b2]: [&Tensor; 4],
    features: &Tensor,
    partner: Option<&Tensor>,
) -> Result<(Tensor, HeadCache)> {
    spec.output_shape(features.shape(), partner.map(Tensor::shape))?;
    let input = match partner {
        Some(p) => concat_channels(features, p)?,
        None => features.clone(),
    };
    let (pre, conv1) = spec.conv1().forward(w1, b1, &input)?;
    let hidden = relu(&pre);
    let (out, conv2) = spec.conv2().forward(w2, b2, &hidden)?;
    Ok((
        out,
        HeadCache {
            conv1,
            hidden,
            conv2,
        },
    ))
}

/// Accumulates head parameter gradients and returns the gradient w.r.t. the
/// task features. The partner part of the input gradient is dropped: partner
/// maps are always treated as constants.
pub(crate) fn head_backward(
    spec: &HeadSpec,
    prefix: &str,
    params: &ParamStore,
    cache: &HeadCache,
    grad: &Tensor,
    grads: &mut ParamStore,
) -> Result<Tensor> {
    let w1 = params.get(&format!("{prefix}.conv1.weight"))?;
    let w2 = params.get(&format!("{prefix}.conv2.weight"))?;
    let (gh, gw2, gb2) = spec.conv2().backward(w2, &cache.conv2, grad, true);
    grads.accumulate(&format!("{prefix}.conv2.weight"), &gw2);
    grads.accumulate(&format!("{prefix}.conv2.bias"), &gb2);
    let g_pre = relu_backward(&cache.hidden, &gh.expect("requested"));
    let (gi, gw1, gb1) = spec.conv1().backward(w1, &cache.conv1, &g_pre, true);
    grads.accumulate(&format!("{prefix}.conv1.weight"), &gw1);
    grads.accumulate(&format!("{prefix}.conv1.bias"), &gb1);
    Ok(leading_channels(&gi.expect("requested"), spec.in_channels))
}

/// Bilinear resize to `height × width` followed by a 1×1 convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Upsampler {
    pub classes: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone)]
pub struct UpsampleCache {
    coarse_h: usize,
    coarse_w: usize,
    conv: ConvCache,
}

impl Upsampler {
    pub fn conv(&self) -> Conv2d {
        Conv2d::same(self.classes, self.classes, 1)
    }

    pub fn param_shapes(&self, prefix: &str) -> Vec<(String, Vec<usize>)> {
        vec![
            (
                format!("{prefix}.weight"),
                self.conv().weight_shape().to_vec(),
            ),
            (format!("{prefix}.bias"), vec![self.classes]),
        ]
    }

    /// Identity class mixing, zero bias.
    pub fn init(&self, prefix: &str, params: &mut ParamStore) {
        let eye = Tensor::eye(self.classes);
        let w = Tensor::from_vec(&self.conv().weight_shape(), eye.into_data()).expect("k×k×1×1");
        params.insert(format!("{prefix}.weight"), w);
        params.insert(format!("{prefix}.bias"), Tensor::zeros(&[self.classes]));
    }

    pub fn forward(
        &self,
        weight: &Tensor,
        bias: &Tensor,
        coarse: &Tensor,
    ) -> Result<(Tensor, UpsampleCache)> {
        let (c, h, w) = coarse.dims3()?;
        if c != self.classes {
            return Err(Error::Shape(format!(
                "upsampler expects {} maps, got {c}",
                self.classes
            )));
        }
        let up = bilinear_resize(coarse, self.height, self.width)?;
        let (out, conv) = self.conv().forward(weight, bias, &up)?;
        Ok((
            out,
            UpsampleCache {
                coarse_h: h,
                coarse_w: w,
                conv,
            },
        ))
    }

    pub(crate) fn backward(
        &self,
        prefix: &str,
        params: &ParamStore,
        cache: &UpsampleCache,
        grad: &Tensor,
        grads: &mut ParamStore,
    ) -> Result<Tensor> {
        let w = params.get(&format!("{prefix}.weight"))?;
        let (gu, gw, gb) = self.conv().backward(w, &cache.conv, grad, true);
        grads.accumulate(&format!("{prefix}.weight"), &gw);
        grads.accumulate(&format!("{prefix}.bias"), &gb);
        bilinear_resize_backward(&gu.expect("requested"), cache.coarse_h, cache.coarse_w)
    }
}

/// Upsamples coarse score maps with the given 1×1 mixing parameters.
pub fn upsample_scores(
    coarse: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    height: usize,
    width: usize,
) -> Result<Tensor> {
    let classes = coarse.dims3()?.0;
    Upsampler {
        classes,
        height,
        width,
    }
    .forward(weight, bias, coarse)
    .map(|(y, _)| y)
}
