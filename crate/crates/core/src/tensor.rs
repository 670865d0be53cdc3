//! Dense `f64` tensors and the handful of differentiable operations the
//! segmentation network is built from.
//!
//! Every operation has an explicit forward and backward function. Forward
//! functions return whatever the backward pass needs as a cache value; there
//! is no tape. Layouts are row-major, images are `channels × height × width`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// `n × n` identity matrix.
    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Interprets the tensor as `c × h × w`.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape.as_slice() {
            &[c, h, w] => Ok((c, h, w)),
            other => Err(Error::Shape(format!(
                "expected a c×h×w tensor, got {other:?}"
            ))),
        }
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.shape[1..].iter().product::<usize>();
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    /// `self += other`, shapes must agree.
    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Bitwise equality of shape and every element.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// `c = a · b + beta · c` for row-major `a: m×k`, `b: k×n`, `c: m×n`.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], beta: f64, c: &mut [f64]) {
    gemm_strided(m, k, n, a, (k as isize, 1), b, (n as isize, 1), beta, c);
}

/// `c = aᵀ · b + beta · c` where `a` is stored row-major as `k×m`.
pub(crate) fn gemm_at(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    b: &[f64],
    beta: f64,
    c: &mut [f64],
) {
    gemm_strided(m, k, n, a, (1, m as isize), b, (n as isize, 1), beta, c);
}

/// `c = a · bᵀ + beta · c` where `b` is stored row-major as `n×k`.
pub(crate) fn gemm_bt(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    b: &[f64],
    beta: f64,
    c: &mut [f64],
) {
    gemm_strided(m, k, n, a, (k as isize, 1), b, (1, k as isize), beta, c);
}

#[allow(clippy::too_many_arguments)]
fn gemm_strided(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the asserts above bound every index the kernel touches, given
    // the row/column strides describe dense row-major (or transposed) storage.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a 2-D convolution with square kernel and symmetric padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

/// Saved state from [`Conv2d::forward`].
#[derive(Debug, Clone)]
pub struct ConvCache {
    cols: Vec<f64>,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
}

impl Conv2d {
    /// "Same" convolution for odd kernels.
    pub fn same(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            padding: kernel / 2,
        }
    }

    pub fn strided(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding: kernel / 2,
        }
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels,
            self.kernel,
            self.kernel,
        ]
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        if h + 2 * p < k || w + 2 * p < k {
            return Err(Error::Shape(format!(
                "{h}×{w} input smaller than {k}×{k} kernel"
            )));
        }
        Ok(((h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1))
    }

    /// Checks a `c × h × w` input shape against this convolution and
    /// returns the output shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<[usize; 3]> {
        let &[c, h, w] = input else {
            return Err(Error::Shape(format!(
                "conv input must be c×h×w, got {input:?}"
            )));
        };
        if c != self.in_channels {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        let (oh, ow) = self.output_size(h, w)?;
        Ok([self.out_channels, oh, ow])
    }

    fn im2col(&self, input: &Tensor, out_h: usize, out_w: usize) -> Vec<f64> {
        let (c, h, w) = (input.shape[0], input.shape[1], input.shape[2]);
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        let plane = out_h * out_w;
        let mut cols = vec![0.0; c * k * k * plane];
        let x = input.data();
        for ci in 0..c {
            let src = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut cols[row * plane..(row + 1) * plane];
                    for oy in 0..out_h {
                        let iy = (oy * s) as isize + ky as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src_row = &src[iy as usize * w..(iy as usize + 1) * w];
                        let dst_row = &mut dst[oy * out_w..(oy + 1) * out_w];
                        for (ox, d) in dst_row.iter_mut().enumerate() {
                            let ix = (ox * s) as isize + kx as isize - p;
                            if ix >= 0 && ix < w as isize {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f64], cache: &ConvCache) -> Tensor {
        let (c, h, w) = (self.in_channels, cache.in_h, cache.in_w);
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        let (out_h, out_w) = (cache.out_h, cache.out_w);
        let plane = out_h * out_w;
        let mut grad = Tensor::zeros(&[c, h, w]);
        let g = grad.data_mut();
        for ci in 0..c {
            let dst = &mut g[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src = &cols[row * plane..(row + 1) * plane];
                    for oy in 0..out_h {
                        let iy = (oy * s) as isize + ky as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..out_w {
                            let ix = (ox * s) as isize + kx as isize - p;
                            if ix >= 0 && ix < w as isize {
                                dst[iy as usize * w + ix as usize] += src[oy * out_w + ox];
                            }
                        }
                    }
                }
            }
        }
        grad
    }

    pub fn forward(
        &self,
        weight: &Tensor,
        bias: &Tensor,
        input: &Tensor,
    ) -> Result<(Tensor, ConvCache)> {
        let [oc, out_h, out_w] = self.output_shape(input.shape())?;
        if weight.shape() != self.weight_shape() || bias.shape() != [oc] {
            return Err(Error::Shape(format!(
                "conv parameters {:?}/{:?} do not match {:?}",
                weight.shape(),
                bias.shape(),
                self.weight_shape()
            )));
        }
        let cols = self.im2col(input, out_h, out_w);
        let plane = out_h * out_w;
        let mut out = Tensor::zeros(&[oc, out_h, out_w]);
        for (o, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            chunk.fill(bias.data()[o]);
        }
        gemm(
            oc,
            self.fan_in(),
            plane,
            weight.data(),
            &cols,
            1.0,
            out.data_mut(),
        );
        let cache = ConvCache {
            cols,
            in_h: input.shape[1],
            in_w: input.shape[2],
            out_h,
            out_w,
        };
        Ok((out, cache))
    }

    /// Returns `(grad_input, grad_weight, grad_bias)`; `grad_input` is only
    /// computed when `need_input_grad` is set.
    pub fn backward(
        &self,
        weight: &Tensor,
        cache: &ConvCache,
        grad_out: &Tensor,
        need_input_grad: bool,
    ) -> (Option<Tensor>, Tensor, Tensor) {
        let oc = self.out_channels;
        let plane = cache.out_h * cache.out_w;
        let fan_in = self.fan_in();
        let g = grad_out.data();

        let mut grad_w = Tensor::zeros(&self.weight_shape());
        gemm_bt(oc, plane, fan_in, g, &cache.cols, 0.0, grad_w.data_mut());

        let grad_b = Tensor::from_vec(&[oc], g.chunks(plane).map(|c| c.iter().sum()).collect())
            .expect("bias gradient shape");

        let grad_in = need_input_grad.then(|| {
            let mut grad_cols = vec![0.0; fan_in * plane];
            gemm_at(fan_in, oc, plane, weight.data(), g, 0.0, &mut grad_cols);
            self.col2im(&grad_cols, cache)
        });
        (grad_in, grad_w, grad_b)
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    let data = x
        .data
        .iter()
        .map(|&v| if v > 0.0 { v } else { 0.0 })
        .collect();
    Tensor {
        shape: x.shape.clone(),
        data,
    }
}

/// Gradient of ReLU given the forward *output*.
pub fn relu_backward(output: &Tensor, grad: &Tensor) -> Tensor {
    let data = output
        .data
        .iter()
        .zip(&grad.data)
        .map(|(&y, &g)| if y > 0.0 { g } else { 0.0 })
        .collect();
    Tensor {
        shape: grad.shape.clone(),
        data,
    }
}

/// Concatenates two `c × h × w` tensors along the channel axis.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ca, ha, wa) = a.dims3()?;
    let (cb, hb, wb) = b.dims3()?;
    if (ha, wa) != (hb, wb) {
        return Err(Error::Shape(format!(
            "cannot concatenate {ha}×{wa} with {hb}×{wb} maps"
        )));
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::from_vec(&[ca + cb, ha, wa], data)
}

/// Keeps the first `channels` channels of a `c × h × w` tensor.
pub fn leading_channels(x: &Tensor, channels: usize) -> Tensor {
    let plane = x.shape[1] * x.shape[2];
    Tensor {
        shape: vec![channels, x.shape[1], x.shape[2]],
        data: x.data[..channels * plane].to_vec(),
    }
}

/// Per-axis sampling positions for half-pixel-centred bilinear resizing.
#[derive(Debug, Clone)]
struct Taps {
    lo: Vec<usize>,
    hi: Vec<usize>,
    frac: Vec<f64>,
}

impl Taps {
    fn new(src: usize, dst: usize) -> Self {
        let scale = src as f64 / dst as f64;
        let mut taps = Taps {
            lo: Vec::with_capacity(dst),
            hi: Vec::with_capacity(dst),
            frac: Vec::with_capacity(dst),
        };
        for i in 0..dst {
            let pos = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            taps.lo.push(lo);
            taps.hi.push(hi);
            taps.frac.push(pos - lo as f64);
        }
        taps
    }
}

/// Bilinear resize of every channel of a `c × h × w` tensor to
/// `c × out_h × out_w` (half-pixel centres, edge clamped).
pub fn bilinear_resize(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    if h == 0 || w == 0 {
        return Err(Error::Shape("cannot resize an empty map".into()));
    }
    let ty = Taps::new(h, out_h);
    let tx = Taps::new(w, out_w);
    let mut out = Tensor::zeros(&[c, out_h, out_w]);
    for ci in 0..c {
        let src = x.channel(ci);
        let dst = &mut out.data[ci * out_h * out_w..(ci + 1) * out_h * out_w];
        for oy in 0..out_h {
            let (r0, r1, fy) = (ty.lo[oy] * w, ty.hi[oy] * w, ty.frac[oy]);
            for ox in 0..out_w {
                let (x0, x1, fx) = (tx.lo[ox], tx.hi[ox], tx.frac[ox]);
                let top = lerp(src[r0 + x0], src[r0 + x1], fx);
                let bottom = lerp(src[r1 + x0], src[r1 + x1], fx);
                dst[oy * out_w + ox] = lerp(top, bottom, fy);
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`bilinear_resize`]: maps a `c × out_h × out_w` gradient back
/// onto the `c × h × w` source grid.
pub fn bilinear_resize_backward(grad: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (c, out_h, out_w) = grad.dims3()?;
    let ty = Taps::new(h, out_h);
    let tx = Taps::new(w, out_w);
    let mut out = Tensor::zeros(&[c, h, w]);
    for ci in 0..c {
        let g = grad.channel(ci);
        let dst = &mut out.data[ci * h * w..(ci + 1) * h * w];
        for oy in 0..out_h {
            let (r0, r1, fy) = (ty.lo[oy] * w, ty.hi[oy] * w, ty.frac[oy]);
            for ox in 0..out_w {
                let (x0, x1, fx) = (tx.lo[ox], tx.hi[ox], tx.frac[ox]);
                let v = g[oy * out_w + ox];
                let top = v * (1.0 - fy);
                let bottom = v * fy;
                dst[r0 + x0] += top * (1.0 - fx);
                dst[r0 + x1] += top * fx;
                dst[r1 + x0] += bottom * (1.0 - fx);
                dst[r1 + x1] += bottom * fx;
            }
        }
    }
    Ok(out)
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}
