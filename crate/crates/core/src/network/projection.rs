//! Task-specific projection of the shared embedding:
//! `f = P(F; Φ, β)` with scalar, per-channel or full channel-mixing `Φ`.

use serde::{Deserialize, Serialize};

use super::config::ProjectionMode;
use crate::error::{Error, Result};
use crate::tensor::{gemm, gemm_at, gemm_bt, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionParams {
    pub mode: ProjectionMode,
    pub phi: Tensor,
    pub beta: Tensor,
}

pub fn param_shapes(mode: ProjectionMode, channels: usize) -> (Vec<usize>, Vec<usize>) {
    match mode {
        ProjectionMode::Scalar => (vec![1], vec![1]),
        ProjectionMode::Vector => (vec![channels], vec![channels]),
        ProjectionMode::Matrix => (vec![channels, channels], vec![channels]),
    }
}

impl ProjectionParams {
    /// `Φ = 1` (or the identity matrix) and `β = 0`.
    pub fn identity(mode: ProjectionMode, channels: usize) -> Self {
        let (phi_shape, beta_shape) = param_shapes(mode, channels);
        let phi = match mode {
            ProjectionMode::Matrix => Tensor::eye(channels),
            _ => Tensor::full(&phi_shape, 1.0),
        };
        Self {
            mode,
            phi,
            beta: Tensor::zeros(&beta_shape),
        }
    }
}

fn check(mode: ProjectionMode, phi: &Tensor, beta: &Tensor, c: usize) -> Result<()> {
    let (ps, bs) = param_shapes(mode, c);
    if phi.shape() != ps || beta.shape() != bs {
        return Err(Error::Shape(format!(
            "{mode} projection over {c} channels needs Φ {ps:?} and β {bs:?}, got {:?} and {:?}",
            phi.shape(),
            beta.shape()
        )));
    }
    Ok(())
}

/// Applies the projection to a `c × h × w` embedding.
pub fn project(features: &Tensor, p: &ProjectionParams) -> Result<Tensor> {
    project_with(p.mode, &p.phi, &p.beta, features)
}

pub(crate) fn project_with(
    mode: ProjectionMode,
    phi: &Tensor,
    beta: &Tensor,
    f: &Tensor,
) -> Result<Tensor> {
    let (c, h, w) = f.dims3()?;
    check(mode, phi, beta, c)?;
    let plane = h * w;
    let mut out = Tensor::zeros(f.shape());
    match mode {
        ProjectionMode::Scalar => {
            let (a, b) = (phi.data()[0], beta.data()[0]);
            for (o, &x) in out.data_mut().iter_mut().zip(f.data()) {
                *o = a * x + b;
            }
        }
        ProjectionMode::Vector => {
            for ch in 0..c {
                let (a, b) = (phi.data()[ch], beta.data()[ch]);
                let src = f.channel(ch);
                let dst = &mut out.data_mut()[ch * plane..(ch + 1) * plane];
                for (o, &x) in dst.iter_mut().zip(src) {
                    *o = a * x + b;
                }
            }
        }
        ProjectionMode::Matrix => {
            gemm(c, c, plane, phi.data(), f.data(), 0.0, out.data_mut());
            for ch in 0..c {
                let b = beta.data()[ch];
                out.data_mut()[ch * plane..(ch + 1) * plane]
                    .iter_mut()
                    .for_each(|v| *v += b);
            }
        }
    }
    Ok(out)
}

/// Returns `(grad_input, grad_phi, grad_beta)`.
pub(crate) fn project_backward(
    mode: ProjectionMode,
    phi: &Tensor,
    input: &Tensor,
    grad: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (c, h, w) = input.dims3()?;
    let plane = h * w;
    let mut gi = Tensor::zeros(input.shape());
    Ok(match mode {
        ProjectionMode::Scalar => {
            let a = phi.data()[0];
            let mut gphi = 0.0;
            let mut gbeta = 0.0;
            for ((o, &g), &x) in gi.data_mut().iter_mut().zip(grad.data()).zip(input.data()) {
                *o = a * g;
                gphi += g * x;
                gbeta += g;
            }
            (gi, Tensor::full(&[1], gphi), Tensor::full(&[1], gbeta))
        }
        ProjectionMode::Vector => {
            let mut gphi = Tensor::zeros(&[c]);
            let mut gbeta = Tensor::zeros(&[c]);
            for ch in 0..c {
                let a = phi.data()[ch];
                let (g, x) = (grad.channel(ch), input.channel(ch));
                let dst = &mut gi.data_mut()[ch * plane..(ch + 1) * plane];
                let mut sp = 0.0;
                let mut sb = 0.0;
                for ((o, &gv), &xv) in dst.iter_mut().zip(g).zip(x) {
                    *o = a * gv;
                    sp += gv * xv;
                    sb += gv;
                }
                gphi.data_mut()[ch] = sp;
                gbeta.data_mut()[ch] = sb;
            }
            (gi, gphi, gbeta)
        }
        ProjectionMode::Matrix => {
            gemm_at(c, c, plane, phi.data(), grad.data(), 0.0, gi.data_mut());
            let mut gphi = Tensor::zeros(&[c, c]);
            gemm_bt(c, plane, c, grad.data(), input.data(), 0.0, gphi.data_mut());
            let gbeta = Tensor::from_vec(
                &[c],
                (0..c).map(|ch| grad.channel(ch).iter().sum()).collect(),
            )?;
            (gi, gphi, gbeta)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn identity_projections_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = random(&[6, 5, 4], &mut rng);
        for mode in [
            ProjectionMode::Scalar,
            ProjectionMode::Vector,
            ProjectionMode::Matrix,
        ] {
            let out = project(&f, &ProjectionParams::identity(mode, 6)).unwrap();
            assert!(out.bit_eq(&f), "{mode}");
        }
    }

    #[test]
    fn vector_example() {
        let f = Tensor::full(&[3, 2, 2], 1.0);
        let p = ProjectionParams {
            mode: ProjectionMode::Vector,
            phi: Tensor::full(&[3], 2.0),
            beta: Tensor::full(&[3], 1.0),
        };
        assert!(project(&f, &p).unwrap().data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let f = Tensor::zeros(&[3, 2, 2]);
        let p = ProjectionParams::identity(ProjectionMode::Matrix, 4);
        assert!(matches!(project(&f, &p), Err(Error::Shape(_))));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for mode in [
            ProjectionMode::Scalar,
            ProjectionMode::Vector,
            ProjectionMode::Matrix,
        ] {
            let c = 3;
            let f = random(&[c, 2, 3], &mut rng);
            let (ps, bs) = param_shapes(mode, c);
            let phi = random(&ps, &mut rng);
            let beta = random(&bs, &mut rng);
            let probe = random(f.shape(), &mut rng);
            let obj = |phi: &Tensor, beta: &Tensor, f: &Tensor| -> f64 {
                let y = project_with(mode, phi, beta, f).unwrap();
                y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
            };
            let (gi, gp, gb) = project_backward(mode, &phi, &f, &probe).unwrap();
            let eps = 1e-6;
            let fd = |t: &Tensor, i: usize, which: u8| {
                let mut p = t.clone();
                let mut m = t.clone();
                p.data_mut()[i] += eps;
                m.data_mut()[i] -= eps;
                let (a, b) = match which {
                    0 => (obj(&p, &beta, &f), obj(&m, &beta, &f)),
                    1 => (obj(&phi, &p, &f), obj(&phi, &m, &f)),
                    _ => (obj(&phi, &beta, &p), obj(&phi, &beta, &m)),
                };
                (a - b) / (2.0 * eps)
            };
            for i in 0..phi.len() {
                assert!((fd(&phi, i, 0) - gp.data()[i]).abs() < 1e-7);
            }
            for i in 0..beta.len() {
                assert!((fd(&beta, i, 1) - gb.data()[i]).abs() < 1e-7);
            }
            for i in 0..f.len() {
                assert!((fd(&f, i, 2) - gi.data()[i]).abs() < 1e-7);
            }
        }
    }
}
