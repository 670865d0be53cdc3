//! Per-task cross-entropy and the two multitask loss combinations: plain
//! addition and homoscedastic-uncertainty weighting.
//!
//! The uncertainty weighting is parameterised by log-variances
//! `s = log σ²`, giving `½e^{-s_e}L_e + ½e^{-s_d}L_d + ½(s_e + s_d)`, which is
//! defined for every real `s`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean per-pixel negative log-likelihood of `labels` under the softmax of
/// `logits` (`c × h × w`), together with its gradient w.r.t. the logits.
pub fn cross_entropy_with_grad(logits: &Tensor, labels: &[u8]) -> Result<(f64, Tensor)> {
    weighted_cross_entropy_with_grad(logits, labels, None)
}

pub fn cross_entropy(logits: &Tensor, labels: &[u8]) -> Result<f64> {
    cross_entropy_with_grad(logits, labels).map(|(l, _)| l)
}

/// Cross-entropy with optional per-class weights; the reduction is the
/// weight-normalised mean over pixels (plain mean when `weights` is `None`).
pub fn weighted_cross_entropy_with_grad(
    logits: &Tensor,
    labels: &[u8],
    weights: Option<&[f64]>,
) -> Result<(f64, Tensor)> {
    let (c, h, w) = logits.dims3()?;
    let plane = h * w;
    if labels.len() != plane {
        return Err(Error::Shape(format!(
            "{} labels for a {h}×{w} score map",
            labels.len()
        )));
    }
    if let Some(wts) = weights {
        if wts.len() != c {
            return Err(Error::Shape(format!(
                "{} class weights for {c} classes",
                wts.len()
            )));
        }
    }
    if !logits.all_finite() {
        return Err(Error::Validation("non-finite logits".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y as usize >= c) {
        return Err(Error::ClassOutOfRange {
            value: bad as usize,
            classes: c,
        });
    }

    let x = logits.data();
    let mut grad = Tensor::zeros(&[c, h, w]);
    let g = grad.data_mut();
    let mut total = 0.0;
    let mut norm = 0.0;
    for p in 0..plane {
        let max = (0..c)
            .map(|k| x[k * plane + p])
            .fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = (0..c).map(|k| (x[k * plane + p] - max).exp()).sum();
        let log_z = max + sum.ln();
        let y = labels[p] as usize;
        let wt = weights.map_or(1.0, |w| w[y]);
        total += wt * (log_z - x[y * plane + p]);
        norm += wt;
        for k in 0..c {
            g[k * plane + p] = wt * (x[k * plane + p] - log_z).exp();
        }
        g[y * plane + p] -= wt;
    }
    if norm <= 0.0 {
        return Err(Error::Validation(
            "cross-entropy weights sum to zero".into(),
        ));
    }
    grad.scale(1.0 / norm);
    Ok((total / norm, grad))
}

/// Equal-weight combination `L_e + L_d`.
pub fn additive_loss(element: f64, defect: f64) -> f64 {
    element + defect
}

/// Learnable log-variances `s = log σ²` of the two tasks.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UncertaintyParams {
    pub log_var_element: f64,
    pub log_var_defect: f64,
}

impl UncertaintyParams {
    pub fn from_sigmas(sigma_element: f64, sigma_defect: f64) -> Self {
        Self {
            log_var_element: (sigma_element * sigma_element).ln(),
            log_var_defect: (sigma_defect * sigma_defect).ln(),
        }
    }

    pub fn sigmas(&self) -> (f64, f64) {
        (
            (0.5 * self.log_var_element).exp(),
            (0.5 * self.log_var_defect).exp(),
        )
    }
}

pub fn uncertainty_loss(element: f64, defect: f64, p: &UncertaintyParams) -> f64 {
    0.5 * (-p.log_var_element).exp() * element
        + 0.5 * (-p.log_var_defect).exp() * defect
        + 0.5 * (p.log_var_element + p.log_var_defect)
}

/// Partial derivatives of a combined loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CombinedGrad {
    pub d_element: f64,
    pub d_defect: f64,
    /// `(∂/∂s_e, ∂/∂s_d)`; absent for the additive loss.
    pub d_log_var: Option<(f64, f64)>,
}

pub fn additive_loss_grad() -> CombinedGrad {
    CombinedGrad {
        d_element: 1.0,
        d_defect: 1.0,
        d_log_var: None,
    }
}

pub fn uncertainty_loss_grad(element: f64, defect: f64, p: &UncertaintyParams) -> CombinedGrad {
    let we = 0.5 * (-p.log_var_element).exp();
    let wd = 0.5 * (-p.log_var_defect).exp();
    CombinedGrad {
        d_element: we,
        d_defect: wd,
        d_log_var: Some((0.5 - we * element, 0.5 - wd * defect)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Literal σ form of the weighting.
    fn literal(le: f64, ld: f64, se: f64, sd: f64) -> f64 {
        le / (2.0 * se * se) + ld / (2.0 * sd * sd) + (se * sd).ln()
    }

    /// Independent per-pixel softmax / NLL.
    fn brute_force_ce(logits: &Tensor, labels: &[u8]) -> f64 {
        let (c, h, w) = logits.dims3().unwrap();
        let mut total = 0.0;
        for y in 0..h {
            for x in 0..w {
                let scores: Vec<f64> = (0..c).map(|k| logits.data()[(k * h + y) * w + x]).collect();
                let denom: f64 = scores.iter().map(|s| s.exp()).sum();
                let p = scores[labels[y * w + x] as usize].exp() / denom;
                total -= p.ln();
            }
        }
        total / (h * w) as f64
    }

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let labels = [0u8, 1, 1, 0];
        let mut logits = Tensor::zeros(&[2, 2, 2]);
        for (p, &y) in labels.iter().enumerate() {
            logits.data_mut()[y as usize * 4 + p] = 1000.0;
        }
        assert_eq!(cross_entropy(&logits, &labels).unwrap(), 0.0);
    }

    #[test]
    fn uniform_two_class_is_ln2() {
        let logits = Tensor::zeros(&[2, 3, 3]);
        let l = cross_entropy(&logits, &[1u8; 9]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let logits = Tensor::from_vec(
                &[2, 4, 4],
                (0..32).map(|_| rng.gen_range(-3.0..3.0)).collect(),
            )
            .unwrap();
            let labels: Vec<u8> = (0..16).map(|_| rng.gen_range(0..2)).collect();
            let l = cross_entropy(&logits, &labels).unwrap();
            assert!((l - brute_force_ce(&logits, &labels)).abs() < 1e-9);
            assert!(l >= 0.0);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let logits = Tensor::zeros(&[2, 1, 2]);
        assert!(matches!(
            cross_entropy(&logits, &[0, 2]),
            Err(Error::ClassOutOfRange { .. })
        ));
        let nan = Tensor::from_vec(&[2, 1, 1], vec![f64::NAN, 0.0]).unwrap();
        assert!(cross_entropy(&nan, &[0]).is_err());
        assert!(cross_entropy(&logits, &[0]).is_err());
    }

    #[test]
    fn weighted_reduction() {
        let logits = Tensor::from_vec(&[2, 1, 2], vec![0.0, 2.0, 1.0, 0.0]).unwrap();
        let labels = [0u8, 1];
        let (plain, _) =
            weighted_cross_entropy_with_grad(&logits, &labels, Some(&[1.0, 1.0])).unwrap();
        assert!((plain - cross_entropy(&logits, &labels).unwrap()).abs() < 1e-15);
        let (only_first, _) =
            weighted_cross_entropy_with_grad(&logits, &labels, Some(&[1.0, 0.0])).unwrap();
        // pixel 0 has scores (0, 1) and label 0
        assert!((only_first - (1.0 + 1.0f64.exp()).ln()).abs() < 1e-12);
    }

    #[test]
    fn additive_examples() {
        assert_eq!(additive_loss(2.0, 4.0), 6.0);
        assert_eq!(additive_loss(0.0, 0.0), 0.0);
        assert_eq!(additive_loss(1.5, 2.25), 3.75);
    }

    #[test]
    fn uncertainty_examples() {
        assert_eq!(
            uncertainty_loss(2.0, 4.0, &UncertaintyParams::default()),
            3.0
        );
        let p = UncertaintyParams {
            log_var_element: 0.0,
            log_var_defect: 4.0f64.ln(),
        };
        let expected = literal(2.0, 4.0, 1.0, 2.0);
        assert!((expected - (1.0 + 0.5 + 2.0f64.ln())).abs() < 1e-15);
        assert!((uncertainty_loss(2.0, 4.0, &p) - expected).abs() < 1e-12);
        assert!((uncertainty_loss(2.0, 4.0, &p) - 2.193_147_180_559_945).abs() < 1e-12);
    }

    #[test]
    fn zero_log_variance_is_half_additive() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let (a, b) = (rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0));
            assert_eq!(
                uncertainty_loss(a, b, &UncertaintyParams::default()),
                0.5 * additive_loss(a, b)
            );
        }
    }

    #[test]
    fn stable_form_equals_sigma_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for se in [0.5, 1.0, 2.0, 10.0] {
            for sd in [0.5, 1.0, 2.0, 10.0] {
                let (a, b) = (rng.gen_range(0.0..5.0), rng.gen_range(0.0..5.0));
                let p = UncertaintyParams::from_sigmas(se, sd);
                assert!((uncertainty_loss(a, b, &p) - literal(a, b, se, sd)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn log_variance_gradient_matches_finite_differences() {
        let (le, ld) = (1.7, 0.4);
        let p = UncertaintyParams {
            log_var_element: 0.3,
            log_var_defect: -0.8,
        };
        let g = uncertainty_loss_grad(le, ld, &p).d_log_var.unwrap();
        let h = 1e-6;
        let f = |se: f64, sd: f64| {
            uncertainty_loss(
                le,
                ld,
                &UncertaintyParams {
                    log_var_element: se,
                    log_var_defect: sd,
                },
            )
        };
        let fd_e = (f(0.3 + h, -0.8) - f(0.3 - h, -0.8)) / (2.0 * h);
        let fd_d = (f(0.3, -0.8 + h) - f(0.3, -0.8 - h)) / (2.0 * h);
        assert!(((g.0 - fd_e) / fd_e).abs() < 1e-6);
        assert!(((g.1 - fd_d) / fd_d).abs() < 1e-6);
        assert!((g.0 - (-0.5 * (-0.3f64).exp() * le + 0.5)).abs() < 1e-15);
    }

    #[test]
    fn optimal_log_variance_is_log_loss() {
        for le in [0.2, 1.0, 3.5] {
            let best = (-4000..=4000)
                .map(|i| i as f64 * 1e-3)
                .min_by(|&a, &b| {
                    let la = uncertainty_loss(
                        le,
                        1.0,
                        &UncertaintyParams {
                            log_var_element: a,
                            log_var_defect: 0.0,
                        },
                    );
                    let lb = uncertainty_loss(
                        le,
                        1.0,
                        &UncertaintyParams {
                            log_var_element: b,
                            log_var_defect: 0.0,
                        },
                    );
                    la.partial_cmp(&lb).unwrap()
                })
                .unwrap();
            assert!((best.exp() - le).abs() / le < 2e-3, "le={le} best={best}");
        }
    }
}
