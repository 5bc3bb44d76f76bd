//! Training objectives and their gradients with respect to model outputs.

use super::network::{Batch, Forward, OutputGrads};
use super::real::Real;
use super::{ModelVariant, VariantKind};
use crate::error::{Error, Result};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Observation noise assumption for [`gaussian_log_likelihood`].
#[derive(Debug, Clone, Copy)]
pub enum Sigma<'a, T> {
    /// One standard deviation shared by every pixel.
    Constant(f64),
    /// Per-pixel log-variance.
    PerPixel(&'a [T]),
}

/// `Σ_p [ −(x−x̂)²/(2σ²) − log(σ√(2π)) ]`.
pub fn gaussian_log_likelihood<T: Real>(x: &[T], x_hat: &[T], sigma: Sigma<'_, T>) -> Result<f64> {
    if x.len() != x_hat.len() {
        return Err(Error::Shape(format!("{} pixels vs {} reconstructed", x.len(), x_hat.len())));
    }
    match sigma {
        Sigma::Constant(s) => {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::InvalidInput(format!("sigma must be positive, got {s}")));
            }
            let sse: f64 = x
                .iter()
                .zip(x_hat)
                .map(|(&a, &b)| (a.as_f64() - b.as_f64()).powi(2))
                .sum();
            Ok(-sse / (2.0 * s * s) - x.len() as f64 * (s.ln() + HALF_LN_2PI))
        }
        Sigma::PerPixel(lv) => {
            if lv.len() != x.len() {
                return Err(Error::Shape(format!("{} log-variances for {} pixels", lv.len(), x.len())));
            }
            Ok(x.iter()
                .zip(x_hat)
                .zip(lv)
                .map(|((&a, &b), &l)| {
                    let l = l.as_f64();
                    -(a.as_f64() - b.as_f64()).powi(2) / (2.0 * l.exp()) - 0.5 * l - HALF_LN_2PI
                })
                .sum())
        }
    }
}

/// KL divergence of `N(mean, exp(log_variance))` from the standard normal.
pub fn kl_divergence<T: Real>(mean: &[T], log_variance: &[T]) -> f64 {
    mean.iter()
        .zip(log_variance)
        .map(|(&m, &lv)| {
            let (m, lv) = (m.as_f64(), lv.as_f64());
            0.5 * (m * m + lv.exp() - 1.0 - lv)
        })
        .sum()
}

/// Per-frame averages of the loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub reconstruction: f64,
    pub kl: f64,
}

/// What to minimize.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// The variant's own loss.
    Variant(ModelVariant),
    /// Negative constant-σ Gaussian log-likelihood plus KL.
    GaussianNll { sigma: f64 },
}

impl From<ModelVariant> for Objective {
    fn from(v: ModelVariant) -> Self {
        Objective::Variant(v)
    }
}

/// Loss averaged over every frame of the batch.
pub fn total_loss<T: Real>(variant: ModelVariant, batch: &Batch<T>, fwd: &Forward<T>) -> Result<LossBreakdown> {
    evaluate(variant.into(), batch, fwd, false).map(|(l, _)| l)
}

/// Loss and its gradient with respect to the model outputs, ready for
/// [`super::ModelParameters::backward`].
pub fn loss_and_grads<T: Real>(
    objective: Objective,
    batch: &Batch<T>,
    fwd: &Forward<T>,
) -> Result<(LossBreakdown, OutputGrads<T>)> {
    let (l, g) = evaluate(objective, batch, fwd, true)?;
    Ok((l, g.expect("gradients requested")))
}

fn evaluate<T: Real>(
    objective: Objective,
    batch: &Batch<T>,
    fwd: &Forward<T>,
    want_grads: bool,
) -> Result<(LossBreakdown, Option<OutputGrads<T>>)> {
    let recon = &fwd.recon;
    let latent = &fwd.latent;
    let n = batch.frames_len();
    let p = batch.grid.pixels();
    if recon.frames != n || recon.grid != batch.grid || latent.frames != n {
        return Err(Error::Shape("forward pass does not belong to this batch".into()));
    }
    let kind = match objective {
        Objective::Variant(v) => v.kind,
        Objective::GaussianNll { .. } => VariantKind::Cvae,
    };
    if recon.log_variance.is_some() != (kind == VariantKind::Pcvae) {
        return Err(Error::VariantMismatch(format!(
            "objective for {kind:?} does not match the decoder heads"
        )));
    }
    let w = 1.0 / n as f64;
    let wt = T::of(w);
    let mut grads = want_grads.then(|| OutputGrads {
        recon_mean: vec![T::zero(); n * p],
        recon_log_variance: recon.log_variance.as_ref().map(|_| vec![T::zero(); n * p]),
        latent_mean: vec![T::zero(); n * latent.dim],
        latent_log_variance: vec![T::zero(); n * latent.dim],
    });

    let mut rec_sum = 0.0;
    let mut kl_sum = 0.0;
    for i in 0..n {
        let x = batch.frame(i);
        let xh = recon.mean_at(i);
        let gx = grads.as_mut().map(|g| &mut g.recon_mean[i * p..(i + 1) * p]);
        match (objective, kind) {
            (Objective::GaussianNll { sigma }, _) => {
                rec_sum -= gaussian_log_likelihood(x, xh, Sigma::Constant(sigma))?;
                if let Some(gx) = gx {
                    let s = T::of(w / (sigma * sigma));
                    for ((g, &a), &b) in gx.iter_mut().zip(x).zip(xh) {
                        *g = s * (b - a);
                    }
                }
            }
            (Objective::Variant(v), VariantKind::Cvae | VariantKind::BetaCvae) => {
                let sse: f64 = x.iter().zip(xh).map(|(&a, &b)| (a.as_f64() - b.as_f64()).powi(2)).sum();
                rec_sum += sse / (2.0 * v.beta);
                if let Some(gx) = gx {
                    let s = T::of(w / v.beta);
                    for ((g, &a), &b) in gx.iter_mut().zip(x).zip(xh) {
                        *g = s * (b - a);
                    }
                }
            }
            (Objective::Variant(_), VariantKind::Ae) => {
                let sse: f64 = x.iter().zip(xh).map(|(&a, &b)| (a.as_f64() - b.as_f64()).powi(2)).sum();
                rec_sum += sse;
                if let Some(gx) = gx {
                    let s = T::of(2.0 * w);
                    for ((g, &a), &b) in gx.iter_mut().zip(x).zip(xh) {
                        *g = s * (b - a);
                    }
                }
            }
            (Objective::Variant(_), VariantKind::Pcvae) => {
                let lv = recon.log_variance_at(i).expect("checked above");
                rec_sum -= gaussian_log_likelihood(x, xh, Sigma::PerPixel(lv))?;
                if let Some(g) = grads.as_mut() {
                    let glv = g.recon_log_variance.as_mut().expect("variance head");
                    for j in 0..p {
                        let r = xh[j] - x[j];
                        let inv = (-lv[j]).exp();
                        g.recon_mean[i * p + j] = wt * r * inv;
                        glv[i * p + j] = wt * (T::of(0.5) - r * r * inv * T::of(0.5));
                    }
                }
            }
        }
        if kind != VariantKind::Ae {
            let m = latent.mean_at(i);
            let lv = latent.log_variance_at(i);
            kl_sum += kl_divergence(m, lv);
            if let Some(g) = grads.as_mut() {
                let d = latent.dim;
                for j in 0..d {
                    g.latent_mean[i * d + j] = wt * m[j];
                    g.latent_log_variance[i * d + j] = wt * T::of(0.5) * (lv[j].exp() - T::one());
                }
            }
        }
    }
    let reconstruction = rec_sum * w;
    let kl = kl_sum * w;
    Ok((
        LossBreakdown {
            total: reconstruction + kl,
            reconstruction,
            kl,
        },
        grads,
    ))
}
