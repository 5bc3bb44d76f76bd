//! Conditional CNN-LSTM encoder-decoder in four variants, with losses and
//! the reconstruction-probability score.

mod checkpoint;
mod loss;
mod network;
pub mod ops;
mod real;

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Grid;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use loss::{
    gaussian_log_likelihood, kl_divergence, loss_and_grads, total_loss, LossBreakdown, Objective, Sigma,
};
pub use network::{Architecture, Batch, Forward, ModelParameters, OutputGrads, Sampling, Tensor, CONDITION_CHANNELS};
pub use real::{gemm, Real};

pub const LATENT_DIM: usize = 8;
pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;
pub const BETA_CVAE_DEFAULT: f64 = 1e-4;
pub const DEFAULT_RECON_SAMPLES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VariantKind {
    #[serde(rename = "AE")]
    Ae,
    #[serde(rename = "CVAE")]
    Cvae,
    #[serde(rename = "BetaCVAE")]
    BetaCvae,
    #[serde(rename = "PCVAE")]
    Pcvae,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "VariantSpec")]
pub struct ModelVariant {
    pub kind: VariantKind,
    /// Weight of the reconstruction term; only CVAE and BetaCVAE read it.
    pub beta: f64,
}

/// Config form of a variant; `beta` defaults per kind.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VariantSpec {
    kind: VariantKind,
    beta: Option<f64>,
}

impl From<VariantSpec> for ModelVariant {
    fn from(spec: VariantSpec) -> Self {
        let default = match spec.kind {
            VariantKind::BetaCvae => BETA_CVAE_DEFAULT,
            _ => 1.0,
        };
        Self {
            kind: spec.kind,
            beta: spec.beta.unwrap_or(default),
        }
    }
}

impl ModelVariant {
    pub const fn ae() -> Self {
        Self { kind: VariantKind::Ae, beta: 1.0 }
    }

    pub const fn cvae() -> Self {
        Self { kind: VariantKind::Cvae, beta: 1.0 }
    }

    pub const fn beta_cvae(beta: f64) -> Self {
        Self { kind: VariantKind::BetaCvae, beta }
    }

    pub const fn pcvae() -> Self {
        Self { kind: VariantKind::Pcvae, beta: 1.0 }
    }

    /// The four benchmark variants in reporting order.
    pub fn all() -> [Self; 4] {
        [Self::ae(), Self::cvae(), Self::beta_cvae(BETA_CVAE_DEFAULT), Self::pcvae()]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::Config(format!("beta must be positive, got {}", self.beta)));
        }
        Ok(())
    }

    pub fn is_stochastic(&self) -> bool {
        self.kind != VariantKind::Ae
    }

    pub fn has_variance_head(&self) -> bool {
        self.kind == VariantKind::Pcvae
    }

    /// Short name used in file names and reports, e.g. `0.01CVAE` for β = 1e-4.
    pub fn name(&self) -> String {
        match self.kind {
            VariantKind::Ae => "AE".into(),
            VariantKind::Cvae => "CVAE".into(),
            VariantKind::BetaCvae => format!("{}CVAE", fmt_sigma(self.beta.sqrt())),
            VariantKind::Pcvae => "PCVAE".into(),
        }
    }

    /// Parse a name produced by [`ModelVariant::name`] (case-insensitive).
    pub fn parse(name: &str) -> Result<Self> {
        let upper = name.trim().to_ascii_uppercase();
        match upper.as_str() {
            "AE" => Ok(Self::ae()),
            "CVAE" => Ok(Self::cvae()),
            "PCVAE" => Ok(Self::pcvae()),
            "BETACVAE" => Ok(Self::beta_cvae(BETA_CVAE_DEFAULT)),
            _ => {
                let sigma = upper
                    .strip_suffix("CVAE")
                    .and_then(|s| s.parse::<f64>().ok())
                    .filter(|s| s.is_finite() && *s > 0.0)
                    .ok_or_else(|| Error::Config(format!("unknown model variant `{name}`")))?;
                Ok(Self::beta_cvae(sigma * sigma))
            }
        }
    }
}

fn fmt_sigma(s: f64) -> String {
    let rounded = format!("{s:.6}");
    rounded.trim_end_matches('0').trim_end_matches('.').to_string()
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Posterior parameters, `[frames, dim]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGaussian<T> {
    pub frames: usize,
    pub dim: usize,
    pub mean: Vec<T>,
    pub log_variance: Vec<T>,
}

impl<T: Real> LatentGaussian<T> {
    pub fn mean_at(&self, n: usize) -> &[T] {
        &self.mean[n * self.dim..(n + 1) * self.dim]
    }

    pub fn log_variance_at(&self, n: usize) -> &[T] {
        &self.log_variance[n * self.dim..(n + 1) * self.dim]
    }
}

/// Decoder output, `[frames, H*W]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction<T> {
    pub grid: Grid,
    pub frames: usize,
    pub mean: Vec<T>,
    pub log_variance: Option<Vec<T>>,
}

impl<T: Real> Reconstruction<T> {
    pub fn mean_at(&self, n: usize) -> &[T] {
        let p = self.grid.pixels();
        &self.mean[n * p..(n + 1) * p]
    }

    pub fn log_variance_at(&self, n: usize) -> Option<&[T]> {
        let p = self.grid.pixels();
        self.log_variance.as_ref().map(|lv| &lv[n * p..(n + 1) * p])
    }
}

/// Draw `z = mean + exp(log_variance / 2) * eps`. For the AE the mean is
/// returned unchanged and no noise is drawn.
pub fn reparameterize<T: Real, R: Rng + ?Sized>(
    variant: ModelVariant,
    latent: &LatentGaussian<T>,
    rng: &mut R,
) -> Vec<T> {
    if !variant.is_stochastic() {
        return latent.mean.clone();
    }
    latent
        .mean
        .iter()
        .zip(&latent.log_variance)
        .map(|(&m, &lv)| {
            let e: f64 = rng.sample(StandardNormal);
            m + (lv * T::of(0.5)).exp() * T::of(e)
        })
        .collect()
}

impl<T: Real> ModelParameters<T> {
    /// Posterior parameters for every frame of the batch.
    pub fn encode(&self, batch: &Batch<T>) -> Result<LatentGaussian<T>> {
        Ok(self.forward(batch, Sampling::Mean)?.latent)
    }

    /// Monte-Carlo estimate of `E_q[log p(x|z)]` per frame with `samples` draws.
    pub fn reconstruction_probability<R: Rng + ?Sized>(
        &self,
        batch: &Batch<T>,
        samples: usize,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        if !self.variant.has_variance_head() {
            return Err(Error::VariantMismatch(format!(
                "reconstruction probability needs a variance head; {} has none",
                self.variant
            )));
        }
        if samples == 0 {
            return Err(Error::InvalidInput("at least one sample is required".into()));
        }
        let latent = self.encode(batch)?;
        let n = batch.frames_len();
        let mut condition = Vec::with_capacity(n * crate::dataset::CONDITION_DIM);
        for b in 0..batch.windows {
            let c = &batch.condition_vector[b * crate::dataset::CONDITION_DIM..][..crate::dataset::CONDITION_DIM];
            for _ in 0..batch.steps {
                condition.extend_from_slice(c);
            }
        }
        let mut acc = vec![0.0; n];
        for _ in 0..samples {
            let z = reparameterize(self.variant, &latent, rng);
            let recon = self.decode(&z, &condition)?;
            for (i, a) in acc.iter_mut().enumerate() {
                let lv = recon.log_variance_at(i).expect("variance head present");
                *a += gaussian_log_likelihood(batch.frame(i), recon.mean_at(i), Sigma::PerPixel(lv))?;
            }
        }
        Ok(acc.into_iter().map(|a| a / samples as f64).collect())
    }
}
