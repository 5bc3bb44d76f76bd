//! Contour-based anomaly scoring of reconstruction residuals, majority
//! voting, and the baseline scorers.

mod contour;

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use contour::{contour_regions, Region};

use crate::dataset::{covering_starts, covering_windows, ProcessedSequence};
use crate::error::{Error, IoContext, Result};
use crate::frame::{Frame, Grid};
use crate::model::{Batch, ModelParameters, Sampling};
use crate::simulator::Label;

pub const DEFAULT_RESIDUAL_FLOOR: f64 = 1e-3;
/// Top-k size at the camera's native 640x480 resolution.
pub const NATIVE_TOP_K: usize = 5000;
const NATIVE_PIXELS: usize = 640 * 480;

/// `max(1, round(5000 * pixels / 307200))`.
pub fn scaled_top_k(grid: Grid) -> usize {
    ((NATIVE_TOP_K * grid.pixels()) as f64 / NATIVE_PIXELS as f64)
        .round()
        .max(1.0) as usize
}

/// `|x - x_hat|` with values below `floor` set to zero.
pub fn compute_residuals<A, B>(x: &Frame<A>, x_hat: &[B], floor: f64) -> Result<Frame<f64>>
where
    A: Copy + Into<f64>,
    B: Copy + Into<f64>,
{
    if x.data.len() != x_hat.len() {
        return Err(Error::Shape(format!(
            "frame has {} pixels, reconstruction {}",
            x.data.len(),
            x_hat.len()
        )));
    }
    Ok(Frame {
        grid: x.grid,
        data: x
            .data
            .iter()
            .zip(x_hat)
            .map(|(&a, &b)| {
                let r = (a.into() - b.into()).abs();
                if r < floor {
                    0.0
                } else {
                    r
                }
            })
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameScore {
    /// Residual mass inside the regions of `r > 0`.
    pub res: f64,
    /// Residual mass inside the regions of `r >= threshold`.
    pub res_high: f64,
    /// Mean of the `k` largest residuals.
    pub threshold: f64,
    /// `res_high / res`, or 0 when `res` is 0.
    pub score: f64,
}

fn region_mass(r: &Frame<f64>, mask: Frame<bool>) -> f64 {
    contour_regions(&mask).iter().map(|reg| reg.sum(r)).sum()
}

/// Mean of the `k` largest values (`k` clamped to `1..=len`).
pub fn top_k_mean(values: &[f64], k: usize) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let k = k.clamp(1, values.len());
    let mut v = values.to_vec();
    let pivot = v.len() - k;
    v.select_nth_unstable_by(pivot, |a, b| a.total_cmp(b));
    let top = &v[pivot..];
    let lo = top.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = top.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // rounding can push the mean of a plateau just past its value
    (top.iter().sum::<f64>() / k as f64).clamp(lo, hi)
}

/// Contour score of one floored residual frame.
pub fn frame_score(r: &Frame<f64>, k: usize) -> FrameScore {
    let res = region_mass(r, r.map(|v| v > 0.0));
    if res == 0.0 {
        return FrameScore {
            res: 0.0,
            res_high: 0.0,
            threshold: 0.0,
            score: 0.0,
        };
    }
    let threshold = top_k_mean(&r.data, k);
    // a pixel equal to the mean of a tie must not drop out on summation order
    let cut = threshold * (1.0 - 1e-12);
    let res_high = region_mass(r, r.map(|v| v > 0.0 && v >= cut));
    FrameScore {
        res,
        res_high,
        threshold,
        score: (res_high / res).clamp(0.0, 1.0),
    }
}

/// Arithmetic mean of all pixels.
pub fn mean_residual_score(r: &Frame<f64>) -> f64 {
    if r.data.is_empty() {
        return 0.0;
    }
    r.data.iter().sum::<f64>() / r.data.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Anomaly,
    NotAnomaly,
}

impl Verdict {
    pub fn is_anomaly(self) -> bool {
        self == Verdict::Anomaly
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyScoreSeries {
    pub scores: Vec<f64>,
    pub votes: usize,
    pub verdict: Verdict,
    pub epsilon: f64,
}

/// Strict majority vote: anomalous iff more than half the scores exceed ε.
pub fn sequence_verdict(scores: &[f64], epsilon: f64) -> Result<AnomalyScoreSeries> {
    if scores.is_empty() {
        return Err(Error::InvalidInput("cannot vote on an empty score series".into()));
    }
    let votes = scores.iter().filter(|&&s| s > epsilon).count();
    Ok(AnomalyScoreSeries {
        scores: scores.to_vec(),
        votes,
        verdict: if 2 * votes > scores.len() {
            Verdict::Anomaly
        } else {
            Verdict::NotAnomaly
        },
        epsilon,
    })
}

/// Over which frames the majority vote is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VoteScope {
    /// One vote over the whole per-sequence score series.
    #[default]
    Sequence,
    /// Each covering window votes on its own frames; the sequence is
    /// anomalous iff more than half of its windows are.
    Window,
}

/// Verdict for a whole sequence under `scope`.
pub fn vote(scores: &[f64], epsilon: f64, scope: VoteScope, window_length: usize) -> Result<Verdict> {
    match scope {
        VoteScope::Sequence => Ok(sequence_verdict(scores, epsilon)?.verdict),
        VoteScope::Window => {
            let starts = covering_starts(scores.len(), window_length)?;
            let anomalous = starts
                .iter()
                .map(|&s| sequence_verdict(&scores[s..s + window_length], epsilon).map(|v| v.verdict.is_anomaly()))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .filter(|&a| a)
                .count();
            Ok(if 2 * anomalous > starts.len() {
                Verdict::Anomaly
            } else {
                Verdict::NotAnomaly
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scorer {
    Contour,
    MeanResidual,
    ReconstructionProbability,
}

impl Scorer {
    pub fn name(self) -> &'static str {
        match self {
            Scorer::Contour => "contour",
            Scorer::MeanResidual => "mean_residual",
            Scorer::ReconstructionProbability => "reconstruction_probability",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    /// Top-k size; `None` scales the native 5000 to the frame size.
    pub top_k: Option<usize>,
    pub residual_floor: f64,
    /// Monte-Carlo samples for the reconstruction-probability baseline.
    pub recon_samples: usize,
    pub vote_scope: VoteScope,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            top_k: None,
            residual_floor: DEFAULT_RESIDUAL_FLOOR,
            recon_samples: crate::model::DEFAULT_RECON_SAMPLES,
            vote_scope: VoteScope::Sequence,
            seed: 0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == Some(0) {
            return Err(Error::Config("detector.top_k must be at least 1".into()));
        }
        if !(self.residual_floor.is_finite() && self.residual_floor >= 0.0) {
            return Err(Error::Config("detector.residual_floor must be non-negative".into()));
        }
        if self.recon_samples == 0 {
            return Err(Error::Config("detector.recon_samples must be at least 1".into()));
        }
        Ok(())
    }

    pub fn top_k_for(&self, grid: Grid) -> usize {
        self.top_k.unwrap_or_else(|| scaled_top_k(grid))
    }
}

/// Per-frame scores of one sequence under every applicable scorer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceScores {
    pub id: String,
    pub label: Label,
    pub contour: Vec<f64>,
    pub mean_residual: Vec<f64>,
    /// Negated reconstruction probability; PCVAE only.
    pub reconstruction_probability: Option<Vec<f64>>,
}

impl SequenceScores {
    pub fn series(&self, scorer: Scorer) -> Option<&[f64]> {
        match scorer {
            Scorer::Contour => Some(&self.contour),
            Scorer::MeanResidual => Some(&self.mean_residual),
            Scorer::ReconstructionProbability => self.reconstruction_probability.as_deref(),
        }
    }
}

/// Reconstruct every frame with `z = μ` and score it. Each frame is taken
/// from the first covering window that contains it. `stream` selects the
/// noise stream of the reconstruction-probability baseline.
pub fn score_sequence(
    params: &ModelParameters<f32>,
    seq: &ProcessedSequence,
    window_length: usize,
    config: &DetectorConfig,
    stream: u64,
) -> Result<SequenceScores> {
    let grid = seq
        .grid()
        .ok_or_else(|| Error::InvalidInput(format!("sequence {} is empty", seq.id)))?;
    let windows = covering_windows(seq, window_length)?;
    let batch = Batch::<f32>::from_windows(&windows)?;
    let fwd = params.forward(&batch, Sampling::Mean)?;
    let k = config.top_k_for(grid);

    let mut owner = vec![None; seq.len()];
    for (wi, w) in windows.iter().enumerate() {
        for t in w.start..w.start + w.len() {
            owner[t].get_or_insert(wi * window_length + (t - w.start));
        }
    }
    let mut contour = Vec::with_capacity(seq.len());
    let mut mean_residual = Vec::with_capacity(seq.len());
    for (t, frame) in seq.frames.iter().enumerate() {
        let row = owner[t].expect("covering windows cover every frame");
        let r = compute_residuals(frame, fwd.recon.mean_at(row), config.residual_floor)?;
        contour.push(frame_score(&r, k).score);
        mean_residual.push(mean_residual_score(&r));
    }

    let reconstruction_probability = if params.variant.has_variance_head() {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(stream);
        let rp = params.reconstruction_probability(&batch, config.recon_samples, &mut rng)?;
        Some(
            owner
                .iter()
                .map(|o| -rp[o.expect("covering windows cover every frame")])
                .collect(),
        )
    } else {
        None
    };

    Ok(SequenceScores {
        id: seq.id.clone(),
        label: seq.label,
        contour,
        mean_residual,
        reconstruction_probability,
    })
}

/// Negated reconstruction probability for every frame of a sequence.
pub fn reconstruction_probability_score(
    params: &ModelParameters<f32>,
    seq: &ProcessedSequence,
    window_length: usize,
    config: &DetectorConfig,
    stream: u64,
) -> Result<Vec<f64>> {
    if !params.variant.has_variance_head() {
        return Err(Error::VariantMismatch(format!(
            "reconstruction probability needs a PCVAE checkpoint, got {}",
            params.variant
        )));
    }
    Ok(score_sequence(params, seq, window_length, config, stream)?
        .reconstruction_probability
        .expect("variance head present"))
}

/// CSV rows `id,time_step,score,vote,verdict,epsilon,scorer`.
pub fn score_dump_csv(rows: &[(&SequenceScores, Scorer, f64, Verdict)]) -> String {
    let mut s = String::from("id,time_step,score,vote,verdict,epsilon,scorer\n");
    for (seq, scorer, eps, verdict) in rows {
        let Some(series) = seq.series(*scorer) else {
            continue;
        };
        let verdict = match verdict {
            Verdict::Anomaly => "anomaly",
            Verdict::NotAnomaly => "normal",
        };
        for (t, v) in series.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{:e},{},{},{:e},{}",
                seq.id,
                t,
                v,
                u8::from(*v > *eps),
                verdict,
                eps,
                scorer.name()
            );
        }
    }
    s
}

pub fn write_score_dump(path: &Path, rows: &[(&SequenceScores, Scorer, f64, Verdict)]) -> Result<()> {
    std::fs::write(path, score_dump_csv(rows)).ctx(|| format!("writing {}", path.display()))
}
