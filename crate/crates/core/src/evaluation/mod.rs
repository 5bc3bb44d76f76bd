//! Classification metrics, ROC/AUC, score-over-time bands, threshold
//! calibration and the ablation report.

mod plot;
mod report;

use serde::{Deserialize, Serialize};

use crate::detector::{vote, Scorer, SequenceScores, VoteScope};
use crate::error::{Error, Result};
use crate::model::ModelVariant;
use crate::simulator::Label;

pub use report::{emit_report, metrics_csv, roc_csv, score_over_time_csv, Report, PLOTS_ENABLED};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut c = Self::default();
        for (predicted, actual) in pairs {
            match (predicted, actual) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub sensitivity: f64,
    pub precision: f64,
    pub f_measure: f64,
    pub counts: ConfusionCounts,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean of sensitivity and precision, 0 when both are 0.
pub fn f_measure(sensitivity: f64, precision: f64) -> f64 {
    if sensitivity + precision == 0.0 {
        0.0
    } else {
        2.0 * sensitivity * precision / (sensitivity + precision)
    }
}

impl Metrics {
    pub fn from_counts(counts: ConfusionCounts) -> Self {
        let sensitivity = ratio(counts.tp, counts.tp + counts.fn_);
        let precision = ratio(counts.tp, counts.tp + counts.fp);
        Self {
            sensitivity,
            precision,
            f_measure: f_measure(sensitivity, precision),
            counts,
        }
    }
}

/// Metrics for predictions and labels keyed by id; both lists must name
/// the same ids in the same order.
pub fn classification_metrics(predicted: &[(&str, bool)], actual: &[(&str, bool)]) -> Result<Metrics> {
    if predicted.len() != actual.len() {
        return Err(Error::InvalidInput(format!(
            "{} verdicts for {} labels",
            predicted.len(),
            actual.len()
        )));
    }
    let mut pairs = Vec::with_capacity(predicted.len());
    for ((pid, p), (aid, a)) in predicted.iter().zip(actual) {
        if pid != aid {
            return Err(Error::InvalidInput(format!("verdict for `{pid}` aligned with label for `{aid}`")));
        }
        pairs.push((*p, *a));
    }
    Ok(Metrics::from_counts(ConfusionCounts::from_pairs(pairs)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Items with score `>= threshold` are called positive; `None` calls
    /// nothing positive.
    pub threshold: Option<f64>,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// Sweep every distinct score from high to low. Tied scores move in one
/// step, so ties contribute half credit to the trapezoidal area.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Result<RocCurve> {
    if scores.len() != positive.len() {
        return Err(Error::InvalidInput(format!(
            "{} scores for {} labels",
            scores.len(),
            positive.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidInput("scores contain NaN".into()));
    }
    let pos = positive.iter().filter(|&&p| p).count();
    let neg = positive.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidInput("ROC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        threshold: None,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (prev_tp, prev_fp) = (tp, fp);
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        auc += (fp - prev_fp) as f64 * (tp + prev_tp) as f64 / 2.0;
        points.push(RocPoint {
            threshold: Some(s),
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    Ok(RocCurve {
        points,
        auc: auc / (pos * neg) as f64,
    })
}

/// Median of a non-empty series (mean of the two middle values for even
/// lengths).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => 0.0,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

/// How a per-frame score series is reduced to one number for the ROC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceSummary {
    #[default]
    Median,
    /// Fraction of frames above the calibrated ε.
    VoteFraction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreOverTime {
    pub normal_mean: Vec<f64>,
    pub normal_sd: Vec<f64>,
    pub anomalous_mean: Vec<f64>,
    pub anomalous_sd: Vec<f64>,
}

fn mean_sd(series: &[&[f64]]) -> Result<(Vec<f64>, Vec<f64>)> {
    let first = series.first().ok_or_else(|| Error::InvalidInput("empty class".into()))?;
    let len = first.len();
    if series.iter().any(|s| s.len() != len) {
        return Err(Error::InvalidInput("score series differ in length".into()));
    }
    let n = series.len() as f64;
    let mut mean = vec![0.0; len];
    let mut sd = vec![0.0; len];
    for t in 0..len {
        let m = series.iter().map(|s| s[t]).sum::<f64>() / n;
        mean[t] = m;
        sd[t] = (series.iter().map(|s| (s[t] - m).powi(2)).sum::<f64>() / n).sqrt();
    }
    Ok((mean, sd))
}

/// Per-step mean and population standard deviation for each class.
pub fn score_over_time(series: &[&[f64]], positive: &[bool]) -> Result<ScoreOverTime> {
    if series.len() != positive.len() {
        return Err(Error::InvalidInput("series and labels differ in length".into()));
    }
    let normal: Vec<&[f64]> = series.iter().zip(positive).filter(|(_, &p)| !p).map(|(s, _)| *s).collect();
    let anomalous: Vec<&[f64]> = series.iter().zip(positive).filter(|(_, &p)| p).map(|(s, _)| *s).collect();
    let (normal_mean, normal_sd) = mean_sd(&normal)?;
    let (anomalous_mean, anomalous_sd) = mean_sd(&anomalous)?;
    if normal_mean.len() != anomalous_mean.len() {
        return Err(Error::InvalidInput("classes have different series lengths".into()));
    }
    Ok(ScoreOverTime {
        normal_mean,
        normal_sd,
        anomalous_mean,
        anomalous_sd,
    })
}

/// Candidate thresholds for a strict `score > ε` rule: zero and every
/// distinct score, ascending.
fn candidates<'a>(values: impl Iterator<Item = &'a f64>) -> Vec<f64> {
    let mut c: Vec<f64> = values.copied().chain(std::iter::once(0.0)).collect();
    c.sort_by(f64::total_cmp);
    c.dedup();
    c
}

fn best_threshold(cands: &[f64], mut eval: impl FnMut(f64) -> Result<Metrics>) -> Result<(f64, Metrics)> {
    let mut best: Option<(f64, Metrics)> = None;
    for &eps in cands {
        let m = eval(eps)?;
        // ascending sweep; keep the first (smallest) ε among ties
        if best.as_ref().is_none_or(|(_, b)| m.f_measure > b.f_measure) {
            best = Some((eps, m));
        }
    }
    best.ok_or_else(|| Error::InvalidInput("no calibration data".into()))
}

/// Verdict-level metrics of scored sequences at threshold `epsilon`.
pub fn sequence_metrics(
    series: &[(&[f64], bool)],
    epsilon: f64,
    scope: VoteScope,
    window_length: usize,
) -> Result<Metrics> {
    let pairs = series
        .iter()
        .map(|(s, p)| Ok((vote(s, epsilon, scope, window_length)?.is_anomaly(), *p)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Metrics::from_counts(ConfusionCounts::from_pairs(pairs)))
}

/// Per-image metrics: every frame is one item carrying its sequence label.
pub fn frame_metrics(series: &[(&[f64], bool)], epsilon: f64) -> Metrics {
    Metrics::from_counts(ConfusionCounts::from_pairs(
        series
            .iter()
            .flat_map(|(s, p)| s.iter().map(move |&v| (v > epsilon, *p))),
    ))
}

/// ε maximizing the voting F-measure on labelled calibration series;
/// the smallest such ε wins ties.
pub fn calibrate_sequence_threshold(
    series: &[(&[f64], bool)],
    scope: VoteScope,
    window_length: usize,
) -> Result<(f64, Metrics)> {
    let cands = candidates(series.iter().flat_map(|(s, _)| s.iter()));
    best_threshold(&cands, |eps| sequence_metrics(series, eps, scope, window_length))
}

/// ε maximizing the per-image F-measure.
pub fn calibrate_frame_threshold(series: &[(&[f64], bool)]) -> Result<(f64, Metrics)> {
    let cands = candidates(series.iter().flat_map(|(s, _)| s.iter()));
    best_threshold(&cands, |eps| Ok(frame_metrics(series, eps)))
}

/// Rows of the ablation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AblationRow {
    /// Contour score with majority voting.
    #[serde(rename = "I")]
    Full,
    /// Contour score decided per image.
    #[serde(rename = "II")]
    WithoutVoting,
    /// Mean residual with majority voting.
    #[serde(rename = "III")]
    WithoutContour,
    /// Negated reconstruction probability with majority voting.
    #[serde(rename = "RP")]
    ReconstructionProbability,
}

impl AblationRow {
    pub fn label(self) -> &'static str {
        match self {
            AblationRow::Full => "I",
            AblationRow::WithoutVoting => "II",
            AblationRow::WithoutContour => "III",
            AblationRow::ReconstructionProbability => "RP",
        }
    }

    pub fn scorer(self) -> Scorer {
        match self {
            AblationRow::Full | AblationRow::WithoutVoting => Scorer::Contour,
            AblationRow::WithoutContour => Scorer::MeanResidual,
            AblationRow::ReconstructionProbability => Scorer::ReconstructionProbability,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub model: String,
    pub row: AblationRow,
    pub scorer: Scorer,
    pub epsilon: f64,
    /// Calibration-set F-measure at the chosen ε.
    pub calibration_f_measure: f64,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocEntry {
    pub model: String,
    pub scorer: Scorer,
    pub curve: RocCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreOverTimeEntry {
    pub model: String,
    pub scorer: Scorer,
    pub bands: ScoreOverTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationOptions {
    pub sequence_summary: SequenceSummary,
    pub vote_scope: VoteScope,
    pub window_length: usize,
}

impl Default for EvaluationOptions {
    fn default() -> Self {
        Self {
            sequence_summary: SequenceSummary::Median,
            vote_scope: VoteScope::Sequence,
            window_length: 10,
        }
    }
}

/// Scores of one trained model on the calibration and test sets.
#[derive(Debug, Clone)]
pub struct ModelScores {
    pub variant: ModelVariant,
    pub calibration: Vec<SequenceScores>,
    pub test: Vec<SequenceScores>,
}

fn labelled(seqs: &[SequenceScores], scorer: Scorer) -> Option<Vec<(&[f64], bool)>> {
    seqs.iter()
        .map(|s| s.series(scorer).map(|v| (v, s.label == Label::Anomalous)))
        .collect()
}

/// Every metric row, ROC curve and score band for the given models.
pub fn run_ablations(
    models: &[ModelScores],
    options: &EvaluationOptions,
) -> Result<(Vec<MetricRow>, Vec<RocEntry>, Vec<ScoreOverTimeEntry>)> {
    let mut rows = Vec::new();
    let mut rocs = Vec::new();
    let mut bands = Vec::new();
    for m in models {
        let name = m.variant.name();
        let mut row_list = vec![AblationRow::Full, AblationRow::WithoutVoting, AblationRow::WithoutContour];
        if m.variant.has_variance_head() {
            row_list.push(AblationRow::ReconstructionProbability);
        }
        for row in row_list {
            let scorer = row.scorer();
            let (Some(cal), Some(test)) = (labelled(&m.calibration, scorer), labelled(&m.test, scorer)) else {
                return Err(Error::InvalidInput(format!("{name} has no {} scores", scorer.name())));
            };
            let (epsilon, cal_m, metrics) = if row == AblationRow::WithoutVoting {
                let (eps, cm) = calibrate_frame_threshold(&cal)?;
                (eps, cm, frame_metrics(&test, eps))
            } else {
                let (eps, cm) = calibrate_sequence_threshold(&cal, options.vote_scope, options.window_length)?;
                (
                    eps,
                    cm,
                    sequence_metrics(&test, eps, options.vote_scope, options.window_length)?,
                )
            };
            rows.push(MetricRow {
                model: name.clone(),
                row,
                scorer,
                epsilon,
                calibration_f_measure: cal_m.f_measure,
                metrics,
            });
            if row != AblationRow::WithoutVoting {
                let summary: Vec<f64> = test
                    .iter()
                    .map(|(s, _)| match options.sequence_summary {
                        SequenceSummary::Median => median(s),
                        SequenceSummary::VoteFraction => {
                            s.iter().filter(|&&v| v > epsilon).count() as f64 / s.len() as f64
                        }
                    })
                    .collect();
                let labels: Vec<bool> = test.iter().map(|(_, p)| *p).collect();
                rocs.push(RocEntry {
                    model: name.clone(),
                    scorer,
                    curve: roc_auc(&summary, &labels)?,
                });
                let series: Vec<&[f64]> = test.iter().map(|(s, _)| *s).collect();
                bands.push(ScoreOverTimeEntry {
                    model: name.clone(),
                    scorer,
                    bands: score_over_time(&series, &labels)?,
                });
            }
        }
    }
    Ok((rows, rocs, bands))
}
