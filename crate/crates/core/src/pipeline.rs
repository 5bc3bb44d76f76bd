//! Experiment stages over an output root:
//!
//! ```text
//! <root>/data/       manifest.jsonl calibration.jsonl manifest.sha256 raw/<id>/frame_NNN.tif
//! <root>/processed/  <id>.thsq split.json
//! <root>/models/     <model>.thck <model>_train_log.csv <model>_train_time.csv
//! <root>/scores/     <model>.json
//! <root>/report/     metrics.csv roc.csv score_over_time.csv summary.json <model>_scores.csv *.png
//! ```
//!
//! Every stage directory also receives `run.json` with the toolkit version
//! and the resolved configuration.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, TOOLKIT_VERSION};
use crate::dataset::{self, load_processed, store_processed, ProcessedSequence, Split, SplitAssignment};
use crate::detector::{score_sequence, vote, write_score_dump, SequenceScores};
use crate::error::{Error, IoContext, Result};
use crate::evaluation::{emit_report, run_ablations, AblationRow, ModelScores, Report};
use crate::model::{load_checkpoint, save_checkpoint, ModelVariant};
use crate::simulator::{
    generate_dataset, read_manifest, read_raw_sequence, ManifestRecord, CALIBRATION_FILE, MANIFEST_FILE,
};
use crate::trainer::{train, TrainLog};

pub const RUN_FILE: &str = "run.json";
pub const SPLIT_FILE: &str = "split.json";
pub const MANIFEST_HASH_FILE: &str = "manifest.sha256";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Simulate,
    Preprocess,
    Train,
    Score,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Simulate,
        Stage::Preprocess,
        Stage::Train,
        Stage::Score,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Preprocess => "preprocess",
            Stage::Train => "train",
            Stage::Score => "score",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown command `{s}`")))
    }
}

/// Paths inside an output root.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn processed(&self) -> PathBuf {
        self.root.join("processed")
    }

    pub fn models(&self) -> PathBuf {
        self.root.join("models")
    }

    pub fn scores(&self) -> PathBuf {
        self.root.join("scores")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report")
    }

    pub fn manifest(&self) -> PathBuf {
        self.data().join(MANIFEST_FILE)
    }

    pub fn calibration_manifest(&self) -> PathBuf {
        self.data().join(CALIBRATION_FILE)
    }

    pub fn split(&self) -> PathBuf {
        self.processed().join(SPLIT_FILE)
    }

    pub fn sequence(&self, id: &str) -> PathBuf {
        self.processed().join(format!("{id}.thsq"))
    }

    pub fn checkpoint(&self, model: &ModelVariant) -> PathBuf {
        self.models().join(format!("{}.thck", model.name()))
    }

    pub fn train_log(&self, model: &ModelVariant) -> PathBuf {
        self.models().join(format!("{}_train_log.csv", model.name()))
    }

    pub fn train_time(&self, model: &ModelVariant) -> PathBuf {
        self.models().join(format!("{}_train_time.csv", model.name()))
    }

    pub fn model_scores(&self, model: &ModelVariant) -> PathBuf {
        self.scores().join(format!("{}.json", model.name()))
    }

    pub fn summary(&self) -> PathBuf {
        self.report().join("summary.json")
    }
}

#[derive(Serialize)]
struct RunRecord<'a> {
    version: &'a str,
    config: &'a ExperimentConfig,
}

fn prepare_dir(dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(dir).ctx(|| format!("creating {}", dir.display()))?;
    let record = RunRecord {
        version: TOOLKIT_VERSION,
        config: cfg,
    };
    let path = dir.join(RUN_FILE);
    fs::write(&path, serde_json::to_string_pretty(&record)? + "\n").ctx(|| format!("writing {}", path.display()))
}

fn require(path: &Path, stage: Stage) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "{} not found; run the `{stage}` stage first",
            path.display()
        )))
    }
}

/// Hex SHA-256 over both manifests.
pub fn manifest_hash(layout: &Layout) -> Result<String> {
    let mut h = Sha256::new();
    for path in [layout.manifest(), layout.calibration_manifest()] {
        h.update(fs::read(&path).ctx(|| format!("reading {}", path.display()))?);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

pub fn simulate(cfg: &ExperimentConfig, layout: &Layout) -> Result<String> {
    let dir = layout.data();
    prepare_dir(&dir, cfg)?;
    let generated = generate_dataset(&cfg.dataset, &dir)?;
    let hash = manifest_hash(layout)?;
    fs::write(dir.join(MANIFEST_HASH_FILE), format!("{hash}\n"))
        .ctx(|| format!("writing {}", dir.join(MANIFEST_HASH_FILE).display()))?;
    log::info!(
        "simulated {} sequences + {} calibration anomalies, manifest sha256 {hash}",
        generated.records.len(),
        generated.calibration.len()
    );
    Ok(hash)
}

fn manifests(layout: &Layout) -> Result<(Vec<ManifestRecord>, Vec<ManifestRecord>)> {
    require(&layout.manifest(), Stage::Simulate)?;
    Ok((read_manifest(&layout.manifest())?, read_manifest(&layout.calibration_manifest())?))
}

pub fn preprocess(cfg: &ExperimentConfig, layout: &Layout) -> Result<SplitAssignment> {
    let (records, calibration) = manifests(layout)?;
    let dir = layout.processed();
    prepare_dir(&dir, cfg)?;
    for rec in records.iter().chain(&calibration) {
        let raw = read_raw_sequence(&layout.data(), rec)?;
        let seq = dataset::preprocess(&raw, &rec.id, rec.label)?;
        store_processed(&seq, &layout.sequence(&rec.id))?;
    }
    let split = dataset::split(&records, &cfg.dataset.ratios, cfg.dataset.seed)?;
    split.write_json(&layout.split())?;
    log::info!(
        "preprocessed {} sequences: train {}, val {}, test {}, calibration anomalies {}",
        records.len() + calibration.len(),
        split.count(Split::Train),
        split.count(Split::Val),
        split.count(Split::Test),
        calibration.len()
    );
    Ok(split)
}

fn load_split(layout: &Layout) -> Result<SplitAssignment> {
    require(&layout.split(), Stage::Preprocess)?;
    SplitAssignment::read_json(&layout.split())
}

fn load_sequences<'a>(layout: &Layout, ids: impl IntoIterator<Item = &'a str>) -> Result<Vec<ProcessedSequence>> {
    ids.into_iter().map(|id| load_processed(&layout.sequence(id))).collect()
}

fn windows<'a>(seqs: &'a [ProcessedSequence], cfg: &ExperimentConfig) -> Result<Vec<dataset::Window<'a>>> {
    let mut out = Vec::new();
    for s in seqs {
        out.extend(dataset::window(s, cfg.window.length, cfg.window.offset)?);
    }
    Ok(out)
}

pub fn train_models(cfg: &ExperimentConfig, layout: &Layout) -> Result<Vec<(ModelVariant, TrainLog)>> {
    let split = load_split(layout)?;
    let train_seqs = load_sequences(layout, split.ids(Split::Train))?;
    let val_seqs = load_sequences(layout, split.ids(Split::Val))?;
    let train_w = windows(&train_seqs, cfg)?;
    let val_w = windows(&val_seqs, cfg)?;
    let dir = layout.models();
    prepare_dir(&dir, cfg)?;
    log::info!("training on {} windows, validating on {}", train_w.len(), val_w.len());

    let mut logs = Vec::new();
    for model in &cfg.models {
        let outcome = train(*model, cfg.architecture, &train_w, &val_w, &cfg.trainer)?;
        save_checkpoint(&outcome.params, &layout.checkpoint(model))?;
        outcome.log.write(&layout.train_log(model), &layout.train_time(model))?;
        log::info!(
            "{model}: best epoch {} of {} ({:.1}s)",
            outcome.log.best_epoch,
            outcome.log.epochs.len(),
            outcome.log.total_seconds()
        );
        logs.push((*model, outcome.log));
    }
    Ok(logs)
}

/// On-disk form of [`ModelScores`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreFile {
    pub variant: ModelVariant,
    pub calibration: Vec<SequenceScores>,
    pub test: Vec<SequenceScores>,
}

impl From<ScoreFile> for ModelScores {
    fn from(f: ScoreFile) -> Self {
        ModelScores {
            variant: f.variant,
            calibration: f.calibration,
            test: f.test,
        }
    }
}

/// Calibration set: validation normals plus the calibration anomalies.
/// Test set: test normals plus the test anomalies.
fn scoring_sets(layout: &Layout) -> Result<(Vec<ProcessedSequence>, Vec<ProcessedSequence>)> {
    let split = load_split(layout)?;
    let (_, calibration) = manifests(layout)?;
    let mut cal = load_sequences(layout, split.ids(Split::Val))?;
    cal.extend(load_sequences(layout, calibration.iter().map(|r| r.id.as_str()))?);
    let test = load_sequences(layout, split.ids(Split::Test))?;
    Ok((cal, test))
}

pub fn score(cfg: &ExperimentConfig, layout: &Layout) -> Result<Vec<ScoreFile>> {
    let (cal, test) = scoring_sets(layout)?;
    let dir = layout.scores();
    prepare_dir(&dir, cfg)?;
    let mut out = Vec::new();
    for model in &cfg.models {
        let path = layout.checkpoint(model);
        require(&path, Stage::Train)?;
        let params = load_checkpoint::<f32>(&path, Some(*model))?;
        let mut stream = 0u64;
        let mut run = |seqs: &[ProcessedSequence]| -> Result<Vec<SequenceScores>> {
            seqs.iter()
                .map(|s| {
                    stream += 1;
                    score_sequence(&params, s, cfg.window.length, &cfg.detector, stream)
                })
                .collect()
        };
        let file = ScoreFile {
            variant: *model,
            calibration: run(&cal)?,
            test: run(&test)?,
        };
        let path = layout.model_scores(model);
        fs::write(&path, serde_json::to_vec(&file)?).ctx(|| format!("writing {}", path.display()))?;
        log::info!("{model}: scored {} calibration and {} test sequences", cal.len(), test.len());
        out.push(file);
    }
    Ok(out)
}

fn load_scores(cfg: &ExperimentConfig, layout: &Layout) -> Result<Vec<ModelScores>> {
    cfg.models
        .iter()
        .map(|m| {
            let path = layout.model_scores(m);
            require(&path, Stage::Score)?;
            let bytes = fs::read(&path).ctx(|| format!("reading {}", path.display()))?;
            let file: ScoreFile = serde_json::from_slice(&bytes)?;
            if file.variant != *m {
                return Err(Error::VariantMismatch(format!(
                    "{} holds scores of {}, expected {m}",
                    path.display(),
                    file.variant
                )));
            }
            Ok(file.into())
        })
        .collect()
}

/// Calibrate, run every ablation row, write `summary.json` and per-model
/// score dumps.
pub fn evaluate(cfg: &ExperimentConfig, layout: &Layout) -> Result<Report> {
    let models = load_scores(cfg, layout)?;
    let (rows, roc, score_over_time) = run_ablations(&models, &cfg.evaluation)?;
    let report = Report {
        version: TOOLKIT_VERSION.to_string(),
        rows,
        roc,
        score_over_time,
        config: serde_json::to_value(cfg)?,
    };
    let dir = layout.report();
    prepare_dir(&dir, cfg)?;
    fs::write(layout.summary(), serde_json::to_string_pretty(&report)? + "\n")
        .ctx(|| format!("writing {}", layout.summary().display()))?;

    for m in &models {
        let name = m.variant.name();
        let mut dump = Vec::new();
        for row in report
            .rows
            .iter()
            .filter(|r| r.model == name && r.row != AblationRow::WithoutVoting)
        {
            for s in &m.test {
                if let Some(series) = s.series(row.scorer) {
                    let v = vote(series, row.epsilon, cfg.evaluation.vote_scope, cfg.evaluation.window_length)?;
                    dump.push((s, row.scorer, row.epsilon, v));
                }
            }
        }
        write_score_dump(&dir.join(format!("{name}_scores.csv")), &dump)?;
    }
    for r in &report.rows {
        log::info!(
            "{} row {}: Sn {:.3} Pr {:.3} F-M {:.3} (eps {:.4})",
            r.model,
            r.row.label(),
            r.metrics.sensitivity,
            r.metrics.precision,
            r.metrics.f_measure,
            r.epsilon
        );
    }
    for e in &report.roc {
        log::info!("{} {}: AUC {:.4}", e.model, e.scorer.name(), e.curve.auc);
    }
    Ok(report)
}

/// Render CSVs and plots from `summary.json`.
pub fn report(cfg: &ExperimentConfig, layout: &Layout) -> Result<Vec<PathBuf>> {
    require(&layout.summary(), Stage::Evaluate)?;
    let text = fs::read_to_string(layout.summary()).ctx(|| format!("reading {}", layout.summary().display()))?;
    let report: Report = serde_json::from_str(&text)?;
    prepare_dir(&layout.report(), cfg)?;
    let written = emit_report(&report, &layout.report())?;
    log::info!("wrote {} report files to {}", written.len(), layout.report().display());
    Ok(written)
}

pub fn run_stage(stage: Stage, cfg: &ExperimentConfig) -> Result<()> {
    let layout = Layout::new(cfg.output_root());
    log::info!("stage {stage} in {}", layout.root.display());
    match stage {
        Stage::Simulate => simulate(cfg, &layout).map(drop),
        Stage::Preprocess => preprocess(cfg, &layout).map(drop),
        Stage::Train => train_models(cfg, &layout).map(drop),
        Stage::Score => score(cfg, &layout).map(drop),
        Stage::Evaluate => evaluate(cfg, &layout).map(drop),
        Stage::Report => report(cfg, &layout).map(drop),
    }
}

/// Every stage in order.
pub fn run_all(cfg: &ExperimentConfig) -> Result<()> {
    Stage::ALL.into_iter().try_for_each(|stage| run_stage(stage, cfg))
}
