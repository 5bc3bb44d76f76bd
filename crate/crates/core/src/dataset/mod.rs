//! Preprocessing, windowing, conditioning and splits.

mod container;

pub use container::{load_processed, store_processed, CONTAINER_MAGIC, CONTAINER_VERSION};

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::frame::{Frame, Grid};
use crate::simulator::{ArrayConfig, Label, ManifestRecord, RawSequence, ELEMENTS};

/// Background-subtracted, normalized sequence with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedSequence {
    pub id: String,
    pub config: ArrayConfig,
    pub label: Label,
    pub frames: Vec<Frame<f32>>,
}

impl ProcessedSequence {
    pub fn grid(&self) -> Option<Grid> {
        self.frames.first().map(|f| f.grid)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Subtract the background (frame 0), clamp negatives to zero, drop the
/// background and divide by the sequence-wide maximum.
pub fn preprocess(raw: &RawSequence, id: &str, label: Label) -> Result<ProcessedSequence> {
    if raw.frames.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "sequence {id} has {} frame(s); need at least 2",
            raw.frames.len()
        )));
    }
    let background = &raw.frames[0];
    if raw.frames.iter().any(|f| f.grid != background.grid) {
        return Err(Error::Shape(format!("sequence {id} mixes frame sizes")));
    }
    let diffs: Vec<Vec<f64>> = raw.frames[1..]
        .iter()
        .map(|f| {
            f.data
                .iter()
                .zip(&background.data)
                .map(|(&v, &b)| (f64::from(v) - f64::from(b)).max(0.0))
                .collect()
        })
        .collect();
    let max = diffs.iter().flatten().cloned().fold(0.0, f64::max);
    let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
    let frames = diffs
        .into_iter()
        .map(|d| Frame {
            grid: background.grid,
            data: d.into_iter().map(|v| (v * scale) as f32).collect(),
        })
        .collect();
    Ok(ProcessedSequence {
        id: id.to_string(),
        config: raw.config,
        label,
        frames,
    })
}

/// Normalized gain code, `(gain - 155) / 100` clamped to `[0, 1]`.
pub fn normalized_gain(gain: u32) -> f32 {
    ((gain as f32 - 155.0) / 100.0).clamp(0.0, 1.0)
}

/// Normalized phase, `phase / 180` clamped to `[0, 1]`.
pub fn normalized_phase(phase: u32) -> f32 {
    (phase as f32 / 180.0).clamp(0.0, 1.0)
}

/// Length of the condition vector fed to the decoder.
pub const CONDITION_DIM: usize = 2 * ELEMENTS;

/// `[g1..g4, p1..p4]`, each normalized to `[0, 1]`.
pub fn condition_vector(config: &ArrayConfig) -> [f32; CONDITION_DIM] {
    let mut v = [0.0; CONDITION_DIM];
    for (k, e) in config.elements().iter().enumerate() {
        v[k] = normalized_gain(e.gain);
        v[ELEMENTS + k] = normalized_phase(e.phase);
    }
    v
}

/// Two-channel spatial condition: channel 0 holds each element's normalized
/// gain over its image quadrant, channel 1 its normalized phase.
pub fn condition_input_map(config: &ArrayConfig, grid: Grid) -> Result<[Frame<f32>; 2]> {
    if grid.height % 2 != 0 || grid.width % 2 != 0 || grid.height == 0 || grid.width == 0 {
        return Err(Error::Shape(format!(
            "condition map needs even dimensions, got {}x{}",
            grid.height, grid.width
        )));
    }
    let v = condition_vector(config);
    let (hh, hw) = (grid.height / 2, grid.width / 2);
    let mut gain = Frame::filled(grid, 0.0f32);
    let mut phase = Frame::filled(grid, 0.0f32);
    for row in 0..grid.height {
        for col in 0..grid.width {
            let k = usize::from(row >= hh) * 2 + usize::from(col >= hw);
            gain.set(row, col, v[k]);
            phase.set(row, col, v[ELEMENTS + k]);
        }
    }
    Ok([gain, phase])
}

/// A training unit: `length` consecutive frames of one sequence plus its
/// conditions.
#[derive(Debug, Clone)]
pub struct Window<'a> {
    pub parent: &'a str,
    pub start: usize,
    pub frames: &'a [Frame<f32>],
    pub condition_map: [Frame<f32>; 2],
    pub condition_vector: [f32; CONDITION_DIM],
}

impl Window<'_> {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Start indices `0, offset, 2*offset, ...` of fully contained windows.
pub fn window_starts(len: usize, length: usize, offset: usize) -> Result<Vec<usize>> {
    if length == 0 || offset == 0 {
        return Err(Error::InvalidInput("window length and offset must be >= 1".into()));
    }
    if length > len {
        return Err(Error::InvalidInput(format!(
            "window length {length} exceeds sequence length {len}"
        )));
    }
    Ok((0..=(len - length) / offset).map(|i| i * offset).collect())
}

/// Starts of windows covering every frame: a stride-`length` tiling plus
/// one final window flush with the end when the length does not divide.
pub fn covering_starts(len: usize, length: usize) -> Result<Vec<usize>> {
    let mut starts = window_starts(len, length, length)?;
    let last = *starts.last().expect("at least one window");
    if last + length < len {
        starts.push(len - length);
    }
    Ok(starts)
}

fn make_window<'a>(seq: &'a ProcessedSequence, start: usize, length: usize) -> Result<Window<'a>> {
    let grid = seq
        .grid()
        .ok_or_else(|| Error::InvalidInput(format!("sequence {} is empty", seq.id)))?;
    Ok(Window {
        parent: &seq.id,
        start,
        frames: &seq.frames[start..start + length],
        condition_map: condition_input_map(&seq.config, grid)?,
        condition_vector: condition_vector(&seq.config),
    })
}

/// Sliding windows of `length` frames every `offset` frames.
pub fn window(seq: &ProcessedSequence, length: usize, offset: usize) -> Result<Vec<Window<'_>>> {
    window_starts(seq.len(), length, offset)?
        .into_iter()
        .map(|s| make_window(seq, s, length))
        .collect()
}

/// Windows from [`covering_starts`], used at scoring time.
pub fn covering_windows(seq: &ProcessedSequence, length: usize) -> Result<Vec<Window<'_>>> {
    covering_starts(seq.len(), length)?
        .into_iter()
        .map(|s| make_window(seq, s, length))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.8, val: 0.1, test: 0.1 }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let r = [self.train, self.val, self.test];
        if r.iter().any(|x| !(x.is_finite() && *x > 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios must be positive and sum to 1, got {r:?}"
            )));
        }
        Ok(())
    }
}

/// Minimum number of normal sequences a split accepts.
pub const MIN_NORMAL_FOR_SPLIT: usize = 10;

/// Deterministically shuffle normal ids into train/val/test.
pub fn assign_normals(
    ids: &[String],
    ratios: &SplitRatios,
    seed: u64,
) -> Result<BTreeMap<String, Split>> {
    ratios.validate()?;
    if ids.len() < MIN_NORMAL_FOR_SPLIT {
        return Err(Error::InvalidInput(format!(
            "need at least {MIN_NORMAL_FOR_SPLIT} normal sequences to split, got {}",
            ids.len()
        )));
    }
    let mut sorted: Vec<&String> = ids.iter().collect();
    sorted.sort();
    sorted.dedup();
    if sorted.len() != ids.len() {
        return Err(Error::InvalidInput("duplicate sequence ids".into()));
    }
    sorted.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = sorted.len() as f64;
    let n_test = (n * ratios.test).round() as usize;
    let n_val = (n * ratios.val).round() as usize;
    Ok(sorted
        .into_iter()
        .enumerate()
        .map(|(i, id)| {
            let s = if i < n_test {
                Split::Test
            } else if i < n_test + n_val {
                Split::Val
            } else {
                Split::Train
            };
            (id.clone(), s)
        })
        .collect())
}

/// Sequence id to split. Serialized as a JSON object `{id: split}`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SplitAssignment(BTreeMap<String, Split>);

impl SplitAssignment {
    pub fn get(&self, id: &str) -> Option<Split> {
        self.0.get(id).copied()
    }

    pub fn ids(&self, which: Split) -> impl Iterator<Item = &str> + '_ {
        self.0
            .iter()
            .filter(move |(_, s)| **s == which)
            .map(|(id, _)| id.as_str())
    }

    pub fn count(&self, which: Split) -> usize {
        self.ids(which).count()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Fails if any of `ids` is unknown or assigned outside `allowed`.
    pub fn ensure_within<'a>(
        &self,
        ids: impl IntoIterator<Item = &'a str>,
        allowed: &[Split],
    ) -> Result<()> {
        for id in ids {
            match self.get(id) {
                Some(s) if allowed.contains(&s) => {}
                other => {
                    return Err(Error::InvalidInput(format!(
                        "sequence {id} is assigned {other:?}, expected one of {allowed:?}"
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").ctx(|| format!("writing {}", path.display()))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).ctx(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Split a manifest: normals are shuffled 80/10/10, anomalies go to test.
pub fn split(manifest: &[ManifestRecord], ratios: &SplitRatios, seed: u64) -> Result<SplitAssignment> {
    let normals: Vec<String> = manifest
        .iter()
        .filter(|r| r.label == Label::Normal)
        .map(|r| r.id.clone())
        .collect();
    let mut map = assign_normals(&normals, ratios, seed)?;
    for r in manifest.iter().filter(|r| r.label == Label::Anomalous) {
        if map.insert(r.id.clone(), Split::Test).is_some() {
            return Err(Error::InvalidInput(format!("duplicate sequence id {}", r.id)));
        }
    }
    Ok(SplitAssignment(map))
}
