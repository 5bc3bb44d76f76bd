use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{render_sequence, ArrayConfig, ElementSetting, FaultSpec, RawSequence, RenderSettings};
use super::{ELEMENTS, GAIN_CODES, PHASES};
use crate::dataset::{assign_normals, Split, SplitRatios};
use crate::error::{Error, IoContext, Result};
use crate::frame::{Frame, Grid};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const CALIBRATION_FILE: &str = "calibration.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Anomalous,
}

/// One line of a dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub config: ArrayConfig,
    pub fault: FaultSpec,
    pub label: Label,
    pub seed: u64,
    /// Frame directory relative to the dataset root.
    pub path: String,
}

/// Attenuation applied to one uniformly chosen element of a faulty array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaultDistribution {
    pub min_db: f64,
    pub max_db: f64,
}

impl Default for FaultDistribution {
    fn default() -> Self {
        Self { min_db: 6.0, max_db: 12.0 }
    }
}

/// What to generate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    /// Healthy sequences; these are split into train/val/test.
    pub normal: usize,
    /// Faulty sequences reusing the configurations of the normal test split.
    pub anomalous: usize,
    /// Faulty sequences reusing validation configurations, used only to
    /// calibrate detector thresholds. Written to a separate manifest.
    pub calibration: usize,
    pub gains: Vec<u32>,
    pub phases: Vec<u32>,
    pub fault: FaultDistribution,
    pub ratios: SplitRatios,
    pub seed: u64,
    pub render: RenderSettings,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            normal: 360,
            anomalous: 36,
            calibration: 36,
            gains: GAIN_CODES.to_vec(),
            phases: PHASES.to_vec(),
            fault: FaultDistribution::default(),
            ratios: SplitRatios::default(),
            seed: 0,
            render: RenderSettings::default(),
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.normal == 0 {
            return Err(Error::Config("dataset.normal must be > 0".into()));
        }
        if self.gains.is_empty() || self.phases.is_empty() {
            return Err(Error::Config("gain and phase value sets must be non-empty".into()));
        }
        if let Some(g) = self.gains.iter().find(|g| !GAIN_CODES.contains(g)) {
            return Err(Error::Config(format!("dataset.gains: {g} not in {GAIN_CODES:?}")));
        }
        if let Some(p) = self.phases.iter().find(|p| !PHASES.contains(p)) {
            return Err(Error::Config(format!("dataset.phases: {p} not in {PHASES:?}")));
        }
        let f = &self.fault;
        if !(f.min_db > 0.0 && f.max_db >= f.min_db && f.max_db.is_finite()) {
            return Err(Error::Config(format!(
                "dataset.fault: need 0 < min_db <= max_db, got [{}, {}]",
                f.min_db, f.max_db
            )));
        }
        self.ratios.validate()?;
        self.render.validate()
    }
}

/// Manifests of a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDataset {
    pub records: Vec<ManifestRecord>,
    pub calibration: Vec<ManifestRecord>,
}

fn draw_config(rng: &mut ChaCha8Rng, gains: &[u32], phases: &[u32]) -> ArrayConfig {
    let elements = [(); ELEMENTS].map(|_| ElementSetting {
        gain: *gains.choose(rng).expect("non-empty"),
        phase: *phases.choose(rng).expect("non-empty"),
    });
    ArrayConfig::new(elements).expect("value sets validated")
}

fn draw_fault(rng: &mut ChaCha8Rng, dist: &FaultDistribution) -> FaultSpec {
    let element = rng.gen_range(1..=ELEMENTS);
    let db = if dist.max_db > dist.min_db {
        rng.gen_range(dist.min_db..dist.max_db)
    } else {
        dist.min_db
    };
    FaultSpec::single(element, db).expect("valid element")
}

/// Plan every record without rendering anything.
pub(crate) fn plan_dataset(spec: &DatasetSpec) -> Result<GeneratedDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut records: Vec<ManifestRecord> = (0..spec.normal)
        .map(|i| {
            let id = format!("n{i:05}");
            ManifestRecord {
                config: draw_config(&mut rng, &spec.gains, &spec.phases),
                fault: FaultSpec::healthy(),
                label: Label::Normal,
                seed: rng.gen(),
                path: format!("raw/{id}"),
                id,
            }
        })
        .collect();

    let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
    let assignment = assign_normals(&ids, &spec.ratios, spec.seed)?;
    let pool = |which: Split| -> Vec<ArrayConfig> {
        records
            .iter()
            .filter(|r| assignment[&r.id] == which)
            .map(|r| r.config)
            .collect()
    };
    let test_pool = pool(Split::Test);
    let val_pool = pool(Split::Val);

    let mut faulty = |prefix: char, count: usize, configs: &[ArrayConfig]| -> Result<Vec<ManifestRecord>> {
        if count > 0 && configs.is_empty() {
            return Err(Error::Config(format!(
                "cannot draw {count} '{prefix}' anomalies: empty configuration pool"
            )));
        }
        Ok((0..count)
            .map(|i| {
                let id = format!("{prefix}{i:05}");
                ManifestRecord {
                    config: configs[i % configs.len()],
                    fault: draw_fault(&mut rng, &spec.fault),
                    label: Label::Anomalous,
                    seed: rng.gen(),
                    path: format!("raw/{id}"),
                    id,
                }
            })
            .collect())
    };
    let anomalous = faulty('a', spec.anomalous, &test_pool)?;
    let calibration = faulty('c', spec.calibration, &val_pool)?;
    records.extend(anomalous);
    Ok(GeneratedDataset { records, calibration })
}

/// Render every planned sequence to `out_dir` as 16-bit TIFF frames and
/// write the manifests.
pub fn generate_dataset(spec: &DatasetSpec, out_dir: &Path) -> Result<GeneratedDataset> {
    let plan = plan_dataset(spec)?;
    fs::create_dir_all(out_dir).ctx(|| format!("creating {}", out_dir.display()))?;
    for rec in plan.records.iter().chain(&plan.calibration) {
        let seq = render_sequence(&rec.config, &rec.fault, &spec.render, rec.seed)?;
        write_raw_frames(&out_dir.join(&rec.path), &seq)?;
    }
    write_manifest(&out_dir.join(MANIFEST_FILE), &plan.records)?;
    write_manifest(&out_dir.join(CALIBRATION_FILE), &plan.calibration)?;
    Ok(plan)
}

fn frame_file_name(t: usize, total: usize) -> String {
    let digits = total.saturating_sub(1).to_string().len().max(3);
    format!("frame_{t:0digits$}.tif")
}

fn write_raw_frames(dir: &Path, seq: &RawSequence) -> Result<()> {
    fs::create_dir_all(dir).ctx(|| format!("creating {}", dir.display()))?;
    for (t, frame) in seq.frames.iter().enumerate() {
        let path = dir.join(frame_file_name(t, seq.frames.len()));
        let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(
            frame.grid.width as u32,
            frame.grid.height as u32,
            frame.data.clone(),
        )
        .expect("buffer matches grid");
        img.save_with_format(&path, image::ImageFormat::Tiff)
            .map_err(|source| Error::Image { path: path.clone(), source })?;
    }
    Ok(())
}

/// Load the raw TIFF frames of `record` from a dataset rooted at `root`.
pub fn read_raw_sequence(root: &Path, record: &ManifestRecord) -> Result<RawSequence> {
    let dir = root.join(&record.path);
    let mut files: Vec<PathBuf> = fs::read_dir(&dir)
        .ctx(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "tif"))
        .collect();
    files.sort();
    let frames = files
        .iter()
        .map(|path| {
            let img = image::open(path)
                .map_err(|source| Error::Image { path: path.clone(), source })?
                .into_luma16();
            let grid = Grid::new(img.height() as usize, img.width() as usize);
            Frame::from_vec(grid, img.into_raw())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RawSequence {
        frames,
        config: record.config,
        fault: record.fault,
        seed: record.seed,
    })
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let file = fs::File::create(path).ctx(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").ctx(|| format!("writing {}", path.display()))?;
    }
    w.flush().ctx(|| format!("writing {}", path.display()))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let file = fs::File::open(path).ctx(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.ctx(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
