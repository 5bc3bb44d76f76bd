//! Synthetic thermogram sequences for a 2x2 antenna array.
//!
//! The radiated field on the absorber sheet is modelled as a phased sum of
//! Gaussian kernels, one per element, centred on the four image quadrants.
//! The equilibrium temperature rise follows the quadratic thermal balance
//! `k1*E^2 + k2*E + k3 = Ts - Ta`, and each frame approaches it with a first
//! order heating curve plus Gaussian sensor noise.

mod generate;

pub use generate::{
    generate_dataset, read_manifest, read_raw_sequence, write_manifest, DatasetSpec,
    FaultDistribution, GeneratedDataset, Label, ManifestRecord, CALIBRATION_FILE, MANIFEST_FILE,
};

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{Frame, Grid};

/// Gain codes for which the power table has measurements.
pub const GAIN_CODES: [u32; 6] = [155, 160, 170, 185, 235, 255];

/// Phase settings in degrees, every 45 degrees from 0 to 180.
pub const PHASES: [u32; 5] = [0, 45, 90, 135, 180];

/// Number of array elements.
pub const ELEMENTS: usize = 4;

/// Default raw sequence length (frame 0 is the background).
pub const DEFAULT_RAW_FRAMES: usize = 100;

// Rows follow GAIN_CODES order; columns are elements 1..=4 (dBm).
const POWER_TABLE: [[f64; 4]; 6] = [
    [7.65, 7.47, 7.18, 9.40],
    [9.40, 9.38, 8.99, 11.09],
    [12.57, 12.48, 12.21, 13.92],
    [16.03, 15.85, 15.65, 17.03],
    [21.91, 21.58, 21.30, 22.15],
    [22.81, 22.41, 22.00, 22.81],
];

/// Output power in dBm of element `element_index` (1-based) driven with gain
/// code `gain`, interpolated linearly between tabulated codes.
pub fn gain_to_power(gain: u32, element_index: usize) -> Result<f64> {
    if !(1..=ELEMENTS).contains(&element_index) {
        return Err(Error::ElementIndex(element_index));
    }
    let col = element_index - 1;
    if gain < GAIN_CODES[0] || gain > GAIN_CODES[GAIN_CODES.len() - 1] {
        return Err(Error::GainOutOfRange(gain));
    }
    for i in 0..GAIN_CODES.len() - 1 {
        let (lo, hi) = (GAIN_CODES[i], GAIN_CODES[i + 1]);
        if gain == lo {
            return Ok(POWER_TABLE[i][col]);
        }
        if gain < hi {
            let frac = f64::from(gain - lo) / f64::from(hi - lo);
            let (p_lo, p_hi) = (POWER_TABLE[i][col], POWER_TABLE[i + 1][col]);
            return Ok(p_lo + frac * (p_hi - p_lo));
        }
    }
    Ok(POWER_TABLE[GAIN_CODES.len() - 1][col])
}

/// Gain code and phase (degrees) fed to one element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ElementSetting {
    pub gain: u32,
    pub phase: u32,
}

/// Input-signal configuration of the four array elements, ordered
/// top-left, top-right, bottom-left, bottom-right.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[[u32; 2]; 4]", into = "[[u32; 2]; 4]")]
pub struct ArrayConfig {
    elements: [ElementSetting; ELEMENTS],
}

impl ArrayConfig {
    pub fn new(elements: [ElementSetting; ELEMENTS]) -> Result<Self> {
        for (k, e) in elements.iter().enumerate() {
            if !GAIN_CODES.contains(&e.gain) {
                return Err(Error::Config(format!(
                    "element {} gain {} not in {:?}",
                    k + 1,
                    e.gain,
                    GAIN_CODES
                )));
            }
            if !PHASES.contains(&e.phase) {
                return Err(Error::Config(format!(
                    "element {} phase {} not in {:?}",
                    k + 1,
                    e.phase,
                    PHASES
                )));
            }
        }
        Ok(Self { elements })
    }

    pub fn from_pairs(pairs: [[u32; 2]; ELEMENTS]) -> Result<Self> {
        Self::new(pairs.map(|[gain, phase]| ElementSetting { gain, phase }))
    }

    /// The same gain and phase on every element.
    pub fn uniform(gain: u32, phase: u32) -> Result<Self> {
        Self::from_pairs([[gain, phase]; ELEMENTS])
    }

    pub fn elements(&self) -> &[ElementSetting; ELEMENTS] {
        &self.elements
    }

    pub fn pairs(&self) -> [[u32; 2]; ELEMENTS] {
        self.elements.map(|e| [e.gain, e.phase])
    }
}

impl TryFrom<[[u32; 2]; 4]> for ArrayConfig {
    type Error = Error;

    fn try_from(pairs: [[u32; 2]; 4]) -> Result<Self> {
        Self::from_pairs(pairs)
    }
}

impl From<ArrayConfig> for [[u32; 2]; 4] {
    fn from(c: ArrayConfig) -> Self {
        c.pairs()
    }
}

/// Per-element attenuation in dB; all zeros is a healthy array.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct FaultSpec {
    attenuations: [f64; ELEMENTS],
}

impl FaultSpec {
    pub fn healthy() -> Self {
        Self::default()
    }

    pub fn new(attenuations: [f64; ELEMENTS]) -> Result<Self> {
        if attenuations.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::Config(format!(
                "attenuations must be finite and non-negative, got {attenuations:?}"
            )));
        }
        Ok(Self { attenuations })
    }

    /// Attenuate a single element (1-based index) by `db`.
    pub fn single(element_index: usize, db: f64) -> Result<Self> {
        if !(1..=ELEMENTS).contains(&element_index) {
            return Err(Error::ElementIndex(element_index));
        }
        let mut att = [0.0; ELEMENTS];
        att[element_index - 1] = db;
        Self::new(att)
    }

    pub fn attenuations(&self) -> &[f64; ELEMENTS] {
        &self.attenuations
    }

    pub fn is_anomalous(&self) -> bool {
        self.attenuations.iter().any(|&a| a > 0.0)
    }
}

impl TryFrom<[f64; 4]> for FaultSpec {
    type Error = Error;

    fn try_from(a: [f64; 4]) -> Result<Self> {
        Self::new(a)
    }
}

impl From<FaultSpec> for [f64; 4] {
    fn from(f: FaultSpec) -> Self {
        f.attenuations
    }
}

/// Coefficients of the thermal balance and the sensor model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThermalConstants {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    /// Heating time constant in frame intervals.
    pub tau: f64,
    /// Ambient level in sensor counts.
    pub ambient: f64,
    /// Per-pixel sensor noise SD in counts.
    pub noise_sd: f64,
}

impl Default for ThermalConstants {
    fn default() -> Self {
        Self {
            k1: 1.0,
            k2: 0.1,
            k3: 0.0,
            tau: 20.0,
            ambient: 7000.0,
            noise_sd: 15.0,
        }
    }
}

impl ThermalConstants {
    pub fn validate(&self) -> Result<()> {
        let all = [self.k1, self.k2, self.k3, self.tau, self.ambient, self.noise_sd];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("thermal constants must be finite".into()));
        }
        if self.k1 <= 0.0 {
            return Err(Error::Config(format!("k1 must be > 0, got {}", self.k1)));
        }
        if self.tau <= 0.0 {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        if self.noise_sd < 0.0 {
            return Err(Error::Config(format!("noise_sd must be >= 0, got {}", self.noise_sd)));
        }
        if self.ambient < 0.0 {
            return Err(Error::Config(format!("ambient must be >= 0, got {}", self.ambient)));
        }
        Ok(())
    }
}

/// Rendering geometry shared by every sequence of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderSettings {
    pub grid: Grid,
    /// Number of raw frames including the background frame.
    pub frames: usize,
    /// Gaussian kernel width in pixels; `None` means `height / 4`.
    pub kernel_width: Option<f64>,
    pub constants: ThermalConstants,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            grid: Grid::default(),
            frames: DEFAULT_RAW_FRAMES,
            kernel_width: None,
            constants: ThermalConstants::default(),
        }
    }
}

impl RenderSettings {
    pub fn validate(&self) -> Result<()> {
        check_grid(self.grid)?;
        if self.frames < 2 {
            return Err(Error::Config(format!(
                "need at least 2 raw frames, got {}",
                self.frames
            )));
        }
        if let Some(w) = self.kernel_width {
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::Config(format!("kernel_width must be > 0, got {w}")));
            }
        }
        self.constants.validate()
    }

    pub fn kernel_width(&self) -> f64 {
        self.kernel_width
            .unwrap_or(self.grid.height as f64 / 4.0)
    }
}

fn check_grid(grid: Grid) -> Result<()> {
    if grid.height < 8 || grid.width < 8 {
        return Err(Error::Config(format!(
            "grid must be at least 8x8, got {}x{}",
            grid.height, grid.width
        )));
    }
    Ok(())
}

/// Pixel coordinates (row, col) of element `k` (0-based): the centre of its
/// image quadrant.
pub fn element_center(grid: Grid, k: usize) -> (f64, f64) {
    let row = if k < 2 { grid.height / 4 } else { 3 * grid.height / 4 };
    let col = if k % 2 == 0 { grid.width / 4 } else { 3 * grid.width / 4 };
    (row as f64, col as f64)
}

/// Field magnitude for explicit element amplitudes and phases.
pub fn superpose(
    amplitudes: [f64; ELEMENTS],
    phases_deg: [f64; ELEMENTS],
    grid: Grid,
    kernel_width: f64,
) -> Frame<f64> {
    let centers: Vec<_> = (0..ELEMENTS).map(|k| element_center(grid, k)).collect();
    let phasors: Vec<(f64, f64)> = (0..ELEMENTS)
        .map(|k| {
            let phi = phases_deg[k] * PI / 180.0;
            (amplitudes[k] * phi.cos(), amplitudes[k] * phi.sin())
        })
        .collect();
    let denom = 2.0 * kernel_width * kernel_width;
    let mut field = Frame::filled(grid, 0.0);
    for row in 0..grid.height {
        for col in 0..grid.width {
            let (mut re, mut im) = (0.0, 0.0);
            for k in 0..ELEMENTS {
                let dr = row as f64 - centers[k].0;
                let dc = col as f64 - centers[k].1;
                let g = (-(dr * dr + dc * dc) / denom).exp();
                re += phasors[k].0 * g;
                im += phasors[k].1 * g;
            }
            field.set(row, col, re.hypot(im));
        }
    }
    field
}

/// Element amplitudes `10^((P_k - A_k)/20)` for a configuration and fault.
pub fn element_amplitudes(config: &ArrayConfig, fault: &FaultSpec) -> Result<[f64; ELEMENTS]> {
    let mut amps = [0.0; ELEMENTS];
    for (k, e) in config.elements().iter().enumerate() {
        let p = gain_to_power(e.gain, k + 1)?;
        amps[k] = 10f64.powf((p - fault.attenuations()[k]) / 20.0);
    }
    Ok(amps)
}

/// Field magnitude map produced by the array on the absorber sheet.
pub fn synthesize_field(
    config: &ArrayConfig,
    fault: &FaultSpec,
    grid: Grid,
    kernel_width: f64,
) -> Result<Frame<f64>> {
    check_grid(grid)?;
    let amps = element_amplitudes(config, fault)?;
    let phases = config.elements().map(|e| f64::from(e.phase));
    Ok(superpose(amps, phases, grid, kernel_width))
}

/// Equilibrium temperature rise `k1*E^2 + k2*E + k3` per pixel.
pub fn equilibrium_delta(field: &Frame<f64>, constants: &ThermalConstants) -> Frame<f64> {
    field.map(|e| constants.k1 * e * e + constants.k2 * e + constants.k3)
}

/// A rendered raw sequence as the camera would deliver it.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSequence {
    pub frames: Vec<Frame<u16>>,
    pub config: ArrayConfig,
    pub fault: FaultSpec,
    pub seed: u64,
}

fn quantize(v: f64) -> u16 {
    v.round().clamp(0.0, 65535.0) as u16
}

/// Render a full raw sequence. Identical arguments give bit-identical frames.
pub fn render_sequence(
    config: &ArrayConfig,
    fault: &FaultSpec,
    settings: &RenderSettings,
    seed: u64,
) -> Result<RawSequence> {
    settings.validate()?;
    let c = &settings.constants;
    let field = synthesize_field(config, fault, settings.grid, settings.kernel_width())?;
    let delta = equilibrium_delta(&field, c);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, c.noise_sd).map_err(|e| Error::Config(e.to_string()))?;

    let frames = (0..settings.frames)
        .map(|t| {
            let heat = 1.0 - (-(t as f64) / c.tau).exp();
            let data = delta
                .data
                .iter()
                .map(|d| {
                    let n = if c.noise_sd > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    quantize(c.ambient + d * heat + n)
                })
                .collect();
            Frame { grid: settings.grid, data }
        })
        .collect();

    Ok(RawSequence {
        frames,
        config: *config,
        fault: *fault,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn power_table_lookup() {
        assert_eq!(gain_to_power(255, 1).unwrap(), 22.81);
        assert_eq!(gain_to_power(155, 4).unwrap(), 9.40);
        assert_eq!(gain_to_power(235, 3).unwrap(), 21.30);
        assert_abs_diff_eq!(gain_to_power(165, 1).unwrap(), 10.985, epsilon = 1e-12);
        assert!(matches!(gain_to_power(150, 1), Err(Error::GainOutOfRange(150))));
        assert!(matches!(gain_to_power(256, 2), Err(Error::GainOutOfRange(256))));
        assert!(matches!(gain_to_power(200, 5), Err(Error::ElementIndex(5))));
    }

    #[test]
    fn zero_amplitudes_give_zero_field() {
        let f = superpose([0.0; 4], [0.0, 45.0, 90.0, 180.0], Grid::new(16, 16), 4.0);
        assert!(f.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn opposite_phases_cancel_at_midpoint() {
        let grid = Grid::new(32, 32);
        let f = superpose([3.0, 3.0, 0.0, 0.0], [0.0, 180.0, 0.0, 0.0], grid, 8.0);
        // elements 1 and 2 sit at (8, 8) and (8, 24)
        assert!(f.get(8, 16) < 1e-12);
        assert!(f.get(8, 8) > 2.0);
    }

    #[test]
    fn single_element_peaks_at_its_center() {
        let grid = Grid::new(32, 32);
        for k in 0..4 {
            let mut amps = [0.0; 4];
            amps[k] = 5.5;
            let f = superpose(amps, [0.0; 4], grid, grid.height as f64 / 4.0);
            let (r, c) = element_center(grid, k);
            let peak = f.data.iter().cloned().fold(0.0, f64::max);
            assert_abs_diff_eq!(f.get(r as usize, c as usize), 5.5, epsilon = 1e-12);
            assert_abs_diff_eq!(peak, 5.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn equilibrium_polynomial() {
        let grid = Grid::new(8, 8);
        let k = |k1, k2, k3| ThermalConstants { k1, k2, k3, ..Default::default() };
        let two = Frame::filled(grid, 2.0);
        assert_eq!(equilibrium_delta(&two, &k(1.0, 0.0, 0.0)).get(0, 0), 4.0);
        let zero = Frame::filled(grid, 0.0);
        assert_eq!(equilibrium_delta(&zero, &k(1.0, 0.3, 0.7)).get(3, 3), 0.7);
        let one = Frame::filled(grid, 1.0);
        assert_abs_diff_eq!(equilibrium_delta(&one, &k(0.5, 1.0, 0.1)).get(1, 2), 1.6, epsilon = 1e-12);
    }

    fn quiet() -> RenderSettings {
        RenderSettings {
            constants: ThermalConstants { noise_sd: 0.0, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn background_frame_is_ambient() {
        let cfg = ArrayConfig::from_pairs([[255, 0], [185, 45], [160, 90], [235, 180]]).unwrap();
        let seq = render_sequence(&cfg, &FaultSpec::healthy(), &quiet(), 3).unwrap();
        assert_eq!(seq.frames.len(), DEFAULT_RAW_FRAMES);
        assert!(seq.frames[0].data.iter().all(|&v| v == 7000));
    }

    #[test]
    fn late_frames_reach_equilibrium() {
        let cfg = ArrayConfig::uniform(255, 0).unwrap();
        let mut s = quiet();
        s.frames = 250;
        let seq = render_sequence(&cfg, &FaultSpec::healthy(), &s, 0).unwrap();
        let field = synthesize_field(&cfg, &FaultSpec::healthy(), s.grid, s.kernel_width()).unwrap();
        let eq = equilibrium_delta(&field, &s.constants);
        let last = seq.frames.last().unwrap();
        for (v, d) in last.data.iter().zip(&eq.data) {
            assert!((f64::from(*v) - (7000.0 + d)).abs() <= 1.0);
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let cfg = ArrayConfig::from_pairs([[170, 45], [155, 135], [255, 0], [185, 90]]).unwrap();
        let fault = FaultSpec::single(2, 7.5).unwrap();
        let s = RenderSettings::default();
        let a = render_sequence(&cfg, &fault, &s, 99).unwrap();
        let b = render_sequence(&cfg, &fault, &s, 99).unwrap();
        assert_eq!(a, b);
        let c = render_sequence(&cfg, &fault, &s, 100).unwrap();
        assert_ne!(a.frames, c.frames);
    }

    #[test]
    fn invalid_settings_are_rejected() {
        let cfg = ArrayConfig::uniform(155, 0).unwrap();
        let mut s = RenderSettings::default();
        s.constants.tau = 0.0;
        assert!(render_sequence(&cfg, &FaultSpec::healthy(), &s, 0).is_err());
        let mut s = RenderSettings::default();
        s.grid = Grid::new(4, 32);
        assert!(render_sequence(&cfg, &FaultSpec::healthy(), &s, 0).is_err());
    }

    #[test]
    fn config_rejects_values_outside_sets() {
        assert!(ArrayConfig::uniform(150, 0).is_err());
        assert!(ArrayConfig::uniform(155, 30).is_err());
        assert!(FaultSpec::new([0.0, -1.0, 0.0, 0.0]).is_err());
        assert!(!FaultSpec::healthy().is_anomalous());
        assert!(FaultSpec::single(3, 6.0).unwrap().is_anomalous());
    }
}
