//! Conditional CNN-LSTM encoder-decoder: parameters, forward and backward.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ops::{self, ConvShape};
use super::real::{gemm, Real};
use super::{LatentGaussian, ModelVariant, Reconstruction, VariantKind, LOGVAR_MAX, LOGVAR_MIN};
use crate::dataset::{Window, CONDITION_DIM};
use crate::error::{Error, Result};
use crate::frame::Grid;

/// Number of condition channels concatenated to every input frame.
pub const CONDITION_CHANNELS: usize = 2;

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Architecture {
    pub height: usize,
    pub width: usize,
    /// Output channels of the three encoder convolutions; the decoder mirrors them.
    pub channels: [usize; 3],
    pub hidden: usize,
    pub latent: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            channels: [16, 32, 64],
            hidden: 128,
            latent: 8,
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.height % 8 != 0 || self.width % 8 != 0 {
            return Err(Error::Config(format!(
                "frame size {}x{} must be a positive multiple of 8",
                self.height, self.width
            )));
        }
        if self.channels.contains(&0) || self.hidden == 0 || self.latent == 0 {
            return Err(Error::Config("channel, hidden and latent sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Grid {
        Grid::new(self.height, self.width)
    }

    /// Spatial size after the three stride-2 convolutions.
    pub fn code_hw(&self) -> (usize, usize) {
        (self.height / 8, self.width / 8)
    }

    pub fn feature_dim(&self) -> usize {
        let (h, w) = self.code_hw();
        self.channels[2] * h * w
    }

    /// `[H, W]` at the input of encoder layer `i` (0..3).
    fn level_hw(&self, i: usize) -> (usize, usize) {
        (self.height >> i, self.width >> i)
    }
}

/// A named dense parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    fn uniform(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut t = Self::zeros(shape);
        for v in &mut t.data {
            *v = T::of(rng.gen_range(-bound..bound));
        }
        t
    }
}

/// All trainable parameters of one model, plus its variant and architecture.
/// Also used, zero-initialized, as the gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters<T> {
    pub variant: ModelVariant,
    pub arch: Architecture,
    conv_w: [Tensor<T>; 3],
    conv_b: [Tensor<T>; 3],
    lstm_w_ih: Tensor<T>,
    lstm_w_hh: Tensor<T>,
    lstm_b: Tensor<T>,
    mean_w: Tensor<T>,
    mean_b: Tensor<T>,
    logvar_w: Option<Tensor<T>>,
    logvar_b: Option<Tensor<T>>,
    fc_w: Tensor<T>,
    fc_b: Tensor<T>,
    deconv_w: [Tensor<T>; 3],
    deconv_b: [Tensor<T>; 3],
    out_logvar_w: Option<Tensor<T>>,
    out_logvar_b: Option<Tensor<T>>,
}

const CONV_NAMES: [(&str, &str); 3] = [
    ("enc.conv1.weight", "enc.conv1.bias"),
    ("enc.conv2.weight", "enc.conv2.bias"),
    ("enc.conv3.weight", "enc.conv3.bias"),
];
const DECONV_NAMES: [(&str, &str); 3] = [
    ("dec.deconv1.weight", "dec.deconv1.bias"),
    ("dec.deconv2.weight", "dec.deconv2.bias"),
    ("dec.mean.weight", "dec.mean.bias"),
];

impl<T: Real> ModelParameters<T> {
    /// Randomly initialized parameters.
    pub fn new(variant: ModelVariant, arch: Architecture, seed: u64) -> Result<Self> {
        variant.validate()?;
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let taps = ops::KERNEL * ops::KERNEL;
        let [c1, c2, c3] = arch.channels;
        let cin = [1 + CONDITION_CHANNELS, c1, c2];
        let (hd, lat, f) = (arch.hidden, arch.latent, arch.feature_dim());
        let he = |fan_in: usize| (6.0 / fan_in as f64).sqrt();
        let lecun = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();

        let conv_w = [0, 1, 2].map(|i| {
            let cout = arch.channels[i];
            Tensor::uniform(&[cout, cin[i] * taps], he(cin[i] * taps), &mut rng)
        });
        let conv_b = [0, 1, 2].map(|i| Tensor::zeros(&[arch.channels[i]]));
        let lstm_w_ih = Tensor::uniform(&[4 * hd, f], lecun(f), &mut rng);
        let lstm_w_hh = Tensor::uniform(&[4 * hd, hd], lecun(hd), &mut rng);
        let mut lstm_b = Tensor::zeros(&[4 * hd]);
        for v in &mut lstm_b.data[hd..2 * hd] {
            *v = T::one();
        }
        let mean_w = Tensor::uniform(&[lat, hd], lecun(hd), &mut rng);
        let mean_b = Tensor::zeros(&[lat]);
        let stochastic = variant.kind != VariantKind::Ae;
        let logvar_w = stochastic.then(|| Tensor::uniform(&[lat, hd], lecun(hd), &mut rng));
        let logvar_b = stochastic.then(|| Tensor::zeros(&[lat]));
        let dec_in = lat + CONDITION_DIM;
        let fc_w = Tensor::uniform(&[f, dec_in], he(dec_in), &mut rng);
        let fc_b = Tensor::zeros(&[f]);
        // deconv i maps channels dec_in[i] -> dec_out[i]; each output pixel sees about cin*9/4 inputs
        let dec_cin = [c3, c2, c1];
        let dec_cout = [c2, c1, 1];
        let deconv_w = [0, 1, 2].map(|i| {
            let fan = (dec_cin[i] * taps).div_ceil(4);
            Tensor::uniform(&[dec_cin[i], dec_cout[i] * taps], he(fan), &mut rng)
        });
        let deconv_b = [0, 1, 2].map(|i| Tensor::zeros(&[dec_cout[i]]));
        let pcvae = variant.kind == VariantKind::Pcvae;
        let out_logvar_w = pcvae.then(|| Tensor::uniform(&[c1, taps], lecun((c1 * taps).div_ceil(4)), &mut rng));
        let out_logvar_b = pcvae.then(|| Tensor::zeros(&[1]));

        Ok(Self {
            variant,
            arch,
            conv_w,
            conv_b,
            lstm_w_ih,
            lstm_w_hh,
            lstm_b,
            mean_w,
            mean_b,
            logvar_w,
            logvar_b,
            fc_w,
            fc_b,
            deconv_w,
            deconv_b,
            out_logvar_w,
            out_logvar_b,
        })
    }

    /// Same structure with every entry zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v = T::zero());
        }
        z
    }

    /// Named parameter arrays in a fixed order.
    pub fn tensors(&self) -> Vec<(&'static str, &Tensor<T>)> {
        let mut out = Vec::new();
        for i in 0..3 {
            out.push((CONV_NAMES[i].0, &self.conv_w[i]));
            out.push((CONV_NAMES[i].1, &self.conv_b[i]));
        }
        out.push(("enc.lstm.w_ih", &self.lstm_w_ih));
        out.push(("enc.lstm.w_hh", &self.lstm_w_hh));
        out.push(("enc.lstm.bias", &self.lstm_b));
        out.push(("enc.mean.weight", &self.mean_w));
        out.push(("enc.mean.bias", &self.mean_b));
        if let (Some(w), Some(b)) = (&self.logvar_w, &self.logvar_b) {
            out.push(("enc.logvar.weight", w));
            out.push(("enc.logvar.bias", b));
        }
        out.push(("dec.fc.weight", &self.fc_w));
        out.push(("dec.fc.bias", &self.fc_b));
        for i in 0..3 {
            out.push((DECONV_NAMES[i].0, &self.deconv_w[i]));
            out.push((DECONV_NAMES[i].1, &self.deconv_b[i]));
        }
        if let (Some(w), Some(b)) = (&self.out_logvar_w, &self.out_logvar_b) {
            out.push(("dec.logvar.weight", w));
            out.push(("dec.logvar.bias", b));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for (i, (w, b)) in self.conv_w.iter_mut().zip(self.conv_b.iter_mut()).enumerate() {
            out.push((CONV_NAMES[i].0, w));
            out.push((CONV_NAMES[i].1, b));
        }
        out.push(("enc.lstm.w_ih", &mut self.lstm_w_ih));
        out.push(("enc.lstm.w_hh", &mut self.lstm_w_hh));
        out.push(("enc.lstm.bias", &mut self.lstm_b));
        out.push(("enc.mean.weight", &mut self.mean_w));
        out.push(("enc.mean.bias", &mut self.mean_b));
        if let (Some(w), Some(b)) = (self.logvar_w.as_mut(), self.logvar_b.as_mut()) {
            out.push(("enc.logvar.weight", w));
            out.push(("enc.logvar.bias", b));
        }
        out.push(("dec.fc.weight", &mut self.fc_w));
        out.push(("dec.fc.bias", &mut self.fc_b));
        for (i, (w, b)) in self.deconv_w.iter_mut().zip(self.deconv_b.iter_mut()).enumerate() {
            out.push((DECONV_NAMES[i].0, w));
            out.push((DECONV_NAMES[i].1, b));
        }
        if let (Some(w), Some(b)) = (self.out_logvar_w.as_mut(), self.out_logvar_b.as_mut()) {
            out.push(("dec.logvar.weight", w));
            out.push(("dec.logvar.bias", b));
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.data.len()).sum()
    }

    /// Convert every parameter to another element type.
    pub fn cast<U: Real>(&self) -> ModelParameters<U> {
        let c = |t: &Tensor<T>| Tensor {
            shape: t.shape.clone(),
            data: t.data.iter().map(|v| U::of(v.as_f64())).collect(),
        };
        ModelParameters {
            variant: self.variant,
            arch: self.arch,
            conv_w: [0, 1, 2].map(|i| c(&self.conv_w[i])),
            conv_b: [0, 1, 2].map(|i| c(&self.conv_b[i])),
            lstm_w_ih: c(&self.lstm_w_ih),
            lstm_w_hh: c(&self.lstm_w_hh),
            lstm_b: c(&self.lstm_b),
            mean_w: c(&self.mean_w),
            mean_b: c(&self.mean_b),
            logvar_w: self.logvar_w.as_ref().map(c),
            logvar_b: self.logvar_b.as_ref().map(c),
            fc_w: c(&self.fc_w),
            fc_b: c(&self.fc_b),
            deconv_w: [0, 1, 2].map(|i| c(&self.deconv_w[i])),
            deconv_b: [0, 1, 2].map(|i| c(&self.deconv_b[i])),
            out_logvar_w: self.out_logvar_w.as_ref().map(c),
            out_logvar_b: self.out_logvar_b.as_ref().map(c),
        }
    }
}

/// Model input for `windows x steps` frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub windows: usize,
    pub steps: usize,
    pub grid: Grid,
    /// `[B, T, H, W]`
    pub frames: Vec<T>,
    /// `[B, 2, H, W]`
    pub condition_map: Vec<T>,
    /// `[B, 8]`
    pub condition_vector: Vec<T>,
}

impl<T: Real> Batch<T> {
    pub fn from_windows<'w>(windows: impl IntoIterator<Item = &'w Window<'w>>) -> Result<Self> {
        let mut batch: Option<Batch<T>> = None;
        for w in windows {
            let grid = w
                .frames
                .first()
                .ok_or_else(|| Error::Shape("empty window".into()))?
                .grid;
            let b = batch.get_or_insert_with(|| Batch {
                windows: 0,
                steps: w.len(),
                grid,
                frames: Vec::new(),
                condition_map: Vec::new(),
                condition_vector: Vec::new(),
            });
            if w.len() != b.steps || grid != b.grid || w.frames.iter().any(|f| f.grid != grid) {
                return Err(Error::Shape("windows in a batch must share length and frame size".into()));
            }
            b.windows += 1;
            for f in w.frames {
                b.frames.extend(f.data.iter().map(|&v| T::of(f64::from(v))));
            }
            for m in &w.condition_map {
                b.condition_map.extend(m.data.iter().map(|&v| T::of(f64::from(v))));
            }
            b.condition_vector
                .extend(w.condition_vector.iter().map(|&v| T::of(f64::from(v))));
        }
        batch.ok_or_else(|| Error::InvalidInput("empty batch".into()))
    }

    /// Total number of frames `B * T`.
    pub fn frames_len(&self) -> usize {
        self.windows * self.steps
    }

    /// Frame `n = b * T + t` as a slice.
    pub fn frame(&self, n: usize) -> &[T] {
        let p = self.grid.pixels();
        &self.frames[n * p..(n + 1) * p]
    }
}

/// Where the latent sample comes from.
#[derive(Debug, Clone, Copy)]
pub enum Sampling<'a, T> {
    /// `z = mean`, the deterministic pass used for validation and scoring.
    Mean,
    /// `z = mean + exp(logvar / 2) * eps` with `eps` laid out `[B*T, latent]`.
    Noise(&'a [T]),
}

/// Everything a backward pass needs from the forward pass.
#[derive(Debug, Clone)]
pub struct Forward<T> {
    pub latent: LatentGaussian<T>,
    pub recon: Reconstruction<T>,
    pub z: Vec<T>,
    pub windows: usize,
    pub steps: usize,
    n: usize,
    enc_shapes: [ConvShape; 3],
    enc_cols: [Vec<T>; 3],
    enc_act: [Vec<T>; 3],
    features: Vec<T>,
    gates: Vec<T>,
    cells: Vec<T>,
    tanh_cells: Vec<T>,
    hidden: Vec<T>,
    logvar_raw: Option<Vec<T>>,
    eps: Option<Vec<T>>,
    dec: DecoderCache<T>,
}

#[derive(Debug, Clone)]
struct DecoderCache<T> {
    input: Vec<T>,
    fc_act: Vec<T>,
    fc_cn: Vec<T>,
    d1: Vec<T>,
    d2: Vec<T>,
    logvar_raw: Option<Vec<T>>,
}

/// Loss gradients with respect to the model outputs.
#[derive(Debug, Clone)]
pub struct OutputGrads<T> {
    /// `[N, H*W]`, with respect to the reconstructed mean (after the sigmoid).
    pub recon_mean: Vec<T>,
    /// `[N, H*W]`, with respect to the clamped observation log-variance.
    pub recon_log_variance: Option<Vec<T>>,
    /// `[N, latent]`, direct (KL) gradient on the posterior mean.
    pub latent_mean: Vec<T>,
    /// `[N, latent]`, direct (KL) gradient on the clamped posterior log-variance.
    pub latent_log_variance: Vec<T>,
}

fn clamp_logvar<T: Real>(v: T) -> T {
    v.max(T::of(LOGVAR_MIN)).min(T::of(LOGVAR_MAX))
}

fn clamp_mask<T: Real>(raw: T) -> bool {
    raw > T::of(LOGVAR_MIN) && raw < T::of(LOGVAR_MAX)
}

fn sigmoid<T: Real>(x: T) -> T {
    ops::sigmoid(x)
}

impl<T: Real> ModelParameters<T> {
    fn check_batch(&self, batch: &Batch<T>) -> Result<()> {
        if batch.grid != self.arch.grid() {
            return Err(Error::Shape(format!(
                "batch frames are {}x{}, model expects {}x{}",
                batch.grid.height, batch.grid.width, self.arch.height, self.arch.width
            )));
        }
        let n = batch.frames_len();
        let p = batch.grid.pixels();
        if batch.frames.len() != n * p
            || batch.condition_map.len() != batch.windows * CONDITION_CHANNELS * p
            || batch.condition_vector.len() != batch.windows * CONDITION_DIM
        {
            return Err(Error::Shape("batch buffers do not match their declared sizes".into()));
        }
        Ok(())
    }

    /// Full pass: encoder, latent sample, decoder.
    pub fn forward(&self, batch: &Batch<T>, sampling: Sampling<'_, T>) -> Result<Forward<T>> {
        self.check_batch(batch)?;
        let arch = &self.arch;
        let (b, steps) = (batch.windows, batch.steps);
        let n = b * steps;
        let p = batch.grid.pixels();
        let (hd, lat) = (arch.hidden, arch.latent);

        // [3, N, H, W]: frame channel then the two condition channels
        let mut input = vec![T::zero(); (1 + CONDITION_CHANNELS) * n * p];
        input[..n * p].copy_from_slice(&batch.frames);
        for ch in 0..CONDITION_CHANNELS {
            for bi in 0..b {
                let src = &batch.condition_map[(bi * CONDITION_CHANNELS + ch) * p..][..p];
                for t in 0..steps {
                    let dst = ((1 + ch) * n + bi * steps + t) * p;
                    input[dst..dst + p].copy_from_slice(src);
                }
            }
        }

        let cin = [1 + CONDITION_CHANNELS, arch.channels[0], arch.channels[1]];
        let mut enc_shapes = [ConvShape { channels: 0, n, height: 0, width: 0 }; 3];
        let mut enc_cols: [Vec<T>; 3] = Default::default();
        let mut enc_act: [Vec<T>; 3] = Default::default();
        let mut x = input;
        for i in 0..3 {
            let (h, w) = arch.level_hw(i);
            enc_shapes[i] = ConvShape { channels: cin[i], n, height: h, width: w };
            let (mut y, cols) = ops::conv_forward(&x, enc_shapes[i], &self.conv_w[i].data, &self.conv_b[i].data);
            ops::relu_inplace(&mut y);
            enc_cols[i] = cols;
            enc_act[i] = y.clone();
            x = y;
        }
        let (ch, cw) = arch.code_hw();
        let features = ops::channel_to_batch_major(&x, n, arch.channels[2], ch * cw);

        // LSTM, state reset at the start of every window
        let xg = ops::linear_forward(&features, n, &self.lstm_w_ih.data, &self.lstm_b.data);
        let mut gates = vec![T::zero(); n * 4 * hd];
        let mut cells = vec![T::zero(); n * hd];
        let mut tanh_cells = vec![T::zero(); n * hd];
        let mut hidden = vec![T::zero(); n * hd];
        let mut h_prev = vec![T::zero(); b * hd];
        let mut c_prev = vec![T::zero(); b * hd];
        let mut rec = vec![T::zero(); b * 4 * hd];
        for t in 0..steps {
            gemm(false, true, b, 4 * hd, hd, T::one(), &h_prev, &self.lstm_w_hh.data, T::zero(), &mut rec);
            for bi in 0..b {
                let row = bi * steps + t;
                let pre = &rec[bi * 4 * hd..][..4 * hd];
                let xr = &xg[row * 4 * hd..][..4 * hd];
                let g = &mut gates[row * 4 * hd..][..4 * hd];
                for j in 0..hd {
                    let i_g = sigmoid(pre[j] + xr[j]);
                    let f_g = sigmoid(pre[hd + j] + xr[hd + j]);
                    let g_g = (pre[2 * hd + j] + xr[2 * hd + j]).tanh();
                    let o_g = sigmoid(pre[3 * hd + j] + xr[3 * hd + j]);
                    g[j] = i_g;
                    g[hd + j] = f_g;
                    g[2 * hd + j] = g_g;
                    g[3 * hd + j] = o_g;
                    let c = f_g * c_prev[bi * hd + j] + i_g * g_g;
                    let tc = c.tanh();
                    let h = o_g * tc;
                    cells[row * hd + j] = c;
                    tanh_cells[row * hd + j] = tc;
                    hidden[row * hd + j] = h;
                    c_prev[bi * hd + j] = c;
                    h_prev[bi * hd + j] = h;
                }
            }
        }

        let mean = ops::linear_forward(&hidden, n, &self.mean_w.data, &self.mean_b.data);
        let (log_variance, logvar_raw) = match (&self.logvar_w, &self.logvar_b) {
            (Some(w), Some(bias)) => {
                let raw = ops::linear_forward(&hidden, n, &w.data, &bias.data);
                (raw.iter().map(|&v| clamp_logvar(v)).collect(), Some(raw))
            }
            _ => (vec![T::zero(); n * lat], None),
        };

        let (z, eps) = match (self.variant.kind, sampling) {
            (VariantKind::Ae, _) | (_, Sampling::Mean) => (mean.clone(), None),
            (_, Sampling::Noise(eps)) => {
                if eps.len() != n * lat {
                    return Err(Error::Shape(format!(
                        "noise has {} values, expected {}",
                        eps.len(),
                        n * lat
                    )));
                }
                let z = mean
                    .iter()
                    .zip(&log_variance)
                    .zip(eps)
                    .map(|((&m, &lv), &e)| m + (lv * T::of(0.5)).exp() * e)
                    .collect();
                (z, Some(eps.to_vec()))
            }
        };

        let dec_input = self.decoder_input(&z, &batch.condition_vector, b, steps);
        let (recon, dec) = self.decoder_forward(dec_input, n)?;

        Ok(Forward {
            latent: LatentGaussian {
                frames: n,
                dim: lat,
                mean,
                log_variance,
            },
            recon,
            z,
            windows: b,
            steps,
            n,
            enc_shapes,
            enc_cols,
            enc_act,
            features,
            gates,
            cells,
            tanh_cells,
            hidden,
            logvar_raw,
            eps,
            dec,
        })
    }

    fn decoder_input(&self, z: &[T], cond: &[T], windows: usize, steps: usize) -> Vec<T> {
        let lat = self.arch.latent;
        let width = lat + CONDITION_DIM;
        let mut out = vec![T::zero(); windows * steps * width];
        for bi in 0..windows {
            for t in 0..steps {
                let row = bi * steps + t;
                out[row * width..][..lat].copy_from_slice(&z[row * lat..][..lat]);
                out[row * width + lat..][..CONDITION_DIM]
                    .copy_from_slice(&cond[bi * CONDITION_DIM..][..CONDITION_DIM]);
            }
        }
        out
    }

    fn decoder_shapes(&self, n: usize) -> [ConvShape; 3] {
        let arch = &self.arch;
        let outs = [arch.channels[1], arch.channels[0], 1];
        [0, 1, 2].map(|i| {
            let (h, w) = arch.level_hw(2 - i);
            ConvShape { channels: outs[i], n, height: h, width: w }
        })
    }

    fn decoder_forward(&self, input: Vec<T>, n: usize) -> Result<(Reconstruction<T>, DecoderCache<T>)> {
        let arch = &self.arch;
        let (ch, cw) = arch.code_hw();
        let mut fc = ops::linear_forward(&input, n, &self.fc_w.data, &self.fc_b.data);
        ops::relu_inplace(&mut fc);
        let fc_cn = ops::batch_to_channel_major(&fc, n, arch.channels[2], ch * cw);
        let shapes = self.decoder_shapes(n);
        let cins = [arch.channels[2], arch.channels[1], arch.channels[0]];
        let mut d1 = ops::deconv_forward(&fc_cn, cins[0], shapes[0], &self.deconv_w[0].data, &self.deconv_b[0].data);
        ops::relu_inplace(&mut d1);
        let mut d2 = ops::deconv_forward(&d1, cins[1], shapes[1], &self.deconv_w[1].data, &self.deconv_b[1].data);
        ops::relu_inplace(&mut d2);
        let logits = ops::deconv_forward(&d2, cins[2], shapes[2], &self.deconv_w[2].data, &self.deconv_b[2].data);
        let mean: Vec<T> = logits.into_iter().map(sigmoid).collect();
        let logvar_raw = match (&self.out_logvar_w, &self.out_logvar_b) {
            (Some(w), Some(b)) => Some(ops::deconv_forward(&d2, cins[2], shapes[2], &w.data, &b.data)),
            _ => None,
        };
        let log_variance = logvar_raw
            .as_ref()
            .map(|raw| raw.iter().map(|&v| clamp_logvar(v)).collect());
        Ok((
            Reconstruction {
                grid: arch.grid(),
                frames: n,
                mean,
                log_variance,
            },
            DecoderCache {
                input,
                fc_act: fc,
                fc_cn,
                d1,
                d2,
                logvar_raw,
            },
        ))
    }

    /// Decode latent samples `[N, latent]` with per-frame condition vectors `[N, 8]`.
    pub fn decode(&self, z: &[T], condition: &[T]) -> Result<Reconstruction<T>> {
        let lat = self.arch.latent;
        if z.len() % lat != 0 || condition.len() != (z.len() / lat) * CONDITION_DIM {
            return Err(Error::Shape(format!(
                "decode: {} latent values and {} condition values",
                z.len(),
                condition.len()
            )));
        }
        let n = z.len() / lat;
        let input = self.decoder_input(z, condition, n, 1);
        Ok(self.decoder_forward(input, n)?.0)
    }

    /// Parameter gradients given loss gradients on the outputs.
    pub fn backward(&self, fwd: &Forward<T>, out: &OutputGrads<T>) -> Result<ModelParameters<T>> {
        let arch = &self.arch;
        let n = fwd.n;
        let p = arch.grid().pixels();
        let (hd, lat) = (arch.hidden, arch.latent);
        if out.recon_mean.len() != n * p
            || out.latent_mean.len() != n * lat
            || out.latent_log_variance.len() != n * lat
        {
            return Err(Error::Shape("output gradients do not match the forward pass".into()));
        }
        if out.recon_log_variance.is_some() != self.out_logvar_w.is_some() {
            return Err(Error::VariantMismatch(format!(
                "{} observation variance head does not match supplied gradients",
                self.variant
            )));
        }
        let mut g = self.zeros_like();

        // decoder
        let dec = &fwd.dec;
        let shapes = self.decoder_shapes(n);
        let cins = [arch.channels[2], arch.channels[1], arch.channels[0]];
        let d_logits: Vec<T> = out
            .recon_mean
            .iter()
            .zip(&fwd.recon.mean)
            .map(|(&gm, &m)| gm * m * (T::one() - m))
            .collect();
        let mut d_d2 = ops::deconv_backward(
            &d_logits,
            &dec.d2,
            cins[2],
            shapes[2],
            &self.deconv_w[2].data,
            &mut g.deconv_w[2].data,
            &mut g.deconv_b[2].data,
        );
        if let (Some(glv), Some(raw), Some(w), Some(gw), Some(gb)) = (
            &out.recon_log_variance,
            &dec.logvar_raw,
            &self.out_logvar_w,
            g.out_logvar_w.as_mut(),
            g.out_logvar_b.as_mut(),
        ) {
            let d_raw: Vec<T> = glv
                .iter()
                .zip(raw)
                .map(|(&d, &r)| if clamp_mask(r) { d } else { T::zero() })
                .collect();
            let extra = ops::deconv_backward(&d_raw, &dec.d2, cins[2], shapes[2], &w.data, &mut gw.data, &mut gb.data);
            for (a, e) in d_d2.iter_mut().zip(extra) {
                *a += e;
            }
        }
        ops::relu_backward_inplace(&mut d_d2, &dec.d2);
        let mut d_d1 = ops::deconv_backward(
            &d_d2,
            &dec.d1,
            cins[1],
            shapes[1],
            &self.deconv_w[1].data,
            &mut g.deconv_w[1].data,
            &mut g.deconv_b[1].data,
        );
        ops::relu_backward_inplace(&mut d_d1, &dec.d1);
        let d_fc_cn = ops::deconv_backward(
            &d_d1,
            &dec.fc_cn,
            cins[0],
            shapes[0],
            &self.deconv_w[0].data,
            &mut g.deconv_w[0].data,
            &mut g.deconv_b[0].data,
        );
        let (ch, cw) = arch.code_hw();
        let mut d_fc = ops::channel_to_batch_major(&d_fc_cn, n, arch.channels[2], ch * cw);
        ops::relu_backward_inplace(&mut d_fc, &dec.fc_act);
        let d_dec_in = ops::linear_backward(
            &d_fc,
            &dec.input,
            n,
            &self.fc_w.data,
            &mut g.fc_w.data,
            &mut g.fc_b.data,
            true,
        )
        .expect("input gradient requested");

        // latent: reparameterization plus direct KL terms
        let width = lat + CONDITION_DIM;
        let mut d_mean = out.latent_mean.clone();
        let mut d_logvar = out.latent_log_variance.clone();
        for row in 0..n {
            for j in 0..lat {
                let dz = d_dec_in[row * width + j];
                let k = row * lat + j;
                d_mean[k] += dz;
                if let Some(eps) = &fwd.eps {
                    let sd = (fwd.latent.log_variance[k] * T::of(0.5)).exp();
                    d_logvar[k] += dz * eps[k] * sd * T::of(0.5);
                }
            }
        }

        // heads
        let mut d_hidden = ops::linear_backward(
            &d_mean,
            &fwd.hidden,
            n,
            &self.mean_w.data,
            &mut g.mean_w.data,
            &mut g.mean_b.data,
            true,
        )
        .expect("input gradient requested");
        if let (Some(raw), Some(w), Some(gw), Some(gb)) =
            (&fwd.logvar_raw, &self.logvar_w, g.logvar_w.as_mut(), g.logvar_b.as_mut())
        {
            let d_raw: Vec<T> = d_logvar
                .iter()
                .zip(raw)
                .map(|(&d, &r)| if clamp_mask(r) { d } else { T::zero() })
                .collect();
            let extra = ops::linear_backward(&d_raw, &fwd.hidden, n, &w.data, &mut gw.data, &mut gb.data, true)
                .expect("input gradient requested");
            for (a, e) in d_hidden.iter_mut().zip(extra) {
                *a += e;
            }
        }

        // LSTM, backpropagation through time within each window
        let (b, steps) = (fwd.windows, fwd.steps);
        let mut d_xg = vec![T::zero(); n * 4 * hd];
        let mut dh_next = vec![T::zero(); b * hd];
        let mut dc_next = vec![T::zero(); b * hd];
        let mut d_pre = vec![T::zero(); b * 4 * hd];
        let mut h_prev = vec![T::zero(); b * hd];
        for t in (0..steps).rev() {
            for bi in 0..b {
                let row = bi * steps + t;
                let gt = &fwd.gates[row * 4 * hd..][..4 * hd];
                for j in 0..hd {
                    let (ig, fg, gg, og) = (gt[j], gt[hd + j], gt[2 * hd + j], gt[3 * hd + j]);
                    let tc = fwd.tanh_cells[row * hd + j];
                    let c_prev = if t > 0 { fwd.cells[(row - 1) * hd + j] } else { T::zero() };
                    let dh = d_hidden[row * hd + j] + dh_next[bi * hd + j];
                    let d_o = dh * tc;
                    let dc = dc_next[bi * hd + j] + dh * og * (T::one() - tc * tc);
                    let d_i = dc * gg;
                    let d_g = dc * ig;
                    let d_f = dc * c_prev;
                    dc_next[bi * hd + j] = dc * fg;
                    let dp = &mut d_pre[bi * 4 * hd..][..4 * hd];
                    dp[j] = d_i * ig * (T::one() - ig);
                    dp[hd + j] = d_f * fg * (T::one() - fg);
                    dp[2 * hd + j] = d_g * (T::one() - gg * gg);
                    dp[3 * hd + j] = d_o * og * (T::one() - og);
                }
                d_xg[row * 4 * hd..][..4 * hd].copy_from_slice(&d_pre[bi * 4 * hd..][..4 * hd]);
                if t > 0 {
                    h_prev[bi * hd..][..hd].copy_from_slice(&fwd.hidden[(row - 1) * hd..][..hd]);
                }
            }
            if t > 0 {
                gemm(true, false, 4 * hd, hd, b, T::one(), &d_pre, &h_prev, T::one(), &mut g.lstm_w_hh.data);
                gemm(false, false, b, hd, 4 * hd, T::one(), &d_pre, &self.lstm_w_hh.data, T::zero(), &mut dh_next);
            }
        }
        let d_features = ops::linear_backward(
            &d_xg,
            &fwd.features,
            n,
            &self.lstm_w_ih.data,
            &mut g.lstm_w_ih.data,
            &mut g.lstm_b.data,
            true,
        )
        .expect("input gradient requested");

        // encoder convolutions
        let mut d_act = ops::batch_to_channel_major(&d_features, n, arch.channels[2], ch * cw);
        for i in (0..3).rev() {
            ops::relu_backward_inplace(&mut d_act, &fwd.enc_act[i]);
            let d_in = ops::conv_backward(
                &d_act,
                &fwd.enc_cols[i],
                fwd.enc_shapes[i],
                &self.conv_w[i].data,
                &mut g.conv_w[i].data,
                &mut g.conv_b[i].data,
                i > 0,
            );
            if let Some(d) = d_in {
                d_act = d;
            }
        }
        Ok(g)
    }
}
