//! Batched layer kernels with hand-written backward passes.
//!
//! Feature maps use channel-major `[C, N, H, W]` layout so that a whole batch
//! of frames becomes a single GEMM per convolution.

use super::real::{gemm, Real};

pub const KERNEL: usize = 3;
pub const STRIDE: usize = 2;
pub const PAD: usize = 1;
const TAPS: usize = KERNEL * KERNEL;

/// Spatial output size of the stride-2 convolution.
pub fn conv_out(size: usize) -> usize {
    (size + 2 * PAD - KERNEL) / STRIDE + 1
}

/// Geometry of one convolution: `channels x n x height x width` input.
#[derive(Debug, Clone, Copy)]
pub struct ConvShape {
    pub channels: usize,
    pub n: usize,
    pub height: usize,
    pub width: usize,
}

impl ConvShape {
    pub fn out_hw(&self) -> (usize, usize) {
        (conv_out(self.height), conv_out(self.width))
    }

    pub fn len(&self) -> usize {
        self.channels * self.n * self.height * self.width
    }

    pub fn cols_width(&self) -> usize {
        let (ho, wo) = self.out_hw();
        self.n * ho * wo
    }
}

/// Unfold 3x3 stride-2 patches into a `[C*9, N*Ho*Wo]` matrix.
pub fn im2col<T: Real>(input: &[T], s: ConvShape) -> Vec<T> {
    let (ho, wo) = s.out_hw();
    let width = s.n * ho * wo;
    let mut cols = vec![T::zero(); s.channels * TAPS * width];
    for c in 0..s.channels {
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &mut cols[(c * TAPS + ky * KERNEL + kx) * width..][..width];
                for n in 0..s.n {
                    let plane = &input[(c * s.n + n) * s.height * s.width..][..s.height * s.width];
                    for oy in 0..ho {
                        let iy = (oy * STRIDE + ky) as isize - PAD as isize;
                        if iy < 0 || iy >= s.height as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * s.width..][..s.width];
                        let dst = &mut row[(n * ho + oy) * wo..][..wo];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * STRIDE + kx) as isize - PAD as isize;
                            if ix >= 0 && ix < s.width as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add columns back into `[C, N, H, W]`.
pub fn col2im<T: Real>(cols: &[T], s: ConvShape) -> Vec<T> {
    let (ho, wo) = s.out_hw();
    let width = s.n * ho * wo;
    let mut out = vec![T::zero(); s.len()];
    for c in 0..s.channels {
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &cols[(c * TAPS + ky * KERNEL + kx) * width..][..width];
                for n in 0..s.n {
                    let plane =
                        &mut out[(c * s.n + n) * s.height * s.width..][..s.height * s.width];
                    for oy in 0..ho {
                        let iy = (oy * STRIDE + ky) as isize - PAD as isize;
                        if iy < 0 || iy >= s.height as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * s.width..][..s.width];
                        let src = &row[(n * ho + oy) * wo..][..wo];
                        for (ox, v) in src.iter().enumerate() {
                            let ix = (ox * STRIDE + kx) as isize - PAD as isize;
                            if ix >= 0 && ix < s.width as isize {
                                dst[ix as usize] += *v;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Strided convolution. `weight` is `[Cout, Cin*9]`. Returns the output
/// `[Cout, N, Ho, Wo]` and the unfolded input needed for the backward pass.
pub fn conv_forward<T: Real>(
    input: &[T],
    s: ConvShape,
    weight: &[T],
    bias: &[T],
) -> (Vec<T>, Vec<T>) {
    let cout = bias.len();
    let cols = im2col(input, s);
    let width = s.cols_width();
    let mut out = vec![T::zero(); cout * width];
    gemm(false, false, cout, width, s.channels * TAPS, T::one(), weight, &cols, T::zero(), &mut out);
    add_channel_bias(&mut out, bias, width);
    (out, cols)
}

/// Returns the input gradient and accumulates weight/bias gradients.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward<T: Real>(
    grad_out: &[T],
    cols: &[T],
    s: ConvShape,
    weight: &[T],
    grad_weight: &mut [T],
    grad_bias: &mut [T],
    need_input_grad: bool,
) -> Option<Vec<T>> {
    let cout = grad_bias.len();
    let width = s.cols_width();
    let k = s.channels * TAPS;
    gemm(false, true, cout, k, width, T::one(), grad_out, cols, T::one(), grad_weight);
    accumulate_channel_sums(grad_out, grad_bias, width);
    if !need_input_grad {
        return None;
    }
    let mut dcols = vec![T::zero(); k * width];
    gemm(true, false, k, width, cout, T::one(), weight, grad_out, T::zero(), &mut dcols);
    Some(col2im(&dcols, s))
}

/// Transposed convolution that doubles spatial size; the adjoint geometry of
/// [`conv_forward`] on the output shape `out`. `weight` is `[Cin, Cout*9]`.
pub fn deconv_forward<T: Real>(input: &[T], cin: usize, out: ConvShape, weight: &[T], bias: &[T]) -> Vec<T> {
    let width = out.cols_width();
    let k = out.channels * TAPS;
    let mut cols = vec![T::zero(); k * width];
    gemm(true, false, k, width, cin, T::one(), weight, input, T::zero(), &mut cols);
    let mut y = col2im(&cols, out);
    add_channel_bias(&mut y, bias, out.n * out.height * out.width);
    y
}

#[allow(clippy::too_many_arguments)]
pub fn deconv_backward<T: Real>(
    grad_out: &[T],
    input: &[T],
    cin: usize,
    out: ConvShape,
    weight: &[T],
    grad_weight: &mut [T],
    grad_bias: &mut [T],
) -> Vec<T> {
    let width = out.cols_width();
    let k = out.channels * TAPS;
    accumulate_channel_sums(grad_out, grad_bias, out.n * out.height * out.width);
    let gcols = im2col(grad_out, out);
    gemm(false, true, cin, k, width, T::one(), input, &gcols, T::one(), grad_weight);
    let mut grad_in = vec![T::zero(); cin * width];
    gemm(false, false, cin, width, k, T::one(), weight, &gcols, T::zero(), &mut grad_in);
    grad_in
}

/// `y[n, :] = x[n, :] * W^T + b` for `x: [N, In]`, `W: [Out, In]`.
pub fn linear_forward<T: Real>(x: &[T], n: usize, weight: &[T], bias: &[T]) -> Vec<T> {
    let out = bias.len();
    let inp = weight.len() / out;
    let mut y = vec![T::zero(); n * out];
    for row in y.chunks_exact_mut(out) {
        row.copy_from_slice(bias);
    }
    gemm(false, true, n, out, inp, T::one(), x, weight, T::one(), &mut y);
    y
}

pub fn linear_backward<T: Real>(
    grad_y: &[T],
    x: &[T],
    n: usize,
    weight: &[T],
    grad_weight: &mut [T],
    grad_bias: &mut [T],
    need_input_grad: bool,
) -> Option<Vec<T>> {
    let out = grad_bias.len();
    let inp = weight.len() / out;
    gemm(true, false, out, inp, n, T::one(), grad_y, x, T::one(), grad_weight);
    for row in grad_y.chunks_exact(out) {
        for (g, v) in grad_bias.iter_mut().zip(row) {
            *g += *v;
        }
    }
    if !need_input_grad {
        return None;
    }
    let mut gx = vec![T::zero(); n * inp];
    gemm(false, false, n, inp, out, T::one(), grad_y, weight, T::zero(), &mut gx);
    Some(gx)
}

fn add_channel_bias<T: Real>(y: &mut [T], bias: &[T], plane: usize) {
    for (chunk, b) in y.chunks_exact_mut(plane).zip(bias) {
        for v in chunk {
            *v += *b;
        }
    }
}

fn accumulate_channel_sums<T: Real>(g: &[T], grad_bias: &mut [T], plane: usize) {
    for (chunk, gb) in g.chunks_exact(plane).zip(grad_bias.iter_mut()) {
        *gb += chunk.iter().copied().sum::<T>();
    }
}

pub fn relu_inplace<T: Real>(x: &mut [T]) {
    for v in x {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zero gradient entries where the ReLU output was not positive.
pub fn relu_backward_inplace<T: Real>(grad: &mut [T], activated: &[T]) {
    for (g, a) in grad.iter_mut().zip(activated) {
        if *a <= T::zero() {
            *g = T::zero();
        }
    }
}

pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// `[N, C, P]` to `[C, N, P]`.
pub fn batch_to_channel_major<T: Real>(x: &[T], n: usize, c: usize, plane: usize) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    for i in 0..n {
        for ch in 0..c {
            y[(ch * n + i) * plane..][..plane].copy_from_slice(&x[(i * c + ch) * plane..][..plane]);
        }
    }
    y
}

/// `[C, N, P]` to `[N, C, P]`.
pub fn channel_to_batch_major<T: Real>(x: &[T], n: usize, c: usize, plane: usize) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    for i in 0..n {
        for ch in 0..c {
            y[(i * c + ch) * plane..][..plane].copy_from_slice(&x[(ch * n + i) * plane..][..plane]);
        }
    }
    y
}
