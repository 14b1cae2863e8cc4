//! Convolution and transposed convolution on top of `sgemm`.
//!
//! Both layers lower to im2col/col2im over a chunk of the batch so that a
//! single matrix product covers several images. A transposed convolution is
//! the adjoint of a convolution with the same geometry, so the two share the
//! same column routines with the roles of forward and backward swapped.

use rand::Rng;

use super::param::{join, Param, Parameterized};
use super::tensor::Tensor;

/// Upper bound on elements of one im2col buffer.
const COLS_BUDGET: usize = 1 << 22;

/// `c = a·b + beta·c` with explicit strides on `a` and `b`; `c` is dense row-major.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_rs: usize,
    a_cs: usize,
    b: &[f32],
    b_rs: usize,
    b_cs: usize,
    beta: f32,
    c: &mut [f32],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n);
    if k > 0 {
        assert!(a.len() > (m - 1) * a_rs + (k - 1) * a_cs);
        assert!(b.len() > (k - 1) * b_rs + (n - 1) * b_cs);
    }
    // SAFETY: bounds of all three operands are checked above.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_rs as isize,
            a_cs as isize,
            b.as_ptr(),
            b_rs as isize,
            b_cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Sliding-window geometry over an image of `channels × height × width`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Window {
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
}

impl Window {
    fn out_h(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    fn out_w(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    fn positions(&self) -> usize {
        self.out_h() * self.out_w()
    }

    fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    /// Fills `cols[rows × (count·positions)]` from samples `first..first+count`.
    fn im2col(&self, x: &[f32], first: usize, count: usize, cols: &mut [f32]) {
        let (oh, ow) = (self.out_h(), self.out_w());
        let pos = oh * ow;
        let ncols = count * pos;
        let img_len = self.channels * self.height * self.width;
        let k = self.kernel;
        for ci in 0..self.channels {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst_row = &mut cols[row * ncols..(row + 1) * ncols];
                    for img in 0..count {
                        let src = &x[(first + img) * img_len + ci * self.height * self.width..];
                        let dst = &mut dst_row[img * pos..(img + 1) * pos];
                        for oy in 0..oh {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            let out = &mut dst[oy * ow..(oy + 1) * ow];
                            if iy < 0 || iy >= self.height as isize {
                                out.iter_mut().for_each(|v| *v = 0.0);
                                continue;
                            }
                            let line = &src[iy as usize * self.width..(iy as usize + 1) * self.width];
                            let (lo, hi) = self.valid_ox(kx, ow);
                            out[..lo].iter_mut().for_each(|v| *v = 0.0);
                            out[hi..].iter_mut().for_each(|v| *v = 0.0);
                            if lo < hi {
                                let start = lo * self.stride + kx - self.pad;
                                if self.stride == 1 {
                                    out[lo..hi].copy_from_slice(&line[start..start + hi - lo]);
                                } else {
                                    for (o, v) in out[lo..hi].iter_mut().zip(line[start..].iter().step_by(self.stride)) {
                                        *o = *v;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds `cols` back into samples `first..first+count` of `x`.
    fn col2im(&self, cols: &[f32], first: usize, count: usize, x: &mut [f32]) {
        let (oh, ow) = (self.out_h(), self.out_w());
        let pos = oh * ow;
        let ncols = count * pos;
        let img_len = self.channels * self.height * self.width;
        let k = self.kernel;
        for ci in 0..self.channels {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src_row = &cols[row * ncols..(row + 1) * ncols];
                    for img in 0..count {
                        let base = (first + img) * img_len + ci * self.height * self.width;
                        let src = &src_row[img * pos..(img + 1) * pos];
                        for oy in 0..oh {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= self.height as isize {
                                continue;
                            }
                            let line = &mut x[base + iy as usize * self.width..base + (iy as usize + 1) * self.width];
                            let (lo, hi) = self.valid_ox(kx, ow);
                            if lo < hi {
                                let start = lo * self.stride + kx - self.pad;
                                let vals = &src[oy * ow + lo..oy * ow + hi];
                                if self.stride == 1 {
                                    line[start..start + hi - lo].iter_mut().zip(vals).for_each(|(d, v)| *d += v);
                                } else {
                                    for (d, v) in line[start..].iter_mut().step_by(self.stride).zip(vals) {
                                        *d += v;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Output columns `[lo, hi)` whose input column `ox·stride + kx − pad` is in range.
    fn valid_ox(&self, kx: usize, ow: usize) -> (usize, usize) {
        let lo = (self.pad.saturating_sub(kx) + self.stride - 1) / self.stride;
        let hi = if self.width + self.pad > kx { ((self.width + self.pad - kx - 1) / self.stride + 1).min(ow) } else { 0 };
        (lo.min(hi), hi)
    }

    fn chunk(&self, batch: usize) -> usize {
        let per = self.rows() * self.positions();
        (COLS_BUDGET / per.max(1)).clamp(1, batch.max(1))
    }
}

/// Gathers channels of samples `first..first+count` into `[c × count·plane]`.
fn to_channel_major(x: &[f32], c: usize, plane: usize, first: usize, count: usize, out: &mut [f32]) {
    let ncols = count * plane;
    for img in 0..count {
        let src = &x[(first + img) * c * plane..(first + img + 1) * c * plane];
        for ch in 0..c {
            out[ch * ncols + img * plane..ch * ncols + (img + 1) * plane]
                .copy_from_slice(&src[ch * plane..(ch + 1) * plane]);
        }
    }
}

/// Inverse of [`to_channel_major`], with an optional per-channel bias.
fn from_channel_major(m: &[f32], c: usize, plane: usize, first: usize, count: usize, bias: Option<&[f32]>, y: &mut [f32]) {
    let ncols = count * plane;
    for img in 0..count {
        let dst = &mut y[(first + img) * c * plane..(first + img + 1) * c * plane];
        for ch in 0..c {
            let b = bias.map_or(0.0, |b| b[ch]);
            let src = &m[ch * ncols + img * plane..ch * ncols + (img + 1) * plane];
            dst[ch * plane..(ch + 1) * plane].iter_mut().zip(src).for_each(|(d, s)| *d = s + b);
        }
    }
}

fn bias_grad(grad_y: &Tensor, grad_b: &mut [f32]) {
    let plane = grad_y.plane();
    for i in 0..grad_y.batch() {
        for (ch, g) in grad_y.sample(i).chunks_exact(plane).enumerate() {
            grad_b[ch] += g.iter().sum::<f32>();
        }
    }
}

/// 2-D convolution, weight layout `[out, in·k·k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: Param,
    pub bias: Param,
}

impl Conv2d {
    pub fn new<R: Rng>(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, pad: usize, gain: f32, rng: &mut R) -> Self {
        let fan_in = in_ch * kernel * kernel;
        Self {
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
            weight: Param::he_normal(out_ch * fan_in, fan_in, gain, rng),
            bias: Param::zeros(out_ch),
        }
    }

    fn window(&self, x: &Tensor) -> Window {
        assert_eq!(x.channels(), self.in_ch, "conv input channels");
        Window { channels: self.in_ch, height: x.height(), width: x.width(), kernel: self.kernel, stride: self.stride, pad: self.pad }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        ((h + 2 * self.pad - self.kernel) / self.stride + 1, (w + 2 * self.pad - self.kernel) / self.stride + 1)
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let win = self.window(x);
        let (oh, ow) = (win.out_h(), win.out_w());
        let pos = oh * ow;
        let rows = win.rows();
        let mut y = Tensor::zeros(x.batch(), self.out_ch, oh, ow);
        let chunk = win.chunk(x.batch());
        let mut cols = vec![0.0; rows * chunk * pos];
        let mut prod = vec![0.0; self.out_ch * chunk * pos];
        let mut first = 0;
        while first < x.batch() {
            let count = chunk.min(x.batch() - first);
            let ncols = count * pos;
            win.im2col(x.data(), first, count, &mut cols);
            gemm(self.out_ch, rows, ncols, &self.weight.value, rows, 1, &cols, ncols, 1, 0.0, &mut prod);
            from_channel_major(&prod, self.out_ch, pos, first, count, Some(&self.bias.value), y.data_mut());
            first += count;
        }
        y
    }

    /// Returns the input gradient; accumulates parameter gradients when asked.
    pub fn backward(&mut self, x: &Tensor, grad_y: &Tensor, param_grads: bool) -> Tensor {
        let win = self.window(x);
        let pos = win.positions();
        let rows = win.rows();
        assert_eq!(grad_y.shape(), [x.batch(), self.out_ch, win.out_h(), win.out_w()], "conv grad shape");
        let mut grad_x = Tensor::zeros(x.batch(), x.channels(), x.height(), x.width());
        let chunk = win.chunk(x.batch());
        let mut cols = vec![0.0; rows * chunk * pos];
        let mut gmat = vec![0.0; self.out_ch * chunk * pos];
        let mut first = 0;
        while first < x.batch() {
            let count = chunk.min(x.batch() - first);
            let ncols = count * pos;
            to_channel_major(grad_y.data(), self.out_ch, pos, first, count, &mut gmat);
            if param_grads {
                win.im2col(x.data(), first, count, &mut cols);
                gemm(self.out_ch, ncols, rows, &gmat, ncols, 1, &cols, 1, ncols, 1.0, &mut self.weight.grad);
            }
            gemm(rows, self.out_ch, ncols, &self.weight.value, 1, rows, &gmat, ncols, 1, 0.0, &mut cols);
            win.col2im(&cols[..rows * ncols], first, count, grad_x.data_mut());
            first += count;
        }
        if param_grads {
            bias_grad(grad_y, &mut self.bias.grad);
        }
        grad_x
    }
}

impl Parameterized for Conv2d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Transposed 2-D convolution, weight layout `[in, out·k·k]`.
///
/// Output size is `(h − 1)·stride − 2·pad + kernel` per axis.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvTranspose2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: Param,
    pub bias: Param,
}

impl ConvTranspose2d {
    pub fn new<R: Rng>(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, pad: usize, gain: f32, rng: &mut R) -> Self {
        // Each output pixel receives roughly in·(k/stride)² contributions.
        let fan_in = (in_ch * kernel * kernel / (stride * stride)).max(1);
        Self {
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
            weight: Param::he_normal(in_ch * out_ch * kernel * kernel, fan_in, gain, rng),
            bias: Param::zeros(out_ch),
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        ((h - 1) * self.stride + self.kernel - 2 * self.pad, (w - 1) * self.stride + self.kernel - 2 * self.pad)
    }

    /// Window over the output image whose positions are the input pixels.
    fn window(&self, x: &Tensor) -> Window {
        assert_eq!(x.channels(), self.in_ch, "transposed conv input channels");
        let (oh, ow) = self.output_hw(x.height(), x.width());
        let win = Window { channels: self.out_ch, height: oh, width: ow, kernel: self.kernel, stride: self.stride, pad: self.pad };
        debug_assert_eq!((win.out_h(), win.out_w()), (x.height(), x.width()));
        win
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let win = self.window(x);
        let pos = x.plane();
        let rows = win.rows();
        let mut y = Tensor::zeros(x.batch(), self.out_ch, win.height, win.width);
        let chunk = win.chunk(x.batch());
        let mut xmat = vec![0.0; self.in_ch * chunk * pos];
        let mut cols = vec![0.0; rows * chunk * pos];
        let mut first = 0;
        while first < x.batch() {
            let count = chunk.min(x.batch() - first);
            let ncols = count * pos;
            to_channel_major(x.data(), self.in_ch, pos, first, count, &mut xmat);
            gemm(rows, self.in_ch, ncols, &self.weight.value, 1, rows, &xmat, ncols, 1, 0.0, &mut cols);
            win.col2im(&cols[..rows * ncols], first, count, y.data_mut());
            first += count;
        }
        let plane = y.plane();
        for i in 0..y.batch() {
            for (ch, v) in y.sample_mut(i).chunks_exact_mut(plane).enumerate() {
                let b = self.bias.value[ch];
                v.iter_mut().for_each(|e| *e += b);
            }
        }
        y
    }

    pub fn backward(&mut self, x: &Tensor, grad_y: &Tensor, param_grads: bool) -> Tensor {
        let win = self.window(x);
        let pos = x.plane();
        let rows = win.rows();
        assert_eq!(grad_y.shape(), [x.batch(), self.out_ch, win.height, win.width], "transposed conv grad shape");
        let mut grad_x = Tensor::zeros(x.batch(), self.in_ch, x.height(), x.width());
        let chunk = win.chunk(x.batch());
        let mut cols = vec![0.0; rows * chunk * pos];
        let mut xmat = vec![0.0; self.in_ch * chunk * pos];
        let mut first = 0;
        while first < x.batch() {
            let count = chunk.min(x.batch() - first);
            let ncols = count * pos;
            win.im2col(grad_y.data(), first, count, &mut cols);
            if param_grads {
                to_channel_major(x.data(), self.in_ch, pos, first, count, &mut xmat);
                gemm(self.in_ch, ncols, rows, &xmat, ncols, 1, &cols, 1, ncols, 1.0, &mut self.weight.grad);
            }
            gemm(self.in_ch, rows, ncols, &self.weight.value, rows, 1, &cols, ncols, 1, 0.0, &mut xmat);
            from_channel_major(&xmat, self.in_ch, pos, first, count, None, grad_x.data_mut());
            first += count;
        }
        if param_grads {
            bias_grad(grad_y, &mut self.bias.grad);
        }
        grad_x
    }
}

impl Parameterized for ConvTranspose2d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}
