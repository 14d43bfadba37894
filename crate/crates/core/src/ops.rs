//! Forward kernels on plain tensors, and the backward helpers the tape uses.
//!
//! Every function here is pure: identical inputs give bit-identical outputs.
//! The differentiable versions live on [`Tape`](crate::Tape).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Default epsilon for [`layernorm`].
pub const LAYERNORM_EPS: f64 = 1e-5;

// ---------------------------------------------------------------------------
// matrix products

/// `out[m,n] += a[m,k] · b[k,n]`, accumulating over `k` in ascending order.
pub(crate) fn gemm(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m,n] += a[k,m]ᵀ · b[k,n]`.
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &av) in a_row.iter().enumerate() {
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m,n] += a[m,k] · b[n,k]ᵀ`.
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            // Four interleaved partial sums so the loop vectorizes.
            let mut acc = [0.0; 4];
            let (a4, a_tail) = a_row.split_at(k - k % 4);
            let (b4, b_tail) = b_row.split_at(k - k % 4);
            for (x, y) in a4.chunks_exact(4).zip(b4.chunks_exact(4)) {
                for l in 0..4 {
                    acc[l] += x[l] * y[l];
                }
            }
            let mut sum = (acc[0] + acc[1]) + (acc[2] + acc[3]);
            for (&x, &y) in a_tail.iter().zip(b_tail) {
                sum += x * y;
            }
            out[i * n + j] += sum;
        }
    }
}

/// Matrix product of `[M,K]` and `[K,N]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut out = vec![0.0; m * n];
    gemm(a.data(), b.data(), &mut out, m, k, n);
    Tensor::new([m, n], out)
}

/// Adds a length-`N` vector to every row of an `[M,N]` matrix.
pub fn add_row(x: &Tensor, row: &Tensor) -> Result<Tensor> {
    let (_, n) = x.dims2()?;
    if row.shape() != [n] {
        return Err(Error::ShapeMismatch {
            op: "add_row",
            lhs: x.shape().to_vec(),
            rhs: row.shape().to_vec(),
        });
    }
    let mut out = x.clone();
    for chunk in out.data_mut().chunks_mut(n) {
        for (o, &r) in chunk.iter_mut().zip(row.data()) {
            *o += r;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// elementwise

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub fn silu_scalar(x: f64) -> f64 {
    x * sigmoid_scalar(x)
}

pub fn softplus_scalar(x: f64) -> f64 {
    x.max(0.0) + libm::log1p(libm::exp(-libm::fabs(x)))
}

/// Inverse of softplus for positive `y`.
pub fn inverse_softplus(y: f64) -> f64 {
    y + libm::log(-libm::expm1(-y))
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

pub fn silu(x: &Tensor) -> Tensor {
    x.map(silu_scalar)
}

pub fn softplus(x: &Tensor) -> Tensor {
    x.map(softplus_scalar)
}

/// Softmax over the last axis.
pub fn softmax_lastaxis(x: &Tensor) -> Result<Tensor> {
    let d = *x.shape().last().ok_or(Error::Empty("softmax"))?;
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(d) {
        softmax_in_place(row);
    }
    Ok(out)
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = libm::exp(*v - max);
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

// ---------------------------------------------------------------------------
// layer normalization

/// Normalized values and reciprocal standard deviations kept for backward.
pub(crate) struct LayerNormCache {
    pub xhat: Vec<f64>,
    pub rstd: Vec<f64>,
}

pub(crate) fn layernorm_forward(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Result<(Tensor, LayerNormCache)> {
    let d = *x.shape().last().ok_or(Error::Empty("layernorm"))?;
    if d == 0 {
        return Err(Error::Empty("layernorm"));
    }
    if gamma.shape() != [d] || beta.shape() != [d] {
        return Err(Error::ShapeMismatch {
            op: "layernorm",
            lhs: x.shape().to_vec(),
            rhs: gamma.shape().to_vec(),
        });
    }
    if eps <= 0.0 {
        return Err(Error::Config("layernorm eps must be positive".into()));
    }
    let rows = x.numel() / d;
    let mut out = vec![0.0; x.numel()];
    let mut xhat = vec![0.0; x.numel()];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let xs = &x.data()[r * d..(r + 1) * d];
        let mean = xs.iter().sum::<f64>() / d as f64;
        let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / libm::sqrt(var + eps);
        rstd[r] = rs;
        for j in 0..d {
            let h = (xs[j] - mean) * rs;
            xhat[r * d + j] = h;
            out[r * d + j] = h * gamma.data()[j] + beta.data()[j];
        }
    }
    Ok((Tensor::new(x.shape().to_vec(), out)?, LayerNormCache { xhat, rstd }))
}

/// Layer normalization over the last axis with population variance.
pub fn layernorm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    layernorm_forward(x, gamma, beta, eps).map(|(y, _)| y)
}

/// Returns `(dx, dgamma, dbeta)`.
pub(crate) fn layernorm_backward(
    cache: &LayerNormCache,
    gamma: &[f64],
    gout: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = gamma.len();
    let rows = cache.rstd.len();
    let mut dx = vec![0.0; rows * d];
    let mut dgamma = vec![0.0; d];
    let mut dbeta = vec![0.0; d];
    let mut dxhat = vec![0.0; d];
    for r in 0..rows {
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let go = &gout[r * d..(r + 1) * d];
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_xhat = 0.0;
        for j in 0..d {
            dgamma[j] += go[j] * xh[j];
            dbeta[j] += go[j];
            dxhat[j] = go[j] * gamma[j];
            mean_dxhat += dxhat[j];
            mean_dxhat_xhat += dxhat[j] * xh[j];
        }
        mean_dxhat /= d as f64;
        mean_dxhat_xhat /= d as f64;
        let rs = cache.rstd[r];
        for j in 0..d {
            dx[r * d + j] = rs * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
    (dx, dgamma, dbeta)
}

// ---------------------------------------------------------------------------
// convolution

/// Geometry of a 2D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeometry {
    pub fn new(x: &Tensor, w: &Tensor, stride: usize, padding: usize) -> Result<Self> {
        let (batch, cin, height, width) = x.dims4()?;
        let (cout, wcin, kh, kw) = w.dims4()?;
        if wcin != cin || kh != kw {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: x.shape().to_vec(),
                rhs: w.shape().to_vec(),
            });
        }
        if stride == 0 {
            return Err(Error::Config("conv2d stride must be positive".into()));
        }
        let extent = |size: usize| -> Option<usize> {
            let padded = size + 2 * padding;
            (padded >= kh).then(|| (padded - kh) / stride + 1)
        };
        match (extent(height), extent(width)) {
            (Some(oh), Some(ow)) if oh >= 1 && ow >= 1 => Ok(Self {
                batch,
                in_channels: cin,
                out_channels: cout,
                height,
                width,
                kernel: kh,
                stride,
                padding,
                out_height: oh,
                out_width: ow,
            }),
            _ => Err(Error::InvalidShape {
                op: "conv2d",
                shape: x.shape().to_vec(),
                reason: alloc::format!(
                    "kernel {kh} with stride {stride} and padding {padding} leaves no output"
                ),
            }),
        }
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn out_pixels(&self) -> usize {
        self.out_height * self.out_width
    }

    /// Input pixel read by output `(oy, ox)` at kernel tap `(ky, kx)`.
    #[inline]
    /// Output positions `lo..hi` along one axis whose tap at offset `kk`
    /// lands inside `0..extent`.
    fn valid(&self, kk: usize, extent: usize, out_extent: usize) -> (usize, usize) {
        let (s, p) = (self.stride, self.padding);
        let lo = if kk >= p { 0 } else { (p - kk).div_ceil(s) };
        let hi = if extent + p > kk { ((extent + p - kk - 1) / s + 1).min(out_extent) } else { 0 };
        (lo.min(hi), hi)
    }

    /// Unfolds one image `[Cin,H,W]` into columns `[Cin·k·k, Ho·Wo]`.
    fn im2col(&self, image: &[f64], cols: &mut [f64]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let (w, ow) = (self.width, self.out_width);
        let np = self.out_pixels();
        for c in 0..self.in_channels {
            let plane = &image[c * self.height * w..(c + 1) * self.height * w];
            for ky in 0..k {
                let (oy0, oy1) = self.valid(ky, self.height, self.out_height);
                for kx in 0..k {
                    let (ox0, ox1) = self.valid(kx, w, ow);
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut cols[row * np..(row + 1) * np];
                    dst[..oy0 * ow].fill(0.0);
                    dst[oy1 * ow..].fill(0.0);
                    for oy in oy0..oy1 {
                        let y = oy * s + ky - p;
                        let src = &plane[y * w..(y + 1) * w];
                        let d = &mut dst[oy * ow..(oy + 1) * ow];
                        d[..ox0].fill(0.0);
                        d[ox1..].fill(0.0);
                        if s == 1 {
                            let x0 = ox0 + kx - p;
                            d[ox0..ox1].copy_from_slice(&src[x0..x0 + ox1 - ox0]);
                        } else {
                            for ox in ox0..ox1 {
                                d[ox] = src[ox * s + kx - p];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Self::im2col`]: scatters columns back onto an image.
    fn col2im(&self, cols: &[f64], image: &mut [f64]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let (w, ow) = (self.width, self.out_width);
        let np = self.out_pixels();
        for c in 0..self.in_channels {
            let plane = &mut image[c * self.height * w..(c + 1) * self.height * w];
            for ky in 0..k {
                let (oy0, oy1) = self.valid(ky, self.height, self.out_height);
                for kx in 0..k {
                    let (ox0, ox1) = self.valid(kx, w, ow);
                    let row = (c * k + ky) * k + kx;
                    let src = &cols[row * np..(row + 1) * np];
                    for oy in oy0..oy1 {
                        let y = oy * s + ky - p;
                        let d = &mut plane[y * w..(y + 1) * w];
                        let sr = &src[oy * ow..(oy + 1) * ow];
                        if s == 1 {
                            let x0 = ox0 + kx - p;
                            for (o, v) in d[x0..x0 + ox1 - ox0].iter_mut().zip(&sr[ox0..ox1]) {
                                *o += v;
                            }
                        } else {
                            for ox in ox0..ox1 {
                                d[ox * s + kx - p] += sr[ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2D cross-correlation of `x: [B,Cin,H,W]` with `w: [Cout,Cin,k,k]`.
///
/// Each output starts from its bias and accumulates the taps in
/// `(channel, row, column)` order.
pub fn conv2d(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let g = ConvGeometry::new(x, w, stride, padding)?;
    if let Some(b) = bias {
        if b.shape() != [g.out_channels] {
            return Err(Error::ShapeMismatch {
                op: "conv2d bias",
                lhs: w.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
    }
    let np = g.out_pixels();
    let in_len = g.in_channels * g.height * g.width;
    let mut out = vec![0.0; g.batch * g.out_channels * np];
    let mut cols = vec![0.0; g.patch_len() * np];
    for n in 0..g.batch {
        g.im2col(&x.data()[n * in_len..(n + 1) * in_len], &mut cols);
        let dst = &mut out[n * g.out_channels * np..(n + 1) * g.out_channels * np];
        if let Some(b) = bias {
            for (co, chunk) in dst.chunks_mut(np).enumerate() {
                chunk.fill(b.data()[co]);
            }
        }
        gemm(w.data(), &cols, dst, g.out_channels, g.patch_len(), np);
    }
    Tensor::new([g.batch, g.out_channels, g.out_height, g.out_width], out)
}

/// Returns `(dx, dw, dbias)` for a convolution.
pub(crate) fn conv2d_backward(
    g: &ConvGeometry,
    x: &[f64],
    w: &[f64],
    gout: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let np = g.out_pixels();
    let pl = g.patch_len();
    let in_len = g.in_channels * g.height * g.width;
    let mut dx = vec![0.0; g.batch * in_len];
    let mut dw = vec![0.0; g.out_channels * pl];
    let mut db = vec![0.0; g.out_channels];
    let mut cols = vec![0.0; pl * np];
    let mut dcols = vec![0.0; pl * np];
    for n in 0..g.batch {
        let go = &gout[n * g.out_channels * np..(n + 1) * g.out_channels * np];
        for (co, chunk) in go.chunks(np).enumerate() {
            db[co] += chunk.iter().sum::<f64>();
        }
        g.im2col(&x[n * in_len..(n + 1) * in_len], &mut cols);
        gemm_nt(go, &cols, &mut dw, g.out_channels, np, pl);
        dcols.fill(0.0);
        gemm_tn(w, go, &mut dcols, pl, g.out_channels, np);
        g.col2im(&dcols, &mut dx[n * in_len..(n + 1) * in_len]);
    }
    (dx, dw, db)
}

// ---------------------------------------------------------------------------
// layout

/// Nearest-neighbour 2× upsampling of `[B,C,H,W]`.
pub fn upsample_nearest2x(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let mut out = vec![0.0; b * c * 4 * h * w];
    for plane in 0..b * c {
        let src = &x.data()[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * 4 * h * w..(plane + 1) * 4 * h * w];
        for y in 0..2 * h {
            for xx in 0..2 * w {
                dst[y * 2 * w + xx] = src[(y / 2) * w + xx / 2];
            }
        }
    }
    Tensor::new([b, c, 2 * h, 2 * w], out)
}

pub(crate) fn upsample_nearest2x_backward(gout: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let mut dx = vec![0.0; planes * h * w];
    for plane in 0..planes {
        let src = &gout[plane * 4 * h * w..(plane + 1) * 4 * h * w];
        let dst = &mut dx[plane * h * w..(plane + 1) * h * w];
        for y in 0..2 * h {
            for xx in 0..2 * w {
                dst[(y / 2) * w + xx / 2] += src[y * 2 * w + xx];
            }
        }
    }
    dx
}

/// `[B,C,H,W]` to channels-last rows `[B·H·W, C]`.
pub fn nchw_to_rows(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let hw = h * w;
    let mut out = vec![0.0; x.numel()];
    for n in 0..b {
        for ch in 0..c {
            let src = &x.data()[(n * c + ch) * hw..(n * c + ch + 1) * hw];
            for (p, &v) in src.iter().enumerate() {
                out[(n * hw + p) * c + ch] = v;
            }
        }
    }
    Tensor::new([b * hw, c], out)
}

/// Inverse of [`nchw_to_rows`].
pub fn rows_to_nchw(x: &Tensor, b: usize, h: usize, w: usize) -> Result<Tensor> {
    let (rows, c) = x.dims2()?;
    if rows != b * h * w {
        return Err(Error::InvalidShape {
            op: "rows_to_nchw",
            shape: x.shape().to_vec(),
            reason: alloc::format!("expected {} rows for {b}x{h}x{w}", b * h * w),
        });
    }
    let hw = h * w;
    let mut out = vec![0.0; x.numel()];
    for n in 0..b {
        for p in 0..hw {
            let src = &x.data()[(n * hw + p) * c..(n * hw + p + 1) * c];
            for (ch, &v) in src.iter().enumerate() {
                out[(n * c + ch) * hw + p] = v;
            }
        }
    }
    Tensor::new([b, c, h, w], out)
}

/// Concatenates two `[B,C,H,W]` tensors along the channel axis.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, ca, h, w) = a.dims4()?;
    let (n2, cb, h2, w2) = b.dims4()?;
    if (n, h, w) != (n2, h2, w2) {
        return Err(Error::ShapeMismatch {
            op: "concat_channels",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (la, lb) = (ca * h * w, cb * h * w);
    let mut out = Vec::with_capacity(a.numel() + b.numel());
    for i in 0..n {
        out.extend_from_slice(&a.data()[i * la..(i + 1) * la]);
        out.extend_from_slice(&b.data()[i * lb..(i + 1) * lb]);
    }
    Tensor::new([n, ca + cb, h, w], out)
}

/// Gathers rows within each of `batch` equal groups: output row `i` of a
/// group is input row `perm[i]` of the same group.
pub fn permute_rows(x: &Tensor, batch: usize, perm: &[usize]) -> Result<Tensor> {
    let (rows, c) = x.dims2()?;
    let len = perm.len();
    if batch * len != rows {
        return Err(Error::InvalidShape {
            op: "permute_rows",
            shape: x.shape().to_vec(),
            reason: alloc::format!("expected {batch} groups of {len} rows"),
        });
    }
    let mut out = vec![0.0; x.numel()];
    for n in 0..batch {
        for (i, &src) in perm.iter().enumerate() {
            let s = (n * len + src) * c;
            let d = (n * len + i) * c;
            out[d..d + c].copy_from_slice(&x.data()[s..s + c]);
        }
    }
    Tensor::new([rows, c], out)
}

/// Mean over the spatial axes: `[B,C,H,W]` to `[B,C]`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let hw = h * w;
    let out = x
        .data()
        .chunks(hw)
        .map(|plane| plane.iter().sum::<f64>() / hw as f64)
        .collect();
    Tensor::new([b, c], out)
}

/// Mean squared error over all elements.
pub fn mse(x: &Tensor, target: &Tensor) -> Result<f64> {
    x.expect_same_shape("mse", target)?;
    let total: f64 = x
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(total / x.numel() as f64)
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)`.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let (b, k) = logits.dims2()?;
    check_labels(labels, b, k)?;
    let mut total = 0.0;
    for (row, &label) in logits.data().chunks(k).zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + libm::log(row.iter().map(|v| libm::exp(v - max)).sum::<f64>());
        total += lse - row[label];
    }
    Ok(total / b as f64)
}

pub(crate) fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::ShapeMismatch {
            op: "cross_entropy labels",
            lhs: alloc::vec![rows, classes],
            rhs: alloc::vec![labels.len()],
        });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    Ok(())
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}
