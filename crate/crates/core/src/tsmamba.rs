//! Tri-orientated spatial Mamba: the 2D selective scan (SS2D), the TSMamba
//! block and the encoder stack.
//!
//! SS2D flattens an image into a pixel sequence along three orientations
//! (row-major forward, row-major backward, column-major forward), runs an
//! independently parameterized selective scan over each, maps the outputs
//! back to pixel positions and averages them.
//!
//! A block wires LayerNorm, SS2D and a per-pixel MLP with pre-norm residual
//! connections:
//!
//! ```text
//! x₁  = x  + W_out · ss2d(LN₁(x)) + b_out
//! out = x₁ + W₂ · silu(W₁ · LN₂(x₁) + b₁) + b₂
//! ```
//!
//! `W_out`, `b_out`, `W₂` and `b₂` start at zero, so a freshly built block is
//! exactly the identity.
//!
//! The encoder is `num_layers` stages of `[3×3 stride-2 conv → block]`. Its
//! parameter count is, per stage with input width `c_in`, width `c`, state
//! size `N` and MLP ratio `r`:
//!
//! ```text
//! conv  = 9·c·c_in + c
//! ss2d  = 3 · (c² + 2c + 3cN)        (Δ weights and bias, B, C, log A, D)
//! block = ss2d + (c² + c) + 4c + (r·c² + r·c) + (r·c² + c)
//! ```
//!
//! which [`encoder_param_count`] evaluates.

use alloc::vec;
use alloc::vec::Vec;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::ops;
use crate::params::{self, Bound, ParamId, ParamStore};
use crate::scan::ScanAlgo;
use crate::tensor::Tensor;

/// Pixel traversal order used to turn an image into a sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Orientation {
    RowMajorForward,
    RowMajorBackward,
    ColMajorForward,
}

impl Orientation {
    pub const ALL: [Orientation; 3] = [
        Orientation::RowMajorForward,
        Orientation::RowMajorBackward,
        Orientation::ColMajorForward,
    ];

    /// Row-major pixel index visited at each sequence position.
    pub fn order(self, height: usize, width: usize) -> Vec<usize> {
        let len = height * width;
        match self {
            Orientation::RowMajorForward => (0..len).collect(),
            Orientation::RowMajorBackward => (0..len).rev().collect(),
            Orientation::ColMajorForward => (0..width)
                .flat_map(|x| (0..height).map(move |y| y * width + x))
                .collect(),
        }
    }

    /// `[C,H,W]` image to a `[H·W, C]` sequence.
    pub fn flatten(self, image: &Tensor) -> Result<Tensor> {
        let (c, h, w) = image.dims3()?;
        let order = self.order(h, w);
        let mut out = vec![0.0; image.numel()];
        for (i, &p) in order.iter().enumerate() {
            for ch in 0..c {
                out[i * c + ch] = image.data()[ch * h * w + p];
            }
        }
        Tensor::new([h * w, c], out)
    }

    /// Inverse of [`Orientation::flatten`].
    pub fn unflatten(self, seq: &Tensor, height: usize, width: usize) -> Result<Tensor> {
        let (len, c) = seq.dims2()?;
        if len != height * width {
            return Err(Error::InvalidShape {
                op: "unflatten",
                shape: seq.shape().to_vec(),
                reason: alloc::format!("expected {} positions", height * width),
            });
        }
        let order = self.order(height, width);
        let mut out = vec![0.0; seq.numel()];
        for (i, &p) in order.iter().enumerate() {
            for ch in 0..c {
                out[ch * len + p] = seq.data()[i * c + ch];
            }
        }
        Tensor::new([c, height, width], out)
    }
}

fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Layer widths and sizes of the encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct TsMambaConfig {
    pub num_layers: usize,
    pub widths: Vec<usize>,
    pub d_state: usize,
    pub mlp_ratio: usize,
    pub image_height: usize,
    pub image_width: usize,
    pub in_channels: usize,
    pub scan: ScanAlgo,
}

impl Default for TsMambaConfig {
    fn default() -> Self {
        Self {
            num_layers: 4,
            widths: vec![16, 32, 64, 128],
            d_state: 8,
            mlp_ratio: 2,
            image_height: 64,
            image_width: 64,
            in_channels: 1,
            scan: ScanAlgo::Sequential,
        }
    }
}

impl TsMambaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.into()));
        if self.num_layers == 0 {
            return bad("num_layers must be at least 1");
        }
        if self.widths.len() != self.num_layers {
            return Err(Error::Config(alloc::format!(
                "{} widths for {} layers",
                self.widths.len(),
                self.num_layers
            )));
        }
        if self.widths.contains(&0)
            || self.d_state == 0
            || self.mlp_ratio == 0
            || self.in_channels == 0
        {
            return bad("widths, d_state, mlp_ratio and channels must be positive");
        }
        let factor = 1usize << self.num_layers;
        if self.image_height == 0
            || self.image_width == 0
            || !self.image_height.is_multiple_of(factor)
            || !self.image_width.is_multiple_of(factor)
        {
            return Err(Error::Config(alloc::format!(
                "image size {}x{} must be divisible by {factor}",
                self.image_height,
                self.image_width
            )));
        }
        Ok(())
    }

    /// Spatial size after stage `i` (0-based).
    pub fn stage_size(&self, i: usize) -> (usize, usize) {
        (self.image_height >> (i + 1), self.image_width >> (i + 1))
    }

    /// Input channel count of stage `i`.
    pub fn stage_input(&self, i: usize) -> usize {
        if i == 0 {
            self.in_channels
        } else {
            self.widths[i - 1]
        }
    }
}

/// Batch size and spatial extent of a channels-last feature map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpatialDims {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
}

impl SpatialDims {
    fn pixels(&self) -> usize {
        self.height * self.width
    }
}

/// Plain-tensor weights of one orientation's scan, for [`ss2d`].
#[derive(Clone, Debug, PartialEq)]
pub struct Ss2dWeights {
    /// `[C,C]` projection to the raw step size; `Δ = softplus(x·W + b)`.
    pub w_delta: Tensor,
    pub b_delta: Tensor,
    /// `[C,N]` projection producing `B_t`.
    pub w_b: Tensor,
    /// `[C,N]` projection producing `C_t`.
    pub w_c: Tensor,
    /// `[C,N]`; `A = −exp(log_a)`.
    pub log_a: Tensor,
    /// `[C]` direct feed-through.
    pub d_skip: Tensor,
}

impl Ss2dWeights {
    pub fn init(d_model: usize, d_state: usize, rng: &mut crate::Rng) -> Self {
        use rand::Rng as _;
        let b_delta = (0..d_model)
            .map(|_| {
                let dt = libm::exp(rng.gen_range(libm::log(1e-3)..libm::log(1e-1)));
                ops::inverse_softplus(dt)
            })
            .collect();
        let log_a = (0..d_model)
            .flat_map(|_| (0..d_state).map(|n| libm::log((n + 1) as f64)))
            .collect();
        Self {
            w_delta: params::fan_in_uniform([d_model, d_model], d_model, rng),
            b_delta: Tensor::new([d_model], b_delta).expect("shape"),
            w_b: params::fan_in_uniform([d_model, d_state], d_model, rng),
            w_c: params::fan_in_uniform([d_model, d_state], d_model, rng),
            log_a: Tensor::new([d_model, d_state], log_a).expect("shape"),
            d_skip: Tensor::full([d_model], 1.0).expect("shape"),
        }
    }

    fn into_array(self) -> [Tensor; 6] {
        [self.w_delta, self.b_delta, self.w_b, self.w_c, self.log_a, self.d_skip]
    }
}

const SCAN_PARAM_NAMES: [&str; 6] = ["w_delta", "b_delta", "w_b", "w_c", "log_a", "d_skip"];

/// Scans `x_rows: [B·H·W, C]` along all orientations and averages.
fn ss2d_rows(
    tape: &mut Tape,
    x_rows: Var,
    dims: SpatialDims,
    weights: &[[Var; 6]; 3],
    algo: ScanAlgo,
) -> Result<Var> {
    let mut merged: Option<Var> = None;
    for (orientation, w) in Orientation::ALL.iter().zip(weights) {
        let [w_delta, b_delta, w_b, w_c, log_a, d_skip] = *w;
        let order = orientation.order(dims.height, dims.width);
        let seq = tape.permute_rows(x_rows, dims.batch, &order)?;
        let raw = tape.linear(seq, w_delta, Some(b_delta))?;
        let delta = tape.softplus(raw);
        let b = tape.matmul(seq, w_b)?;
        let c = tape.matmul(seq, w_c)?;
        let a_pos = tape.exp(log_a);
        let a = tape.neg(a_pos);
        let y = tape.selective_scan(seq, delta, a, b, c, d_skip, dims.batch, algo)?;
        let back = tape.permute_rows(y, dims.batch, &inverse_permutation(&order))?;
        merged = Some(match merged {
            Some(acc) => tape.add(acc, back)?,
            None => back,
        });
    }
    let sum = merged.expect("three orientations");
    Ok(tape.scale(sum, 1.0 / 3.0))
}

/// SS2D on a plain `[B,C,H,W]` tensor with one weight set per orientation,
/// in [`Orientation::ALL`] order.
pub fn ss2d(x: &Tensor, weights: &[Ss2dWeights; 3], algo: ScanAlgo) -> Result<Tensor> {
    let (batch, _, height, width) = x.dims4()?;
    let mut tape = Tape::new();
    let input = tape.constant(x.clone());
    let rows = tape.nchw_to_rows(input)?;
    let vars = weights.clone().map(|w| w.into_array().map(|t| tape.constant(t)));
    let dims = SpatialDims {
        batch,
        height,
        width,
    };
    let y = ss2d_rows(&mut tape, rows, dims, &vars, algo)?;
    let out = tape.rows_to_nchw(y, batch, height, width)?;
    Ok(tape.value(out).clone())
}

/// SS2D parameters registered in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Ss2d {
    scans: [[ParamId; 6]; 3],
}

impl Ss2d {
    pub fn new(store: &mut ParamStore, prefix: &str, d_model: usize, d_state: usize, rng: &mut crate::Rng) -> Self {
        let scans = [0, 1, 2].map(|o| {
            let w = Ss2dWeights::init(d_model, d_state, rng).into_array();
            let mut ids = w.into_iter().zip(SCAN_PARAM_NAMES).map(|(t, name)| {
                store.add(alloc::format!("{prefix}.scan{o}.{name}"), t)
            });
            [(); 6].map(|_| ids.next().expect("six parameters"))
        });
        Self { scans }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x_rows: Var,
        dims: SpatialDims,
        algo: ScanAlgo,
    ) -> Result<Var> {
        let vars = self.scans.map(|ids| ids.map(|id| bound[id]));
        ss2d_rows(tape, x_rows, dims, &vars, algo)
    }
}

/// LayerNorm → SS2D → MLP with pre-norm residual wiring.
#[derive(Clone, Debug)]
pub struct TsMambaBlock {
    ln1: (ParamId, ParamId),
    ss2d: Ss2d,
    out_w: ParamId,
    out_b: ParamId,
    ln2: (ParamId, ParamId),
    mlp_w1: ParamId,
    mlp_b1: ParamId,
    mlp_w2: ParamId,
    mlp_b2: ParamId,
}

impl TsMambaBlock {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        width: usize,
        d_state: usize,
        mlp_ratio: usize,
        rng: &mut crate::Rng,
    ) -> Self {
        let hidden = width * mlp_ratio;
        let mut add = |name: &str, t: Tensor| store.add(alloc::format!("{prefix}.{name}"), t);
        let ones = |n| Tensor::full([n], 1.0).expect("shape");
        let zeros = |s: &[usize]| Tensor::zeros(s.to_vec()).expect("shape");
        let ln1 = (add("ln1.gamma", ones(width)), add("ln1.beta", zeros(&[width])));
        let ss2d = {
            let ss2d_prefix = alloc::format!("{prefix}.ss2d");
            Ss2d::new(store, &ss2d_prefix, width, d_state, rng)
        };
        let mut add = |name: &str, t: Tensor| store.add(alloc::format!("{prefix}.{name}"), t);
        let out_w = add("out.w", zeros(&[width, width]));
        let out_b = add("out.b", zeros(&[width]));
        let ln2 = (add("ln2.gamma", ones(width)), add("ln2.beta", zeros(&[width])));
        let mlp_w1 = add("mlp.w1", params::fan_in_uniform([width, hidden], width, rng));
        let mlp_b1 = add("mlp.b1", zeros(&[hidden]));
        let mlp_w2 = add("mlp.w2", zeros(&[hidden, width]));
        let mlp_b2 = add("mlp.b2", zeros(&[width]));
        Self {
            ln1,
            ss2d,
            out_w,
            out_b,
            ln2,
            mlp_w1,
            mlp_b1,
            mlp_w2,
            mlp_b2,
        }
    }

    /// `x_rows: [B·H·W, C]` to the same shape.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x_rows: Var,
        dims: SpatialDims,
        algo: ScanAlgo,
    ) -> Result<Var> {
        let rows = tape.value(x_rows).shape()[0];
        if rows != dims.batch * dims.pixels() {
            return Err(Error::InvalidShape {
                op: "tsmamba block",
                shape: tape.value(x_rows).shape().to_vec(),
                reason: alloc::format!("expected {} rows", dims.batch * dims.pixels()),
            });
        }
        let h1 = tape.layernorm(x_rows, bound[self.ln1.0], bound[self.ln1.1], ops::LAYERNORM_EPS)?;
        let s = self.ss2d.forward(tape, bound, h1, dims, algo)?;
        let s = tape.linear(s, bound[self.out_w], Some(bound[self.out_b]))?;
        let x1 = tape.add(x_rows, s)?;
        let h2 = tape.layernorm(x1, bound[self.ln2.0], bound[self.ln2.1], ops::LAYERNORM_EPS)?;
        let m = tape.linear(h2, bound[self.mlp_w1], Some(bound[self.mlp_b1]))?;
        let m = tape.silu(m);
        let m = tape.linear(m, bound[self.mlp_w2], Some(bound[self.mlp_b2]))?;
        tape.add(x1, m)
    }
}

#[derive(Clone, Debug)]
struct EncoderStage {
    conv_w: ParamId,
    conv_b: ParamId,
    block: TsMambaBlock,
}

/// Final latent plus the feature map after every stage (the last one is the
/// latent itself), all `[B,C,H,W]`.
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    pub latent: Var,
    pub skips: Vec<Var>,
}

/// Stack of `[stride-2 conv → TSMamba block]` stages.
#[derive(Clone, Debug)]
pub struct Encoder {
    config: TsMambaConfig,
    stages: Vec<EncoderStage>,
}

impl Encoder {
    pub fn new(config: &TsMambaConfig, store: &mut ParamStore, prefix: &str, rng: &mut crate::Rng) -> Result<Self> {
        config.validate()?;
        let stages = (0..config.num_layers)
            .map(|i| {
                let cin = config.stage_input(i);
                let c = config.widths[i];
                let conv_w = store.add(
                    alloc::format!("{prefix}.{i}.conv.w"),
                    params::kaiming_uniform([c, cin, 3, 3], cin * 9, rng),
                );
                let conv_b = store.add(alloc::format!("{prefix}.{i}.conv.b"), Tensor::zeros([c]).expect("shape"));
                let block = TsMambaBlock::new(
                    store,
                    &alloc::format!("{prefix}.{i}.block"),
                    c,
                    config.d_state,
                    config.mlp_ratio,
                    rng,
                );
                EncoderStage {
                    conv_w,
                    conv_b,
                    block,
                }
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            stages,
        })
    }

    pub fn config(&self) -> &TsMambaConfig {
        &self.config
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<usize> {
        let c = &self.config;
        match *shape {
            [b, ch, h, w] if ch == c.in_channels && h == c.image_height && w == c.image_width => Ok(b),
            _ => Err(Error::ShapeMismatch {
                op: "encoder input",
                lhs: shape.to_vec(),
                rhs: vec![0, c.in_channels, c.image_height, c.image_width],
            }),
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<EncoderOutput> {
        let batch = self.check_input(tape.value(x).shape())?;
        let mut cur = x;
        let mut skips = Vec::with_capacity(self.stages.len());
        for (i, stage) in self.stages.iter().enumerate() {
            cur = tape.conv2d(cur, bound[stage.conv_w], Some(bound[stage.conv_b]), 2, 1)?;
            let (height, width) = self.config.stage_size(i);
            let dims = SpatialDims {
                batch,
                height,
                width,
            };
            let rows = tape.nchw_to_rows(cur)?;
            let rows = stage.block.forward(tape, bound, rows, dims, self.config.scan)?;
            cur = tape.rows_to_nchw(rows, batch, height, width)?;
            skips.push(cur);
        }
        Ok(EncoderOutput { latent: cur, skips })
    }
}

/// Scalars in one SS2D layer of width `c` with `n` states.
pub fn ss2d_param_count(c: usize, n: usize) -> usize {
    3 * (c * c + 2 * c + 3 * c * n)
}

/// Scalars in one TSMamba block.
pub fn block_param_count(c: usize, n: usize, r: usize) -> usize {
    ss2d_param_count(c, n) + (c * c + c) + 4 * c + (r * c * c + r * c) + (r * c * c + c)
}

/// Closed-form scalar count of an [`Encoder`] built from `config`.
pub fn encoder_param_count(config: &TsMambaConfig) -> usize {
    (0..config.num_layers)
        .map(|i| {
            let c = config.widths[i];
            params::conv_param_count(c, 3, config.stage_input(i), true)
                + block_param_count(c, config.d_state, config.mlp_ratio)
        })
        .sum()
}
