//! Finite-difference check instances for every differentiable tape op and
//! for the two training losses.
//!
//! Each op case builds a small random graph from a seed, reduces its output
//! to a scalar with fixed random weights and compares reverse-mode gradients
//! against central differences for every input.

use alloc::vec;
use alloc::vec::Vec;

use crate::autoencoder::AeModel;
use crate::autograd::{Tape, Var};
use crate::classifier::{ClassifierConfig, ClassifierModel};
use crate::error::Result;
use crate::gradcheck::{self, GradCheckReport};
use crate::ops;
use crate::params::{Bound, ParamStore};
use crate::scan::ScanAlgo;
use crate::tensor::Tensor;
use crate::tsmamba::{SpatialDims, TsMambaBlock, TsMambaConfig};

/// One named op check.
#[derive(Clone, Copy)]
pub struct OpCase {
    pub name: &'static str,
    pub run: fn(u64) -> Result<GradCheckReport>,
}

impl core::fmt::Debug for OpCase {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name)
    }
}

/// Result of checking a whole model graph.
#[derive(Clone, Debug)]
pub struct GraphCheck {
    pub param_count: usize,
    pub report: GradCheckReport,
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut crate::Rng) -> Tensor {
    Tensor::uniform(shape.to_vec(), lo, hi, rng).expect("positive extents")
}

/// Uniform values with magnitude at least `gap`, away from kinks at zero.
fn off_zero(shape: &[usize], gap: f64, rng: &mut crate::Rng) -> Tensor {
    uniform(shape, -1.0, 1.0, rng).map(|v| if v < 0.0 { v - gap } else { v + gap })
}

fn reduced(
    rng: &mut crate::Rng,
    inputs: Vec<Tensor>,
    f: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) -> Result<GradCheckReport> {
    let shape = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        tape.value(out).shape().to_vec()
    };
    let weights = (!shape.is_empty()).then(|| uniform(&shape, -1.0, 1.0, rng));
    gradcheck::check_gradients(&inputs, gradcheck::STEP, |tape, v| {
        let y = f(tape, v)?;
        match &weights {
            Some(w) => gradcheck::weighted_sum(tape, y, w),
            None => Ok(y),
        }
    })
}

fn unary(seed: u64, shape: &[usize], f: fn(&mut Tape, Var) -> Var) -> Result<GradCheckReport> {
    let mut rng = crate::seeded_rng(seed);
    let x = uniform(shape, -2.0, 2.0, &mut rng);
    reduced(&mut rng, vec![x], |t, v| Ok(f(t, v[0])))
}

fn binary(seed: u64, f: fn(&mut Tape, Var, Var) -> Result<Var>) -> Result<GradCheckReport> {
    let mut rng = crate::seeded_rng(seed);
    let a = uniform(&[3, 4], -1.0, 1.0, &mut rng);
    let b = uniform(&[3, 4], -1.0, 1.0, &mut rng);
    reduced(&mut rng, vec![a, b], |t, v| f(t, v[0], v[1]))
}

fn conv_case(seed: u64, stride: usize, padding: usize, kernel: usize) -> Result<GradCheckReport> {
    let mut rng = crate::seeded_rng(seed);
    let x = uniform(&[2, 2, 5, 6], -1.0, 1.0, &mut rng);
    let w = uniform(&[3, 2, kernel, kernel], -1.0, 1.0, &mut rng);
    let b = uniform(&[3], -1.0, 1.0, &mut rng);
    reduced(&mut rng, vec![x, w, b], move |t, v| t.conv2d(v[0], v[1], Some(v[2]), stride, padding))
}

fn scan_case(seed: u64, algo: ScanAlgo) -> Result<GradCheckReport> {
    let (batch, len, d, n) = (2, 5, 2, 3);
    let mut rng = crate::seeded_rng(seed);
    let u = uniform(&[batch * len, d], -1.0, 1.0, &mut rng);
    let delta = uniform(&[batch * len, d], 0.05, 0.5, &mut rng);
    let a = uniform(&[d, n], -2.0, -0.2, &mut rng);
    let b = uniform(&[batch * len, n], -1.0, 1.0, &mut rng);
    let c = uniform(&[batch * len, n], -1.0, 1.0, &mut rng);
    let skip = uniform(&[d], -1.0, 1.0, &mut rng);
    reduced(&mut rng, vec![u, delta, a, b, c, skip], move |t, v| {
        t.selective_scan(v[0], v[1], v[2], v[3], v[4], v[5], batch, algo)
    })
}

fn case_add(seed: u64) -> Result<GradCheckReport> {
    binary(seed, |t, a, b| t.add(a, b))
}

fn case_sub(seed: u64) -> Result<GradCheckReport> {
    binary(seed, |t, a, b| t.sub(a, b))
}

fn case_mul(seed: u64) -> Result<GradCheckReport> {
    binary(seed, |t, a, b| t.mul(a, b))
}

fn case_scale(seed: u64) -> Result<GradCheckReport> {
    unary(seed, &[3, 4], |t, x| t.scale(x, -1.75))
}

fn case_add_row(seed: u64) -> Result<GradCheckReport> {
    let mut rng = crate::seeded_rng(seed);
    let x = uniform(&[4, 3], -1.0, 1.0, &mut rng);
    let row = uniform(&[3], -1.0, 1.0, &mut rng);
    reduced(&mut rng, vec![x, row], |t, v| t.add_row(v[0], v[1]))
}

fn case_matmul(seed: u64) -> Result<GradCheckReport> {
    let mut rng = crate::seeded_rng(seed);
    let a = uniform(&[3, 4], -1.0, 1.0, &mut rng);
    let b = uniform(&[4, 5], -1.0, 1.0, &mut rng);
    reduced(&mut rng, vec![a, b], |t, v| t.matmul(v[0], v[1]))
}

fn case_linear(seed: u64) -> Result<GradCheckReport> {
    let mut rng = crate::seeded_rng(seed);
    let x = uniform(&[4, 3], -1.0, 1.0, &mut rng);
    let w = uniform(&[3, 2], -1.0, 1.0, &mut rng);
    let b = uniform(&[2], -1.0, 1.0, &mut rng);
    reduced(&mut rng, vec![x, w, b], |t, v| t.linear(v[0], v[1], Some(v[2])))
}

fn case_relu(seed: u64) -> Result<GradCheckReport> {
    let mut rng = crate::seeded_rng(seed);
    let x = off_zero(&[3, 4], 0.05, &mut rng);
    reduced(&mut rng, vec![x], |t, v| Ok(t.relu(v[0])))
}

fn case_silu(seed: u64) -> Result<GradCheckReport> {
    unary(seed, &[3, 4], |t, x| t.silu(x))
}

fn case_sigmoid(seed: u64) -> Result<GradCheckReport> {
    unary(seed, &[3, 4], |t, x| t.sigmoid(x))
}

fn case_softplus(seed: u64) -> Result<GradCheckReport> {
    unary(seed, &[3, 4], |t, x| t.softplus(x))
}

fn case_exp(seed: u64) -> Result<GradCheckReport> {
    unary(seed, &[3, 4], |t, x| t.exp(x))
}

fn case_neg(seed: u64) -> Result<GradCheckReport> {
    unary(seed, &[3, 4], |t, x| t.neg(x))
}

fn case_softmax(seed: u64) -> Result<GradCheckReport> {
    let mut rng = crate::seeded_rng(seed);
    let x = uniform(&[3, 5], -2.0, 2.0, &mut rng);
    reduced(&mut rng, vec![x], |t, v| t.softmax_lastaxis(v[0]))
}

fn case_layernorm(seed: u64) -> Result<GradCheckReport> {
    let mut rng = crate::seeded_rng(seed);
    let x = uniform(&[4, 5], -2.0, 2.0, &mut rng);
    let gamma = uniform(&[5], 0.5, 1.5, &mut rng);
    let beta = uniform(&[5], -0.5, 0.5, &mut rng);
    reduced(&mut rng, vec![x, gamma, beta], |t, v| t.layernorm(v[0], v[1], v[2], ops::LAYERNORM_EPS))
}

fn case_conv_same(seed: u64) -> Result<GradCheckReport> {
    conv_case(seed, 1, 1, 3)
}

fn case_conv_strided(seed: u64) -> Result<GradCheckReport> {
    conv_case(seed, 2, 1, 3)
}

fn case_conv_pointwise(seed: u64) -> Result<GradCheckReport> {
    conv_case(seed, 2, 0, 1)
}

fn case_upsample(seed: u64) -> Result<GradCheckReport> {
    let mut rng = crate::seeded_rng(seed);
    let x = uniform(&[2, 2, 2, 3], -1.0, 1.0, &mut rng);
    reduced(&mut rng, vec![x], |t, v| t.upsample_nearest2x(v[0]))
}

fn case_concat(seed: u64) -> Result<GradCheckReport> {
    let mut rng = crate::seeded_rng(seed);
    let a = uniform(&[2, 1, 3, 2], -1.0, 1.0, &mut rng);
    let b = uniform(&[2, 3, 3, 2], -1.0, 1.0, &mut rng);
    reduced(&mut rng, vec![a, b], |t, v| t.concat_channels(v[0], v[1]))
}

fn case_nchw_to_rows(seed: u64) -> Result<GradCheckReport> {
    let mut rng = crate::seeded_rng(seed);
    let x = uniform(&[2, 3, 2, 2], -1.0, 1.0, &mut rng);
    reduced(&mut rng, vec![x], |t, v| t.nchw_to_rows(v[0]))
}

fn case_rows_to_nchw(seed: u64) -> Result<GradCheckReport> {
    let mut rng = crate::seeded_rng(seed);
    let x = uniform(&[12, 3], -1.0, 1.0, &mut rng);
    reduced(&mut rng, vec![x], |t, v| t.rows_to_nchw(v[0], 2, 2, 3))
}

fn case_permute_rows(seed: u64) -> Result<GradCheckReport> {
    let mut rng = crate::seeded_rng(seed);
    let x = uniform(&[8, 3], -1.0, 1.0, &mut rng);
    reduced(&mut rng, vec![x], |t, v| t.permute_rows(v[0], 2, &[2, 0, 3, 1]))
}

fn case_scan_seq(seed: u64) -> Result<GradCheckReport> {
    scan_case(seed, ScanAlgo::Sequential)
}

fn case_scan_par(seed: u64) -> Result<GradCheckReport> {
    scan_case(seed, ScanAlgo::Parallel)
}

fn case_global_avg_pool(seed: u64) -> Result<GradCheckReport> {
    let mut rng = crate::seeded_rng(seed);
    let x = uniform(&[2, 3, 2, 3], -1.0, 1.0, &mut rng);
    reduced(&mut rng, vec![x], |t, v| t.global_avg_pool(v[0]))
}

fn case_reshape(seed: u64) -> Result<GradCheckReport> {
    let mut rng = crate::seeded_rng(seed);
    let x = uniform(&[2, 6], -1.0, 1.0, &mut rng);
    reduced(&mut rng, vec![x], |t, v| t.reshape(v[0], &[3, 2, 2]))
}

fn case_sum(seed: u64) -> Result<GradCheckReport> {
    unary(seed, &[3, 4], |t, x| t.sum(x))
}

fn case_mean(seed: u64) -> Result<GradCheckReport> {
    unary(seed, &[3, 4], |t, x| t.mean(x))
}

fn case_mse(seed: u64) -> Result<GradCheckReport> {
    let mut rng = crate::seeded_rng(seed);
    let x = uniform(&[2, 1, 2, 3], 0.0, 1.0, &mut rng);
    let target = uniform(&[2, 1, 2, 3], 0.0, 1.0, &mut rng);
    reduced(&mut rng, vec![x], move |t, v| t.mse(v[0], &target))
}

fn case_cross_entropy(seed: u64) -> Result<GradCheckReport> {
    use rand::Rng as _;
    let mut rng = crate::seeded_rng(seed);
    let logits = uniform(&[4, 3], -2.0, 2.0, &mut rng);
    let labels: Vec<usize> = (0..4).map(|_| rng.gen_range(0..3)).collect();
    reduced(&mut rng, vec![logits], move |t, v| t.cross_entropy(v[0], &labels))
}

/// Every differentiable tape op, with convolution in three geometries and
/// the scan through both algorithms.
pub fn op_cases() -> Vec<OpCase> {
    macro_rules! cases {
        ($($name:literal => $f:ident),* $(,)?) => {
            vec![$(OpCase { name: $name, run: $f }),*]
        };
    }
    cases![
        "add" => case_add,
        "sub" => case_sub,
        "mul" => case_mul,
        "scale" => case_scale,
        "add_row" => case_add_row,
        "matmul" => case_matmul,
        "linear" => case_linear,
        "relu" => case_relu,
        "silu" => case_silu,
        "sigmoid" => case_sigmoid,
        "softplus" => case_softplus,
        "exp" => case_exp,
        "neg" => case_neg,
        "softmax_lastaxis" => case_softmax,
        "layernorm" => case_layernorm,
        "conv2d/3x3-s1-p1" => case_conv_same,
        "conv2d/3x3-s2-p1" => case_conv_strided,
        "conv2d/1x1-s2-p0" => case_conv_pointwise,
        "upsample_nearest2x" => case_upsample,
        "concat_channels" => case_concat,
        "nchw_to_rows" => case_nchw_to_rows,
        "rows_to_nchw" => case_rows_to_nchw,
        "permute_rows" => case_permute_rows,
        "selective_scan/seq" => case_scan_seq,
        "selective_scan/par" => case_scan_par,
        "global_avg_pool" => case_global_avg_pool,
        "reshape" => case_reshape,
        "sum" => case_sum,
        "mean" => case_mean,
        "mse" => case_mse,
        "cross_entropy" => case_cross_entropy,
    ]
}

/// Adds uniform noise to every parameter so zero-initialized paths carry
/// gradient too. Step-size biases are re-drawn near zero: at their initial
/// values the decays are so close to one that `∂/∂A` sinks into
/// finite-difference round-off.
fn jitter(store: &mut ParamStore, amount: f64, rng: &mut crate::Rng) {
    use rand::Rng as _;
    let names = store.names().to_vec();
    for (name, t) in names.iter().zip(store.tensors_mut()) {
        let recenter = name.ends_with(".b_delta");
        for v in t.data_mut() {
            if recenter {
                *v = rng.gen_range(-0.5..0.5);
            } else {
                *v += rng.gen_range(-amount..amount);
            }
        }
    }
}

fn model_check(
    store: &ParamStore,
    x: Tensor,
    loss: impl Fn(&mut Tape, &Bound, Var) -> Result<Var>,
) -> Result<GraphCheck> {
    let mut inputs = vec![x];
    inputs.extend(store.tensors().iter().cloned());
    let report = gradcheck::check_gradients(&inputs, gradcheck::STEP, |tape, v| {
        let bound = Bound::from_vars(v[1..].to_vec());
        loss(tape, &bound, v[0])
    })?;
    Ok(GraphCheck {
        param_count: store.count(),
        report,
    })
}

/// One TSMamba block on a `1×4×4` map with four channels, all parameters
/// jittered away from their initial values.
pub fn block_check(seed: u64, algo: ScanAlgo) -> Result<GraphCheck> {
    let mut rng = crate::seeded_rng(seed);
    let mut store = ParamStore::new();
    let block = TsMambaBlock::new(&mut store, "block", 4, 2, 2, &mut rng);
    jitter(&mut store, 0.3, &mut rng);
    let dims = SpatialDims {
        batch: 1,
        height: 4,
        width: 4,
    };
    let x = uniform(&[16, 4], -1.0, 1.0, &mut rng);
    let weights = uniform(&[16, 4], -1.0, 1.0, &mut rng);
    model_check(&store, x, |tape, bound, x| {
        let y = block.forward(tape, bound, x, dims, algo)?;
        gradcheck::weighted_sum(tape, y, &weights)
    })
}

/// Configuration of the autoencoder used in [`ae_loss_check`]: `16×16`
/// single-channel input, four stages.
pub fn tiny_ae_config() -> TsMambaConfig {
    TsMambaConfig {
        num_layers: 4,
        widths: vec![2, 3, 3, 4],
        d_state: 2,
        mlp_ratio: 1,
        image_height: 16,
        image_width: 16,
        in_channels: 1,
        scan: ScanAlgo::Sequential,
    }
}

/// Reconstruction MSE of the full encoder/decoder graph against its input.
pub fn ae_loss_check(seed: u64) -> Result<GraphCheck> {
    let mut model = AeModel::new(&tiny_ae_config(), seed)?;
    let mut rng = crate::seeded_rng(seed ^ 0x5eed);
    jitter(model.params_mut(), 0.2, &mut rng);
    let x = uniform(&[1, 1, 16, 16], 0.0, 1.0, &mut rng);
    let target = x.clone();
    model_check(model.params(), x, |tape, bound, x| {
        let y = model.forward(tape, bound, x)?;
        tape.mse(y, &target)
    })
}

/// Configuration of the classifier used in [`classifier_loss_check`].
pub fn tiny_classifier_config() -> ClassifierConfig {
    ClassifierConfig {
        in_channels: 1,
        image_height: 8,
        image_width: 8,
        num_classes: 2,
        stem_width: 3,
        stem_kernel: 3,
        stem_stride: 1,
        widths: vec![3, 4],
        blocks: vec![1, 1],
    }
}

/// Cross-entropy of the classifier on a batch of two residual images.
pub fn classifier_loss_check(seed: u64) -> Result<GraphCheck> {
    let mut model = ClassifierModel::new(&tiny_classifier_config(), seed)?;
    let mut rng = crate::seeded_rng(seed ^ 0xc1a5);
    jitter(model.params_mut(), 0.3, &mut rng);
    let x = uniform(&[2, 1, 8, 8], 0.0, 1.0, &mut rng);
    model_check(model.params(), x, |tape, bound, x| {
        let logits = model.forward(tape, bound, x)?;
        tape.cross_entropy(logits, &[0, 1])
    })
}
