//! Selective state-space scan.
//!
//! For every channel `d` and state index `n`, starting from `h = 0`:
//!
//! ```text
//! Ā_t  = exp(Δ_t[d] · A[d,n])
//! B̄_t  = Δ_t[d] · B_t[n]
//! h_t  = Ā_t · h_{t−1} + B̄_t · u_t[d]
//! y_t[d] = Σ_n C_t[n] · h_t[d,n] + D[d] · u_t[d]
//! ```
//!
//! `Δ`, `B` and `C` vary with the step (they are projections of the input
//! sequence); `A` and `D` do not. The recurrence is an affine map
//! `h ↦ a·h + b` per step, and affine maps compose associatively:
//! `(a₁,b₁)` followed by `(a₂,b₂)` is `(a₂a₁, a₂b₁ + b₂)`. That is what
//! [`affine_scan_blelloch`] exploits: an up-sweep/down-sweep prefix scan with
//! O(L) work over a fixed reduction tree per block of [`SCAN_BLOCK`] steps,
//! so its result does not depend on how many workers evaluate a level.

use alloc::vec;
use alloc::vec::Vec;

use crate::autograd::Tape;
use crate::error::{Error, Result};
use crate::gradcheck::{self, GradCheckReport};
use crate::tensor::Tensor;

/// Which evaluation order the scan uses. Both give the same values up to
/// floating-point reassociation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ScanAlgo {
    /// Step-by-step recurrence.
    #[default]
    Sequential,
    /// Blelloch prefix scan over the associative affine composition.
    Parallel,
}

impl core::str::FromStr for ScanAlgo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "seq" | "sequential" => Ok(Self::Sequential),
            "par" | "parallel" => Ok(Self::Parallel),
            other => Err(Error::Config(alloc::format!("unknown scan algorithm `{other}`"))),
        }
    }
}

/// `h_t = a_t · h_{t−1} + b_t` over `a.len() / lanes` steps of `lanes`
/// independent channels laid out `[step][lane]`, with `h_{−1} = 0`.
/// On return `b` holds `h`.
pub fn affine_scan_seq(a: &[f64], b: &mut [f64], lanes: usize) {
    let len = a.len() / lanes;
    for t in 1..len {
        let (done, rest) = b.split_at_mut(t * lanes);
        let prev = &done[(t - 1) * lanes..];
        let cur = &mut rest[..lanes];
        let coeff = &a[t * lanes..(t + 1) * lanes];
        for ((h, &p), &c) in cur.iter_mut().zip(prev).zip(coeff) {
            *h += c * p;
        }
    }
}

/// Steps per block of the parallel scan. Blocks are scanned one after the
/// other so the working set stays in cache for long sequences.
pub const SCAN_BLOCK: usize = 256;

/// Same contract as [`affine_scan_seq`], computed with a work-efficient
/// Blelloch scan inside blocks of [`SCAN_BLOCK`] steps. Each block starts
/// from the last state of the one before, folded into its first step.
pub fn affine_scan_blelloch(a: &[f64], b: &mut [f64], lanes: usize) {
    let len = a.len() / lanes;
    let block = SCAN_BLOCK * lanes;
    for start in (0..len).map(|t| t * lanes).step_by(SCAN_BLOCK) {
        let end = (start + block).min(len * lanes);
        if start > 0 {
            carry_in(&a[start..start + lanes], b, start, lanes);
        }
        blelloch_block(&a[start..end], &mut b[start..end], lanes);
    }
}

/// `b[start..]` first step += `a` · previous state.
fn carry_in(a: &[f64], b: &mut [f64], start: usize, lanes: usize) {
    let (prev, cur) = b.split_at_mut(start);
    let prev = &prev[start - lanes..];
    for ((h, &p), &c) in cur[..lanes].iter_mut().zip(prev).zip(a) {
        *h += c * p;
    }
}

fn blelloch_block(a: &[f64], b: &mut [f64], lanes: usize) {
    let len = a.len() / lanes;
    if len == 0 {
        return;
    }
    let padded = len.next_power_of_two();
    // Padding steps are the identity map (1, 0).
    let mut pa = vec![1.0; padded * lanes];
    let mut pb = vec![0.0; padded * lanes];
    pa[..len * lanes].copy_from_slice(a);
    pb[..len * lanes].copy_from_slice(b);

    // Up-sweep: each right node becomes the composition of its subtree.
    let mut span = 1;
    while span < padded {
        for_each_block(&mut pa, &mut pb, 2 * span * lanes, |ca, cb| {
            let (left_a, right_a) = ca.split_at_mut((2 * span - 1) * lanes);
            let (left_b, right_b) = cb.split_at_mut((2 * span - 1) * lanes);
            let left_a = &left_a[(span - 1) * lanes..];
            let left_b = &left_b[(span - 1) * lanes..];
            for i in 0..lanes {
                right_b[i] += right_a[i] * left_b[i];
                right_a[i] *= left_a[i];
            }
        });
        span *= 2;
    }

    // Down-sweep: every node receives the composition of everything before it.
    pa[(padded - 1) * lanes..].fill(1.0);
    pb[(padded - 1) * lanes..].fill(0.0);
    span = padded / 2;
    while span >= 1 {
        for_each_block(&mut pa, &mut pb, 2 * span * lanes, |ca, cb| {
            let (left_a, right_a) = ca.split_at_mut((2 * span - 1) * lanes);
            let (left_b, right_b) = cb.split_at_mut((2 * span - 1) * lanes);
            let left_a = &mut left_a[(span - 1) * lanes..];
            let left_b = &mut left_b[(span - 1) * lanes..];
            for i in 0..lanes {
                let (sub_a, sub_b) = (left_a[i], left_b[i]);
                let (pre_a, pre_b) = (right_a[i], right_b[i]);
                left_a[i] = pre_a;
                left_b[i] = pre_b;
                right_a[i] = sub_a * pre_a;
                right_b[i] = sub_a * pre_b + sub_b;
            }
        });
        span /= 2;
    }

    // Exclusive prefix applied to h = 0 is its offset; append the own step.
    for t in 0..len {
        for i in 0..lanes {
            let k = t * lanes + i;
            b[k] += a[k] * pb[k];
        }
    }
}

#[cfg(feature = "parallel")]
fn for_each_block<F>(pa: &mut [f64], pb: &mut [f64], block: usize, f: F)
where
    F: Fn(&mut [f64], &mut [f64]) + Send + Sync,
{
    use rayon::prelude::*;
    pa.par_chunks_mut(block)
        .zip(pb.par_chunks_mut(block))
        .for_each(|(x, y)| f(x, y));
}

#[cfg(not(feature = "parallel"))]
fn for_each_block<F>(pa: &mut [f64], pb: &mut [f64], block: usize, f: F)
where
    F: Fn(&mut [f64], &mut [f64]),
{
    for (x, y) in pa.chunks_mut(block).zip(pb.chunks_mut(block)) {
        f(x, y);
    }
}

/// Runs the scan with the requested algorithm.
pub fn affine_scan(algo: ScanAlgo, a: &[f64], b: &mut [f64], lanes: usize) {
    match algo {
        ScanAlgo::Sequential => affine_scan_seq(a, b, lanes),
        ScanAlgo::Parallel => affine_scan_blelloch(a, b, lanes),
    }
}

// ---------------------------------------------------------------------------
// batched kernel shared by the public functions and the tape op

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ScanDims {
    pub batch: usize,
    pub len: usize,
    pub d_model: usize,
    pub d_state: usize,
}

impl ScanDims {
    pub fn rows(&self) -> usize {
        self.batch * self.len
    }

    fn lanes(&self) -> usize {
        self.d_model * self.d_state
    }

    pub fn infer(
        u: &Tensor,
        delta: &Tensor,
        a: &Tensor,
        b: &Tensor,
        c: &Tensor,
        d_skip: &Tensor,
        batch: usize,
    ) -> Result<Self> {
        let (rows, d_model) = u.dims2()?;
        let (ad, d_state) = a.dims2()?;
        let mismatch = |name: &'static str, t: &Tensor| Error::ShapeMismatch {
            op: name,
            lhs: u.shape().to_vec(),
            rhs: t.shape().to_vec(),
        };
        if delta.shape() != u.shape() {
            return Err(mismatch("selective scan delta", delta));
        }
        if ad != d_model {
            return Err(mismatch("selective scan A", a));
        }
        if b.shape() != [rows, d_state] {
            return Err(mismatch("selective scan B", b));
        }
        if c.shape() != [rows, d_state] {
            return Err(mismatch("selective scan C", c));
        }
        if d_skip.shape() != [d_model] {
            return Err(mismatch("selective scan D", d_skip));
        }
        if batch == 0 || rows % batch != 0 {
            return Err(Error::InvalidShape {
                op: "selective scan",
                shape: u.shape().to_vec(),
                reason: alloc::format!("{rows} rows do not split into {batch} sequences"),
            });
        }
        Ok(Self {
            batch,
            len: rows / batch,
            d_model,
            d_state,
        })
    }
}

pub(crate) struct ScanInputs<'a> {
    pub u: &'a [f64],
    pub delta: &'a [f64],
    pub a: &'a [f64],
    pub b: &'a [f64],
    pub c: &'a [f64],
    pub d_skip: &'a [f64],
}

impl ScanInputs<'_> {
    /// Per-step decay `exp(Δ_t[d] · A[d,n])` for one sequence, `[L][D·N]`.
    fn decay(&self, dims: &ScanDims, seq: usize) -> Vec<f64> {
        let (dm, ds) = (dims.d_model, dims.d_state);
        let mut out = vec![0.0; dims.len * dims.lanes()];
        for t in 0..dims.len {
            let row = seq * dims.len + t;
            for d in 0..dm {
                let dt = self.delta[row * dm + d];
                for n in 0..ds {
                    out[(t * dm + d) * ds + n] = libm::exp(dt * self.a[d * ds + n]);
                }
            }
        }
        out
    }
}

/// What the reverse pass needs from the forward pass. `states` is `h` and
/// `decay` is `Ā`, both laid out `[batch][L][D][N]`.
#[derive(Default)]
pub(crate) struct ScanTrace {
    pub states: Vec<f64>,
    pub decay: Vec<f64>,
}

fn check_delta(dims: &ScanDims, inp: &ScanInputs<'_>) -> Result<()> {
    let dm = dims.d_model;
    match inp.delta.iter().position(|&v| v.is_nan() || v <= 0.0) {
        Some(pos) => Err(Error::NonPositiveDelta {
            row: pos / dm,
            channel: pos % dm,
            value: inp.delta[pos],
        }),
        None => Ok(()),
    }
}

/// `y` alone. The sequential path streams one state per lane instead of
/// materializing `[L][D][N]`, and is bit-identical to [`scan_forward`].
pub(crate) fn scan_output(dims: &ScanDims, inp: &ScanInputs<'_>, algo: ScanAlgo) -> Result<Vec<f64>> {
    if algo == ScanAlgo::Parallel {
        return blocked_output(dims, inp);
    }
    check_delta(dims, inp)?;
    let (dm, ds) = (dims.d_model, dims.d_state);
    let mut h = vec![0.0; dims.lanes()];
    let mut y = vec![0.0; dims.rows() * dm];
    for seq in 0..dims.batch {
        h.fill(0.0);
        for t in 0..dims.len {
            let row = seq * dims.len + t;
            let b = &inp.b[row * ds..(row + 1) * ds];
            let c = &inp.c[row * ds..(row + 1) * ds];
            for d in 0..dm {
                let dt = inp.delta[row * dm + d];
                let uv = inp.u[row * dm + d];
                let drive = dt * uv;
                let a = &inp.a[d * ds..(d + 1) * ds];
                let hs = &mut h[d * ds..(d + 1) * ds];
                let mut acc = 0.0;
                for n in 0..ds {
                    hs[n] = drive * b[n] + libm::exp(dt * a[n]) * hs[n];
                    acc += c[n] * hs[n];
                }
                y[row * dm + d] = acc + inp.d_skip[d] * uv;
            }
        }
    }
    Ok(y)
}

/// Parallel-scan `y`, one [`SCAN_BLOCK`] at a time. Same arithmetic as
/// [`affine_scan_blelloch`] over the whole sequence.
fn blocked_output(dims: &ScanDims, inp: &ScanInputs<'_>) -> Result<Vec<f64>> {
    check_delta(dims, inp)?;
    let (dm, ds) = (dims.d_model, dims.d_state);
    let lanes = dims.lanes();
    let mut y = vec![0.0; dims.rows() * dm];
    let mut decay = vec![0.0; (SCAN_BLOCK + 1) * lanes];
    let mut h = vec![0.0; (SCAN_BLOCK + 1) * lanes];
    for seq in 0..dims.batch {
        for t0 in (0..dims.len).step_by(SCAN_BLOCK) {
            let steps = SCAN_BLOCK.min(dims.len - t0);
            // Slot 0 holds the previous block's last state.
            for t in 0..steps {
                let row = seq * dims.len + t0 + t;
                for d in 0..dm {
                    let dt = inp.delta[row * dm + d];
                    let drive = dt * inp.u[row * dm + d];
                    let k = ((t + 1) * dm + d) * ds;
                    for n in 0..ds {
                        decay[k + n] = libm::exp(dt * inp.a[d * ds + n]);
                        h[k + n] = drive * inp.b[row * ds + n];
                    }
                }
            }
            let end = (steps + 1) * lanes;
            if t0 > 0 {
                carry_in(&decay[lanes..2 * lanes], &mut h[..end], lanes, lanes);
            }
            blelloch_block(&decay[lanes..end], &mut h[lanes..end], lanes);
            for t in 0..steps {
                let row = seq * dims.len + t0 + t;
                let c = &inp.c[row * ds..(row + 1) * ds];
                for d in 0..dm {
                    let k = ((t + 1) * dm + d) * ds;
                    let mut acc = 0.0;
                    for (cv, hv) in c.iter().zip(&h[k..k + ds]) {
                        acc += cv * hv;
                    }
                    y[row * dm + d] = acc + inp.d_skip[d] * inp.u[row * dm + d];
                }
            }
            h.copy_within(steps * lanes..end, 0);
        }
    }
    Ok(y)
}

/// Returns `y` and the trace for [`scan_backward`].
pub(crate) fn scan_forward(
    dims: &ScanDims,
    inp: &ScanInputs<'_>,
    algo: ScanAlgo,
) -> Result<(Vec<f64>, ScanTrace)> {
    forward(dims, inp, algo, true)
}

fn forward(dims: &ScanDims, inp: &ScanInputs<'_>, algo: ScanAlgo, keep_decay: bool) -> Result<(Vec<f64>, ScanTrace)> {
    check_delta(dims, inp)?;
    let (dm, ds) = (dims.d_model, dims.d_state);
    let lanes = dims.lanes();
    let mut states = vec![0.0; dims.batch * dims.len * lanes];
    let mut decays = Vec::with_capacity(if keep_decay { states.len() } else { 0 });
    let mut y = vec![0.0; dims.rows() * dm];
    for seq in 0..dims.batch {
        let decay = inp.decay(dims, seq);
        let h = &mut states[seq * dims.len * lanes..(seq + 1) * dims.len * lanes];
        for t in 0..dims.len {
            let row = seq * dims.len + t;
            for d in 0..dm {
                let drive = inp.delta[row * dm + d] * inp.u[row * dm + d];
                for n in 0..ds {
                    h[(t * dm + d) * ds + n] = drive * inp.b[row * ds + n];
                }
            }
        }
        affine_scan(algo, &decay, h, lanes);
        if keep_decay {
            decays.extend_from_slice(&decay);
        }
        for t in 0..dims.len {
            let row = seq * dims.len + t;
            let c = &inp.c[row * ds..(row + 1) * ds];
            for d in 0..dm {
                let hs = &h[(t * dm + d) * ds..(t * dm + d + 1) * ds];
                let mut acc = 0.0;
                for (cv, hv) in c.iter().zip(hs) {
                    acc += cv * hv;
                }
                y[row * dm + d] = acc + inp.d_skip[d] * inp.u[row * dm + d];
            }
        }
    }
    Ok((
        y,
        ScanTrace {
            states,
            decay: decays,
        },
    ))
}

pub(crate) struct ScanGrads {
    pub du: Vec<f64>,
    pub ddelta: Vec<f64>,
    pub da: Vec<f64>,
    pub db: Vec<f64>,
    pub dc: Vec<f64>,
    pub dd: Vec<f64>,
}

/// Reverse pass. The state adjoint obeys the time-reversed recurrence
/// `g_t = Ā_{t+1} · g_{t+1} + gy_t[d] · C_t[n]`, evaluated with the same
/// algorithm as the forward pass.
pub(crate) fn scan_backward(
    dims: &ScanDims,
    inp: &ScanInputs<'_>,
    trace: &ScanTrace,
    gy: &[f64],
    algo: ScanAlgo,
) -> ScanGrads {
    let (dm, ds, len) = (dims.d_model, dims.d_state, dims.len);
    let lanes = dims.lanes();
    let mut g = ScanGrads {
        du: vec![0.0; dims.rows() * dm],
        ddelta: vec![0.0; dims.rows() * dm],
        da: vec![0.0; dm * ds],
        db: vec![0.0; dims.rows() * ds],
        dc: vec![0.0; dims.rows() * ds],
        dd: vec![0.0; dm],
    };
    let mut rev_a = vec![0.0; len * lanes];
    let mut adj = vec![0.0; len * lanes];
    for seq in 0..dims.batch {
        let decay = &trace.decay[seq * len * lanes..(seq + 1) * len * lanes];
        let h = &trace.states[seq * len * lanes..(seq + 1) * len * lanes];
        let base = seq * len;

        // Reversed step s corresponds to t = len − 1 − s.
        for s in 0..len {
            let t = len - 1 - s;
            let row = base + t;
            let dst = &mut rev_a[s * lanes..(s + 1) * lanes];
            if t + 1 < len {
                dst.copy_from_slice(&decay[(t + 1) * lanes..(t + 2) * lanes]);
            } else {
                dst.fill(0.0);
            }
            for d in 0..dm {
                let gyv = gy[row * dm + d];
                for n in 0..ds {
                    adj[s * lanes + d * ds + n] = gyv * inp.c[row * ds + n];
                }
            }
        }
        affine_scan(algo, &rev_a, &mut adj, lanes);

        for t in 0..len {
            let row = base + t;
            let s = len - 1 - t;
            for d in 0..dm {
                let dt = inp.delta[row * dm + d];
                let uv = inp.u[row * dm + d];
                let gyv = gy[row * dm + d];
                let mut ddelta = 0.0;
                let mut du = gyv * inp.d_skip[d];
                for n in 0..ds {
                    let lane = d * ds + n;
                    let gh = adj[s * lanes + lane];
                    let prev = if t > 0 { h[(t - 1) * lanes + lane] } else { 0.0 };
                    let decay_v = decay[t * lanes + lane];
                    let bv = inp.b[row * ds + n];
                    let grad_decay = gh * prev * decay_v;
                    ddelta += grad_decay * inp.a[lane] + gh * bv * uv;
                    g.da[lane] += grad_decay * dt;
                    g.db[row * ds + n] += gh * dt * uv;
                    du += gh * dt * bv;
                    g.dc[row * ds + n] += gyv * h[t * lanes + lane];
                }
                g.ddelta[row * dm + d] += ddelta;
                g.du[row * dm + d] += du;
                g.dd[d] += gyv * uv;
            }
        }
    }
    g
}

// ---------------------------------------------------------------------------
// single-sequence public API

/// Per-channel selective-scan parameters for one sequence of length `L`.
///
/// `a: [D,N]` is the continuous-time state matrix (strictly negative),
/// `delta: [L,D]` the positive step sizes, `b, c: [L,N]` the input and
/// output projections, `d_skip: [D]` the direct feed-through.
#[derive(Clone, Debug, PartialEq)]
pub struct SsmParams {
    pub a: Tensor,
    pub delta: Tensor,
    pub b: Tensor,
    pub c: Tensor,
    pub d_skip: Tensor,
}

impl SsmParams {
    /// Builds parameters with `A = −exp(log_a)`, which keeps every entry of
    /// `A` negative and every discrete decay in `(0, 1)`.
    pub fn from_log_a(
        log_a: &Tensor,
        delta: Tensor,
        b: Tensor,
        c: Tensor,
        d_skip: Tensor,
    ) -> Self {
        Self {
            a: log_a.map(|v| -libm::exp(v)),
            delta,
            b,
            c,
            d_skip,
        }
    }

    pub fn d_model(&self) -> usize {
        self.a.shape()[0]
    }

    pub fn d_state(&self) -> usize {
        self.a.shape().get(1).copied().unwrap_or(0)
    }

    fn dims(&self, u: &Tensor) -> Result<ScanDims> {
        ScanDims::infer(u, &self.delta, &self.a, &self.b, &self.c, &self.d_skip, 1)
    }

    fn inputs<'a>(&'a self, u: &'a Tensor) -> ScanInputs<'a> {
        ScanInputs {
            u: u.data(),
            delta: self.delta.data(),
            a: self.a.data(),
            b: self.b.data(),
            c: self.c.data(),
            d_skip: self.d_skip.data(),
        }
    }
}

fn run(u: &Tensor, p: &SsmParams, algo: ScanAlgo) -> Result<Tensor> {
    let dims = p.dims(u)?;
    let y = scan_output(&dims, &p.inputs(u), algo)?;
    Tensor::new([dims.len, dims.d_model], y)
}

/// Selective scan of `u: [L,D]` by the step-by-step recurrence.
pub fn selective_scan_seq(u: &Tensor, p: &SsmParams) -> Result<Tensor> {
    run(u, p, ScanAlgo::Sequential)
}

/// Selective scan of `u: [L,D]` by the Blelloch prefix scan.
pub fn selective_scan_par(u: &Tensor, p: &SsmParams) -> Result<Tensor> {
    run(u, p, ScanAlgo::Parallel)
}

/// A random, well-conditioned instance: `L×D` input, `N` states.
pub fn random_instance(len: usize, d_model: usize, d_state: usize, rng: &mut crate::Rng) -> Result<(Tensor, SsmParams)> {
    let u = Tensor::uniform([len, d_model], -1.0, 1.0, rng)?;
    let log_a = Tensor::uniform([d_model, d_state], -1.0, 1.0, rng)?;
    let delta = Tensor::uniform([len, d_model], 0.01, 0.5, rng)?;
    let b = Tensor::uniform([len, d_state], -1.0, 1.0, rng)?;
    let c = Tensor::uniform([len, d_state], -1.0, 1.0, rng)?;
    let d_skip = Tensor::uniform([d_model], -1.0, 1.0, rng)?;
    Ok((u, SsmParams::from_log_a(&log_a, delta, b, c, d_skip)))
}

/// Finite-difference check of `∂y/∂u`, `∂y/∂Δ`, `∂y/∂A`, `∂y/∂B`, `∂y/∂C`
/// and `∂y/∂D` on a random `L=5, D=1, N=2` instance, through both scan
/// algorithms. The per-input errors are ordered `u, Δ, A, B, C, D` for the
/// sequential scan followed by the same six for the parallel scan.
pub fn scan_gradcheck(seed: u64) -> Result<GradCheckReport> {
    scan_gradcheck_with(seed, 5, 1, 2)
}

pub fn scan_gradcheck_with(
    seed: u64,
    len: usize,
    d_model: usize,
    d_state: usize,
) -> Result<GradCheckReport> {
    let mut rng = crate::seeded_rng(seed);
    let (u, p) = random_instance(len, d_model, d_state, &mut rng)?;
    let weights = Tensor::uniform([len, d_model], -1.0, 1.0, &mut rng)?;
    let inputs = [u, p.delta, p.a, p.b, p.c, p.d_skip];
    let mut per_input = Vec::new();
    for algo in [ScanAlgo::Sequential, ScanAlgo::Parallel] {
        let report = gradcheck::check_gradients(&inputs, gradcheck::STEP, |tape: &mut Tape, v| {
            let y = tape.selective_scan(v[0], v[1], v[2], v[3], v[4], v[5], 1, algo)?;
            gradcheck::weighted_sum(tape, y, &weights)
        })?;
        per_input.extend(report.per_input);
    }
    let max_rel_err = per_input.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        per_input,
        max_rel_err,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Plain-loop recurrence, written independently of the kernel above.
    fn oracle(u: &Tensor, p: &SsmParams) -> Vec<f64> {
        let (l, dm) = u.dims2().unwrap();
        let ds = p.d_state();
        let mut y = vec![0.0; l * dm];
        for d in 0..dm {
            let mut h = vec![0.0; ds];
            for t in 0..l {
                let dt = p.delta.at(&[t, d]);
                let mut out = 0.0;
                for n in 0..ds {
                    h[n] = libm::exp(dt * p.a.at(&[d, n])) * h[n] + dt * p.b.at(&[t, n]) * u.at(&[t, d]);
                    out += p.c.at(&[t, n]) * h[n];
                }
                y[t * dm + d] = out + p.d_skip.at(&[d]) * u.at(&[t, d]);
            }
        }
        y
    }

    fn filled(shape: &[usize], v: f64) -> Tensor {
        Tensor::full(shape.to_vec(), v).unwrap()
    }

    #[test]
    fn near_zero_decay_degenerates_to_prefix_sum() {
        let u = Tensor::new([3, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let p = SsmParams {
            a: filled(&[1, 1], -1e-9),
            delta: filled(&[3, 1], 1.0),
            b: filled(&[3, 1], 1.0),
            c: filled(&[3, 1], 1.0),
            d_skip: filled(&[1], 0.0),
        };
        for y in [selective_scan_seq(&u, &p).unwrap(), selective_scan_par(&u, &p).unwrap()] {
            for (got, want) in y.data().iter().zip([1.0, 3.0, 6.0]) {
                assert!((got - want).abs() < 1e-7, "{got} vs {want}");
            }
        }
    }

    #[test]
    fn zero_output_projection_leaves_skip_path() {
        let mut rng = crate::seeded_rng(4);
        let (u, mut p) = random_instance(7, 3, 4, &mut rng).unwrap();
        p.c = Tensor::zeros([7, 4]).unwrap();
        let y = selective_scan_seq(&u, &p).unwrap();
        for t in 0..7 {
            for d in 0..3 {
                assert_eq!(y.at(&[t, d]), p.d_skip.at(&[d]) * u.at(&[t, d]));
            }
        }
    }

    #[test]
    fn matches_plain_loop_oracle() {
        let mut rng = crate::seeded_rng(16);
        let (u, p) = random_instance(16, 2, 4, &mut rng).unwrap();
        let want = oracle(&u, &p);
        let seq = selective_scan_seq(&u, &p).unwrap();
        let par = selective_scan_par(&u, &p).unwrap();
        for ((s, q), w) in seq.data().iter().zip(par.data()).zip(&want) {
            assert!((s - w).abs() <= 1e-12);
            assert!((q - w).abs() <= 1e-12);
        }
    }

    #[test]
    fn single_step_by_hand() {
        let u = Tensor::new([1, 1], vec![2.0]).unwrap();
        let p = SsmParams {
            a: filled(&[1, 2], -1.0),
            delta: filled(&[1, 1], 0.5),
            b: Tensor::new([1, 2], vec![1.0, -3.0]).unwrap(),
            c: Tensor::new([1, 2], vec![2.0, 1.0]).unwrap(),
            d_skip: filled(&[1], 0.25),
        };
        // h = Δ·B·u = [1, -3]; y = 2·1 + 1·(-3) + 0.25·2 = -0.5
        assert_eq!(selective_scan_par(&u, &p).unwrap().data(), &[-0.5]);
        assert_eq!(selective_scan_seq(&u, &p).unwrap().data(), &[-0.5]);
    }

    #[test]
    fn non_positive_delta_is_rejected() {
        let mut rng = crate::seeded_rng(5);
        let (u, mut p) = random_instance(4, 2, 2, &mut rng).unwrap();
        p.delta.data_mut()[5] = 0.0;
        assert!(matches!(
            selective_scan_seq(&u, &p),
            Err(Error::NonPositiveDelta { row: 2, channel: 1, .. })
        ));
        assert!(selective_scan_par(&u, &p).is_err());
    }

    #[test]
    fn streamed_output_matches_stored_states() {
        let mut rng = crate::seeded_rng(4);
        for len in [SCAN_BLOCK - 1, SCAN_BLOCK, 3 * SCAN_BLOCK + 5] {
            let (u, p) = random_instance(len, 3, 2, &mut rng).unwrap();
            let dims = p.dims(&u).unwrap();
            for algo in [ScanAlgo::Sequential, ScanAlgo::Parallel] {
                let streamed = scan_output(&dims, &p.inputs(&u), algo).unwrap();
                let stored = scan_forward(&dims, &p.inputs(&u), algo).unwrap().0;
                assert_eq!(streamed, stored, "{algo:?} len {len}");
            }
        }
    }

    #[test]
    fn blelloch_handles_non_power_of_two_lengths() {
        let mut rng = crate::seeded_rng(9);
        for len in [1usize, 2, 3, 5, 17, 100, 2 * SCAN_BLOCK + 7] {
            let a = Tensor::uniform([len, 3], 0.0, 1.0, &mut rng).unwrap();
            let b = Tensor::uniform([len, 3], -1.0, 1.0, &mut rng).unwrap();
            let mut seq = b.data().to_vec();
            let mut par = b.data().to_vec();
            affine_scan_seq(a.data(), &mut seq, 3);
            affine_scan_blelloch(a.data(), &mut par, 3);
            for (s, p) in seq.iter().zip(&par) {
                assert!((s - p).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn gradcheck_small_instance() {
        let report = scan_gradcheck(0).unwrap();
        assert_eq!(report.per_input.len(), 12);
        assert!(report.passes(1e-4), "{report:?}");
    }

    #[test]
    fn zero_input_gives_zero_output_projection_gradient() {
        let mut rng = crate::seeded_rng(2);
        let (_, p) = random_instance(5, 1, 2, &mut rng).unwrap();
        let u = Tensor::zeros([5, 1]).unwrap();
        let mut tape = Tape::new();
        let vars: Vec<_> = [&u, &p.delta, &p.a, &p.b]
            .into_iter()
            .map(|t| tape.constant(t.clone()))
            .collect();
        let c = tape.leaf(p.c.clone());
        let d = tape.constant(p.d_skip.clone());
        let y = tape
            .selective_scan(vars[0], vars[1], vars[2], vars[3], c, d, 1, ScanAlgo::Parallel)
            .unwrap();
        let loss = tape.sum(y);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(c).unwrap().data().iter().all(|&g| g == 0.0));
    }
}
