//! The reconstruction network: TSMamba encoder, convolutional decoder with
//! encoder skip features, and the residual images it produces.
//!
//! Decoder stage `k` works at the resolution of encoder stage
//! `ℓ = L − 1 − k`:
//!
//! ```text
//! merge:  d = silu(conv3×3(concat(d, skip_ℓ)))     (stage 0: d = silu(conv3×3(latent)))
//! up:     d = silu(conv3×3(upsample2×(d)))
//! ```
//!
//! The last stage lands back at input resolution, and a final 3×3 conv with
//! a sigmoid maps to the input channels, so reconstructions lie in `(0, 1)`.

use alloc::vec::Vec;

use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::ops;
use crate::params::{self, Bound, ParamId, ParamStore};
use crate::tensor::Tensor;
use crate::tsmamba::{Encoder, TsMambaConfig};

#[derive(Clone, Debug)]
struct DecoderStage {
    merge_w: ParamId,
    merge_b: ParamId,
    up_w: ParamId,
    up_b: ParamId,
}

/// Encoder, decoder and their parameters.
#[derive(Clone, Debug)]
pub struct AeModel {
    config: TsMambaConfig,
    store: ParamStore,
    encoder: Encoder,
    decoder: Vec<DecoderStage>,
    final_w: ParamId,
    final_b: ParamId,
}

fn conv_param(store: &mut ParamStore, name: &str, out: usize, inp: usize, rng: &mut crate::Rng) -> (ParamId, ParamId) {
    let w = store.add(alloc::format!("{name}.w"), params::kaiming_uniform([out, inp, 3, 3], inp * 9, rng));
    let b = store.add(alloc::format!("{name}.b"), Tensor::zeros([out]).expect("shape"));
    (w, b)
}

impl AeModel {
    pub fn new(config: &TsMambaConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = crate::seeded_rng(seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::new(config, &mut store, "enc", &mut rng)?;
        let layers = config.num_layers;
        let decoder = (0..layers)
            .map(|k| {
                let level = layers - 1 - k;
                let width = config.widths[level];
                let merge_in = if k == 0 { width } else { 2 * width };
                let up_out = if level > 0 { config.widths[level - 1] } else { config.widths[0] };
                let (merge_w, merge_b) = conv_param(&mut store, &alloc::format!("dec.{k}.merge"), width, merge_in, &mut rng);
                let (up_w, up_b) = conv_param(&mut store, &alloc::format!("dec.{k}.up"), up_out, width, &mut rng);
                DecoderStage {
                    merge_w,
                    merge_b,
                    up_w,
                    up_b,
                }
            })
            .collect();
        let (final_w, final_b) = conv_param(&mut store, "dec.out", config.in_channels, config.widths[0], &mut rng);
        Ok(Self {
            config: config.clone(),
            store,
            encoder,
            decoder,
            final_w,
            final_b,
        })
    }

    pub fn config(&self) -> &TsMambaConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Differentiable reconstruction of `x: [B,C,H,W]`.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let enc = self.encoder.forward(tape, bound, x)?;
        let layers = self.decoder.len();
        let mut d = enc.latent;
        for (k, stage) in self.decoder.iter().enumerate() {
            let level = layers - 1 - k;
            let merged = if k == 0 { d } else { tape.concat_channels(d, enc.skips[level])? };
            let m = tape.conv2d(merged, bound[stage.merge_w], Some(bound[stage.merge_b]), 1, 1)?;
            d = tape.silu(m);
            let up = tape.upsample_nearest2x(d)?;
            let u = tape.conv2d(up, bound[stage.up_w], Some(bound[stage.up_b]), 1, 1)?;
            d = tape.silu(u);
        }
        let out = tape.conv2d(d, bound[self.final_w], Some(bound[self.final_b]), 1, 1)?;
        Ok(tape.sigmoid(out))
    }

    /// Reconstruction without gradient tracking. Inputs are expected in `[0,1]`.
    pub fn ae_forward(&self, x: &Tensor) -> Result<Tensor> {
        self.encoder.check_input(x.shape())?;
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape, false);
        let input = tape.constant(x.clone());
        let out = self.forward(&mut tape, &bound, input)?;
        Ok(tape.value(out).clone())
    }
}

/// Mean squared error between an image batch and its reconstruction.
pub fn reconstruction_loss(x: &Tensor, reconstruction: &Tensor) -> Result<f64> {
    ops::mse(x, reconstruction)
}

/// Elementwise `|x − x̂|`.
pub fn residual(x: &Tensor, reconstruction: &Tensor) -> Result<Tensor> {
    x.zip_map(reconstruction, |a, b| libm::fabs(a - b))
}

/// Mean residual of every image in a `[B,...]` batch.
pub fn mean_residual_per_image(residuals: &Tensor) -> Vec<f64> {
    let b = residuals.shape().first().copied().unwrap_or(1);
    let per = residuals.numel() / b;
    residuals
        .data()
        .chunks(per)
        .map(|c| c.iter().sum::<f64>() / per as f64)
        .collect()
}
