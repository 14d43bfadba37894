//! ResNet-style classifier over residual images.
//!
//! Layout: a stem convolution, stages of basic residual blocks (two 3×3
//! convolutions around an identity shortcut, or a 1×1 strided projection
//! when the shape changes), global average pooling and a dense head with one
//! output per class. There is no batch normalization; the second convolution
//! of every block and the head start at zero instead.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::ops;
use crate::params::{self, Bound, ParamId, ParamStore};
use crate::tensor::Tensor;

pub const HEAD_WEIGHT: &str = "head.w";
pub const HEAD_BIAS: &str = "head.b";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassifierConfig {
    pub in_channels: usize,
    pub image_height: usize,
    pub image_width: usize,
    pub num_classes: usize,
    pub stem_width: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    /// Width of each stage; every stage after the first halves the resolution.
    pub widths: Vec<usize>,
    /// Basic blocks per stage.
    pub blocks: Vec<usize>,
}

impl ClassifierConfig {
    /// Reduced-width network for desk-scale training: 3×3 stride-2 stem and
    /// four stages of two blocks.
    pub fn desk(in_channels: usize, image_height: usize, image_width: usize, num_classes: usize) -> Self {
        Self {
            in_channels,
            image_height,
            image_width,
            num_classes,
            stem_width: 8,
            stem_kernel: 3,
            stem_stride: 2,
            widths: vec![8, 16, 32, 64],
            blocks: vec![2, 2, 2, 2],
        }
    }

    /// The 18-layer layout: 7×7 stride-2 stem, widths 64–512, two blocks per
    /// stage. The stem max-pool is omitted.
    pub fn resnet18(in_channels: usize, image_height: usize, image_width: usize, num_classes: usize) -> Self {
        Self {
            stem_width: 64,
            stem_kernel: 7,
            widths: vec![64, 128, 256, 512],
            ..Self::desk(in_channels, image_height, image_width, num_classes)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("classifier needs at least 2 classes".into()));
        }
        if self.widths.is_empty() || self.widths.len() != self.blocks.len() {
            return Err(Error::Config("classifier widths and blocks must pair up".into()));
        }
        if self.widths.iter().chain(&self.blocks).any(|&v| v == 0)
            || self.in_channels == 0
            || self.stem_width == 0
            || self.stem_kernel == 0
            || self.stem_stride == 0
        {
            return Err(Error::Config("classifier sizes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct BasicBlock {
    conv1: (ParamId, ParamId),
    conv2: (ParamId, ParamId),
    stride: usize,
    projection: Option<(ParamId, ParamId)>,
}

/// Classifier parameters and structure.
#[derive(Clone, Debug)]
pub struct ClassifierModel {
    config: ClassifierConfig,
    store: ParamStore,
    stem: (ParamId, ParamId),
    blocks: Vec<BasicBlock>,
    head: (ParamId, ParamId),
}

/// What [`ClassifierModel::load_weights`] did with the head.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LoadReport {
    pub head_reinitialized: bool,
}

fn conv(store: &mut ParamStore, name: &str, out: usize, inp: usize, k: usize, zero: bool, rng: &mut crate::Rng) -> (ParamId, ParamId) {
    let w = if zero {
        Tensor::zeros([out, inp, k, k]).expect("shape")
    } else {
        params::kaiming_uniform([out, inp, k, k], inp * k * k, rng)
    };
    (
        store.add(alloc::format!("{name}.w"), w),
        store.add(alloc::format!("{name}.b"), Tensor::zeros([out]).expect("shape")),
    )
}

fn fresh_head(features: usize, classes: usize) -> (Tensor, Tensor) {
    (
        Tensor::zeros([features, classes]).expect("shape"),
        Tensor::zeros([classes]).expect("shape"),
    )
}

impl ClassifierModel {
    pub fn new(config: &ClassifierConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = crate::seeded_rng(seed);
        let mut store = ParamStore::new();
        let stem = conv(&mut store, "stem", config.stem_width, config.in_channels, config.stem_kernel, false, &mut rng);
        let mut blocks = Vec::new();
        let mut cin = config.stem_width;
        for (s, (&width, &count)) in config.widths.iter().zip(&config.blocks).enumerate() {
            for b in 0..count {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                let prefix = alloc::format!("stage{s}.{b}");
                let conv1 = conv(&mut store, &alloc::format!("{prefix}.conv1"), width, cin, 3, false, &mut rng);
                let conv2 = conv(&mut store, &alloc::format!("{prefix}.conv2"), width, width, 3, true, &mut rng);
                let projection = (stride != 1 || cin != width)
                    .then(|| conv(&mut store, &alloc::format!("{prefix}.proj"), width, cin, 1, false, &mut rng));
                blocks.push(BasicBlock {
                    conv1,
                    conv2,
                    stride,
                    projection,
                });
                cin = width;
            }
        }
        let (hw, hb) = fresh_head(cin, config.num_classes);
        let head = (store.add(HEAD_WEIGHT, hw), store.add(HEAD_BIAS, hb));
        Ok(Self {
            config: config.clone(),
            store,
            stem,
            blocks,
            head,
        })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let c = &self.config;
        match *shape {
            [_, ch, h, w] if ch == c.in_channels && h == c.image_height && w == c.image_width => Ok(()),
            _ => Err(Error::ShapeMismatch {
                op: "classifier input",
                lhs: shape.to_vec(),
                rhs: vec![0, c.in_channels, c.image_height, c.image_width],
            }),
        }
    }

    /// Differentiable logits `[B, num_classes]`.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        self.check_input(tape.value(x).shape())?;
        let pad = self.config.stem_kernel / 2;
        let s = tape.conv2d(x, bound[self.stem.0], Some(bound[self.stem.1]), self.config.stem_stride, pad)?;
        let mut cur = tape.relu(s);
        for block in &self.blocks {
            let h = tape.conv2d(cur, bound[block.conv1.0], Some(bound[block.conv1.1]), block.stride, 1)?;
            let h = tape.relu(h);
            let h = tape.conv2d(h, bound[block.conv2.0], Some(bound[block.conv2.1]), 1, 1)?;
            let shortcut = match block.projection {
                Some((w, b)) => tape.conv2d(cur, bound[w], Some(bound[b]), block.stride, 0)?,
                None => cur,
            };
            let sum = tape.add(h, shortcut)?;
            cur = tape.relu(sum);
        }
        let pooled = tape.global_avg_pool(cur)?;
        tape.linear(pooled, bound[self.head.0], Some(bound[self.head.1]))
    }

    /// Logits for a batch of residual images.
    pub fn classify(&self, residuals: &Tensor) -> Result<Tensor> {
        self.check_input(residuals.shape())?;
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape, false);
        let x = tape.constant(residuals.clone());
        let logits = self.forward(&mut tape, &bound, x)?;
        Ok(tape.value(logits).clone())
    }

    /// Arg-max class of every sample; ties go to the lowest index.
    pub fn predict(&self, residuals: &Tensor) -> Result<Vec<usize>> {
        let logits = self.classify(residuals)?;
        Ok(predictions(&logits))
    }

    /// Restores weights from named tensors. The head may come from a model
    /// with a different class count, in which case it is re-initialized and
    /// the report says so; any other mismatch is an error naming the
    /// offending tensors.
    pub fn load_weights<'a>(&mut self, named: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Result<LoadReport> {
        let named: Vec<(&str, &Tensor)> = named.into_iter().collect();
        let head_w_id = self.head.0;
        let head_b_id = self.head.1;
        let expected_w = self.store.get(head_w_id).shape().to_vec();
        let expected_b = self.store.get(head_b_id).shape().to_vec();
        let head_matches = named.iter().any(|(n, t)| *n == HEAD_WEIGHT && t.shape() == expected_w.as_slice())
            && named.iter().any(|(n, t)| *n == HEAD_BIAS && t.shape() == expected_b.as_slice());

        let mut body = ParamStore::new();
        let mut body_ids = Vec::new();
        for (name, t) in self.store.iter() {
            if head_matches || (name != HEAD_WEIGHT && name != HEAD_BIAS) {
                body_ids.push(self.store.id_of(name).expect("own name"));
                body.add(String::from(name), t.clone());
            }
        }
        let incoming = named
            .iter()
            .filter(|(n, _)| head_matches || (*n != HEAD_WEIGHT && *n != HEAD_BIAS))
            .map(|(n, t)| (*n, *t));
        body.load_exact(incoming)?;
        for (id, t) in body_ids.into_iter().zip(body.tensors()) {
            self.store.set(id, t.clone())?;
        }
        if !head_matches {
            let (w, b) = fresh_head(expected_w[0], self.config.num_classes);
            self.store.set(head_w_id, w)?;
            self.store.set(head_b_id, b)?;
        }
        Ok(LoadReport {
            head_reinitialized: !head_matches,
        })
    }
}

/// Row-wise arg-max of `[B,K]` logits.
pub fn predictions(logits: &Tensor) -> Vec<usize> {
    let k = logits.shape().last().copied().unwrap_or(1);
    logits.data().chunks(k).map(ops::argmax).collect()
}
