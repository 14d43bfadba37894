//! Named parameter storage, initialization helpers and parameter counting.

use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Index;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Index of a parameter in its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, named trainable tensors of one model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id_of(name).map(|id| self.get(id))
    }

    /// Replaces a parameter value; the shape must not change.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        self.tensors[id.0].expect_same_shape("set parameter", &value)?;
        self.tensors[id.0] = value;
        Ok(())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of trainable scalars.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Scalar counts grouped by the first `depth` dot-separated components
    /// of each name, in order of first appearance.
    pub fn breakdown(&self, depth: usize) -> Vec<(String, usize)> {
        let mut groups: Vec<(String, usize)> = Vec::new();
        for (name, t) in self.iter() {
            let key: String = name
                .split('.')
                .take(depth.max(1))
                .collect::<Vec<_>>()
                .join(".");
            match groups.iter_mut().find(|(k, _)| *k == key) {
                Some((_, n)) => *n += t.numel(),
                None => groups.push((key, t.numel())),
            }
        }
        groups
    }

    /// Records every parameter on `tape`, as leaves when `trainable`,
    /// otherwise as constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        Bound(
            self.tensors
                .iter()
                .map(|t| {
                    if trainable {
                        tape.leaf(t.clone())
                    } else {
                        tape.constant(t.clone())
                    }
                })
                .collect(),
        )
    }

    /// Copies values from `(name, tensor)` pairs. Every stored parameter must
    /// be present with the same shape and no unknown names may appear.
    pub fn load_exact<'a>(&mut self, named: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Result<()> {
        let mut seen = alloc::vec![false; self.len()];
        let mut problems = Vec::new();
        let mut updates = Vec::new();
        for (name, t) in named {
            match self.id_of(name) {
                Some(id) if self.get(id).shape() == t.shape() => {
                    seen[id.0] = true;
                    updates.push((id, t.clone()));
                }
                Some(id) => {
                    seen[id.0] = true;
                    problems.push(alloc::format!(
                        "{name}: shape {:?} != {:?}",
                        t.shape(),
                        self.get(id).shape()
                    ));
                }
                None => problems.push(alloc::format!("{name}: not in model")),
            }
        }
        for (i, s) in seen.iter().enumerate() {
            if !s {
                problems.push(alloc::format!("{}: missing", self.names[i]));
            }
        }
        if !problems.is_empty() {
            return Err(Error::WeightMismatch(problems));
        }
        for (id, t) in updates {
            self.tensors[id.0] = t;
        }
        Ok(())
    }
}

/// Parameters of a store recorded on a tape, indexed by [`ParamId`].
pub struct Bound(Vec<Var>);

impl Bound {
    /// Wraps vars listed in parameter order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self(vars)
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

/// Trainable scalars of a `k×k` convolution with `q` filters over `d` input
/// channels: `q·k²·d` weights plus `q` biases.
pub fn conv_param_count(q: usize, k: usize, d: usize, bias: bool) -> usize {
    q * k * k * d + if bias { q } else { 0 }
}

/// Trainable scalars of a dense layer.
pub fn linear_param_count(inputs: usize, outputs: usize, bias: bool) -> usize {
    inputs * outputs + if bias { outputs } else { 0 }
}

/// He-uniform initialization: `U(−√(6/fan_in), √(6/fan_in))`.
pub fn kaiming_uniform(shape: impl Into<Vec<usize>>, fan_in: usize, rng: &mut crate::Rng) -> Tensor {
    let bound = libm::sqrt(6.0 / fan_in as f64);
    Tensor::uniform(shape, -bound, bound, rng).expect("positive shape")
}

/// `U(−1/√fan_in, 1/√fan_in)`, the usual dense-layer default.
pub fn fan_in_uniform(shape: impl Into<Vec<usize>>, fan_in: usize, rng: &mut crate::Rng) -> Tensor {
    let bound = 1.0 / libm::sqrt(fan_in as f64);
    Tensor::uniform(shape, -bound, bound, rng).expect("positive shape")
}
