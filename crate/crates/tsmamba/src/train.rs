//! Two-phase training and evaluation.
//!
//! Phase 1 fits the autoencoder on the target class only. Phase 2 freezes
//! it, turns every image into its reconstruction residual and trains the
//! classifier on residuals of all classes.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use tsmamba_core::autoencoder::{self, AeModel};
use tsmamba_core::classifier::{self, ClassifierModel};
use tsmamba_core::metrics::{self, ClassReport, ConfusionMatrix};
use tsmamba_core::optim::{adam_step, AdamState};
use tsmamba_core::params::{Bound, ParamStore};
use tsmamba_core::{Gradients, Tape, Tensor};

use crate::config::RunConfig;
use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};

/// Images per forward pass when no gradient is needed.
const EVAL_CHUNK: usize = 32;

/// Stream of the shuffling RNG, kept apart from parameter initialization.
const SHUFFLE_STREAM: u64 = 7;

/// One value per epoch for the training and validation sides.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Curve {
    pub train: Vec<f64>,
    pub val: Vec<f64>,
}

impl Curve {
    pub fn len(&self) -> usize {
        self.train.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train.is_empty()
    }

    /// `epoch,train,val` with 1-based epochs and round-trip float text.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train,val\n");
        for (i, (t, v)) in self.train.iter().zip(&self.val).enumerate() {
            writeln!(s, "{},{t},{v}", i + 1).expect("string write");
        }
        s
    }
}

/// Stacks images (each `[C,H,W]` flattened) into `[B,C,H,W]`.
pub fn gather(images: &[Vec<f64>], indices: &[usize], channels: usize, size: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(indices.len() * channels * size * size);
    for &i in indices {
        data.extend_from_slice(&images[i]);
    }
    Ok(Tensor::new([indices.len(), channels, size, size], data)?)
}

fn gradients_of(grads: &mut Gradients, bound: &Bound, store: &ParamStore) -> Vec<Tensor> {
    bound
        .vars()
        .iter()
        .zip(store.tensors())
        .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros_like(p)))
        .collect()
}

fn finite(loss: f64, phase: &str, epoch: usize, batch: usize) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::Core(tsmamba_core::Error::Config(format!(
            "{phase}: loss became {loss} at epoch {} batch {}; lower the learning rate",
            epoch + 1,
            batch + 1
        ))))
    }
}

fn shuffler(seed: u64) -> tsmamba_core::Rng {
    let mut rng = tsmamba_core::seeded_rng(seed);
    rng.set_stream(SHUFFLE_STREAM);
    rng
}

/// Mean reconstruction MSE over `indices`.
pub fn reconstruction_loss(ae: &AeModel, ds: &Dataset, indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::Dataset("no images to score".into()));
    }
    let mut total = 0.0;
    for chunk in indices.chunks(EVAL_CHUNK) {
        let x = ds.batch(chunk)?;
        let y = ae.ae_forward(&x)?;
        total += autoencoder::reconstruction_loss(&x, &y)? * chunk.len() as f64;
    }
    Ok(total / indices.len() as f64)
}

pub struct Phase1 {
    pub model: AeModel,
    pub loss: Curve,
}

/// Fits the autoencoder on the training images of the target class; the
/// validation side of the curve uses the target's validation images.
pub fn train_phase1(cfg: &RunConfig, ds: &Dataset, split: &Split) -> Result<Phase1> {
    let target = ds.class_index(&cfg.target_class)?;
    let labels: Vec<usize> = ds.records.iter().map(|r| r.class).collect();
    let mut order = split.train_of_class(&labels, target);
    let val = split.val_of_class(&labels, target);
    if order.is_empty() {
        return Err(Error::Dataset(format!("no training images of `{}`", cfg.target_class)));
    }
    let mut model = AeModel::new(&cfg.ae()?, cfg.seed)?;
    let mut adam = AdamState::new(cfg.lr);
    let mut rng = shuffler(cfg.seed);
    let mut curve = Curve::default();
    for epoch in 0..cfg.epochs_ae {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch).enumerate() {
            let x = ds.batch(chunk)?;
            let mut tape = Tape::new();
            let bound = model.params().bind(&mut tape, true);
            let input = tape.constant(x.clone());
            let y = model.forward(&mut tape, &bound, input)?;
            let loss = tape.mse(y, &x)?;
            let value = finite(tape.value(loss).item()?, "phase 1", epoch, b)?;
            let mut grads = tape.backward(loss)?;
            let grads = gradients_of(&mut grads, &bound, model.params());
            adam_step(model.params_mut().tensors_mut(), &grads, &mut adam)?;
            sum += value * chunk.len() as f64;
        }
        curve.train.push(sum / order.len() as f64);
        curve.val.push(if val.is_empty() { f64::NAN } else { reconstruction_loss(&model, ds, &val)? });
        log::info!(
            "phase 1 epoch {}/{}: train {:.6} val {:.6}",
            epoch + 1,
            cfg.epochs_ae,
            curve.train[epoch],
            curve.val[epoch]
        );
    }
    Ok(Phase1 { model, loss: curve })
}

/// `|x − ae(x)|` of every image in `indices`, in that order.
pub fn residuals(ae: &AeModel, ds: &Dataset, indices: &[usize]) -> Result<Vec<Vec<f64>>> {
    let per = ds.channels * ds.size * ds.size;
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(EVAL_CHUNK) {
        let x = ds.batch(chunk)?;
        let r = autoencoder::residual(&x, &ae.ae_forward(&x)?)?;
        out.extend(r.data().chunks(per).map(<[f64]>::to_vec));
    }
    Ok(out)
}

fn check_classes(expected: usize, ds: &Dataset, what: &str) -> Result<()> {
    if expected != ds.num_classes() {
        return Err(Error::ClassMismatch(format!(
            "{what} expects {expected} classes but the dataset has {} ({})",
            ds.num_classes(),
            ds.class_names.join(", ")
        )));
    }
    Ok(())
}

fn predict_all(clf: &ClassifierModel, images: &[Vec<f64>], indices: &[usize], channels: usize, size: usize) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(EVAL_CHUNK) {
        out.extend(clf.predict(&gather(images, chunk, channels, size)?)?);
    }
    Ok(out)
}

fn classifier_loss(clf: &ClassifierModel, images: &[Vec<f64>], labels: &[usize], indices: &[usize], channels: usize, size: usize) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for chunk in indices.chunks(EVAL_CHUNK) {
        let logits = clf.classify(&gather(images, chunk, channels, size)?)?;
        let truth: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
        loss += tsmamba_core::ops::cross_entropy(&logits, &truth)? * chunk.len() as f64;
        correct += classifier::predictions(&logits).iter().zip(&truth).filter(|(p, t)| p == t).count();
    }
    let n = indices.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

pub struct Phase2 {
    pub model: ClassifierModel,
    pub loss: Curve,
    pub accuracy: Curve,
}

/// Trains the classifier on residuals of the frozen autoencoder.
pub fn train_phase2(cfg: &RunConfig, ae: &AeModel, ds: &Dataset, split: &Split) -> Result<Phase2> {
    check_classes(cfg.num_classes, ds, "the configuration")?;
    let all: Vec<usize> = (0..ds.len()).collect();
    let images = residuals(ae, ds, &all)?;
    let labels: Vec<usize> = ds.records.iter().map(|r| r.class).collect();
    let (c, s) = (ds.channels, ds.size);
    let mut model = ClassifierModel::new(&cfg.clf()?, cfg.seed)?;
    let mut adam = AdamState::new(cfg.lr_clf);
    let mut rng = shuffler(cfg.seed);
    let mut order = split.train.clone();
    let mut loss = Curve::default();
    let mut accuracy = Curve::default();
    for epoch in 0..cfg.epochs_clf {
        order.shuffle(&mut rng);
        let (mut sum, mut correct) = (0.0, 0usize);
        for (b, chunk) in order.chunks(cfg.batch).enumerate() {
            let x = gather(&images, chunk, c, s)?;
            let truth: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let mut tape = Tape::new();
            let bound = model.params().bind(&mut tape, true);
            let input = tape.constant(x);
            let logits = model.forward(&mut tape, &bound, input)?;
            correct += classifier::predictions(tape.value(logits))
                .iter()
                .zip(&truth)
                .filter(|(p, t)| p == t)
                .count();
            let l = tape.cross_entropy(logits, &truth)?;
            sum += finite(tape.value(l).item()?, "phase 2", epoch, b)? * chunk.len() as f64;
            let mut grads = tape.backward(l)?;
            let grads = gradients_of(&mut grads, &bound, model.params());
            adam_step(model.params_mut().tensors_mut(), &grads, &mut adam)?;
        }
        let n = order.len() as f64;
        loss.train.push(sum / n);
        accuracy.train.push(correct as f64 / n);
        let (vl, va) = if split.val.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            classifier_loss(&model, &images, &labels, &split.val, c, s)?
        };
        loss.val.push(vl);
        accuracy.val.push(va);
        log::info!(
            "phase 2 epoch {}/{}: loss {:.5}/{:.5} acc {:.4}/{:.4}",
            epoch + 1,
            cfg.epochs_clf,
            loss.train[epoch],
            vl,
            accuracy.train[epoch],
            va
        );
    }
    Ok(Phase2 { model, loss, accuracy })
}

/// Confusion matrix and KPIs on a set of images, plus a two-class view with
/// the target class as positive when there are more than two classes.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub report: ClassReport,
    pub binary: Option<(ConfusionMatrix, ClassReport)>,
}

impl Evaluation {
    /// Aligned text: confusion matrix (rows are true classes) and KPIs.
    pub fn to_text(&self) -> String {
        let mut s = confusion_text(&self.confusion);
        s.push('\n');
        s.push_str(&self.report.to_table());
        if let Some((cm, report)) = &self.binary {
            s.push_str("\ntwo-class view\n");
            s.push_str(&confusion_text(cm));
            s.push('\n');
            s.push_str(&report.to_table());
        }
        s
    }
}

fn confusion_text(cm: &ConfusionMatrix) -> String {
    let width = cm.names().iter().map(String::len).max().unwrap_or(0).max(6);
    let mut s = format!("{:width$}", "");
    for name in cm.names() {
        write!(s, "  {name:>width$}").expect("string write");
    }
    s.push('\n');
    for (t, name) in cm.names().iter().enumerate() {
        write!(s, "{name:width$}").expect("string write");
        for p in 0..cm.num_classes() {
            write!(s, "  {:>width$}", cm.count(t, p)).expect("string write");
        }
        s.push('\n');
    }
    s
}

pub fn evaluate(
    ae: &AeModel,
    clf: &ClassifierModel,
    ds: &Dataset,
    indices: &[usize],
    target_class: &str,
) -> Result<Evaluation> {
    check_classes(clf.num_classes(), ds, "the classifier")?;
    if indices.is_empty() {
        return Err(Error::Dataset("evaluation set is empty".into()));
    }
    let images = residuals(ae, ds, indices)?;
    let local: Vec<usize> = (0..indices.len()).collect();
    let predicted = predict_all(clf, &images, &local, ds.channels, ds.size)?;
    let truth: Vec<usize> = indices.iter().map(|&i| ds.label(i)).collect();
    let confusion = metrics::confusion(&truth, &predicted, ds.class_names.clone())?;
    let report = metrics::kpis(&confusion)?;
    let binary = if ds.num_classes() > 2 {
        let cm = metrics::binary_collapse(&confusion, ds.class_index(target_class)?)?;
        let r = metrics::kpis(&cm)?;
        Some((cm, r))
    } else {
        None
    };
    Ok(Evaluation {
        confusion,
        report,
        binary,
    })
}

/// Validation accuracy of a multinomial logistic regression on raw,
/// centred pixels, trained full-batch with Adam.
pub fn linear_probe(ds: &Dataset, split: &Split, epochs: usize, lr: f64) -> Result<f64> {
    let features = ds.channels * ds.size * ds.size;
    let rows = |idx: &[usize]| -> Result<Tensor> {
        let data = idx.iter().flat_map(|&i| ds.images[i].iter().map(|v| v - 0.5)).collect();
        Ok(Tensor::new([idx.len(), features], data)?)
    };
    let x_train = rows(&split.train)?;
    let y_train: Vec<usize> = split.train.iter().map(|&i| ds.label(i)).collect();
    let k = ds.num_classes();
    let mut params = vec![Tensor::zeros([features, k])?, Tensor::zeros([k])?];
    let mut adam = AdamState::new(lr);
    for _ in 0..epochs {
        let mut tape = Tape::new();
        let w = tape.leaf(params[0].clone());
        let b = tape.leaf(params[1].clone());
        let x = tape.constant(x_train.clone());
        let logits = tape.linear(x, w, Some(b))?;
        let loss = tape.cross_entropy(logits, &y_train)?;
        let mut grads = tape.backward(loss)?;
        let g = vec![grads.take(w).expect("leaf"), grads.take(b).expect("leaf")];
        adam_step(&mut params, &g, &mut adam)?;
    }
    let logits = tsmamba_core::ops::add_row(&tsmamba_core::ops::matmul(&rows(&split.val)?, &params[0])?, &params[1])?;
    let predicted = classifier::predictions(&logits);
    let correct = split.val.iter().zip(&predicted).filter(|(&i, &p)| ds.label(i) == p).count();
    Ok(correct as f64 / split.val.len() as f64)
}
