//! Models as checkpoints. Every checkpoint carries the run configuration
//! it was built from, so a model can be rebuilt from the file alone.

use tsmamba_core::autoencoder::AeModel;
use tsmamba_core::classifier::ClassifierModel;
use tsmamba_core::params::ParamStore;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};

pub const KIND_AE: &str = "autoencoder";
pub const KIND_CLF: &str = "classifier";

/// Training context recorded alongside the weights.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainInfo {
    pub epoch: usize,
    pub loss: f64,
    pub class_names: Vec<String>,
}

fn to_checkpoint(kind: &str, store: &ParamStore, cfg: &RunConfig, info: &TrainInfo) -> Checkpoint {
    let mut c = Checkpoint::new();
    c.set_meta("kind", kind);
    c.set_meta("epoch", info.epoch);
    c.set_meta("loss", info.loss);
    c.set_meta("param_count", store.count());
    c.set_meta("classes", info.class_names.join("\n"));
    c.set_meta("config", cfg.to_text());
    for (name, t) in store.iter() {
        c.push_tensor(name, t.clone());
    }
    c
}

pub fn ae_checkpoint(model: &AeModel, cfg: &RunConfig, info: &TrainInfo) -> Checkpoint {
    to_checkpoint(KIND_AE, model.params(), cfg, info)
}

pub fn clf_checkpoint(model: &ClassifierModel, cfg: &RunConfig, info: &TrainInfo) -> Checkpoint {
    to_checkpoint(KIND_CLF, model.params(), cfg, info)
}

fn expect_kind(ckpt: &Checkpoint, kind: &str) -> Result<()> {
    match ckpt.require_meta("kind")? {
        k if k == kind => Ok(()),
        other => Err(Error::Checkpoint(format!("expected a {kind} checkpoint, found {other}"))),
    }
}

pub fn config_of(ckpt: &Checkpoint) -> Result<RunConfig> {
    RunConfig::parse(ckpt.require_meta("config")?)
}

pub fn info_of(ckpt: &Checkpoint) -> Result<TrainInfo> {
    let parse = |key: &str| -> Result<String> { Ok(ckpt.require_meta(key)?.to_string()) };
    let epoch = parse("epoch")?
        .parse()
        .map_err(|_| Error::Checkpoint("epoch is not an integer".into()))?;
    let loss = parse("loss")?
        .parse()
        .map_err(|_| Error::Checkpoint("loss is not a number".into()))?;
    let classes = parse("classes")?;
    Ok(TrainInfo {
        epoch,
        loss,
        class_names: classes.lines().map(str::to_string).collect(),
    })
}

/// The checkpoint's tensors as a parameter store, in file order.
pub fn store_of(ckpt: &Checkpoint) -> ParamStore {
    let mut store = ParamStore::new();
    for (name, t) in &ckpt.tensors {
        store.add(name.clone(), t.clone());
    }
    store
}

fn named(ckpt: &Checkpoint) -> impl Iterator<Item = (&str, &tsmamba_core::Tensor)> {
    ckpt.tensors.iter().map(|(n, t)| (n.as_str(), t))
}

pub fn load_ae(ckpt: &Checkpoint) -> Result<(AeModel, RunConfig)> {
    expect_kind(ckpt, KIND_AE)?;
    let cfg = config_of(ckpt)?;
    let mut model = AeModel::new(&cfg.ae()?, cfg.seed)?;
    model.params_mut().load_exact(named(ckpt))?;
    Ok((model, cfg))
}

pub fn load_clf(ckpt: &Checkpoint) -> Result<(ClassifierModel, RunConfig)> {
    expect_kind(ckpt, KIND_CLF)?;
    let cfg = config_of(ckpt)?;
    let mut model = ClassifierModel::new(&cfg.clf()?, cfg.seed)?;
    model.params_mut().load_exact(named(ckpt))?;
    Ok((model, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> RunConfig {
        RunConfig::parse("image_size = 16\nwidths = 2,2\nd_state = 2").unwrap()
    }

    #[test]
    fn models_survive_the_round_trip() {
        let cfg = tiny();
        let info = TrainInfo {
            epoch: 3,
            loss: 0.25,
            class_names: vec!["other".into(), "target".into()],
        };
        let ae = AeModel::new(&cfg.ae().unwrap(), 5).unwrap();
        let ckpt = ae_checkpoint(&ae, &cfg, &info);
        let bytes = ckpt.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        let (ae2, cfg2) = load_ae(&back).unwrap();
        assert_eq!(ae2.params(), ae.params());
        assert_eq!(cfg2, cfg);
        assert_eq!(info_of(&back).unwrap(), info);
        assert_eq!(ae_checkpoint(&ae2, &cfg2, &info).to_bytes(), bytes);
        assert!(load_clf(&back).is_err());
    }
}
