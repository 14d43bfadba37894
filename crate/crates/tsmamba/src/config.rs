//! Run configuration: a flat `key = value` text file.
//!
//! Blank lines and `#` comments are ignored. `profile` selects the base
//! values (`desk` or `paper`) and every other key overrides one field,
//! whatever its position in the file. Unknown keys are errors.
//!
//! | key            | meaning                                             |
//! |----------------|-----------------------------------------------------|
//! | `profile`      | `desk` (default) or `paper`                         |
//! | `image_size`   | square input side, divisible by `2^layers`          |
//! | `channels`     | 1 (grayscale) or 3 (RGB)                            |
//! | `widths`       | comma-separated encoder widths, one per layer       |
//! | `d_state`      | SSM state size                                      |
//! | `mlp_ratio`    | hidden width multiplier of the block MLP            |
//! | `scan`         | `seq` or `par`                                      |
//! | `epochs_ae`    | phase-1 epochs                                      |
//! | `epochs_clf`   | phase-2 epochs                                      |
//! | `lr`           | phase-1 Adam learning rate                          |
//! | `lr_clf`       | phase-2 Adam learning rate                          |
//! | `batch`        | mini-batch size                                     |
//! | `seed`         | RNG seed for init, split and shuffling              |
//! | `train_fraction` | share of each class used for training            |
//! | `target_class` | class the autoencoder is fitted on                  |
//! | `num_classes`  | expected class count of the dataset                 |
//! | `classifier`   | `desk` or `resnet18`                                |

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use tsmamba_core::classifier::ClassifierConfig;
use tsmamba_core::scan::ScanAlgo;
use tsmamba_core::tsmamba::TsMambaConfig;

use crate::error::{io_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    Desk,
    Paper,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassifierKind {
    Desk,
    Resnet18,
}

impl ClassifierKind {
    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::Desk => "desk",
            ClassifierKind::Resnet18 => "resnet18",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub profile: Profile,
    pub image_size: usize,
    pub channels: usize,
    pub widths: Vec<usize>,
    pub d_state: usize,
    pub mlp_ratio: usize,
    pub scan: ScanAlgo,
    pub epochs_ae: usize,
    pub epochs_clf: usize,
    pub lr: f64,
    pub lr_clf: f64,
    pub batch: usize,
    pub seed: u64,
    pub train_fraction: f64,
    pub target_class: String,
    pub num_classes: usize,
    pub classifier: ClassifierKind,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl RunConfig {
    /// 64×64 grayscale, narrow encoder, 60 epochs per phase, batch 16.
    pub fn desk() -> Self {
        Self {
            profile: Profile::Desk,
            image_size: 64,
            channels: 1,
            widths: vec![8, 16, 32, 64],
            d_state: 8,
            mlp_ratio: 2,
            scan: ScanAlgo::Sequential,
            epochs_ae: 60,
            epochs_clf: 60,
            lr: 2e-3,
            lr_clf: 1e-3,
            batch: 16,
            seed: 0,
            train_fraction: 0.7,
            target_class: "target".into(),
            num_classes: 2,
            classifier: ClassifierKind::Desk,
        }
    }

    /// 110 epochs at learning rate 1.5e-5, full-width encoder and the
    /// 18-layer classifier.
    pub fn paper() -> Self {
        Self {
            profile: Profile::Paper,
            widths: vec![96, 192, 384, 768],
            d_state: 16,
            epochs_ae: 110,
            epochs_clf: 110,
            lr: tsmamba_core::optim::DEFAULT_LR,
            lr_clf: tsmamba_core::optim::DEFAULT_LR,
            classifier: ClassifierKind::Resnet18,
            ..Self::desk()
        }
    }

    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Desk => Self::desk(),
            Profile::Paper => Self::paper(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            pairs.push((k.trim(), v.trim()));
        }
        let profile = match pairs.iter().rev().find(|(k, _)| *k == "profile") {
            None => Profile::Desk,
            Some((_, "desk")) => Profile::Desk,
            Some((_, "paper")) => Profile::Paper,
            Some((_, other)) => return Err(Error::Config(format!("unknown profile `{other}`"))),
        };
        let mut cfg = Self::for_profile(profile);
        for (k, v) in pairs {
            cfg.apply(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
        }
        match key {
            "profile" => {}
            "image_size" => self.image_size = num(key, value)?,
            "channels" => self.channels = num(key, value)?,
            "widths" => {
                self.widths = value
                    .split(',')
                    .map(|w| num(key, w.trim()))
                    .collect::<Result<_>>()?
            }
            "d_state" => self.d_state = num(key, value)?,
            "mlp_ratio" => self.mlp_ratio = num(key, value)?,
            "scan" => self.scan = num(key, value)?,
            "epochs_ae" => self.epochs_ae = num(key, value)?,
            "epochs_clf" => self.epochs_clf = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "lr_clf" => self.lr_clf = num(key, value)?,
            "batch" => self.batch = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "train_fraction" => self.train_fraction = num(key, value)?,
            "target_class" => self.target_class = value.to_string(),
            "num_classes" => self.num_classes = num(key, value)?,
            "classifier" => {
                self.classifier = match value {
                    "desk" => ClassifierKind::Desk,
                    "resnet18" => ClassifierKind::Resnet18,
                    _ => return Err(Error::Config(format!("unknown classifier `{value}`"))),
                }
            }
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.channels == 1 || self.channels == 3) {
            return Err(Error::Config(format!("channels must be 1 or 3, got {}", self.channels)));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be positive".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config("train_fraction must lie in (0, 1)".into()));
        }
        if !(self.lr > 0.0 && self.lr_clf > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        self.ae()?;
        self.clf()?;
        Ok(())
    }

    pub fn ae(&self) -> Result<TsMambaConfig> {
        let cfg = TsMambaConfig {
            num_layers: self.widths.len(),
            widths: self.widths.clone(),
            d_state: self.d_state,
            mlp_ratio: self.mlp_ratio,
            image_height: self.image_size,
            image_width: self.image_size,
            in_channels: self.channels,
            scan: self.scan,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn clf(&self) -> Result<ClassifierConfig> {
        let (c, s, n) = (self.channels, self.image_size, self.num_classes);
        let cfg = match self.classifier {
            ClassifierKind::Desk => ClassifierConfig::desk(c, s, s, n),
            ClassifierKind::Resnet18 => ClassifierConfig::resnet18(c, s, s, n),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text form; parsing it gives back an equal config.
    pub fn to_text(&self) -> String {
        let widths: Vec<String> = self.widths.iter().map(usize::to_string).collect();
        let scan = match self.scan {
            ScanAlgo::Sequential => "seq",
            ScanAlgo::Parallel => "par",
        };
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| {
            writeln!(s, "{k} = {v}").expect("string write");
        };
        kv("profile", &self.profile.name());
        kv("image_size", &self.image_size);
        kv("channels", &self.channels);
        kv("widths", &widths.join(","));
        kv("d_state", &self.d_state);
        kv("mlp_ratio", &self.mlp_ratio);
        kv("scan", &scan);
        kv("epochs_ae", &self.epochs_ae);
        kv("epochs_clf", &self.epochs_clf);
        kv("lr", &self.lr);
        kv("lr_clf", &self.lr_clf);
        kv("batch", &self.batch);
        kv("seed", &self.seed);
        kv("train_fraction", &self.train_fraction);
        kv("target_class", &self.target_class);
        kv("num_classes", &self.num_classes);
        kv("classifier", &self.classifier.name());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_desk_profile() {
        let cfg = RunConfig::parse("# nothing\n\n").unwrap();
        assert_eq!(cfg, RunConfig::desk());
        assert_eq!((cfg.image_size, cfg.epochs_ae, cfg.batch), (64, 60, 16));
    }

    #[test]
    fn paper_profile_and_overrides() {
        let cfg = RunConfig::parse("epochs_ae = 5\nprofile = paper\nwidths = 4, 8, 8, 16\n").unwrap();
        assert_eq!(cfg.profile, Profile::Paper);
        assert_eq!(cfg.epochs_ae, 5);
        assert_eq!(cfg.epochs_clf, 110);
        assert_eq!(cfg.lr, 1.5e-5);
        assert_eq!(cfg.widths, vec![4, 8, 8, 16]);
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::desk();
        cfg.lr = 0.1 + 0.2;
        cfg.scan = ScanAlgo::Parallel;
        cfg.target_class = "malicious drones".into();
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn bad_input_is_reported() {
        for text in [
            "colour = red",
            "epochs_ae = many",
            "just words",
            "profile = huge",
            "channels = 2",
            "image_size = 40",
            "widths = 8,0",
            "train_fraction = 1.0",
        ] {
            assert!(RunConfig::parse(text).is_err(), "{text}");
        }
        let msg = RunConfig::parse("colour = red").unwrap_err().to_string();
        assert!(msg.contains("colour"), "{msg}");
    }

    #[test]
    fn widths_set_layer_count() {
        let cfg = RunConfig::parse("widths = 4,8\nimage_size = 16").unwrap();
        assert_eq!(cfg.ae().unwrap().num_layers, 2);
    }
}
