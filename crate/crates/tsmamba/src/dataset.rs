//! Image folders on disk: `root/<class>/*.png`, class indices in sorted
//! directory-name order, records in sorted path order.

use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use rand::seq::SliceRandom;
use tsmamba_core::Tensor;

use crate::error::{io_err, Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub path: PathBuf,
    pub class: usize,
}

/// Decoded images, each `[C,H,W]` with values in `[0,1]`.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub class_names: Vec<String>,
    pub records: Vec<Record>,
    pub images: Vec<Vec<f64>>,
    pub size: usize,
    pub channels: usize,
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        out.push(entry.map_err(io_err(dir))?.path());
    }
    out.sort();
    Ok(out)
}

/// Decodes one image to `channels` planes of `size × size`, bilinear
/// resampled when the stored size differs.
pub fn load_image(path: &Path, size: usize, channels: usize) -> Result<Vec<f64>> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let side = u32::try_from(size).map_err(|_| Error::Dataset(format!("image size {size} too large")))?;
    let img = if img.width() == side && img.height() == side {
        img
    } else {
        img.resize_exact(side, side, FilterType::Triangle)
    };
    let scale = |v: u8| f64::from(v) / 255.0;
    Ok(match channels {
        1 => img.to_luma8().into_raw().into_iter().map(scale).collect(),
        3 => {
            let rgb = img.to_rgb8().into_raw();
            (0..3)
                .flat_map(|c| rgb.iter().skip(c).step_by(3).map(|&v| scale(v)).collect::<Vec<_>>())
                .collect()
        }
        c => return Err(Error::Dataset(format!("unsupported channel count {c}"))),
    })
}

pub fn load_dataset(root: &Path, size: usize, channels: usize) -> Result<Dataset> {
    let mut class_names = Vec::new();
    let mut records = Vec::new();
    for dir in sorted_entries(root)?.into_iter().filter(|p| p.is_dir()) {
        let name = dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Dataset(format!("{}: class name is not UTF-8", dir.display())))?
            .to_string();
        let files: Vec<PathBuf> = sorted_entries(&dir)?
            .into_iter()
            .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
            .collect();
        if files.is_empty() {
            return Err(Error::Dataset(format!("{}: class directory has no .png files", dir.display())));
        }
        let class = class_names.len();
        class_names.push(name);
        records.extend(files.into_iter().map(|path| Record { path, class }));
    }
    if class_names.is_empty() {
        return Err(Error::Dataset(format!("{}: no class directories", root.display())));
    }
    let images = records
        .iter()
        .map(|r| load_image(&r.path, size, channels))
        .collect::<Result<_>>()?;
    Ok(Dataset {
        root: root.to_path_buf(),
        class_names,
        records,
        images,
        size,
        channels,
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_index(&self, name: &str) -> Result<usize> {
        self.class_names.iter().position(|n| n == name).ok_or_else(|| {
            Error::Dataset(format!("class `{name}` not found; classes are {:?}", self.class_names))
        })
    }

    pub fn label(&self, i: usize) -> usize {
        self.records[i].class
    }

    /// Stacks the selected images into `[B,C,H,W]`.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(indices.len() * self.channels * self.size * self.size);
        for &i in indices {
            data.extend_from_slice(&self.images[i]);
        }
        Ok(Tensor::new([indices.len(), self.channels, self.size, self.size], data)?)
    }
}

/// Train fraction and shuffling seed of a stratified split.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.7,
            seed: 0,
        }
    }
}

/// Record indices of each side, both ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

impl Split {
    pub fn train_of_class(&self, labels: &[usize], class: usize) -> Vec<usize> {
        self.train.iter().copied().filter(|&i| labels[i] == class).collect()
    }

    pub fn val_of_class(&self, labels: &[usize], class: usize) -> Vec<usize> {
        self.val.iter().copied().filter(|&i| labels[i] == class).collect()
    }
}

/// Number of training items taken from a class of `n`: `⌊fraction·n⌋`
/// clamped to `[1, n−1]`.
pub fn train_count(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).floor() as usize).clamp(1, n.saturating_sub(1).max(1))
}

/// Per-class shuffle then cut, over a plain label list.
pub fn split_labels(labels: &[usize], num_classes: usize, spec: SplitSpec) -> Result<Split> {
    let mut rng = tsmamba_core::seeded_rng(spec.seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in 0..num_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < 2 {
            return Err(Error::Dataset(format!(
                "class {class} has {} image(s); a split needs at least 2",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        let k = train_count(members.len(), spec.train_fraction);
        train.extend_from_slice(&members[..k]);
        val.extend_from_slice(&members[k..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok(Split { train, val })
}

pub fn split(ds: &Dataset, spec: SplitSpec) -> Result<Split> {
    let labels: Vec<usize> = ds.records.iter().map(|r| r.class).collect();
    split_labels(&labels, ds.num_classes(), spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_images_at_seventy_percent() {
        let labels = vec![0; 10];
        let s = split_labels(&labels, 1, SplitSpec::default()).unwrap();
        assert_eq!((s.train.len(), s.val.len()), (7, 3));
    }

    #[test]
    fn counts_are_clamped() {
        assert_eq!(train_count(2, 0.7), 1);
        assert_eq!(train_count(3, 0.1), 1);
        assert_eq!(train_count(3, 0.99), 2);
        assert_eq!(train_count(200, 0.7), 140);
    }

    #[test]
    fn tiny_class_is_rejected() {
        assert!(split_labels(&[0, 0, 1], 2, SplitSpec::default()).is_err());
    }

    #[test]
    fn same_seed_same_partition() {
        let labels: Vec<usize> = (0..40).map(|i| i % 3).collect();
        let spec = SplitSpec { train_fraction: 0.7, seed: 9 };
        assert_eq!(split_labels(&labels, 3, spec).unwrap(), split_labels(&labels, 3, spec).unwrap());
        let other = SplitSpec { seed: 10, ..spec };
        assert_ne!(split_labels(&labels, 3, spec).unwrap(), split_labels(&labels, 3, other).unwrap());
    }
}
