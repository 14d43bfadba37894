//! Seeded synthetic texture datasets.
//!
//! `target` images are smooth: a mid-grey field plus up to four
//! low-frequency gratings and a few Gaussian blobs. `other` images are
//! per-pixel speckle around the same grey. Both have the same expected value
//! at every pixel, so no linear function of the raw pixels separates them
//! well. Five-class mode adds `stripes`, `checker` and `rings`.

use std::f64::consts::PI;
use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::{GrayImage, ImageFormat};
use rand::Rng;
use tsmamba_core::Rng as CoreRng;

use crate::checkpoint::write_atomic;
use crate::error::{io_err, Error, Result};

/// Texture families; the discriminant is the RNG stream of that family, so
/// a family's images do not depend on which other families are generated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Texture {
    Target = 1,
    Other = 2,
    Stripes = 3,
    Checker = 4,
    Rings = 5,
}

impl Texture {
    pub fn name(self) -> &'static str {
        match self {
            Texture::Target => "target",
            Texture::Other => "other",
            Texture::Stripes => "stripes",
            Texture::Checker => "checker",
            Texture::Rings => "rings",
        }
    }

    /// Families of a `classes`-class dataset (2 or 5).
    pub fn families(classes: usize) -> Result<&'static [Texture]> {
        match classes {
            2 => Ok(&[Texture::Target, Texture::Other]),
            5 => Ok(&[
                Texture::Target,
                Texture::Other,
                Texture::Stripes,
                Texture::Checker,
                Texture::Rings,
            ]),
            _ => Err(Error::Config(format!("synthetic data has 2 or 5 classes, not {classes}"))),
        }
    }

    /// One `size × size` image with values in `[0,1]`, row-major.
    pub fn render(self, size: usize, rng: &mut CoreRng) -> Vec<f64> {
        let s = size as f64;
        let mut img = vec![0.5; size * size];
        let mut each = |f: &mut dyn FnMut(f64, f64) -> f64| {
            for (i, v) in img.iter_mut().enumerate() {
                *v += f((i % size) as f64, (i / size) as f64);
            }
        };
        match self {
            Texture::Target => {
                for _ in 0..rng.gen_range(1..=4) {
                    let (fx, fy) = loop {
                        let f = (rng.gen_range(-3i32..=3), rng.gen_range(-3i32..=3));
                        if f != (0, 0) {
                            break f;
                        }
                    };
                    let amp = rng.gen_range(0.05..0.12);
                    let phase = rng.gen_range(0.0..2.0 * PI);
                    each(&mut |x, y| {
                        amp * (2.0 * PI * (f64::from(fx) * x + f64::from(fy) * y) / s + phase).cos()
                    });
                }
                for _ in 0..rng.gen_range(1..=3) {
                    let (cx, cy) = (rng.gen_range(0.0..s), rng.gen_range(0.0..s));
                    let sigma = rng.gen_range(0.08..0.2) * s;
                    let amp = rng.gen_range(0.1..0.2) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                    each(&mut |x, y| {
                        let r2 = (x - cx).powi(2) + (y - cy).powi(2);
                        amp * (-r2 / (2.0 * sigma * sigma)).exp()
                    });
                }
            }
            Texture::Other => {
                let amp = rng.gen_range(0.2..0.3);
                for v in img.iter_mut() {
                    *v += rng.gen_range(-amp..amp);
                }
            }
            Texture::Stripes => {
                let angle = rng.gen_range(0.0..PI);
                let period = rng.gen_range(4.0..10.0);
                let phase = rng.gen_range(0.0..2.0 * PI);
                let (c, sn) = (angle.cos(), angle.sin());
                each(&mut |x, y| {
                    let t = 2.0 * PI * (c * x + sn * y) / period + phase;
                    if t.sin() >= 0.0 { 0.3 } else { -0.3 }
                });
            }
            Texture::Checker => {
                let period = rng.gen_range(4..=12) as f64;
                let (ox, oy) = (rng.gen_range(0.0..period), rng.gen_range(0.0..period));
                each(&mut |x, y| {
                    let parity = (((x + ox) / period).floor() + ((y + oy) / period).floor()) as i64;
                    if parity.rem_euclid(2) == 0 { 0.3 } else { -0.3 }
                });
            }
            Texture::Rings => {
                let (cx, cy) = (rng.gen_range(0.0..s), rng.gen_range(0.0..s));
                let period = rng.gen_range(5.0..12.0);
                let phase = rng.gen_range(0.0..2.0 * PI);
                each(&mut |x, y| {
                    let r = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
                    0.3 * (2.0 * PI * r / period + phase).cos()
                });
            }
        }
        if !matches!(self, Texture::Target | Texture::Other) {
            for v in img.iter_mut() {
                *v += rng.gen_range(-0.03..0.03);
            }
        }
        img.iter().map(|v| v.clamp(0.0, 1.0)).collect()
    }
}

/// Quantizes `[0,1]` values to 8-bit grey.
pub fn to_gray8(values: &[f64]) -> Vec<u8> {
    values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
}

pub fn encode_png(size: usize, pixels: Vec<u8>) -> Result<Vec<u8>> {
    let side = size as u32;
    let img = GrayImage::from_raw(side, side, pixels).ok_or_else(|| Error::Dataset("pixel buffer size".into()))?;
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).map_err(|source| Error::Image {
        path: "<memory>".into(),
        source,
    })?;
    Ok(buf.into_inner())
}

/// Writes `root/<family>/<family>_NNNN.png` for every family. Stale PNGs in
/// those class directories are removed so the folder holds exactly this
/// dataset.
pub fn gen_synthetic(root: &Path, seed: u64, per_class: usize, classes: usize, size: usize) -> Result<Vec<String>> {
    if per_class == 0 || size == 0 {
        return Err(Error::Config("image count and size must be positive".into()));
    }
    let mut names = Vec::new();
    for &family in Texture::families(classes)? {
        let dir = root.join(family.name());
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let mut rng = tsmamba_core::seeded_rng(seed);
        rng.set_stream(family as u64);
        let mut written = Vec::with_capacity(per_class);
        for i in 0..per_class {
            let pixels = to_gray8(&family.render(size, &mut rng));
            let path = dir.join(format!("{}_{i:04}.png", family.name()));
            write_atomic(&path, &encode_png(size, pixels)?)?;
            written.push(path);
        }
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let path = entry.map_err(io_err(&dir))?.path();
            let png = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
            if png && !written.contains(&path) {
                fs::remove_file(&path).map_err(io_err(&path))?;
            }
        }
        names.push(family.name().to_string());
    }
    names.sort();
    Ok(names)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_are_in_range_and_seeded() {
        for &t in Texture::families(5).unwrap() {
            let a = t.render(16, &mut tsmamba_core::seeded_rng(3));
            let b = t.render(16, &mut tsmamba_core::seeded_rng(3));
            assert_eq!(a, b);
            assert_eq!(a.len(), 256);
            assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn speckle_is_rougher_than_target() {
        let roughness = |img: &[f64]| -> f64 {
            img.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / img.len() as f64
        };
        let mut rng = tsmamba_core::seeded_rng(0);
        let t = Texture::Target.render(64, &mut rng);
        let o = Texture::Other.render(64, &mut rng);
        assert!(roughness(&o) > 5.0 * roughness(&t));
    }

    #[test]
    fn only_two_or_five_classes() {
        assert!(Texture::families(3).is_err());
    }
}
