//! Labeled image datasets: IDX and PNG-directory ingestion, split tagging,
//! and generated toy datasets for desk-scale experiments.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::seed::{fingerprint, rng_from_seed};
use crate::{Error, Image, Result, Shape};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_RGB_IMAGES_MAGIC: u32 = 0x0000_0804;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    HeldOut,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    shape: Shape,
    num_classes: usize,
    images: Vec<Image>,
    labels: Vec<usize>,
    splits: Vec<Split>,
}

impl LabeledDataset {
    pub fn new(
        shape: Shape,
        num_classes: usize,
        images: Vec<Image>,
        labels: Vec<usize>,
        splits: Vec<Split>,
    ) -> Result<Self> {
        if images.len() != labels.len() || images.len() != splits.len() {
            return Err(Error::invalid("images, labels and splits differ in length"));
        }
        if num_classes == 0 {
            return Err(Error::invalid("dataset needs at least one class"));
        }
        if let Some(img) = images.iter().find(|img| img.shape() != shape) {
            return Err(Error::invalid(format!(
                "image shape {:?} differs from dataset shape {shape:?}",
                img.shape()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::invalid(format!("label {bad} outside [0, {num_classes})")));
        }
        Ok(LabeledDataset { shape, num_classes, images, labels, splits })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Image, usize, Split)> {
        self.images
            .iter()
            .zip(&self.labels)
            .zip(&self.splits)
            .map(|((img, &l), &s)| (img, l, s))
    }

    /// A new dataset restricted to one split (all tagged with that split).
    pub fn subset(&self, split: Split) -> LabeledDataset {
        let (images, labels): (Vec<_>, Vec<_>) = self
            .iter()
            .filter(|(_, _, s)| *s == split)
            .map(|(img, l, _)| (img.clone(), l))
            .unzip();
        let splits = vec![split; images.len()];
        LabeledDataset { shape: self.shape, num_classes: self.num_classes, images, labels, splits }
    }

    pub fn class_counts(&self, split: Split) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for (_, l, s) in self.iter() {
            if s == split {
                counts[l] += 1;
            }
        }
        counts
    }

    /// Re-tags `per_class` training examples of every class as held-out,
    /// choosing them with a seeded shuffle.
    pub fn hold_out_per_class(&mut self, per_class: usize, seed: u64) {
        let mut rng = rng_from_seed(seed);
        for class in 0..self.num_classes {
            let mut idx: Vec<usize> = (0..self.len())
                .filter(|&i| self.labels[i] == class && self.splits[i] == Split::Train)
                .collect();
            idx.shuffle(&mut rng);
            for &i in idx.iter().take(per_class) {
                self.splits[i] = Split::HeldOut;
            }
        }
    }

    /// Concatenates another dataset with the same geometry.
    pub fn extend(&mut self, other: LabeledDataset) -> Result<()> {
        if other.shape != self.shape || other.num_classes != self.num_classes {
            return Err(Error::invalid("cannot merge datasets of different geometry"));
        }
        self.images.extend(other.images);
        self.labels.extend(other.labels);
        self.splits.extend(other.splits);
        Ok(())
    }

    /// SHA-256 over geometry, labels, splits and quantized pixels.
    pub fn fingerprint(&self) -> String {
        let mut bytes = Vec::with_capacity(self.len() * (self.shape.len() + 2) + 32);
        for v in [self.shape.height, self.shape.width, self.shape.channels, self.num_classes] {
            bytes.extend((v as u64).to_le_bytes());
        }
        for (img, l, s) in self.iter() {
            bytes.extend((l as u32).to_le_bytes());
            bytes.push(s as u8);
            for p in img.pixels() {
                bytes.extend(p.to_le_bytes());
            }
        }
        fingerprint(&bytes)
    }

    /// Reads an IDX image file and an IDX label file (MNIST wire format).
    pub fn read_idx(images: &Path, labels: &Path, split: Split) -> Result<Self> {
        let (shape, raw) = read_idx_images(&std::fs::read(images)?)?;
        let labels = read_idx_labels(&std::fs::read(labels)?)?;
        if raw.len() != labels.len() {
            return Err(Error::Format(format!(
                "{} images but {} labels",
                raw.len(),
                labels.len()
            )));
        }
        let num_classes = labels.iter().copied().max().map_or(0, |m| m + 1).max(1);
        let images = raw
            .iter()
            .map(|bytes| Image::from_bytes(shape, bytes))
            .collect::<Result<Vec<_>>>()?;
        let splits = vec![split; images.len()];
        LabeledDataset::new(shape, num_classes, images, labels, splits)
    }

    pub fn write_idx(&self, images: &Path, labels: &Path) -> Result<()> {
        let mut img_out = Vec::new();
        let dims: Vec<u32> = if self.shape.channels == 1 {
            img_out.extend(IDX_IMAGES_MAGIC.to_be_bytes());
            vec![self.len() as u32, self.shape.height as u32, self.shape.width as u32]
        } else {
            img_out.extend(IDX_RGB_IMAGES_MAGIC.to_be_bytes());
            vec![
                self.len() as u32,
                self.shape.height as u32,
                self.shape.width as u32,
                self.shape.channels as u32,
            ]
        };
        for d in dims {
            img_out.extend(d.to_be_bytes());
        }
        for img in &self.images {
            img_out.extend(img.to_bytes());
        }
        std::fs::File::create(images)?.write_all(&img_out)?;

        let mut lab_out = Vec::new();
        lab_out.extend(IDX_LABELS_MAGIC.to_be_bytes());
        lab_out.extend((self.len() as u32).to_be_bytes());
        lab_out.extend(self.labels.iter().map(|&l| l as u8));
        std::fs::File::create(labels)?.write_all(&lab_out)?;
        Ok(())
    }

    /// Reads `<dir>/<class index>/*.png`. Files are visited in sorted order.
    pub fn read_png_dir(dir: &Path, split: Split) -> Result<Self> {
        let mut class_dirs: Vec<(usize, std::path::PathBuf)> = Vec::new();
        for entry in std::fs::read_dir(dir)? {
            let entry = entry?;
            if !entry.file_type()?.is_dir() {
                continue;
            }
            let name = entry.file_name().to_string_lossy().to_string();
            let class: usize = name
                .parse()
                .map_err(|_| Error::Format(format!("class directory `{name}` is not an index")))?;
            class_dirs.push((class, entry.path()));
        }
        class_dirs.sort();
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for (class, path) in &class_dirs {
            let mut files: Vec<_> = std::fs::read_dir(path)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|ext| ext == "png"))
                .collect();
            files.sort();
            for file in files {
                images.push(Image::load_png(&file)?);
                labels.push(*class);
            }
        }
        let shape = images
            .first()
            .map(|img| img.shape())
            .ok_or_else(|| Error::invalid(format!("no PNG images under {}", dir.display())))?;
        let num_classes = class_dirs.iter().map(|(c, _)| c + 1).max().unwrap_or(1);
        let splits = vec![split; images.len()];
        LabeledDataset::new(shape, num_classes, images, labels, splits)
    }
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Format("truncated IDX header".into()))
}

fn read_idx_images(bytes: &[u8]) -> Result<(Shape, Vec<Vec<u8>>)> {
    let magic = read_u32(bytes, 0)?;
    let (count, shape, header) = match magic {
        IDX_IMAGES_MAGIC => (
            read_u32(bytes, 4)? as usize,
            Shape::new(read_u32(bytes, 8)? as usize, read_u32(bytes, 12)? as usize, 1),
            16,
        ),
        IDX_RGB_IMAGES_MAGIC => (
            read_u32(bytes, 4)? as usize,
            Shape::new(
                read_u32(bytes, 8)? as usize,
                read_u32(bytes, 12)? as usize,
                read_u32(bytes, 16)? as usize,
            ),
            20,
        ),
        other => return Err(Error::Format(format!("bad IDX image magic {other:#010x}"))),
    };
    let body = &bytes[header..];
    if body.len() != count * shape.len() {
        return Err(Error::Format(format!(
            "IDX body has {} bytes, expected {}",
            body.len(),
            count * shape.len()
        )));
    }
    let mut reader = body;
    let mut images = Vec::with_capacity(count);
    for _ in 0..count {
        let mut buf = vec![0u8; shape.len()];
        reader.read_exact(&mut buf)?;
        images.push(buf);
    }
    Ok((shape, images))
}

fn read_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = read_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!("bad IDX label magic {magic:#010x}")));
    }
    let count = read_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(Error::Format(format!("IDX label body has {} bytes, expected {count}", body.len())));
    }
    Ok(body.iter().map(|&b| b as usize).collect())
}

/// Parameters of the generated prototype dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub shape: Shape,
    pub num_classes: usize,
    pub train_per_class: usize,
    pub held_out_per_class: usize,
    pub test_per_class: usize,
    /// Standard deviation of the pixel noise added to each prototype.
    pub noise: f64,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            shape: Shape::new(8, 8, 1),
            num_classes: 10,
            train_per_class: 60,
            held_out_per_class: 20,
            test_per_class: 20,
            noise: 0.15,
            seed: 0,
        }
    }
}

/// Each class is a smooth random prototype (a sum of Gaussian bumps);
/// examples are the prototype plus clipped pixel noise.
pub fn toy_prototypes(config: &ToyConfig) -> Result<LabeledDataset> {
    let mut rng = rng_from_seed(config.seed);
    let shape = config.shape;
    let noise = Normal::new(0.0, config.noise.max(0.0))
        .map_err(|e| Error::invalid(format!("noise: {e}")))?;
    let prototypes: Vec<Vec<f64>> = (0..config.num_classes)
        .map(|_| bump_pattern(shape, 3, &mut rng))
        .collect();
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut splits = Vec::new();
    for (split, count) in [
        (Split::Train, config.train_per_class),
        (Split::HeldOut, config.held_out_per_class),
        (Split::Test, config.test_per_class),
    ] {
        for (class, proto) in prototypes.iter().enumerate() {
            for _ in 0..count {
                let pixels = proto.iter().map(|p| p + noise.sample(&mut rng)).collect();
                images.push(Image::from_clamped(shape, pixels)?);
                labels.push(class);
                splits.push(split);
            }
        }
    }
    LabeledDataset::new(shape, config.num_classes, images, labels, splits)
}

fn bump_pattern<R: Rng + ?Sized>(shape: Shape, bumps: usize, rng: &mut R) -> Vec<f64> {
    let mut out = vec![0.0; shape.len()];
    let scale = shape.height.max(shape.width) as f64;
    for _ in 0..bumps {
        let cy = rng.random::<f64>() * shape.height as f64;
        let cx = rng.random::<f64>() * shape.width as f64;
        let radius = scale * (0.12 + 0.15 * rng.random::<f64>());
        let channel_gain: Vec<f64> = (0..shape.channels).map(|_| rng.random::<f64>()).collect();
        for y in 0..shape.height {
            for x in 0..shape.width {
                let d2 = (y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2);
                let v = (-d2 / (2.0 * radius * radius)).exp();
                for (c, gain) in channel_gain.iter().enumerate() {
                    out[(y * shape.width + x) * shape.channels + c] += v * (0.5 + 0.5 * gain);
                }
            }
        }
    }
    let max = out.iter().copied().fold(0.0, f64::max).max(1e-12);
    out.iter().map(|v| v / max).collect()
}

/// Two isotropic Gaussian blobs around intensity 0.3 and 0.7 (two classes).
pub fn toy_blobs(shape: Shape, per_class: usize, spread: f64, seed: u64) -> Result<LabeledDataset> {
    let mut rng = rng_from_seed(seed);
    let noise = Normal::new(0.0, spread).map_err(|e| Error::invalid(format!("spread: {e}")))?;
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for class in 0..2 {
        let centre = if class == 0 { 0.3 } else { 0.7 };
        for _ in 0..per_class {
            let pixels = (0..shape.len()).map(|_| centre + noise.sample(&mut rng)).collect();
            images.push(Image::from_clamped(shape, pixels)?);
            labels.push(class);
        }
    }
    let splits = vec![Split::Train; images.len()];
    LabeledDataset::new(shape, 2, images, labels, splits)
}

/// XOR over the mean intensities of the left and right image halves:
/// class 1 iff exactly one half is bright. Not linearly separable.
pub fn toy_xor(shape: Shape, per_quadrant: usize, noise_sd: f64, seed: u64) -> Result<LabeledDataset> {
    let mut rng = rng_from_seed(seed);
    let noise = Normal::new(0.0, noise_sd).map_err(|e| Error::invalid(format!("noise: {e}")))?;
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for (left, right) in [(0.2, 0.2), (0.8, 0.8), (0.2, 0.8), (0.8, 0.2)] {
        let label = usize::from(left != right);
        for _ in 0..per_quadrant {
            let mut pixels = Vec::with_capacity(shape.len());
            for _y in 0..shape.height {
                for x in 0..shape.width {
                    let base = if x < shape.width / 2 { left } else { right };
                    for _c in 0..shape.channels {
                        pixels.push(base + noise.sample(&mut rng));
                    }
                }
            }
            images.push(Image::from_clamped(shape, pixels)?);
            labels.push(label);
        }
    }
    let splits = vec![Split::Train; images.len()];
    LabeledDataset::new(shape, 2, images, labels, splits)
}
