//! Dataset loading and label/pixel preprocessing.
//!
//! Image batches are dense `Array4<f64>` tensors with axes
//! (height, width, channel, sample) and values in [0, 1]. Labels are
//! 0-based class indices.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt};
use ndarray::{Array2, Array4, Axis};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// A labelled image batch: (m, n, d, N) pixel tensor plus one class
/// index per sample.
#[derive(Debug, Clone)]
pub struct ImageSet {
    pub images: Array4<f64>,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl ImageSet {
    pub fn new(images: Array4<f64>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        let (_, _, d, n) = images.dim();
        if n == 0 {
            return Err(Error::EmptyInput("image set has no samples".into()));
        }
        if d != 1 && d != 3 {
            return Err(Error::Dimension(format!(
                "expected 1 or 3 channels, got {d}"
            )));
        }
        if labels.len() != n {
            return Err(Error::Format(format!(
                "{} labels for {} images",
                labels.len(),
                n
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Domain(format!(
                "label {bad} outside [0, {class_count})"
            )));
        }
        Ok(ImageSet {
            images,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.images.dim().3
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Copy out the samples at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<ImageSet> {
        let (m, n, d, total) = self.images.dim();
        if let Some(&bad) = indices.iter().find(|&&i| i >= total) {
            return Err(Error::Domain(format!("sample index {bad} out of range")));
        }
        let mut images = Array4::zeros((m, n, d, indices.len()));
        for (dst, &src) in indices.iter().enumerate() {
            images
                .index_axis_mut(Axis(3), dst)
                .assign(&self.images.index_axis(Axis(3), src));
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        ImageSet::new(images, labels, self.class_count)
    }

    /// First `count` samples (or all of them if fewer).
    pub fn take_prefix(&self, count: usize) -> Result<ImageSet> {
        let count = count.min(self.len());
        let indices: Vec<usize> = (0..count).collect();
        self.select(&indices)
    }
}

const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

fn open_reader(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], path: &Path) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Format(format!("{}: truncated file", path.display())))
}

fn read_u32_be(r: &mut impl Read, path: &Path) -> Result<u32> {
    r.read_u32::<BigEndian>()
        .map_err(|_| Error::Format(format!("{}: truncated file", path.display())))
}

/// Load an MNIST-style IDX image/label file pair. Pixels are scaled by
/// 1/255; labels must be 0..=9.
pub fn load_mnist(image_path: &Path, label_path: &Path) -> Result<ImageSet> {
    let mut ir = open_reader(image_path)?;
    let magic = read_u32_be(&mut ir, image_path)?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad IDX image magic {magic:#010x}",
            image_path.display()
        )));
    }
    let count = read_u32_be(&mut ir, image_path)? as usize;
    let rows = read_u32_be(&mut ir, image_path)? as usize;
    let cols = read_u32_be(&mut ir, image_path)? as usize;
    let mut pixels = vec![0u8; count * rows * cols];
    read_exact(&mut ir, &mut pixels, image_path)?;

    let mut lr = open_reader(label_path)?;
    let magic = read_u32_be(&mut lr, label_path)?;
    if magic != IDX_LABEL_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad IDX label magic {magic:#010x}",
            label_path.display()
        )));
    }
    let label_count = read_u32_be(&mut lr, label_path)? as usize;
    if label_count != count {
        return Err(Error::Format(format!(
            "{} images but {} labels",
            count, label_count
        )));
    }
    let mut raw_labels = vec![0u8; count];
    read_exact(&mut lr, &mut raw_labels, label_path)?;

    let mut images = Array4::zeros((rows, cols, 1, count));
    for i in 0..count {
        let base = i * rows * cols;
        for r in 0..rows {
            for c in 0..cols {
                images[(r, c, 0, i)] = pixels[base + r * cols + c] as f64 / 255.0;
            }
        }
    }
    let labels = raw_labels.into_iter().map(|b| b as usize).collect();
    ImageSet::new(images, labels, 10)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CifarVariant {
    Cifar10,
    Cifar100,
}

impl CifarVariant {
    fn label_bytes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 1,
            CifarVariant::Cifar100 => 2,
        }
    }

    fn class_count(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 10,
            CifarVariant::Cifar100 => 100,
        }
    }
}

/// Load CIFAR binary batches. Each record is the label byte(s) followed
/// by 3072 planar R,G,B pixel bytes; CIFAR-100 records carry a coarse
/// label byte first, which is discarded in favour of the fine label.
pub fn load_cifar(paths: &[impl AsRef<Path>], variant: CifarVariant) -> Result<ImageSet> {
    let record = variant.label_bytes() + 3072;
    let class_count = variant.class_count();
    let mut data = Vec::new();
    for p in paths {
        let p = p.as_ref();
        let mut r = open_reader(p)?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::io(p.display().to_string(), e))?;
        if bytes.is_empty() || bytes.len() % record != 0 {
            return Err(Error::Format(format!(
                "{}: length {} is not a multiple of the {}-byte record",
                p.display(),
                bytes.len(),
                record
            )));
        }
        data.extend_from_slice(&bytes);
    }
    let count = data.len() / record;
    let mut images = Array4::zeros((32, 32, 3, count));
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let rec = &data[i * record..(i + 1) * record];
        // Fine label is the last label byte.
        let label = rec[variant.label_bytes() - 1] as usize;
        if label >= class_count {
            return Err(Error::Format(format!(
                "record {i}: label {label} outside [0, {class_count})"
            )));
        }
        labels.push(label);
        let planes = &rec[variant.label_bytes()..];
        for ch in 0..3 {
            for r in 0..32 {
                for c in 0..32 {
                    images[(r, c, ch, i)] = planes[ch * 1024 + r * 32 + c] as f64 / 255.0;
                }
            }
        }
    }
    ImageSet::new(images, labels, class_count)
}

/// Load an image folder described by a tab-separated manifest of
/// `filename<TAB>classname` lines (extra fields are ignored, which makes
/// TinyImageNet's `val_annotations.txt` work directly). Class indices
/// are assigned by sorted class name. Files are decoded as PNG and
/// converted to RGB.
pub fn load_folder_dataset(root: &Path, manifest: &Path) -> Result<ImageSet> {
    let text = std::fs::read_to_string(manifest)
        .map_err(|e| Error::io(manifest.display().to_string(), e))?;
    let mut entries: Vec<(String, String)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let file = fields.next().unwrap_or("").trim();
        let class = fields.next().unwrap_or("").trim();
        if file.is_empty() || class.is_empty() {
            return Err(Error::Format(format!(
                "{}:{}: expected `filename<TAB>classname`",
                manifest.display(),
                lineno + 1
            )));
        }
        entries.push((file.to_string(), class.to_string()));
    }
    if entries.is_empty() {
        return Err(Error::EmptyInput(format!(
            "{}: manifest lists no images",
            manifest.display()
        )));
    }

    let mut class_ids = BTreeMap::new();
    for (_, class) in &entries {
        let next = class_ids.len();
        class_ids.entry(class.clone()).or_insert(next);
    }
    // BTreeMap iterates sorted; re-number in that order.
    for (i, (_, id)) in class_ids.iter_mut().enumerate() {
        *id = i;
    }

    let mut images = None;
    let mut labels = Vec::with_capacity(entries.len());
    let count = entries.len();
    for (i, (file, class)) in entries.iter().enumerate() {
        let path = root.join(file);
        let img = image::open(&path)
            .map_err(|e| {
                Error::io(
                    path.display().to_string(),
                    std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()),
                )
            })?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let (m, n) = (h as usize, w as usize);
        let tensor = images.get_or_insert_with(|| Array4::zeros((m, n, 3, count)));
        if tensor.dim().0 != m || tensor.dim().1 != n {
            return Err(Error::Dimension(format!(
                "{}: size {m}x{n} differs from first image {}x{}",
                path.display(),
                tensor.dim().0,
                tensor.dim().1
            )));
        }
        for r in 0..m {
            for c in 0..n {
                let px = img.get_pixel(c as u32, r as u32);
                for ch in 0..3 {
                    tensor[(r, c, ch, i)] = px[ch] as f64 / 255.0;
                }
            }
        }
        labels.push(class_ids[class]);
    }
    ImageSet::new(images.expect("non-empty"), labels, class_ids.len())
}

/// One-hot encode labels into an N×C {0,1} matrix.
pub fn one_hot(labels: &[usize], class_count: usize) -> Result<Matrix> {
    let mut out = Array2::zeros((labels.len(), class_count));
    for (i, &l) in labels.iter().enumerate() {
        if l >= class_count {
            return Err(Error::Domain(format!(
                "label {l} outside [0, {class_count})"
            )));
        }
        out[(i, l)] = 1.0;
    }
    Ok(out)
}

/// Min-max scale every (sample, channel) plane to [0, 1] independently.
/// A constant plane maps to all zeros.
pub fn min_max_normalize(x: &Array4<f64>) -> Array4<f64> {
    let (m, n, d, count) = x.dim();
    let mut out = Array4::zeros((m, n, d, count));
    for i in 0..count {
        for ch in 0..d {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for r in 0..m {
                for c in 0..n {
                    let v = x[(r, c, ch, i)];
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
            let span = hi - lo;
            if span > 0.0 {
                for r in 0..m {
                    for c in 0..n {
                        out[(r, c, ch, i)] = (x[(r, c, ch, i)] - lo) / span;
                    }
                }
            }
            // span == 0: plane stays zero.
        }
    }
    out
}

/// Double the set with left-right mirrored copies: originals first, then
/// the flips with identical labels.
pub fn augment_hflip(set: &ImageSet) -> ImageSet {
    let (m, n, d, count) = set.images.dim();
    let mut images = Array4::zeros((m, n, d, 2 * count));
    for i in 0..count {
        for r in 0..m {
            for c in 0..n {
                for ch in 0..d {
                    let v = set.images[(r, c, ch, i)];
                    images[(r, c, ch, i)] = v;
                    images[(r, n - 1 - c, ch, count + i)] = v;
                }
            }
        }
    }
    let mut labels = set.labels.clone();
    labels.extend_from_slice(&set.labels);
    ImageSet {
        images,
        labels,
        class_count: set.class_count,
    }
}
