//! Shared test data: a deterministic synthetic digit corpus written as
//! genuine IDX files, or the real MNIST files when RESCNET_MNIST_DIR
//! points at a directory containing them.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use byteorder::{BigEndian, WriteBytesExt};
use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};
use rescnet::dataset::{load_mnist, ImageSet};

pub const TRAIN_POOL: usize = 4000;
pub const TEST_POOL: usize = 1000;

const SIDE: usize = 28;
const PIXELS: usize = SIDE * SIDE;
const SHIFT_MAX: i64 = 5;
const NOISE: f64 = 0.55;
const CLUTTER_BARS: usize = 6;
const SALT_PIXELS: usize = 40;

pub const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

/// Seven-segment encoding per digit: a=top, b=top-right, c=bottom-right,
/// d=bottom, e=bottom-left, f=top-left, g=middle.
const SEGMENTS: [&str; 10] = [
    "abcdef", "bc", "abged", "abgcd", "fgbc", "afgcd", "afgecd", "abc", "abcdefg", "abcdfg",
];

const BOX_H: usize = 20;
const BOX_W: usize = 12;
const THICK: usize = 2;
const BOX_TOP: usize = 4;
const BOX_LEFT: usize = 8;

fn segment_pixels(segment: char) -> Vec<(usize, usize)> {
    let h = BOX_H;
    let w = BOX_W;
    let t = THICK;
    let (rows, cols) = match segment {
        'a' => (0..t, 0..w),
        'b' => (0..h / 2, w - t..w),
        'c' => (h / 2..h, w - t..w),
        'd' => (h - t..h, 0..w),
        'e' => (h / 2..h, 0..t),
        'f' => (0..h / 2, 0..t),
        'g' => ((h - t) / 2..(h + t) / 2, 0..w),
        other => panic!("unknown segment {other}"),
    };
    let mut out = Vec::new();
    for r in rows {
        for c in cols.clone() {
            out.push((BOX_TOP + r, BOX_LEFT + c));
        }
    }
    out
}

/// Render one digit with per-image shift, per-segment intensity,
/// stroke speckle, clutter bars, salt pixels, and background noise,
/// quantized to 8-bit pixels. The distortions keep the digit identity
/// intact, so the labels stay exact while raw pixels become unreliable.
fn render(digit: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let mut canvas = vec![0.0f64; PIXELS];
    let dy = rng.gen_range(-SHIFT_MAX..=SHIFT_MAX);
    let dx = rng.gen_range(-SHIFT_MAX..=SHIFT_MAX);
    let amplitude = rng.gen_range(0.5..1.0);
    for segment in SEGMENTS[digit].chars() {
        let segment_amp = rng.gen_range(0.45..1.0);
        for (r, c) in segment_pixels(segment) {
            let rr = r as i64 + dy;
            let cc = c as i64 + dx;
            let speckle = rng.gen_range(0.6..1.0);
            if (0..SIDE as i64).contains(&rr) && (0..SIDE as i64).contains(&cc) {
                let cell = &mut canvas[rr as usize * SIDE + cc as usize];
                *cell = cell.max(amplitude * segment_amp * speckle);
            }
        }
    }
    for _ in 0..CLUTTER_BARS {
        let len = rng.gen_range(3..8usize);
        let vertical = rng.gen_bool(0.5);
        let r0 = rng.gen_range(0..SIDE - if vertical { len } else { 1 });
        let c0 = rng.gen_range(0..SIDE - if vertical { 1 } else { len });
        let intensity = rng.gen_range(0.3..0.95);
        for j in 0..len {
            let (r, c) = if vertical { (r0 + j, c0) } else { (r0, c0 + j) };
            let cell = &mut canvas[r * SIDE + c];
            *cell = cell.max(intensity);
        }
    }
    for _ in 0..SALT_PIXELS {
        let r = rng.gen_range(0..SIDE);
        let c = rng.gen_range(0..SIDE);
        let intensity = rng.gen_range(0.4..1.0);
        let cell = &mut canvas[r * SIDE + c];
        *cell = cell.max(intensity);
    }
    canvas
        .into_iter()
        .map(|v| {
            let noisy = (v + rng.gen_range(0.0..NOISE)).clamp(0.0, 1.0);
            (noisy * 255.0).round() as u8
        })
        .collect()
}

fn write_idx_images(path: &Path, images: &[Vec<u8>]) {
    let mut buf = Vec::with_capacity(16 + images.len() * PIXELS);
    buf.write_u32::<BigEndian>(0x0803).unwrap();
    buf.write_u32::<BigEndian>(images.len() as u32).unwrap();
    buf.write_u32::<BigEndian>(SIDE as u32).unwrap();
    buf.write_u32::<BigEndian>(SIDE as u32).unwrap();
    for image in images {
        buf.extend_from_slice(image);
    }
    std::fs::write(path, buf).expect("write IDX images");
}

fn write_idx_labels(path: &Path, labels: &[u8]) {
    let mut buf = Vec::with_capacity(8 + labels.len());
    buf.write_u32::<BigEndian>(0x0801).unwrap();
    buf.write_u32::<BigEndian>(labels.len() as u32).unwrap();
    buf.extend_from_slice(labels);
    std::fs::write(path, buf).expect("write IDX labels");
}

fn generate_split(dir: &Path, image_name: &str, label_name: &str, count: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let digit = i % 10;
        images.push(render(digit, &mut rng));
        labels.push(digit as u8);
    }
    write_idx_images(&dir.join(image_name), &images);
    write_idx_labels(&dir.join(label_name), &labels);
}

struct DataDir {
    dir: PathBuf,
    _keep: Option<tempfile::TempDir>,
}

fn build() -> DataDir {
    if let Ok(dir) = std::env::var("RESCNET_MNIST_DIR") {
        let dir = PathBuf::from(dir);
        if MNIST_FILES.iter().all(|name| dir.join(name).exists()) {
            return DataDir { dir, _keep: None };
        }
    }
    let tmp = tempfile::tempdir().expect("create corpus dir");
    let dir = tmp.path().to_path_buf();
    generate_split(&dir, MNIST_FILES[0], MNIST_FILES[1], TRAIN_POOL, 0xC0FFEE);
    generate_split(&dir, MNIST_FILES[2], MNIST_FILES[3], TEST_POOL, 0xFACADE);
    DataDir { dir, _keep: Some(tmp) }
}

/// Directory holding the four MNIST-layout IDX files.
pub fn data_dir() -> &'static Path {
    static DIR: OnceLock<DataDir> = OnceLock::new();
    &DIR.get_or_init(build).dir
}

pub fn train_set(count: usize) -> ImageSet {
    let dir = data_dir();
    let set = load_mnist(&dir.join(MNIST_FILES[0]), &dir.join(MNIST_FILES[1]))
        .expect("load train split");
    set.take_prefix(count.min(set.len())).expect("train prefix")
}

pub fn test_set(count: usize) -> ImageSet {
    let dir = data_dir();
    let set = load_mnist(&dir.join(MNIST_FILES[2]), &dir.join(MNIST_FILES[3]))
        .expect("load test split");
    set.take_prefix(count.min(set.len())).expect("test prefix")
}

pub fn per_class_counts(labels: &[usize], class_count: usize) -> Vec<usize> {
    let mut counts = vec![0usize; class_count];
    for &l in labels {
        counts[l] += 1;
    }
    counts
}
