//! Binary checkpoint format and the metrics CSV export.
//!
//! Layout: 8-byte magic "RESCNET1", u32 version, a length-prefixed
//! config snapshot (canonical TOML, possibly empty), then the model
//! with every array as little-endian f64 values behind explicit shape
//! headers.

use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2, Array4};

use crate::engine::{CompensationLayer, EngineConfig, Layer1, LayerProgress, ResCNetModel};
use crate::error::{Error, Result};
use crate::filter_bank::{FilterBank, FilterKind};
use crate::lda::{LdaModel, PosteriorTransform};

pub const MAGIC: &[u8; 8] = b"RESCNET1";
pub const VERSION: u32 = 1;

fn kind_tag(kind: FilterKind) -> u8 {
    match kind {
        FilterKind::Pca => 0,
        FilterKind::StackedLda => 1,
        FilterKind::Mixed => 2,
    }
}

fn kind_from_tag(tag: u8) -> Result<FilterKind> {
    match tag {
        0 => Ok(FilterKind::Pca),
        1 => Ok(FilterKind::StackedLda),
        2 => Ok(FilterKind::Mixed),
        other => Err(Error::Format(format!("unknown filter kind tag {other}"))),
    }
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer { buf: Vec::new() }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.buf.write_u32::<LittleEndian>(v).expect("vec write");
    }

    fn u64(&mut self, v: u64) {
        self.buf.write_u64::<LittleEndian>(v).expect("vec write");
    }

    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }

    fn f64(&mut self, v: f64) {
        self.buf.write_f64::<LittleEndian>(v).expect("vec write");
    }

    fn f64s<'a>(&mut self, values: impl Iterator<Item = &'a f64>) {
        for &v in values {
            self.f64(v);
        }
    }

    fn bytes(&mut self, v: &[u8]) {
        self.usize(v.len());
        self.buf.extend_from_slice(v);
    }

    fn bank(&mut self, bank: &FilterBank) {
        let (k, _, c_in, c_out) = bank.kernels.dim();
        self.u8(kind_tag(bank.kind));
        self.usize(k);
        self.usize(c_in);
        self.usize(c_out);
        self.f64s(bank.kernels.iter());
        self.f64s(bank.bias.iter());
    }

    fn lda(&mut self, model: &LdaModel) {
        let (f, c) = model.weights.dim();
        self.usize(f);
        self.usize(c);
        self.f64s(model.weights.iter());
        self.f64s(model.intercepts.iter());
        for &id in &model.class_ids {
            self.usize(id);
        }
        self.f64(model.ridge);
    }

    fn optional_lda(&mut self, model: &Option<LdaModel>) {
        match model {
            Some(m) => {
                self.u8(1);
                self.lda(m);
            }
            None => self.u8(0),
        }
    }

    fn config(&mut self, c: &EngineConfig) {
        self.f64(c.lambda);
        self.f64(c.alpha0);
        match c.lr_decay {
            Some(d) => {
                self.u8(1);
                self.f64(d);
            }
            None => {
                self.u8(0);
                self.f64(0.0);
            }
        }
        self.usize(c.lr_period);
        self.f64(c.lr_floor);
        self.usize(c.max_layers);
        self.usize(c.filters_per_layer);
        self.usize(c.filter_size_first);
        self.usize(c.filter_size_rest);
        self.u8(kind_tag(c.filter_kind_first));
        self.u8(kind_tag(c.filter_kind_rest));
        self.usize(c.stacked_positives);
        self.usize(c.stacked_negatives);
        self.f64(c.stacked_tol);
        self.usize(c.stacked_max_attempts);
        self.usize(c.max_patches);
        self.usize(c.sop_block.0);
        self.usize(c.sop_block.1);
        self.usize(c.sop_stride);
        self.usize(c.pyramid.len());
        for &(a, b) in &c.pyramid {
            self.usize(a);
            self.usize(b);
        }
        match c.transform {
            PosteriorTransform::Sigmoid { scale } => {
                self.u8(0);
                self.f64(scale);
            }
            PosteriorTransform::Softmax { beta } => {
                self.u8(1);
                self.f64(beta);
            }
        }
        self.u64(c.seed);
        self.u8(c.stop_at_zero_train_error as u8);
        self.f64(c.val_fraction);
        match c.patience {
            Some(p) => {
                self.u8(1);
                self.usize(p);
            }
            None => {
                self.u8(0);
                self.usize(0);
            }
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(self.take(4)?.read_u32::<LittleEndian>().expect("sized"))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(self.take(8)?.read_u64::<LittleEndian>().expect("sized"))
    }

    fn usize(&mut self) -> Result<usize> {
        Ok(self.u64()? as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(self.take(8)?.read_f64::<LittleEndian>().expect("sized"))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut raw = self.take(n.checked_mul(8).ok_or_else(|| {
            Error::Format("array length overflows".into())
        })?)?;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(raw.read_f64::<LittleEndian>().expect("sized"));
        }
        Ok(out)
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.usize()?;
        self.take(n)
    }

    fn bank(&mut self) -> Result<FilterBank> {
        let kind = kind_from_tag(self.u8()?)?;
        let k = self.usize()?;
        let c_in = self.usize()?;
        let c_out = self.usize()?;
        let kernels = self.f64s(k * k * c_in * c_out)?;
        let kernels = Array4::from_shape_vec((k, k, c_in, c_out), kernels)
            .map_err(|e| Error::Format(format!("bad kernel shape: {e}")))?;
        let bias = self.f64s(c_out)?;
        Ok(FilterBank { kernels, bias, kind })
    }

    fn lda(&mut self) -> Result<LdaModel> {
        let f = self.usize()?;
        let c = self.usize()?;
        let weights = Array2::from_shape_vec((f, c), self.f64s(f * c)?)
            .map_err(|e| Error::Format(format!("bad weight shape: {e}")))?;
        let intercepts = Array1::from_vec(self.f64s(c)?);
        let mut class_ids = Vec::with_capacity(c);
        for _ in 0..c {
            class_ids.push(self.usize()?);
        }
        let ridge = self.f64()?;
        Ok(LdaModel {
            weights,
            intercepts,
            class_ids,
            ridge,
        })
    }

    fn optional_lda(&mut self) -> Result<Option<LdaModel>> {
        match self.u8()? {
            0 => Ok(None),
            1 => Ok(Some(self.lda()?)),
            other => Err(Error::Format(format!("bad optional tag {other}"))),
        }
    }

    fn config(&mut self) -> Result<EngineConfig> {
        let lambda = self.f64()?;
        let alpha0 = self.f64()?;
        let has_decay = self.u8()? != 0;
        let decay = self.f64()?;
        let lr_decay = has_decay.then_some(decay);
        let lr_period = self.usize()?;
        let lr_floor = self.f64()?;
        let max_layers = self.usize()?;
        let filters_per_layer = self.usize()?;
        let filter_size_first = self.usize()?;
        let filter_size_rest = self.usize()?;
        let filter_kind_first = kind_from_tag(self.u8()?)?;
        let filter_kind_rest = kind_from_tag(self.u8()?)?;
        let stacked_positives = self.usize()?;
        let stacked_negatives = self.usize()?;
        let stacked_tol = self.f64()?;
        let stacked_max_attempts = self.usize()?;
        let max_patches = self.usize()?;
        let sop_block = (self.usize()?, self.usize()?);
        let sop_stride = self.usize()?;
        let levels = self.usize()?;
        let mut pyramid = Vec::with_capacity(levels);
        for _ in 0..levels {
            pyramid.push((self.usize()?, self.usize()?));
        }
        let transform = match self.u8()? {
            0 => PosteriorTransform::Sigmoid { scale: self.f64()? },
            1 => PosteriorTransform::Softmax { beta: self.f64()? },
            other => return Err(Error::Format(format!("bad transform tag {other}"))),
        };
        let seed = self.u64()?;
        let stop_at_zero_train_error = self.u8()? != 0;
        let val_fraction = self.f64()?;
        let has_patience = self.u8()? != 0;
        let patience_value = self.usize()?;
        Ok(EngineConfig {
            lambda,
            alpha0,
            lr_decay,
            lr_period,
            lr_floor,
            max_layers,
            filters_per_layer,
            filter_size_first,
            filter_size_rest,
            filter_kind_first,
            filter_kind_rest,
            stacked_positives,
            stacked_negatives,
            stacked_tol,
            stacked_max_attempts,
            max_patches,
            sop_block,
            sop_stride,
            pyramid,
            transform,
            seed,
            stop_at_zero_train_error,
            val_fraction,
            patience: has_patience.then_some(patience_value),
        })
    }
}

/// Serialize a model (plus the CLI's config snapshot, which may be
/// empty) to checkpoint bytes.
pub fn to_bytes(model: &ResCNetModel, snapshot: &str) -> Vec<u8> {
    let mut w = Writer::new();
    w.buf.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.bytes(snapshot.as_bytes());
    w.config(&model.config);
    w.usize(model.class_count);
    w.usize(model.input_shape.0);
    w.usize(model.input_shape.1);
    w.usize(model.input_shape.2);
    w.bank(&model.layer1.bank);
    w.lda(&model.layer1.model);
    w.usize(model.compensation.len());
    for layer in &model.compensation {
        w.bank(&layer.bank);
        w.optional_lda(&layer.positive_model);
        w.optional_lda(&layer.negative_model);
        w.usize(layer.n_p);
        w.usize(layer.n_n);
        w.f64(layer.alpha);
    }
    w.usize(model.progress.len());
    for p in &model.progress {
        w.usize(p.layer);
        w.f64(p.alpha);
        w.usize(p.n_p);
        w.usize(p.n_n);
        w.f64(p.train_accuracy);
        match p.val_accuracy {
            Some(v) => {
                w.u8(1);
                w.f64(v);
            }
            None => {
                w.u8(0);
                w.f64(0.0);
            }
        }
    }
    let (rows, cols) = model.train_posteriors.dim();
    w.usize(rows);
    w.usize(cols);
    w.f64s(model.train_posteriors.iter());
    w.buf
}

/// Parse checkpoint bytes back into the model and its config snapshot.
pub fn from_bytes(bytes: &[u8]) -> Result<(ResCNetModel, String)> {
    let mut r = Reader::new(bytes);
    let magic = r.take(8).map_err(|_| Error::Magic("file too short".into()))?;
    if magic != MAGIC {
        return Err(Error::Magic(format!(
            "expected {:?}, found {:?}",
            String::from_utf8_lossy(MAGIC),
            String::from_utf8_lossy(magic)
        )));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Version(version));
    }
    let snapshot = String::from_utf8(r.bytes()?.to_vec())
        .map_err(|_| Error::Format("config snapshot is not UTF-8".into()))?;
    let config = r.config()?;
    let class_count = r.usize()?;
    let input_shape = (r.usize()?, r.usize()?, r.usize()?);
    let layer1 = Layer1 {
        bank: r.bank()?,
        model: r.lda()?,
    };
    let n_layers = r.usize()?;
    let mut compensation = Vec::with_capacity(n_layers.min(1 << 20));
    for _ in 0..n_layers {
        compensation.push(CompensationLayer {
            bank: r.bank()?,
            positive_model: r.optional_lda()?,
            negative_model: r.optional_lda()?,
            n_p: r.usize()?,
            n_n: r.usize()?,
            alpha: r.f64()?,
        });
    }
    let n_progress = r.usize()?;
    let mut progress = Vec::with_capacity(n_progress.min(1 << 20));
    for _ in 0..n_progress {
        let layer = r.usize()?;
        let alpha = r.f64()?;
        let n_p = r.usize()?;
        let n_n = r.usize()?;
        let train_accuracy = r.f64()?;
        let has_val = r.u8()? != 0;
        let val = r.f64()?;
        progress.push(LayerProgress {
            layer,
            alpha,
            n_p,
            n_n,
            train_accuracy,
            val_accuracy: has_val.then_some(val),
        });
    }
    let rows = r.usize()?;
    let cols = r.usize()?;
    let train_posteriors = Array2::from_shape_vec((rows, cols), r.f64s(rows * cols)?)
        .map_err(|e| Error::Format(format!("bad posterior shape: {e}")))?;
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after checkpoint payload",
            bytes.len() - r.pos
        )));
    }
    Ok((
        ResCNetModel {
            config,
            class_count,
            input_shape,
            layer1,
            compensation,
            progress,
            train_posteriors,
        },
        snapshot,
    ))
}

/// Write a checkpoint atomically (temp file + rename).
pub fn save(model: &ResCNetModel, snapshot: &str, path: &Path) -> Result<()> {
    let bytes = to_bytes(model, snapshot);
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(tmp.display().to_string(), e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load(path: &Path) -> Result<(ResCNetModel, String)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    from_bytes(&bytes)
}

pub const METRICS_HEADER: &str = "layer,alpha,n_p,n_n,train_acc,val_acc";

/// Render the per-layer progress log as CSV. Floats use the shortest
/// exact decimal form, so a parse-back restores identical values.
pub fn render_metrics(progress: &[LayerProgress]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for p in progress {
        let val = match p.val_accuracy {
            Some(v) => v.to_string(),
            None => String::new(),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.layer, p.alpha, p.n_p, p.n_n, p.train_accuracy, val
        ));
    }
    out
}

pub fn write_metrics(progress: &[LayerProgress], path: &Path) -> Result<()> {
    std::fs::write(path, render_metrics(progress))
        .map_err(|e| Error::io(path.display().to_string(), e))
}
