//! Sequential residual-compensation training: layer-wise filter bank
//! fitting, residual relabeling, signed compensation classifiers,
//! posterior combination, and the learning-rate schedule.

use ndarray::{Array2, Array4};
use rand::seq::SliceRandom;

use crate::conv::{concat_with_input, convolve_same};
use crate::dataset::{min_max_normalize, one_hot, ImageSet};
use crate::error::{Error, Result};
use crate::features::postprocess_batch;
use crate::filter_bank::{
    extract_patches, fit_pca_filters, fit_stacked_lda_filters, mix_filter_banks, FilterBank,
    FilterKind, StackedLdaParams,
};
use crate::lda::{
    argmax_rows, decision_scores, fit_lda, LdaModel, PosteriorTransform, DEFAULT_RIDGE,
};
use crate::linalg::Matrix;
use crate::rng::{derive_seed, patch_stream, stacked_lda_stream, stream_rng, VAL_SPLIT_STREAM};

/// Fraction of stacked-LDA filters in a mixed bank.
pub const MIX_RATIO: f64 = 0.5;

/// Everything the trainer needs; the CLI builds this from its config
/// file.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub lambda: f64,
    pub alpha0: f64,
    pub lr_decay: Option<f64>,
    pub lr_period: usize,
    pub lr_floor: f64,
    pub max_layers: usize,
    pub filters_per_layer: usize,
    pub filter_size_first: usize,
    pub filter_size_rest: usize,
    pub filter_kind_first: FilterKind,
    pub filter_kind_rest: FilterKind,
    pub stacked_positives: usize,
    pub stacked_negatives: usize,
    pub stacked_tol: f64,
    pub stacked_max_attempts: usize,
    pub max_patches: usize,
    pub sop_block: (usize, usize),
    pub sop_stride: usize,
    pub pyramid: Vec<(usize, usize)>,
    pub transform: PosteriorTransform,
    pub seed: u64,
    pub stop_at_zero_train_error: bool,
    pub val_fraction: f64,
    pub patience: Option<usize>,
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!(
                "lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        if self.alpha0 <= 0.0 {
            return Err(Error::Config("alpha0 must be positive".into()));
        }
        if self.lr_floor > self.alpha0 {
            return Err(Error::Config(format!(
                "lr_floor {} exceeds alpha0 {}",
                self.lr_floor, self.alpha0
            )));
        }
        if let Some(d) = self.lr_decay {
            if !(0.0..1.0).contains(&d) {
                return Err(Error::Config(format!(
                    "lr_decay must lie in [0, 1), got {d}"
                )));
            }
            if self.lr_period == 0 {
                return Err(Error::Config("lr_period must be at least 1".into()));
            }
        }
        if self.max_layers == 0 {
            return Err(Error::Config("max_layers must be at least 1".into()));
        }
        if self.filters_per_layer == 0 {
            return Err(Error::Config("filters_per_layer must be at least 1".into()));
        }
        if self.filter_size_first == 0 || self.filter_size_rest == 0 {
            return Err(Error::Config("filter sizes must be at least 1".into()));
        }
        if self.sop_block.0 == 0 || self.sop_block.1 == 0 || self.sop_stride == 0 {
            return Err(Error::Config("sop_block and sop_stride must be at least 1".into()));
        }
        if self.pyramid.is_empty() || self.pyramid.iter().any(|&(a, b)| a == 0 || b == 0) {
            return Err(Error::Config("pyramid levels must be non-empty and at least 1x1".into()));
        }
        match self.transform {
            PosteriorTransform::Sigmoid { scale } if scale <= 0.0 => {
                return Err(Error::Config("sigmoid_scale must be positive".into()));
            }
            PosteriorTransform::Softmax { beta } if beta <= 0.0 => {
                return Err(Error::Config("softmax_beta must be positive".into()));
            }
            _ => {}
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!(
                "val_fraction must lie in [0, 1), got {}",
                self.val_fraction
            )));
        }
        if self.patience.is_some() && self.val_fraction == 0.0 {
            return Err(Error::Config(
                "patience requires a validation split (val_fraction > 0)".into(),
            ));
        }
        Ok(())
    }
}

/// Residual matrix with the labels and signs derived from it.
#[derive(Debug, Clone)]
pub struct ResidualRecord {
    pub residual: Matrix,
    pub labels: Vec<usize>,
    pub signs: Vec<i8>,
}

#[derive(Debug, Clone)]
pub struct Layer1 {
    pub bank: FilterBank,
    pub model: LdaModel,
}

#[derive(Debug, Clone)]
pub struct CompensationLayer {
    pub bank: FilterBank,
    pub positive_model: Option<LdaModel>,
    pub negative_model: Option<LdaModel>,
    pub n_p: usize,
    pub n_n: usize,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerProgress {
    pub layer: usize,
    pub alpha: f64,
    pub n_p: usize,
    pub n_n: usize,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ResCNetModel {
    pub config: EngineConfig,
    pub class_count: usize,
    pub input_shape: (usize, usize, usize),
    pub layer1: Layer1,
    pub compensation: Vec<CompensationLayer>,
    pub progress: Vec<LayerProgress>,
    /// Ỹ on the training split after the last trained layer; resume
    /// continues from it.
    pub train_posteriors: Matrix,
}

impl ResCNetModel {
    pub fn depth(&self) -> usize {
        1 + self.compensation.len()
    }
}

/// Receives each completed layer; the CLI checkpoints here so a later
/// failure still leaves the finished prefix on disk.
pub trait ProgressSink {
    fn on_layer(&mut self, progress: &LayerProgress, model: &ResCNetModel) -> Result<()>;
}

/// Discards progress.
pub struct NullSink;

impl ProgressSink for NullSink {
    fn on_layer(&mut self, _progress: &LayerProgress, _model: &ResCNetModel) -> Result<()> {
        Ok(())
    }
}

/// R = λ·Y − Ỹ.
pub fn compute_residual(y: &Matrix, y_pred: &Matrix, lambda: f64) -> Result<Matrix> {
    if y.dim() != y_pred.dim() {
        return Err(Error::Dimension(format!(
            "label matrix {:?} and prediction matrix {:?} disagree",
            y.dim(),
            y_pred.dim()
        )));
    }
    Ok(y * lambda - y_pred)
}

/// Per row: label = argmax |R| (ties to the lowest class index), sign =
/// sign of R there. An all-zero row falls back to the true class with
/// sign +1.
pub fn derive_labels_and_signs(residual: Matrix, true_labels: &[usize]) -> Result<ResidualRecord> {
    let (n, c) = residual.dim();
    if true_labels.len() != n {
        return Err(Error::Dimension(format!(
            "{} true labels for {} residual rows",
            true_labels.len(),
            n
        )));
    }
    let mut labels = Vec::with_capacity(n);
    let mut signs = Vec::with_capacity(n);
    for (j, row) in residual.rows().into_iter().enumerate() {
        let mut best = 0;
        for k in 1..c {
            if row[k].abs() > row[best].abs() {
                best = k;
            }
        }
        if row[best] == 0.0 {
            labels.push(true_labels[j]);
            signs.push(1);
        } else {
            labels.push(best);
            signs.push(if row[best] > 0.0 { 1 } else { -1 });
        }
    }
    Ok(ResidualRecord {
        residual,
        labels,
        signs,
    })
}

/// Ỹ^(i) = Ỹ^(i−1) + α·[(n_p/N)·Ỹ_p − (n_n/N)·Ỹ_n].
pub fn combine_posteriors(
    prev: &Matrix,
    y_p: &Matrix,
    y_n: &Matrix,
    n_p: usize,
    n_n: usize,
    alpha: f64,
) -> Result<Matrix> {
    if prev.dim() != y_p.dim() || prev.dim() != y_n.dim() {
        return Err(Error::Dimension(format!(
            "posterior shapes disagree: {:?} vs {:?} vs {:?}",
            prev.dim(),
            y_p.dim(),
            y_n.dim()
        )));
    }
    let total = (n_p + n_n) as f64;
    if total == 0.0 {
        return Err(Error::EmptyInput("n_p + n_n must be positive".into()));
    }
    let wp = n_p as f64 / total;
    let wn = n_n as f64 / total;
    Ok(prev + &((y_p * wp - y_n * wn) * alpha))
}

/// α for compensation layer i ≥ 2: α₀·(1 − decay)^floor((i−2)/period),
/// never below lr_floor. No decay means constant α₀.
pub fn lr_schedule(layer_index: usize, config: &EngineConfig) -> f64 {
    let decay = match config.lr_decay {
        Some(d) => d,
        None => return config.alpha0,
    };
    let steps = (layer_index.saturating_sub(2) / config.lr_period) as i32;
    let alpha = config.alpha0 * (1.0 - decay).powi(steps);
    alpha.max(config.lr_floor)
}

/// Fit the positive/negative classifier pair for one compensation
/// layer. Each side trains on all N samples: its own-sign samples keep
/// the residual labels, opposite-sign samples join as pure negatives
/// under a pseudo-class that never gets an output column.
pub fn fit_compensation_models(
    features: &Matrix,
    record: &ResidualRecord,
    class_count: usize,
) -> Result<(Option<LdaModel>, Option<LdaModel>, usize, usize)> {
    let n = features.nrows();
    if n == 0 {
        return Err(Error::EmptyInput("no samples for compensation fitting".into()));
    }
    if record.labels.len() != n {
        return Err(Error::Dimension(format!(
            "{} residual labels for {} feature rows",
            record.labels.len(),
            n
        )));
    }
    let n_p = record.signs.iter().filter(|&&s| s > 0).count();
    let n_n = n - n_p;

    let side = |own_sign: i8| -> Vec<usize> {
        record
            .signs
            .iter()
            .zip(&record.labels)
            .map(|(&s, &l)| if s == own_sign { l } else { class_count })
            .collect()
    };

    let positive_model = if n_p > 0 {
        Some(fit_lda(features, &side(1), DEFAULT_RIDGE)?)
    } else {
        None
    };
    let negative_model = if n_n > 0 {
        Some(fit_lda(features, &side(-1), DEFAULT_RIDGE)?)
    } else {
        None
    };
    Ok((positive_model, negative_model, n_p, n_n))
}

/// Score features, apply the transform over the model's real-class
/// columns, and scatter into an N×C matrix. Classes the model never saw
/// (and the pseudo-negative class) stay zero.
pub fn layer_posteriors(
    model: &LdaModel,
    features: &Matrix,
    transform: PosteriorTransform,
    class_count: usize,
) -> Result<Matrix> {
    let scores = decision_scores(model, features)?;
    let present: Vec<(usize, usize)> = model
        .class_ids
        .iter()
        .enumerate()
        .filter(|(_, &id)| id < class_count)
        .map(|(col, &id)| (col, id))
        .collect();
    let mut sub = Array2::zeros((scores.nrows(), present.len()));
    for (j, &(col, _)) in present.iter().enumerate() {
        sub.column_mut(j).assign(&scores.column(col));
    }
    let transformed = transform.apply(&sub);
    let mut out = Array2::zeros((scores.nrows(), class_count));
    for (j, &(_, id)) in present.iter().enumerate() {
        out.column_mut(id).assign(&transformed.column(j));
    }
    Ok(out)
}

fn fit_layer_bank(
    input: &Array4<f64>,
    labels: &[usize],
    layer_index: usize,
    config: &EngineConfig,
) -> Result<FilterBank> {
    let (k, kind) = if layer_index == 1 {
        (config.filter_size_first, config.filter_kind_first)
    } else {
        (config.filter_size_rest, config.filter_kind_rest)
    };
    let d = config.filters_per_layer;
    let patch_seed = derive_seed(config.seed, patch_stream(layer_index));
    let patches = extract_patches(input, k, Some(config.max_patches), patch_seed)?;

    let stacked_params = |count: usize| StackedLdaParams {
        n_positives: config.stacked_positives,
        n_negatives: config.stacked_negatives,
        tol: config.stacked_tol,
        n_classes: count,
        max_attempts_per_filter: config.stacked_max_attempts,
        rng_seed: derive_seed(config.seed, stacked_lda_stream(layer_index)),
    };
    let patch_labels = || -> Vec<usize> {
        patches.source_image.iter().map(|&i| labels[i]).collect()
    };

    match kind {
        FilterKind::Pca => fit_pca_filters(&patches, d),
        FilterKind::StackedLda => {
            fit_stacked_lda_filters(&patches, &patch_labels(), &stacked_params(d))
        }
        FilterKind::Mixed => {
            let stacked_count = (MIX_RATIO * d as f64).round() as usize;
            let stacked =
                fit_stacked_lda_filters(&patches, &patch_labels(), &stacked_params(stacked_count))?;
            let pca = fit_pca_filters(&patches, d)?;
            mix_filter_banks(&stacked, &pca, MIX_RATIO)
        }
    }
}

fn accuracy_from_posteriors(posteriors: &Matrix, labels: &[usize]) -> f64 {
    let pred = argmax_rows(posteriors);
    pred.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64
}

/// Per-split state carried across layers: the raw (pre-ReLU) maps of
/// the previous layer and the running Ỹ.
struct SplitState {
    images: Array4<f64>,
    labels: Vec<usize>,
    maps: Array4<f64>,
    posteriors: Matrix,
}

struct Trainer<'a> {
    config: EngineConfig,
    class_count: usize,
    train: SplitState,
    val: Option<SplitState>,
    y_one_hot: Matrix,
    sink: &'a mut dyn ProgressSink,
    best_val: f64,
    layers_since_best: usize,
}

impl<'a> Trainer<'a> {
    /// Featurize one split through a bank: convolve the normalized
    /// concat input, post-process, and hand back the raw maps.
    fn featurize(
        &self,
        state: &SplitState,
        bank: &FilterBank,
        first_layer: bool,
    ) -> Result<(Array4<f64>, Matrix)> {
        let input = if first_layer {
            state.images.clone()
        } else {
            min_max_normalize(&concat_with_input(&state.maps, &state.images)?)
        };
        let maps = convolve_same(&input, bank)?;
        let features = postprocess_batch(
            &maps,
            self.config.sop_block,
            self.config.sop_stride,
            &self.config.pyramid,
        )?;
        Ok((maps, features))
    }

    fn layer_input(&self, state: &SplitState, first_layer: bool) -> Result<Array4<f64>> {
        if first_layer {
            Ok(state.images.clone())
        } else {
            Ok(min_max_normalize(&concat_with_input(
                &state.maps,
                &state.images,
            )?))
        }
    }

    fn emit(&mut self, model: &mut ResCNetModel, progress: LayerProgress) -> Result<()> {
        model.progress.push(progress.clone());
        model.train_posteriors = self.train.posteriors.clone();
        self.sink.on_layer(&progress, model)
    }

    /// True when training should stop after this layer.
    fn should_stop(&mut self, progress: &LayerProgress) -> bool {
        if self.config.stop_at_zero_train_error && progress.train_accuracy == 1.0 {
            return true;
        }
        if let (Some(patience), Some(val_acc)) = (self.config.patience, progress.val_accuracy) {
            if val_acc > self.best_val {
                self.best_val = val_acc;
                self.layers_since_best = 0;
            } else {
                self.layers_since_best += 1;
                if self.layers_since_best >= patience {
                    return true;
                }
            }
        }
        false
    }

    fn train_layer_1(&mut self) -> Result<ResCNetModel> {
        let input = self.layer_input(&self.train, true)?;
        let bank = fit_layer_bank(&input, &self.train.labels, 1, &self.config)?;
        let (maps, features) = self.featurize(&self.train, &bank, true)?;
        let lda = fit_lda(&features, &self.train.labels, DEFAULT_RIDGE)?;
        let posteriors = layer_posteriors(&lda, &features, self.config.transform, self.class_count)?;
        self.train.maps = maps;
        self.train.posteriors = posteriors;

        let val_accuracy = if let Some(val) = self.val.take() {
            let (vmaps, vfeatures) = self.featurize(&val, &bank, true)?;
            let vpost =
                layer_posteriors(&lda, &vfeatures, self.config.transform, self.class_count)?;
            let acc = accuracy_from_posteriors(&vpost, &val.labels);
            self.val = Some(SplitState {
                maps: vmaps,
                posteriors: vpost,
                ..val
            });
            Some(acc)
        } else {
            None
        };

        let (m, n, d, _) = self.train.images.dim();
        let mut model = ResCNetModel {
            config: self.config.clone(),
            class_count: self.class_count,
            input_shape: (m, n, d),
            layer1: Layer1 { bank, model: lda },
            compensation: Vec::new(),
            progress: Vec::new(),
            train_posteriors: Array2::zeros((0, 0)),
        };
        let progress = LayerProgress {
            layer: 1,
            alpha: 1.0,
            n_p: self.train.labels.len(),
            n_n: 0,
            train_accuracy: accuracy_from_posteriors(&self.train.posteriors, &self.train.labels),
            val_accuracy,
        };
        self.emit(&mut model, progress)?;
        Ok(model)
    }

    fn train_compensation_layer(&mut self, model: &mut ResCNetModel, i: usize) -> Result<bool> {
        let input = self.layer_input(&self.train, false)?;
        let bank = fit_layer_bank(&input, &self.train.labels, i, &self.config)?;
        let (maps, features) = self.featurize(&self.train, &bank, false)?;

        let residual = compute_residual(
            &self.y_one_hot,
            &self.train.posteriors,
            self.config.lambda,
        )?;
        let record = derive_labels_and_signs(residual, &self.train.labels)?;
        let (positive_model, negative_model, n_p, n_n) =
            fit_compensation_models(&features, &record, self.class_count)?;
        let alpha = lr_schedule(i, &self.config);

        let zeros = Array2::zeros(self.train.posteriors.dim());
        let y_p = match &positive_model {
            Some(m) => layer_posteriors(m, &features, self.config.transform, self.class_count)?,
            None => zeros.clone(),
        };
        let y_n = match &negative_model {
            Some(m) => layer_posteriors(m, &features, self.config.transform, self.class_count)?,
            None => zeros,
        };
        self.train.posteriors =
            combine_posteriors(&self.train.posteriors, &y_p, &y_n, n_p, n_n, alpha)?;
        self.train.maps = maps;

        let val_accuracy = if let Some(val) = self.val.take() {
            let (vmaps, vfeatures) = self.featurize(&val, &bank, false)?;
            let vzeros = Array2::zeros(val.posteriors.dim());
            let vy_p = match &positive_model {
                Some(m) => {
                    layer_posteriors(m, &vfeatures, self.config.transform, self.class_count)?
                }
                None => vzeros.clone(),
            };
            let vy_n = match &negative_model {
                Some(m) => {
                    layer_posteriors(m, &vfeatures, self.config.transform, self.class_count)?
                }
                None => vzeros,
            };
            let vpost = combine_posteriors(&val.posteriors, &vy_p, &vy_n, n_p, n_n, alpha)?;
            let acc = accuracy_from_posteriors(&vpost, &val.labels);
            self.val = Some(SplitState {
                maps: vmaps,
                posteriors: vpost,
                ..val
            });
            Some(acc)
        } else {
            None
        };

        model.compensation.push(CompensationLayer {
            bank,
            positive_model,
            negative_model,
            n_p,
            n_n,
            alpha,
        });
        let progress = LayerProgress {
            layer: i,
            alpha,
            n_p,
            n_n,
            train_accuracy: accuracy_from_posteriors(&self.train.posteriors, &self.train.labels),
            val_accuracy,
        };
        let stop = self.should_stop(&progress);
        self.emit(model, progress)?;
        Ok(stop)
    }
}

fn split_train_val(set: &ImageSet, config: &EngineConfig) -> Result<(ImageSet, Option<ImageSet>)> {
    if config.val_fraction == 0.0 {
        return Ok((set.clone(), None));
    }
    let n = set.len();
    let val_count = ((config.val_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = stream_rng(config.seed, VAL_SPLIT_STREAM);
    order.shuffle(&mut rng);
    let (val_idx, train_idx) = order.split_at(val_count);
    let mut train_idx = train_idx.to_vec();
    let mut val_idx = val_idx.to_vec();
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    Ok((set.select(&train_idx)?, Some(set.select(&val_idx)?)))
}

fn make_split_state(set: ImageSet) -> SplitState {
    SplitState {
        maps: Array4::zeros((0, 0, 0, 0)),
        posteriors: Array2::zeros((0, 0)),
        images: set.images,
        labels: set.labels,
    }
}

/// Run Algorithm-style training from scratch: layer 1, then
/// compensation layers until max_layers, zero training error, or the
/// patience stop.
pub fn train(
    set: &ImageSet,
    config: &EngineConfig,
    sink: &mut dyn ProgressSink,
) -> Result<ResCNetModel> {
    config.validate()?;
    if set.class_count < 2 {
        return Err(Error::DegenerateLabels(
            "training needs at least 2 classes".into(),
        ));
    }
    let (train_set, val_set) = split_train_val(set, config)?;
    let y_one_hot = one_hot(&train_set.labels, set.class_count)?;
    let mut trainer = Trainer {
        config: config.clone(),
        class_count: set.class_count,
        train: make_split_state(train_set),
        val: val_set.map(make_split_state),
        y_one_hot,
        sink,
        best_val: f64::NEG_INFINITY,
        layers_since_best: 0,
    };

    let mut model = trainer.train_layer_1()?;
    if trainer.config.stop_at_zero_train_error
        && model.progress.last().expect("layer 1 emitted").train_accuracy == 1.0
    {
        return Ok(model);
    }
    for i in 2..=config.max_layers {
        let stop = trainer.train_compensation_layer(&mut model, i)?;
        if stop {
            break;
        }
    }
    Ok(model)
}

/// Continue a trained model for `additional_layers` more layers on the
/// same training set. The map chain is replayed, the stored Ỹ resumes
/// the posterior chain, and per-layer seed streams line up with a
/// straight run, so a split run reproduces an unsplit one bit-exactly.
pub fn resume(
    model: ResCNetModel,
    set: &ImageSet,
    additional_layers: usize,
    sink: &mut dyn ProgressSink,
) -> Result<ResCNetModel> {
    if additional_layers == 0 {
        return Ok(model);
    }
    let mut config = model.config.clone();
    config.max_layers = model.depth() + additional_layers;
    config.validate()?;

    let (train_set, val_set) = split_train_val(set, &config)?;
    let y_one_hot = one_hot(&train_set.labels, set.class_count)?;

    // Recompute the raw-map chain for both splits.
    let mut train = make_split_state(train_set);
    let mut val = val_set.map(make_split_state);
    let mut val_posteriors = None;
    {
        let replay = |state: &SplitState| -> Result<(Array4<f64>, Matrix)> {
            let mut maps = convolve_same(&state.images, &model.layer1.bank)?;
            let features =
                postprocess_batch(&maps, config.sop_block, config.sop_stride, &config.pyramid)?;
            let mut posteriors = layer_posteriors(
                &model.layer1.model,
                &features,
                config.transform,
                model.class_count,
            )?;
            for layer in &model.compensation {
                let input = min_max_normalize(&concat_with_input(&maps, &state.images)?);
                maps = convolve_same(&input, &layer.bank)?;
                let features =
                    postprocess_batch(&maps, config.sop_block, config.sop_stride, &config.pyramid)?;
                let zeros = Array2::zeros(posteriors.dim());
                let y_p = match &layer.positive_model {
                    Some(m) => layer_posteriors(m, &features, config.transform, model.class_count)?,
                    None => zeros.clone(),
                };
                let y_n = match &layer.negative_model {
                    Some(m) => layer_posteriors(m, &features, config.transform, model.class_count)?,
                    None => zeros,
                };
                posteriors =
                    combine_posteriors(&posteriors, &y_p, &y_n, layer.n_p, layer.n_n, layer.alpha)?;
            }
            Ok((maps, posteriors))
        };
        let (maps, _) = replay(&train)?;
        train.maps = maps;
        train.posteriors = model.train_posteriors.clone();
        if let Some(v) = &mut val {
            let (maps, posteriors) = replay(v)?;
            v.maps = maps;
            val_posteriors = Some(posteriors.clone());
            v.posteriors = posteriors;
        }
    }

    let mut trainer = Trainer {
        config: config.clone(),
        class_count: model.class_count,
        train,
        val,
        y_one_hot,
        sink,
        best_val: f64::NEG_INFINITY,
        layers_since_best: 0,
    };
    // Patience state restarts from the replayed validation accuracy.
    if let (Some(_), Some(vpost)) = (config.patience, &val_posteriors) {
        trainer.best_val = accuracy_from_posteriors(
            vpost,
            &trainer.val.as_ref().expect("val split present").labels,
        );
    }

    let mut model = ResCNetModel {
        config: config.clone(),
        ..model
    };
    let start = model.depth() + 1;
    for i in start..=config.max_layers {
        let stop = trainer.train_compensation_layer(&mut model, i)?;
        if stop {
            break;
        }
    }
    Ok(model)
}

/// Replay the layer chain on new images, invoking `on_layer` with the
/// running Ỹ after every layer. Returns the final posterior matrix.
pub fn forward_posteriors(
    model: &ResCNetModel,
    images: &Array4<f64>,
    mut on_layer: impl FnMut(usize, &Matrix),
) -> Result<Matrix> {
    let (m, n, d, _) = images.dim();
    if (m, n, d) != model.input_shape {
        return Err(Error::Dimension(format!(
            "input shape {m}x{n}x{d} does not match the trained shape {}x{}x{}",
            model.input_shape.0, model.input_shape.1, model.input_shape.2
        )));
    }
    let config = &model.config;
    let mut maps = convolve_same(images, &model.layer1.bank)?;
    let features = postprocess_batch(&maps, config.sop_block, config.sop_stride, &config.pyramid)?;
    let mut posteriors = layer_posteriors(
        &model.layer1.model,
        &features,
        config.transform,
        model.class_count,
    )?;
    on_layer(1, &posteriors);

    for (j, layer) in model.compensation.iter().enumerate() {
        let input = min_max_normalize(&concat_with_input(&maps, images)?);
        maps = convolve_same(&input, &layer.bank)?;
        let features =
            postprocess_batch(&maps, config.sop_block, config.sop_stride, &config.pyramid)?;
        let zeros = Array2::zeros(posteriors.dim());
        let y_p = match &layer.positive_model {
            Some(m) => layer_posteriors(m, &features, config.transform, model.class_count)?,
            None => zeros.clone(),
        };
        let y_n = match &layer.negative_model {
            Some(m) => layer_posteriors(m, &features, config.transform, model.class_count)?,
            None => zeros,
        };
        posteriors =
            combine_posteriors(&posteriors, &y_p, &y_n, layer.n_p, layer.n_n, layer.alpha)?;
        on_layer(j + 2, &posteriors);
    }
    Ok(posteriors)
}

/// Predicted class indices and the final posterior matrix.
pub fn predict(model: &ResCNetModel, images: &Array4<f64>) -> Result<(Vec<usize>, Matrix)> {
    let posteriors = forward_posteriors(model, images, |_, _| {})?;
    Ok((argmax_rows(&posteriors), posteriors))
}

/// Fraction of correctly classified samples.
pub fn evaluate(model: &ResCNetModel, set: &ImageSet) -> Result<f64> {
    let (pred, _) = predict(model, &set.images)?;
    Ok(pred.iter().zip(&set.labels).filter(|(p, l)| p == l).count() as f64 / set.len() as f64)
}
