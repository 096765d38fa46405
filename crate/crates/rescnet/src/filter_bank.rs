//! Gradient-free convolutional filter banks: PCA filters, stacked-LDA
//! filters, and their semi-supervised mixture.

use ndarray::{Array2, Array4};
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};

use crate::error::{Error, Result};
use crate::lda::{argmax_rows, decision_scores, error_rate, fit_lda, DEFAULT_RIDGE};
use crate::linalg::{sym_eig, Matrix};

/// Vectorized image patches, one per column, in (row, col, channel)
/// order. `source_image` maps each kept column back to its sample.
#[derive(Debug, Clone)]
pub struct PatchMatrix {
    pub data: Matrix,
    pub patch_size: usize,
    pub in_channels: usize,
    pub per_image: usize,
    pub source_image: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterKind {
    Pca,
    StackedLda,
    Mixed,
}

/// A bank of k×k×c_in kernels with one bias per output channel.
#[derive(Debug, Clone)]
pub struct FilterBank {
    pub kernels: Array4<f64>,
    pub bias: Vec<f64>,
    pub kind: FilterKind,
}

impl FilterBank {
    pub fn patch_size(&self) -> usize {
        self.kernels.dim().0
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.dim().2
    }

    pub fn out_channels(&self) -> usize {
        self.kernels.dim().3
    }
}

#[derive(Debug, Clone)]
pub struct StackedLdaParams {
    pub n_positives: usize,
    pub n_negatives: usize,
    pub tol: f64,
    pub n_classes: usize,
    pub max_attempts_per_filter: usize,
    pub rng_seed: u64,
}

impl StackedLdaParams {
    pub fn new(n_classes: usize, rng_seed: u64) -> Self {
        StackedLdaParams {
            n_positives: 2,
            n_negatives: 32,
            tol: 0.0,
            n_classes,
            max_attempts_per_filter: 200,
            rng_seed,
        }
    }
}

/// Default cap on patch columns kept for filter fitting; full patch
/// matrices are memory-infeasible and the estimates stabilize far
/// earlier.
pub const DEFAULT_MAX_PATCHES: usize = 100_000;

fn patch_index(k: usize, c_in: usize, dy: usize, dx: usize, ch: usize) -> usize {
    (dy * k + dx) * c_in + ch
}

/// Extract all stride-1 overlapping k×k patches, vectorized column-wise.
/// When the total exceeds `max_samples`, a seeded uniform subset of
/// columns is kept (indices chosen before materializing anything).
pub fn extract_patches(
    images: &Array4<f64>,
    k: usize,
    max_samples: Option<usize>,
    rng_seed: u64,
) -> Result<PatchMatrix> {
    let (m, n, c_in, count) = images.dim();
    if k == 0 || k > m || k > n {
        return Err(Error::Dimension(format!(
            "patch size {k} does not fit a {m}x{n} image"
        )));
    }
    let rows_out = m - k + 1;
    let cols_out = n - k + 1;
    let per_image = rows_out * cols_out;
    let total = per_image * count;

    let kept: Vec<usize> = match max_samples {
        Some(cap) if cap < total => {
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
            let mut idx = sample(&mut rng, total, cap).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..total).collect(),
    };

    let dim = k * k * c_in;
    let mut data = Array2::zeros((dim, kept.len()));
    let mut source_image = Vec::with_capacity(kept.len());
    for (col, &flat) in kept.iter().enumerate() {
        let img = flat / per_image;
        let pos = flat % per_image;
        let pr = pos / cols_out;
        let pc = pos % cols_out;
        source_image.push(img);
        for dy in 0..k {
            for dx in 0..k {
                for ch in 0..c_in {
                    data[(patch_index(k, c_in, dy, dx, ch), col)] =
                        images[(pr + dy, pc + dx, ch, img)];
                }
            }
        }
    }
    Ok(PatchMatrix {
        data,
        patch_size: k,
        in_channels: c_in,
        per_image,
        source_image,
    })
}

fn kernel_from_vec(v: &[f64], k: usize, c_in: usize) -> Array2<f64> {
    // Caller slots the (k·k, c_in)-shaped result into the bank.
    let mut out = Array2::zeros((k * k, c_in));
    for dy in 0..k {
        for dx in 0..k {
            for ch in 0..c_in {
                out[(dy * k + dx, ch)] = v[patch_index(k, c_in, dy, dx, ch)];
            }
        }
    }
    out
}

fn bank_from_vectors(vectors: &[Vec<f64>], bias: Vec<f64>, k: usize, c_in: usize, kind: FilterKind) -> FilterBank {
    let c_out = vectors.len();
    let mut kernels = Array4::zeros((k, k, c_in, c_out));
    for (f, v) in vectors.iter().enumerate() {
        let grid = kernel_from_vec(v, k, c_in);
        for dy in 0..k {
            for dx in 0..k {
                for ch in 0..c_in {
                    kernels[(dy, dx, ch, f)] = grid[(dy * k + dx, ch)];
                }
            }
        }
    }
    FilterBank { kernels, bias, kind }
}

/// PCA filters: top eigenvectors of the mean-centered patch scatter,
/// reshaped to kernels. Bias is zero.
pub fn fit_pca_filters(patches: &PatchMatrix, num_filters: usize) -> Result<FilterBank> {
    let (dim, count) = patches.data.dim();
    if num_filters == 0 || num_filters > dim {
        return Err(Error::Dimension(format!(
            "cannot take {num_filters} filters from {dim}-dimensional patches"
        )));
    }
    if count < num_filters {
        return Err(Error::InsufficientData(format!(
            "{count} patches cannot support {num_filters} PCA filters"
        )));
    }

    let mean = patches
        .data
        .mean_axis(ndarray::Axis(1))
        .expect("count >= 1");
    let centered = &patches.data - &mean.insert_axis(ndarray::Axis(1));
    let scatter = centered.dot(&centered.t());
    let eig = sym_eig(&scatter)?;

    let vectors: Vec<Vec<f64>> = (0..num_filters)
        .map(|f| eig.vectors.column(f).to_vec())
        .collect();
    Ok(bank_from_vectors(
        &vectors,
        vec![0.0; num_filters],
        patches.patch_size,
        patches.in_channels,
        FilterKind::Pca,
    ))
}

/// Stacked-LDA filters: repeatedly draw a small positive/negative patch
/// sample for a random class, fit a binary LDA, and keep its class-1
/// discriminant as a kernel whenever the sample error beats `tol`
/// (tol = 0 demands perfect separation).
pub fn fit_stacked_lda_filters(
    patches: &PatchMatrix,
    patch_labels: &[usize],
    params: &StackedLdaParams,
) -> Result<FilterBank> {
    let (dim, count) = patches.data.dim();
    if patch_labels.len() != count {
        return Err(Error::Dimension(format!(
            "{} labels for {} patches",
            patch_labels.len(),
            count
        )));
    }
    if params.n_positives < 1 || params.n_negatives < 1 || params.n_classes < 1 {
        return Err(Error::Domain(
            "stacked-LDA counts must all be at least 1".into(),
        ));
    }

    let mut by_class: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, &l) in patch_labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let eligible: Vec<usize> = by_class
        .iter()
        .filter(|(_, idx)| {
            idx.len() >= params.n_positives && count - idx.len() >= params.n_negatives
        })
        .map(|(&c, _)| c)
        .collect();
    if eligible.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no class has {} members with {} remaining as negatives",
            params.n_positives, params.n_negatives
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let sample_size = params.n_positives + params.n_negatives;
    let mut vectors = Vec::with_capacity(params.n_classes);
    let mut bias = Vec::with_capacity(params.n_classes);

    for filter_index in 0..params.n_classes {
        let mut accepted = false;
        for _attempt in 0..params.max_attempts_per_filter {
            let class = eligible[rng.gen_range(0..eligible.len())];
            let pos_pool = &by_class[&class];
            let positives = sample(&mut rng, pos_pool.len(), params.n_positives).into_vec();
            let neg_pool: Vec<usize> = (0..count)
                .filter(|i| patch_labels[*i] != class)
                .collect();
            let negatives = sample(&mut rng, neg_pool.len(), params.n_negatives).into_vec();

            let mut x = Array2::zeros((sample_size, dim));
            let mut t = Vec::with_capacity(sample_size);
            for (row, &pi) in positives.iter().enumerate() {
                x.row_mut(row).assign(&patches.data.column(pos_pool[pi]));
                t.push(1usize);
            }
            for (row, &ni) in negatives.iter().enumerate() {
                x.row_mut(params.n_positives + row)
                    .assign(&patches.data.column(neg_pool[ni]));
                t.push(0usize);
            }

            let model = match fit_lda(&x, &t, DEFAULT_RIDGE) {
                Ok(m) => m,
                Err(Error::Singular(_)) => continue,
                Err(e) => return Err(e),
            };
            let pred = argmax_rows(&decision_scores(&model, &x)?);
            let err = error_rate(&pred, &t);
            let ok = if params.tol == 0.0 {
                err <= 0.0
            } else {
                err < params.tol
            };
            if ok {
                // class_ids is sorted [0, 1]; column 1 is the positive class.
                vectors.push(model.weights.column(1).to_vec());
                bias.push(model.intercepts[1]);
                accepted = true;
                break;
            }
        }
        if !accepted {
            return Err(Error::NonSeparable {
                filter_index,
                attempts: params.max_attempts_per_filter,
            });
        }
    }

    Ok(bank_from_vectors(
        &vectors,
        bias,
        patches.patch_size,
        patches.in_channels,
        FilterKind::StackedLda,
    ))
}

/// Combine two banks: round(ratio·target) leading filters from `a`, the
/// remainder from `b`, where target is the larger bank size.
pub fn mix_filter_banks(a: &FilterBank, b: &FilterBank, ratio: f64) -> Result<FilterBank> {
    if a.patch_size() != b.patch_size() || a.in_channels() != b.in_channels() {
        return Err(Error::Dimension(format!(
            "cannot mix {}x{}x{} and {}x{}x{} banks",
            a.patch_size(),
            a.patch_size(),
            a.in_channels(),
            b.patch_size(),
            b.patch_size(),
            b.in_channels()
        )));
    }
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Domain(format!("mix ratio {ratio} outside [0, 1]")));
    }
    let target = a.out_channels().max(b.out_channels());
    let from_a = (ratio * target as f64).round() as usize;
    let from_b = target - from_a;
    if from_a > a.out_channels() || from_b > b.out_channels() {
        return Err(Error::InsufficientData(format!(
            "mix needs {from_a}+{from_b} filters but banks hold {}+{}",
            a.out_channels(),
            b.out_channels()
        )));
    }

    let k = a.patch_size();
    let c_in = a.in_channels();
    let mut kernels = Array4::zeros((k, k, c_in, target));
    let mut bias = Vec::with_capacity(target);
    for f in 0..from_a {
        kernels
            .index_axis_mut(ndarray::Axis(3), f)
            .assign(&a.kernels.index_axis(ndarray::Axis(3), f));
        bias.push(a.bias[f]);
    }
    for f in 0..from_b {
        kernels
            .index_axis_mut(ndarray::Axis(3), from_a + f)
            .assign(&b.kernels.index_axis(ndarray::Axis(3), f));
        bias.push(b.bias[f]);
    }
    Ok(FilterBank {
        kernels,
        bias,
        kind: FilterKind::Mixed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Axis;

    fn ramp_images(m: usize, n: usize, c: usize, count: usize) -> Array4<f64> {
        Array4::from_shape_fn((m, n, c, count), |(r, cc, ch, i)| {
            (r * 31 + cc * 7 + ch * 3 + i * 13) as f64 / 97.0
        })
    }

    #[test]
    fn patch_counts_match_formula() {
        let imgs = ramp_images(4, 4, 1, 1);
        let p = extract_patches(&imgs, 3, None, 0).unwrap();
        assert_eq!(p.data.ncols(), 4);
        assert_eq!(p.per_image, 4);

        let imgs = ramp_images(28, 28, 1, 1);
        let p = extract_patches(&imgs, 13, None, 0).unwrap();
        assert_eq!(p.per_image, 16 * 16);
        assert_eq!(p.data.ncols(), 256);

        let imgs = ramp_images(6, 5, 2, 3);
        let p = extract_patches(&imgs, 3, None, 0).unwrap();
        assert_eq!(p.data.ncols(), (6 - 2) * (5 - 2) * 3);
        assert_eq!(p.data.nrows(), 9 * 2);
    }

    #[test]
    fn patch_contents_and_order() {
        let imgs = ramp_images(4, 4, 2, 2);
        let p = extract_patches(&imgs, 3, None, 0).unwrap();
        // Second patch of image 0 sits at (row 0, col 1).
        for dy in 0..3 {
            for dx in 0..3 {
                for ch in 0..2 {
                    let idx = (dy * 3 + dx) * 2 + ch;
                    assert_eq!(p.data[(idx, 1)], imgs[(dy, 1 + dx, ch, 0)]);
                }
            }
        }
        assert_eq!(p.source_image[3], 0);
        assert_eq!(p.source_image[4], 1);
    }

    #[test]
    fn patch_subsampling_reproducible() {
        let imgs = ramp_images(28, 28, 1, 1);
        let a = extract_patches(&imgs, 13, Some(10), 42).unwrap();
        let b = extract_patches(&imgs, 13, Some(10), 42).unwrap();
        assert_eq!(a.data.ncols(), 10);
        assert_eq!(a.data, b.data);
        assert_eq!(a.source_image, b.source_image);

        let c = extract_patches(&imgs, 13, Some(10), 43).unwrap();
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn patch_size_validation() {
        let imgs = ramp_images(4, 4, 1, 1);
        assert!(matches!(
            extract_patches(&imgs, 5, None, 0),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn pca_recovers_canonical_axes() {
        // Patches vary only along vector dimensions 0 and 2, dimension 0
        // with the larger spread; a full factorial design keeps the two
        // exactly uncorrelated. 2x2 single-channel patches → dim 4.
        let count = 45;
        let mut data = Array2::zeros((4, count));
        for i in 0..count {
            data[(0, i)] = ((i % 5) as f64 - 2.0) * 3.0;
            data[(2, i)] = (((i / 5) % 3) as f64 - 1.0) * 0.5;
        }
        let patches = PatchMatrix {
            data,
            patch_size: 2,
            in_channels: 1,
            per_image: count,
            source_image: vec![0; count],
        };
        let bank = fit_pca_filters(&patches, 2).unwrap();
        assert_eq!(bank.kind, FilterKind::Pca);
        assert_eq!(bank.bias, vec![0.0, 0.0]);
        // Filter 0 is the e0 axis: kernel entry (0,0), others 0.
        let f0 = bank.kernels.index_axis(Axis(3), 0);
        assert!((f0[(0, 0, 0)].abs() - 1.0).abs() < 1e-10);
        assert!(f0[(0, 1, 0)].abs() < 1e-10);
        // Filter 1 is the e2 axis, i.e. kernel entry (1,0).
        let f1 = bank.kernels.index_axis(Axis(3), 1);
        assert!((f1[(1, 0, 0)].abs() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn pca_matches_brute_force_eigendecomposition() {
        let imgs = ramp_images(9, 9, 3, 4);
        let noisy = &imgs
            + &Array4::from_shape_fn(imgs.dim(), |(a, b, c, d)| {
                ((a * 7 + b * 11 + c * 5 + d * 3) % 17) as f64 * 0.05
            });
        let patches = extract_patches(&noisy, 3, Some(500), 7).unwrap();
        let bank = fit_pca_filters(&patches, 6).unwrap();

        // Oracle: center columns, take the scatter's eigenvectors via
        // the shared eigensolver on an explicitly looped scatter.
        let (dim, count) = patches.data.dim();
        let mut mean = vec![0.0; dim];
        for col in patches.data.columns() {
            for (i, &v) in col.iter().enumerate() {
                mean[i] += v;
            }
        }
        for v in &mut mean {
            *v /= count as f64;
        }
        let mut scatter = Array2::zeros((dim, dim));
        for col in patches.data.columns() {
            for a in 0..dim {
                for b in 0..dim {
                    scatter[(a, b)] += (col[a] - mean[a]) * (col[b] - mean[b]);
                }
            }
        }
        let eig = sym_eig(&scatter).unwrap();
        for f in 0..6 {
            for dy in 0..3 {
                for dx in 0..3 {
                    for ch in 0..3 {
                        let vec_idx = (dy * 3 + dx) * 3 + ch;
                        let got = bank.kernels[(dy, dx, ch, f)];
                        let want = eig.vectors[(vec_idx, f)];
                        assert!((got - want).abs() < 1e-8, "filter {f} entry mismatch");
                    }
                }
            }
        }
    }

    #[test]
    fn pca_kernel_gram_is_identity() {
        let imgs = ramp_images(10, 10, 1, 5);
        let noisy = &imgs
            + &Array4::from_shape_fn(imgs.dim(), |(a, b, _, d)| {
                ((a * 13 + b * 29 + d * 7) % 23) as f64 * 0.11
            });
        let patches = extract_patches(&noisy, 3, None, 0).unwrap();
        let bank = fit_pca_filters(&patches, 5).unwrap();
        for f in 0..5 {
            for g in 0..5 {
                let a = bank.kernels.index_axis(Axis(3), f);
                let b = bank.kernels.index_axis(Axis(3), g);
                let dot: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
                let want = if f == g { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn pca_invariant_to_column_order() {
        // A plain ramp gives a rank-deficient scatter with tied zero
        // eigenvalues, so roughen it to make the spectrum distinct.
        let imgs = ramp_images(8, 8, 1, 3);
        let imgs = &imgs
            + &Array4::from_shape_fn(imgs.dim(), |(a, b, _, d)| {
                ((a * 19 + b * 37 + d * 3) % 31) as f64 * 0.07
            });
        let patches = extract_patches(&imgs, 3, None, 0).unwrap();
        let bank = fit_pca_filters(&patches, 4).unwrap();

        let count = patches.data.ncols();
        let order: Vec<usize> = (0..count).rev().collect();
        let mut data = Array2::zeros(patches.data.dim());
        for (dst, &src) in order.iter().enumerate() {
            data.column_mut(dst).assign(&patches.data.column(src));
        }
        let shuffled = PatchMatrix {
            data,
            source_image: order.iter().map(|&i| patches.source_image[i]).collect(),
            ..patches.clone()
        };
        let bank2 = fit_pca_filters(&shuffled, 4).unwrap();
        for (a, b) in bank.kernels.iter().zip(bank2.kernels.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn pca_rejects_too_few_patches() {
        let patches = PatchMatrix {
            data: Array2::zeros((9, 3)),
            patch_size: 3,
            in_channels: 1,
            per_image: 3,
            source_image: vec![0; 3],
        };
        assert!(matches!(
            fit_pca_filters(&patches, 5),
            Err(Error::InsufficientData(_))
        ));
        assert!(matches!(
            fit_pca_filters(&patches, 10),
            Err(Error::Dimension(_))
        ));
    }

    fn gaussian_cluster_patches(seed: u64) -> (PatchMatrix, Vec<usize>) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = 9;
        let count = 120;
        let mut data = Array2::zeros((dim, count));
        let mut labels = Vec::new();
        for i in 0..count {
            let class = i % 2;
            let center = if class == 0 { -4.0 } else { 4.0 };
            for j in 0..dim {
                data[(j, i)] = center + rng.gen_range(-0.5..0.5);
            }
            labels.push(class);
        }
        (
            PatchMatrix {
                data,
                patch_size: 3,
                in_channels: 1,
                per_image: 1,
                source_image: (0..count).collect(),
            },
            labels,
        )
    }

    #[test]
    fn stacked_lda_accepts_separable_clusters() {
        let (patches, labels) = gaussian_cluster_patches(5);
        let params = StackedLdaParams::new(6, 99);
        let bank = fit_stacked_lda_filters(&patches, &labels, &params).unwrap();
        assert_eq!(bank.kind, FilterKind::StackedLda);
        assert_eq!(bank.out_channels(), 6);
        assert_eq!(bank.bias.len(), 6);
        assert!(bank.kernels.iter().all(|v| v.is_finite()));
        // Each filter separates the clusters it was accepted on; the
        // clusters are so far apart that it separates all of them.
        for f in 0..6 {
            let kernel = bank.kernels.index_axis(Axis(3), f);
            let mut wrong = 0;
            for (i, &l) in labels.iter().enumerate() {
                let mut score = bank.bias[f];
                for dy in 0..3 {
                    for dx in 0..3 {
                        score += kernel[(dy, dx, 0)] * patches.data[(dy * 3 + dx, i)];
                    }
                }
                // Positive score means "class 1 side" for that draw's
                // positive class; orientation varies, so count both.
                let pred = if score > 0.0 { 1 } else { 0 };
                if pred != l {
                    wrong += 1;
                }
            }
            let err = wrong.min(labels.len() - wrong);
            assert_eq!(err, 0, "filter {f} fails to separate the clusters");
        }
    }

    #[test]
    fn stacked_lda_reproducible_under_seed() {
        let (patches, labels) = gaussian_cluster_patches(5);
        let params = StackedLdaParams::new(4, 7);
        let a = fit_stacked_lda_filters(&patches, &labels, &params).unwrap();
        let b = fit_stacked_lda_filters(&patches, &labels, &params).unwrap();
        assert_eq!(a.kernels, b.kernels);
        assert_eq!(a.bias, b.bias);
    }

    #[test]
    fn stacked_lda_vacuous_tolerance_accepts_first_attempt() {
        let (patches, labels) = gaussian_cluster_patches(6);
        let mut params = StackedLdaParams::new(3, 11);
        params.tol = 1.0;
        params.max_attempts_per_filter = 1;
        let bank = fit_stacked_lda_filters(&patches, &labels, &params).unwrap();
        assert_eq!(bank.out_channels(), 3);
    }

    #[test]
    fn stacked_lda_inseparable_errors() {
        // Positives and negatives drawn from identical interleaved
        // clusters: classes 0/1 share every value pattern.
        let dim = 4;
        let count = 80;
        let mut data = Array2::zeros((dim, count));
        let mut labels = Vec::new();
        for i in 0..count {
            for j in 0..dim {
                data[(j, i)] = ((i / 2) % 5) as f64;
            }
            labels.push(i % 2);
        }
        let patches = PatchMatrix {
            data,
            patch_size: 2,
            in_channels: 1,
            per_image: 1,
            source_image: (0..count).collect(),
        };
        let mut params = StackedLdaParams::new(2, 13);
        params.max_attempts_per_filter = 10;
        match fit_stacked_lda_filters(&patches, &labels, &params) {
            Err(Error::NonSeparable {
                filter_index,
                attempts,
            }) => {
                assert_eq!(filter_index, 0);
                assert_eq!(attempts, 10);
            }
            other => panic!("expected NonSeparable, got {other:?}"),
        }
    }

    #[test]
    fn stacked_lda_needs_enough_members() {
        let (patches, _) = gaussian_cluster_patches(8);
        let labels = vec![0usize; patches.data.ncols()];
        let params = StackedLdaParams::new(2, 1);
        assert!(matches!(
            fit_stacked_lda_filters(&patches, &labels, &params),
            Err(Error::InsufficientData(_))
        ));
    }

    fn const_bank(k: usize, c_in: usize, c_out: usize, fill: f64, kind: FilterKind) -> FilterBank {
        FilterBank {
            kernels: Array4::from_elem((k, k, c_in, c_out), fill),
            bias: vec![fill; c_out],
            kind,
        }
    }

    #[test]
    fn mix_half_and_half() {
        let a = const_bank(3, 1, 50, 1.0, FilterKind::StackedLda);
        let b = const_bank(3, 1, 50, 2.0, FilterKind::Pca);
        let mixed = mix_filter_banks(&a, &b, 0.5).unwrap();
        assert_eq!(mixed.out_channels(), 50);
        assert_eq!(mixed.kind, FilterKind::Mixed);
        for f in 0..25 {
            assert_eq!(mixed.kernels[(0, 0, 0, f)], 1.0);
            assert_eq!(mixed.bias[f], 1.0);
        }
        for f in 25..50 {
            assert_eq!(mixed.kernels[(0, 0, 0, f)], 2.0);
            assert_eq!(mixed.bias[f], 2.0);
        }
    }

    #[test]
    fn mix_boundary_ratios() {
        let a = const_bank(3, 2, 8, 1.0, FilterKind::Pca);
        let b = const_bank(3, 2, 8, 2.0, FilterKind::Pca);
        let only_b = mix_filter_banks(&a, &b, 0.0).unwrap();
        assert!(only_b.kernels.iter().all(|&v| v == 2.0));
        let only_a = mix_filter_banks(&a, &b, 1.0).unwrap();
        assert!(only_a.kernels.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn mix_rejects_shape_mismatch() {
        let a = const_bank(3, 1, 4, 1.0, FilterKind::Pca);
        let b = const_bank(5, 1, 4, 2.0, FilterKind::Pca);
        assert!(matches!(
            mix_filter_banks(&a, &b, 0.5),
            Err(Error::Dimension(_))
        ));
        let c = const_bank(3, 2, 4, 2.0, FilterKind::Pca);
        assert!(matches!(
            mix_filter_banks(&a, &c, 0.5),
            Err(Error::Dimension(_))
        ));
    }
}
