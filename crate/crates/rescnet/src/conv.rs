//! Same-size zero-padded cross-correlation of image batches against a
//! filter bank, plus channel concatenation with the original images.

use ndarray::{s, Array4};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filter_bank::FilterBank;

/// Padding offsets for same-size output: even kernel sizes put the
/// extra row/column on the bottom/right.
pub fn pad_offsets(k: usize) -> (usize, usize) {
    ((k - 1) / 2, k / 2)
}

/// Cross-correlate `input` (m×n×c_in×N) with every filter in the bank
/// over a zero-padded window, adding the per-filter bias. Output is
/// m×n×c_out×N.
pub fn convolve_same(input: &Array4<f64>, bank: &FilterBank) -> Result<Array4<f64>> {
    let (m, n, c_in, count) = input.dim();
    let k = bank.patch_size();
    if bank.in_channels() != c_in {
        return Err(Error::Dimension(format!(
            "bank expects {} input channels, got {c_in}",
            bank.in_channels()
        )));
    }
    let c_out = bank.out_channels();
    let (pad_before, _) = pad_offsets(k);

    // Flat kernel copy laid out [f][dy][dx][ch] keeps the hot loop off
    // ndarray indexing.
    let mut kf = vec![0.0; c_out * k * k * c_in];
    for f in 0..c_out {
        for dy in 0..k {
            for dx in 0..k {
                for ch in 0..c_in {
                    kf[((f * k + dy) * k + dx) * c_in + ch] = bank.kernels[(dy, dx, ch, f)];
                }
            }
        }
    }

    let src = input
        .as_slice()
        .expect("input batches use the standard layout");
    let mut output = Array4::zeros((m, n, c_out, count));
    {
        let out = output.as_slice_mut().expect("freshly allocated");
        let row_len = n * c_out * count;
        out.par_chunks_mut(row_len).enumerate().for_each(|(r, row)| {
            for c in 0..n {
                for f in 0..c_out {
                    let acc = &mut row[(c * c_out + f) * count..(c * c_out + f + 1) * count];
                    acc.fill(bank.bias[f]);
                    for dy in 0..k {
                        let sr = r + dy;
                        if sr < pad_before || sr - pad_before >= m {
                            continue;
                        }
                        let sr = sr - pad_before;
                        for dx in 0..k {
                            let sc = c + dx;
                            if sc < pad_before || sc - pad_before >= n {
                                continue;
                            }
                            let sc = sc - pad_before;
                            for ch in 0..c_in {
                                let w = kf[((f * k + dy) * k + dx) * c_in + ch];
                                let base = ((sr * n + sc) * c_in + ch) * count;
                                let span = &src[base..base + count];
                                for (a, &v) in acc.iter_mut().zip(span) {
                                    *a += w * v;
                                }
                            }
                        }
                    }
                }
            }
        });
    }
    Ok(output)
}

/// Stack feature maps and the original images along the channel axis:
/// maps first, original channels last.
pub fn concat_with_input(maps: &Array4<f64>, original: &Array4<f64>) -> Result<Array4<f64>> {
    let (m, n, d_maps, count) = maps.dim();
    let (mo, no, d_orig, co) = original.dim();
    if (m, n, count) != (mo, no, co) {
        return Err(Error::Dimension(format!(
            "maps {m}x{n}x{d_maps}x{count} and originals {mo}x{no}x{d_orig}x{co} disagree"
        )));
    }
    let mut out = Array4::zeros((m, n, d_maps + d_orig, count));
    out.slice_mut(s![.., .., 0..d_maps, ..]).assign(maps);
    out.slice_mut(s![.., .., d_maps.., ..]).assign(original);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter_bank::FilterKind;
    use rand::Rng;
    use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};

    fn random_input(m: usize, n: usize, c: usize, count: usize, seed: u64) -> Array4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array4::from_shape_fn((m, n, c, count), |_| rng.gen_range(-1.0..1.0))
    }

    fn random_bank(k: usize, c_in: usize, c_out: usize, seed: u64) -> FilterBank {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FilterBank {
            kernels: Array4::from_shape_fn((k, k, c_in, c_out), |_| rng.gen_range(-1.0..1.0)),
            bias: (0..c_out).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            kind: FilterKind::Pca,
        }
    }

    /// Reference path: build an explicitly zero-padded buffer, then run
    /// a plain valid correlation over it.
    fn oracle(input: &Array4<f64>, bank: &FilterBank) -> Array4<f64> {
        let (m, n, c_in, count) = input.dim();
        let k = bank.patch_size();
        let (pb, pa) = pad_offsets(k);
        let mut padded = Array4::zeros((m + pb + pa, n + pb + pa, c_in, count));
        padded
            .slice_mut(s![pb..pb + m, pb..pb + n, .., ..])
            .assign(input);
        let c_out = bank.out_channels();
        let mut out = Array4::zeros((m, n, c_out, count));
        for i in 0..count {
            for f in 0..c_out {
                for r in 0..m {
                    for c in 0..n {
                        let mut acc = bank.bias[f];
                        for dy in 0..k {
                            for dx in 0..k {
                                for ch in 0..c_in {
                                    acc += padded[(r + dy, c + dx, ch, i)]
                                        * bank.kernels[(dy, dx, ch, f)];
                                }
                            }
                        }
                        out[(r, c, f, i)] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let input = random_input(5, 6, 1, 3, 1);
        let bank = FilterBank {
            kernels: Array4::from_elem((1, 1, 1, 1), 1.0),
            bias: vec![0.0],
            kind: FilterKind::Pca,
        };
        let out = convolve_same(&input, &bank).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn zero_input_yields_bias() {
        let input = Array4::zeros((4, 4, 2, 2));
        let mut bank = random_bank(3, 2, 3, 2);
        bank.bias = vec![0.25, -1.5, 3.0];
        let out = convolve_same(&input, &bank).unwrap();
        for f in 0..3 {
            assert!(out
                .slice(s![.., .., f, ..])
                .iter()
                .all(|&v| v == bank.bias[f]));
        }
    }

    #[test]
    fn matches_quadruple_loop_oracle() {
        for &(m, n, c_in, k, c_out) in &[
            (6usize, 6usize, 1usize, 3usize, 2usize),
            (8, 7, 3, 5, 3),
            (5, 8, 3, 1, 2),
            (8, 8, 2, 4, 2),
            (4, 4, 1, 4, 1),
            (8, 8, 3, 5, 2),
        ] {
            let input = random_input(m, n, c_in, 2, 7 + k as u64);
            let bank = random_bank(k, c_in, c_out, 31 + m as u64);
            let got = convolve_same(&input, &bank).unwrap();
            let want = oracle(&input, &bank);
            assert_eq!(got.dim(), (m, n, c_out, 2));
            for (a, b) in got.iter().zip(want.iter()) {
                assert!((a - b).abs() < 1e-12, "shape {m}x{n}x{c_in} k={k}");
            }
        }
    }

    #[test]
    fn linear_in_the_input() {
        let x = random_input(6, 6, 2, 2, 4);
        let z = random_input(6, 6, 2, 2, 5);
        let mut bank = random_bank(3, 2, 2, 6);
        bank.bias = vec![0.0, 0.0];
        let combo = convolve_same(&(&x * 2.0 + &z * (-0.5)), &bank).unwrap();
        let parts =
            &(convolve_same(&x, &bank).unwrap() * 2.0) + &(convolve_same(&z, &bank).unwrap() * (-0.5));
        for (a, b) in combo.iter().zip(parts.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn channel_mismatch_rejected() {
        let input = random_input(4, 4, 2, 1, 9);
        let bank = random_bank(3, 3, 2, 9);
        assert!(matches!(
            convolve_same(&input, &bank),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn concat_orders_maps_then_original() {
        let maps = random_input(4, 5, 3, 2, 11);
        let orig = random_input(4, 5, 1, 2, 12);
        let cat = concat_with_input(&maps, &orig).unwrap();
        assert_eq!(cat.dim(), (4, 5, 4, 2));
        assert_eq!(cat.slice(s![.., .., 0..3, ..]), maps);
        assert_eq!(cat.slice(s![.., .., 3.., ..]), orig);
    }

    #[test]
    fn concat_channel_counts() {
        let maps = Array4::zeros((28, 28, 60, 2));
        let orig = Array4::zeros((28, 28, 1, 2));
        assert_eq!(concat_with_input(&maps, &orig).unwrap().dim().2, 61);
        let maps = Array4::zeros((32, 32, 50, 2));
        let orig = Array4::zeros((32, 32, 3, 2));
        assert_eq!(concat_with_input(&maps, &orig).unwrap().dim().2, 53);
    }

    #[test]
    fn concat_rejects_mismatched_shapes() {
        let maps = Array4::zeros((4, 4, 2, 2));
        let orig = Array4::zeros((4, 5, 1, 2));
        assert!(matches!(
            concat_with_input(&maps, &orig),
            Err(Error::Dimension(_))
        ));
        let orig = Array4::zeros((4, 4, 1, 3));
        assert!(matches!(
            concat_with_input(&maps, &orig),
            Err(Error::Dimension(_))
        ));
    }
}
