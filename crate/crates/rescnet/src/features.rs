//! Feature-map post-processing: ReLU, z-scored second-order
//! (covariance) pooling over sliding blocks, and multi-level spatial
//! pyramid max-pooling.

use ndarray::{Array1, Array2, Array3, Array4, ArrayView3, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Three-level pyramid used throughout: 4×4, 2×2, 1×1 subregions.
pub const DEFAULT_PYRAMID: [(usize, usize); 3] = [(4, 4), (2, 2), (1, 1)];

/// Per-block covariance features over a sliding grid: g_r × g_c blocks,
/// each summarized by the d(d+1)/2 upper-triangular covariance entries.
#[derive(Debug, Clone)]
pub struct SopGrid {
    pub grid: Array3<f64>,
    pub block: (usize, usize),
    pub stride: usize,
}

/// Elementwise max(0, v).
pub fn relu(maps: &Array4<f64>) -> Array4<f64> {
    maps.mapv(|v| v.max(0.0))
}

/// Second-order pooling of one sample's m×n×d maps: every block is
/// z-scored over all its r·c·d values (σ = 0 blocks become zeros), and
/// the channel covariance's upper triangle (divisor r·c − 1) is stored
/// per grid cell in row-major order.
pub fn second_order_pool(
    maps: &ArrayView3<f64>,
    block: (usize, usize),
    stride: usize,
) -> Result<SopGrid> {
    let (m, n, d) = maps.dim();
    let (br, bc) = block;
    if br == 0 || bc == 0 || br > m || bc > n {
        return Err(Error::Dimension(format!(
            "block {br}x{bc} does not fit a {m}x{n} map"
        )));
    }
    if stride == 0 {
        return Err(Error::Domain("stride must be at least 1".into()));
    }
    let g_r = (m - br) / stride + 1;
    let g_c = (n - bc) / stride + 1;
    let cells = br * bc;
    let f = d * (d + 1) / 2;
    let mut grid = Array3::zeros((g_r, g_c, f));
    let mut z = Array2::<f64>::zeros((cells, d));

    for gr in 0..g_r {
        for gc in 0..g_c {
            let top = gr * stride;
            let left = gc * stride;

            let total = cells * d;
            let mut mean = 0.0;
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for y in 0..br {
                for x in 0..bc {
                    for ch in 0..d {
                        let v = maps[(top + y, left + x, ch)];
                        mean += v;
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                }
            }
            mean /= total as f64;
            let mut ss = 0.0;
            for y in 0..br {
                for x in 0..bc {
                    for ch in 0..d {
                        let dev = maps[(top + y, left + x, ch)] - mean;
                        ss += dev * dev;
                    }
                }
            }
            let std = if total > 1 { (ss / (total - 1) as f64).sqrt() } else { 0.0 };

            // lo == hi catches constant blocks exactly, where rounding in
            // the mean could otherwise leave a spurious tiny std.
            if std == 0.0 || lo == hi || cells < 2 {
                grid.slice_mut(ndarray::s![gr, gc, ..]).fill(0.0);
                continue;
            }
            for y in 0..br {
                for x in 0..bc {
                    for ch in 0..d {
                        z[(y * bc + x, ch)] = (maps[(top + y, left + x, ch)] - mean) / std;
                    }
                }
            }

            // Channel covariance of the z-scored block.
            let col_mean = z.mean_axis(Axis(0)).expect("cells >= 2");
            let mut idx = 0;
            for a in 0..d {
                for b in a..d {
                    let mut acc = 0.0;
                    for cell in 0..cells {
                        acc += (z[(cell, a)] - col_mean[a]) * (z[(cell, b)] - col_mean[b]);
                    }
                    grid[(gr, gc, idx)] = acc / (cells - 1) as f64;
                    idx += 1;
                }
            }
        }
    }
    Ok(SopGrid {
        grid,
        block,
        stride,
    })
}

fn axis_bounds(len: usize, regions: usize) -> Vec<(usize, usize)> {
    // Near-equal split; the remainder cells go to the last region.
    let base = len / regions;
    (0..regions)
        .map(|a| {
            let start = a * base;
            let end = if a + 1 == regions { len } else { start + base };
            (start, end)
        })
        .collect()
}

/// Pyramid max-pooling: per level, partition the grid into that level's
/// regions (clamped to the grid size) and take the elementwise max of
/// the per-cell features; concatenate all regions in level order,
/// row-major within a level.
pub fn spatial_pyramid_pool(grid: &SopGrid, levels: &[(usize, usize)]) -> Result<Array1<f64>> {
    let (g_r, g_c, f) = grid.grid.dim();
    if g_r == 0 || g_c == 0 || levels.is_empty() {
        return Err(Error::EmptyInput(
            "pyramid pooling needs a non-empty grid and at least one level".into(),
        ));
    }
    let mut out = Vec::new();
    for &(lr, lc) in levels {
        if lr == 0 || lc == 0 {
            return Err(Error::Domain("pyramid levels must be at least 1x1".into()));
        }
        let row_bounds = axis_bounds(g_r, lr.min(g_r));
        let col_bounds = axis_bounds(g_c, lc.min(g_c));
        for &(r0, r1) in &row_bounds {
            for &(c0, c1) in &col_bounds {
                let start = out.len();
                out.extend(std::iter::repeat(f64::NEG_INFINITY).take(f));
                for r in r0..r1 {
                    for c in c0..c1 {
                        for j in 0..f {
                            let v = grid.grid[(r, c, j)];
                            if v > out[start + j] {
                                out[start + j] = v;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(Array1::from_vec(out))
}

/// ReLU the maps, then run SOP + pyramid per sample. Returns one
/// feature row per sample.
pub fn postprocess_batch(
    maps: &Array4<f64>,
    block: (usize, usize),
    stride: usize,
    levels: &[(usize, usize)],
) -> Result<Matrix> {
    let count = maps.dim().3;
    if count == 0 {
        return Err(Error::EmptyInput("no samples to post-process".into()));
    }
    let rectified = relu(maps);
    let rows: Vec<Array1<f64>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let sample = rectified.index_axis(Axis(3), i);
            let grid = second_order_pool(&sample, block, stride)?;
            spatial_pyramid_pool(&grid, levels)
        })
        .collect::<Result<Vec<_>>>()?;
    let width = rows[0].len();
    let mut out = Array2::zeros((count, width));
    for (i, row) in rows.into_iter().enumerate() {
        out.row_mut(i).assign(&row);
    }
    Ok(out)
}
