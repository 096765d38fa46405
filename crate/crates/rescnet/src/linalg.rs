//! Dense linear algebra used by the rest of the crate: symmetric
//! eigendecomposition, covariance and regularized linear solves.
//!
//! Everything is 64-bit; covariance pooling and discriminant scatter
//! matrices lose rank too quickly in single precision. Matrices are
//! row-major [`ndarray::Array2`] values; the eigen and solve routines are
//! backed by `nalgebra` behind this module's contract.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Row-major dense matrix of f64.
pub type Matrix = Array2<f64>;

/// Eigenvalues (descending) and matching unit-norm eigenvectors
/// (one per column).
#[derive(Debug, Clone)]
pub struct EigenResult {
    pub values: Array1<f64>,
    pub vectors: Matrix,
}

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_iterator(m.nrows(), m.ncols(), m.iter().copied())
}

fn from_na(m: &DMatrix<f64>) -> Matrix {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

fn check_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what} contains non-finite values")))
    }
}

/// Symmetric eigendecomposition with eigenvalues sorted descending.
///
/// The sign of each eigenvector is fixed deterministically: its
/// largest-magnitude component (lowest index on ties) is made positive,
/// so repeated runs produce identical filter banks and checkpoints.
pub fn sym_eig(m: &Matrix) -> Result<EigenResult> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::Dimension(format!(
            "sym_eig expects a square matrix, got {}x{}",
            n,
            m.ncols()
        )));
    }
    check_finite(m, "sym_eig input")?;
    let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-9 * scale {
                return Err(Error::Dimension(format!(
                    "sym_eig input is not symmetric at ({i},{j})"
                )));
            }
        }
    }

    // Symmetrize exactly so tiny asymmetries cannot leak into the result.
    let mut a = to_na(m);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }

    let eig = a.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .expect("finite eigenvalues")
            .then(i.cmp(&j))
    });

    let mut values = Array1::zeros(n);
    let mut vectors = Array2::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = eig.eigenvalues[src];
        let col = eig.eigenvectors.column(src);
        let norm = col.norm();
        // Largest-magnitude component positive; ties toward lowest index.
        let mut pivot = 0;
        for i in 1..n {
            if col[i].abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        let flip = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            vectors[(i, dst)] = flip * col[i] / norm;
        }
    }
    let out = EigenResult { values, vectors };
    check_finite(&out.vectors, "sym_eig eigenvectors")?;
    Ok(out)
}

/// Sample covariance of `data` (observations in rows, variables in
/// columns): columns are mean-centered, divisor is observations − 1.
pub fn covariance(data: &Matrix) -> Result<Matrix> {
    let n = data.nrows();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "covariance needs at least 2 observations, got {n}"
        )));
    }
    check_finite(data, "covariance input")?;
    let means = data.mean_axis(ndarray::Axis(0)).expect("n >= 2");
    let centered = data - &means.insert_axis(ndarray::Axis(0));
    let mut cov = centered.t().dot(&centered) / (n as f64 - 1.0);
    // The product is symmetric up to rounding; make it exact.
    let p = cov.ncols();
    for i in 0..p {
        for j in (i + 1)..p {
            let v = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    check_finite(&cov, "covariance output")?;
    Ok(cov)
}

/// Solve (a + ridge·I)·x = b for symmetric `a`, Cholesky first with an LU
/// fallback. Fails if the system stays singular or the relative residual
/// exceeds 1e-8.
pub fn regularized_solve(a: &Matrix, b: &Matrix, ridge: f64) -> Result<Matrix> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Dimension(format!(
            "regularized_solve expects square a, got {}x{}",
            n,
            a.ncols()
        )));
    }
    if b.nrows() != n {
        return Err(Error::Dimension(format!(
            "regularized_solve rhs has {} rows, expected {}",
            b.nrows(),
            n
        )));
    }
    if ridge < 0.0 {
        return Err(Error::Domain("ridge must be nonnegative".into()));
    }
    check_finite(a, "regularized_solve lhs")?;
    check_finite(b, "regularized_solve rhs")?;

    let mut lhs = to_na(a);
    for i in 0..n {
        lhs[(i, i)] += ridge;
    }
    let rhs = to_na(b);

    let solution = match lhs.clone().cholesky() {
        Some(chol) => chol.solve(&rhs),
        None => lhs
            .clone()
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Singular("system is singular even after ridge".into()))?,
    };

    let residual = (&lhs * &solution - &rhs).norm();
    let scale = rhs.norm().max(1e-300);
    if !residual.is_finite() || residual / scale > 1e-8 {
        return Err(Error::Singular(format!(
            "solve residual {:.3e} exceeds tolerance",
            residual / scale
        )));
    }
    let x = from_na(&solution);
    check_finite(&x, "regularized_solve output")?;
    Ok(x)
}
