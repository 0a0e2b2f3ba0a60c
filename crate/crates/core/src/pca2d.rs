//! Two-dimensional PCA over matrices.
//!
//! Samples are `H x W` matrices. The image covariance
//! `G = 1/M * sum_j (A_j - mean)^T (A_j - mean)` is `W x W`, so the
//! eigenproblem stays tiny (12x12 for 2D-HOG layers) no matter how many rows
//! the samples have. Features are `Y = A * X` where `X` holds the leading
//! eigenvectors.

use ndarray::{Array1, Array2, ArrayView2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hog2d::HogLayers;

const JACOBI_MAX_SWEEPS: usize = 100;
const JACOBI_REL_TOL: f64 = 1e-12;

/// Symmetric PSD `W x W` covariance of a set of equally-sized matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageCovariance {
    pub matrix: Array2<f64>,
    pub sample_count: usize,
}

/// Leading eigenvectors (as columns) of an [`ImageCovariance`].
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionBasis {
    /// `W x d`, orthonormal columns.
    pub vectors: Array2<f64>,
    /// Nonincreasing, nonnegative.
    pub eigenvalues: Vec<f64>,
}

impl ProjectionBasis {
    pub fn input_cols(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn dims(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn captured_variance(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }
}

fn check_uniform(samples: &[ArrayView2<'_, f64>]) -> Result<(usize, usize)> {
    let first = samples.first().ok_or_else(|| Error::arg("no samples"))?;
    let dim = first.dim();
    if let Some(j) = samples.iter().position(|s| s.dim() != dim) {
        return Err(Error::arg(format!(
            "sample {j} is {:?}, expected {dim:?}",
            samples[j].dim()
        )));
    }
    Ok(dim)
}

/// Entrywise mean. Accumulation runs in sample order.
pub fn mean_matrix(samples: &[ArrayView2<'_, f64>]) -> Result<Array2<f64>> {
    let dim = check_uniform(samples)?;
    let mut acc = Array2::zeros(dim);
    for s in samples {
        acc += s;
    }
    acc /= samples.len() as f64;
    Ok(acc)
}

/// Image covariance. Only the upper triangle is accumulated and then mirrored,
/// so the result is exactly symmetric.
pub fn image_covariance(
    samples: &[ArrayView2<'_, f64>],
    mean: &Array2<f64>,
) -> Result<ImageCovariance> {
    let dim = check_uniform(samples)?;
    if mean.dim() != dim {
        return Err(Error::arg(format!("mean is {:?}, samples are {dim:?}", mean.dim())));
    }
    let (h, w) = dim;
    let mut g = Array2::<f64>::zeros((w, w));
    let mut centered = Array2::<f64>::zeros((h, w));
    for s in samples {
        centered.assign(s);
        centered -= mean;
        for p in 0..w {
            for q in p..w {
                let mut dot = 0.0;
                for r in 0..h {
                    dot += centered[[r, p]] * centered[[r, q]];
                }
                g[[p, q]] += dot;
            }
        }
    }
    let m = samples.len() as f64;
    for p in 0..w {
        for q in p..w {
            let v = g[[p, q]] / m;
            g[[p, q]] = v;
            g[[q, p]] = v;
        }
    }
    Ok(ImageCovariance { matrix: g, sample_count: samples.len() })
}

fn off_diagonal_norm(a: &Array2<f64>) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for p in 0..n {
        for q in 0..n {
            if p != q {
                s += a[[p, q]] * a[[p, q]];
            }
        }
    }
    s.sqrt()
}

/// Full eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns unsorted `(eigenvalues, eigenvectors-as-columns)`.
///
/// Sweeps stop once the off-diagonal Frobenius norm drops below
/// `1e-12 * |A|_F`, or after 100 sweeps.
pub fn symmetric_eigen(a: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(Error::arg(format!("expected a nonempty square matrix, got {:?}", a.dim())));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::arg("matrix has non-finite entries"));
    }
    let mut m = a.clone();
    let mut v = Array2::<f64>::eye(n);
    let total = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    let threshold = JACOBI_REL_TOL * total;

    for _ in 0..JACOBI_MAX_SWEEPS {
        if off_diagonal_norm(&m) <= threshold {
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = m[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let app = m[[p, p]];
                let aqq = m[[q, q]];
                // Rotation angle that zeroes m[p][q]; the smaller root of
                // t^2 + 2 theta t - 1 = 0 keeps the rotation below 45 degrees.
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                m[[p, q]] = 0.0;
                m[[q, p]] = 0.0;
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    Ok((m.diag().to_owned(), v))
}

/// Flips a vector so its largest-magnitude entry (first one on ties) is positive.
fn fix_sign(col: &mut [f64]) {
    let mut best = 0;
    for (i, x) in col.iter().enumerate() {
        if x.abs() > col[best].abs() {
            best = i;
        }
    }
    if col[best] < 0.0 {
        col.iter_mut().for_each(|x| *x = -*x);
    }
}

/// The `d` eigenvectors of `G` with largest eigenvalues, sign-normalized.
/// A zero covariance yields the first `d` standard basis vectors with zero
/// eigenvalues.
pub fn top_eigenvectors(cov: &ImageCovariance, d: usize) -> Result<ProjectionBasis> {
    let w = cov.matrix.nrows();
    if d == 0 || d > w {
        return Err(Error::arg(format!("requested {d} eigenvectors of a {w}x{w} covariance")));
    }
    if cov.matrix.iter().all(|&x| x == 0.0) {
        let mut vectors = Array2::zeros((w, d));
        for k in 0..d {
            vectors[[k, k]] = 1.0;
        }
        return Ok(ProjectionBasis { vectors, eigenvalues: vec![0.0; d] });
    }

    let (values, vectors) = symmetric_eigen(&cov.matrix)?;
    let mut order: Vec<usize> = (0..w).collect();
    // stable: equal eigenvalues keep their Jacobi index order
    order.sort_by(|&i, &j| values[j].total_cmp(&values[i]));

    let mut out = Array2::zeros((w, d));
    let mut eigenvalues = Vec::with_capacity(d);
    for (k, &idx) in order.iter().take(d).enumerate() {
        let mut col: Vec<f64> = vectors.column(idx).to_vec();
        fix_sign(&mut col);
        for (r, x) in col.into_iter().enumerate() {
            out[[r, k]] = x;
        }
        // PSD up to round-off
        eigenvalues.push(values[idx].max(0.0));
    }
    Ok(ProjectionBasis { vectors: out, eigenvalues })
}

/// `Y = A * X`.
pub fn project(a: &ArrayView2<'_, f64>, basis: &ProjectionBasis) -> Result<Array2<f64>> {
    if a.ncols() != basis.input_cols() {
        return Err(Error::arg(format!(
            "matrix has {} columns, basis expects {}",
            a.ncols(),
            basis.input_cols()
        )));
    }
    Ok(a.dot(&basis.vectors))
}

/// Trains one basis on a single stack of matrices.
pub fn train_basis(samples: &[ArrayView2<'_, f64>], d: usize) -> Result<ProjectionBasis> {
    let mean = mean_matrix(samples)?;
    let cov = image_covariance(samples, &mean)?;
    top_eigenvectors(&cov, d)
}

/// Independent per-bin training over the given images' layers. Bins run in
/// parallel; each bin's accumulation order is the order of `training`, so the
/// output does not depend on the worker count.
pub fn train_bases(training: &[HogLayers], d: usize) -> Result<Vec<ProjectionBasis>> {
    if training.len() < 2 {
        return Err(Error::arg(format!(
            "need at least 2 training images, got {}",
            training.len()
        )));
    }
    let bins = training[0].bins();
    let dims = training[0].layer_dims();
    if let Some(i) = training.iter().position(|t| t.bins() != bins || t.layer_dims() != dims) {
        return Err(Error::arg(format!(
            "training image {i} has shape {}, expected {}",
            training[i].shape_string(),
            training[0].shape_string()
        )));
    }
    (0..bins)
        .into_par_iter()
        .map(|b| {
            let stack: Vec<_> = training.iter().map(|t| t.layer(b).view()).collect();
            train_basis(&stack, d)
        })
        .collect()
}
