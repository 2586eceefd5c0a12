//! Feature standardization and principal component analysis.
//!
//! PCA is fit by eigendecomposition of the sample covariance matrix using
//! a cyclic Jacobi sweep, which is exact enough at these dimensions (88)
//! and keeps the dependency set small.

use crate::error::{Error, Result};
use crate::ndgrad::Tensor;

/// Per-dimension z-scoring. Dimensions with (population) standard
/// deviation below 1e-12 are passed through centered but unscaled.
#[derive(Clone, Debug)]
pub struct Standardizer {
    pub mean: Tensor,
    pub std: Tensor,
}

impl Standardizer {
    /// Fits mean and standard deviation per column of an n x d matrix.
    pub fn fit(x: &Tensor) -> Result<Self> {
        if x.rank() != 2 {
            return Err(Error::Shape(format!(
                "standardizer expects a 2-d matrix, got {:?}",
                x.shape()
            )));
        }
        let (n, d) = (x.rows(), x.cols());
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (j, m) in mean.iter_mut().enumerate() {
                *m += x.at(i, j);
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut var = vec![0.0; d];
        for i in 0..n {
            for (j, v) in var.iter_mut().enumerate() {
                let c = x.at(i, j) - mean[j];
                *v += c * c;
            }
        }
        let std: Vec<f64> = var
            .iter()
            .map(|v| {
                let s = (v / n as f64).sqrt();
                if s < 1e-12 {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Ok(Self {
            mean: Tensor::new(&[d], mean)?,
            std: Tensor::new(&[d], std)?,
        })
    }

    /// Applies the fitted transform row-wise. Accepts n x d or a bare [d]
    /// vector.
    pub fn transform(&self, x: &Tensor) -> Result<Tensor> {
        let d = self.mean.len();
        let (mean, std) = (self.mean.data(), self.std.data());
        match x.rank() {
            1 => {
                if x.len() != d {
                    return Err(Error::Shape(format!(
                        "standardizer fitted on {d} dims, input has {}",
                        x.len()
                    )));
                }
                let data = x
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(j, &v)| (v - mean[j]) / std[j])
                    .collect();
                Tensor::new(&[d], data)
            }
            2 => {
                if x.cols() != d {
                    return Err(Error::Shape(format!(
                        "standardizer fitted on {d} dims, matrix has {} columns",
                        x.cols()
                    )));
                }
                let mut data = Vec::with_capacity(x.rows() * d);
                for i in 0..x.rows() {
                    for j in 0..d {
                        data.push((x.at(i, j) - mean[j]) / std[j]);
                    }
                }
                Tensor::new(&[x.rows(), d], data)
            }
            _ => Err(Error::Shape("standardizer input must be 1-d or 2-d".into())),
        }
    }
}

/// Fitted PCA basis. `components` is d x q with one principal direction
/// per column, ordered by decreasing explained variance.
#[derive(Clone, Debug)]
pub struct PcaModel {
    pub mean: Tensor,
    pub components: Tensor,
    pub explained_variance: Tensor,
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.cols()
    }
}

/// Jacobi eigendecomposition of a symmetric matrix. Returns eigenvalues in
/// descending order and the matching eigenvectors as columns.
pub(crate) fn symmetric_eigen(a: &Tensor) -> Result<(Vec<f64>, Tensor)> {
    if a.rank() != 2 || a.rows() != a.cols() {
        return Err(Error::Shape(format!(
            "eigendecomposition needs a square matrix, got {:?}",
            a.shape()
        )));
    }
    let n = a.rows();
    let mut m: Vec<f64> = a.data().to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let frob: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = 1e-14 * (1.0 + frob);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() <= tol / (n as f64) {
                    continue;
                }
                let (app, aqq) = (m[p * n + p], m[q * n + q]);
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k * n + p], m[k * n + q]);
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p * n + k], m[q * n + k]);
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].partial_cmp(&m[i * n + i]).unwrap());
    let eigvals: Vec<f64> = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vecs = vec![0.0; n * n];
    for (new_col, &old_col) in order.iter().enumerate() {
        for row in 0..n {
            vecs[row * n + new_col] = v[row * n + old_col];
        }
    }
    Ok((eigvals, Tensor::new(&[n, n], vecs)?))
}

/// Fits PCA on an n x d matrix. The requested component count is clamped
/// to min(n - 1, d), since the sample covariance has at most n - 1
/// non-trivial directions. Each component's sign is fixed so its largest
/// magnitude entry is positive.
pub fn pca_fit(x: &Tensor, n_components: usize) -> Result<PcaModel> {
    if x.rank() != 2 {
        return Err(Error::Shape(format!(
            "PCA expects a 2-d matrix, got {:?}",
            x.shape()
        )));
    }
    let (n, d) = (x.rows(), x.cols());
    if n < 2 {
        return Err(Error::Data(format!("PCA needs at least 2 samples, got {n}")));
    }
    if n_components == 0 {
        return Err(Error::Config("n_components must be at least 1".into()));
    }
    let limit = (n - 1).min(d);
    let q = if n_components > limit {
        log::warn!("clamping PCA components from {n_components} to {limit} ({n} samples, {d} dims)");
        limit
    } else {
        n_components
    };
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (j, m) in mean.iter_mut().enumerate() {
            *m += x.at(i, j);
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let centered = Tensor::from_fn(&[n, d], |flat| x.data()[flat] - mean[flat % d]);
    let cov = centered
        .transpose()
        .matmul(&centered)?
        .map(|c| c / (n - 1) as f64);
    let (eigvals, eigvecs) = symmetric_eigen(&cov)?;
    let mut components = vec![0.0; d * q];
    for col in 0..q {
        // Sign convention keeps refits reproducible.
        let mut best_row = 0;
        for row in 1..d {
            if eigvecs.at(row, col).abs() > eigvecs.at(best_row, col).abs() {
                best_row = row;
            }
        }
        let sign = if eigvecs.at(best_row, col) < 0.0 { -1.0 } else { 1.0 };
        for row in 0..d {
            components[row * q + col] = sign * eigvecs.at(row, col);
        }
    }
    // Tiny negative eigenvalues are rounding artifacts of a PSD matrix.
    let explained_variance: Vec<f64> = eigvals[..q].iter().map(|&v| v.max(0.0)).collect();
    Ok(PcaModel {
        mean: Tensor::new(&[d], mean)?,
        components: Tensor::new(&[d, q], components)?,
        explained_variance: Tensor::new(&[q], explained_variance)?,
    })
}

/// Projects rows (n x d, or a bare [d] vector) onto the fitted components.
pub fn pca_transform(model: &PcaModel, x: &Tensor) -> Result<Tensor> {
    let d = model.mean.len();
    let q = model.components.cols();
    let mean = model.mean.data();
    let project_row = |row: &[f64], out: &mut Vec<f64>| {
        for col in 0..q {
            let mut acc = 0.0;
            for (j, &v) in row.iter().enumerate() {
                acc += (v - mean[j]) * model.components.at(j, col);
            }
            out.push(acc);
        }
    };
    match x.rank() {
        1 => {
            if x.len() != d {
                return Err(Error::Shape(format!(
                    "PCA fitted on {d} dims, input has {}",
                    x.len()
                )));
            }
            let mut out = Vec::with_capacity(q);
            project_row(x.data(), &mut out);
            Tensor::new(&[q], out)
        }
        2 => {
            if x.cols() != d {
                return Err(Error::Shape(format!(
                    "PCA fitted on {d} dims, matrix has {} columns",
                    x.cols()
                )));
            }
            let mut out = Vec::with_capacity(x.rows() * q);
            for i in 0..x.rows() {
                project_row(x.row(i), &mut out);
            }
            Tensor::new(&[x.rows(), q], out)
        }
        _ => Err(Error::Shape("PCA input must be 1-d or 2-d".into())),
    }
}

/// Maps projected coordinates back to the original space. Lossless exactly
/// when the model kept every direction with variance.
pub fn pca_inverse_transform(model: &PcaModel, z: &Tensor) -> Result<Tensor> {
    let q = model.components.cols();
    let d = model.mean.len();
    if z.rank() != 2 || z.cols() != q {
        return Err(Error::Shape(format!(
            "inverse transform expects n x {q}, got {:?}",
            z.shape()
        )));
    }
    let mut out = Vec::with_capacity(z.rows() * d);
    for i in 0..z.rows() {
        for j in 0..d {
            let mut acc = model.mean.data()[j];
            for col in 0..q {
                acc += z.at(i, col) * model.components.at(j, col);
            }
            out.push(acc);
        }
    }
    Tensor::new(&[z.rows(), d], out)
}
