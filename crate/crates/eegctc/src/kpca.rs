//! Kernel PCA with a polynomial kernel: fit on training frames, project new
//! frames through the centered kernel, and expose the cumulative
//! explained-variance curve used to pick the target dimension.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::features::{append_deltas, FeatureError, FeatureSequence};

#[derive(Debug, Error)]
pub enum KpcaError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("degenerate data: all eigenvalues are zero")]
    DegenerateSpectrum,
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

/// Polynomial kernel (scale * <x,y> + offset)^degree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    pub degree: u32,
    pub scale: f64,
    pub offset: f64,
}

impl KernelParams {
    /// Degree-3 kernel with scale 1/d and offset 1.
    pub fn default_for_dim(d: usize) -> Self {
        Self {
            degree: 3,
            scale: 1.0 / d.max(1) as f64,
            offset: 1.0,
        }
    }
}

pub fn poly_kernel(x: &[f64], y: &[f64], params: &KernelParams) -> Result<f64, KpcaError> {
    if x.len() != y.len() {
        return Err(KpcaError::Shape(format!(
            "kernel arguments of dimension {} vs {}",
            x.len(),
            y.len()
        )));
    }
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    Ok((params.scale * dot + params.offset).powi(params.degree as i32))
}

/// Fitted model; projection vectors are scaled so lambda_i * |alpha_i|^2 = 1.
#[derive(Debug, Clone)]
pub struct KpcaModel {
    pub training_frames: Array2<f64>,
    pub kernel: KernelParams,
    /// Full clamped spectrum, descending.
    pub eigenvalues: Vec<f64>,
    /// `[n x k]`.
    pub projection_vectors: Array2<f64>,
    pub target_dim: usize,
    /// Set when the requested dimension exceeded the centered-kernel rank.
    pub rank_deficient: bool,
    pub descriptor: String,
    pub(crate) row_means: Vec<f64>,
    pub(crate) grand_mean: f64,
}

const RANK_CLAMP: f64 = 1e-9;

fn kernel_matrix(frames: &Array2<f64>, params: &KernelParams) -> Result<DMatrix<f64>, KpcaError> {
    let n = frames.nrows();
    let rows: Vec<&[f64]> = (0..n)
        .map(|i| frames.row(i).to_slice().expect("row-major frames"))
        .collect();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = poly_kernel(rows[i], rows[j], params)?;
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Build and double-center the kernel matrix, then eigendecompose it and keep
/// the leading `target_dim` components (reduced to the rank if necessary).
pub fn fit_kpca(
    frames: &Array2<f64>,
    kernel: KernelParams,
    target_dim: usize,
) -> Result<KpcaModel, KpcaError> {
    let n = frames.nrows();
    if n < 2 {
        return Err(KpcaError::Data(format!("need at least 2 frames, got {n}")));
    }
    if target_dim < 1 {
        return Err(KpcaError::Data("target_dim must be >= 1".into()));
    }
    let k = kernel_matrix(frames, &kernel)?;
    let row_means: Vec<f64> = (0..n).map(|i| k.row(i).sum() / n as f64).collect();
    let grand_mean = row_means.iter().sum::<f64>() / n as f64;
    let mut kc = k;
    for i in 0..n {
        for j in 0..n {
            kc[(i, j)] += grand_mean - row_means[i] - row_means[j];
        }
    }

    let eig = SymmetricEigen::new(kc);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let lambda_max = eig.eigenvalues[order[0]].max(0.0);
    let eigenvalues: Vec<f64> = order
        .iter()
        .map(|&i| {
            let l = eig.eigenvalues[i];
            if l <= RANK_CLAMP * lambda_max {
                0.0
            } else {
                l
            }
        })
        .collect();
    let rank = eigenvalues.iter().filter(|&&l| l > 0.0).count();
    let k_eff = target_dim.min(rank);
    let mut projection_vectors = Array2::zeros((n, k_eff));
    for (col, &src) in order.iter().take(k_eff).enumerate() {
        let scale = 1.0 / eigenvalues[col].sqrt();
        for i in 0..n {
            projection_vectors[(i, col)] = eig.eigenvectors[(i, src)] * scale;
        }
    }
    Ok(KpcaModel {
        training_frames: frames.clone(),
        kernel,
        eigenvalues,
        projection_vectors,
        target_dim: k_eff,
        rank_deficient: k_eff < target_dim,
        descriptor: format!(
            "kpca degree {} scale {} offset {}, n {n}, k {k_eff}",
            kernel.degree, kernel.scale, kernel.offset
        ),
        row_means,
        grand_mean,
    })
}

/// Project frames via the centered kernel against the training set.
pub fn transform(model: &KpcaModel, frames: &Array2<f64>) -> Result<Array2<f64>, KpcaError> {
    let d = model.training_frames.ncols();
    if frames.ncols() != d {
        return Err(KpcaError::Shape(format!(
            "frames have dimension {}, model was fit on {d}",
            frames.ncols()
        )));
    }
    let n = model.training_frames.nrows();
    let m = frames.nrows();
    let mut scores = Array2::zeros((m, model.target_dim));
    let mut kv = vec![0.0; n];
    for i in 0..m {
        let x = frames.row(i);
        let x = x.to_slice().expect("row-major frames");
        for (j, slot) in kv.iter_mut().enumerate() {
            let t = model.training_frames.row(j);
            *slot = poly_kernel(x, t.to_slice().expect("row-major frames"), &model.kernel)?;
        }
        let mean: f64 = kv.iter().sum::<f64>() / n as f64;
        for c in 0..model.target_dim {
            let mut acc = 0.0;
            for j in 0..n {
                let centered = kv[j] - mean - model.row_means[j] + model.grand_mean;
                acc += centered * model.projection_vectors[(j, c)];
            }
            scores[(i, c)] = acc;
        }
    }
    Ok(scores)
}

/// Cumulative explained-variance fractions over the full spectrum.
pub fn explained_variance_curve(model: &KpcaModel) -> Result<Vec<(usize, f64)>, KpcaError> {
    let total: f64 = model.eigenvalues.iter().sum();
    if total <= 0.0 {
        return Err(KpcaError::DegenerateSpectrum);
    }
    let mut acc = 0.0;
    Ok(model
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            acc += l;
            (i + 1, acc / total)
        })
        .collect())
}

/// Rows kept when fitting on a long sequence; the n x n eigendecomposition
/// budget caps the kernel matrix size.
pub const MAX_FIT_ROWS: usize = 2000;

/// Fit on (a subsample of) the given frames, project all of them and append
/// deltas; output dimension is 3 x target_dim.
pub fn reduce_pipeline(
    features: &FeatureSequence,
    kernel: KernelParams,
    target_dim: usize,
    subsample_seed: u64,
) -> Result<FeatureSequence, KpcaError> {
    let model = fit_kpca_subsampled(&features.frames, kernel, target_dim, subsample_seed)?;
    let scores = transform(&model, &features.frames)?;
    let reduced = FeatureSequence {
        frames: scores,
        frame_rate_hz: features.frame_rate_hz,
        descriptor: format!("{} -> {}", features.descriptor, model.descriptor),
    };
    Ok(append_deltas(&reduced)?)
}

/// Like [`fit_kpca`] but subsampling uniformly at random (seeded) to at most
/// [`MAX_FIT_ROWS`] rows first.
pub fn fit_kpca_subsampled(
    frames: &Array2<f64>,
    kernel: KernelParams,
    target_dim: usize,
    subsample_seed: u64,
) -> Result<KpcaModel, KpcaError> {
    if frames.nrows() <= MAX_FIT_ROWS {
        return fit_kpca(frames, kernel, target_dim);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(subsample_seed);
    let mut idx: Vec<usize> = (0..frames.nrows()).collect();
    idx.shuffle(&mut rng);
    idx.truncate(MAX_FIT_ROWS);
    idx.sort_unstable();
    let sub = frames.select(ndarray::Axis(0), &idx);
    let mut model = fit_kpca(&sub, kernel, target_dim)?;
    model.descriptor = format!(
        "{} (subsampled {} of {} rows, seed {subsample_seed})",
        model.descriptor,
        MAX_FIT_ROWS,
        frames.nrows()
    );
    Ok(model)
}
