//! Fréchet distance between Gaussians fitted to latent vectors (FID).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Diagonal load added to both covariances before the distance is computed.
pub const FID_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub n_samples: usize,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Sample mean and unbiased (`1 / (n - 1)`) covariance.
pub fn fit_gaussian<R, T>(samples: &[R]) -> Result<GaussianStats>
where
    R: AsRef<[T]>,
    T: Copy + Into<f64>,
{
    let n = samples.len();
    if n < 2 {
        return Err(Error::TooFewSamples(n));
    }
    let d = samples[0].as_ref().len();
    if let Some(bad) = samples.iter().find(|s| s.as_ref().len() != d) {
        return Err(Error::DimensionMismatch(d, bad.as_ref().len()));
    }
    let x = DMatrix::<f64>::from_fn(n, d, |i, j| samples[i].as_ref()[j].into());
    let mean = x.row_mean().transpose();
    let mut centered = x;
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let mut cov = centered.transpose() * &centered / (n - 1) as f64;
    symmetrize(&mut cov);
    Ok(GaussianStats {
        mean,
        cov,
        n_samples: n,
    })
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0f64;
    for i in 0..m.nrows() {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Principal square root of a symmetric positive semidefinite matrix through
/// its eigendecomposition; negative eigenvalues are clamped to zero.
pub fn matrix_sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(m.nrows(), m.ncols()));
    }
    let asym = max_asymmetry(m);
    if asym > 1e-6 {
        return Err(Error::NotSymmetric(asym));
    }
    let mut sym = m.clone();
    symmetrize(&mut sym);
    let eig = sym.symmetric_eigen();
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    let mut scaled = v.clone();
    for (mut col, r) in scaled.column_iter_mut().zip(roots.iter()) {
        col *= *r;
    }
    let mut root = scaled * v.transpose();
    symmetrize(&mut root);
    Ok(root)
}

/// FID against a fixed reference distribution, with the reference square root cached.
#[derive(Debug, Clone)]
pub struct FidReference {
    stats: GaussianStats,
    cov: DMatrix<f64>,
    cov_sqrt: DMatrix<f64>,
}

impl FidReference {
    pub fn new(stats: GaussianStats) -> Result<Self> {
        let cov = stabilized(&stats.cov);
        let cov_sqrt = matrix_sqrt_psd(&cov)?;
        Ok(Self {
            stats,
            cov,
            cov_sqrt,
        })
    }

    pub fn stats(&self) -> &GaussianStats {
        &self.stats
    }

    /// `|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)`, clamped at zero.
    pub fn fid(&self, other: &GaussianStats) -> Result<f64> {
        let d = self.stats.dim();
        if other.dim() != d {
            return Err(Error::DimensionMismatch(d, other.dim()));
        }
        let other_cov = stabilized(&other.cov);
        let mut product = &self.cov_sqrt * &other_cov * &self.cov_sqrt;
        symmetrize(&mut product);
        let cross = matrix_sqrt_psd(&product)?;
        let mean_term = (&self.stats.mean - &other.mean).norm_squared();
        let trace_term = self.cov.trace() + other_cov.trace() - 2.0 * cross.trace();
        Ok((mean_term + trace_term).max(0.0))
    }
}

fn stabilized(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let mut c = cov.clone();
    for i in 0..c.nrows() {
        c[(i, i)] += FID_EPSILON;
    }
    c
}

pub fn fid(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(a.dim(), b.dim()));
    }
    FidReference::new(a.clone())?.fid(b)
}

/// FID between all frames of a video and the frames of its storyboard.
pub fn evaluate_storyboard<R, T>(all_features: &[R], key_features: &[R]) -> Result<f64>
where
    R: AsRef<[T]>,
    T: Copy + Into<f64>,
{
    fid(&fit_gaussian(all_features)?, &fit_gaussian(key_features)?)
}
