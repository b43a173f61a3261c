//! Rank and range estimation from the stacked matrix, and canonical angles
//! between subspaces.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;
use crate::types::{stack_underline, MatrixSet};

/// Relative floor on the smallest eigenvalue of the mean in [`whiten`].
const WHITEN_PD_TOL: f64 = 1e-12;

/// Full SVD of the stacked matrix `[C_1^T; C_1; ...; C_m^T; C_m]`.
#[derive(Debug, Clone)]
pub struct SpectralProfile {
    /// `phi_1 >= ... >= phi_d >= 0`.
    pub singular_values: Vec<f64>,
    /// `d x d`, columns are right singular vectors in spectrum order.
    pub right_vectors: DMatrix<f64>,
    /// `2md x d`, orthonormal columns.
    pub left_vectors: DMatrix<f64>,
    pub selected_rank: Option<usize>,
}

impl SpectralProfile {
    pub fn dim(&self) -> usize {
        self.singular_values.len()
    }

    /// `phi_k` with 1-based `k`; zero past the end of the spectrum.
    pub fn phi(&self, k: usize) -> f64 {
        assert!(k >= 1, "singular values are 1-indexed");
        self.singular_values.get(k - 1).copied().unwrap_or(0.0)
    }
}

pub fn spectral_profile(set: &MatrixSet) -> SpectralProfile {
    let stacked = stack_underline(set);
    let svd = linalg::svd_sorted(&stacked);
    SpectralProfile {
        singular_values: svd.s,
        right_vectors: svd.v,
        left_vectors: svd.u,
        selected_rank: None,
    }
}

/// Smallest `p >= 1` with `phi_{p+1} < xi * phi_p`, taking `phi_{d+1} = 0`.
/// The chosen rank is recorded in the profile.
pub fn estimate_rank(profile: &mut SpectralProfile, xi: f64) -> Result<usize> {
    if !(xi > 0.0 && xi < 1.0) {
        return Err(Error::InvalidInput(format!(
            "xi must lie in (0, 1), got {xi}"
        )));
    }
    let d = profile.dim();
    let p = (1..=d).find(|&p| profile.phi(p + 1) < xi * profile.phi(p));
    match p {
        Some(p) => {
            profile.selected_rank = Some(p);
            Ok(p)
        }
        None => Err(Error::RankUndetectable {
            xi,
            spectrum: profile.singular_values.clone(),
        }),
    }
}

/// The leading `p` right singular vectors `V_1`.
pub fn range_basis(profile: &SpectralProfile, p: usize) -> Result<DMatrix<f64>> {
    if p == 0 || p > profile.dim() {
        return Err(Error::InvalidInput(format!(
            "rank {p} outside 1..={}",
            profile.dim()
        )));
    }
    Ok(profile.right_vectors.columns(0, p).into_owned())
}

const ORTHONORMAL_TOL: f64 = 1e-8;

/// Canonical angles between `range(x)` (`n x k`) and `range(y)` (`n x l`),
/// `k >= l`, returned nonincreasing in `[0, pi/2]`.
///
/// Cosines come from the singular values of `Y^T X` (clamped to `[0, 1]`),
/// sines from the singular values of `(I - X X^T) Y`; each angle is taken as
/// `atan2(sin, cos)` so that small angles keep full relative accuracy.
pub fn canonical_angles(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_bases(x, y)?;
    let mut cosines: Vec<f64> = linalg::singular_values(&(y.transpose() * x))
        .into_iter()
        .map(|w| w.clamp(0.0, 1.0))
        .collect();
    // Y^T X is l x k with l <= k, so exactly l cosines.
    cosines.truncate(y.ncols());
    cosines.sort_by(|a, b| a.total_cmp(b));
    let residual = y - x * (x.transpose() * y);
    let mut sines: Vec<f64> = linalg::singular_values(&residual)
        .into_iter()
        .map(|s| s.clamp(0.0, 1.0))
        .collect();
    sines.resize(y.ncols(), 0.0);
    Ok(cosines
        .iter()
        .zip(&sines)
        .map(|(&c, &s)| s.atan2(c))
        .collect())
}

/// `||sin Theta(range(x), range(y))||_2` computed as `||X_c^T Y||_2` with an
/// explicit orthonormal complement `X_c` of `range(x)`.
pub fn sin_theta_complement(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
    check_bases(x, y)?;
    let xc = linalg::orthogonal_complement(x);
    if xc.ncols() == 0 {
        return Ok(0.0);
    }
    Ok(linalg::spectral_norm(&(xc.transpose() * y)))
}

/// Largest canonical angle between the column spaces of two arbitrary
/// full-column-rank matrices (bases are orthonormalized first).
pub fn largest_angle_between(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let qa = orthonormalize(a);
    let qb = orthonormalize(b);
    let (big, small) = if qa.ncols() >= qb.ncols() {
        (qa, qb)
    } else {
        (qb, qa)
    };
    Ok(canonical_angles(&big, &small)?
        .first()
        .copied()
        .unwrap_or(0.0))
}

/// Orthonormal basis for the column space of a full-column-rank matrix.
pub fn orthonormalize(a: &DMatrix<f64>) -> DMatrix<f64> {
    linalg::svd_sorted(a).u
}

/// Congruence by `W = M^{-1/2}`, `M` the mean of the set, so that the
/// transformed set averages to the identity. Returns the set and `W^-1`.
///
/// `M` must be symmetric positive definite, which holds for covariance
/// matrices of a full-rank mixture.
pub fn whiten(set: &MatrixSet) -> Result<(MatrixSet, DMatrix<f64>)> {
    let d = set.dim();
    let mut mean = DMatrix::zeros(d, d);
    for c in set.iter() {
        mean += c;
    }
    mean /= set.len() as f64;
    let mean = (&mean + mean.transpose()) * 0.5;
    let eig = mean.symmetric_eigen();
    let top = eig.eigenvalues.max();
    let low = eig.eigenvalues.min();
    if !(low > WHITEN_PD_TOL * top) {
        return Err(Error::Precondition(format!(
            "mean matrix is not positive definite (eigenvalues in [{low:e}, {top:e}])"
        )));
    }
    let v = &eig.eigenvectors;
    let w = v * DMatrix::from_diagonal(&eig.eigenvalues.map(|x| 1.0 / x.sqrt())) * v.transpose();
    let w_inv = v * DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt)) * v.transpose();
    Ok((set.map(|c| &w * c * &w)?, w_inv))
}

fn check_bases(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<()> {
    if x.nrows() != y.nrows() {
        return Err(Error::Dimension(format!(
            "bases live in R^{} and R^{}",
            x.nrows(),
            y.nrows()
        )));
    }
    if x.ncols() < y.ncols() {
        return Err(Error::Precondition(format!(
            "first basis must have at least as many columns ({} < {})",
            x.ncols(),
            y.ncols()
        )));
    }
    for (name, b) in [("first", x), ("second", y)] {
        let defect = linalg::gram_defect(b);
        if defect > ORTHONORMAL_TOL {
            return Err(Error::Precondition(format!(
                "{name} basis is not orthonormal (Gram defect {defect:e})"
            )));
        }
    }
    Ok(())
}
