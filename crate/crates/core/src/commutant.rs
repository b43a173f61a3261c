//! The linear operator `L(D): vec(X) -> [vec(D_i X - X^T D_i)]_i` and its
//! (relaxed) null space.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::types::MatrixSet;

/// Orthonormal basis (trace inner product) of `N_delta(D)`.
#[derive(Debug, Clone)]
pub struct NullBasis {
    pub basis: Vec<DMatrix<f64>>,
    /// Singular values of `L` that were kept, ascending.
    pub sigma_kept: Vec<f64>,
    /// First singular value above the threshold, `inf` when every direction was kept.
    pub sigma_next: f64,
    pub delta: f64,
}

impl NullBasis {
    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    /// Side length `q` of the basis matrices (0 for an empty basis).
    pub fn order(&self) -> usize {
        self.basis.first().map_or(0, |x| x.nrows())
    }
}

/// Permutation `Pi_q` with `Pi_q vec(X^T) = vec(X)` for every `q x q` matrix.
pub fn perfect_shuffle(q: usize) -> DMatrix<f64> {
    let n = q * q;
    let mut pi = DMatrix::zeros(n, n);
    for i in 0..q {
        for j in 0..q {
            // vec(X)[i + jq] = X[i,j] = vec(X^T)[j + iq]
            pi[(i + j * q, j + i * q)] = 1.0;
        }
    }
    pi
}

/// `L(D)`, the `mq^2 x q^2` stack of `I_q (x) D_i - (D_i^T (x) I_q) Pi_q`.
pub fn build_l(set: &MatrixSet) -> DMatrix<f64> {
    let q = set.dim();
    let n = q * q;
    let id = DMatrix::<f64>::identity(q, q);
    let pi = perfect_shuffle(q);
    let mut l = DMatrix::zeros(set.len() * n, n);
    for (i, d) in set.iter().enumerate() {
        let block = id.kronecker(d) - d.transpose().kronecker(&id) * &pi;
        l.view_mut((i * n, 0), (n, n)).copy_from(&block);
    }
    l
}

/// Singular values (ascending) and matching right singular vectors of `L(D)`.
#[derive(Debug, Clone)]
pub struct OperatorSpectrum {
    pub order: usize,
    pub sigma: Vec<f64>,
    /// `q^2 x q^2`; column `k` pairs with `sigma[k]`.
    pub right_vectors: DMatrix<f64>,
}

impl OperatorSpectrum {
    pub fn of(set: &MatrixSet) -> Self {
        let svd = linalg::svd_sorted(&build_l(set));
        let n = svd.s.len();
        let sigma: Vec<f64> = svd.s.iter().rev().copied().collect();
        let right_vectors = DMatrix::from_fn(n, n, |r, c| svd.v[(r, n - 1 - c)]);
        Self {
            order: set.dim(),
            sigma,
            right_vectors,
        }
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma.last().copied().unwrap_or(0.0)
    }

    /// Threshold below which singular values count as exact zeros:
    /// `10 q eps sigma_max`.
    pub fn zero_floor(&self) -> f64 {
        10.0 * self.order as f64 * f64::EPSILON * self.sigma_max()
    }

    /// Basis of the span of right singular vectors with `sigma <= delta`.
    ///
    /// `delta` is raised to [`zero_floor`](Self::zero_floor). A user-level
    /// threshold that sits within `1e-12 sigma_max` of a singular value is
    /// rejected.
    pub fn null_basis(&self, delta: f64) -> Result<NullBasis> {
        if !(delta >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "delta must be nonnegative, got {delta}"
            )));
        }
        let floor = self.zero_floor();
        let effective = delta.max(floor);
        if delta > floor {
            let window = 1e-12 * self.sigma_max();
            if let Some(&s) = self.sigma.iter().find(|&&s| (s - delta).abs() <= window) {
                return Err(Error::AmbiguousThreshold {
                    delta,
                    singular_value: s,
                });
            }
        }
        let s = self.sigma.iter().take_while(|&&x| x <= effective).count();
        let q = self.order;
        let basis = (0..s)
            .map(|k| DMatrix::from_column_slice(q, q, self.right_vectors.column(k).as_slice()))
            .collect();
        Ok(NullBasis {
            basis,
            sigma_kept: self.sigma[..s].to_vec(),
            sigma_next: self.sigma.get(s).copied().unwrap_or(f64::INFINITY),
            delta: effective,
        })
    }
}

/// Orthonormal basis of `N_delta(set)`.
pub fn null_basis(set: &MatrixSet, delta: f64) -> Result<NullBasis> {
    OperatorSpectrum::of(set).null_basis(delta)
}

/// Column-major `vec(X)`.
pub fn vec(x: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(x.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shuffle_small_cases() {
        assert_eq!(perfect_shuffle(1), DMatrix::<f64>::identity(1, 1));
        let p2 = perfect_shuffle(2);
        let expected = DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0,
            ],
        );
        assert_eq!(p2, expected);
    }

    #[test]
    fn shuffle_is_involution_on_basis_matrices() {
        let q = 3;
        let p = perfect_shuffle(q);
        for a in 0..q {
            for b in 0..q {
                let mut e = DMatrix::zeros(q, q);
                e[(a, b)] = 1.0;
                assert_eq!(&p * vec(&e.transpose()), vec(&e));
                assert_eq!(&p * (&p * vec(&e)), vec(&e));
            }
        }
        assert_eq!(&p * &p, DMatrix::<f64>::identity(q * q, q * q));
    }

    #[test]
    fn identity_set_null_space_is_symmetric_matrices() {
        for q in 1..=4 {
            let set = MatrixSet::new(vec![DMatrix::identity(q, q)]).unwrap();
            let nb = null_basis(&set, 0.0).unwrap();
            assert_eq!(nb.len(), q * (q + 1) / 2);
            for x in &nb.basis {
                assert!((x - x.transpose()).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn generic_diagonal_pair_has_diagonal_null_space() {
        let d1 = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0]));
        let d2 = DMatrix::from_diagonal(&DVector::from_vec(vec![-0.5, 4.0, 0.25]));
        let nb = null_basis(&MatrixSet::new(vec![d1, d2]).unwrap(), 0.0).unwrap();
        assert_eq!(nb.len(), 3);
        for x in &nb.basis {
            let off = x - DMatrix::from_diagonal(&x.diagonal());
            assert!(off.amax() < 1e-12);
        }
    }

    #[test]
    fn rejects_threshold_on_singular_value() {
        let d1 = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
        let spec = OperatorSpectrum::of(&MatrixSet::new(vec![d1]).unwrap());
        let s = *spec.sigma.iter().find(|&&s| s > 0.1).unwrap();
        assert!(matches!(
            spec.null_basis(s),
            Err(Error::AmbiguousThreshold { .. })
        ));
        assert!(spec.null_basis(-1.0).is_err());
    }

    #[test]
    fn kept_values_respect_threshold() {
        let d = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, -1.0, 0.5, 3.0, 2.0, 0.0, 1.0]);
        let spec = OperatorSpectrum::of(&MatrixSet::new(vec![d]).unwrap());
        let delta = 0.5 * (spec.sigma[3] + spec.sigma[4]);
        let nb = spec.null_basis(delta).unwrap();
        assert_eq!(nb.len(), 4);
        assert!(nb.sigma_kept.iter().all(|&s| s <= nb.delta));
        assert!(nb.sigma_next > nb.delta);
        for (i, a) in nb.basis.iter().enumerate() {
            for (j, b) in nb.basis.iter().enumerate() {
                let ip = (a.transpose() * b).trace();
                assert!((ip - if i == j { 1.0 } else { 0.0 }).abs() < 1e-10);
            }
        }
    }
}
