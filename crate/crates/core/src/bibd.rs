//! One bi-splitting step: from the minimizer `X*` of the quartic program to a
//! two-block diagonalizer `Z`, or a verdict that the set does not split.

use nalgebra::{Complex, DMatrix};

use crate::commutant::OperatorSpectrum;
use crate::error::{Error, Result};
use crate::linalg;
use crate::schur::{solve_sylvester, RealSchur};
use crate::types::{MatrixSet, Partition};
use crate::zeig::{solve_opt_on, OptSolution, ZeigOptions};

/// Smallest accepted gap between the two real-part clusters of `X*`.
pub const TOLERANCE_GAP: f64 = 1.0;

/// Smallest accepted `sep(Gamma_1, Gamma_2)`.
pub const MIN_SEP: f64 = 1e-10;

/// Two eigenvalue clusters of `X*` separated by the largest gap in real parts.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSplit {
    /// Size of the upper cluster.
    pub q1: usize,
    /// Size of the lower cluster.
    pub q2: usize,
    /// Mean real part of each cluster, `rho_1 > rho_2`.
    pub centers: (f64, f64),
    pub gap: f64,
    /// Real parts above `cut` belong to the upper cluster.
    pub cut: f64,
}

/// Clusters `eigenvalues` at the largest gap of their sorted real parts.
///
/// Conjugate pairs share a real part and therefore never straddle the cut.
pub fn split_eigenvalues(eigenvalues: &[Complex<f64>]) -> Result<SpectrumSplit> {
    if eigenvalues.len() < 2 {
        return Err(Error::NoReliableSplit {
            gap: 0.0,
            required: TOLERANCE_GAP,
        });
    }
    let mut re: Vec<f64> = eigenvalues.iter().map(|z| z.re).collect();
    re.sort_by(|a, b| b.total_cmp(a));
    let (at, gap) = re
        .windows(2)
        .enumerate()
        .map(|(i, w)| (i, w[0] - w[1]))
        .fold((0, f64::NEG_INFINITY), |best, cur| {
            if cur.1 > best.1 {
                cur
            } else {
                best
            }
        });
    if !(gap >= TOLERANCE_GAP) {
        return Err(Error::NoReliableSplit {
            gap,
            required: TOLERANCE_GAP,
        });
    }
    let q1 = at + 1;
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    Ok(SpectrumSplit {
        q1,
        q2: re.len() - q1,
        centers: (mean(&re[..q1]), mean(&re[q1..])),
        gap,
        cut: 0.5 * (re[at] + re[at + 1]),
    })
}

/// [`split_eigenvalues`] applied to the spectrum of `x_star`.
pub fn split_spectrum(x_star: &DMatrix<f64>) -> Result<SpectrumSplit> {
    split_eigenvalues(&RealSchur::new(x_star)?.eigenvalues())
}

/// Real block factorization `X = Y diag(Gamma_1, Gamma_2) Y^-1`.
#[derive(Debug, Clone)]
pub struct BlockFactorization {
    pub y: DMatrix<f64>,
    pub y_inv: DMatrix<f64>,
    pub gamma1: DMatrix<f64>,
    pub gamma2: DMatrix<f64>,
    /// `sep(Gamma_1, Gamma_2)` of the decoupling Sylvester equation.
    pub sep: f64,
}

/// Ordered real Schur form followed by a Sylvester solve.
///
/// With `X = Q [T11 T12; 0 T22] Q^T` and `T11 R - R T22 = -T12`,
/// `Y = Q [I R; 0 I]` and `Y^-1 = [I -R; 0 I] Q^T`.
pub fn block_factorize(x_star: &DMatrix<f64>, split: &SpectrumSplit) -> Result<BlockFactorization> {
    let q = x_star.nrows();
    let mut schur = RealSchur::new(x_star)?;
    let cut = split.cut;
    let k = schur.reorder(|z| z.re > cut)?;
    if k != split.q1 {
        return Err(Error::Degenerate(format!(
            "reordering produced a leading block of size {k}, expected {}",
            split.q1
        )));
    }
    let t11 = schur.t.view((0, 0), (k, k)).into_owned();
    let t12 = schur.t.view((0, k), (k, q - k)).into_owned();
    let t22 = schur.t.view((k, k), (q - k, q - k)).into_owned();
    let (r, sep) = solve_sylvester(&t11, &t22, &(-t12))?;
    if !(sep >= MIN_SEP) {
        return Err(Error::SplitUnstable { sep });
    }
    let mut w = DMatrix::identity(q, q);
    w.view_mut((0, k), (k, q - k)).copy_from(&r);
    let mut w_inv = DMatrix::identity(q, q);
    w_inv.view_mut((0, k), (k, q - k)).copy_from(&(-&r));
    Ok(BlockFactorization {
        y: &schur.q * w,
        y_inv: w_inv * schur.q.transpose(),
        gamma1: t11,
        gamma2: t22,
        sep,
    })
}

/// Result of one bi-splitting attempt.
#[derive(Debug, Clone)]
pub struct BiSplit {
    /// One part (unsplit) or two parts `(q1, q2)`.
    pub partition: Partition,
    /// `Z = Y^-T`; identity when unsplit.
    pub z: DMatrix<f64>,
    /// `Z^-1 = Y^T`.
    pub z_inv: DMatrix<f64>,
    pub cluster_centers: Option<(f64, f64)>,
    pub gap: Option<f64>,
    /// `sum_i ||OffBdiag(Z^-1 D_i Z^-T)||_F^2`.
    pub split_residual: f64,
    pub cond_z: f64,
    pub sep: Option<f64>,
    pub delta: f64,
    pub opt: OptSolution,
    /// Set when a candidate split was discarded.
    pub warning: Option<String>,
}

impl BiSplit {
    pub fn is_split(&self) -> bool {
        self.partition.cardinality() == 2
    }

    fn unsplit(q: usize, delta: f64, opt: OptSolution, warning: Option<String>) -> Result<Self> {
        Ok(Self {
            partition: Partition::single(q)?,
            z: DMatrix::identity(q, q),
            z_inv: DMatrix::identity(q, q),
            cluster_centers: None,
            gap: None,
            split_residual: 0.0,
            cond_z: 1.0,
            sep: None,
            delta,
            opt,
            warning,
        })
    }
}

/// Splits `set` into two blocks at threshold `delta`, or reports it unsplit.
pub fn bi_block_diagonalize(set: &MatrixSet, delta: f64, opts: &ZeigOptions) -> Result<BiSplit> {
    bi_block_diagonalize_with(set, &OperatorSpectrum::of(set), delta, opts)
}

/// [`bi_block_diagonalize`] with a precomputed spectrum of `L(set)`.
pub fn bi_block_diagonalize_with(
    set: &MatrixSet,
    spectrum: &OperatorSpectrum,
    delta: f64,
    opts: &ZeigOptions,
) -> Result<BiSplit> {
    let q = set.dim();
    let basis = spectrum.null_basis(delta)?;
    let effective = basis.delta;
    let opt = solve_opt_on(&basis, q, opts)?;
    if !opt.feasible {
        return BiSplit::unsplit(q, effective, opt, None);
    }
    let split = match split_eigenvalues(&opt.eigenvalues) {
        Ok(s) => s,
        Err(Error::NoReliableSplit { gap, required }) => {
            let msg =
                format!("eigenvalue gap {gap:.3e} of X* is below {required}; block left whole");
            return BiSplit::unsplit(q, effective, opt, Some(msg));
        }
        Err(e) => return Err(e),
    };
    let fact = block_factorize(&opt.x_star, &split)?;
    let z_inv = fact.y.transpose();
    let z = fact.y_inv.transpose();
    let partition = Partition::new(vec![split.q1, split.q2])?;
    let mut residual = 0.0;
    for d in set.iter() {
        let phi = &z_inv * d * z_inv.transpose();
        residual += linalg::frob_sq(&crate::types::off_block_diag_part(&phi, &partition)?);
    }
    Ok(BiSplit {
        partition,
        cond_z: linalg::condition_number(&z),
        z,
        z_inv,
        cluster_centers: Some(split.centers),
        gap: Some(split.gap),
        split_residual: residual,
        sep: Some(fact.sep),
        delta: effective,
        opt,
        warning: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn real(xs: &[f64]) -> Vec<Complex<f64>> {
        xs.iter().map(|&x| Complex::new(x, 0.0)).collect()
    }

    #[test]
    fn symmetric_two_cluster_spectrum() {
        let s = split_eigenvalues(&real(&[1.0, -1.0, 1.0, -1.0])).unwrap();
        assert_eq!((s.q1, s.q2), (2, 2));
        assert_eq!(s.centers, (1.0, -1.0));
        assert_eq!(s.gap, 2.0);
    }

    #[test]
    fn unbalanced_cluster_spectrum() {
        let a = 3f64.sqrt();
        let s = split_eigenvalues(&real(&[-1.0 / a, a, -1.0 / a, -1.0 / a])).unwrap();
        assert_eq!((s.q1, s.q2), (1, 3));
    }

    #[test]
    fn conjugate_pair_stays_together() {
        let ev = vec![
            Complex::new(0.9, 0.05),
            Complex::new(0.9, -0.05),
            Complex::new(-1.1, 0.0),
        ];
        let s = split_eigenvalues(&ev).unwrap();
        assert_eq!((s.q1, s.q2), (2, 1));
    }

    #[test]
    fn small_gap_is_rejected() {
        assert!(matches!(
            split_eigenvalues(&real(&[0.3, -0.3, 0.2])),
            Err(Error::NoReliableSplit { .. })
        ));
    }

    #[test]
    fn factorization_of_block_diagonal_matrix() {
        let x = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, -0.1, 1.0, 0.0, 0.0, 0.0, -2.0]);
        let split = split_spectrum(&x).unwrap();
        let f = block_factorize(&x, &split).unwrap();
        assert_eq!(f.gamma1.nrows(), 2);
        let mut gamma = DMatrix::zeros(3, 3);
        gamma.view_mut((0, 0), (2, 2)).copy_from(&f.gamma1);
        gamma.view_mut((2, 2), (1, 1)).copy_from(&f.gamma2);
        assert!((&f.y * gamma * &f.y_inv - &x).norm() < 1e-12);
        assert!((&f.y * &f.y_inv - DMatrix::identity(3, 3)).norm() < 1e-12);
    }

    #[test]
    fn irreducible_scalar_set_stays_whole() {
        let set = MatrixSet::new(vec![DMatrix::from_row_slice(1, 1, &[2.0])]).unwrap();
        let split = bi_block_diagonalize(&set, 0.0, &ZeigOptions::default()).unwrap();
        assert!(!split.is_split());
        assert!(!split.opt.feasible);
    }
}
