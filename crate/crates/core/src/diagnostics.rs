//! Uniqueness checks for a block-diagonal factorization, perturbation-bound
//! ingredients, and comparison of two solutions up to equivalence.

use nalgebra::DMatrix;

use crate::commutant::{build_l, perfect_shuffle};
use crate::error::{Error, Result};
use crate::linalg;
use crate::types::{
    normalize_gram_blocks, partitions_equivalent, stack_underline, MatrixSet, Partition,
};

/// Relative threshold for numerically zero singular values.
pub const RANK_TOL: f64 = 1e-10;

/// `G_jj`: the stack of `I (x) S_i - (S_i^T (x) I) Pi`, whose null space is
/// `{vec(X) : S_i X = X^T S_i for all i}`.
pub fn build_gjj(blocks: &MatrixSet) -> DMatrix<f64> {
    build_l(blocks)
}

/// `G_jk` for blocks `S_i` (`p_j x p_j`) and `T_i` (`p_k x p_k`).
///
/// Applied to `[vec(X); -vec(Y)]` it stacks, per `i`, `vec(S_i X - Y T_i)`
/// and `vec(S_i^T X - Y T_i^T)`.
pub fn build_gjk(blocks_j: &MatrixSet, blocks_k: &MatrixSet) -> Result<DMatrix<f64>> {
    if blocks_j.len() != blocks_k.len() {
        return Err(Error::Dimension(format!(
            "block families have {} and {} members",
            blocks_j.len(),
            blocks_k.len()
        )));
    }
    let (pj, pk) = (blocks_j.dim(), blocks_k.dim());
    let n = pj * pk;
    let ij = DMatrix::<f64>::identity(pj, pj);
    let ik = DMatrix::<f64>::identity(pk, pk);
    let mut g = DMatrix::zeros(2 * blocks_j.len() * n, 2 * n);
    for (i, (s, t)) in blocks_j.iter().zip(blocks_k.iter()).enumerate() {
        let top = 2 * i * n;
        g.view_mut((top, 0), (n, n)).copy_from(&ik.kronecker(s));
        g.view_mut((top, n), (n, n))
            .copy_from(&t.transpose().kronecker(&ij));
        g.view_mut((top + n, 0), (n, n))
            .copy_from(&ik.kronecker(&s.transpose()));
        g.view_mut((top + n, n), (n, n))
            .copy_from(&t.kronecker(&ij));
    }
    Ok(g)
}

/// Dimension of the numerical null space and the smallest singular value
/// above the threshold (`None` when all are below it).
fn null_profile(g: &DMatrix<f64>) -> (usize, Option<f64>) {
    let mut s = linalg::singular_values(g);
    // tall operators have `ncols` singular values; pad for wide ones
    s.resize(g.ncols(), 0.0);
    let smax = s.first().copied().unwrap_or(0.0);
    let tol = RANK_TOL * smax;
    let null = s.iter().filter(|&&x| x <= tol).count();
    let smallest_nonzero = s.iter().rev().find(|&&x| x > tol).copied();
    (null, smallest_nonzero)
}

/// Constants entering the perturbation bounds. The defaults are illustrative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundConstants {
    pub c: f64,
    pub kappa: f64,
}

impl Default for BoundConstants {
    fn default() -> Self {
        Self { c: 1.0, kappa: 1.0 }
    }
}

/// Data needed for `epsilon`, `r` and `g_j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationData {
    /// `||E||_2` of the stacked perturbation.
    pub noise_norm: f64,
    /// `phi_p` of the observed stacked matrix.
    pub phi_p: f64,
    /// `sigma_min(A)` after normalizing `Bdiag(A^T A) = I`.
    pub sigma_min_a: f64,
    pub d: usize,
    /// Number of blocks in the estimated partition.
    pub l_hat: usize,
}

impl PerturbationData {
    /// Computes the data from an observed set and a planted factorization
    /// `C_i = A S_i A^T`.
    pub fn from_truth(
        observed: &MatrixSet,
        a: &DMatrix<f64>,
        blocks: &MatrixSet,
        tau: &Partition,
        l_hat: usize,
    ) -> Result<Self> {
        if blocks.len() != observed.len()
            || a.nrows() != observed.dim()
            || a.ncols() != blocks.dim()
        {
            return Err(Error::Dimension(
                "truth does not match the observed set".into(),
            ));
        }
        let noise = MatrixSet::new(
            observed
                .iter()
                .zip(blocks.iter())
                .map(|(c, s)| c - a * s * a.transpose())
                .collect(),
        )?;
        let noise_norm = linalg::spectral_norm(&stack_underline(&noise));
        let phi = linalg::singular_values(&stack_underline(observed));
        let p = tau.total();
        let (normalized, _) = normalize_gram_blocks(a, tau)?;
        let sigma_min_a = linalg::singular_values(&normalized)
            .get(p - 1)
            .copied()
            .unwrap_or(0.0);
        Ok(Self {
            noise_norm,
            phi_p: phi.get(p - 1).copied().unwrap_or(0.0),
            sigma_min_a,
            d: observed.dim(),
            l_hat,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentifiabilityReport {
    pub partition: Partition,
    /// `inf` exactly when every part has size one.
    pub omega_ir: f64,
    /// `inf` when there is a single block.
    pub omega_neq: f64,
    pub p1_holds: bool,
    /// First block whose `G_jj` null space exceeds `span{vec(I)}`.
    pub p1_offender: Option<usize>,
    pub p2_holds: bool,
    /// First pair `(j, k)` with rank-deficient `G_jk`.
    pub p2_offender: Option<(usize, usize)>,
    /// Null dimension of each `G_jj`.
    pub null_dims: Vec<usize>,
    pub constants: BoundConstants,
    pub epsilon: Option<f64>,
    pub r: Option<f64>,
    pub g1: Option<f64>,
    pub g2: Option<f64>,
}

impl IdentifiabilityReport {
    pub fn unique(&self) -> bool {
        self.p1_holds && self.p2_holds
    }
}

/// Evaluates the uniqueness conditions for the diagonal blocks `blocks[j]`
/// and, with `perturbation`, the quantities of the noisy identification bound.
pub fn identifiability(
    blocks: &[MatrixSet],
    constants: BoundConstants,
    perturbation: Option<&PerturbationData>,
) -> Result<IdentifiabilityReport> {
    if blocks.is_empty() {
        return Err(Error::InvalidInput("no blocks supplied".into()));
    }
    if blocks.iter().any(|b| b.len() != blocks[0].len()) {
        return Err(Error::Dimension(
            "blocks have different numbers of members".into(),
        ));
    }
    let partition = Partition::new(blocks.iter().map(|b| b.dim()).collect())?;

    let mut omega_ir = f64::INFINITY;
    let mut null_dims = Vec::with_capacity(blocks.len());
    let mut p1_offender = None;
    for (j, b) in blocks.iter().enumerate() {
        let (null, smallest) = null_profile(&build_gjj(b));
        null_dims.push(null);
        if b.dim() > 1 {
            omega_ir = omega_ir.min(smallest.unwrap_or(0.0));
        }
        if null != 1 && p1_offender.is_none() {
            p1_offender = Some(j);
        }
    }

    let mut omega_neq = f64::INFINITY;
    let mut p2_offender = None;
    for j in 0..blocks.len() {
        for k in j + 1..blocks.len() {
            let g = build_gjk(&blocks[j], &blocks[k])?;
            let s = linalg::singular_values(&g);
            let smax = s.first().copied().unwrap_or(0.0);
            let smin = if g.nrows() >= g.ncols() {
                s.last().copied().unwrap_or(0.0)
            } else {
                0.0
            };
            omega_neq = omega_neq.min(smin);
            if !(smin > RANK_TOL * smax) && p2_offender.is_none() {
                p2_offender = Some((j, k));
            }
        }
    }

    let mut report = IdentifiabilityReport {
        partition,
        omega_ir,
        omega_neq,
        p1_holds: p1_offender.is_none(),
        p1_offender,
        p2_holds: p2_offender.is_none(),
        p2_offender,
        null_dims,
        constants,
        epsilon: None,
        r: None,
        g1: None,
        g2: None,
    };
    if let Some(data) = perturbation {
        let p = report.partition.total() as f64;
        let eps = data.noise_norm / data.phi_p;
        let r = (2.0 * (data.d as f64 + 2.0 * constants.c)).sqrt() * data.phi_p * eps
            / (data.sigma_min_a.powi(2) * (1.0 - eps * eps));
        let penalty = (constants.kappa / omega_neq).max(1.0 / omega_ir) * r;
        let g = |j: f64| {
            if data.l_hat <= 1 {
                f64::INFINITY
            } else {
                (2.0 * j).sqrt() / ((data.l_hat - 1) as f64 * constants.kappa * p.sqrt()) - penalty
            }
        };
        report.epsilon = Some(eps);
        report.r = Some(r);
        report.g1 = Some(g(1.0));
        report.g2 = Some(g(2.0));
    }
    Ok(report)
}

/// Splits `blocks` (block-diagonal `p x p` matrices) into one set per part.
pub fn diagonal_blocks(blocks: &MatrixSet, tau: &Partition) -> Result<Vec<MatrixSet>> {
    tau.ranges()
        .into_iter()
        .map(|r| blocks.sub_block(r))
        .collect()
}

/// Outcome of matching a candidate solution against a reference.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub equivalent: bool,
    pub partitions_equivalent: bool,
    /// `matching[j]` is the candidate block paired with reference block `j`.
    pub matching: Vec<Option<usize>>,
    /// `||A_hat_matched - A D||_F / ||A||_F` for the best block-diagonal `D`;
    /// `inf` when no complete matching exists.
    pub block_error: f64,
}

/// Compares `(tau_hat, A_hat)` with `(tau, A)`.
///
/// Both diagonalizers are normalized to `Bdiag(X^T X) = I`. Blocks are paired
/// greedily by the Frobenius mass of the corresponding sub-block of
/// `|A^+ A_hat|`, restricted to pairs of equal size; `D_j = A_j^+ A_hat_k`.
pub fn compare_solutions(
    tau: &Partition,
    a: &DMatrix<f64>,
    tau_hat: &Partition,
    a_hat: &DMatrix<f64>,
    tol: f64,
) -> Result<Comparison> {
    if tau.total() != tau_hat.total() || a.shape() != a_hat.shape() {
        return Err(Error::Dimension(format!(
            "reference is {:?} with {tau}, candidate is {:?} with {tau_hat}",
            a.shape(),
            a_hat.shape()
        )));
    }
    let (a, _) = normalize_gram_blocks(a, tau)?;
    let (a_hat, _) = normalize_gram_blocks(a_hat, tau_hat)?;
    let (a_pinv, _) = linalg::pinv(&a);
    let cross = (&a_pinv * &a_hat).abs();
    let rows = tau.ranges();
    let cols = tau_hat.ranges();

    let mut pairs = Vec::new();
    for (j, rj) in rows.iter().enumerate() {
        for (k, ck) in cols.iter().enumerate() {
            if rj.len() == ck.len() {
                let mass = cross
                    .view((rj.start, ck.start), (rj.len(), ck.len()))
                    .norm_squared();
                pairs.push((mass, j, k));
            }
        }
    }
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut matching = vec![None; rows.len()];
    let mut taken = vec![false; cols.len()];
    for (_, j, k) in pairs {
        if matching[j].is_none() && !taken[k] {
            matching[j] = Some(k);
            taken[k] = true;
        }
    }
    let partitions_eq = partitions_equivalent(tau, tau_hat).is_some();
    if matching.iter().any(Option::is_none) {
        return Ok(Comparison {
            equivalent: false,
            partitions_equivalent: partitions_eq,
            matching,
            block_error: f64::INFINITY,
        });
    }
    let mut err2 = 0.0;
    for (j, rj) in rows.iter().enumerate() {
        let ck = &cols[matching[j].expect("complete matching")];
        let aj = a.columns(rj.start, rj.len()).into_owned();
        let ak = a_hat.columns(ck.start, ck.len()).into_owned();
        let (aj_pinv, _) = linalg::pinv(&aj);
        let dj = &aj_pinv * &ak;
        err2 += linalg::frob_sq(&(ak - aj * dj));
    }
    let block_error = err2.sqrt() / a.norm();
    Ok(Comparison {
        equivalent: partitions_eq && block_error <= tol,
        partitions_equivalent: partitions_eq,
        matching,
        block_error,
    })
}

/// Verifies `Pi vec(X^T) = vec(X)` for one matrix; exposed for operator checks.
pub fn shuffle_defect(x: &DMatrix<f64>) -> f64 {
    let q = x.nrows();
    let lhs = perfect_shuffle(q) * DMatrix::from_column_slice(q * q, 1, x.transpose().as_slice());
    (lhs - DMatrix::from_column_slice(q * q, 1, x.as_slice())).amax()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(ms: Vec<DMatrix<f64>>) -> MatrixSet {
        MatrixSet::new(ms).unwrap()
    }

    #[test]
    fn gjj_of_scalars_is_zero() {
        let g = build_gjj(&set(vec![
            DMatrix::from_element(1, 1, 3.0),
            DMatrix::from_element(1, 1, -1.0),
        ]));
        assert!(g.iter().all(|&x| x == 0.0));
        let (null, _) = null_profile(&g);
        assert_eq!(null, 1);
    }

    #[test]
    fn gjk_reproduces_defining_residuals() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -0.5, 0.3]);
        let t = DMatrix::from_row_slice(3, 3, &[0.2, 1.0, 0.0, -1.0, 0.4, 2.0, 0.7, 0.1, -0.3]);
        let x = DMatrix::from_fn(2, 3, |i, j| (i as f64 + 1.0) * 0.3 - j as f64 * 0.7);
        let y = DMatrix::from_fn(2, 3, |i, j| ((i * 3 + j) as f64).sin());
        let g = build_gjk(&set(vec![s.clone()]), &set(vec![t.clone()])).unwrap();
        let mut v = Vec::from(x.as_slice());
        v.extend((-&y).iter());
        let out = g * DMatrix::from_column_slice(12, 1, &v);
        let e1 = &s * &x - &y * &t;
        let e2 = s.transpose() * &x - &y * t.transpose();
        assert!((out.rows(0, 6) - DMatrix::from_column_slice(6, 1, e1.as_slice())).amax() < 1e-14);
        assert!((out.rows(6, 6) - DMatrix::from_column_slice(6, 1, e2.as_slice())).amax() < 1e-14);
    }

    #[test]
    fn all_scalar_partition_has_infinite_omega_ir() {
        let blocks = vec![
            set(vec![
                DMatrix::from_element(1, 1, 1.0),
                DMatrix::from_element(1, 1, 2.0),
            ]),
            set(vec![
                DMatrix::from_element(1, 1, 3.0),
                DMatrix::from_element(1, 1, -1.0),
            ]),
        ];
        let rep = identifiability(&blocks, BoundConstants::default(), None).unwrap();
        assert_eq!(rep.omega_ir, f64::INFINITY);
        assert!(rep.p1_holds && rep.p2_holds);
    }

    #[test]
    fn identical_families_are_not_distinguishable() {
        let s = set(vec![
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -0.5, 0.3]),
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.5, -2.0]),
        ]);
        let rep = identifiability(&[s.clone(), s], BoundConstants::default(), None).unwrap();
        assert!(!rep.p2_holds);
        assert_eq!(rep.p2_offender, Some((0, 1)));
        assert!(rep.omega_neq < 1e-10);
    }

    #[test]
    fn comparison_with_itself() {
        let a = DMatrix::from_fn(5, 4, |i, j| {
            ((i * 7 + j * j * 3 + i * j) as f64).sin() + if i == j { 2.0 } else { 0.0 }
        });
        let tau = Partition::new(vec![1, 3]).unwrap();
        let c = compare_solutions(&tau, &a, &tau, &a, 1e-10).unwrap();
        assert!(c.equivalent);
        assert_eq!(c.matching, vec![Some(0), Some(1)]);
        assert!(c.block_error < 1e-12);
    }

    #[test]
    fn mismatched_sizes_are_not_equivalent() {
        let a = DMatrix::from_fn(5, 4, |i, j| {
            ((i * 7 + j * j * 3 + i * j) as f64).sin() + if i == j { 2.0 } else { 0.0 }
        });
        let c = compare_solutions(
            &Partition::new(vec![1, 3]).unwrap(),
            &a,
            &Partition::new(vec![2, 2]).unwrap(),
            &a,
            1e-6,
        )
        .unwrap();
        assert!(!c.equivalent);
        assert_eq!(c.block_error, f64::INFINITY);
    }
}
