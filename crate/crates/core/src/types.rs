//! Matrix sets, partitions and the block-structure operators used throughout
//! the crate.

use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// An ordered collection of `m` real `d x d` matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixSet {
    matrices: Vec<DMatrix<f64>>,
    dim: usize,
}

impl MatrixSet {
    pub fn new(matrices: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = matrices.first().ok_or_else(|| {
            Error::InvalidInput("matrix set must contain at least one matrix".into())
        })?;
        let dim = first.nrows();
        if dim == 0 {
            return Err(Error::InvalidInput(
                "matrix dimension must be at least 1".into(),
            ));
        }
        for (i, m) in matrices.iter().enumerate() {
            if m.nrows() != dim || m.ncols() != dim {
                return Err(Error::Dimension(format!(
                    "matrix {i} is {}x{}, expected {dim}x{dim}",
                    m.nrows(),
                    m.ncols()
                )));
            }
        }
        Ok(Self { matrices, dim })
    }

    /// Dimension `d` of every member.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of matrices `m`.
    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.matrices
    }

    pub fn iter(&self) -> std::slice::Iter<'_, DMatrix<f64>> {
        self.matrices.iter()
    }

    pub fn into_inner(self) -> Vec<DMatrix<f64>> {
        self.matrices
    }

    /// Applies `f` to every member, producing a new set.
    pub fn map<F>(&self, f: F) -> Result<MatrixSet>
    where
        F: FnMut(&DMatrix<f64>) -> DMatrix<f64>,
    {
        MatrixSet::new(self.matrices.iter().map(f).collect())
    }

    /// The principal sub-block `range x range` of every member.
    pub fn sub_block(&self, range: Range<usize>) -> Result<MatrixSet> {
        if range.end > self.dim || range.is_empty() {
            return Err(Error::Dimension(format!(
                "block {range:?} outside dimension {}",
                self.dim
            )));
        }
        let n = range.len();
        self.map(|m| m.view((range.start, range.start), (n, n)).into_owned())
    }

    /// Root-sum-square Frobenius norm over all members.
    pub fn frobenius_norm(&self) -> f64 {
        self.matrices
            .iter()
            .map(linalg::frob_sq)
            .sum::<f64>()
            .sqrt()
    }
}

impl std::ops::Index<usize> for MatrixSet {
    type Output = DMatrix<f64>;

    fn index(&self, i: usize) -> &DMatrix<f64> {
        &self.matrices[i]
    }
}

/// A composition `(p_1, ..., p_l)` of a positive integer `p`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Partition {
    parts: Vec<usize>,
}

impl Partition {
    pub fn new(parts: Vec<usize>) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::InvalidInput(
                "partition needs at least one part".into(),
            ));
        }
        if parts.contains(&0) {
            return Err(Error::InvalidInput(format!(
                "partition parts must be positive: {parts:?}"
            )));
        }
        Ok(Self { parts })
    }

    /// The single-block partition `(p)`.
    pub fn single(p: usize) -> Result<Self> {
        Self::new(vec![p])
    }

    /// Parses a comma-separated list such as `"2,3,3,4"`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts = s
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|e| Error::InvalidInput(format!("bad partition entry {t:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(parts)
    }

    pub fn parts(&self) -> &[usize] {
        &self.parts
    }

    /// Sum of the parts.
    pub fn total(&self) -> usize {
        self.parts.iter().sum()
    }

    /// Number of parts.
    pub fn cardinality(&self) -> usize {
        self.parts.len()
    }

    /// Index ranges of the diagonal blocks.
    pub fn ranges(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.parts
            .iter()
            .map(|&p| {
                let r = start..start + p;
                start += p;
                r
            })
            .collect()
    }

    pub fn is_all_ones(&self) -> bool {
        self.parts.iter().all(|&p| p == 1)
    }

    fn check_dim(&self, p: usize) -> Result<()> {
        if self.total() != p {
            return Err(Error::Dimension(format!(
                "partition {:?} sums to {}, matrix has dimension {p}",
                self.parts,
                self.total()
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for Partition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s: Vec<String> = self.parts.iter().map(|p| p.to_string()).collect();
        write!(f, "({})", s.join(","))
    }
}

impl TryFrom<Vec<usize>> for Partition {
    type Error = Error;

    fn try_from(parts: Vec<usize>) -> Result<Self> {
        Partition::new(parts)
    }
}

impl From<Partition> for Vec<usize> {
    fn from(p: Partition) -> Self {
        p.parts
    }
}

/// A solution `(tau_hat, A_hat, {Sigma_hat_i})` of the blind problem.
#[derive(Debug, Clone)]
pub struct BlockDiagonalization {
    pub partition: Partition,
    /// The `d x p` diagonalizer.
    pub diagonalizer: DMatrix<f64>,
    /// Block-diagonal parts of `A^+ C_i A^+T`; off-block entries are zero.
    pub blocks: MatrixSet,
    /// Off-block residual `f(A_hat)`.
    pub residual: f64,
    pub rank: usize,
}

/// The stacked matrix `[D_1^T; D_1; ...; D_m^T; D_m]` of size `2md x d`.
pub fn stack_underline(set: &MatrixSet) -> DMatrix<f64> {
    let d = set.dim();
    let mut out = DMatrix::zeros(2 * set.len() * d, d);
    for (i, m) in set.iter().enumerate() {
        out.view_mut((2 * i * d, 0), (d, d))
            .copy_from(&m.transpose());
        out.view_mut(((2 * i + 1) * d, 0), (d, d)).copy_from(m);
    }
    out
}

/// `Bdiag_tau(X)`: keeps the diagonal blocks induced by `tau`, zeroes the rest.
pub fn block_diag_part(x: &DMatrix<f64>, tau: &Partition) -> Result<DMatrix<f64>> {
    check_square(x, tau)?;
    let mut out = DMatrix::zeros(x.nrows(), x.ncols());
    for r in tau.ranges() {
        let n = r.len();
        out.view_mut((r.start, r.start), (n, n))
            .copy_from(&x.view((r.start, r.start), (n, n)));
    }
    Ok(out)
}

/// `OffBdiag_tau(X) = X - Bdiag_tau(X)`.
pub fn off_block_diag_part(x: &DMatrix<f64>, tau: &Partition) -> Result<DMatrix<f64>> {
    Ok(x - block_diag_part(x, tau)?)
}

fn check_square(x: &DMatrix<f64>, tau: &Partition) -> Result<()> {
    if x.nrows() != x.ncols() {
        return Err(Error::Dimension(format!(
            "expected a square matrix, got {}x{}",
            x.nrows(),
            x.ncols()
        )));
    }
    tau.check_dim(x.nrows())
}

/// Checks `tau ~ other` and returns a witness permutation `perm` with
/// `tau[i] == other[perm[i]]`.
pub fn partitions_equivalent(tau: &Partition, other: &Partition) -> Option<Vec<usize>> {
    if tau.cardinality() != other.cardinality() {
        return None;
    }
    let mut used = vec![false; other.cardinality()];
    let mut perm = Vec::with_capacity(tau.cardinality());
    for &p in tau.parts() {
        let k = (0..other.cardinality()).find(|&k| !used[k] && other.parts()[k] == p)?;
        used[k] = true;
        perm.push(k);
    }
    Some(perm)
}

/// Embeds `blocks` (one per part) into a `p x p` block-diagonal matrix.
pub fn assemble_block_diagonal(blocks: &[DMatrix<f64>], tau: &Partition) -> Result<DMatrix<f64>> {
    if blocks.len() != tau.cardinality() {
        return Err(Error::Dimension(format!(
            "{} blocks for a partition with {} parts",
            blocks.len(),
            tau.cardinality()
        )));
    }
    let p = tau.total();
    let mut out = DMatrix::zeros(p, p);
    for (b, r) in blocks.iter().zip(tau.ranges()) {
        if b.nrows() != r.len() || b.ncols() != r.len() {
            return Err(Error::Dimension(format!(
                "block is {}x{}, part is {}",
                b.nrows(),
                b.ncols(),
                r.len()
            )));
        }
        out.view_mut((r.start, r.start), (r.len(), r.len()))
            .copy_from(b);
    }
    Ok(out)
}

/// Rescales the column blocks of `a_hat` so that `Bdiag_tau(A^+ A^+T) = I_p`.
///
/// Block `j` is multiplied on the right by the symmetric square root of the
/// `j`-th diagonal block of `A^+ A^+T`.
pub fn normalize_diagonalizer(a_hat: &DMatrix<f64>, tau: &Partition) -> Result<DMatrix<f64>> {
    tau.check_dim(a_hat.ncols())?;
    let (pinv, rank) = linalg::pinv(a_hat);
    if rank < a_hat.ncols() {
        return Err(Error::Degenerate(format!(
            "diagonalizer has numerical rank {rank} < {} columns",
            a_hat.ncols()
        )));
    }
    let s = &pinv * pinv.transpose();
    let mut out = a_hat.clone();
    for r in tau.ranges() {
        let n = r.len();
        let block = s.view((r.start, r.start), (n, n)).into_owned();
        let (root, _) = linalg::sym_sqrt_pair(&block).ok_or_else(|| {
            Error::Degenerate("diagonal block of A^+A^+T is not positive definite".into())
        })?;
        let cols = a_hat.columns(r.start, n) * root;
        out.columns_mut(r.start, n).copy_from(&cols);
    }
    Ok(out)
}

/// Rescales the column blocks of `a` so that `Bdiag_tau(A^T A) = I_p`, and
/// returns the block-diagonal factor `S` with `a_normalized = a * S`.
pub fn normalize_gram_blocks(
    a: &DMatrix<f64>,
    tau: &Partition,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    tau.check_dim(a.ncols())?;
    let g = a.transpose() * a;
    let p = a.ncols();
    let mut scale = DMatrix::zeros(p, p);
    for r in tau.ranges() {
        let n = r.len();
        let block = g.view((r.start, r.start), (n, n)).into_owned();
        let (_, inv_root) = linalg::sym_sqrt_pair(&block)
            .ok_or_else(|| Error::Degenerate("column block of A is rank deficient".into()))?;
        scale
            .view_mut((r.start, r.start), (n, n))
            .copy_from(&inv_root);
    }
    Ok((a * &scale, scale))
}

/// `f(A_hat) = sqrt(sum_i ||OffBdiag_tau(A^+ C_i A^+T)||_F^2)` evaluated after
/// normalizing `A_hat` so that `Bdiag_tau(A^+ A^+T) = I`.
pub fn offblock_residual(set: &MatrixSet, a_hat: &DMatrix<f64>, tau: &Partition) -> Result<f64> {
    if a_hat.nrows() != set.dim() {
        return Err(Error::Dimension(format!(
            "diagonalizer has {} rows, matrices are {}x{}",
            a_hat.nrows(),
            set.dim(),
            set.dim()
        )));
    }
    let normalized = normalize_diagonalizer(a_hat, tau)?;
    let (pinv, _) = linalg::pinv(&normalized);
    let mut total = 0.0;
    for c in set.iter() {
        let w = &pinv * c * pinv.transpose();
        total += linalg::frob_sq(&off_block_diag_part(&w, tau)?);
    }
    Ok(total.sqrt())
}

/// `Bdiag_tau(A^+ C_i A^+T)` for each member of the set.
pub fn projected_blocks(
    set: &MatrixSet,
    a_hat: &DMatrix<f64>,
    tau: &Partition,
) -> Result<MatrixSet> {
    let (pinv, rank) = linalg::pinv(a_hat);
    if rank < a_hat.ncols() {
        return Err(Error::Degenerate(format!(
            "diagonalizer has numerical rank {rank}"
        )));
    }
    let blocks = set
        .iter()
        .map(|c| block_diag_part(&(&pinv * c * pinv.transpose()), tau))
        .collect::<Result<Vec<_>>>()?;
    MatrixSet::new(blocks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(ms: Vec<DMatrix<f64>>) -> MatrixSet {
        MatrixSet::new(ms).unwrap()
    }

    #[test]
    fn matrix_set_rejects_bad_input() {
        assert!(MatrixSet::new(vec![]).is_err());
        assert!(MatrixSet::new(vec![DMatrix::zeros(2, 3)]).is_err());
        assert!(MatrixSet::new(vec![DMatrix::zeros(2, 2), DMatrix::zeros(3, 3)]).is_err());
        assert!(MatrixSet::new(vec![DMatrix::zeros(0, 0)]).is_err());
    }

    #[test]
    fn partition_basics() {
        let p = Partition::parse("3,1,5,2").unwrap();
        assert_eq!(p.total(), 11);
        assert_eq!(p.cardinality(), 4);
        assert_eq!(p.ranges()[2], 4..9);
        assert!(Partition::new(vec![2, 0]).is_err());
        assert!(Partition::parse("2,x").is_err());
        assert_eq!(p.to_string(), "(3,1,5,2)");
    }

    #[test]
    fn stack_identity() {
        let s = stack_underline(&set(vec![DMatrix::identity(2, 2)]));
        assert_eq!(s.shape(), (4, 2));
        assert_eq!(s.rows(0, 2), DMatrix::<f64>::identity(2, 2));
        assert_eq!(s.rows(2, 2), DMatrix::<f64>::identity(2, 2));
    }

    #[test]
    fn stack_nilpotent() {
        let d = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let s = stack_underline(&set(vec![d]));
        let expected = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(s, expected);
    }

    #[test]
    fn block_parts() {
        let x = DMatrix::from_fn(4, 4, |i, j| (i * 4 + j) as f64 + 1.0);
        let single = Partition::single(4).unwrap();
        assert_eq!(block_diag_part(&x, &single).unwrap(), x);
        assert_eq!(
            off_block_diag_part(&x, &single).unwrap(),
            DMatrix::zeros(4, 4)
        );

        let ones = Partition::new(vec![1; 4]).unwrap();
        assert_eq!(
            block_diag_part(&x, &ones).unwrap(),
            DMatrix::from_diagonal(&x.diagonal())
        );

        let x3 = DMatrix::from_element(3, 3, 1.0);
        let off = off_block_diag_part(&x3, &Partition::new(vec![2, 1]).unwrap()).unwrap();
        assert_eq!(off.iter().filter(|&&v| v != 0.0).count(), 4);
        assert!(off.iter().all(|&v| v == 0.0 || v == 1.0));

        assert!(matches!(
            block_diag_part(&x3, &Partition::new(vec![2, 2]).unwrap()),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn equivalence() {
        let a = Partition::new(vec![3, 1, 5, 2]).unwrap();
        let b = Partition::new(vec![1, 5, 2, 3]).unwrap();
        let perm = partitions_equivalent(&a, &b).unwrap();
        for (i, &k) in perm.iter().enumerate() {
            assert_eq!(a.parts()[i], b.parts()[k]);
        }
        assert!(partitions_equivalent(
            &Partition::new(vec![2, 2]).unwrap(),
            &Partition::single(4).unwrap()
        )
        .is_none());
        assert!(partitions_equivalent(
            &Partition::new(vec![2, 3, 3, 4]).unwrap(),
            &Partition::new(vec![3, 4, 2, 3]).unwrap()
        )
        .is_some());
        assert!(partitions_equivalent(
            &Partition::new(vec![2, 3, 3, 4]).unwrap(),
            &Partition::new(vec![2, 2, 4, 4]).unwrap()
        )
        .is_none());
    }

    #[test]
    fn residual_zero_for_diagonal_set() {
        let s = set(vec![
            DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0, 3.0])),
            DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-1.0, 0.5, 4.0])),
        ]);
        let f = offblock_residual(
            &s,
            &DMatrix::identity(3, 3),
            &Partition::new(vec![1, 1, 1]).unwrap(),
        )
        .unwrap();
        assert!(f < 1e-14);
    }

    #[test]
    fn residual_rejects_rank_deficient() {
        let s = set(vec![DMatrix::identity(3, 3)]);
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        assert!(matches!(
            offblock_residual(&s, &a, &Partition::new(vec![1, 1]).unwrap()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn normalization_property() {
        let a = DMatrix::from_fn(5, 3, |i, j| {
            ((i * 7 + j * 3) % 5) as f64 - 1.5 + (i == j) as u8 as f64
        });
        let tau = Partition::new(vec![2, 1]).unwrap();
        let n = normalize_diagonalizer(&a, &tau).unwrap();
        let (pinv, _) = linalg::pinv(&n);
        let s = &pinv * pinv.transpose();
        let b = block_diag_part(&s, &tau).unwrap();
        assert!((b - DMatrix::<f64>::identity(3, 3)).amax() < 1e-12);

        let (g, _) = normalize_gram_blocks(&a, &tau).unwrap();
        let bd = block_diag_part(&(g.transpose() * &g), &tau).unwrap();
        assert!((bd - DMatrix::<f64>::identity(3, 3)).amax() < 1e-12);
    }
}
