//! Small dense helpers shared by the decomposition modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};

/// Thin SVD with singular values sorted nonincreasing.
///
/// For an `r x c` input with `r >= c`, `u` is `r x c`, `v` is `c x c`.
pub(crate) struct SortedSvd {
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    pub v: DMatrix<f64>,
}

pub(crate) fn svd_sorted(a: &DMatrix<f64>) -> SortedSvd {
    let k = a.nrows().min(a.ncols());
    if k == 0 {
        return SortedSvd {
            u: DMatrix::zeros(a.nrows(), 0),
            s: Vec::new(),
            v: DMatrix::zeros(a.ncols(), 0),
        };
    }
    match to_faer(a).thin_svd() {
        Ok(svd) => {
            let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
            SortedSvd {
                u: DMatrix::from_fn(a.nrows(), k, |r, c| u[(r, c)]),
                s: (0..k).map(|i| s[i]).collect(),
                v: DMatrix::from_fn(a.ncols(), k, |r, c| v[(r, c)]),
            }
        }
        Err(_) => nalgebra_svd_sorted(a),
    }
}

// Fallback when the bidiagonal iteration fails to converge.
fn nalgebra_svd_sorted(a: &DMatrix<f64>) -> SortedSvd {
    let svd = SVD::new(a.clone(), true, true);
    let u = svd.u.expect("u requested");
    let v = svd.v_t.expect("v requested").transpose();
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    SortedSvd {
        u: DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]),
        s: order.iter().map(|&i| s[i]).collect(),
        v: DMatrix::from_fn(v.nrows(), order.len(), |r, c| v[(r, order[c])]),
    }
}

fn to_faer(a: &DMatrix<f64>) -> faer::Mat<f64> {
    faer::Mat::from_fn(a.nrows(), a.ncols(), |r, c| a[(r, c)])
}

/// Singular values sorted nonincreasing.
pub(crate) fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    if a.is_empty() {
        return Vec::new();
    }
    match to_faer(a).singular_values() {
        Ok(s) => s,
        Err(_) => nalgebra_svd_sorted(a).s,
    }
}

pub(crate) fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    singular_values(a).first().copied().unwrap_or(0.0)
}

/// 2-norm condition number of a square or tall matrix.
pub(crate) fn condition_number(a: &DMatrix<f64>) -> f64 {
    let s = singular_values(a);
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    }
}

/// Moore-Penrose inverse with cutoff `max(r, c) * eps * sigma_max`.
///
/// Returns the pseudoinverse and the numerical rank.
pub(crate) fn pinv(a: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let (r, c) = a.shape();
    let at;
    let (work, transposed) = if r >= c {
        (a, false)
    } else {
        at = a.transpose();
        (&at, true)
    };
    let svd = svd_sorted(work);
    let smax = svd.s.first().copied().unwrap_or(0.0);
    let cutoff = r.max(c) as f64 * f64::EPSILON * smax;
    let rank = svd.s.iter().filter(|&&x| x > cutoff).count();
    let mut p = DMatrix::zeros(work.ncols(), work.nrows());
    for k in 0..rank {
        let vk = svd.v.column(k);
        let uk = svd.u.column(k);
        p += (vk * uk.transpose()) / svd.s[k];
    }
    if transposed {
        (p.transpose(), rank)
    } else {
        (p, rank)
    }
}

/// Symmetric square root and inverse square root of a symmetric positive
/// definite matrix. `None` when an eigenvalue is not positive.
pub(crate) fn sym_sqrt_pair(a: &DMatrix<f64>) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return None;
    }
    let q = &eig.eigenvectors;
    let sq = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|l| l.sqrt()),
    );
    let isq = sq.map(|x| 1.0 / x);
    let root = q * DMatrix::from_diagonal(&sq) * q.transpose();
    let inv_root = q * DMatrix::from_diagonal(&isq) * q.transpose();
    Some((root, inv_root))
}

/// Orthonormal basis of the orthogonal complement of `range(x)` in `R^n`,
/// where `x` is `n x k` with orthonormal columns.
pub(crate) fn orthogonal_complement(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let k = x.ncols();
    if k >= n {
        return DMatrix::zeros(n, 0);
    }
    full_q(x).columns(k, n - k).into_owned()
}

/// Orthogonal `Q` (`n x n`) from a Householder QR of the full-column-rank
/// `x`; the leading `k` columns span `range(x)`.
pub(crate) fn full_q(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mut a = x.clone();
    let mut q = DMatrix::<f64>::identity(n, n);
    for j in 0..x.ncols().min(n) {
        let col = a.view((j, j), (n - j, 1)).into_owned();
        let alpha = col[0];
        let norm = col.norm();
        if norm == 0.0 {
            continue;
        }
        let mut v = col;
        v[0] += if alpha >= 0.0 { norm } else { -norm };
        let vn2 = v.norm_squared();
        if vn2 == 0.0 {
            continue;
        }
        let w = v.transpose() * a.view((j, 0), (n - j, a.ncols()));
        let upd = &v * w * (2.0 / vn2);
        let mut block = a.view_mut((j, 0), (n - j, x.ncols()));
        block -= upd;
        let w = q.view((0, j), (n, n - j)) * &v;
        let upd = w * v.transpose() * (2.0 / vn2);
        let mut block = q.view_mut((0, j), (n, n - j));
        block -= upd;
    }
    q
}

pub(crate) fn frob_sq(a: &DMatrix<f64>) -> f64 {
    a.iter().map(|x| x * x).sum()
}

/// Orthonormality defect `max |X^T X - I|`.
pub(crate) fn gram_defect(x: &DMatrix<f64>) -> f64 {
    let g = x.transpose() * x;
    let k = g.nrows();
    (0..k)
        .flat_map(|i| (0..k).map(move |j| (i, j)))
        .map(|(i, j)| (g[(i, j)] - if i == j { 1.0 } else { 0.0 }).abs())
        .fold(0.0, f64::max)
}
