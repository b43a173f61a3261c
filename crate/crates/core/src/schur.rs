//! Real Schur form with block reordering, and a dense Sylvester solver.
//!
//! `A = Q T Q^T` with `T` quasi upper triangular: 1x1 blocks carry real
//! eigenvalues, 2x2 blocks carry complex conjugate pairs. Adjacent blocks are
//! exchanged with the direct swapping method (solve a small Sylvester
//! equation, then an orthogonal change of basis built from `[X; I]`).

use nalgebra::linalg::Hessenberg;
use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone)]
pub struct RealSchur {
    pub q: DMatrix<f64>,
    pub t: DMatrix<f64>,
    /// Sizes (1 or 2) of the diagonal blocks of `t`, top to bottom.
    sizes: Vec<usize>,
}

impl RealSchur {
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n != a.ncols() || n == 0 {
            return Err(Error::Dimension(format!(
                "Schur form needs a nonempty square matrix, got {:?}",
                a.shape()
            )));
        }
        let (mut q, mut t) = Hessenberg::new(a.clone()).unpack();
        francis_qr(&mut t, &mut q)?;
        let mut s = Self {
            q,
            t,
            sizes: Vec::new(),
        };
        s.standardize()?;
        Ok(s)
    }

    fn standardize(&mut self) -> Result<()> {
        let n = self.t.nrows();
        for j in 0..n {
            for i in (j + 2)..n {
                self.t[(i, j)] = 0.0;
            }
        }
        for i in 0..n.saturating_sub(1) {
            let scale = self.t[(i, i)].abs() + self.t[(i + 1, i + 1)].abs();
            if self.t[(i + 1, i)].abs() <= f64::EPSILON * scale {
                self.t[(i + 1, i)] = 0.0;
            }
        }
        let mut sizes = Vec::new();
        let mut i = 0;
        while i < n {
            if i + 1 < n && self.t[(i + 1, i)] != 0.0 {
                if i + 2 < n && self.t[(i + 2, i + 1)] != 0.0 {
                    return Err(Error::Degenerate(
                        "Schur factor is not quasi-triangular".into(),
                    ));
                }
                if self.split_real_pair(i) {
                    sizes.push(1);
                    i += 1;
                } else {
                    sizes.push(2);
                    i += 2;
                }
            } else {
                sizes.push(1);
                i += 1;
            }
        }
        self.sizes = sizes;
        Ok(())
    }

    /// Triangularizes the 2x2 block at `i` when its eigenvalues are real.
    fn split_real_pair(&mut self, i: usize) -> bool {
        let (a, b, c, d) = (
            self.t[(i, i)],
            self.t[(i, i + 1)],
            self.t[(i + 1, i)],
            self.t[(i + 1, i + 1)],
        );
        let half = 0.5 * (a - d);
        let disc = half * half + b * c;
        if disc < 0.0 {
            return false;
        }
        let mid = 0.5 * (a + d);
        let root = disc.sqrt();
        let lambda = if half >= 0.0 { mid + root } else { mid - root };
        let v1 = [b, lambda - a];
        let v2 = [lambda - d, c];
        let v = if v1[0].hypot(v1[1]) >= v2[0].hypot(v2[1]) {
            v1
        } else {
            v2
        };
        let norm = v[0].hypot(v[1]);
        if norm == 0.0 {
            return false;
        }
        let (cs, sn) = (v[0] / norm, v[1] / norm);
        let g = DMatrix::from_row_slice(2, 2, &[cs, -sn, sn, cs]);
        self.apply_local(i, &g);
        self.t[(i + 1, i)] = 0.0;
        true
    }

    /// `T <- G^T T G`, `Q <- Q G` for an orthogonal `G` acting on rows/cols `i..i+k`.
    fn apply_local(&mut self, i: usize, g: &DMatrix<f64>) {
        let k = g.nrows();
        let n = self.t.nrows();
        let rows = g.transpose() * self.t.view((i, 0), (k, n));
        self.t.view_mut((i, 0), (k, n)).copy_from(&rows);
        let cols = self.t.view((0, i), (n, k)) * g;
        self.t.view_mut((0, i), (n, k)).copy_from(&cols);
        let qcols = self.q.view((0, i), (n, k)) * g;
        self.q.view_mut((0, i), (n, k)).copy_from(&qcols);
    }

    /// `(start, size)` of each diagonal block.
    pub fn blocks(&self) -> Vec<(usize, usize)> {
        let mut start = 0;
        self.sizes
            .iter()
            .map(|&s| {
                let b = (start, s);
                start += s;
                b
            })
            .collect()
    }

    fn block_eigenvalues(&self, start: usize, size: usize) -> Vec<Complex<f64>> {
        if size == 1 {
            return vec![Complex::new(self.t[(start, start)], 0.0)];
        }
        let (a, b, c, d) = (
            self.t[(start, start)],
            self.t[(start, start + 1)],
            self.t[(start + 1, start)],
            self.t[(start + 1, start + 1)],
        );
        let mid = 0.5 * (a + d);
        let half = 0.5 * (a - d);
        let disc = half * half + b * c;
        let im = (-disc).max(0.0).sqrt();
        vec![Complex::new(mid, im), Complex::new(mid, -im)]
    }

    /// Eigenvalues in block order; conjugate pairs are adjacent.
    pub fn eigenvalues(&self) -> Vec<Complex<f64>> {
        self.blocks()
            .into_iter()
            .flat_map(|(s, k)| self.block_eigenvalues(s, k))
            .collect()
    }

    /// Moves every block whose eigenvalue satisfies `select` to the leading
    /// part of `T`, keeping relative order. Returns the size of the leading
    /// part.
    pub fn reorder<F>(&mut self, select: F) -> Result<usize>
    where
        F: Fn(Complex<f64>) -> bool,
    {
        let mut head = 0; // number of leading blocks already selected
        let mut k = 0;
        while k < self.sizes.len() {
            let start: usize = self.sizes[..k].iter().sum();
            let ev = self.block_eigenvalues(start, self.sizes[k])[0];
            if select(ev) {
                let mut pos = k;
                while pos > head {
                    self.swap_adjacent(pos - 1)?;
                    pos -= 1;
                }
                head += 1;
            }
            k += 1;
        }
        Ok(self.sizes[..head].iter().sum())
    }

    /// Exchanges blocks `k` and `k + 1`.
    fn swap_adjacent(&mut self, k: usize) -> Result<()> {
        let j: usize = self.sizes[..k].iter().sum();
        let (n1, n2) = (self.sizes[k], self.sizes[k + 1]);
        let n = n1 + n2;
        let a11 = self.t.view((j, j), (n1, n1)).into_owned();
        let a12 = self.t.view((j, j + n1), (n1, n2)).into_owned();
        let a22 = self.t.view((j + n1, j + n1), (n2, n2)).into_owned();
        // [X; I] spans the invariant subspace belonging to a22 when A11 X - X A22 = -A12.
        let (x, _) = solve_sylvester(&a11, &a22, &(-a12))?;
        let mut v = DMatrix::zeros(n, n2);
        v.view_mut((0, 0), (n1, n2)).copy_from(&x);
        v.view_mut((n1, 0), (n2, n2))
            .copy_from(&DMatrix::identity(n2, n2));
        let g = linalg::full_q(&v);
        self.apply_local(j, &g);

        let leak = self.t.view((j + n2, j), (n1, n2)).amax();
        let scale = self.t.view((j, j), (n, n)).amax().max(f64::MIN_POSITIVE);
        if leak > 1e-8 * scale {
            return Err(Error::Degenerate(format!(
                "Schur block swap lost accuracy ({leak:e})"
            )));
        }
        self.t.view_mut((j + n2, j), (n1, n2)).fill(0.0);
        self.sizes.swap(k, k + 1);
        Ok(())
    }
}

/// Householder vector `v` (with `v[0] = 1`) and `tau` such that
/// `(I - tau v v^T) x = beta e_1`.
fn householder(x: &[f64]) -> (f64, f64, [f64; 3]) {
    let alpha = x[0];
    let xnorm = x[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut v = [1.0, 0.0, 0.0];
    if xnorm == 0.0 {
        return (alpha, 0.0, v);
    }
    let beta = -alpha.signum() * alpha.hypot(xnorm);
    for (vi, xi) in v[1..].iter_mut().zip(&x[1..]) {
        *vi = xi / (alpha - beta);
    }
    (beta, (beta - alpha) / beta, v)
}

/// Reduces the upper Hessenberg `h` to quasi upper triangular form with the
/// implicit double-shift QR iteration, accumulating the transformations into
/// `z`.
///
/// Follows the small-bulge scheme with deflation on negligible subdiagonals,
/// exceptional shifts at iterations 10 and 20, and a repeated real shift when
/// both candidate shifts are real. The repeated shift matters for matrices
/// whose minimal polynomial has degree two, where the exact pair of shifts
/// annihilates the first column and stalls the plain iteration.
fn francis_qr(h: &mut DMatrix<f64>, z: &mut DMatrix<f64>) -> Result<()> {
    let n = h.nrows();
    if n <= 1 {
        return Ok(());
    }
    for j in 0..n {
        for i in (j + 2)..n {
            h[(i, j)] = 0.0;
        }
    }
    let ulp = f64::EPSILON;
    let smlnum = f64::MIN_POSITIVE * (n as f64 / ulp);
    let itmax = 30 * n.max(10);
    let mut i = n - 1;
    loop {
        let mut l = 0;
        let mut converged = false;
        for its in 0..=itmax {
            let mut k = i;
            while k > l {
                let sub = h[(k, k - 1)].abs();
                if sub <= smlnum {
                    break;
                }
                let mut tst = h[(k - 1, k - 1)].abs() + h[(k, k)].abs();
                if tst == 0.0 {
                    if k >= l + 2 {
                        tst += h[(k - 1, k - 2)].abs();
                    }
                    if k + 1 < n {
                        tst += h[(k + 1, k)].abs();
                    }
                }
                if sub <= ulp * tst {
                    let ab = sub.max(h[(k - 1, k)].abs());
                    let ba = sub.min(h[(k - 1, k)].abs());
                    let diff = (h[(k - 1, k - 1)] - h[(k, k)]).abs();
                    let aa = h[(k, k)].abs().max(diff);
                    let bb = h[(k, k)].abs().min(diff);
                    let s = aa + ab;
                    if ba * (ab / s) <= smlnum.max(ulp * (bb * (aa / s))) {
                        break;
                    }
                }
                k -= 1;
            }
            l = k;
            if l > 0 {
                h[(l, l - 1)] = 0.0;
            }
            if l + 1 >= i {
                converged = true;
                break;
            }

            let (mut h11, mut h12, mut h21, mut h22);
            if its == 10 {
                let s = h[(l + 1, l)].abs() + h[(l + 2, l + 1)].abs();
                h11 = 0.75 * s + h[(l, l)];
                h12 = -0.4375 * s;
                h21 = s;
                h22 = h11;
            } else if its == 20 {
                let s = h[(i, i - 1)].abs() + h[(i - 1, i - 2)].abs();
                h11 = 0.75 * s + h[(i, i)];
                h12 = -0.4375 * s;
                h21 = s;
                h22 = h11;
            } else {
                h11 = h[(i - 1, i - 1)];
                h21 = h[(i, i - 1)];
                h12 = h[(i - 1, i)];
                h22 = h[(i, i)];
            }
            let s = h11.abs() + h12.abs() + h21.abs() + h22.abs();
            let (rt1r, rt1i, rt2r, rt2i);
            if s == 0.0 {
                (rt1r, rt1i, rt2r, rt2i) = (0.0, 0.0, 0.0, 0.0);
            } else {
                h11 /= s;
                h21 /= s;
                h12 /= s;
                h22 /= s;
                let tr = 0.5 * (h11 + h22);
                let det = (h11 - tr) * (h22 - tr) - h12 * h21;
                let rtdisc = det.abs().sqrt();
                if det >= 0.0 {
                    (rt1r, rt1i, rt2r, rt2i) = (tr * s, rtdisc * s, tr * s, -rtdisc * s);
                } else {
                    let a = tr + rtdisc;
                    let b = tr - rtdisc;
                    let r = if (a - h22).abs() <= (b - h22).abs() {
                        a * s
                    } else {
                        b * s
                    };
                    (rt1r, rt1i, rt2r, rt2i) = (r, 0.0, r, 0.0);
                }
            }

            let mut m = i - 2;
            let mut v;
            loop {
                let h21s = h[(m + 1, m)];
                let s = (h[(m, m)] - rt2r).abs() + rt2i.abs() + h21s.abs();
                let h21s = h21s / s;
                v = [
                    h21s * h[(m, m + 1)] + (h[(m, m)] - rt1r) * ((h[(m, m)] - rt2r) / s)
                        - rt1i * (rt2i / s),
                    h21s * (h[(m, m)] + h[(m + 1, m + 1)] - rt1r - rt2r),
                    h21s * h[(m + 2, m + 1)],
                ];
                let s = v[0].abs() + v[1].abs() + v[2].abs();
                for x in &mut v {
                    *x /= s;
                }
                if m == l {
                    break;
                }
                let h00 = h[(m, m - 1)].abs() * (v[1].abs() + v[2].abs());
                let h11 = v[0].abs()
                    * (h[(m - 1, m - 1)].abs() + h[(m, m)].abs() + h[(m + 1, m + 1)].abs());
                if h00 <= ulp * h11 {
                    break;
                }
                m -= 1;
            }

            for k in m..i {
                let nr = 3.min(i - k + 1);
                if k > m {
                    for (r, x) in v.iter_mut().enumerate().take(nr) {
                        *x = h[(k + r, k - 1)];
                    }
                }
                let (beta, t1, hv) = householder(&v[..nr]);
                if k > m {
                    h[(k, k - 1)] = beta;
                    h[(k + 1, k - 1)] = 0.0;
                    if k + 2 <= i {
                        h[(k + 2, k - 1)] = 0.0;
                    }
                } else if m > l {
                    h[(k, k - 1)] *= 1.0 - t1;
                }
                let t2 = t1 * hv[1];
                if nr == 3 {
                    let t3 = t1 * hv[2];
                    for j in k..n {
                        let sum = h[(k, j)] + hv[1] * h[(k + 1, j)] + hv[2] * h[(k + 2, j)];
                        h[(k, j)] -= sum * t1;
                        h[(k + 1, j)] -= sum * t2;
                        h[(k + 2, j)] -= sum * t3;
                    }
                    for j in 0..=(k + 3).min(i) {
                        let sum = h[(j, k)] + hv[1] * h[(j, k + 1)] + hv[2] * h[(j, k + 2)];
                        h[(j, k)] -= sum * t1;
                        h[(j, k + 1)] -= sum * t2;
                        h[(j, k + 2)] -= sum * t3;
                    }
                    for j in 0..n {
                        let sum = z[(j, k)] + hv[1] * z[(j, k + 1)] + hv[2] * z[(j, k + 2)];
                        z[(j, k)] -= sum * t1;
                        z[(j, k + 1)] -= sum * t2;
                        z[(j, k + 2)] -= sum * t3;
                    }
                } else {
                    for j in k..n {
                        let sum = h[(k, j)] + hv[1] * h[(k + 1, j)];
                        h[(k, j)] -= sum * t1;
                        h[(k + 1, j)] -= sum * t2;
                    }
                    for j in 0..=i {
                        let sum = h[(j, k)] + hv[1] * h[(j, k + 1)];
                        h[(j, k)] -= sum * t1;
                        h[(j, k + 1)] -= sum * t2;
                    }
                    for j in 0..n {
                        let sum = z[(j, k)] + hv[1] * z[(j, k + 1)];
                        z[(j, k)] -= sum * t1;
                        z[(j, k + 1)] -= sum * t2;
                    }
                }
            }
        }
        if !converged {
            return Err(Error::Degenerate(
                "real Schur iteration did not converge".into(),
            ));
        }
        if l < 2 {
            return Ok(());
        }
        i = l - 1;
    }
}

/// Solves `A X - X B = C` through the Kronecker form
/// `(I (x) A - B^T (x) I) vec(X) = vec(C)` and returns `X` together with the
/// separation `sep(A, B) = sigma_min(I (x) A - B^T (x) I)`.
pub fn solve_sylvester(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, f64)> {
    let (n1, n2) = (a.nrows(), b.nrows());
    if c.shape() != (n1, n2) {
        return Err(Error::Dimension(format!(
            "Sylvester right-hand side is {:?}, expected ({n1}, {n2})",
            c.shape()
        )));
    }
    let k = DMatrix::<f64>::identity(n2, n2).kronecker(a)
        - b.transpose().kronecker(&DMatrix::identity(n1, n1));
    let sep = linalg::singular_values(&k).last().copied().unwrap_or(0.0);
    let rhs = DVector::from_column_slice(c.as_slice());
    let sol = k.lu().solve(&rhs).ok_or(Error::SplitUnstable { sep })?;
    Ok((DMatrix::from_column_slice(n1, n2, sol.as_slice()), sep))
}
