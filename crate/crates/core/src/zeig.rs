//! Reduction of `min tr(X^4)` over a traceless slice of the null space to a
//! quartic form on the unit sphere, solved with the shifted symmetric
//! higher-order power method.
//!
//! With an orthonormal basis `X_1..X_s`, write `X = sum_j alpha_j X_j`. Then
//! `tr(X^4) = M alpha^4` with `M_ijkl = tr(X_i X_j X_k X_l)` and
//! `tr(X^2) = alpha^T K alpha` with `K_ij = tr(X_i X_j)`. Substituting
//! `beta = G alpha` (`K = G^T G`) turns the constraint into `|beta| = 1` and
//! the objective into `N beta^4` with `N = M x_1 G^-T x_2 G^-T x_3 G^-T x_4 G^-T`.
//! Stationary points satisfy `N beta^3 = lambda beta`.

use nalgebra::{Complex, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::commutant::{NullBasis, OperatorSpectrum};
use crate::error::{Error, Result};
use crate::schur::RealSchur;
use crate::types::MatrixSet;

/// Intersects the span of `basis` with the traceless hyperplane.
///
/// The trace functional restricted to the span has coefficient vector
/// `t_j = tr(X_j)`; the returned basis spans the orthogonal complement of `t`
/// in coefficient space, which keeps it orthonormal.
pub fn deflate_identity(basis: &NullBasis) -> Result<NullBasis> {
    if basis.is_empty() {
        return Err(Error::Infeasible("null space basis is empty".into()));
    }
    let s = basis.len();
    let q = basis.order();
    let t = DVector::from_iterator(s, basis.basis.iter().map(|x| x.trace()));
    let tn = t.norm();
    let mut out = basis.clone();
    if tn <= 1e-14 * (q as f64).sqrt() {
        return Ok(out);
    }
    // Householder reflector H with H t = -sign(t_0) |t| e_1; columns 1.. of H span t^perp.
    let mut v = t.clone();
    v[0] += if t[0] >= 0.0 { tn } else { -tn };
    let vn2 = v.norm_squared();
    let h = DMatrix::<f64>::identity(s, s) - (&v * v.transpose()) * (2.0 / vn2);
    out.basis = (1..s)
        .map(|c| {
            let mut x = DMatrix::zeros(q, q);
            for (j, xj) in basis.basis.iter().enumerate() {
                x += xj * h[(j, c)];
            }
            x
        })
        .collect();
    if out.basis.is_empty() {
        return Err(Error::Infeasible(
            "only scalar matrices remain after removing the trace".into(),
        ));
    }
    Ok(out)
}

/// Whitened quartic form `N` together with the data needed to map a sphere
/// point back to a matrix.
#[derive(Debug, Clone)]
pub struct QuarticForm {
    dim: usize,
    /// Fully symmetric `s^4` tensor, index `((i s + j) s + k) s + l`.
    order4: Vec<f64>,
    /// `K_ij = tr(X_i X_j)`.
    pub gram: DMatrix<f64>,
    /// Upper-triangular `G` with `K = G^T G`.
    pub chol: DMatrix<f64>,
    pub basis: NullBasis,
}

/// Smallest eigenvalue of `K` relative to `trace(K)/s` below which the Gram
/// matrix is treated as not positive definite.
pub const GRAM_PD_TOL: f64 = 1e-10;

/// Builds `M`, symmetrizes it, factors `K` and whitens.
pub fn build_quartic(basis: &NullBasis) -> Result<QuarticForm> {
    let s = basis.len();
    if s == 0 {
        return Err(Error::Infeasible("empty basis".into()));
    }
    let xs = &basis.basis;
    let gram = DMatrix::from_fn(s, s, |i, j| (&xs[i] * &xs[j]).trace());
    let gram = (&gram + gram.transpose()) * 0.5;
    let min_eig = gram.symmetric_eigenvalues().min();
    if !(min_eig > GRAM_PD_TOL * gram.trace() / s as f64) {
        return Err(Error::Infeasible(format!(
            "Gram matrix tr(X_i X_j) is not positive definite (smallest eigenvalue {min_eig:e})"
        )));
    }
    let chol = gram
        .clone()
        .cholesky()
        .ok_or_else(|| {
            Error::Infeasible("Cholesky factorization of the Gram matrix failed".into())
        })?
        .l()
        .transpose();

    let raw = fourth_order_traces(xs);
    let sym = symmetrize(&raw, s);
    let ginv = chol
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Infeasible("singular Cholesky factor".into()))?;
    let order4 = whiten(&sym, s, &ginv);
    Ok(QuarticForm {
        dim: s,
        order4,
        gram,
        chol,
        basis: basis.clone(),
    })
}

/// `M_ijkl = tr(X_i X_j X_k X_l)` computed as `<vec(P_ij^T), vec(P_kl)>` with `P_ij = X_i X_j`.
fn fourth_order_traces(xs: &[DMatrix<f64>]) -> Vec<f64> {
    let s = xs.len();
    let q = xs[0].nrows();
    let n = q * q;
    let mut left = DMatrix::zeros(s * s, n);
    let mut right = DMatrix::zeros(s * s, n);
    for i in 0..s {
        for j in 0..s {
            let p = &xs[i] * &xs[j];
            let pt = p.transpose();
            left.row_mut(i * s + j).copy_from_slice(pt.as_slice());
            right.row_mut(i * s + j).copy_from_slice(p.as_slice());
        }
    }
    let m = &left * right.transpose();
    let mut out = vec![0.0; s * s * s * s];
    for ij in 0..s * s {
        for kl in 0..s * s {
            out[ij * s * s + kl] = m[(ij, kl)];
        }
    }
    out
}

const PERMUTATIONS_4: [[usize; 4]; 24] = [
    [0, 1, 2, 3],
    [0, 1, 3, 2],
    [0, 2, 1, 3],
    [0, 2, 3, 1],
    [0, 3, 1, 2],
    [0, 3, 2, 1],
    [1, 0, 2, 3],
    [1, 0, 3, 2],
    [1, 2, 0, 3],
    [1, 2, 3, 0],
    [1, 3, 0, 2],
    [1, 3, 2, 0],
    [2, 0, 1, 3],
    [2, 0, 3, 1],
    [2, 1, 0, 3],
    [2, 1, 3, 0],
    [2, 3, 0, 1],
    [2, 3, 1, 0],
    [3, 0, 1, 2],
    [3, 0, 2, 1],
    [3, 1, 0, 2],
    [3, 1, 2, 0],
    [3, 2, 0, 1],
    [3, 2, 1, 0],
];

fn idx4(s: usize, i: [usize; 4]) -> usize {
    ((i[0] * s + i[1]) * s + i[2]) * s + i[3]
}

fn symmetrize(t: &[f64], s: usize) -> Vec<f64> {
    let mut out = vec![0.0; t.len()];
    for a in 0..s {
        for b in 0..s {
            for c in 0..s {
                for d in 0..s {
                    let ix = [a, b, c, d];
                    let sum: f64 = PERMUTATIONS_4
                        .iter()
                        .map(|p| t[idx4(s, [ix[p[0]], ix[p[1]], ix[p[2]], ix[p[3]]])])
                        .sum();
                    out[idx4(s, ix)] = sum / 24.0;
                }
            }
        }
    }
    out
}

/// Applies `W^T` in every mode: `N_abcd = sum M_ijkl W_ia W_jb W_kc W_ld`.
fn whiten(t: &[f64], s: usize, w: &DMatrix<f64>) -> Vec<f64> {
    let mut cur = t.to_vec();
    for mode in 0..4 {
        let mut next = vec![0.0; cur.len()];
        for a in 0..s {
            for b in 0..s {
                for c in 0..s {
                    for d in 0..s {
                        let ix = [a, b, c, d];
                        let mut acc = 0.0;
                        for r in 0..s {
                            let mut src = ix;
                            src[mode] = r;
                            acc += w[(r, ix[mode])] * cur[idx4(s, src)];
                        }
                        next[idx4(s, ix)] = acc;
                    }
                }
            }
        }
        cur = next;
    }
    cur
}

impl QuarticForm {
    /// Number of variables `s`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.order4[idx4(self.dim, [i, j, k, l])]
    }

    /// `N beta^2`, the `s x s` matrix `sum_kl N_ijkl beta_k beta_l`.
    pub fn contract2(&self, beta: &DVector<f64>) -> DMatrix<f64> {
        let s = self.dim;
        let mut out = DMatrix::zeros(s, s);
        for i in 0..s {
            for j in 0..s {
                let base = (i * s + j) * s * s;
                let mut acc = 0.0;
                for k in 0..s {
                    for l in 0..s {
                        acc += self.order4[base + k * s + l] * beta[k] * beta[l];
                    }
                }
                out[(i, j)] = acc;
            }
        }
        out
    }

    /// `N beta^3`.
    pub fn contract3(&self, beta: &DVector<f64>) -> DVector<f64> {
        self.contract2(beta) * beta
    }

    /// `N beta^4`.
    pub fn eval(&self, beta: &DVector<f64>) -> f64 {
        beta.dot(&self.contract3(beta))
    }

    /// Sum of absolute entries of `N`.
    pub fn abs_sum(&self) -> f64 {
        self.order4.iter().map(|x| x.abs()).sum()
    }

    /// Coefficients `alpha = G^-1 beta` in the original basis.
    pub fn coefficients(&self, beta: &DVector<f64>) -> DVector<f64> {
        self.chol
            .solve_upper_triangular(beta)
            .expect("Cholesky factor is nonsingular")
    }

    /// `X = sum_j alpha_j X_j`.
    pub fn matrix(&self, beta: &DVector<f64>) -> DMatrix<f64> {
        let alpha = self.coefficients(beta);
        let q = self.basis.order();
        let mut x = DMatrix::zeros(q, q);
        for (a, xj) in alpha.iter().zip(&self.basis.basis) {
            x += xj * *a;
        }
        x
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ZeigOptions {
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for ZeigOptions {
    fn default() -> Self {
        Self {
            restarts: 16,
            max_iter: 5000,
            tol: 1e-10,
            seed: 0,
        }
    }
}

/// A unit vector `beta` with `N beta^3 = lambda beta`.
#[derive(Debug, Clone)]
pub struct ZEigenpair {
    pub value: f64,
    pub vector: DVector<f64>,
    pub residual: f64,
    pub iterations: usize,
    /// Index of the restart that produced the pair.
    pub restart: usize,
}

fn kkt_residual(form: &QuarticForm, beta: &DVector<f64>) -> (f64, f64) {
    let g = form.contract3(beta);
    let lambda = beta.dot(&g);
    ((g - beta * lambda).norm(), lambda)
}

/// Newton steps on `F(beta, lambda) = [N beta^3 - lambda beta; (1 - |beta|^2)/2]`.
fn newton_polish(
    form: &QuarticForm,
    start: &DVector<f64>,
    tol: f64,
) -> Option<(DVector<f64>, f64, f64)> {
    let s = form.dim();
    let mut beta = start.clone();
    let (_, mut lambda) = kkt_residual(form, &beta);
    for _ in 0..20 {
        let n2 = form.contract2(&beta);
        let f_top = &n2 * &beta - &beta * lambda;
        let f_bot = 0.5 * (1.0 - beta.norm_squared());
        let mut jac = DMatrix::zeros(s + 1, s + 1);
        jac.view_mut((0, 0), (s, s))
            .copy_from(&(n2 * 3.0 - DMatrix::identity(s, s) * lambda));
        for i in 0..s {
            jac[(i, s)] = -beta[i];
            jac[(s, i)] = -beta[i];
        }
        let mut rhs = DVector::zeros(s + 1);
        rhs.rows_mut(0, s).copy_from(&(-f_top));
        rhs[s] = -f_bot;
        let step = jac.lu().solve(&rhs)?;
        beta += step.rows(0, s);
        beta.normalize_mut();
        let (res, lam) = kkt_residual(form, &beta);
        lambda = lam;
        if res <= tol {
            return Some((beta, lambda, res));
        }
    }
    None
}

/// Smallest Z-eigenvalue found by the shifted power method over seeded
/// restarts.
///
/// Each restart iterates `beta <- normalize(alpha beta - N beta^3)` with the
/// shift `alpha = 1 + sum |N_ijkl|`, which makes the objective decrease
/// monotonically. Once the KKT residual is small a Newton polish is tried;
/// it is accepted only if it converges without raising the objective.
pub fn min_z_eigen(form: &QuarticForm, opts: &ZeigOptions) -> Result<ZEigenpair> {
    if opts.restarts == 0 {
        return Err(Error::InvalidInput(
            "at least one restart is required".into(),
        ));
    }
    let s = form.dim();
    let shift = 1.0 + form.abs_sum();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<ZEigenpair> = None;
    let mut best_unconverged: Option<(f64, DVector<f64>, f64)> = None;

    for restart in 0..opts.restarts {
        let mut beta = DVector::from_fn(s, |_, _| StandardNormal.sample(&mut rng));
        if beta.norm() == 0.0 {
            beta[0] = 1.0;
        }
        beta.normalize_mut();
        let mut found = None;
        let mut iterations = 0;
        while iterations < opts.max_iter {
            let (res, lambda) = kkt_residual(form, &beta);
            if res <= opts.tol {
                found = Some((beta.clone(), lambda, res));
                break;
            }
            if res < 1e-5 {
                if let Some((b, l, r)) = newton_polish(form, &beta, opts.tol) {
                    if l <= lambda + 1e-12 * (1.0 + lambda.abs()) {
                        found = Some((b, l, r));
                        break;
                    }
                }
            }
            let g = form.contract3(&beta);
            beta = &beta * shift - g;
            beta.normalize_mut();
            iterations += 1;
        }
        match found {
            Some((vector, value, residual)) => {
                let better = best.as_ref().is_none_or(|b| value < b.value);
                if better {
                    best = Some(ZEigenpair {
                        value,
                        vector,
                        residual,
                        iterations,
                        restart,
                    });
                }
            }
            None => {
                let (res, lambda) = kkt_residual(form, &beta);
                if best_unconverged.as_ref().is_none_or(|b| lambda < b.0) {
                    best_unconverged = Some((lambda, beta, res));
                }
            }
        }
    }
    best.ok_or_else(|| {
        let (value, point, residual) = best_unconverged.expect("at least one restart ran");
        Error::Convergence {
            iterations: opts.max_iter,
            residual,
            best_value: value,
            best_point: point.iter().copied().collect(),
        }
    })
}

/// Solution of `min tr(X^4)` s.t. `X in N_delta`, `tr(X) = 0`, `tr(X^2) = q`.
///
/// When `feasible` is false, `x_star` is zero and `objective` is NaN.
#[derive(Debug, Clone)]
pub struct OptSolution {
    pub x_star: DMatrix<f64>,
    /// `tr(X*^4)`.
    pub objective: f64,
    pub eigenvalues: Vec<Complex<f64>>,
    pub feasible: bool,
    /// Dimension of `N_delta` before removing the trace direction.
    pub null_dim: usize,
    /// Smallest eigenvalue of the Gram matrix `K`, when it was formed.
    pub gram_min_eig: Option<f64>,
    /// `false` when the iterate was taken from an unconverged power run.
    pub converged: bool,
    pub kkt_residual: f64,
    pub infeasibility: Option<String>,
}

impl OptSolution {
    fn infeasible(q: usize, null_dim: usize, gram_min_eig: Option<f64>, reason: String) -> Self {
        Self {
            x_star: DMatrix::zeros(q, q),
            objective: f64::NAN,
            eigenvalues: Vec::new(),
            feasible: false,
            null_dim,
            gram_min_eig,
            converged: true,
            kkt_residual: 0.0,
            infeasibility: Some(reason),
        }
    }
}

/// Solves the relaxed program for `set` at threshold `delta`.
pub fn solve_opt(set: &MatrixSet, delta: f64, opts: &ZeigOptions) -> Result<OptSolution> {
    let spectrum = OperatorSpectrum::of(set);
    solve_opt_on(&spectrum.null_basis(delta)?, set.dim(), opts)
}

/// Solves the program over a precomputed null-space basis of `q x q` matrices.
///
/// The sign of `X*` is fixed so that `tr(X*^3) >= 0`: for a two-block split
/// the eigenvalue of the smaller block is then the positive one.
pub fn solve_opt_on(basis: &NullBasis, q: usize, opts: &ZeigOptions) -> Result<OptSolution> {
    let null_dim = basis.len();
    let deflated = match deflate_identity(basis) {
        Ok(b) => b,
        Err(Error::Infeasible(reason)) => {
            return Ok(OptSolution::infeasible(q, null_dim, None, reason))
        }
        Err(e) => return Err(e),
    };
    let form = match build_quartic(&deflated) {
        Ok(f) => f,
        Err(Error::Infeasible(reason)) => {
            let k = DMatrix::from_fn(deflated.len(), deflated.len(), |i, j| {
                (&deflated.basis[i] * &deflated.basis[j]).trace()
            });
            let k = (&k + k.transpose()) * 0.5;
            let min_eig = k.symmetric_eigenvalues().min();
            return Ok(OptSolution::infeasible(q, null_dim, Some(min_eig), reason));
        }
        Err(e) => return Err(e),
    };
    let gram_min_eig = Some(form.gram.symmetric_eigenvalues().min());
    let (beta, converged, residual) = match min_z_eigen(&form, opts) {
        Ok(pair) => (pair.vector, true, pair.residual),
        Err(Error::Convergence {
            best_point,
            residual,
            ..
        }) => (DVector::from_vec(best_point), false, residual),
        Err(e) => return Err(e),
    };
    let mut x = form.matrix(&beta);
    let t2 = (&x * &x).trace();
    if !(t2 > 0.0) {
        return Ok(OptSolution::infeasible(
            q,
            null_dim,
            gram_min_eig,
            format!("tr(X^2) = {t2:e} at the computed minimizer"),
        ));
    }
    x *= (q as f64 / t2).sqrt();
    if (&x * &x * &x).trace() < 0.0 {
        x = -x;
    }
    let x2 = &x * &x;
    let objective = (&x2 * &x2).trace();
    let eigenvalues = RealSchur::new(&x)?.eigenvalues();
    Ok(OptSolution {
        x_star: x,
        objective,
        eigenvalues,
        feasible: true,
        null_dim,
        gram_min_eig,
        converged,
        kkt_residual: residual,
        infeasibility: None,
    })
}
