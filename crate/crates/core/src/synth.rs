//! Seeded synthetic instances.
//!
//! All randomness comes from `ChaCha8Rng::seed_from_u64(seed)` and standard
//! normal draws, consumed in a fixed order: mixing matrix (row-major), then
//! the block matrices (matrix by matrix, block by block, row-major), then the
//! noise. Two instances that differ only in their noise level therefore share
//! `A` and the blocks.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::types::{assemble_block_diagonal, MatrixSet, Partition};

#[derive(Debug, Clone)]
pub struct PlantedInstance {
    /// `C_i = A S_i A^T (+ N_i)`.
    pub observed: MatrixSet,
    /// `d x p`.
    pub truth_a: DMatrix<f64>,
    /// Block-diagonal `S_i`.
    pub truth_blocks: MatrixSet,
    pub partition: Partition,
    /// Entrywise noise standard deviation; `None` for sampled covariances.
    pub sigma: Option<f64>,
    pub snr_db: Option<f64>,
    pub seed: u64,
}

/// `sigma = 10^(-snr/20)`; an infinite SNR gives zero.
pub fn noise_sigma(snr_db: f64) -> f64 {
    if snr_db == f64::INFINITY {
        0.0
    } else {
        10f64.powf(-snr_db / 20.0)
    }
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = StandardNormal.sample(rng);
        }
    }
    m
}

fn random_block_diagonal(rng: &mut ChaCha8Rng, tau: &Partition) -> Result<DMatrix<f64>> {
    let blocks: Vec<_> = tau.parts().iter().map(|&k| gaussian(rng, k, k)).collect();
    assemble_block_diagonal(&blocks, tau)
}

/// `C_i = A D_i A^T + N_i` with standard normal `A` (`n x p`), standard normal
/// entries inside the blocks of `D_i`, and `N_i` of entrywise deviation
/// `10^(-snr/20)`.
pub fn gen_example1(
    m: usize,
    n: usize,
    p: usize,
    tau: &Partition,
    snr_db: f64,
    seed: u64,
) -> Result<PlantedInstance> {
    if m == 0 {
        return Err(Error::InvalidInput(
            "at least one matrix is required".into(),
        ));
    }
    if tau.total() != p {
        return Err(Error::InvalidInput(format!(
            "partition {tau} does not sum to p = {p}"
        )));
    }
    if p > n {
        return Err(Error::InvalidInput(format!("p = {p} exceeds n = {n}")));
    }
    if snr_db.is_nan() {
        return Err(Error::InvalidInput("SNR must be a number".into()));
    }
    let sigma = noise_sigma(snr_db);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = gaussian(&mut rng, n, p);
    let blocks = (0..m)
        .map(|_| random_block_diagonal(&mut rng, tau))
        .collect::<Result<Vec<_>>>()?;
    let observed = blocks
        .iter()
        .map(|d| {
            let c = &a * d * a.transpose();
            if sigma > 0.0 {
                c + gaussian(&mut rng, n, n) * sigma
            } else {
                c
            }
        })
        .collect();
    Ok(PlantedInstance {
        observed: MatrixSet::new(observed)?,
        truth_a: a,
        truth_blocks: MatrixSet::new(blocks)?,
        partition: tau.clone(),
        sigma: Some(sigma),
        snr_db: Some(snr_db),
        seed,
    })
}

/// Sample covariances of `m` domains of mixed independent source groups.
///
/// In each domain group `j` has covariance `W^T W + 0.1 I` with standard
/// normal `W`; `samples` Gaussian source vectors are drawn through its
/// Cholesky factor, mixed by a standard normal `d x p` matrix `A`, and
/// `C_i = A S_hat_i A^T` with `S_hat_i` the uncentered sample covariance.
/// The truth blocks are the population covariances.
pub fn gen_isa_covariances(
    groups: &Partition,
    d: usize,
    m: usize,
    samples: usize,
    seed: u64,
) -> Result<PlantedInstance> {
    let p = groups.total();
    if m == 0 {
        return Err(Error::InvalidInput(
            "at least one domain is required".into(),
        ));
    }
    if p > d {
        return Err(Error::InvalidInput(format!("p = {p} exceeds d = {d}")));
    }
    if samples < p {
        return Err(Error::Precondition(format!(
            "{samples} samples per domain, at least {p} required"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = gaussian(&mut rng, d, p);
    let mut truth = Vec::with_capacity(m);
    let mut observed = Vec::with_capacity(m);
    for _ in 0..m {
        let covs: Vec<DMatrix<f64>> = groups
            .parts()
            .iter()
            .map(|&k| {
                let w = gaussian(&mut rng, k, k);
                w.transpose() * &w + DMatrix::identity(k, k) * 0.1
            })
            .collect();
        let cov = assemble_block_diagonal(&covs, groups)?;
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Degenerate("source covariance is not positive definite".into()))?
            .l();
        let z = gaussian(&mut rng, p, samples);
        let s = chol * z;
        let sample_cov = (&s * s.transpose()) / samples as f64;
        observed.push(&a * sample_cov * a.transpose());
        truth.push(cov);
    }
    Ok(PlantedInstance {
        observed: MatrixSet::new(observed)?,
        truth_a: a,
        truth_blocks: MatrixSet::new(truth)?,
        partition: groups.clone(),
        sigma: None,
        snr_db: None,
        seed,
    })
}

/// Two `2 x 2` block families `[[0, a_i], [a_i, b_i]]` and `[[0, a_i], [a_i, c_i]]`
/// with standard normal `a_i, b_i, c_i`, mixed by a standard normal `4 x 4`
/// matrix. The pair admits the coupling `X = e1 e2^T`, `Y = e2 e1^T`
/// (`S X = Y T` for every member), so the factorization is not unique.
pub fn coupled_pair_family(m: usize, seed: u64) -> Result<PlantedInstance> {
    if m == 0 {
        return Err(Error::InvalidInput(
            "at least one matrix is required".into(),
        ));
    }
    let tau = Partition::new(vec![2, 2])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = gaussian(&mut rng, 4, 4);
    let mut blocks = Vec::with_capacity(m);
    for _ in 0..m {
        let v = gaussian(&mut rng, 1, 3);
        let (ai, bi, ci) = (v[0], v[1], v[2]);
        let s1 = DMatrix::from_row_slice(2, 2, &[0.0, ai, ai, bi]);
        let s2 = DMatrix::from_row_slice(2, 2, &[0.0, ai, ai, ci]);
        blocks.push(assemble_block_diagonal(&[s1, s2], &tau)?);
    }
    let observed = blocks.iter().map(|s| &a * s * a.transpose()).collect();
    Ok(PlantedInstance {
        observed: MatrixSet::new(observed)?,
        truth_a: a,
        truth_blocks: MatrixSet::new(blocks)?,
        partition: tau,
        sigma: Some(0.0),
        snr_db: Some(f64::INFINITY),
        seed,
    })
}
