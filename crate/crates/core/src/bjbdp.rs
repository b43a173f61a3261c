//! Recursive driver: rank and range estimation, projection, and repeated
//! bi-splitting of the largest unfinished block.

use nalgebra::{Complex, DMatrix};

use crate::bibd::{bi_block_diagonalize_with, BiSplit};
use crate::commutant::OperatorSpectrum;
use crate::error::{Error, Result};
use crate::linalg;
use crate::subspace::{estimate_rank, range_basis, spectral_profile, whiten, SpectralProfile};
use crate::types::{
    offblock_residual, projected_blocks, BlockDiagonalization, MatrixSet, Partition,
};
use crate::zeig::ZeigOptions;

/// `B_i = V_1^T C_i V_1`.
pub fn project(set: &MatrixSet, v1: &DMatrix<f64>) -> Result<MatrixSet> {
    if v1.nrows() != set.dim() {
        return Err(Error::Dimension(format!(
            "basis has {} rows, matrices are of order {}",
            v1.nrows(),
            set.dim()
        )));
    }
    set.map(|c| v1.transpose() * c * v1)
}

/// How the relaxation threshold of each bi-splitting call is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeltaPolicy {
    /// `max(2 phi_{p+1} a, 1e-10 sigma_max(L))`, where `a` is the product of
    /// `||Z^-1||_2^2` over the splits that produced the block. When `p = d`
    /// the noise proxy `phi_{p+1}` is unavailable and the threshold is placed
    /// inside the widest ratio gap of the low end of the spectrum of `L`.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub xi: f64,
    pub delta: DeltaPolicy,
    pub zeig: ZeigOptions,
    /// Splits whose `Z` has a larger condition number are refused.
    pub max_cond: f64,
    /// Replace the set by its congruence with `M^{-1/2}`, `M` the mean
    /// matrix, before solving; the returned diagonalizer refers to the
    /// original set. Requires `M` positive definite.
    pub whiten: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            xi: 0.1,
            delta: DeltaPolicy::Auto,
            zeig: ZeigOptions::default(),
            max_cond: 1e12,
            whiten: false,
        }
    }
}

impl SolverConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.zeig.seed = seed;
        self
    }
}

/// One entry of the split log.
#[derive(Debug, Clone)]
pub struct SplitRecord {
    /// Index of the processed block in the partition at that time.
    pub block: usize,
    pub size: usize,
    /// `(q1, q2)` when the block was split.
    pub sizes: Option<(usize, usize)>,
    pub delta: f64,
    pub null_dim: usize,
    pub objective: Option<f64>,
    pub x_spectrum: Vec<Complex<f64>>,
    pub split_residual: f64,
    /// Frobenius norm of the coupling between the two new blocks that was zeroed.
    pub discarded_coupling: f64,
    pub cond_z: Option<f64>,
    pub gap: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct WorkState {
    pub partition: Partition,
    pub done: Vec<bool>,
    /// Current `p x p` matrices `B_i`.
    pub b: Vec<DMatrix<f64>>,
    /// Current `d x p` diagonalizer.
    pub a_hat: DMatrix<f64>,
    /// Noise amplification factor carried by each block.
    pub amplification: Vec<f64>,
    pub history: Vec<SplitRecord>,
}

impl WorkState {
    pub fn new(b: &MatrixSet, v1: DMatrix<f64>) -> Result<Self> {
        let p = b.dim();
        Ok(Self {
            partition: Partition::single(p)?,
            done: vec![false],
            b: b.matrices().to_vec(),
            a_hat: v1,
            amplification: vec![1.0],
            history: Vec::new(),
        })
    }

    /// Diagonal block `t` of every `B_i`.
    pub fn block_set(&self, t: usize) -> Result<MatrixSet> {
        let r = self.partition.ranges()[t].clone();
        let n = r.len();
        MatrixSet::new(
            self.b
                .iter()
                .map(|b| b.view((r.start, r.start), (n, n)).into_owned())
                .collect(),
        )
    }
}

/// Index of the largest unfinished block, smallest index on ties.
pub fn select_work_block(state: &WorkState) -> Option<usize> {
    state
        .partition
        .parts()
        .iter()
        .zip(&state.done)
        .enumerate()
        .filter(|(_, (_, &done))| !done)
        .fold(
            None,
            |best: Option<(usize, usize)>, (i, (&size, _))| match best {
                Some((_, s)) if s >= size => best,
                _ => Some((i, size)),
            },
        )
        .map(|(i, _)| i)
}

/// Records `split` for block `t`. An unsplit result closes the block; a split
/// replaces it by two open blocks, conjugates `B` by `diag(I, Z^-1, I)` and
/// right-multiplies the matching columns of `A_hat` by `Z`.
pub fn apply_split(state: &mut WorkState, t: usize, split: &BiSplit, max_cond: f64) -> Result<()> {
    let size = state.partition.parts()[t];
    let mut record = SplitRecord {
        block: t,
        size,
        sizes: None,
        delta: split.delta,
        null_dim: split.opt.null_dim,
        objective: split.opt.feasible.then_some(split.opt.objective),
        x_spectrum: split.opt.eigenvalues.clone(),
        split_residual: split.split_residual,
        discarded_coupling: 0.0,
        cond_z: None,
        gap: split.gap,
    };
    if !split.is_split() {
        state.done[t] = true;
        state.history.push(record);
        return Ok(());
    }
    if split.z.nrows() != size {
        return Err(Error::Dimension(format!(
            "split of order {} for a block of size {size}",
            split.z.nrows()
        )));
    }
    if !(split.cond_z <= max_cond) {
        return Err(Error::IllConditioned { cond: split.cond_z });
    }
    let start = state.partition.ranges()[t].start;
    let (q1, q2) = (split.partition.parts()[0], split.partition.parts()[1]);
    let p = state.partition.total();

    let mut discarded = 0.0;
    for b in &mut state.b {
        let rows = &split.z_inv * b.view((start, 0), (size, p));
        b.view_mut((start, 0), (size, p)).copy_from(&rows);
        let cols = b.view((0, start), (p, size)) * split.z_inv.transpose();
        b.view_mut((0, start), (p, size)).copy_from(&cols);
        let mut upper = b.view_mut((start, start + q1), (q1, q2));
        discarded += upper.norm_squared();
        upper.fill(0.0);
        let mut lower = b.view_mut((start + q1, start), (q2, q1));
        discarded += lower.norm_squared();
        lower.fill(0.0);
    }
    let cols = state.a_hat.columns(start, size) * &split.z;
    state.a_hat.columns_mut(start, size).copy_from(&cols);

    let amp = state.amplification[t] * linalg::spectral_norm(&split.z_inv).powi(2);
    let mut parts = state.partition.parts().to_vec();
    parts.splice(t..=t, [q1, q2]);
    state.partition = Partition::new(parts)?;
    state.done.splice(t..=t, [false, false]);
    state.amplification.splice(t..=t, [amp, amp]);

    record.sizes = Some((q1, q2));
    record.discarded_coupling = discarded.sqrt();
    record.cond_z = Some(split.cond_z);
    state.history.push(record);
    Ok(())
}

/// Threshold for one block under [`DeltaPolicy::Auto`].
pub fn auto_delta(spectrum: &OperatorSpectrum, noise_proxy: f64, amplification: f64) -> f64 {
    let floor = 1e-10 * spectrum.sigma_max();
    if noise_proxy > 0.0 {
        return (2.0 * noise_proxy * amplification).max(floor);
    }
    gap_delta(spectrum).unwrap_or(floor)
}

/// Ratio of consecutive singular values of `L` that counts as a gap.
const GAP_RATIO: f64 = 10.0;

/// Threshold at the geometric midpoint of the largest ratio
/// `sigma_{k+1} / sigma_k` with `2 <= k <= q`, when that ratio reaches
/// [`GAP_RATIO`]. Singular values are floored at `1e-10 sigma_max`.
pub fn gap_delta(spectrum: &OperatorSpectrum) -> Option<f64> {
    let q = spectrum.order;
    let floor = 1e-10 * spectrum.sigma_max();
    if floor <= 0.0 {
        return None;
    }
    let s: Vec<f64> = spectrum.sigma.iter().map(|&x| x.max(floor)).collect();
    let (k, ratio) =
        (2..=q.min(s.len() - 1))
            .map(|k| (k, s[k] / s[k - 1]))
            .fold(
                (0, 0.0),
                |best, cur| if cur.1 > best.1 { cur } else { best },
            );
    (k > 0 && ratio >= GAP_RATIO).then(|| (s[k - 1] * s[k]).sqrt())
}

/// Full output of [`solve_bjbdp`].
#[derive(Debug, Clone)]
pub struct BjbdpRun {
    pub solution: BlockDiagonalization,
    pub profile: SpectralProfile,
    /// `phi_{p+1}` of the stacked matrix (zero when `p = d`).
    pub noise_proxy: f64,
    pub history: Vec<SplitRecord>,
    pub warnings: Vec<String>,
    pub cond_a_hat: f64,
}

/// Estimates `(tau_p, A_hat)` for `set`.
///
/// Per-block numerical failures close the block with a warning, so a result
/// is produced whenever the rank is detectable.
pub fn solve_bjbdp(set: &MatrixSet, config: &SolverConfig) -> Result<BjbdpRun> {
    let (whitened, w_inv) = if config.whiten {
        let (w, w_inv) = whiten(set)?;
        (Some(w), Some(w_inv))
    } else {
        (None, None)
    };
    let work = whitened.as_ref().unwrap_or(set);
    let mut profile = spectral_profile(work);
    let p = estimate_rank(&mut profile, config.xi)?;
    let v1 = range_basis(&profile, p)?;
    let noise_proxy = profile.phi(p + 1);
    let b = project(work, &v1)?;
    let mut state = WorkState::new(&b, v1)?;
    let mut warnings = Vec::new();

    while let Some(t) = select_work_block(&state) {
        let sub = state.block_set(t)?;
        let spectrum = OperatorSpectrum::of(&sub);
        let delta = match config.delta {
            DeltaPolicy::Fixed(d) => d,
            DeltaPolicy::Auto => auto_delta(&spectrum, noise_proxy, state.amplification[t]),
        };
        let outcome =
            bi_block_diagonalize_with(&sub, &spectrum, delta, &config.zeig).and_then(|split| {
                if let Some(w) = &split.warning {
                    warnings.push(format!("block {t} (size {}): {w}", sub.dim()));
                }
                apply_split(&mut state, t, &split, config.max_cond)
            });
        if let Err(e) = outcome {
            if let Error::InvalidInput(_) = e {
                return Err(e);
            }
            warnings.push(format!("block {t} (size {}) left whole: {e}", sub.dim()));
            state.done[t] = true;
        }
    }

    if let Some(w_inv) = w_inv {
        state.a_hat = w_inv * &state.a_hat;
    }
    let partition = state.partition.clone();
    let residual = offblock_residual(set, &state.a_hat, &partition)?;
    let blocks = projected_blocks(set, &state.a_hat, &partition)?;
    let cond_a_hat = linalg::condition_number(&state.a_hat);
    Ok(BjbdpRun {
        solution: BlockDiagonalization {
            partition,
            diagonalizer: state.a_hat,
            blocks,
            residual,
            rank: p,
        },
        profile,
        noise_proxy,
        history: state.history,
        warnings,
        cond_a_hat,
    })
}
