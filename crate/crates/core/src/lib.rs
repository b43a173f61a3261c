//! Blind joint block diagonalization of matrix sets.
//!
//! Given `C_i = A S_i A^T + E_i` with unknown full-column-rank `A` and unknown
//! block-diagonal `S_i`, [`solve_bjbdp`] recovers the block structure and a
//! diagonalizer `A_hat` without knowing the block sizes in advance.

// `!(x > t)` comparisons send NaN to the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bibd;
pub mod bjbdp;
pub mod commutant;
pub mod diagnostics;
pub mod error;
mod linalg;
pub mod schur;
pub mod subspace;
pub mod synth;
pub mod types;
pub mod zeig;

pub use bibd::{bi_block_diagonalize, BiSplit};
pub use bjbdp::{solve_bjbdp, BjbdpRun, DeltaPolicy, SolverConfig};
pub use error::{Error, Result};
pub use types::{BlockDiagonalization, MatrixSet, Partition};
