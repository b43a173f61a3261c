//! JSON report types. Non-finite numbers are written as the strings
//! `"inf"`, `"-inf"` and `"nan"`.

use mjbd::bjbdp::SplitRecord;
use mjbd::diagnostics::{Comparison, IdentifiabilityReport};
use nalgebra::Complex;
use serde::{Serialize, Serializer};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Num(pub f64);

impl Serialize for Num {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let x = self.0;
        if x.is_finite() {
            s.serialize_f64(x)
        } else if x.is_nan() {
            s.serialize_str("nan")
        } else if x > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }
}

pub fn nums(xs: &[f64]) -> Vec<Num> {
    xs.iter().copied().map(Num).collect()
}

#[derive(Debug, Serialize)]
pub struct InputInfo {
    pub path: String,
    pub m: usize,
    pub d: usize,
}

#[derive(Debug, Serialize)]
pub struct SolverInfo {
    pub xi: Num,
    /// `"auto"` or the fixed value.
    pub delta: serde_json::Value,
    pub seed: u64,
    pub whiten: bool,
    pub restarts: usize,
}

#[derive(Debug, Serialize)]
pub struct SplitEntry {
    pub block: usize,
    pub size: usize,
    pub sizes: Option<(usize, usize)>,
    pub delta: Num,
    pub null_dim: usize,
    pub objective: Option<Num>,
    /// `[re, im]` pairs.
    pub x_spectrum: Vec<[Num; 2]>,
    pub split_residual: Num,
    pub discarded_coupling: Num,
    pub cond_z: Option<Num>,
    pub gap: Option<Num>,
}

fn pair(z: &Complex<f64>) -> [Num; 2] {
    [Num(z.re), Num(z.im)]
}

impl From<&SplitRecord> for SplitEntry {
    fn from(r: &SplitRecord) -> Self {
        Self {
            block: r.block,
            size: r.size,
            sizes: r.sizes,
            delta: Num(r.delta),
            null_dim: r.null_dim,
            objective: r.objective.map(Num),
            x_spectrum: r.x_spectrum.iter().map(pair).collect(),
            split_residual: Num(r.split_residual),
            discarded_coupling: Num(r.discarded_coupling),
            cond_z: r.cond_z.map(Num),
            gap: r.gap.map(Num),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct DecomposeReport {
    pub report_version: u32,
    pub input: InputInfo,
    pub solver: SolverInfo,
    pub rank: usize,
    pub singular_values: Vec<Num>,
    /// `phi_{p+1}`, zero when `p = d`.
    pub noise_proxy: Num,
    pub partition: Vec<usize>,
    pub partition_string: String,
    pub residual: Num,
    /// `f(A_hat) / ||C||_F` of the stacked input.
    pub residual_relative: Num,
    pub cond_a_hat: Num,
    pub history: Vec<SplitEntry>,
    pub warnings: Vec<String>,
    /// Excluded from the reproducibility contract.
    pub wall_time_s: f64,
}

#[derive(Debug, Serialize)]
pub struct ConstantsEntry {
    pub c: Num,
    pub kappa: Num,
}

#[derive(Debug, Serialize)]
pub struct IdentifiabilityEntry {
    /// `"truth"` or `"estimate"`.
    pub blocks_from: &'static str,
    pub partition: Vec<usize>,
    pub omega_ir: Num,
    pub omega_neq: Num,
    pub p1_holds: bool,
    pub p1_offender: Option<usize>,
    pub p2_holds: bool,
    pub p2_offender: Option<(usize, usize)>,
    pub null_dims: Vec<usize>,
    pub unique: bool,
    /// Illustrative defaults unless overridden.
    pub constants: ConstantsEntry,
    pub epsilon: Option<Num>,
    pub r: Option<Num>,
    pub g1: Option<Num>,
    pub g2: Option<Num>,
}

impl IdentifiabilityEntry {
    pub fn new(rep: &IdentifiabilityReport, blocks_from: &'static str) -> Self {
        Self {
            blocks_from,
            partition: rep.partition.parts().to_vec(),
            omega_ir: Num(rep.omega_ir),
            omega_neq: Num(rep.omega_neq),
            p1_holds: rep.p1_holds,
            p1_offender: rep.p1_offender,
            p2_holds: rep.p2_holds,
            p2_offender: rep.p2_offender,
            null_dims: rep.null_dims.clone(),
            unique: rep.unique(),
            constants: ConstantsEntry {
                c: Num(rep.constants.c),
                kappa: Num(rep.constants.kappa),
            },
            epsilon: rep.epsilon.map(Num),
            r: rep.r.map(Num),
            g1: rep.g1.map(Num),
            g2: rep.g2.map(Num),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ComparisonEntry {
    pub equivalent: bool,
    pub partitions_equivalent: bool,
    pub matching: Vec<Option<usize>>,
    pub block_error: Num,
}

impl From<&Comparison> for ComparisonEntry {
    fn from(c: &Comparison) -> Self {
        Self {
            equivalent: c.equivalent,
            partitions_equivalent: c.partitions_equivalent,
            matching: c.matching.clone(),
            block_error: Num(c.block_error),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct DiagnoseReport {
    pub report_version: u32,
    pub input: InputInfo,
    pub estimated_partition: Vec<usize>,
    pub residual: Num,
    pub identifiability: IdentifiabilityEntry,
    pub comparison: Option<ComparisonEntry>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct TrialEntry {
    pub seed: u64,
    pub rank: Option<usize>,
    pub partition: Option<Vec<usize>>,
    pub equivalent: bool,
    pub residual: Option<Num>,
    pub noise_proxy: Option<Num>,
    pub block_error: Option<Num>,
    pub error: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct SnrEntry {
    pub snr_db: Num,
    pub identified: usize,
    pub rank_correct: usize,
    pub median_residual: Num,
    pub median_noise_proxy: Num,
    pub trials: Vec<TrialEntry>,
}

#[derive(Debug, Serialize)]
pub struct ExperimentReport {
    pub report_version: u32,
    pub m: usize,
    pub n: usize,
    pub partition: Vec<usize>,
    pub trials: usize,
    pub base_seed: u64,
    pub results: Vec<SnrEntry>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn non_finite_numbers_become_strings() {
        let json = serde_json::to_string(&nums(&[1.5, f64::INFINITY, f64::NEG_INFINITY, f64::NAN]))
            .unwrap();
        assert_eq!(json, r#"[1.5,"inf","-inf","nan"]"#);
    }
}
