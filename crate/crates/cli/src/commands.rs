use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mjbd::diagnostics::{
    compare_solutions, diagonal_blocks, identifiability, BoundConstants, Comparison,
    PerturbationData,
};
use mjbd::subspace::spectral_profile;
use mjbd::synth::{coupled_pair_family, gen_example1, gen_isa_covariances, PlantedInstance};
use mjbd::types::{partitions_equivalent, stack_underline};
use mjbd::{solve_bjbdp, BjbdpRun, DeltaPolicy, MatrixSet, Partition, SolverConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{CliError, CliResult};
use crate::format::MatrixSetFile;
use crate::report::*;
use crate::{
    DecomposeArgs, DiagnoseArgs, ExperimentArgs, Family, SolverArgs, SpectrumArgs, SpectrumFormat,
    SynthArgs,
};

/// Tolerance on the relative block error for a recovered solution to count
/// as equivalent to the planted one.
pub const EQUIVALENCE_TOL: f64 = 1e-6;

/// Sidecar path `<out><suffix>`.
pub fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

#[derive(Debug, Serialize)]
struct TruthSidecar {
    family: &'static str,
    partition: Vec<usize>,
    m: usize,
    d: usize,
    p: usize,
    seed: u64,
    sigma: Option<Num>,
    snr_db: Option<Num>,
    samples: Option<usize>,
    /// File names relative to the sidecar's directory.
    a_file: String,
    blocks_file: String,
}

#[derive(Debug, Deserialize)]
struct TruthRef {
    partition: Vec<usize>,
    a_file: String,
    blocks_file: String,
}

struct Truth {
    partition: Partition,
    a: nalgebra::DMatrix<f64>,
    blocks: MatrixSet,
}

fn load_truth(path: &Path) -> CliResult<Truth> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let r: TruthRef = serde_json::from_str(&text)
        .map_err(|e| CliError::Input(format!("{}: not a truth sidecar ({e})", path.display())))?;
    let dir = path.parent().unwrap_or(Path::new(""));
    let a = MatrixSetFile::read(&dir.join(&r.a_file))?.rectangular()?;
    let blocks = MatrixSetFile::read(&dir.join(&r.blocks_file))?.to_set()?;
    let partition = Partition::new(r.partition)?;
    if a.ncols() != partition.total() || blocks.dim() != partition.total() {
        return Err(CliError::Input(format!(
            "truth files disagree with partition {partition}"
        )));
    }
    Ok(Truth {
        partition,
        a,
        blocks,
    })
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn to_value<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("report values serialize")
}

pub fn synth(args: &SynthArgs) -> CliResult<()> {
    let family = match (args.family, args.isa) {
        (Some(f), false) => f,
        (None, false) => Family::Planted,
        (None | Some(Family::Isa), true) => Family::Isa,
        (Some(_), true) => return Err(CliError::Input("--isa conflicts with --family".into())),
    };
    let tau = Partition::parse(&args.tau)?;
    if let Some(p) = args.p {
        if p != tau.total() {
            return Err(CliError::Input(format!(
                "partition {tau} sums to {}, not --p {p}",
                tau.total()
            )));
        }
    }
    let (inst, name, samples): (PlantedInstance, _, _) = match family {
        Family::Planted => (
            gen_example1(args.m, args.n, tau.total(), &tau, args.snr, args.seed)?,
            "planted",
            None,
        ),
        Family::Isa => (
            gen_isa_covariances(&tau, args.n, args.m, args.samples, args.seed)?,
            "isa",
            Some(args.samples),
        ),
        Family::CoupledPair => (
            coupled_pair_family(args.m, args.seed)?,
            "coupled-pair",
            None,
        ),
    };

    let a_path = sidecar(&args.out, ".A.mjbd");
    let blocks_path = sidecar(&args.out, ".blocks.mjbd");
    let parts = inst.partition.parts().to_vec();
    let mut extras = Map::new();
    extras.insert("partition".into(), to_value(&parts));
    extras.insert("seed".into(), args.seed.into());
    extras.insert("snr".into(), to_value(&inst.snr_db.map(Num)));
    MatrixSetFile::from_set(&inst.observed, Some(Value::Object(extras.clone())))?
        .write(&args.out)?;
    MatrixSetFile::from_rectangular(&inst.truth_a, extras.clone())?.write(&a_path)?;
    MatrixSetFile::from_set(&inst.truth_blocks, Some(Value::Object(extras)))?
        .write(&blocks_path)?;
    let truth = TruthSidecar {
        family: name,
        partition: parts,
        m: inst.observed.len(),
        d: inst.observed.dim(),
        p: inst.partition.total(),
        seed: args.seed,
        sigma: inst.sigma.map(Num),
        snr_db: inst.snr_db.map(Num),
        samples,
        a_file: file_name(&a_path),
        blocks_file: file_name(&blocks_path),
    };
    let truth_path = sidecar(&args.out, ".truth.json");
    write_text(Some(&truth_path), &pretty(&truth))
}

fn solver_config(args: &SolverArgs) -> CliResult<SolverConfig> {
    if !(args.xi > 0.0 && args.xi < 1.0) {
        return Err(CliError::Input(format!(
            "--xi must lie in (0, 1), got {}",
            args.xi
        )));
    }
    let mut config = SolverConfig {
        xi: args.xi,
        delta: args.delta,
        whiten: args.whiten,
        ..SolverConfig::default()
    }
    .with_seed(args.seed);
    config.zeig.restarts = args.restarts;
    Ok(config)
}

fn solver_info(args: &SolverArgs) -> SolverInfo {
    SolverInfo {
        xi: Num(args.xi),
        delta: match args.delta {
            DeltaPolicy::Auto => json!("auto"),
            DeltaPolicy::Fixed(d) => to_value(&Num(d)),
        },
        seed: args.seed,
        whiten: args.whiten,
        restarts: args.restarts,
    }
}

fn pretty<T: Serialize>(x: &T) -> String {
    let mut s = serde_json::to_string_pretty(x).expect("report serializes");
    s.push('\n');
    s
}

fn write_text(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::io(p, e)),
        None => std::io::stdout()
            .lock()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::io("<stdout>", e)),
    }
}

fn read_set(path: &Path) -> CliResult<(MatrixSet, InputInfo)> {
    let file = MatrixSetFile::read(path)?;
    let info = InputInfo {
        path: path.display().to_string(),
        m: file.header.m,
        d: file.header.d,
    };
    Ok((file.to_set()?, info))
}

fn warn_all(run: &BjbdpRun) {
    for w in &run.warnings {
        eprintln!("warning: {w}");
    }
}

pub fn decompose(args: &DecomposeArgs) -> CliResult<()> {
    let (set, input) = read_set(&args.input)?;
    let config = solver_config(&args.solver)?;
    let start = Instant::now();
    let run = solve_bjbdp(&set, &config)?;
    let wall_time_s = start.elapsed().as_secs_f64();
    warn_all(&run);
    let sol = &run.solution;
    if let Some(path) = &args.out_a {
        let mut extras = Map::new();
        extras.insert("partition".into(), to_value(&sol.partition.parts()));
        MatrixSetFile::from_rectangular(&sol.diagonalizer, extras)?.write(path)?;
    }
    let scale = stack_underline(&set).norm();
    let report = DecomposeReport {
        report_version: REPORT_VERSION,
        input,
        solver: solver_info(&args.solver),
        rank: sol.rank,
        singular_values: nums(&run.profile.singular_values),
        noise_proxy: Num(run.noise_proxy),
        partition: sol.partition.parts().to_vec(),
        partition_string: sol.partition.to_string(),
        residual: Num(sol.residual),
        residual_relative: Num(if scale > 0.0 {
            sol.residual / scale
        } else {
            0.0
        }),
        cond_a_hat: Num(run.cond_a_hat),
        history: run.history.iter().map(SplitEntry::from).collect(),
        warnings: run.warnings.clone(),
        wall_time_s,
    };
    write_text(args.out_report.as_deref(), &pretty(&report))
}

/// Parses `C=<value>,kappa=<value>`; either key may be omitted.
pub fn parse_constants(s: &str) -> CliResult<BoundConstants> {
    let mut out = BoundConstants::default();
    for item in s.split(',').map(str::trim).filter(|x| !x.is_empty()) {
        let (key, value) = item.split_once('=').ok_or_else(|| {
            CliError::Input(format!("expected key=value in --constants, got {item:?}"))
        })?;
        let v: f64 = value
            .trim()
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite() && *v > 0.0)
            .ok_or_else(|| {
                CliError::Input(format!(
                    "constant {key} must be a positive number, got {value:?}"
                ))
            })?;
        match key.trim().to_ascii_lowercase().as_str() {
            "c" => out.c = v,
            "kappa" => out.kappa = v,
            other => return Err(CliError::Input(format!("unknown constant {other:?}"))),
        }
    }
    Ok(out)
}

fn compare_or_mismatch(truth: &Truth, run: &BjbdpRun, tol: f64) -> CliResult<Comparison> {
    let sol = &run.solution;
    if sol.partition.total() != truth.partition.total()
        || sol.diagonalizer.shape() != truth.a.shape()
    {
        return Ok(Comparison {
            equivalent: false,
            partitions_equivalent: false,
            matching: vec![None; truth.partition.cardinality()],
            block_error: f64::INFINITY,
        });
    }
    Ok(compare_solutions(
        &truth.partition,
        &truth.a,
        &sol.partition,
        &sol.diagonalizer,
        tol,
    )?)
}

pub fn diagnose(args: &DiagnoseArgs) -> CliResult<()> {
    let (set, input) = read_set(&args.input)?;
    let constants = args
        .constants
        .as_deref()
        .map(parse_constants)
        .transpose()?
        .unwrap_or_default();
    let run = solve_bjbdp(&set, &solver_config(&args.solver)?)?;
    warn_all(&run);
    let sol = &run.solution;
    let (entry, comparison) = match &args.truth {
        Some(path) => {
            let truth = load_truth(path)?;
            if truth.a.nrows() != set.dim() || truth.blocks.len() != set.len() {
                return Err(CliError::Input("truth files do not match the input".into()));
            }
            let blocks = diagonal_blocks(&truth.blocks, &truth.partition)?;
            let pd = PerturbationData::from_truth(
                &set,
                &truth.a,
                &truth.blocks,
                &truth.partition,
                sol.partition.cardinality(),
            )?;
            let rep = identifiability(&blocks, constants, Some(&pd))?;
            let cmp = compare_or_mismatch(&truth, &run, args.tol)?;
            (
                IdentifiabilityEntry::new(&rep, "truth"),
                Some(ComparisonEntry::from(&cmp)),
            )
        }
        None => {
            let blocks = diagonal_blocks(&sol.blocks, &sol.partition)?;
            let rep = identifiability(&blocks, constants, None)?;
            (IdentifiabilityEntry::new(&rep, "estimate"), None)
        }
    };
    let report = DiagnoseReport {
        report_version: REPORT_VERSION,
        input,
        estimated_partition: sol.partition.parts().to_vec(),
        residual: Num(sol.residual),
        identifiability: entry,
        comparison,
        warnings: run.warnings.clone(),
    };
    write_text(args.out.as_deref(), &pretty(&report))
}

/// One-based indices of the `count` largest and `count` smallest of `d` values.
pub fn spectrum_indices(d: usize, count: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (1..=count.min(d))
        .chain(d.saturating_sub(count) + 1..=d)
        .collect();
    idx.sort_unstable();
    idx.dedup();
    idx
}

pub fn spectrum(args: &SpectrumArgs) -> CliResult<()> {
    let (set, _) = read_set(&args.input)?;
    let d = set.dim();
    let mut count = args.count;
    if count > d {
        eprintln!("warning: --count {count} exceeds d = {d}; clamped to {d}");
        count = d;
    }
    let phi = spectral_profile(&set).singular_values;
    let rows: Vec<(usize, f64)> = spectrum_indices(d, count)
        .into_iter()
        .map(|i| (i, phi[i - 1]))
        .collect();
    let text = match args.format {
        SpectrumFormat::Csv => {
            let mut s = String::from("index,value\n");
            for (i, v) in &rows {
                s.push_str(&format!("{i},{v:e}\n"));
            }
            s
        }
        SpectrumFormat::Json => {
            let values: Vec<Value> = rows
                .iter()
                .map(|(i, v)| json!({"index": i, "value": to_value(&Num(*v))}))
                .collect();
            pretty(&json!({"d": d, "count": count, "singular_values": values}))
        }
    };
    write_text(args.out.as_deref(), &text)
}

fn median(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn trial(args: &ExperimentArgs, tau: &Partition, snr: f64, seed: u64) -> TrialEntry {
    let mut entry = TrialEntry {
        seed,
        rank: None,
        partition: None,
        equivalent: false,
        residual: None,
        noise_proxy: None,
        block_error: None,
        error: None,
    };
    let outcome = gen_example1(args.m, args.n, tau.total(), tau, snr, seed).and_then(|inst| {
        let config = SolverConfig {
            xi: args.xi,
            ..SolverConfig::default()
        }
        .with_seed(seed);
        let run = solve_bjbdp(&inst.observed, &config)?;
        Ok((inst, run))
    });
    match outcome {
        Ok((inst, run)) => {
            let sol = &run.solution;
            entry.rank = Some(sol.rank);
            entry.partition = Some(sol.partition.parts().to_vec());
            entry.residual = Some(Num(sol.residual));
            entry.noise_proxy = Some(Num(run.noise_proxy));
            if partitions_equivalent(tau, &sol.partition).is_some()
                && sol.diagonalizer.shape() == inst.truth_a.shape()
            {
                if let Ok(cmp) = compare_solutions(
                    tau,
                    &inst.truth_a,
                    &sol.partition,
                    &sol.diagonalizer,
                    EQUIVALENCE_TOL,
                ) {
                    entry.block_error = Some(Num(cmp.block_error));
                    entry.equivalent = cmp.partitions_equivalent;
                }
            }
        }
        Err(e) => entry.error = Some(e.to_string()),
    }
    entry
}

/// Worker count from `MJBD_THREADS`; rayon's default when unset.
fn thread_count() -> CliResult<usize> {
    match std::env::var("MJBD_THREADS") {
        Ok(v) => v.trim().parse::<usize>().map_err(|_| {
            CliError::Input(format!(
                "MJBD_THREADS must be a nonnegative integer, got {v:?}"
            ))
        }),
        Err(_) => Ok(0),
    }
}

pub fn experiment(args: &ExperimentArgs) -> CliResult<()> {
    let tau = Partition::parse(&args.tau)?;
    if let Some(p) = args.p {
        if p != tau.total() {
            return Err(CliError::Input(format!(
                "partition {tau} sums to {}, not --p {p}",
                tau.total()
            )));
        }
    }
    if tau.total() > args.n {
        return Err(CliError::Input(format!(
            "p = {} exceeds n = {}",
            tau.total(),
            args.n
        )));
    }
    let ladder = args
        .snr
        .split(',')
        .map(|s| crate::parse_snr(s).map_err(CliError::Input))
        .collect::<CliResult<Vec<f64>>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count()?)
        .build()
        .map_err(|e| CliError::Input(format!("thread pool: {e}")))?;
    let jobs: Vec<(f64, u64)> = ladder
        .iter()
        .flat_map(|&snr| (0..args.trials as u64).map(move |i| (snr, i)))
        .collect();
    let entries: Vec<TrialEntry> = pool.install(|| {
        jobs.par_iter()
            .map(|&(snr, i)| trial(args, &tau, snr, args.seed.wrapping_add(i)))
            .collect()
    });
    let mut entries = entries.into_iter();
    let results = ladder
        .iter()
        .map(|&snr| {
            let trials: Vec<TrialEntry> = entries.by_ref().take(args.trials).collect();
            let ok = || trials.iter().filter(|t| t.error.is_none());
            SnrEntry {
                snr_db: Num(snr),
                identified: trials.iter().filter(|t| t.equivalent).count(),
                rank_correct: trials
                    .iter()
                    .filter(|t| t.rank == Some(tau.total()))
                    .count(),
                median_residual: Num(median(
                    ok().filter_map(|t| t.residual.map(|x| x.0)).collect(),
                )),
                median_noise_proxy: Num(median(
                    ok().filter_map(|t| t.noise_proxy.map(|x| x.0)).collect(),
                )),
                trials,
            }
        })
        .collect();
    let report = ExperimentReport {
        report_version: REPORT_VERSION,
        m: args.m,
        n: args.n,
        partition: tau.parts().to_vec(),
        trials: args.trials,
        base_seed: args.seed,
        results,
    };
    write_text(args.out.as_deref(), &pretty(&report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectrum_indices_cover_both_ends() {
        assert_eq!(spectrum_indices(10, 3), vec![1, 2, 3, 8, 9, 10]);
        assert_eq!(spectrum_indices(4, 3), vec![1, 2, 3, 4]);
        assert_eq!(spectrum_indices(4, 9), vec![1, 2, 3, 4]);
    }

    #[test]
    fn constants_parse() {
        let c = parse_constants("C=2.5, kappa=0.5").unwrap();
        assert_eq!((c.c, c.kappa), (2.5, 0.5));
        assert_eq!(parse_constants("kappa=3").unwrap().c, 1.0);
        assert!(parse_constants("C=-1").is_err());
        assert!(parse_constants("zeta=1").is_err());
    }

    #[test]
    fn sidecar_appends_suffix() {
        assert_eq!(
            sidecar(Path::new("/tmp/x.mjbd"), ".truth.json"),
            PathBuf::from("/tmp/x.mjbd.truth.json")
        );
    }
}
