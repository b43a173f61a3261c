use mjbd::bibd::{bi_block_diagonalize, block_factorize, split_spectrum};
use mjbd::commutant::null_basis;
use mjbd::subspace::largest_angle_between;
use mjbd::synth::{gen_example1, gen_isa_covariances};
use mjbd::types::{off_block_diag_part, partitions_equivalent};
use mjbd::zeig::ZeigOptions;
use mjbd::{solve_bjbdp, DeltaPolicy, Error, MatrixSet, Partition, SolverConfig};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

fn two_block(q1: usize, q2: usize, snr: f64, seed: u64) -> MatrixSet {
    let tau = Partition::new(vec![q1, q2]).unwrap();
    let q = q1 + q2;
    gen_example1(4, q, q, &tau, snr, seed).unwrap().observed
}

#[test]
fn noiseless_two_block_set_splits_exactly() {
    for seed in 0..5 {
        let set = two_block(2, 3, f64::INFINITY, seed);
        let split = bi_block_diagonalize(&set, 0.0, &ZeigOptions::default()).unwrap();
        assert!(split.is_split());
        let mut sizes = split.partition.parts().to_vec();
        sizes.sort();
        assert_eq!(sizes, vec![2, 3]);
        let scale: f64 = set.iter().map(|d| d.norm_squared()).sum();
        assert!(
            split.split_residual <= 1e-16 * scale * 1e3,
            "seed {seed}: {}",
            split.split_residual
        );
    }
}

#[test]
fn generic_set_is_irreducible() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..5 {
        let mats = (0..3)
            .map(|_| {
                let g = gaussian(&mut rng, 3, 3);
                &g + g.transpose()
            })
            .collect();
        let set = MatrixSet::new(mats).unwrap();
        assert_eq!(null_basis(&set, 0.0).unwrap().len(), 1);
        let split = bi_block_diagonalize(&set, 0.0, &ZeigOptions::default()).unwrap();
        assert!(!split.is_split());
        assert_eq!(split.z, DMatrix::identity(3, 3));
    }
}

#[test]
fn noisy_split_obeys_diagonalizer_inequality() {
    for seed in 0..20 {
        let set = two_block(2, 2, 60.0, 100 + seed);
        let delta = 1e-2;
        let split = bi_block_diagonalize(&set, delta, &ZeigOptions::default()).unwrap();
        assert!(split.is_split(), "seed {seed}");
        // split_residual is O(delta^2); the constant is instance dependent
        assert!(
            split.split_residual <= 1e4 * delta * delta,
            "seed {seed}: {}",
            split.split_residual
        );
        for d in set.iter() {
            let phi = &split.z_inv * d * split.z_inv.transpose();
            let off = off_block_diag_part(&phi, &split.partition).unwrap();
            assert!(off.norm() <= split.split_residual.sqrt() * (1.0 + 1e-12));
        }
        let (r1, r2) = split.cluster_centers.unwrap();
        let (q1, q2) = (
            split.partition.parts()[0] as f64,
            split.partition.parts()[1] as f64,
        );
        let tol = 10.0 * delta * 4.0;
        assert!((q1 * r1 + q2 * r2).abs() <= tol);
        assert!((q1 * r1 * r1 + q2 * r2 * r2 - 4.0).abs() <= tol);
    }
}

#[test]
fn factorization_recovers_invariant_subspaces() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let s = gaussian(&mut rng, 3, 3);
        let s_inv = s.clone().try_inverse().unwrap();
        let x = &s
            * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 1.0, -1.0]))
            * &s_inv;
        let split = split_spectrum(&x).unwrap();
        assert_eq!((split.q1, split.q2), (2, 1));
        let f = block_factorize(&x, &split).unwrap();
        let upper = f.y.columns(0, 2).into_owned();
        let lower = f.y.columns(2, 1).into_owned();
        assert!(largest_angle_between(&upper, &s.columns(0, 2).into_owned()).unwrap() <= 1e-8);
        assert!(largest_angle_between(&lower, &s.columns(2, 1).into_owned()).unwrap() <= 1e-8);
        let mut gamma = DMatrix::zeros(3, 3);
        gamma.view_mut((0, 0), (2, 2)).copy_from(&f.gamma1);
        gamma.view_mut((2, 2), (1, 1)).copy_from(&f.gamma2);
        assert!((&f.y * gamma * &f.y_inv - &x).norm() <= 1e-8 * x.norm());
    }
}

#[test]
fn complex_pair_stays_in_one_block() {
    let x = DMatrix::from_row_slice(3, 3, &[2.0, -1.0, 0.3, 1.0, 2.0, 0.1, 0.0, 0.0, -3.0]);
    let split = split_spectrum(&x).unwrap();
    assert_eq!((split.q1, split.q2), (2, 1));
    let f = block_factorize(&x, &split).unwrap();
    assert_eq!(f.gamma1.shape(), (2, 2));
    assert!((f.gamma2[(0, 0)] + 3.0).abs() < 1e-12);
}

#[test]
fn driver_conserves_size_and_terminates() {
    let tau = Partition::new(vec![1, 2, 3]).unwrap();
    for seed in 0..10 {
        let inst = gen_example1(6, 9, 6, &tau, 80.0, seed).unwrap();
        let run = solve_bjbdp(&inst.observed, &SolverConfig::default().with_seed(seed)).unwrap();
        let sol = &run.solution;
        assert_eq!(sol.partition.total(), sol.rank);
        assert!(run.history.len() < 2 * sol.rank);
        assert!(run.cond_a_hat.is_finite());
        let svals = sol.diagonalizer.clone().svd(false, false).singular_values;
        assert!(svals.min() > 1e-10 * svals.max());
        for rec in &run.history {
            assert!(rec.discarded_coupling <= rec.split_residual.sqrt() * (1.0 + 1e-9) + 1e-300);
        }
    }
}

#[test]
fn fixed_threshold_matches_auto_on_clean_data() {
    let tau = Partition::new(vec![2, 2, 3]).unwrap();
    let inst = gen_example1(5, 9, 7, &tau, f64::INFINITY, 3).unwrap();
    let auto = solve_bjbdp(&inst.observed, &SolverConfig::default()).unwrap();
    let fixed = SolverConfig {
        delta: DeltaPolicy::Fixed(1e-8),
        ..SolverConfig::default()
    };
    let fixed = solve_bjbdp(&inst.observed, &fixed).unwrap();
    assert!(partitions_equivalent(&tau, &auto.solution.partition).is_some());
    assert!(partitions_equivalent(&tau, &fixed.solution.partition).is_some());
}

#[test]
fn same_seed_same_answer() {
    let tau = Partition::new(vec![2, 3]).unwrap();
    let inst = gen_example1(4, 7, 5, &tau, 60.0, 17).unwrap();
    let config = SolverConfig::default().with_seed(9);
    let a = solve_bjbdp(&inst.observed, &config).unwrap();
    let b = solve_bjbdp(&inst.observed, &config).unwrap();
    assert_eq!(a.solution.diagonalizer, b.solution.diagonalizer);
    assert_eq!(a.solution.residual, b.solution.residual);
}

#[test]
fn zero_input_is_rank_undetectable() {
    let set = MatrixSet::new(vec![DMatrix::zeros(4, 4); 3]).unwrap();
    assert!(matches!(
        solve_bjbdp(&set, &SolverConfig::default()),
        Err(Error::RankUndetectable { .. })
    ));
}

#[test]
fn whitening_recovers_isa_groups_in_original_coordinates() {
    let groups = Partition::new(vec![2, 3]).unwrap();
    let inst = gen_isa_covariances(&groups, 5, 8, 20_000, 2).unwrap();
    let config = SolverConfig {
        whiten: true,
        ..SolverConfig::default()
    };
    let run = solve_bjbdp(&inst.observed, &config).unwrap();
    assert!(partitions_equivalent(&groups, &run.solution.partition).is_some());
    // each recovered group spans the mixing columns of one true group
    for r in run.solution.partition.ranges() {
        let cols = run
            .solution
            .diagonalizer
            .columns(r.start, r.len())
            .into_owned();
        let best = groups
            .ranges()
            .into_iter()
            .filter(|g| g.len() == r.len())
            .map(|g| {
                largest_angle_between(&cols, &inst.truth_a.columns(g.start, g.len()).into_owned())
                    .unwrap()
            })
            .fold(f64::INFINITY, f64::min);
        assert!(best < 0.1, "angle {best}");
    }
}
