use mjbd::commutant::{build_l, null_basis, vec};
use mjbd::diagnostics::{build_gjj, build_gjk, compare_solutions, identifiability, BoundConstants};
use mjbd::subspace::{canonical_angles, orthonormalize, sin_theta_complement, spectral_profile};
use mjbd::synth::gen_example1;
use mjbd::types::{
    assemble_block_diagonal, block_diag_part, normalize_gram_blocks, off_block_diag_part,
    offblock_residual, stack_underline,
};
use mjbd::zeig::{solve_opt, ZeigOptions};
use mjbd::{MatrixSet, Partition};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

fn random_set(rng: &mut ChaCha8Rng, m: usize, q: usize) -> MatrixSet {
    MatrixSet::new((0..m).map(|_| gaussian(rng, q, q)).collect()).unwrap()
}

fn block_diagonal(rng: &mut ChaCha8Rng, tau: &Partition) -> DMatrix<f64> {
    let blocks: Vec<_> = tau.parts().iter().map(|&k| gaussian(rng, k, k)).collect();
    assemble_block_diagonal(&blocks, tau).unwrap()
}

fn partition_strategy() -> impl Strategy<Value = Partition> {
    prop::collection::vec(1usize..4, 1..4).prop_map(|parts| Partition::new(parts).unwrap())
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn block_diag_part_is_an_orthogonal_projector(tau in partition_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = tau.total();
        let (x, y) = (gaussian(&mut rng, p, p), gaussian(&mut rng, p, p));
        let bx = block_diag_part(&x, &tau).unwrap();
        prop_assert_eq!(&block_diag_part(&bx, &tau).unwrap(), &bx);
        let lin = block_diag_part(&(&x * 2.0 - &y), &tau).unwrap();
        prop_assert!((lin - (&bx * 2.0 - block_diag_part(&y, &tau).unwrap())).amax() < 1e-14);
        let off = off_block_diag_part(&x, &tau).unwrap();
        prop_assert!(rel(x.norm_squared(), bx.norm_squared() + off.norm_squared()) < 1e-14);
    }

    #[test]
    fn residual_is_invariant_under_block_changes(tau in partition_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = tau.total();
        let n = p + 2;
        let a = gaussian(&mut rng, n, p);
        let set = MatrixSet::new((0..3).map(|_| gaussian(&mut rng, n, n)).collect()).unwrap();
        let base = offblock_residual(&set, &a, &tau).unwrap();
        let w = block_diagonal(&mut rng, &tau);
        prop_assume!(w.clone().svd(false, false).singular_values.min() > 1e-3);
        let moved = offblock_residual(&set, &(&a * w), &tau).unwrap();
        prop_assert!(rel(base, moved) < 1e-8, "{} vs {}", base, moved);

        // reverse the block order
        let ranges = tau.ranges();
        let mut cols = Vec::new();
        for r in ranges.iter().rev() {
            cols.extend(r.clone().map(|c| a.column(c).into_owned()));
        }
        let permuted = DMatrix::from_columns(&cols);
        let tau_rev = Partition::new(tau.parts().iter().rev().copied().collect()).unwrap();
        let swapped = offblock_residual(&set, &permuted, &tau_rev).unwrap();
        prop_assert!(rel(base, swapped) < 1e-8, "{} vs {}", base, swapped);
    }

    #[test]
    fn identity_lies_in_every_commutant(m in 1usize..5, q in 1usize..7, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let set = random_set(&mut rng, m, q);
        let l = build_l(&set);
        prop_assert!((&l * vec(&DMatrix::identity(q, q))).amax() <= 1e-15 * l.amax().max(1.0));
    }

    #[test]
    fn commutant_operator_matches_its_definition(m in 1usize..4, q in 1usize..6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let set = random_set(&mut rng, m, q);
        let x = gaussian(&mut rng, q, q);
        let lhs = build_gjj(&set) * vec(&x);
        let mut rhs = Vec::new();
        for d in set.iter() {
            rhs.extend((d * &x - x.transpose() * d).iter().copied());
        }
        prop_assert!((lhs - DVector::from_vec(rhs)).amax() < 1e-12 * (1.0 + x.amax()));
    }

    #[test]
    fn coupling_operator_matches_its_definition(m in 1usize..4, pj in 1usize..4, pk in 1usize..4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_set(&mut rng, m, pj);
        let t = random_set(&mut rng, m, pk);
        let x = gaussian(&mut rng, pj, pk);
        let y = gaussian(&mut rng, pj, pk);
        let g = build_gjk(&s, &t).unwrap();
        let mut arg = vec(&x).as_slice().to_vec();
        arg.extend((-vec(&y)).iter());
        let lhs = g * DVector::from_vec(arg);
        let mut rhs = Vec::new();
        for (si, ti) in s.iter().zip(t.iter()) {
            rhs.extend((si * &x - &y * ti).iter().copied());
            rhs.extend((si.transpose() * &x - &y * ti.transpose()).iter().copied());
        }
        prop_assert!((lhs - DVector::from_vec(rhs)).amax() < 1e-12 * 10.0);
    }

    #[test]
    fn planted_commutant_has_one_direction_per_block(tau in partition_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = tau.total();
        let z = gaussian(&mut rng, p, p);
        prop_assume!(z.clone().svd(false, false).singular_values.min() > 1e-2);
        let set = MatrixSet::new((0..3).map(|_| &z * block_diagonal(&mut rng, &tau) * z.transpose()).collect()).unwrap();
        prop_assert!(null_basis(&set, 0.0).unwrap().len() >= tau.cardinality());
    }

    #[test]
    fn sine_of_largest_angle_matches_complement_formula(n in 2usize..8, k in 1usize..4, seed in any::<u64>()) {
        prop_assume!(k < n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = orthonormalize(&gaussian(&mut rng, n, k));
        let y = orthonormalize(&gaussian(&mut rng, n, k));
        let largest = canonical_angles(&x, &y).unwrap()[0];
        prop_assert!((largest.sin() - sin_theta_complement(&x, &y).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn weyl_inequalities_hold_for_planted_noise(snr in 0.0f64..100.0, seed in any::<u64>()) {
        let tau = Partition::new(vec![2, 3]).unwrap();
        let inst = gen_example1(4, 8, 5, &tau, snr, seed).unwrap();
        let clean = inst.truth_blocks.map(|s| &inst.truth_a * s * inst.truth_a.transpose()).unwrap();
        let noise = MatrixSet::new(inst.observed.iter().zip(clean.iter()).map(|(c, c0)| c - c0).collect()).unwrap();
        let e = stack_underline(&noise).singular_values().max();
        let (noisy, exact) = (spectral_profile(&inst.observed), spectral_profile(&clean));
        prop_assert!(noisy.phi(5) >= exact.phi(5) - e - 1e-12 * exact.phi(1));
        prop_assert!(noisy.phi(6) <= e + 1e-12 * exact.phi(1));
    }

    #[test]
    fn noiseless_stack_has_rank_p(tau in partition_strategy(), seed in any::<u64>()) {
        let p = tau.total();
        let inst = gen_example1(4, p + 3, p, &tau, f64::INFINITY, seed).unwrap();
        let prof = spectral_profile(&inst.observed);
        let tol = 1e-10 * prof.phi(1);
        prop_assert_eq!(prof.singular_values.iter().filter(|&&s| s > tol).count(), p);
    }

    #[test]
    fn feasible_minimizer_meets_trace_constraints(q1 in 1usize..4, q2 in 1usize..4, seed in any::<u64>()) {
        let tau = Partition::new(vec![q1, q2]).unwrap();
        let q = q1 + q2;
        let inst = gen_example1(3, q, q, &tau, f64::INFINITY, seed).unwrap();
        let opt = solve_opt(&inst.observed, 0.0, &ZeigOptions { seed, ..ZeigOptions::default() }).unwrap();
        prop_assert!(opt.feasible);
        let x = &opt.x_star;
        // both traces are sums whose rounding error scales with |X|_F^2
        let tol = 1e-8 * q as f64 + 1e-13 * x.norm_squared();
        prop_assert!(x.trace().abs() <= tol);
        prop_assert!(((x * x).trace() - q as f64).abs() <= tol);
    }

    #[test]
    fn omegas_ignore_orthogonal_block_rotations(seed in any::<u64>()) {
        let tau = Partition::new(vec![2, 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks: Vec<MatrixSet> = tau.parts().iter().map(|&k| random_set(&mut rng, 4, k)).collect();
        let rotated: Vec<MatrixSet> = blocks
            .iter()
            .map(|b| {
                let q = orthonormalize(&gaussian(&mut rng, b.dim(), b.dim()));
                b.map(|s| q.transpose() * s * &q).unwrap()
            })
            .collect();
        let r0 = identifiability(&blocks, BoundConstants::default(), None).unwrap();
        let r1 = identifiability(&rotated, BoundConstants::default(), None).unwrap();
        prop_assert!(rel(r0.omega_ir, r1.omega_ir) < 1e-8);
        prop_assert!(rel(r0.omega_neq, r1.omega_neq) < 1e-8);
    }

    #[test]
    fn solution_compares_equal_to_itself(tau in partition_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = tau.total();
        let a = gaussian(&mut rng, p + 2, p);
        let cmp = compare_solutions(&tau, &a, &tau, &a, 1e-10).unwrap();
        prop_assert!(cmp.equivalent);
        prop_assert!(cmp.block_error < 1e-12);
        let (normalized, _) = normalize_gram_blocks(&a, &tau).unwrap();
        let gram = normalized.transpose() * &normalized;
        prop_assert!((block_diag_part(&gram, &tau).unwrap() - DMatrix::identity(p, p)).amax() < 1e-10);
    }
}
