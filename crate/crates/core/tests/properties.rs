mod common;

use num_complex::Complex64;
use proptest::prelude::*;
use puriscope_core::bipartite::{Bipartite, PurifiedState};
use puriscope_core::ensembles::purify;
use puriscope_core::linalg::{
    eigh, kron, outer, partial_trace, trace_norm, trace_product, CMatrix, DensityMatrix, PureState, Subsystem,
};
use puriscope_core::measurement::sample_counts;
use puriscope_core::rng::rng_from_seed;
use rand::Rng;

fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partial_trace_is_dual_to_tensoring(seed in any::<u64>(), n_a in 1usize..4, n_b in 1usize..4) {
        let mut rng = rng_from_seed(seed);
        let (da, db) = (1usize << n_a, 1usize << n_b);
        let psi = PureState::new(common::unit_vector(da * db, &mut rng), n_a, n_b).unwrap();
        let rho_a = partial_trace(&psi, &Subsystem::A).unwrap();
        let x = common::hermitian_with_trace_norm(da, 1.0, &mut rng);
        let lhs = psi.expectation(&kron(&x, &CMatrix::identity(db, db))).unwrap();
        let rhs = trace_product(&x, rho_a.matrix());
        prop_assert!((lhs - rhs).norm() < 1e-10);
        let keep: Vec<usize> = (0..n_a).collect();
        let via_qubits = partial_trace(&psi.to_density(), &Subsystem::Qubits(keep)).unwrap();
        prop_assert!(max_abs(&(via_qubits.matrix() - rho_a.matrix())) < 1e-10);
    }

    #[test]
    fn eigh_round_trips(seed in any::<u64>(), d in 1usize..9) {
        let mut rng = rng_from_seed(seed);
        let spectrum = common::random_spectrum(d, &mut rng);
        let m = common::density_with_spectrum(&spectrum, &mut rng);
        let e = eigh(&m, 1e-12).unwrap();
        prop_assert!(max_abs(&(e.reconstruct() - &m)) < 1e-10);
        prop_assert!(e.eigenvalues().windows(2).all(|w| w[0] >= w[1] - 1e-12));
        let v = e.eigenvectors();
        prop_assert!(max_abs(&(v.adjoint() * v - CMatrix::identity(d, d))) < 1e-10);
    }

    #[test]
    fn purification_reproduces_both_marginals(seed in any::<u64>(), n_a in 1usize..4, n_b in 1usize..3) {
        let mut rng = rng_from_seed(seed);
        let d = 1usize << n_a;
        let rank = rng.random_range(1..=d.min(1 << n_b));
        let mut spectrum = common::random_spectrum(rank, &mut rng);
        spectrum.resize(d, 0.0);
        let rho = DensityMatrix::new(common::density_with_spectrum(&spectrum, &mut rng)).unwrap();
        let psi = PurifiedState::new(purify(&rho, n_b).unwrap()).unwrap();
        prop_assert!(max_abs(&(psi.rho_a().matrix() - rho.matrix())) < 1e-10);
        prop_assert!((psi.rho_a().purity() - psi.rho_b().purity()).abs() < 1e-10);
        let la = psi.rho_a().spectral().eigenvalues().to_vec();
        let lb = psi.rho_b().spectral().eigenvalues().to_vec();
        for j in 0..rank {
            prop_assert!((la[j] - lb[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn perturbed_principal_component_obeys_bounds(seed in any::<u64>(), d in 2usize..8, frac in 0.0f64..0.5) {
        let mut rng = rng_from_seed(seed);
        let spectrum = common::random_spectrum(d, &mut rng);
        let gap = spectrum[0] - spectrum[1];
        prop_assume!(gap > 1e-6);
        let eps = frac * gap;
        let m = common::density_with_spectrum(&spectrum, &mut rng);
        let m2 = &m + common::hermitian_with_trace_norm(d, eps, &mut rng);
        let (a, b) = (eigh(&m, 1e-12).unwrap(), eigh(&m2, 1e-12).unwrap());
        prop_assert!((a.eigenvalues()[0] - b.eigenvalues()[0]).abs() <= eps + 1e-12);
        let dist = trace_norm(&(a.projector(0) - b.projector(0)));
        prop_assert!(dist <= 2.0 * (2.0 * eps / gap).sqrt() + 1e-12);
    }

    #[test]
    fn pair_operator_is_stable(seed in any::<u64>(), d in 2usize..5, s1 in 0.0f64..0.4, s2 in 0.0f64..0.4) {
        let mut rng = rng_from_seed(seed);
        let (p1, p2) = (common::unit_vector(d, &mut rng), common::unit_vector(d, &mut rng));
        let (q1, q2) = (common::nudge(&p1, s1, &mut rng), common::nudge(&p2, s2, &mut rng));
        let e1 = trace_norm(&(outer(&p1, &p1) - outer(&q1, &q1)));
        let e2 = trace_norm(&(outer(&p2, &p2) - outer(&q2, &q2)));
        let lhs = trace_norm(&(common::p12(&p1, &p2) - common::p12(&q1, &q2)));
        prop_assert!(lhs <= 2.0 * (e1 + e2) + 1e-12);
    }

    #[test]
    fn moments_are_lipschitz(seed in any::<u64>(), d in 2usize..8, t in 2u32..5, frac in 0.0f64..1.0) {
        let mut rng = rng_from_seed(seed);
        let rho = common::density_with_spectrum(&common::random_spectrum(d, &mut rng), &mut rng);
        let eps = frac / t as f64;
        let hat = &rho + common::hermitian_with_trace_norm(d, eps, &mut rng);
        let diff = (common::power_trace(&hat, t) - common::power_trace(&rho, t)).abs();
        prop_assert!(diff <= 2.0 * eps * t as f64 + 1e-12);
    }

    #[test]
    fn counts_sum_to_shots(seed in any::<u64>(), raw in prop::collection::vec(0.0f64..1.0, 1..16), shots in 0u64..5000) {
        let total: f64 = raw.iter().sum();
        prop_assume!(total > 0.0);
        let probs: Vec<f64> = raw.iter().map(|p| p / total).collect();
        let counts = sample_counts(&probs, shots, &mut rng_from_seed(seed));
        prop_assert_eq!(counts.iter().sum::<u64>(), shots);
        for (c, p) in counts.iter().zip(&probs) {
            if *p == 0.0 {
                prop_assert_eq!(*c, 0);
            }
        }
    }

    #[test]
    fn steering_matches_joint_expectation(seed in any::<u64>(), n_a in 1usize..3, n_b in 1usize..3) {
        let mut rng = rng_from_seed(seed);
        let (da, db) = (1usize << n_a, 1usize << n_b);
        let psi = PurifiedState::new(PureState::new(common::unit_vector(da * db, &mut rng), n_a, n_b).unwrap()).unwrap();
        let o = common::hermitian_with_trace_norm(da, 1.0, &mut rng);
        let x = common::hermitian_with_trace_norm(db, 1.0, &mut rng);
        let joint = psi.psi().expectation(&kron(&o, &x)).unwrap();
        let via = psi.product_expectation(&o, &x).unwrap();
        prop_assert!((joint - Complex64::new(via, 0.0)).norm() < 1e-10);
    }
}
