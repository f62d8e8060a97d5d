mod common;

use puriscope_core::baselines::{distinguish_experiment, single_copy_purity_attack, swap_test_moment, Strategy};
use puriscope_core::bipartite::{Bipartite, CorrelatedState, PurifiedState};
use puriscope_core::channels::{canonicalize, virtual_distillation_estimate, QuantumChannel};
use puriscope_core::crypto::{run_blind_estimation, Transcript};
use puriscope_core::ensembles::{
    classical_correlate, haar_unitary, purify, sample_ensemble, EnsembleFamily, EnsembleSpec,
};
use puriscope_core::estimators::{
    estimate_moment, estimate_pca, estimate_qfi, estimate_virtual_cooling, exact_qfi_table, EstimatorReport,
};
use puriscope_core::experiments::{run_experiment, Experiment, ExperimentConfig, ExperimentOutput, QubitList};
use puriscope_core::linalg::{basis_vector, DensityMatrix, Observable};
use puriscope_core::measurement::ShotBudget;
use puriscope_core::rng::rng_from_seed;
use puriscope_core::Error;

fn purified(spectrum: &[f64], n_b: usize, seed: u64) -> PurifiedState {
    let mut rng = rng_from_seed(seed);
    let rho = DensityMatrix::new(common::density_with_spectrum(spectrum, &mut rng)).unwrap();
    PurifiedState::new(purify(&rho, n_b).unwrap()).unwrap()
}

#[test]
fn ensemble_to_estimators_end_to_end() {
    let spec = EnsembleSpec::new(EnsembleFamily::FisherS1, 3, 11);
    let sample = sample_ensemble(&spec, 0).unwrap();
    let psi = PurifiedState::new(purify(&sample.rho, 2).unwrap()).unwrap();
    let z = Observable::z_on(3, 0).unwrap();
    let budget = ShotBudget::even(40_000);
    let m = estimate_moment(&psi, 2, &budget, 1).unwrap();
    assert!(m.abs_error.unwrap() < 0.05, "{m:?}");
    let c = estimate_virtual_cooling(&psi, &z, 2, &budget, 2).unwrap();
    assert!(c.abs_error.unwrap() < 0.05, "{c:?}");
}

#[test]
fn qfi_estimate_tracks_the_exact_table() {
    let psi = purified(&[0.5, 0.3, 0.2, 0.0], 2, 5);
    let x = Observable::x_on(2, 0).unwrap();
    let (report, table) = estimate_qfi(&psi, &x, Some(3), &ShotBudget::even(200_000), 3).unwrap();
    let exact = exact_qfi_table(&psi, &x, 3).unwrap();
    assert_eq!(table.pairs.len(), exact.pairs.len());
    assert!((report.value - exact.total()).abs() < 0.1, "{} vs {}", report.value, exact.total());
}

#[test]
fn small_gap_is_reported_as_precondition() {
    let psi = purified(&[0.51, 0.49], 1, 9);
    let z = Observable::z_on(1, 0).unwrap();
    let err = estimate_pca(&psi, &z, &ShotBudget::even(1000), 1).unwrap_err();
    assert!(matches!(err, Error::Gap { .. }));
    assert!(err.is_precondition());
}

#[test]
fn reports_round_trip_through_json() {
    let psi = purified(&[0.7, 0.3], 1, 4);
    let r = estimate_moment(&psi, 3, &ShotBudget::tomography_only(5000), 8).unwrap();
    let back: EstimatorReport = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(back, r);
    assert_eq!(r.total_shots(), 5000);
}

#[test]
fn estimators_are_seed_deterministic() {
    let psi = purified(&[0.6, 0.25, 0.15, 0.0], 2, 1);
    let z = Observable::z_on(2, 1).unwrap();
    let a = estimate_virtual_cooling(&psi, &z, 3, &ShotBudget::even(8000), 99).unwrap();
    let b = estimate_virtual_cooling(&psi, &z, 3, &ShotBudget::even(8000), 99).unwrap();
    assert_eq!(a, b);
}

#[test]
fn classical_correlate_shares_purity_with_purification() {
    let mut rng = rng_from_seed(2);
    let rho = DensityMatrix::new(common::density_with_spectrum(&[0.7, 0.3], &mut rng)).unwrap();
    let cc = CorrelatedState::new(classical_correlate(&rho, 1).unwrap(), 1).unwrap();
    let pure = PurifiedState::new(purify(&rho, 1).unwrap()).unwrap();
    assert!((cc.rho_b().purity() - pure.rho_b().purity()).abs() < 1e-12);
    let r = estimate_moment(&cc, 2, &ShotBudget::tomography_only(20_000), 3).unwrap();
    assert!(r.abs_error.unwrap() < 0.03);
}

#[test]
fn baselines_agree_with_purification_on_average() {
    let mut rng = rng_from_seed(3);
    let rho = DensityMatrix::new(common::density_with_spectrum(&[0.8, 0.2], &mut rng)).unwrap();
    let swap = swap_test_moment(&rho, None, 2, 20_000, 4).unwrap();
    assert!(swap.abs_error.unwrap() < 4.0 * swap.stderr + 1e-3);
    let attack = single_copy_purity_attack(&rho, 20_000, None, 5).unwrap();
    assert!(attack.abs_error.unwrap() < 0.1);
}

#[test]
fn purification_distinguishes_purity_pair() {
    let s1 = EnsembleSpec::new(EnsembleFamily::PurityS1, 5, 0);
    let s2 = EnsembleSpec::new(EnsembleFamily::PurityS2, 5, 0);
    let r = distinguish_experiment((&s1, &s2), Strategy::Purification, 300, 200, 6).unwrap();
    assert!(r.success >= 0.9, "{r:?}");
}

#[test]
fn channel_dilation_feeds_state_estimators() {
    let ch = QuantumChannel::depolarizing(1, 0.3).unwrap();
    let iso = canonicalize(&ch).unwrap();
    let zero = DensityMatrix::from_pure(&basis_vector(2, 0)).unwrap();
    let joint = iso.dilate(&zero).unwrap();
    let out = ch.apply(&zero).unwrap();
    let diff = joint.rho_a().matrix() - out.matrix();
    assert!(diff.iter().all(|c| c.norm() < 1e-10));
    let z = Observable::pauli("Z").unwrap();
    let r = virtual_distillation_estimate(&iso, &zero, &z, &ShotBudget::even(50_000), 7).unwrap();
    assert!(r.abs_error.unwrap() < 0.05, "{r:?}");
}

#[test]
fn blind_transcript_round_trips() {
    let u = haar_unitary(2, &mut rng_from_seed(8)).unwrap();
    let z = Observable::z_on(2, 0).unwrap();
    let (res, transcript) = run_blind_estimation(&u, &z, 400, 9).unwrap();
    assert_eq!(res.rounds, 400);
    let back = Transcript::from_jsonl(&transcript.to_jsonl()).unwrap();
    assert_eq!(back, transcript);
}

#[test]
fn experiment_output_serializes_both_formats() {
    let cfg = ExperimentConfig {
        n: Some(QubitList(vec![2, 3])),
        budget: Some(4000),
        trials: Some(3),
        seed: 5,
        ..Default::default()
    };
    let out = run_experiment(Experiment::Cooling, &cfg, "test").unwrap();
    assert_eq!(out.results.len(), 2);
    let back: ExperimentOutput = serde_json::from_str(&out.to_json()).unwrap();
    assert_eq!(back.results, out.results);
    let csv = out.to_csv();
    assert_eq!(csv.lines().count(), 3);
}
