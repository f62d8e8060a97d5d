//! Comparison arms: the controlled-cycle SWAP test on t copies, the
//! single-copy randomized-measurement purity attack, and the ensemble
//! distinguishing harness.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bipartite::PurifiedState;
use crate::ensembles::{analytic_mean_purity, purify, sample_ensemble_with, EnsembleFamily, EnsembleSpec};
use crate::error::{Error, Result};
use crate::estimators::{cooled_expectation, estimate_moment, estimate_qfi, estimate_virtual_cooling, EstimatorReport};
use crate::linalg::{CMatrix, CVector, DensityMatrix, Observable};
use crate::measurement::{default_randomized_split, randomized_measurement_purity, sample_counts, ShotBudget};
use crate::rng::{derive_path, rng_from_seed};
use crate::stats::{histogram_mean, wilson};

/// Qubit cap for the SWAP-test register: control plus `t` copies.
pub const MAX_SWAP_QUBITS: usize = 13;
pub const MAX_ATTACK_QUBITS: usize = 10;

// ---------------------------------------------------------------------------
// SWAP test

fn swap_guard(rho: &DensityMatrix, t: u32) -> Result<()> {
    if t < 2 {
        return Err(Error::Domain(format!("cycle length {t} must be at least 2")));
    }
    let qubits = 1 + t as usize * rho.n_qubits();
    if qubits > MAX_SWAP_QUBITS {
        return Err(Error::Guard(format!("SWAP test needs {qubits} qubits, the cap is {MAX_SWAP_QUBITS}")));
    }
    Ok(())
}

/// `C|x_1 .. x_t> = |x_t x_1 .. x_(t-1)>` on `t` registers of dimension `d`.
fn cycle(v: &CVector, d: usize, t: usize) -> CVector {
    let block = d.pow(t as u32 - 1);
    let mut out = CVector::zeros(v.len());
    for (x, amp) in v.iter().enumerate() {
        let (head, last) = (x / d, x % d);
        out[last * block + head] = *amp;
    }
    out
}

/// Outcome distribution of (control in X, copy 1 in the eigenbasis of O)
/// after the controlled cycle, for one product branch `v_1 (x) .. (x) v_t`.
/// Index `x * d + k` with `x = 0` for `+`.
fn branch_distribution(branch: &[CVector], o_basis: &CMatrix) -> Vec<f64> {
    let d = o_basis.nrows();
    let t = branch.len();
    let w = branch[1..].iter().fold(branch[0].clone(), |acc, v| acc.kronecker(v));
    let cw = cycle(&w, d, t);
    let rest = w.len() / d;
    let mut out = vec![0.0; 2 * d];
    for (x, sign) in [(0usize, 1.0), (1, -1.0)] {
        let amp = (&w + &cw * crate::linalg::real(sign)) * crate::linalg::real(0.5);
        let m = CMatrix::from_fn(d, rest, |i, j| amp[i * rest + j]);
        let rotated = o_basis.adjoint() * m;
        for k in 0..d {
            out[x * d + k] = rotated.row(k).iter().map(|c| c.norm_sqr()).sum();
        }
    }
    out
}

/// Exact outcome distribution for `rho^(x)t`, unravelled into eigenvector
/// branches so the register holds `1 + t n` qubits. Each branch is what the
/// purified copies look like once their B halves are traced out.
fn swap_distribution(rho: &DensityMatrix, o: &Observable, t: u32) -> Vec<f64> {
    let spec = rho.spectral();
    let r = spec.rank().max(1);
    let lambdas: Vec<f64> = spec.eigenvalues()[..r].iter().map(|l| l.max(0.0)).collect();
    let vecs: Vec<CVector> = (0..r).map(|j| spec.vector(j)).collect();
    let o_basis = o.spectral().eigenvectors();
    let n_branches = r.pow(t);
    let parts: Vec<Vec<f64>> = (0..n_branches)
        .into_par_iter()
        .map(|mut idx| {
            let mut weight = 1.0;
            let mut branch = Vec::with_capacity(t as usize);
            for _ in 0..t {
                let j = idx % r;
                idx /= r;
                weight *= lambdas[j];
                branch.push(vecs[j].clone());
            }
            branch_distribution(&branch, o_basis).into_iter().map(|p| p * weight).collect()
        })
        .collect();
    let mut total = vec![0.0; 2 * rho.dim()];
    for p in parts {
        for (a, b) in total.iter_mut().zip(p) {
            *a += b;
        }
    }
    total
}

fn swap_values(o: &Observable) -> Vec<f64> {
    let ev = o.spectral().eigenvalues();
    ev.iter().copied().chain(ev.iter().map(|e| -e)).collect()
}

/// Infinite-shot `<X (x) O_1>` of the controlled-cycle circuit.
pub fn swap_test_exact(rho: &DensityMatrix, o: Option<&Observable>, t: u32) -> Result<f64> {
    swap_guard(rho, t)?;
    let id = Observable::identity(rho.n_qubits());
    let o = o.unwrap_or(&id);
    check_dim(rho, o)?;
    let dist = swap_distribution(rho, o, t);
    Ok(dist.iter().zip(swap_values(o)).map(|(p, v)| p * v).sum())
}

fn check_dim(rho: &DensityMatrix, o: &Observable) -> Result<()> {
    if o.dim() != rho.dim() {
        return Err(Error::Dimension(format!(
            "observable of dimension {} on state of dimension {}",
            o.dim(),
            rho.dim()
        )));
    }
    Ok(())
}

/// `Tr(O rho^t)` (or `Tr(rho^t)` without `o`) from `shots` runs of the
/// controlled-cycle circuit on `|+> (x) rho^(x)t`.
pub fn swap_test_moment(
    rho: &DensityMatrix,
    o: Option<&Observable>,
    t: u32,
    shots: u64,
    seed: u64,
) -> Result<EstimatorReport> {
    swap_guard(rho, t)?;
    if shots == 0 {
        return Err(Error::InsufficientData("no shots".into()));
    }
    let id = Observable::identity(rho.n_qubits());
    let o = o.unwrap_or(&id);
    check_dim(rho, o)?;
    let dist = swap_distribution(rho, o, t);
    let values = swap_values(o);
    let exact: f64 = dist.iter().zip(&values).map(|(p, v)| p * v).sum();
    let mut rng = rng_from_seed(seed);
    let counts = sample_counts(&dist, shots, &mut rng);
    let (value, stderr) = histogram_mean(&values, &counts);
    let truth = cooled_expectation(rho, o.matrix(), t);
    Ok(EstimatorReport::new("swap_test", value, Some(truth), stderr, seed)
        .with_shots("circuit", shots)
        .with_extra("t", t as f64)
        .with_extra("infinite_shot", exact))
}

// ---------------------------------------------------------------------------
// Single-copy attack

/// Purity of `rho` from randomized measurements on single copies, with no
/// access to a purifying register. `split` overrides the default
/// `(unitaries, shots per unitary)` allocation of `total_budget`.
pub fn single_copy_purity_attack(
    rho: &DensityMatrix,
    total_budget: u64,
    split: Option<(u64, u64)>,
    seed: u64,
) -> Result<EstimatorReport> {
    if rho.n_qubits() > MAX_ATTACK_QUBITS {
        return Err(Error::Guard(format!("{} qubits exceeds the attack cap {MAX_ATTACK_QUBITS}", rho.n_qubits())));
    }
    let (k, m) = split.unwrap_or_else(|| default_randomized_split(total_budget));
    let mut rng = rng_from_seed(seed);
    let r = randomized_measurement_purity(rho, k, m, &mut rng)?;
    Ok(EstimatorReport::new("single_copy_purity", r.value, Some(rho.purity()), r.stderr, seed)
        .with_shots("randomized", k * m)
        .with_extra("n", rho.n_qubits() as f64)
        .with_extra("unitaries", k as f64)
        .with_extra("shots_per_unitary", m as f64))
}

// ---------------------------------------------------------------------------
// Distinguishing

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Purification,
    SingleCopy,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Self::Purification => "purification",
            Self::SingleCopy => "single_copy",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Statistic {
    Purity,
    Cooling,
    Fisher,
}

fn statistic_of(family: EnsembleFamily) -> Option<Statistic> {
    use EnsembleFamily::*;
    match family {
        PurityS1 | PurityS2 => Some(Statistic::Purity),
        VcPcaS1 | VcPcaS2 => Some(Statistic::Cooling),
        FisherS1 | FisherS2 => Some(Statistic::Fisher),
        _ => None,
    }
}

/// Analytic mean of the targeted statistic. The Fisher value is the large-n
/// limit with ordered pairs counted.
fn analytic_mean(family: EnsembleFamily, n: usize) -> Result<f64> {
    use EnsembleFamily::*;
    match family {
        PurityS1 | PurityS2 => analytic_mean_purity(family, n),
        VcPcaS1 => Ok(0.125),
        VcPcaS2 => Ok(-0.125),
        FisherS1 => Ok(1.0 / 14.0),
        FisherS2 => Ok(0.0),
        other => Err(Error::UnknownPairing(format!("{other:?} has no distinguishing statistic"))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistinguishResult {
    pub n: usize,
    pub strategy: Strategy,
    pub budget: u64,
    pub trials: u64,
    pub successes: u64,
    pub success: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub threshold: f64,
    /// Trials where the estimator's precondition failed and the guess fell
    /// back to the second family.
    pub fallbacks: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub strategy: Strategy,
    pub budget: u64,
    pub success: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl From<&DistinguishResult> for SweepRow {
    fn from(r: &DistinguishResult) -> Self {
        Self {
            n: r.n,
            strategy: r.strategy,
            budget: r.budget,
            success: r.success,
            ci_low: r.ci_low,
            ci_high: r.ci_high,
        }
    }
}

/// Run the strategy's estimator on one state. `None` means the estimator
/// refused the instance.
fn statistic_value(
    stat: Statistic,
    strategy: Strategy,
    rho: &DensityMatrix,
    budget: u64,
    seed: u64,
) -> Result<Option<f64>> {
    let n = rho.n_qubits();
    match (stat, strategy) {
        (Statistic::Purity, Strategy::SingleCopy) => {
            Ok(Some(single_copy_purity_attack(rho, budget, None, seed)?.value))
        }
        (_, Strategy::SingleCopy) => {
            Err(Error::UnknownPairing("the single-copy strategy only targets purity pairs".into()))
        }
        (Statistic::Purity, Strategy::Purification) => {
            let s = PurifiedState::new(purify(rho, 1)?)?;
            Ok(Some(estimate_moment(&s, 2, &ShotBudget::tomography_only(budget), seed)?.value))
        }
        (Statistic::Cooling, Strategy::Purification) => {
            let s = PurifiedState::new(purify(rho, 2)?)?;
            let o = Observable::z_on(n, 0)?;
            Ok(Some(estimate_virtual_cooling(&s, &o, 2, &ShotBudget::even(budget), seed)?.value))
        }
        (Statistic::Fisher, Strategy::Purification) => {
            let s = PurifiedState::new(purify(rho, 2)?)?;
            let o = Observable::x_on(n, 0)?;
            match estimate_qfi(&s, &o, Some(3), &ShotBudget::even(budget), seed) {
                Ok((r, _)) => Ok(Some(r.value)),
                Err(e) if e.is_precondition() => Ok(None),
                Err(e) => Err(e),
            }
        }
    }
}

/// Success probability of telling `pair.0` from `pair.1` with one estimate
/// per trial. The hidden label is drawn uniformly; the guess thresholds the
/// estimate at the midpoint of the two analytic means, ties going to
/// `pair.1`.
pub fn distinguish_experiment(
    pair: (&EnsembleSpec, &EnsembleSpec),
    strategy: Strategy,
    budget: u64,
    trials: u64,
    seed: u64,
) -> Result<DistinguishResult> {
    let (s1, s2) = pair;
    let stat = statistic_of(s1.family)
        .filter(|s| Some(*s) == statistic_of(s2.family))
        .ok_or_else(|| Error::UnknownPairing(format!("{:?} vs {:?}", s1.family, s2.family)))?;
    if trials == 0 {
        return Err(Error::InsufficientData("no trials".into()));
    }
    let (m1, m2) = (analytic_mean(s1.family, s1.n)?, analytic_mean(s2.family, s2.n)?);
    let threshold = 0.5 * (m1 + m2);
    let direction = if m1 >= m2 { 1.0 } else { -1.0 };

    let outcomes: Vec<Result<(bool, bool)>> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let hidden_first = rng_from_seed(derive_path(seed, &[i, 0])).random_bool(0.5);
            let spec = if hidden_first { s1 } else { s2 };
            let sample = sample_ensemble_with(spec, &mut rng_from_seed(derive_path(seed, &[i, 1])))?;
            let value = statistic_value(stat, strategy, &sample.rho, budget, derive_path(seed, &[i, 2]))?;
            let guess_first = value.is_some_and(|v| (v - threshold) * direction > 0.0);
            Ok((guess_first == hidden_first, value.is_none()))
        })
        .collect();
    let mut successes = 0;
    let mut fallbacks = 0;
    for o in outcomes {
        let (ok, fell_back) = o?;
        successes += ok as u64;
        fallbacks += fell_back as u64;
    }
    let p = wilson(successes, trials);
    Ok(DistinguishResult {
        n: s1.n,
        strategy,
        budget,
        trials,
        successes,
        success: p.estimate,
        ci_low: p.ci_low,
        ci_high: p.ci_high,
        threshold,
        fallbacks,
    })
}

/// One distinguishing run per `n`, with the same trial seeds at every `n`.
pub fn distinguish_sweep(
    families: (EnsembleFamily, EnsembleFamily),
    ns: &[usize],
    strategy: Strategy,
    budget: u64,
    trials: u64,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    ns.iter()
        .map(|&n| {
            let a = EnsembleSpec::new(families.0, n, 0);
            let b = EnsembleSpec::new(families.1, n, 0);
            distinguish_experiment((&a, &b), strategy, budget, trials, seed).map(|r| SweepRow::from(&r))
        })
        .collect()
}
