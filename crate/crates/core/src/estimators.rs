//! Estimators that learn properties of rho_A from single-copy measurements on
//! a joint state with a small B register, plus exact oracles for the
//! identities they rely on.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bipartite::Bipartite;
use crate::error::{Error, Result};
use crate::linalg::{
    matrix_power_trace, outer, real, trace_norm, trace_product, CMatrix, DensityMatrix, Observable, I,
};
use crate::measurement::{measure_product, sample_counts, tomography, ProductCounts, ShotBudget};
use crate::rng::rng_from_seed;
use crate::stats::{bootstrap_stderr, BOOTSTRAP_RESAMPLES};

pub const MAX_B_QUBITS: usize = 3;
pub const MAX_MOMENT: u32 = 6;
pub const MAX_OBSERVABLE_NORM: f64 = 10.0;
/// Minimum principal gap of rho_B for PCA.
pub const MIN_PCA_GAP: f64 = 0.05;
/// Minimum nonzero eigenvalue and pairwise gap for QFI.
pub const MIN_QFI_SEPARATION: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub estimator: String,
    pub value: f64,
    pub truth: Option<f64>,
    pub abs_error: Option<f64>,
    pub shots_used: BTreeMap<String, u64>,
    pub stderr: f64,
    pub seed: u64,
    #[serde(default)]
    pub extra: BTreeMap<String, f64>,
}

impl EstimatorReport {
    pub fn new(estimator: &str, value: f64, truth: Option<f64>, stderr: f64, seed: u64) -> Self {
        Self {
            estimator: estimator.to_string(),
            value,
            truth,
            abs_error: truth.map(|t| (value - t).abs()),
            shots_used: BTreeMap::new(),
            stderr,
            seed,
            extra: BTreeMap::new(),
        }
    }

    pub fn with_shots(mut self, stage: &str, shots: u64) -> Self {
        self.shots_used.insert(stage.to_string(), shots);
        self
    }

    pub fn with_extra(mut self, key: &str, value: f64) -> Self {
        self.extra.insert(key.to_string(), value);
        self
    }

    pub fn total_shots(&self) -> u64 {
        self.shots_used.values().sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

// ---------------------------------------------------------------------------
// Guards

fn guard_b<B: Bipartite + ?Sized>(state: &B) -> Result<()> {
    if state.n_b() > MAX_B_QUBITS {
        return Err(Error::Guard(format!("B has {} qubits, the cap is {MAX_B_QUBITS}", state.n_b())));
    }
    Ok(())
}

fn guard_t(t: u32) -> Result<()> {
    if t < 2 {
        return Err(Error::Domain(format!("moment order {t} must be at least 2")));
    }
    if t > MAX_MOMENT {
        return Err(Error::Guard(format!("moment order {t} exceeds {MAX_MOMENT}")));
    }
    Ok(())
}

fn guard_observable<B: Bipartite + ?Sized>(state: &B, o: &Observable) -> Result<()> {
    if o.dim() != state.dim_a() {
        return Err(Error::Dimension(format!(
            "observable of dimension {} on A of dimension {}",
            o.dim(),
            state.dim_a()
        )));
    }
    if o.spectral_norm() > MAX_OBSERVABLE_NORM {
        return Err(Error::Guard(format!("||O|| = {} exceeds {MAX_OBSERVABLE_NORM}", o.spectral_norm())));
    }
    Ok(())
}

fn positive(shots: u64, stage: &str) -> Result<u64> {
    if shots == 0 {
        return Err(Error::InsufficientData(format!("no shots allocated to the {stage} stage")));
    }
    Ok(shots)
}

// ---------------------------------------------------------------------------
// Exact helpers

/// `Tr(O rho^t)`.
pub fn cooled_expectation(rho: &DensityMatrix, o: &CMatrix, t: u32) -> f64 {
    trace_product(o, &rho.spectral().map_eigenvalues(|l| l.max(0.0).powi(t as i32))).re
}

/// `Tr(O psi_0)` for the principal eigenvector of `rho`.
pub fn principal_expectation(rho: &DensityMatrix, o: &CMatrix) -> f64 {
    let v = rho.spectral().vector(0);
    v.dotc(&(o * &v)).re
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum QfiMode {
    /// All eigenpairs, including support/null cross terms.
    Full,
    /// Only pairs of nonzero eigenvalues.
    SupportOnly,
}

/// `2 sum_{j,k} (l_j - l_k)^2 / (l_j + l_k) |<j|O|k>|^2` over ordered pairs.
pub fn qfi_oracle(rho: &DensityMatrix, o: &Observable, mode: QfiMode) -> Result<f64> {
    if o.dim() != rho.dim() {
        return Err(Error::Dimension(format!(
            "observable of dimension {} on state of dimension {}",
            o.dim(),
            rho.dim()
        )));
    }
    let spec = rho.spectral();
    let v = spec.eigenvectors();
    let ojk = v.adjoint() * o.matrix() * v;
    let l = spec.eigenvalues();
    let tol = spec.rank_tol();
    let mut f = 0.0;
    for j in 0..l.len() {
        for k in 0..l.len() {
            let (a, b) = (l[j].max(0.0), l[k].max(0.0));
            let keep = match mode {
                QfiMode::Full => a + b > tol,
                QfiMode::SupportOnly => a > tol && b > tol,
            };
            if keep {
                f += 2.0 * (a - b).powi(2) / (a + b) * ojk[(j, k)].norm_sqr();
            }
        }
    }
    Ok(f)
}

/// `(l_j - l_k)^2 / (l_j l_k (l_j + l_k))`.
pub fn qfi_prefactor(lj: f64, lk: f64) -> f64 {
    (lj - lk).powi(2) / (lj * lk * (lj + lk))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QfiTerm {
    pub j: usize,
    pub k: usize,
    pub lambda_j: f64,
    pub lambda_k: f64,
    pub prefactor: f64,
    pub eigenstate_factor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QfiTermTable {
    pub pairs: Vec<QfiTerm>,
    pub support_rank: usize,
}

impl QfiTermTable {
    /// Unordered pairs counted twice.
    pub fn total(&self) -> f64 {
        self.pairs.iter().map(|p| 2.0 * p.prefactor * p.eigenstate_factor).sum()
    }
}

/// `P+ = |j><k| + |k><j|` or `P- = i|j><k| - i|k><j|` in the eigenbasis
/// `f`: a measurement basis and the eigenvalue attached to each column.
fn pair_basis(f: &CMatrix, j: usize, k: usize, minus: bool) -> (CMatrix, Vec<f64>) {
    let d = f.nrows();
    let s = real(0.5_f64.sqrt());
    let phase = if minus { -I } else { real(1.0) };
    let (fj, fk) = (f.column(j).into_owned(), f.column(k).into_owned());
    let mut basis = CMatrix::zeros(d, d);
    let mut values = vec![0.0; d];
    basis.set_column(0, &((&fj + &fk * phase) * s));
    basis.set_column(1, &((&fj - &fk * phase) * s));
    values[0] = 1.0;
    values[1] = -1.0;
    for (col, l) in (0..d).filter(|l| *l != j && *l != k).enumerate() {
        basis.set_column(col + 2, &f.column(l));
    }
    (basis, values)
}

fn pair_operator(f: &CMatrix, j: usize, k: usize, minus: bool) -> CMatrix {
    let (fj, fk) = (f.column(j).into_owned(), f.column(k).into_owned());
    let jk = outer(&fj, &fk);
    let c = if minus { I } else { real(1.0) };
    &jk * c + (&jk * c).adjoint()
}

/// Eigenstate factor `1/2 (M+^2 + M-^2)` with `M+- = Tr[rho_AB (O (x) P+-)]`,
/// evaluated exactly in the eigenbasis of the true rho_B.
pub fn exact_eigenstate_factor<B: Bipartite + ?Sized>(state: &B, o: &Observable, j: usize, k: usize) -> Result<f64> {
    guard_observable(state, o)?;
    let f = state.rho_b().spectral().eigenvectors();
    let mp = state.product_expectation(o.matrix(), &pair_operator(f, j, k, false))?;
    let mm = state.product_expectation(o.matrix(), &pair_operator(f, j, k, true))?;
    Ok(0.5 * (mp * mp + mm * mm))
}

/// `2 l_j l_k |<a_j|O|a_k>|^2` from the eigensystem of rho_A.
pub fn reference_eigenstate_factor(rho_a: &DensityMatrix, o: &Observable, j: usize, k: usize) -> f64 {
    let spec = rho_a.spectral();
    let (aj, ak) = (spec.vector(j), spec.vector(k));
    let ojk = aj.dotc(&(o.matrix() * &ak));
    2.0 * spec.eigenvalues()[j] * spec.eigenvalues()[k] * ojk.norm_sqr()
}

/// Term table built from exact eigenstate factors.
pub fn exact_qfi_table<B: Bipartite + ?Sized>(state: &B, o: &Observable, rank: usize) -> Result<QfiTermTable> {
    let l = state.rho_b().spectral().eigenvalues().to_vec();
    let mut pairs = vec![];
    for j in 0..rank {
        for k in j + 1..rank {
            pairs.push(QfiTerm {
                j,
                k,
                lambda_j: l[j],
                lambda_k: l[k],
                prefactor: qfi_prefactor(l[j], l[k]),
                eigenstate_factor: exact_eigenstate_factor(state, o, j, k)?,
            });
        }
    }
    Ok(QfiTermTable { pairs, support_rank: rank })
}

// ---------------------------------------------------------------------------
// Identity oracle

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum IdentityKind {
    /// `Tr(rho_A^2) = Tr(rho_B^2)`.
    Purity,
    /// `rho_A^t = Tr_B[rho_AB (I (x) rho_B^(t-1))]`.
    Cooling { t: u32 },
    /// `psi_A^0 = Tr_B[rho_AB (I (x) psi_B^0)] / lambda_0`.
    PrincipalComponent,
    /// `Tr_B[rho_AB (I (x) |b_j><b_k|)] / sqrt(l_j l_k) = |a_k><a_j|` up to a phase.
    CrossTerm { j: usize, k: usize },
}

fn require_isolated(l: &[f64], j: usize) -> Result<()> {
    let tol = 1e-8;
    let mut gap = f64::INFINITY;
    if j > 0 {
        gap = gap.min(l[j - 1] - l[j]);
    }
    if j + 1 < l.len() {
        gap = gap.min(l[j] - l[j + 1]);
    }
    if gap <= tol {
        return Err(Error::Gap { gap, required: tol });
    }
    Ok(())
}

/// Exact deviation between the two sides of an identity, as a trace norm
/// (or an absolute difference for scalars). With `o`, the scalar deviation
/// `|Tr(O lhs) - Tr(O rhs)|` is folded in.
pub fn oracle_identity_check<B: Bipartite + ?Sized>(
    state: &B,
    kind: IdentityKind,
    o: Option<&Observable>,
) -> Result<f64> {
    if let Some(o) = o {
        if o.dim() != state.dim_a() {
            return Err(Error::Dimension(format!(
                "observable of dimension {} on A of dimension {}",
                o.dim(),
                state.dim_a()
            )));
        }
    }
    let (ra, rb) = (state.rho_a(), state.rho_b());
    let scalar = |lhs: &CMatrix, rhs: &CMatrix| -> f64 {
        o.map(|o| (trace_product(o.matrix(), lhs) - trace_product(o.matrix(), rhs)).norm()).unwrap_or(0.0)
    };
    match kind {
        IdentityKind::Purity => Ok((ra.purity() - rb.purity()).abs()),
        IdentityKind::Cooling { t } => {
            if t == 0 {
                return Err(Error::Domain("moment order must be at least 1".into()));
            }
            let lhs = ra.spectral().map_eigenvalues(|l| l.max(0.0).powi(t as i32));
            let x = rb.spectral().map_eigenvalues(|l| l.max(0.0).powi(t as i32 - 1));
            let rhs = state.steer(&x)?;
            Ok(trace_norm(&(&lhs - &rhs)).max(scalar(&lhs, &rhs)))
        }
        IdentityKind::PrincipalComponent => {
            let sb = rb.spectral();
            if sb.gap() <= sb.rank_tol() {
                return Err(Error::Gap { gap: sb.gap(), required: sb.rank_tol() });
            }
            let lhs = ra.spectral().projector(0);
            let rhs = state.steer(&sb.projector(0))? * real(1.0 / sb.eigenvalues()[0]);
            Ok(trace_norm(&(&lhs - &rhs)).max(scalar(&lhs, &rhs)))
        }
        IdentityKind::CrossTerm { j, k } => {
            let (sa, sb) = (ra.spectral(), rb.spectral());
            let r = sb.rank();
            if j >= r || k >= r || j == k {
                return Err(Error::Precondition(format!("pair ({j}, {k}) is not a distinct nonzero pair (rank {r})")));
            }
            require_isolated(sb.eigenvalues(), j)?;
            require_isolated(sb.eigenvalues(), k)?;
            let (lj, lk) = (sb.eigenvalues()[j], sb.eigenvalues()[k]);
            let x = outer(&sb.vector(j), &sb.vector(k));
            let lhs = state.steer(&x)? * real(1.0 / (lj * lk).sqrt());
            let (aj, ak) = (sa.vector(j), sa.vector(k));
            let rhs = outer(&ak, &aj);
            let phi = ak.dotc(&(&lhs * &aj));
            let diff = &lhs - &rhs * phi;
            Ok((trace_norm(&diff) + (phi.norm() - 1.0).abs()).max(scalar(&lhs, &(&rhs * phi))))
        }
    }
}

// ---------------------------------------------------------------------------
// Estimators

/// Eigendecomposition of an estimate with each eigenvector's phase aligned to
/// the matching column of `reference`, so bootstrap replicates stay
/// comparable to the measured basis.
fn aligned_spectrum(estimate: &DensityMatrix, reference: &CMatrix) -> (Vec<f64>, CMatrix) {
    let spec = estimate.spectral();
    let mut v = spec.eigenvectors().clone();
    for j in 0..v.ncols() {
        let overlap = reference.column(j).dotc(&v.column(j));
        if overlap.norm() > 1e-12 {
            let phase = overlap.conj() / overlap.norm();
            for i in 0..v.nrows() {
                v[(i, j)] *= phase;
            }
        }
    }
    (spec.eigenvalues().to_vec(), v)
}

/// Diagonal of `x` in the columns of `basis`.
pub(crate) fn diagonal_in(x: &CMatrix, basis: &CMatrix) -> Vec<f64> {
    let xb = x * basis;
    (0..basis.ncols()).map(|c| basis.column(c).dotc(&xb.column(c)).re).collect()
}

pub(crate) fn resample_counts<R: Rng + ?Sized>(pc: &ProductCounts, rng: &mut R) -> ProductCounts {
    let probs: Vec<f64> = pc.counts.iter().map(|c| *c as f64).collect();
    ProductCounts { counts: sample_counts(&probs, pc.shots, rng), ..pc.clone() }
}

fn tomography_shots(budget: &ShotBudget) -> Result<u64> {
    positive(budget.tomography_shots, "tomography")
}

/// `Tr(rho_A^t)` from tomography of rho_B alone. All tomography and
/// observable shots in `budget` go to the tomography stage.
pub fn estimate_moment<B: Bipartite + ?Sized>(
    state: &B,
    t: u32,
    budget: &ShotBudget,
    seed: u64,
) -> Result<EstimatorReport> {
    guard_b(state)?;
    guard_t(t)?;
    let shots = positive(budget.tomography_shots + budget.observable_shots, "tomography")?;
    let mut rng = rng_from_seed(seed);
    let tomo = tomography(state.rho_b(), shots, &mut rng)?;
    let value = matrix_power_trace(&tomo.estimate, t)?;
    let stderr = bootstrap_stderr(BOOTSTRAP_RESAMPLES, &mut rng, |r| {
        tomo.resample(r).and_then(|x| matrix_power_trace(&x.estimate, t)).unwrap_or(f64::NAN)
    });
    let truth = matrix_power_trace(state.rho_a(), t)?;
    Ok(EstimatorReport::new("moment", value, Some(truth), stderr, seed)
        .with_shots("tomography", shots)
        .with_extra("t", t as f64))
}

/// `Tr(O rho_A^t)` by measuring `O (x) rhô_B^(t-1)` on the joint state.
pub fn estimate_virtual_cooling<B: Bipartite + ?Sized>(
    state: &B,
    o: &Observable,
    t: u32,
    budget: &ShotBudget,
    seed: u64,
) -> Result<EstimatorReport> {
    guard_b(state)?;
    guard_t(t)?;
    guard_observable(state, o)?;
    let obs_shots = positive(budget.observable_shots, "observable")?;
    let mut rng = rng_from_seed(seed);
    let tomo = tomography(state.rho_b(), tomography_shots(budget)?, &mut rng)?;
    let spec = tomo.estimate.spectral();
    let basis = spec.eigenvectors().clone();
    let weights: Vec<f64> = spec.eigenvalues().iter().map(|m| m.max(0.0).powi(t as i32 - 1)).collect();
    let counts = measure_product(state, o, &basis, obs_shots, &mut rng)?;
    let value = counts.mean_with(&weights);

    let replicate = |r: &mut crate::rng::SimRng| -> f64 {
        let Ok(t2) = tomo.resample(r) else { return f64::NAN };
        let x = t2.estimate.spectral().map_eigenvalues(|m| m.max(0.0).powi(t as i32 - 1));
        resample_counts(&counts, r).mean_with(&diagonal_in(&x, &basis))
    };
    let stderr = bootstrap_stderr(BOOTSTRAP_RESAMPLES, &mut rng, replicate);
    let truth = cooled_expectation(state.rho_a(), o.matrix(), t);
    Ok(EstimatorReport::new("virtual_cooling", value, Some(truth), stderr, seed)
        .with_shots("tomography", tomo.raw_shots)
        .with_shots("observable", obs_shots)
        .with_extra("t", t as f64))
}

/// `Tr(O psi_A^0)` by measuring `O (x) psî_B^0 / lambdâ_0`.
pub fn estimate_pca<B: Bipartite + ?Sized>(
    state: &B,
    o: &Observable,
    budget: &ShotBudget,
    seed: u64,
) -> Result<EstimatorReport> {
    guard_b(state)?;
    guard_observable(state, o)?;
    let gap = state.rho_b().spectral().gap();
    if gap < MIN_PCA_GAP {
        return Err(Error::Gap { gap, required: MIN_PCA_GAP });
    }
    let obs_shots = positive(budget.observable_shots, "observable")?;
    let mut rng = rng_from_seed(seed);
    let tomo = tomography(state.rho_b(), tomography_shots(budget)?, &mut rng)?;
    let spec = tomo.estimate.spectral();
    let basis = spec.eigenvectors().clone();
    let lambda0 = spec.eigenvalues()[0];
    let mut weights = vec![0.0; basis.ncols()];
    weights[0] = 1.0 / lambda0;
    let counts = measure_product(state, o, &basis, obs_shots, &mut rng)?;
    let value = counts.mean_with(&weights);

    let replicate = |r: &mut crate::rng::SimRng| -> f64 {
        let Ok(t2) = tomo.resample(r) else { return f64::NAN };
        let s2 = t2.estimate.spectral();
        let x = s2.projector(0) * real(1.0 / s2.eigenvalues()[0]);
        resample_counts(&counts, r).mean_with(&diagonal_in(&x, &basis))
    };
    let stderr = bootstrap_stderr(BOOTSTRAP_RESAMPLES, &mut rng, replicate);
    let truth = principal_expectation(state.rho_a(), o.matrix());
    Ok(EstimatorReport::new("pca", value, Some(truth), stderr, seed)
        .with_shots("tomography", tomo.raw_shots)
        .with_shots("observable", obs_shots)
        .with_extra("lambda0_hat", lambda0)
        .with_extra("gap", gap))
}

fn check_qfi_spectrum(l: &[f64], rank: usize) -> Result<()> {
    for j in 0..rank {
        if l[j] < MIN_QFI_SEPARATION {
            return Err(Error::Precondition(format!("eigenvalue {j} = {:.4} is below {MIN_QFI_SEPARATION}", l[j])));
        }
        for k in j + 1..rank {
            if (l[j] - l[k]).abs() < MIN_QFI_SEPARATION {
                return Err(Error::Precondition(format!(
                    "eigenvalue pair ({j}, {k}) = ({:.4}, {:.4}) is closer than {MIN_QFI_SEPARATION}",
                    l[j], l[k]
                )));
            }
        }
    }
    Ok(())
}

struct PairData {
    j: usize,
    k: usize,
    /// Settings: (P+, first half), (P+, second half), (P-, first), (P-, second).
    counts: [ProductCounts; 4],
    bases: [CMatrix; 2],
}

fn qfi_from(l: &[f64], pairs: &[PairData], weights: impl Fn(&PairData, usize) -> Vec<f64>) -> (f64, Vec<QfiTerm>) {
    let mut terms = vec![];
    for p in pairs {
        let m: Vec<f64> = (0..4).map(|s| p.counts[s].mean_with(&weights(p, s))).collect();
        // Independent halves make each product unbiased for M^2.
        let factor = 0.5 * (m[0] * m[1] + m[2] * m[3]);
        terms.push(QfiTerm {
            j: p.j,
            k: p.k,
            lambda_j: l[p.j],
            lambda_k: l[p.k],
            prefactor: qfi_prefactor(l[p.j], l[p.k]),
            eigenstate_factor: factor,
        });
    }
    let total = terms.iter().map(|t| 2.0 * t.prefactor * t.eigenstate_factor).sum();
    (total, terms)
}

/// Support QFI of rho_A with respect to `O`. `rank` defaults to the
/// thresholded rank of rho_B.
pub fn estimate_qfi<B: Bipartite + ?Sized>(
    state: &B,
    o: &Observable,
    rank: Option<usize>,
    budget: &ShotBudget,
    seed: u64,
) -> Result<(EstimatorReport, QfiTermTable)> {
    guard_b(state)?;
    guard_observable(state, o)?;
    let true_spec = state.rho_b().spectral();
    let r = rank.unwrap_or_else(|| true_spec.rank()).min(state.dim_b());
    check_qfi_spectrum(true_spec.eigenvalues(), r)?;
    let mut rng = rng_from_seed(seed);
    let tomo = tomography(state.rho_b(), tomography_shots(budget)?, &mut rng)?;
    let (l, f) = {
        let s = tomo.estimate.spectral();
        (s.eigenvalues().to_vec(), s.eigenvectors().clone())
    };
    let n_pairs = r * r.saturating_sub(1) / 2;
    let mut pairs = Vec::with_capacity(n_pairs);
    let mut obs_used = 0;
    if n_pairs > 0 {
        let per_setting = budget.observable_shots / (4 * n_pairs as u64);
        positive(per_setting, "observable")?;
        for j in 0..r {
            for k in j + 1..r {
                let (bp, _) = pair_basis(&f, j, k, false);
                let (bm, _) = pair_basis(&f, j, k, true);
                let counts = [
                    measure_product(state, o, &bp, per_setting, &mut rng)?,
                    measure_product(state, o, &bp, per_setting, &mut rng)?,
                    measure_product(state, o, &bm, per_setting, &mut rng)?,
                    measure_product(state, o, &bm, per_setting, &mut rng)?,
                ];
                obs_used += 4 * per_setting;
                pairs.push(PairData { j, k, counts, bases: [bp, bm] });
            }
        }
    }
    let fixed = |_: &PairData, _: usize| -> Vec<f64> {
        let mut w = vec![0.0; state.dim_b()];
        w[0] = 1.0;
        w[1] = -1.0;
        w
    };
    let (value, terms) = qfi_from(&l, &pairs, fixed);

    let stderr = if pairs.is_empty() {
        0.0
    } else {
        bootstrap_stderr(BOOTSTRAP_RESAMPLES, &mut rng, |r| {
            let Ok(t2) = tomo.resample(r) else { return f64::NAN };
            let (l2, f2) = aligned_spectrum(&t2.estimate, &f);
            let resampled: Vec<PairData> = pairs
                .iter()
                .map(|p| PairData {
                    j: p.j,
                    k: p.k,
                    counts: [0, 1, 2, 3].map(|s| resample_counts(&p.counts[s], r)),
                    bases: p.bases.clone(),
                })
                .collect();
            let weights = |p: &PairData, s: usize| -> Vec<f64> {
                let op = pair_operator(&f2, p.j, p.k, s >= 2);
                diagonal_in(&op, &p.bases[s / 2])
            };
            qfi_from(&l2, &resampled, weights).0
        })
    };

    let truth = qfi_oracle(state.rho_a(), o, QfiMode::SupportOnly)?;
    let full = qfi_oracle(state.rho_a(), o, QfiMode::Full)?;
    let report = EstimatorReport::new("qfi", value, Some(truth), stderr, seed)
        .with_shots("tomography", tomo.raw_shots)
        .with_shots("observable", obs_used)
        .with_extra("full_qfi", full)
        .with_extra("support_rank", r as f64);
    Ok((report, QfiTermTable { pairs: terms, support_rank: r }))
}

/// Infinite-shot expectation of the QFI product estimator when the measured
/// eigenbasis is exact.
pub fn qfi_infinite_shot<B: Bipartite + ?Sized>(state: &B, o: &Observable, rank: usize) -> Result<f64> {
    Ok(exact_qfi_table(state, o, rank)?.total())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bipartite::{CorrelatedState, PurifiedState};
    use crate::ensembles::{classical_correlate, purify, sample_ensemble, EnsembleFamily, EnsembleSpec};
    use crate::linalg::{basis_vector, kron, kron_vec, CVector, PureState};

    fn purified(weights: Vec<f64>, n_a: usize, n_b: usize, seed: u64) -> PurifiedState {
        let s = sample_ensemble(&EnsembleSpec::random_rank(n_a, weights, seed), 0).unwrap();
        PurifiedState::new(purify(&s.rho, n_b).unwrap()).unwrap()
    }

    fn bell() -> PurifiedState {
        let s = 0.5_f64.sqrt();
        let v = CVector::from_vec(vec![real(s), real(0.0), real(0.0), real(s)]);
        PurifiedState::new(PureState::new(v, 1, 1).unwrap()).unwrap()
    }

    #[test]
    fn qfi_oracle_examples() {
        let zero = DensityMatrix::from_pure(&basis_vector(2, 0)).unwrap();
        let x = Observable::pauli("X").unwrap();
        assert!((qfi_oracle(&zero, &x, QfiMode::Full).unwrap() - 4.0).abs() < 1e-12);
        assert!(qfi_oracle(&zero, &x, QfiMode::SupportOnly).unwrap().abs() < 1e-12);
        let half = DensityMatrix::maximally_mixed(1);
        assert!(qfi_oracle(&half, &x, QfiMode::Full).unwrap().abs() < 1e-12);
        let s = sample_ensemble(&EnsembleSpec::random_rank(2, vec![0.6, 0.4], 1), 0).unwrap();
        assert!(qfi_oracle(&s.rho, &Observable::identity(2), QfiMode::Full).unwrap().abs() < 1e-12);
    }

    #[test]
    fn qfi_oracle_pure_state_is_four_times_variance() {
        let s = sample_ensemble(&EnsembleSpec::new(EnsembleFamily::HaarPure, 2, 3), 0).unwrap();
        let o = Observable::pauli("XZ").unwrap();
        let mean = s.rho.expectation(o.matrix()).unwrap();
        let var = s.rho.expectation(&(o.matrix() * o.matrix())).unwrap() - mean * mean;
        assert!((qfi_oracle(&s.rho, &o, QfiMode::Full).unwrap() - 4.0 * var).abs() < 1e-10);
    }

    #[test]
    fn identities_on_bell_state() {
        let b = bell();
        assert!(oracle_identity_check(&b, IdentityKind::Purity, None).unwrap() < 1e-12);
        assert!(oracle_identity_check(&b, IdentityKind::Cooling { t: 2 }, None).unwrap() < 1e-12);
        assert!(matches!(oracle_identity_check(&b, IdentityKind::PrincipalComponent, None), Err(Error::Gap { .. })));
    }

    #[test]
    fn identities_on_random_purifications() {
        for seed in 0..10 {
            let s = purified(vec![0.5, 0.3, 0.15, 0.05], 3, 2, seed);
            let o = Observable::z_on(3, 0).unwrap();
            for kind in [
                IdentityKind::Purity,
                IdentityKind::Cooling { t: 3 },
                IdentityKind::PrincipalComponent,
                IdentityKind::CrossTerm { j: 0, k: 1 },
                IdentityKind::CrossTerm { j: 3, k: 1 },
            ] {
                let dev = oracle_identity_check(&s, kind, Some(&o)).unwrap();
                assert!(dev < 1e-9, "{kind:?}: {dev}");
            }
        }
    }

    #[test]
    fn cross_term_rejects_null_pair() {
        let s = purified(vec![0.7, 0.3], 2, 2, 1);
        assert!(matches!(
            oracle_identity_check(&s, IdentityKind::CrossTerm { j: 0, k: 2 }, None),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn eigenstate_factor_matches_doubled_state_trace() {
        // Brute force Tr[Psi^(x)2 (O (x) O (x) P^{jk})] on the register A B A' B'.
        let s = purified(vec![0.8, 0.2], 1, 1, 4);
        let o = Observable::pauli("X").unwrap();
        let f = s.rho_b().spectral().eigenvectors().clone();
        let (fj, fk) = (f.column(0).into_owned(), f.column(1).into_owned());
        let cross = kron(&outer(&fj, &fk), &outer(&fk, &fj));
        let p = &cross + cross.adjoint();
        // Reorder A B A' B' -> A A' B B' by permuting the doubled vector.
        let psi = s.psi().amplitudes();
        let doubled = kron_vec(psi, psi);
        let mut reordered = CVector::zeros(16);
        for a in 0..2 {
            for b in 0..2 {
                for a2 in 0..2 {
                    for b2 in 0..2 {
                        reordered[((a * 2 + a2) * 2 + b) * 2 + b2] = doubled[((a * 2 + b) * 2 + a2) * 2 + b2];
                    }
                }
            }
        }
        let op = kron(&kron(o.matrix(), o.matrix()), &p);
        let brute = reordered.dotc(&(&op * &reordered)).re;
        let factor = exact_eigenstate_factor(&s, &o, 0, 1).unwrap();
        assert!((brute - factor).abs() < 1e-12);
        assert!((factor - reference_eigenstate_factor(s.rho_a(), &o, 0, 1)).abs() < 1e-12);
    }

    #[test]
    fn exact_table_reproduces_support_qfi() {
        for seed in 0..5 {
            let s = purified(vec![0.55, 0.3, 0.15], 3, 2, seed);
            let o = Observable::x_on(3, 0).unwrap();
            let table = exact_qfi_table(&s, &o, 3).unwrap();
            let oracle = qfi_oracle(s.rho_a(), &o, QfiMode::SupportOnly).unwrap();
            assert!((table.total() - oracle).abs() < 1e-9);
        }
    }

    #[test]
    fn correlated_state_breaks_only_the_cross_term() {
        let s = sample_ensemble(&EnsembleSpec::random_rank(2, vec![0.7, 0.3], 5), 0).unwrap();
        let cc = CorrelatedState::new(classical_correlate(&s.rho, 1).unwrap(), 2).unwrap();
        for kind in [IdentityKind::Purity, IdentityKind::Cooling { t: 2 }, IdentityKind::PrincipalComponent] {
            assert!(oracle_identity_check(&cc, kind, None).unwrap() < 1e-9);
        }
        let o = Observable::x_on(2, 0).unwrap();
        assert!(exact_eigenstate_factor(&cc, &o, 0, 1).unwrap().abs() < 1e-12);
    }

    #[test]
    fn moment_estimates() {
        let s = purified(vec![0.9, 0.1], 2, 1, 2);
        let r = estimate_moment(&s, 2, &ShotBudget::tomography_only(10_000), 1).unwrap();
        assert!((r.truth.unwrap() - 0.82).abs() < 1e-12);
        assert!(r.abs_error.unwrap() < 0.05, "{r:?}");
        assert!(r.stderr > 0.0 && r.stderr < 0.05);

        let pure = purified(vec![1.0], 2, 1, 2);
        let r = estimate_moment(&pure, 2, &ShotBudget::tomography_only(10_000), 1).unwrap();
        assert!((r.value - 1.0).abs() < 0.05);
    }

    #[test]
    fn guards_fire() {
        let s = purified(vec![0.9, 0.1], 2, 1, 2);
        let b = ShotBudget::even(1000);
        assert!(matches!(estimate_moment(&s, 1, &b, 0), Err(Error::Domain(_))));
        assert!(matches!(estimate_moment(&s, 7, &b, 0), Err(Error::Guard(_))));
        let big = Observable::new(Observable::z_on(2, 0).unwrap().matrix() * real(11.0)).unwrap();
        assert!(matches!(estimate_virtual_cooling(&s, &big, 2, &b, 0), Err(Error::Guard(_))));
        let wide = purified(vec![0.9, 0.1], 1, 4, 2);
        assert!(matches!(estimate_moment(&wide, 2, &b, 0), Err(Error::Guard(_))));
        let flat = purified(vec![0.51, 0.49], 2, 1, 2);
        assert!(matches!(estimate_pca(&flat, &Observable::identity(2), &b, 0), Err(Error::Gap { .. })));
        assert!(matches!(estimate_qfi(&flat, &Observable::identity(2), None, &b, 0), Err(Error::Precondition(_))));
    }

    #[test]
    fn cooling_with_identity_matches_moment_and_bell_truth_is_zero() {
        let s = purified(vec![0.9, 0.1], 2, 1, 3);
        let r = estimate_virtual_cooling(&s, &Observable::identity(2), 2, &ShotBudget::even(20_000), 4).unwrap();
        assert!((r.truth.unwrap() - 0.82).abs() < 1e-12);
        assert!(r.abs_error.unwrap() < 0.05, "{r:?}");
        let b = bell();
        let r = estimate_virtual_cooling(&b, &Observable::pauli("Z").unwrap(), 2, &ShotBudget::even(1000), 1).unwrap();
        assert!(r.truth.unwrap().abs() < 1e-12);
    }

    #[test]
    fn pca_examples() {
        let pure = purified(vec![1.0], 2, 1, 6);
        let o = Observable::x_on(2, 1).unwrap();
        let r = estimate_pca(&pure, &o, &ShotBudget::even(20_000), 3).unwrap();
        assert!((r.truth.unwrap() - pure.rho_a().expectation(o.matrix()).unwrap()).abs() < 1e-12);
        assert!(r.abs_error.unwrap() < 0.05);

        let s = purified(vec![0.9, 0.1], 2, 1, 7);
        let proj = Observable::projector(&s.rho_a().spectral().vector(0)).unwrap();
        let r = estimate_pca(&s, &proj, &ShotBudget::even(100_000), 5).unwrap();
        assert!((r.truth.unwrap() - 1.0).abs() < 1e-10);
        assert!(r.value >= 0.9, "{r:?}");
    }

    #[test]
    fn qfi_estimate_tracks_support_oracle() {
        let s = purified(vec![0.6, 0.4 - 0.15, 0.15], 2, 2, 8);
        let o = Observable::x_on(2, 0).unwrap();
        let (r, table) = estimate_qfi(&s, &o, Some(3), &ShotBudget::even(60_000), 9).unwrap();
        assert_eq!(table.pairs.len(), 3);
        assert!(r.abs_error.unwrap() < 0.15, "{r:?}");
        assert!(r.stderr > 0.0);

        let pure = purified(vec![1.0], 1, 1, 1);
        let (r, table) =
            estimate_qfi(&pure, &Observable::pauli("X").unwrap(), None, &ShotBudget::even(1000), 1).unwrap();
        assert!(table.pairs.is_empty());
        assert_eq!(r.value, 0.0);
        assert_eq!(r.truth, Some(0.0));
    }

    #[test]
    fn report_json_round_trip() {
        let r = EstimatorReport::new("x", 1.0, Some(0.5), 0.1, 3).with_shots("tomography", 10);
        let back: EstimatorReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.abs_error, Some(0.5));
    }
}
