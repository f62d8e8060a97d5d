//! Channels on n qubits, their canonical Kraus form and Stinespring
//! isometry, and estimators that read channel properties off the ancilla.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bipartite::{Bipartite, CorrelatedState};
use crate::ensembles::haar_frame;
use crate::error::{Error, Result};
use crate::estimators::{
    diagonal_in, resample_counts, EstimatorReport, MAX_B_QUBITS, MAX_OBSERVABLE_NORM, MIN_PCA_GAP,
};
use crate::linalg::{
    eigh, identity, outer, pauli_string, qubits_for_dim, real, trace_product, CMatrix, DensityMatrix, Observable,
    DEFAULT_RANK_TOL, ZERO,
};
use crate::measurement::{measure_product, tomography, ShotBudget};
use crate::rng::rng_from_seed;
use crate::stats::{bootstrap_stderr, BOOTSTRAP_RESAMPLES};

const COMPLETENESS_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct QuantumChannel {
    n: usize,
    kraus: Vec<CMatrix>,
}

/// JSON form: each Kraus matrix as rows of `[re, im]` pairs.
#[derive(Serialize, Deserialize)]
struct ChannelJson {
    n: usize,
    kraus: Vec<Vec<Vec<[f64; 2]>>>,
}

impl QuantumChannel {
    pub fn new(kraus: Vec<CMatrix>) -> Result<Self> {
        let first =
            kraus.first().ok_or_else(|| Error::Validation("a channel needs at least one Kraus operator".into()))?;
        let d = first.nrows();
        let n = qubits_for_dim(d)?;
        if kraus.iter().any(|k| k.shape() != (d, d)) {
            return Err(Error::Dimension("Kraus operators must all be square of the same dimension".into()));
        }
        let sum = kraus.iter().fold(CMatrix::zeros(d, d), |acc, k| acc + k.adjoint() * k);
        let dev = (sum - identity(d)).iter().map(|c| c.norm()).fold(0.0, f64::max);
        if dev > COMPLETENESS_TOL {
            return Err(Error::NotTracePreserving(dev));
        }
        Ok(Self { n, kraus })
    }

    pub fn unitary(u: CMatrix) -> Result<Self> {
        Self::new(vec![u])
    }

    /// `rho -> (1 - p) rho + p I / d`, with Pauli Kraus operators.
    pub fn depolarizing(n: usize, p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Domain(format!("depolarizing rate {p} outside [0, 1]")));
        }
        let d2 = (1u64 << (2 * n)) as f64;
        let mut kraus = vec![];
        for idx in 0..(1usize << (2 * n)) {
            let labels: String = (0..n).map(|q| ['I', 'X', 'Y', 'Z'][(idx >> (2 * (n - 1 - q))) & 3]).collect();
            let w = if idx == 0 { 1.0 - p + p / d2 } else { p / d2 };
            if w > 0.0 {
                kraus.push(pauli_string(&labels)? * real(w.sqrt()));
            }
        }
        Self::new(kraus)
    }

    pub fn amplitude_damping(gamma: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::Domain(format!("damping rate {gamma} outside [0, 1]")));
        }
        let e0 = CMatrix::from_row_slice(2, 2, &[real(1.0), ZERO, ZERO, real((1.0 - gamma).sqrt())]);
        let e1 = CMatrix::from_row_slice(2, 2, &[ZERO, real(gamma.sqrt()), ZERO, ZERO]);
        Self::new(vec![e0, e1])
    }

    /// Kraus blocks of a Haar-random isometry `d -> d r`; Choi rank `r`
    /// almost surely.
    pub fn random<R: Rng + ?Sized>(n: usize, rank: usize, rng: &mut R) -> Result<Self> {
        if rank == 0 {
            return Err(Error::Domain("Choi rank must be positive".into()));
        }
        let d = 1usize << n;
        let v = haar_frame(d * rank, d, rng)?;
        Self::new((0..rank).map(|i| v.rows(i * d, d).into_owned()).collect())
    }

    pub fn n_qubits(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        1 << self.n
    }

    pub fn kraus(&self) -> &[CMatrix] {
        &self.kraus
    }

    pub fn apply_matrix(&self, rho: &CMatrix) -> CMatrix {
        self.kraus.iter().fold(CMatrix::zeros(self.dim(), self.dim()), |acc, k| acc + k * rho * k.adjoint())
    }

    pub fn apply(&self, rho: &DensityMatrix) -> Result<DensityMatrix> {
        if rho.dim() != self.dim() {
            return Err(Error::Dimension(format!("state of dimension {} into a channel on {}", rho.dim(), self.dim())));
        }
        Ok(DensityMatrix::from_matrix_unchecked(self.apply_matrix(rho.matrix())))
    }

    /// `(1/d) sum_ij E(|i><j|) (x) |i><j|`, output register first.
    pub fn choi(&self) -> CMatrix {
        choi_of(self.dim(), self.kraus.iter().map(|k| (1.0, k)))
    }

    pub fn to_json(&self) -> String {
        let kraus = self
            .kraus
            .iter()
            .map(|k| (0..k.nrows()).map(|r| (0..k.ncols()).map(|c| [k[(r, c)].re, k[(r, c)].im]).collect()).collect())
            .collect();
        serde_json::to_string(&ChannelJson { n: self.n, kraus }).expect("channel serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: ChannelJson = serde_json::from_str(s).map_err(|e| Error::Validation(e.to_string()))?;
        let d = 1usize << raw.n;
        let mut kraus = vec![];
        for rows in raw.kraus {
            if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                return Err(Error::Dimension(format!("Kraus matrix is not {d} x {d}")));
            }
            kraus.push(CMatrix::from_fn(d, d, |r, c| num_complex::Complex64::new(rows[r][c][0], rows[r][c][1])));
        }
        Self::new(kraus)
    }
}

/// Choi matrix of `rho -> sum_i w_i K_i rho K_i^dagger`.
fn choi_of<'a>(d: usize, terms: impl Iterator<Item = (f64, &'a CMatrix)>) -> CMatrix {
    let mut choi = CMatrix::zeros(d * d, d * d);
    for (w, k) in terms {
        let v = crate::linalg::CVector::from_fn(d * d, |idx, _| k[(idx / d, idx % d)]);
        choi += outer(&v, &v) * real(w / d as f64);
    }
    choi
}

/// Canonical Kraus form with its dilation
/// `V = sum_i sqrt(p_i) E_i (x) |i>_B`, system first.
#[derive(Clone, Debug)]
pub struct StinespringIsometry {
    matrix: CMatrix,
    n: usize,
    b: usize,
    weights: Vec<f64>,
    canonical_kraus: Vec<CMatrix>,
}

/// Eigendecompose the Choi matrix and reshape each eigenvector into a Kraus
/// operator normalised to `Tr(E^dagger E) = d`. Eigenvalues below the rank
/// tolerance are dropped. At least one ancilla qubit is always allocated.
pub fn canonicalize(channel: &QuantumChannel) -> Result<StinespringIsometry> {
    let d = channel.dim();
    let spec = eigh(&channel.choi(), DEFAULT_RANK_TOL)?;
    let r = spec.rank().max(1);
    let total: f64 = spec.eigenvalues()[..r].iter().sum();
    let weights: Vec<f64> = spec.eigenvalues()[..r].iter().map(|l| l / total).collect();
    let scale = real((d as f64).sqrt());
    let canonical_kraus: Vec<CMatrix> = (0..r)
        .map(|i| {
            let w = spec.vector(i);
            CMatrix::from_fn(d, d, |out, inp| w[out * d + inp] * scale)
        })
        .collect();
    let b = (usize::BITS - (r - 1).leading_zeros()).max(1) as usize;
    let db = 1usize << b;
    let mut matrix = CMatrix::zeros(d * db, d);
    for (i, (e, p)) in canonical_kraus.iter().zip(&weights).enumerate() {
        for out in 0..d {
            for inp in 0..d {
                matrix[(out * db + i, inp)] = e[(out, inp)] * p.sqrt();
            }
        }
    }
    Ok(StinespringIsometry { matrix, n: channel.n_qubits(), b, weights, canonical_kraus })
}

impl StinespringIsometry {
    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn n_qubits(&self) -> usize {
        self.n
    }

    pub fn ancilla_qubits(&self) -> usize {
        self.b
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn canonical_kraus(&self) -> &[CMatrix] {
        &self.canonical_kraus
    }

    pub fn dim(&self) -> usize {
        1 << self.n
    }

    /// `V rho V^dagger` as a state on system (x) ancilla.
    pub fn dilate(&self, rho: &DensityMatrix) -> Result<CorrelatedState> {
        if rho.dim() != self.dim() {
            return Err(Error::Dimension(format!(
                "state of dimension {} into an isometry on {}",
                rho.dim(),
                self.dim()
            )));
        }
        let joint = &self.matrix * rho.matrix() * self.matrix.adjoint();
        CorrelatedState::new(DensityMatrix::from_matrix_unchecked(joint), self.n)
    }

    /// `Tr_B(V rho V^dagger)`.
    pub fn apply_matrix(&self, rho: &CMatrix) -> Result<CMatrix> {
        let joint = &self.matrix * rho * self.matrix.adjoint();
        crate::linalg::partial_trace_matrix(&joint, &(0..self.n).collect::<Vec<_>>())
    }

    /// `sum_i p_i^2`, the purity of the Choi state.
    pub fn unitarity(&self) -> f64 {
        self.weights.iter().map(|p| p * p).sum()
    }

    /// Kraus-sum `rho -> sum_i p_i^2 E_i rho E_i^dagger`.
    pub fn distilled_apply(&self, rho: &CMatrix) -> CMatrix {
        let d = self.dim();
        self.canonical_kraus
            .iter()
            .zip(&self.weights)
            .fold(CMatrix::zeros(d, d), |acc, (e, p)| acc + e * rho * e.adjoint() * real(p * p))
    }

    pub fn distilled_choi(&self) -> CMatrix {
        choi_of(self.dim(), self.canonical_kraus.iter().zip(&self.weights).map(|(e, p)| (p * p, e)))
    }

    /// `Tr(O E_0 rho E_0^dagger)`.
    pub fn principal_expectation(&self, rho: &CMatrix, o: &CMatrix) -> f64 {
        let e = &self.canonical_kraus[0];
        trace_product(o, &(e * rho * e.adjoint())).re
    }

    fn guard(&self) -> Result<()> {
        if self.b > MAX_B_QUBITS {
            return Err(Error::Guard(format!("{} ancilla qubits, the cap is {MAX_B_QUBITS}", self.b)));
        }
        Ok(())
    }

    fn guard_observable(&self, o: &Observable) -> Result<()> {
        if o.dim() != self.dim() {
            return Err(Error::Dimension(format!(
                "observable of dimension {} on a channel of dimension {}",
                o.dim(),
                self.dim()
            )));
        }
        if o.spectral_norm() > MAX_OBSERVABLE_NORM {
            return Err(Error::Guard(format!("||O|| = {} exceeds {MAX_OBSERVABLE_NORM}", o.spectral_norm())));
        }
        Ok(())
    }

    fn calibration(&self) -> Result<CorrelatedState> {
        self.dilate(&DensityMatrix::maximally_mixed(self.n))
    }
}

/// Purity of the ancilla marginal after sending the maximally mixed state
/// through the dilation. All shots in `budget` go to tomography.
pub fn unitarity_estimate(iso: &StinespringIsometry, budget: &ShotBudget, seed: u64) -> Result<EstimatorReport> {
    iso.guard()?;
    let shots = budget.tomography_shots + budget.observable_shots;
    if shots == 0 {
        return Err(Error::InsufficientData("no shots".into()));
    }
    let cal = iso.calibration()?;
    let mut rng = rng_from_seed(seed);
    let tomo = tomography(cal.rho_b(), shots, &mut rng)?;
    let value = tomo.estimate.purity();
    let stderr = bootstrap_stderr(BOOTSTRAP_RESAMPLES, &mut rng, |r| {
        tomo.resample(r).map(|t| t.estimate.purity()).unwrap_or(f64::NAN)
    });
    Ok(EstimatorReport::new("channel_unitarity", value, Some(iso.unitarity()), stderr, seed)
        .with_shots("tomography", shots)
        .with_extra("choi_rank", iso.weights().len() as f64))
}

/// Shared two-stage run: tomography of the calibration ancilla, then
/// `O (x) X(rhô_B)` measured on `V rho_in V^dagger` in the eigenbasis of rhô_B.
fn two_stage(
    iso: &StinespringIsometry,
    rho_in: &DensityMatrix,
    o: &Observable,
    budget: &ShotBudget,
    seed: u64,
    x_of: impl Fn(&DensityMatrix) -> CMatrix,
) -> Result<(f64, f64, u64, u64)> {
    iso.guard()?;
    iso.guard_observable(o)?;
    if budget.tomography_shots == 0 || budget.observable_shots == 0 {
        return Err(Error::InsufficientData("both stages need shots".into()));
    }
    let cal = iso.calibration()?;
    let run = iso.dilate(rho_in)?;
    let mut rng = rng_from_seed(seed);
    let tomo = tomography(cal.rho_b(), budget.tomography_shots, &mut rng)?;
    let basis = tomo.estimate.spectral().eigenvectors().clone();
    let weights = diagonal_in(&x_of(&tomo.estimate), &basis);
    let counts = measure_product(&run, o, &basis, budget.observable_shots, &mut rng)?;
    let value = counts.mean_with(&weights);
    let stderr = bootstrap_stderr(BOOTSTRAP_RESAMPLES, &mut rng, |r| {
        let Ok(t2) = tomo.resample(r) else { return f64::NAN };
        resample_counts(&counts, r).mean_with(&diagonal_in(&x_of(&t2.estimate), &basis))
    });
    Ok((value, stderr, tomo.raw_shots, budget.observable_shots))
}

/// `Tr(O E^(2)(rho_in))` with `E^(2)(rho) = sum_i p_i^2 E_i rho E_i^dagger`.
pub fn virtual_distillation_estimate(
    iso: &StinespringIsometry,
    rho_in: &DensityMatrix,
    o: &Observable,
    budget: &ShotBudget,
    seed: u64,
) -> Result<EstimatorReport> {
    let (value, stderr, tomo, obs) = two_stage(iso, rho_in, o, budget, seed, |rb| rb.matrix().clone())?;
    let truth = trace_product(o.matrix(), &iso.distilled_apply(rho_in.matrix())).re;
    Ok(EstimatorReport::new("channel_distillation", value, Some(truth), stderr, seed)
        .with_shots("tomography", tomo)
        .with_shots("observable", obs))
}

/// `Tr(O E_0 rho_in E_0^dagger)` for the dominant canonical Kraus operator.
pub fn channel_pca_estimate(
    iso: &StinespringIsometry,
    rho_in: &DensityMatrix,
    o: &Observable,
    budget: &ShotBudget,
    seed: u64,
) -> Result<EstimatorReport> {
    let p = iso.weights();
    let gap = p[0] - p.get(1).copied().unwrap_or(0.0);
    if gap < MIN_PCA_GAP {
        return Err(Error::Gap { gap, required: MIN_PCA_GAP });
    }
    let (value, stderr, tomo, obs) = two_stage(iso, rho_in, o, budget, seed, |rb| {
        let s = rb.spectral();
        s.projector(0) * real(1.0 / s.eigenvalues()[0])
    })?;
    let truth = iso.principal_expectation(rho_in.matrix(), o.matrix());
    Ok(EstimatorReport::new("channel_pca", value, Some(truth), stderr, seed)
        .with_shots("tomography", tomo)
        .with_shots("observable", obs)
        .with_extra("gap", gap))
}
