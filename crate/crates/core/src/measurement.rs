//! Finite-shot measurement simulation.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::bipartite::Bipartite;
use crate::ensembles::haar_frame;
use crate::error::{Error, Result};
use crate::linalg::{hermitian_part, kron, pauli, real, CMatrix, DensityMatrix, Observable, StateRef};

/// Largest tomography target, in qubits.
pub const MAX_TOMOGRAPHY_QUBITS: usize = 6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotBudget {
    pub tomography_shots: u64,
    pub observable_shots: u64,
    pub unitaries: u64,
    pub shots_per_unitary: u64,
}

impl ShotBudget {
    /// Split `total` between tomography and the observable stage.
    pub fn split(total: u64, tomography_fraction: f64) -> Self {
        let tomo = ((total as f64) * tomography_fraction.clamp(0.0, 1.0)).round() as u64;
        Self { tomography_shots: tomo, observable_shots: total - tomo, ..Self::default() }
    }

    /// 50/50 split.
    pub fn even(total: u64) -> Self {
        Self::split(total, 0.5)
    }

    pub fn tomography_only(total: u64) -> Self {
        Self { tomography_shots: total, ..Self::default() }
    }

    pub fn randomized(unitaries: u64, shots_per_unitary: u64) -> Self {
        Self { unitaries, shots_per_unitary, ..Self::default() }
    }

    pub fn total(&self) -> u64 {
        self.tomography_shots + self.observable_shots + self.unitaries * self.shots_per_unitary
    }

    pub fn validate(&self) -> Result<()> {
        if self.total() == 0 {
            return Err(Error::Validation("shot budget is empty".into()));
        }
        Ok(())
    }
}

/// Multinomial counts for `shots` draws, via sequential binomials. The last
/// outcome with positive probability absorbs the remainder, so a
/// deterministic distribution yields exact counts.
pub fn sample_counts<R: Rng + ?Sized>(probs: &[f64], shots: u64, rng: &mut R) -> Vec<u64> {
    let mut counts = vec![0u64; probs.len()];
    let clean: Vec<f64> = probs.iter().map(|p| if p.is_finite() { p.max(0.0) } else { 0.0 }).collect();
    let last = match clean.iter().rposition(|p| *p > 0.0) {
        Some(i) => i,
        None => return counts,
    };
    let mut remaining = shots;
    let mut mass: f64 = clean.iter().sum();
    for (i, p) in clean.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if i == last {
            counts[i] = remaining;
            break;
        }
        if *p == 0.0 {
            continue;
        }
        let q = (p / mass).clamp(0.0, 1.0);
        let k = Binomial::new(remaining, q).expect("valid binomial").sample(rng);
        counts[i] = k;
        remaining -= k;
        mass -= p;
        if mass <= 0.0 {
            counts[last] += remaining;
            break;
        }
    }
    counts
}

/// Outcome counts keyed by bitstring (qubit 0 leftmost).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    pub n_qubits: usize,
    pub shots: u64,
    pub counts: BTreeMap<String, u64>,
}

impl Histogram {
    pub fn from_counts(n_qubits: usize, counts: &[u64]) -> Self {
        let map =
            counts.iter().enumerate().filter(|(_, c)| **c > 0).map(|(i, c)| (format!("{i:0n_qubits$b}"), *c)).collect();
        Self { n_qubits, shots: counts.iter().sum(), counts: map }
    }

    pub fn get(&self, index: usize) -> u64 {
        self.counts.get(&format!("{index:0w$b}", w = self.n_qubits)).copied().unwrap_or(0)
    }

    pub fn to_dense(&self) -> Vec<u64> {
        (0..1usize << self.n_qubits).map(|i| self.get(i)).collect()
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.to_dense().iter().map(|c| *c as f64 / self.shots.max(1) as f64).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("histogram serializes")
    }
}

fn require_shots(shots: u64) -> Result<()> {
    if shots == 0 {
        return Err(Error::Domain("at least one shot is required".into()));
    }
    Ok(())
}

/// Sample outcomes `s` with probability `|<s|U^dagger|psi>|^2`, i.e. measure
/// in the basis formed by the columns of `basis`.
pub fn measure_in_basis<'a, R: Rng + ?Sized>(
    state: impl Into<StateRef<'a>>,
    basis: &CMatrix,
    shots: u64,
    rng: &mut R,
) -> Result<Histogram> {
    require_shots(shots)?;
    let state = state.into();
    if basis.shape() != (state.dim(), state.dim()) {
        return Err(Error::Dimension(format!("basis {:?} for dimension {}", basis.shape(), state.dim())));
    }
    let probs = state.probabilities_in(basis)?;
    Ok(Histogram::from_counts(state.n_qubits(), &sample_counts(&probs, shots, rng)))
}

/// Empirical mean of eigenvalue outcomes of `o`.
pub fn measure_observable<'a, R: Rng + ?Sized>(
    state: impl Into<StateRef<'a>>,
    o: &Observable,
    shots: u64,
    rng: &mut R,
) -> Result<f64> {
    require_shots(shots)?;
    let state = state.into();
    if o.dim() != state.dim() {
        return Err(Error::Dimension(format!(
            "observable of dimension {} on state of dimension {}",
            o.dim(),
            state.dim()
        )));
    }
    let probs = state.probabilities_in(o.spectral().eigenvectors())?;
    let counts = sample_counts(&probs, shots, rng);
    let sum: f64 = counts.iter().zip(o.spectral().eigenvalues()).map(|(c, l)| *c as f64 * l).sum();
    Ok(sum / shots as f64)
}

/// Counts from measuring `O (x) X` on a bipartite state, A in `O`'s
/// eigenbasis and B in a chosen basis. Values on B are applied afterwards.
#[derive(Clone, Debug)]
pub struct ProductCounts {
    pub counts: Vec<u64>,
    pub values_a: Vec<f64>,
    pub dim_b: usize,
    pub shots: u64,
}

impl ProductCounts {
    /// `sum counts[a, b] o_a w_b / shots`.
    pub fn mean_with(&self, weights_b: &[f64]) -> f64 {
        self.moments(weights_b).0
    }

    /// Mean and per-shot variance of the outcome `o_a w_b`.
    pub fn moments(&self, weights_b: &[f64]) -> (f64, f64) {
        let (mut s1, mut s2) = (0.0, 0.0);
        for (i, c) in self.counts.iter().enumerate() {
            if *c == 0 {
                continue;
            }
            let v = self.values_a[i / self.dim_b] * weights_b[i % self.dim_b];
            s1 += *c as f64 * v;
            s2 += *c as f64 * v * v;
        }
        let n = self.shots as f64;
        let mean = s1 / n;
        (mean, (s2 / n - mean * mean).max(0.0))
    }
}

pub fn measure_product<B: Bipartite + ?Sized, R: Rng + ?Sized>(
    state: &B,
    o: &Observable,
    basis_b: &CMatrix,
    shots: u64,
    rng: &mut R,
) -> Result<ProductCounts> {
    require_shots(shots)?;
    let probs = state.product_probabilities(o.spectral().eigenvectors(), basis_b)?;
    Ok(ProductCounts {
        counts: sample_counts(&probs, shots, rng),
        values_a: o.spectral().eigenvalues().to_vec(),
        dim_b: state.dim_b(),
        shots,
    })
}

// ---------------------------------------------------------------------------
// Tomography

#[derive(Clone, Debug)]
pub struct TomographyResult {
    /// PSD-projected estimate.
    pub estimate: DensityMatrix,
    /// Linear-inversion estimate before projection.
    pub raw: CMatrix,
    pub raw_shots: u64,
    pub basis_settings: usize,
    /// Outcome counts per setting, settings in base-3 order (X, Y, Z per qubit).
    pub counts: Vec<Vec<u64>>,
}

impl TomographyResult {
    /// Re-estimate from counts redrawn at the observed frequencies.
    pub fn resample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<TomographyResult> {
        let m = self.estimate.n_qubits();
        let counts: Vec<Vec<u64>> = self
            .counts
            .iter()
            .map(|c| {
                let total: u64 = c.iter().sum();
                let probs: Vec<f64> = c.iter().map(|x| *x as f64).collect();
                sample_counts(&probs, total, rng)
            })
            .collect();
        reconstruct(m, counts)
    }
}

/// Basis whose columns map outcome bit 0 to the +1 eigenvector.
fn setting_basis(label: u8) -> CMatrix {
    let s = real(0.5_f64.sqrt());
    match label {
        0 => CMatrix::from_row_slice(2, 2, &[s, s, s, -s]),
        1 => CMatrix::from_row_slice(2, 2, &[s, s, s * crate::linalg::I, -s * crate::linalg::I]),
        _ => CMatrix::identity(2, 2),
    }
}

fn setting_labels(m: usize, setting: usize) -> Vec<u8> {
    (0..m).map(|q| ((setting / 3usize.pow((m - 1 - q) as u32)) % 3) as u8).collect()
}

/// Pauli-basis linear inversion followed by eigenvalue clipping and
/// renormalization. Shots are spread evenly over the `3^m` settings.
pub fn tomography<R: Rng + ?Sized>(rho: &DensityMatrix, shots: u64, rng: &mut R) -> Result<TomographyResult> {
    let m = rho.n_qubits();
    let d = rho.dim() as u64;
    if m > MAX_TOMOGRAPHY_QUBITS {
        return Err(Error::Guard(format!("tomography of {m} qubits exceeds the {MAX_TOMOGRAPHY_QUBITS}-qubit cap")));
    }
    if shots < d * d {
        return Err(Error::InsufficientData(format!("{shots} shots is below d^2 = {}", d * d)));
    }
    let settings = 3usize.pow(m as u32);
    let base = shots / settings as u64;
    let extra = (shots % settings as u64) as usize;
    let mut counts = Vec::with_capacity(settings);
    for s in 0..settings {
        let basis = setting_labels(m, s).iter().fold(CMatrix::identity(1, 1), |acc, l| kron(&acc, &setting_basis(*l)));
        let probs = StateRef::Mixed(rho).probabilities_in(&basis)?;
        let n = base + u64::from(s < extra);
        counts.push(sample_counts(&probs, n, rng));
    }
    reconstruct(m, counts)
}

fn reconstruct(m: usize, counts: Vec<Vec<u64>>) -> Result<TomographyResult> {
    let d = 1usize << m;
    let settings = counts.len();
    let raw_shots: u64 = counts.iter().map(|c| c.iter().sum::<u64>()).sum();
    let labels: Vec<Vec<u8>> = (0..settings).map(|s| setting_labels(m, s)).collect();
    let paulis = [pauli('X')?, pauli('Y')?, pauli('Z')?];
    let mut raw = CMatrix::identity(d, d);
    // Pauli string p: digit 0 = I, 1..=3 = X, Y, Z on each qubit.
    for p in 1..4usize.pow(m as u32) {
        let digits: Vec<usize> = (0..m).map(|q| (p / 4usize.pow((m - 1 - q) as u32)) % 4).collect();
        let (mut sum, mut total) = (0.0, 0u64);
        for (s, lab) in labels.iter().enumerate() {
            if digits.iter().zip(lab).any(|(dg, l)| *dg != 0 && *dg != *l as usize + 1) {
                continue;
            }
            let mask = digits
                .iter()
                .enumerate()
                .filter(|(_, dg)| **dg != 0)
                .fold(0usize, |acc, (q, _)| acc | 1 << (m - 1 - q));
            for (outcome, c) in counts[s].iter().enumerate() {
                let sign = if (outcome & mask).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
                sum += sign * *c as f64;
            }
            total += counts[s].iter().sum::<u64>();
        }
        if total == 0 {
            continue;
        }
        let op = digits.iter().fold(CMatrix::identity(1, 1), |acc, dg| {
            if *dg == 0 {
                kron(&acc, &CMatrix::identity(2, 2))
            } else {
                kron(&acc, &paulis[dg - 1])
            }
        });
        raw += op * real(sum / total as f64);
    }
    raw *= real(1.0 / d as f64);
    let raw = hermitian_part(&raw);
    let estimate = project_to_states(&raw)?;
    Ok(TomographyResult { estimate, raw, raw_shots, basis_settings: settings, counts })
}

/// Clip negative eigenvalues and renormalize the trace.
pub fn project_to_states(m: &CMatrix) -> Result<DensityMatrix> {
    let spec = crate::linalg::eigh(m, 0.0)?;
    let total: f64 = spec.eigenvalues().iter().map(|l| l.max(0.0)).sum();
    if total <= 0.0 {
        return Err(Error::InsufficientData("estimate has no positive part".into()));
    }
    let projected = spec.map_eigenvalues(|l| l.max(0.0) / total);
    DensityMatrix::new(projected)
}

// ---------------------------------------------------------------------------
// Randomized measurements

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomizedPurity {
    pub value: f64,
    pub stderr: f64,
    pub unitaries: u64,
    pub shots_per_unitary: u64,
}

/// Purity from global Haar-random measurements: for each unitary, the
/// collision estimate `sum_s n_s(n_s - 1) / (M(M - 1))` of `sum_s P(s)^2`,
/// mapped through `(d + 1) x - 1` and averaged.
pub fn randomized_measurement_purity<R: Rng + ?Sized>(
    rho: &DensityMatrix,
    unitaries: u64,
    shots_per_unitary: u64,
    rng: &mut R,
) -> Result<RandomizedPurity> {
    if unitaries < 2 || shots_per_unitary < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 unitaries and 2 shots each, got {unitaries} x {shots_per_unitary}"
        )));
    }
    let d = rho.dim();
    let spec = rho.spectral();
    let r = spec.rank().max(1);
    let weights: Vec<f64> = spec.eigenvalues()[..r].iter().map(|l| l.max(0.0)).collect();
    let m = shots_per_unitary as f64;
    let mut per_unitary = Vec::with_capacity(unitaries as usize);
    let mut probs = vec![0.0; d];
    for _ in 0..unitaries {
        // U applied to rho's eigenvectors is a Haar-random d x r frame.
        let frame = haar_frame(d, r, rng)?;
        for (s, p) in probs.iter_mut().enumerate() {
            *p = (0..r).map(|k| weights[k] * frame[(s, k)].norm_sqr()).sum();
        }
        let counts = sample_counts(&probs, shots_per_unitary, rng);
        let collisions: f64 = counts.iter().map(|c| (*c as f64) * (*c as f64 - 1.0)).sum();
        per_unitary.push((d as f64 + 1.0) * collisions / (m * (m - 1.0)) - 1.0);
    }
    Ok(RandomizedPurity {
        value: crate::stats::mean(&per_unitary),
        stderr: crate::stats::std_error(&per_unitary),
        unitaries,
        shots_per_unitary,
    })
}

/// Default allocation of a total budget: about `sqrt(N)` unitaries.
pub fn default_randomized_split(total: u64) -> (u64, u64) {
    let k = ((total as f64).sqrt().round() as u64).max(2);
    (k, (total / k).max(2))
}
