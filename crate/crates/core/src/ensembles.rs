//! Haar sampling and the structured state families used by the protocols and
//! the distinguishing experiments.
//!
//! Size convention: for the two purity families `n` counts rho's qubits plus
//! one purifying qubit, so rho lives on `n - 1` qubits. Every other family
//! samples rho on `n` qubits; the classically correlated families append a
//! two-qubit label register after that.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{basis_vector, kron, kron_vec, outer, real, CMatrix, CVector, DensityMatrix, PureState, ONE};
use crate::rng::{derive_seed, rng_from_seed};

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    Complex64::new(StandardNormal.sample(rng), StandardNormal.sample(rng))
}

fn ginibre<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMatrix {
    // Row-major fill so the stream order does not depend on nalgebra's layout.
    let data: Vec<Complex64> = (0..rows * cols).map(|_| gaussian(rng)).collect();
    CMatrix::from_row_slice(rows, cols, &data)
}

/// Haar-random pure state on `n` qubits, as a normalized Gaussian vector.
pub fn haar_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<CVector> {
    if n == 0 {
        return Err(Error::Domain("a Haar state needs at least one qubit".into()));
    }
    let v = CVector::from_fn(1 << n, |_, _| gaussian(rng));
    let norm = v.norm();
    Ok(v / real(norm))
}

/// Haar-random pure state with the whole register assigned to A.
pub fn haar_state<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<PureState> {
    PureState::normalized(haar_vector(n, rng)?, n, 0)
}

/// `d x r` matrix with orthonormal Haar-distributed columns: QR of a Ginibre
/// matrix with the phases of R's diagonal moved into Q.
pub fn haar_frame<R: Rng + ?Sized>(dim: usize, cols: usize, rng: &mut R) -> Result<CMatrix> {
    if cols == 0 || cols > dim {
        return Err(Error::Dimension(format!("cannot draw {cols} orthonormal columns in dimension {dim}")));
    }
    let qr = ginibre(dim, cols, rng).qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..cols {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { ONE };
        for i in 0..dim {
            q[(i, j)] *= phase;
        }
    }
    Ok(q)
}

pub fn haar_unitary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<CMatrix> {
    if n == 0 {
        return Err(Error::Domain("a Haar unitary needs at least one qubit".into()));
    }
    haar_frame(1 << n, 1 << n, rng)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EnsembleFamily {
    PurityS1,
    PurityS2,
    VcPcaS1,
    VcPcaS2,
    FisherS1,
    FisherS2,
    ClassCorrCS1,
    ClassCorrCS2,
    HaarPure,
    RandomRankR,
}

impl EnsembleFamily {
    pub fn min_n(self) -> usize {
        match self {
            Self::PurityS1 | Self::PurityS2 | Self::FisherS1 | Self::FisherS2 => 2,
            Self::VcPcaS1 | Self::VcPcaS2 | Self::ClassCorrCS1 | Self::ClassCorrCS2 => 3,
            Self::HaarPure | Self::RandomRankR => 1,
        }
    }

    /// Rank of the sampled rho (for the correlated families, of the joint state).
    pub fn declared_rank(self, spec_rank: usize) -> usize {
        match self {
            Self::PurityS1 | Self::PurityS2 => 2,
            Self::VcPcaS1 | Self::VcPcaS2 | Self::FisherS1 | Self::FisherS2 => 3,
            Self::ClassCorrCS1 | Self::ClassCorrCS2 => 3,
            Self::HaarPure => 1,
            Self::RandomRankR => spec_rank,
        }
    }

    /// Qubits of the sampled density matrix.
    pub fn state_qubits(self, n: usize) -> usize {
        match self {
            Self::PurityS1 | Self::PurityS2 => n - 1,
            Self::ClassCorrCS1 | Self::ClassCorrCS2 => n + 2,
            _ => n,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub family: EnsembleFamily,
    pub n: usize,
    #[serde(default = "default_rank")]
    pub rank: usize,
    #[serde(default)]
    pub weights: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn default_rank() -> usize {
    1
}

impl EnsembleSpec {
    pub fn new(family: EnsembleFamily, n: usize, seed: u64) -> Self {
        Self { family, n, rank: family.declared_rank(1), weights: vec![], seed }
    }

    pub fn random_rank(n: usize, weights: Vec<f64>, seed: u64) -> Self {
        Self { family: EnsembleFamily::RandomRankR, n, rank: weights.len(), weights, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < self.family.min_n() {
            return Err(Error::Validation(format!(
                "{:?} needs n >= {}, got {}",
                self.family,
                self.family.min_n(),
                self.n
            )));
        }
        if self.n > 14 {
            return Err(Error::Validation(format!("n = {} exceeds the dense-simulation cap", self.n)));
        }
        if self.family == EnsembleFamily::RandomRankR {
            if self.rank == 0 || self.rank > 1 << self.n || self.weights.len() != self.rank {
                return Err(Error::Validation(format!(
                    "rank {} with {} weights on {} qubits",
                    self.rank,
                    self.weights.len(),
                    self.n
                )));
            }
            let total: f64 = self.weights.iter().sum();
            if self.weights.iter().any(|w| *w < 0.0) || (total - 1.0).abs() > 1e-12 {
                return Err(Error::Validation(format!("weights must be nonnegative and sum to 1, got {total}")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("spec serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(s).map_err(|e| Error::Validation(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }
}

/// A sampled state plus the hidden ingredients that produced it.
#[derive(Clone, Debug)]
pub struct LabeledSample {
    pub rho: DensityMatrix,
    /// `rho = sum_i w_i |v_i><v_i|` over these components. Oracle use only.
    pub hidden: Vec<(f64, CVector)>,
    pub label: EnsembleFamily,
    pub declared_rank: usize,
}

impl LabeledSample {
    pub fn reconstruct(&self) -> CMatrix {
        let d = self.rho.dim();
        self.hidden.iter().fold(CMatrix::zeros(d, d), |acc, (w, v)| acc + outer(v, v) * real(*w))
    }
}

fn ket(dim: usize, i: usize) -> CVector {
    basis_vector(dim, i)
}

fn zero_state(qubits: usize) -> CVector {
    ket(1 << qubits, 0)
}

/// Draw from `spec` using `rng`; `spec.seed` is ignored here.
pub fn sample_ensemble_with<R: Rng + ?Sized>(spec: &EnsembleSpec, rng: &mut R) -> Result<LabeledSample> {
    use EnsembleFamily::*;
    spec.validate()?;
    let n = spec.n;
    let hidden: Vec<(f64, CVector)> = match spec.family {
        PurityS1 | PurityS2 => {
            let u = haar_vector(n - 1, rng)?;
            let v = haar_vector(n - 1, rng)?;
            let w = if spec.family == PurityS1 { 0.9 } else { 0.5 };
            vec![(w, u), (1.0 - w, v)]
        }
        VcPcaS1 | VcPcaS2 => {
            let u1 = haar_vector(n - 1, rng)?;
            let u2 = haar_vector(n - 2, rng)?;
            let u3 = haar_vector(n - 2, rng)?;
            let (big, small) = if spec.family == VcPcaS1 { (0, 1) } else { (1, 0) };
            vec![
                (0.5, kron_vec(&ket(2, big), &u1)),
                (0.25, kron_vec(&ket(2, small), &kron_vec(&ket(2, 0), &u2))),
                (0.25, kron_vec(&ket(2, small), &kron_vec(&ket(2, 1), &u3))),
            ]
        }
        FisherS1 | FisherS2 => {
            let u = haar_vector(n - 1, rng)?;
            let v = haar_vector(n - 1, rng)?;
            let (first, second) = if spec.family == FisherS1 {
                (ket(2, 0), ket(2, 1))
            } else {
                let s = 0.5_f64.sqrt();
                (CVector::from_vec(vec![real(s), real(s)]), CVector::from_vec(vec![real(s), real(-s)]))
            };
            vec![(0.5, kron_vec(&first, &u)), (0.375, kron_vec(&second, &u)), (0.125, kron_vec(&second, &v))]
        }
        ClassCorrCS1 | ClassCorrCS2 => {
            let u = haar_vector(n - 2, rng)?;
            let v = haar_vector(n - 2, rng)?;
            let payloads = if spec.family == ClassCorrCS1 { [&u, &u, &v] } else { [&u, &v, &v] };
            [0.5, 0.375, 0.125]
                .iter()
                .zip(payloads)
                .enumerate()
                .map(|(i, (w, p))| (*w, kron_vec(&kron_vec(&ket(4, i), p), &ket(4, i))))
                .collect()
        }
        HaarPure => vec![(1.0, haar_vector(n, rng)?)],
        RandomRankR => {
            let frame = haar_frame(1 << n, spec.rank, rng)?;
            spec.weights.iter().enumerate().map(|(j, w)| (*w, frame.column(j).into_owned())).collect()
        }
    };
    let rho = DensityMatrix::mixture(&hidden)?;
    Ok(LabeledSample { rho, hidden, label: spec.family, declared_rank: spec.family.declared_rank(spec.rank) })
}

/// Draw sample `index` of the stream keyed by `spec.seed`.
pub fn sample_ensemble(spec: &EnsembleSpec, index: u64) -> Result<LabeledSample> {
    let mut rng = rng_from_seed(derive_seed(spec.seed, index));
    sample_ensemble_with(spec, &mut rng)
}

/// Exact mean of `Tr(rho^2)` over a purity family; `d = 2^(n-1)`.
pub fn analytic_mean_purity(family: EnsembleFamily, n: usize) -> Result<f64> {
    let d = (1u64 << (n - 1)) as f64;
    match family {
        EnsembleFamily::PurityS1 => Ok(0.82 + 0.18 / d),
        EnsembleFamily::PurityS2 => Ok(0.5 + 0.5 / d),
        other => Err(Error::UnknownPairing(format!("no purity mean for {other:?}"))),
    }
}

fn check_capacity(rho: &DensityMatrix, n_b: usize) -> Result<usize> {
    let rank = rho.rank();
    if n_b >= usize::BITS as usize || rank > 1usize << n_b {
        return Err(Error::Capacity { rank, capacity: 1usize.checked_shl(n_b as u32).unwrap_or(usize::MAX) });
    }
    Ok(rank)
}

/// Canonical purification `sum_j sqrt(lambda_j) |a_j> (x) |j>` with the
/// eigenvalues in descending order.
pub fn purify(rho: &DensityMatrix, n_b: usize) -> Result<PureState> {
    if n_b == 0 {
        return Err(Error::Domain("purification needs at least one B qubit".into()));
    }
    let rank = check_capacity(rho, n_b)?;
    let spec = rho.spectral();
    let db = 1usize << n_b;
    let mut psi = CVector::zeros(rho.dim() * db);
    for j in 0..rank {
        let a = spec.vector(j);
        psi += kron_vec(&a, &ket(db, j)) * real(spec.eigenvalues()[j].max(0.0).sqrt());
    }
    PureState::normalized(psi, rho.n_qubits(), n_b)
}

/// `sum_j lambda_j |a_j><a_j| (x) |j><j|`.
pub fn classical_correlate(rho: &DensityMatrix, n_b: usize) -> Result<DensityMatrix> {
    let rank = check_capacity(rho, n_b)?;
    let spec = rho.spectral();
    let db = 1usize << n_b;
    let total: f64 = spec.eigenvalues()[..rank].iter().map(|l| l.max(0.0)).sum();
    let mut m = CMatrix::zeros(rho.dim() * db, rho.dim() * db);
    for j in 0..rank {
        let w = spec.eigenvalues()[j].max(0.0) / total;
        m += kron(&spec.projector(j), &outer(&ket(db, j), &ket(db, j))) * real(w);
    }
    DensityMatrix::new(m)
}

/// `alpha U|0> (x) |0> + sqrt(1 - alpha^2) V|0> (x) |1>` with the single B
/// qubit last.
pub fn verification_state(alpha: f64, u: &CMatrix, v: &CMatrix) -> Result<PureState> {
    if !(0.0..=1.0).contains(&alpha.abs()) {
        return Err(Error::Domain(format!("alpha = {alpha} outside [-1, 1]")));
    }
    if u.shape() != v.shape() || u.nrows() != u.ncols() {
        return Err(Error::Dimension(format!("U is {:?}, V is {:?}", u.shape(), v.shape())));
    }
    let n_a = crate::linalg::qubits_for_dim(u.nrows())?;
    let beta = (1.0 - alpha * alpha).max(0.0).sqrt();
    let zero = zero_state(n_a);
    let ua = u * &zero;
    let va = v * &zero;
    let psi = kron_vec(&ua, &ket(2, 0)) * real(alpha) + kron_vec(&va, &ket(2, 1)) * real(beta);
    PureState::normalized(psi, n_a, 1)
}

/// Unitary with `|0>` mapped to `psi`: a Householder-style completion.
pub fn unitary_from_state(psi: &CVector) -> Result<CMatrix> {
    let d = psi.len();
    crate::linalg::qubits_for_dim(d)?;
    let mut m = CMatrix::identity(d, d);
    // Gram-Schmidt the remaining identity columns against psi.
    let mut cols: Vec<CVector> = vec![psi.clone()];
    for i in 0..d {
        if cols.len() == d {
            break;
        }
        let mut e = ket(d, i);
        for c in &cols {
            let p = c.dotc(&e);
            e -= c * p;
        }
        let norm = e.norm();
        if norm > 1e-8 {
            cols.push(e / real(norm));
        }
    }
    for (j, c) in cols.iter().enumerate() {
        m.set_column(j, c);
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{identity, partial_trace, pauli, schmidt_decompose, trace_norm, Observable, Subsystem};

    #[test]
    fn haar_state_is_deterministic_per_seed() {
        let a = haar_state(3, &mut rng_from_seed(5)).unwrap();
        let b = haar_state(3, &mut rng_from_seed(5)).unwrap();
        assert_eq!(a, b);
        assert!(matches!(haar_state(0, &mut rng_from_seed(5)), Err(Error::Domain(_))));
    }

    #[test]
    fn haar_qubit_bloch_vector_averages_to_origin() {
        let mut rng = rng_from_seed(1);
        let (x, y, z) = (pauli('X').unwrap(), pauli('Y').unwrap(), pauli('Z').unwrap());
        let mut acc = [0.0; 3];
        let runs = 10_000;
        for _ in 0..runs {
            let s = haar_state(1, &mut rng).unwrap();
            for (k, p) in [&x, &y, &z].iter().enumerate() {
                acc[k] += s.expectation(p).unwrap().re;
            }
        }
        let norm = acc.iter().map(|a| (a / runs as f64).powi(2)).sum::<f64>().sqrt();
        assert!(norm < 0.05, "mean Bloch vector length {norm}");
    }

    #[test]
    fn haar_overlap_with_fixed_state_averages_to_inverse_dimension() {
        let mut rng = rng_from_seed(2);
        let runs = 10_000;
        let mean: f64 = (0..runs).map(|_| haar_vector(2, &mut rng).unwrap()[0].norm_sqr()).sum::<f64>() / runs as f64;
        assert!((mean - 0.25).abs() < 0.02, "{mean}");
    }

    #[test]
    fn haar_unitary_is_unitary_and_unbiased() {
        let mut rng = rng_from_seed(3);
        let u = haar_unitary(3, &mut rng).unwrap();
        assert!((u.adjoint() * &u - identity(8)).norm() < 1e-12);
        // E|U_00|^2 = 1/d and E U_00 = 0; phase correction removes the QR bias.
        let runs = 4000;
        let mut sq = 0.0;
        let mut first = Complex64::new(0.0, 0.0);
        for _ in 0..runs {
            let u = haar_unitary(1, &mut rng).unwrap();
            sq += u[(0, 0)].norm_sqr();
            first += u[(0, 0)];
        }
        assert!((sq / runs as f64 - 0.5).abs() < 0.03);
        assert!((first / runs as f64).norm() < 0.05);
    }

    #[test]
    fn purity_s1_with_orthogonal_components_has_purity_0_82() {
        let mut rng = rng_from_seed(4);
        let u = haar_vector(3, &mut rng).unwrap();
        let mut v = haar_vector(3, &mut rng).unwrap();
        v -= &u * u.dotc(&v);
        let v = v.normalize();
        let rho = DensityMatrix::mixture(&[(0.9, u), (0.1, v)]).unwrap();
        assert!((rho.purity() - 0.82).abs() < 1e-12);
    }

    #[test]
    fn vcpca_samples_have_signed_eighth() {
        for (family, sign) in [(EnsembleFamily::VcPcaS1, 1.0), (EnsembleFamily::VcPcaS2, -1.0)] {
            for i in 0..5 {
                let s = sample_ensemble(&EnsembleSpec::new(family, 4, 9), i).unwrap();
                let z1 = Observable::z_on(4, 0).unwrap();
                let rho2 = s.rho.matrix() * s.rho.matrix();
                let v = crate::linalg::trace_product(z1.matrix(), &rho2).re;
                assert!((v - sign / 8.0).abs() < 1e-10);
                assert_eq!(s.rho.rank(), 3);
            }
        }
    }

    #[test]
    fn samples_reconstruct_from_hidden_data() {
        use EnsembleFamily::*;
        for family in [PurityS1, PurityS2, VcPcaS1, VcPcaS2, FisherS1, FisherS2, ClassCorrCS1, ClassCorrCS2, HaarPure] {
            let s = sample_ensemble(&EnsembleSpec::new(family, 4, 1), 0).unwrap();
            assert!(trace_norm(&(s.reconstruct() - s.rho.matrix())) < 1e-10, "{family:?}");
            assert_eq!(s.rho.n_qubits(), family.state_qubits(4));
            assert_eq!(s.rho.rank(), s.declared_rank, "{family:?}");
        }
        let spec = EnsembleSpec::random_rank(3, vec![0.5, 0.3, 0.2], 2);
        let s = sample_ensemble(&spec, 0).unwrap();
        assert_eq!(s.rho.rank(), 3);
    }

    #[test]
    fn spec_validation_and_json_round_trip() {
        let spec = EnsembleSpec::random_rank(2, vec![0.6, 0.4], 11);
        let back = EnsembleSpec::from_json(&spec.to_json()).unwrap();
        assert_eq!(spec, back);
        assert!(EnsembleSpec::new(EnsembleFamily::FisherS1, 1, 0).validate().is_err());
        assert!(EnsembleSpec::random_rank(2, vec![0.6, 0.3], 0).validate().is_err());
        assert!(EnsembleSpec::from_json(r#"{"family":"Nope","n":3}"#).is_err());
        let parsed = EnsembleSpec::from_json(r#"{"family":"PurityS1","n":4,"seed":3}"#).unwrap();
        assert_eq!(parsed.family, EnsembleFamily::PurityS1);
    }

    #[test]
    fn purify_round_trips() {
        let rho = DensityMatrix::maximally_mixed(1);
        let psi = purify(&rho, 1).unwrap();
        let dec = schmidt_decompose(&psi).unwrap();
        assert!((dec.coefficients[0] - 0.5).abs() < 1e-12 && (dec.coefficients[1] - 0.5).abs() < 1e-12);

        let pure = DensityMatrix::from_pure(&haar_vector(2, &mut rng_from_seed(3)).unwrap()).unwrap();
        let psi = purify(&pure, 1).unwrap();
        let b = partial_trace(&psi, &Subsystem::B).unwrap();
        assert!((b.matrix()[(0, 0)].re - 1.0).abs() < 1e-12);

        let spec = EnsembleSpec::random_rank(2, vec![0.9, 0.1], 3);
        let s = sample_ensemble(&spec, 0).unwrap();
        let psi = purify(&s.rho, 1).unwrap();
        let dec = schmidt_decompose(&psi).unwrap();
        assert!((dec.coefficients[0] - 0.9).abs() < 1e-10 && (dec.coefficients[1] - 0.1).abs() < 1e-10);
        let back = partial_trace(&psi, &Subsystem::A).unwrap();
        assert!(trace_norm(&(back.matrix() - s.rho.matrix())) < 1e-10);
        // B marginal is diagonal in the computational basis, descending.
        let rb = psi.reduced_b();
        assert!((rb.matrix()[(0, 0)].re - 0.9).abs() < 1e-10);
        assert!(rb.matrix()[(0, 1)].norm() < 1e-10);
    }

    #[test]
    fn purify_rejects_insufficient_capacity() {
        let rho = DensityMatrix::maximally_mixed(2);
        assert!(matches!(purify(&rho, 1), Err(Error::Capacity { rank: 4, capacity: 2 })));
        assert!(matches!(classical_correlate(&rho, 1), Err(Error::Capacity { .. })));
    }

    #[test]
    fn classical_correlate_examples() {
        let v = haar_vector(2, &mut rng_from_seed(8)).unwrap();
        let pure = DensityMatrix::from_pure(&v).unwrap();
        let cc = classical_correlate(&pure, 1).unwrap();
        let expected = kron(pure.matrix(), &outer(&ket(2, 0), &ket(2, 0)));
        assert!((cc.matrix() - expected).norm() < 1e-10);

        let half = DensityMatrix::maximally_mixed(1);
        let cc = classical_correlate(&half, 1).unwrap();
        let spec = half.spectral();
        let expected = (kron(&spec.projector(0), &outer(&ket(2, 0), &ket(2, 0)))
            + kron(&spec.projector(1), &outer(&ket(2, 1), &ket(2, 1))))
            * real(0.5);
        assert!((cc.matrix() - expected).norm() < 1e-12);

        for i in 0..10 {
            let s = sample_ensemble(&EnsembleSpec::random_rank(3, vec![0.7, 0.3], 4), i).unwrap();
            let cc = classical_correlate(&s.rho, 1).unwrap();
            let a = partial_trace(&cc, &Subsystem::Qubits(vec![0, 1, 2])).unwrap();
            let b = partial_trace(&cc, &Subsystem::Qubits(vec![3])).unwrap();
            assert!(trace_norm(&(a.matrix() - s.rho.matrix())) < 1e-10);
            assert!((b.purity() - s.rho.purity()).abs() < 1e-10);
        }
    }

    #[test]
    fn verification_state_marginals() {
        let mut rng = rng_from_seed(6);
        let u = haar_unitary(2, &mut rng).unwrap();
        let v = haar_unitary(2, &mut rng).unwrap();
        let (uu, vv) = (u.column(0).into_owned(), v.column(0).into_owned());

        let psi = verification_state(0.9_f64.sqrt(), &u, &v).unwrap();
        let expected = outer(&uu, &uu) * real(0.9) + outer(&vv, &vv) * real(0.1);
        assert!(trace_norm(&(psi.reduced_a().matrix() - expected)) < 1e-10);

        let psi = verification_state(1.0, &u, &v).unwrap();
        assert!((psi.reduced_a().purity() - 1.0).abs() < 1e-12);

        let psi = verification_state(0.5_f64.sqrt(), &u, &v).unwrap();
        let overlap = uu.dotc(&vv).norm_sqr();
        assert!((psi.reduced_a().purity() - (0.5 + 0.5 * overlap)).abs() < 1e-12);

        assert!(matches!(verification_state(0.5, &u, &identity(2)), Err(Error::Dimension(_))));
    }

    #[test]
    fn unitary_from_state_maps_zero_to_target() {
        let v = haar_vector(3, &mut rng_from_seed(2)).unwrap();
        let u = unitary_from_state(&v).unwrap();
        assert!((u.adjoint() * &u - identity(8)).norm() < 1e-10);
        assert!((u.column(0) - &v).norm() < 1e-14);
    }
}
