//! Dense complex linear algebra and quantum-object primitives.
//!
//! Register convention: qubit 0 is the most significant bit of a basis index.
//! A bipartite register stores system A before system B, so the amplitude of
//! `|a>|b>` sits at index `a * dim_b + b`.

use std::cmp::Ordering;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Default rank threshold, relative to the largest absolute eigenvalue.
pub const DEFAULT_RANK_TOL: f64 = 1e-9;

const HERMITIAN_TOL: f64 = 1e-10;
const TRACE_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-9;
const NORM_TOL: f64 = 1e-12;
const DEGENERACY_TOL: f64 = 1e-10;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const I: Complex64 = Complex64::new(0.0, 1.0);

#[inline]
pub fn real(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

pub fn identity(dim: usize) -> CMatrix {
    CMatrix::identity(dim, dim)
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

pub fn kron_vec(a: &CVector, b: &CVector) -> CVector {
    let mut out = CVector::zeros(a.len() * b.len());
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i * b.len() + j] = x * y;
        }
    }
    out
}

pub fn outer(a: &CVector, b: &CVector) -> CMatrix {
    a * b.adjoint()
}

pub fn basis_vector(dim: usize, index: usize) -> CVector {
    let mut v = CVector::zeros(dim);
    v[index] = ONE;
    v
}

/// Number of qubits for a power-of-two dimension.
pub fn qubits_for_dim(dim: usize) -> Result<usize> {
    if dim == 0 || !dim.is_power_of_two() {
        return Err(Error::Dimension(format!("dimension {dim} is not a power of two")));
    }
    Ok(dim.trailing_zeros() as usize)
}

/// Largest elementwise deviation from Hermiticity.
pub fn hermitian_deviation(m: &CMatrix) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in i..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

fn require_square(m: &CMatrix) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!("matrix is {}x{}, expected square", m.nrows(), m.ncols())));
    }
    Ok(())
}

/// `(M + M^dagger) / 2`.
pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * real(0.5)
}

// ---------------------------------------------------------------------------
// Pauli helpers

pub fn pauli(label: char) -> Result<CMatrix> {
    let m = match label {
        'I' | 'i' => identity(2),
        'X' | 'x' => CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO]),
        'Y' | 'y' => CMatrix::from_row_slice(2, 2, &[ZERO, -I, I, ZERO]),
        'Z' | 'z' => CMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE]),
        other => return Err(Error::Domain(format!("unknown Pauli label {other:?}"))),
    };
    Ok(m)
}

/// Tensor product of single-qubit Paulis, e.g. `"XIZ"` (qubit 0 first).
pub fn pauli_string(labels: &str) -> Result<CMatrix> {
    let mut out = CMatrix::identity(1, 1);
    for c in labels.chars() {
        out = kron(&out, &pauli(c)?);
    }
    if labels.is_empty() {
        return Err(Error::Domain("empty Pauli string".into()));
    }
    Ok(out)
}

/// `op` acting on qubit `q` of an `n`-qubit register, identity elsewhere.
pub fn embed_single(n: usize, q: usize, op: &CMatrix) -> Result<CMatrix> {
    if q >= n || op.shape() != (2, 2) {
        return Err(Error::Dimension(format!("cannot place a 2x2 operator on qubit {q} of {n}")));
    }
    let left = identity(1 << q);
    let right = identity(1 << (n - q - 1));
    Ok(kron(&kron(&left, op), &right))
}

// ---------------------------------------------------------------------------
// Spectral decomposition

/// Eigendecomposition of a Hermitian matrix, eigenvalues in descending order.
///
/// Each eigenvector's global phase is fixed so that its largest-magnitude
/// component is real and positive. Within a degenerate block the vectors are
/// ordered lexicographically by their phase-fixed coefficients.
#[derive(Clone, Debug)]
pub struct SpectralDecomposition {
    eigenvalues: Vec<f64>,
    eigenvectors: CMatrix,
    rank_tol: f64,
    declared_rank: Option<usize>,
}

impl SpectralDecomposition {
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &CMatrix {
        &self.eigenvectors
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn vector(&self, j: usize) -> CVector {
        self.eigenvectors.column(j).into_owned()
    }

    /// Absolute threshold separating zero from nonzero eigenvalues.
    pub fn rank_tol(&self) -> f64 {
        self.rank_tol
    }

    /// Declared rank if one was set, otherwise the number of eigenvalues whose
    /// magnitude exceeds `rank_tol`.
    pub fn rank(&self) -> usize {
        self.declared_rank.unwrap_or_else(|| self.eigenvalues.iter().filter(|l| l.abs() > self.rank_tol).count())
    }

    pub fn with_declared_rank(mut self, rank: usize) -> Self {
        self.declared_rank = Some(rank.min(self.dim()));
        self
    }

    pub fn principal(&self) -> (f64, CVector) {
        (self.eigenvalues[0], self.vector(0))
    }

    /// `lambda_0 - lambda_1`; for a one-dimensional space, `lambda_0`.
    pub fn gap(&self) -> f64 {
        match self.eigenvalues.as_slice() {
            [] => 0.0,
            [only] => *only,
            [a, b, ..] => a - b,
        }
    }

    pub fn projector(&self, j: usize) -> CMatrix {
        let v = self.vector(j);
        outer(&v, &v)
    }

    /// `V f(Lambda) V^dagger`.
    pub fn map_eigenvalues(&self, f: impl Fn(f64) -> f64) -> CMatrix {
        let d = self.dim();
        let mut scaled = self.eigenvectors.clone();
        for j in 0..d {
            let w = real(f(self.eigenvalues[j]));
            for i in 0..d {
                scaled[(i, j)] *= w;
            }
        }
        scaled * self.eigenvectors.adjoint()
    }

    pub fn reconstruct(&self) -> CMatrix {
        self.map_eigenvalues(|x| x)
    }
}

fn phase_fix(v: &mut CVector) {
    let max = v.iter().map(|c| c.norm()).fold(0.0_f64, f64::max);
    if max == 0.0 {
        return;
    }
    // First component within rounding of the maximum, so near-ties resolve the same way.
    let pivot = v.iter().position(|c| c.norm() >= max * (1.0 - 1e-12)).unwrap_or(0);
    let phase = v[pivot].conj() / v[pivot].norm();
    for c in v.iter_mut() {
        *c *= phase;
    }
    v[pivot] = real(v[pivot].norm());
}

fn lexicographic(a: &CVector, b: &CVector) -> Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        let o = y.re.total_cmp(&x.re).then(y.im.total_cmp(&x.im));
        if o != Ordering::Equal {
            return o;
        }
    }
    Ordering::Equal
}

/// Hermitian eigendecomposition. `rank_tol` is relative to the largest
/// absolute eigenvalue.
pub fn eigh(matrix: &CMatrix, rank_tol: f64) -> Result<SpectralDecomposition> {
    require_square(matrix)?;
    let scale = matrix.iter().map(|c| c.norm()).fold(1.0_f64, f64::max);
    let dev = hermitian_deviation(matrix);
    if dev > HERMITIAN_TOL * scale {
        return Err(Error::Validation(format!("matrix is not Hermitian (deviation {dev:.3e})")));
    }
    Ok(eigh_unchecked(&hermitian_part(matrix), rank_tol))
}

pub(crate) fn eigh_unchecked(matrix: &CMatrix, rank_tol: f64) -> SpectralDecomposition {
    let d = matrix.nrows();
    if d == 0 {
        return SpectralDecomposition {
            eigenvalues: vec![],
            eigenvectors: CMatrix::zeros(0, 0),
            rank_tol,
            declared_rank: None,
        };
    }
    let eig = matrix.clone().symmetric_eigen();
    let mut pairs: Vec<(f64, CVector)> = (0..d)
        .map(|j| {
            let mut v = eig.eigenvectors.column(j).into_owned();
            phase_fix(&mut v);
            (eig.eigenvalues[j], v)
        })
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));

    let largest = pairs.iter().map(|p| p.0.abs()).fold(0.0_f64, f64::max);
    let degenerate = DEGENERACY_TOL * largest.max(1.0);
    let mut start = 0;
    while start < d {
        let mut end = start + 1;
        while end < d && (pairs[start].0 - pairs[end].0).abs() <= degenerate {
            end += 1;
        }
        if end - start > 1 {
            pairs[start..end].sort_by(|a, b| lexicographic(&a.1, &b.1));
        }
        start = end;
    }

    let mut vectors = CMatrix::zeros(d, d);
    for (j, (_, v)) in pairs.iter().enumerate() {
        vectors.set_column(j, v);
    }
    SpectralDecomposition {
        eigenvalues: pairs.iter().map(|p| p.0).collect(),
        eigenvectors: vectors,
        rank_tol: rank_tol * largest,
        declared_rank: None,
    }
}

// ---------------------------------------------------------------------------
// States

/// A pure state on a bipartite register of `n_a + n_b` qubits.
#[derive(Clone, Debug, PartialEq)]
pub struct PureState {
    amplitudes: CVector,
    n_a: usize,
    n_b: usize,
}

impl PureState {
    pub fn new(amplitudes: CVector, n_a: usize, n_b: usize) -> Result<Self> {
        let n = n_a + n_b;
        if n == 0 || n >= usize::BITS as usize || amplitudes.len() != 1usize << n {
            return Err(Error::Dimension(format!(
                "{} amplitudes cannot describe {n_a}+{n_b} qubits",
                amplitudes.len()
            )));
        }
        let norm = amplitudes.norm();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::Validation(format!("state norm is {norm}, expected 1")));
        }
        Ok(Self { amplitudes, n_a, n_b })
    }

    /// Normalizes `amplitudes` before validating.
    pub fn normalized(amplitudes: CVector, n_a: usize, n_b: usize) -> Result<Self> {
        let norm = amplitudes.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::Validation("cannot normalize a zero vector".into()));
        }
        Self::new(amplitudes / real(norm), n_a, n_b)
    }

    pub fn basis(n_a: usize, n_b: usize, index: usize) -> Result<Self> {
        Self::new(basis_vector(1 << (n_a + n_b), index), n_a, n_b)
    }

    /// `a (x) b`, with `a` as system A and `b` as system B.
    pub fn product(a: &CVector, b: &CVector) -> Result<Self> {
        let n_a = qubits_for_dim(a.len())?;
        let n_b = if b.len() == 1 { 0 } else { qubits_for_dim(b.len())? };
        Self::normalized(kron_vec(a, b), n_a, n_b)
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amplitudes
    }

    pub fn n_a(&self) -> usize {
        self.n_a
    }

    pub fn n_b(&self) -> usize {
        self.n_b
    }

    pub fn n_qubits(&self) -> usize {
        self.n_a + self.n_b
    }

    pub fn dim_a(&self) -> usize {
        1 << self.n_a
    }

    pub fn dim_b(&self) -> usize {
        1 << self.n_b
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    /// Same amplitudes with a different A|B split.
    pub fn with_split(self, n_a: usize) -> Result<Self> {
        let n = self.n_qubits();
        if n_a > n {
            return Err(Error::Dimension(format!("split {n_a} exceeds {n} qubits")));
        }
        Ok(Self { amplitudes: self.amplitudes, n_a, n_b: n - n_a })
    }

    /// Amplitudes reshaped into a `dim_a x dim_b` matrix.
    pub fn amplitude_matrix(&self) -> CMatrix {
        let (da, db) = (self.dim_a(), self.dim_b());
        CMatrix::from_fn(da, db, |a, b| self.amplitudes[a * db + b])
    }

    pub fn to_density(&self) -> DensityMatrix {
        DensityMatrix::from_matrix_unchecked(outer(&self.amplitudes, &self.amplitudes))
    }

    /// `Tr_B |psi><psi|`.
    pub fn reduced_a(&self) -> DensityMatrix {
        let m = self.amplitude_matrix();
        DensityMatrix::from_matrix_unchecked(&m * m.adjoint())
    }

    /// `Tr_A |psi><psi|`.
    pub fn reduced_b(&self) -> DensityMatrix {
        let m = self.amplitude_matrix();
        DensityMatrix::from_matrix_unchecked((m.adjoint() * &m).transpose())
    }

    pub fn expectation(&self, op: &CMatrix) -> Result<Complex64> {
        if op.shape() != (self.dim(), self.dim()) {
            return Err(Error::Dimension(format!("operator {:?} on a state of dimension {}", op.shape(), self.dim())));
        }
        Ok(self.amplitudes.dotc(&(op * &self.amplitudes)))
    }
}

/// A density matrix on `n` qubits.
#[derive(Clone, Debug)]
pub struct DensityMatrix {
    matrix: CMatrix,
    n: usize,
    spectral: OnceLock<SpectralDecomposition>,
}

impl DensityMatrix {
    /// Validates Hermiticity (1e-10), unit trace (1e-10) and numerical
    /// positivity (minimum eigenvalue >= -1e-9).
    pub fn new(matrix: CMatrix) -> Result<Self> {
        require_square(&matrix)?;
        let n = qubits_for_dim(matrix.nrows())?;
        let dev = hermitian_deviation(&matrix);
        if dev > HERMITIAN_TOL {
            return Err(Error::Validation(format!("density matrix not Hermitian (deviation {dev:.3e})")));
        }
        let tr = matrix.trace();
        if (tr - ONE).norm() > TRACE_TOL {
            return Err(Error::Validation(format!("density matrix trace is {tr}")));
        }
        let rho = Self { matrix: hermitian_part(&matrix), n, spectral: OnceLock::new() };
        let min = rho.spectral().eigenvalues().last().copied().unwrap_or(0.0);
        if min < -PSD_TOL {
            return Err(Error::Validation(format!("density matrix has eigenvalue {min:.3e}")));
        }
        Ok(rho)
    }

    /// Trusted constructor for matrices that are density matrices by
    /// construction; only Hermitian-symmetrizes.
    pub(crate) fn from_matrix_unchecked(matrix: CMatrix) -> Self {
        let n = matrix.nrows().trailing_zeros() as usize;
        Self { matrix: hermitian_part(&matrix), n, spectral: OnceLock::new() }
    }

    pub fn from_pure(v: &CVector) -> Result<Self> {
        qubits_for_dim(v.len())?;
        let norm = v.norm();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::Validation(format!("state norm is {norm}, expected 1")));
        }
        Ok(Self::from_matrix_unchecked(outer(v, v)))
    }

    pub fn maximally_mixed(n: usize) -> Self {
        let d = 1usize << n;
        Self::from_matrix_unchecked(identity(d) * real(1.0 / d as f64))
    }

    /// `sum_i w_i |v_i><v_i|` for normalized `v_i` and weights summing to one.
    pub fn mixture(components: &[(f64, CVector)]) -> Result<Self> {
        let first = components.first().ok_or_else(|| Error::Domain("empty mixture".into()))?;
        let d = first.1.len();
        qubits_for_dim(d)?;
        let total: f64 = components.iter().map(|c| c.0).sum();
        if (total - 1.0).abs() > 1e-12 || components.iter().any(|c| c.0 < 0.0) {
            return Err(Error::Validation(format!("mixture weights sum to {total}")));
        }
        let mut m = CMatrix::zeros(d, d);
        for (w, v) in components {
            if v.len() != d {
                return Err(Error::Dimension("mixture components differ in dimension".into()));
            }
            m += outer(v, v) * real(*w);
        }
        Self::new(m)
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn n_qubits(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Spectral decomposition, computed on first use.
    pub fn spectral(&self) -> &SpectralDecomposition {
        self.spectral.get_or_init(|| eigh_unchecked(&self.matrix, DEFAULT_RANK_TOL))
    }

    pub fn rank(&self) -> usize {
        self.spectral().rank()
    }

    /// `Tr(rho^2)` via the Frobenius norm.
    pub fn purity(&self) -> f64 {
        self.matrix.iter().map(|c| c.norm_sqr()).sum()
    }

    /// `Re Tr(op rho)`.
    pub fn expectation(&self, op: &CMatrix) -> Result<f64> {
        if op.shape() != self.matrix.shape() {
            return Err(Error::Dimension(format!(
                "operator {:?} on a density matrix of dimension {}",
                op.shape(),
                self.dim()
            )));
        }
        Ok(trace_product(op, &self.matrix).re)
    }

    pub fn kron(&self, other: &DensityMatrix) -> DensityMatrix {
        Self::from_matrix_unchecked(kron(&self.matrix, &other.matrix))
    }
}

/// `Tr(a b)` without forming the product.
pub fn trace_product(a: &CMatrix, b: &CMatrix) -> Complex64 {
    let mut acc = ZERO;
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

/// Borrowed view of either kind of state.
#[derive(Clone, Copy, Debug)]
pub enum StateRef<'a> {
    Pure(&'a PureState),
    Mixed(&'a DensityMatrix),
}

impl<'a> From<&'a PureState> for StateRef<'a> {
    fn from(s: &'a PureState) -> Self {
        StateRef::Pure(s)
    }
}

impl<'a> From<&'a DensityMatrix> for StateRef<'a> {
    fn from(s: &'a DensityMatrix) -> Self {
        StateRef::Mixed(s)
    }
}

impl StateRef<'_> {
    pub fn n_qubits(&self) -> usize {
        match self {
            StateRef::Pure(p) => p.n_qubits(),
            StateRef::Mixed(m) => m.n_qubits(),
        }
    }

    pub fn dim(&self) -> usize {
        1 << self.n_qubits()
    }

    /// Born probabilities for measuring in the orthonormal basis given by the
    /// columns of `basis`.
    pub fn probabilities_in(&self, basis: &CMatrix) -> Result<Vec<f64>> {
        if basis.nrows() != self.dim() {
            return Err(Error::Dimension(format!(
                "basis of dimension {} for a state of dimension {}",
                basis.nrows(),
                self.dim()
            )));
        }
        Ok(match self {
            StateRef::Pure(p) => (basis.adjoint() * p.amplitudes()).iter().map(|c| c.norm_sqr()).collect(),
            StateRef::Mixed(m) => {
                let rotated = m.matrix() * basis;
                (0..basis.ncols()).map(|j| basis.column(j).dotc(&rotated.column(j)).re.max(0.0)).collect()
            }
        })
    }
}

// ---------------------------------------------------------------------------
// Partial trace

/// Which part of a register to keep.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Subsystem {
    /// System A of a bipartite pure state.
    A,
    /// System B of a bipartite pure state.
    B,
    /// Explicit qubit indices; the output orders them as listed.
    Qubits(Vec<usize>),
}

/// Index of each (kept, traced) pair in the full register.
fn split_index_table(n: usize, keep: &[usize]) -> Result<(Vec<usize>, usize, usize)> {
    let mut seen = vec![false; n];
    for &q in keep {
        if q >= n {
            return Err(Error::Dimension(format!("qubit {q} out of range for {n} qubits")));
        }
        if seen[q] {
            return Err(Error::Dimension(format!("qubit {q} selected twice")));
        }
        seen[q] = true;
    }
    let traced: Vec<usize> = (0..n).filter(|q| !seen[*q]).collect();
    let (dk, dt) = (1usize << keep.len(), 1usize << traced.len());
    let mut table = vec![0usize; dk * dt];
    for i in 0..dk {
        for t in 0..dt {
            let mut idx = 0usize;
            for (pos, &q) in keep.iter().enumerate() {
                if (i >> (keep.len() - 1 - pos)) & 1 == 1 {
                    idx |= 1 << (n - 1 - q);
                }
            }
            for (pos, &q) in traced.iter().enumerate() {
                if (t >> (traced.len() - 1 - pos)) & 1 == 1 {
                    idx |= 1 << (n - 1 - q);
                }
            }
            table[i * dt + t] = idx;
        }
    }
    Ok((table, dk, dt))
}

/// Partial trace of a density matrix on `n` qubits, keeping `keep`.
pub fn partial_trace_matrix(m: &CMatrix, keep: &[usize]) -> Result<CMatrix> {
    require_square(m)?;
    let n = qubits_for_dim(m.nrows())?;
    let (table, dk, dt) = split_index_table(n, keep)?;
    Ok(CMatrix::from_fn(dk, dk, |i, j| (0..dt).map(|t| m[(table[i * dt + t], table[j * dt + t])]).sum()))
}

/// Reduced density matrix on the kept subsystem.
pub fn partial_trace<'a>(state: impl Into<StateRef<'a>>, keep: &Subsystem) -> Result<DensityMatrix> {
    match (state.into(), keep) {
        (StateRef::Pure(p), Subsystem::A) => Ok(p.reduced_a()),
        (StateRef::Pure(p), Subsystem::B) => Ok(p.reduced_b()),
        (StateRef::Pure(p), Subsystem::Qubits(qs)) => {
            let (table, dk, dt) = split_index_table(p.n_qubits(), qs)?;
            let amps = p.amplitudes();
            let m = CMatrix::from_fn(dk, dt, |i, t| amps[table[i * dt + t]]);
            Ok(DensityMatrix::from_matrix_unchecked(&m * m.adjoint()))
        }
        (StateRef::Mixed(_), Subsystem::A | Subsystem::B) => {
            Err(Error::Dimension("a density matrix carries no A|B split; select qubits explicitly".into()))
        }
        (StateRef::Mixed(rho), Subsystem::Qubits(qs)) => {
            Ok(DensityMatrix::from_matrix_unchecked(partial_trace_matrix(rho.matrix(), qs)?))
        }
    }
}

// ---------------------------------------------------------------------------
// Schmidt decomposition

/// `|psi> = sum_j sqrt(lambda_j) |a_j> (x) |b_j>`.
#[derive(Clone, Debug)]
pub struct SchmidtDecomposition {
    /// `lambda_j`, descending, padded with zeros to `min(dim_a, dim_b)`.
    pub coefficients: Vec<f64>,
    /// Columns `|a_j>` for the nonzero coefficients.
    pub a_vectors: CMatrix,
    /// Columns `|b_j>` for the nonzero coefficients.
    pub b_vectors: CMatrix,
}

impl SchmidtDecomposition {
    pub fn rank(&self) -> usize {
        self.a_vectors.ncols()
    }

    pub fn reassemble(&self) -> CVector {
        let (da, db) = (self.a_vectors.nrows(), self.b_vectors.nrows());
        let mut out = CVector::zeros(da * db);
        for j in 0..self.rank() {
            let a = self.a_vectors.column(j).into_owned();
            let b = self.b_vectors.column(j).into_owned();
            out += kron_vec(&a, &b) * real(self.coefficients[j].sqrt());
        }
        out
    }
}

pub fn schmidt_decompose(state: &PureState) -> Result<SchmidtDecomposition> {
    if state.n_a() == 0 || state.n_b() == 0 {
        return Err(Error::Domain("Schmidt decomposition needs both subsystems non-empty".into()));
    }
    let m = state.amplitude_matrix();
    let (da, db) = (state.dim_a(), state.dim_b());
    // Diagonalize the smaller marginal, then steer to the other side.
    let (small, steer) = if db <= da { (state.reduced_b(), m.clone()) } else { (state.reduced_a(), m.transpose()) };
    let spec = small.spectral();
    let k = spec.dim();
    let coefficients: Vec<f64> = spec.eigenvalues().iter().map(|l| l.max(0.0)).collect();
    let rank = coefficients.iter().filter(|l| **l > spec.rank_tol()).count();
    let mut small_vecs = CMatrix::zeros(k, rank);
    let mut large_vecs = CMatrix::zeros(steer.nrows(), rank);
    for (j, c) in coefficients.iter().take(rank).enumerate() {
        let v = spec.vector(j);
        let w = &steer * v.map(|c| c.conj()) / real(c.sqrt());
        small_vecs.set_column(j, &v);
        large_vecs.set_column(j, &w);
    }
    let (a_vectors, b_vectors) = if db <= da { (large_vecs, small_vecs) } else { (small_vecs, large_vecs) };
    Ok(SchmidtDecomposition { coefficients, a_vectors, b_vectors })
}

// ---------------------------------------------------------------------------
// Scalar functions

/// `Tr(rho^t)` from the spectrum.
pub fn matrix_power_trace(rho: &DensityMatrix, t: u32) -> Result<f64> {
    match t {
        0 => Err(Error::Domain("moment order must be at least 1".into())),
        1 => Ok(1.0),
        _ => Ok(rho.spectral().eigenvalues().iter().map(|l| l.max(0.0).powi(t as i32)).sum()),
    }
}

/// Trace-norm convention.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceNorm {
    /// `1/2 ||a - b||_1`, in `[0, 1]` for states.
    Halved,
    /// `||a - b||_1`, the sum of singular values.
    Unhalved,
}

/// Sum of singular values. Hermitian inputs go through the eigensolver.
pub fn trace_norm(m: &CMatrix) -> f64 {
    let scale = m.iter().map(|c| c.norm()).fold(1e-300_f64, f64::max);
    if m.nrows() == m.ncols() && hermitian_deviation(m) <= 1e-13 * scale {
        eigh_unchecked(&hermitian_part(m), 0.0).eigenvalues().iter().map(|l| l.abs()).sum()
    } else {
        m.clone().svd(false, false).singular_values.iter().sum()
    }
}

pub fn trace_distance(a: &DensityMatrix, b: &DensityMatrix, convention: TraceNorm) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension(format!("dimensions {} and {} differ", a.dim(), b.dim())));
    }
    let norm = trace_norm(&(a.matrix() - b.matrix()));
    Ok(match convention {
        TraceNorm::Halved => 0.5 * norm,
        TraceNorm::Unhalved => norm,
    })
}

/// Uhlmann fidelity `(Tr sqrt(sqrt(a) b sqrt(a)))^2`.
pub fn fidelity(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension(format!("dimensions {} and {} differ", a.dim(), b.dim())));
    }
    let sqrt_a = a.spectral().map_eigenvalues(|l| l.max(0.0).sqrt());
    let inner = &sqrt_a * b.matrix() * &sqrt_a;
    let root: f64 = eigh_unchecked(&hermitian_part(&inner), 0.0).eigenvalues().iter().map(|l| l.max(0.0).sqrt()).sum();
    Ok(root * root)
}

// ---------------------------------------------------------------------------
// Observables

/// A Hermitian observable with its spectral decomposition computed up front.
#[derive(Clone, Debug)]
pub struct Observable {
    matrix: CMatrix,
    spectral: SpectralDecomposition,
    spectral_norm: f64,
}

impl Observable {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        qubits_for_dim(matrix.nrows())?;
        let spectral = eigh(&matrix, DEFAULT_RANK_TOL)?;
        let spectral_norm = spectral.eigenvalues().iter().map(|l| l.abs()).fold(0.0, f64::max);
        Ok(Self { matrix: hermitian_part(&matrix), spectral, spectral_norm })
    }

    pub fn identity(n: usize) -> Self {
        Self::new(identity(1 << n)).expect("identity is Hermitian")
    }

    pub fn pauli(labels: &str) -> Result<Self> {
        Self::new(pauli_string(labels)?)
    }

    /// `Z` on qubit `q` of `n`.
    pub fn z_on(n: usize, q: usize) -> Result<Self> {
        Self::new(embed_single(n, q, &pauli('Z')?)?)
    }

    /// `X` on qubit `q` of `n`.
    pub fn x_on(n: usize, q: usize) -> Result<Self> {
        Self::new(embed_single(n, q, &pauli('X')?)?)
    }

    /// Projector onto a normalized vector.
    pub fn projector(v: &CVector) -> Result<Self> {
        Self::new(outer(v, v))
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn spectral(&self) -> &SpectralDecomposition {
        &self.spectral
    }

    pub fn spectral_norm(&self) -> f64 {
        self.spectral_norm
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_qubits(&self) -> usize {
        self.dim().trailing_zeros() as usize
    }
}
