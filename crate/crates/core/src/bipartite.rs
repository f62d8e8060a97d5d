//! Joint A|B states that estimators can query: a purification or its
//! classically correlated counterpart.

use crate::error::{Error, Result};
use crate::linalg::{hermitian_part, partial_trace_matrix, CMatrix, DensityMatrix, PureState, ZERO};

/// A state on `n_a + n_b` qubits with A first.
pub trait Bipartite: Sync {
    fn n_a(&self) -> usize;
    fn n_b(&self) -> usize;
    fn rho_a(&self) -> &DensityMatrix;
    fn rho_b(&self) -> &DensityMatrix;

    /// `Tr_B[rho_AB (I (x) x)]` as a `dim_a x dim_a` matrix.
    fn steer(&self, x: &CMatrix) -> Result<CMatrix>;

    /// Born probabilities for measuring A in the columns of `basis_a` and B in
    /// the columns of `basis_b`. Outcome `(alpha, beta)` sits at
    /// `alpha * dim_b + beta`.
    fn product_probabilities(&self, basis_a: &CMatrix, basis_b: &CMatrix) -> Result<Vec<f64>>;

    fn dim_a(&self) -> usize {
        1 << self.n_a()
    }

    fn dim_b(&self) -> usize {
        1 << self.n_b()
    }

    /// Exact `Tr[rho_AB (o (x) x)]`.
    fn product_expectation(&self, o: &CMatrix, x: &CMatrix) -> Result<f64> {
        let s = self.steer(x)?;
        if o.shape() != s.shape() {
            return Err(Error::Dimension(format!("observable {:?} on A of dimension {}", o.shape(), s.nrows())));
        }
        Ok(crate::linalg::trace_product(o, &s).re)
    }
}

fn check_b(dim_b: usize, x: &CMatrix) -> Result<()> {
    if x.shape() != (dim_b, dim_b) {
        return Err(Error::Dimension(format!("operator {:?} on B of dimension {dim_b}", x.shape())));
    }
    Ok(())
}

fn check_bases(dim_a: usize, dim_b: usize, ea: &CMatrix, fb: &CMatrix) -> Result<()> {
    if ea.shape() != (dim_a, dim_a) || fb.shape() != (dim_b, dim_b) {
        return Err(Error::Dimension(format!(
            "bases {:?} and {:?} for dimensions {dim_a} and {dim_b}",
            ea.shape(),
            fb.shape()
        )));
    }
    Ok(())
}

/// A purification `|Psi_AB>` with its marginals cached.
#[derive(Clone, Debug)]
pub struct PurifiedState {
    psi: PureState,
    rho_a: DensityMatrix,
    rho_b: DensityMatrix,
}

impl PurifiedState {
    pub fn new(psi: PureState) -> Result<Self> {
        if psi.n_a() == 0 || psi.n_b() == 0 {
            return Err(Error::Domain("a purification needs non-empty A and B".into()));
        }
        let rho_a = psi.reduced_a();
        let rho_b = psi.reduced_b();
        Ok(Self { psi, rho_a, rho_b })
    }

    pub fn psi(&self) -> &PureState {
        &self.psi
    }
}

impl Bipartite for PurifiedState {
    fn n_a(&self) -> usize {
        self.psi.n_a()
    }

    fn n_b(&self) -> usize {
        self.psi.n_b()
    }

    fn rho_a(&self) -> &DensityMatrix {
        &self.rho_a
    }

    fn rho_b(&self) -> &DensityMatrix {
        &self.rho_b
    }

    fn steer(&self, x: &CMatrix) -> Result<CMatrix> {
        check_b(self.dim_b(), x)?;
        let m = self.psi.amplitude_matrix();
        Ok(&m * x.transpose() * m.adjoint())
    }

    fn product_probabilities(&self, basis_a: &CMatrix, basis_b: &CMatrix) -> Result<Vec<f64>> {
        check_bases(self.dim_a(), self.dim_b(), basis_a, basis_b)?;
        let m = self.psi.amplitude_matrix();
        let amps = basis_a.adjoint() * m * basis_b.map(|c| c.conj());
        let db = self.dim_b();
        let mut out = vec![0.0; amps.len()];
        for a in 0..amps.nrows() {
            for b in 0..db {
                out[a * db + b] = amps[(a, b)].norm_sqr();
            }
        }
        Ok(out)
    }
}

/// A mixed joint state, e.g. `sum_j lambda_j |a_j><a_j| (x) |j><j|`.
#[derive(Clone, Debug)]
pub struct CorrelatedState {
    joint: DensityMatrix,
    n_a: usize,
    n_b: usize,
    rho_a: DensityMatrix,
    rho_b: DensityMatrix,
}

impl CorrelatedState {
    pub fn new(joint: DensityMatrix, n_a: usize) -> Result<Self> {
        let n = joint.n_qubits();
        if n_a == 0 || n_a >= n {
            return Err(Error::Domain(format!("split {n_a} of {n} qubits leaves an empty side")));
        }
        let a: Vec<usize> = (0..n_a).collect();
        let b: Vec<usize> = (n_a..n).collect();
        let rho_a = DensityMatrix::from_matrix_unchecked(partial_trace_matrix(joint.matrix(), &a)?);
        let rho_b = DensityMatrix::from_matrix_unchecked(partial_trace_matrix(joint.matrix(), &b)?);
        Ok(Self { joint, n_a, n_b: n - n_a, rho_a, rho_b })
    }

    pub fn joint(&self) -> &DensityMatrix {
        &self.joint
    }

    /// `R[b, b']` block of `rho[(a, b), (a', b')]`.
    fn block(&self, a: usize, a2: usize) -> CMatrix {
        let db = self.dim_b();
        self.joint.matrix().view((a * db, a2 * db), (db, db)).into_owned()
    }
}

impl Bipartite for CorrelatedState {
    fn n_a(&self) -> usize {
        self.n_a
    }

    fn n_b(&self) -> usize {
        self.n_b
    }

    fn rho_a(&self) -> &DensityMatrix {
        &self.rho_a
    }

    fn rho_b(&self) -> &DensityMatrix {
        &self.rho_b
    }

    fn steer(&self, x: &CMatrix) -> Result<CMatrix> {
        let db = self.dim_b();
        check_b(db, x)?;
        let da = self.dim_a();
        let rho = self.joint.matrix();
        let mut s = CMatrix::zeros(da, da);
        for a in 0..da {
            for a2 in 0..da {
                let mut acc = ZERO;
                for b in 0..db {
                    for b2 in 0..db {
                        acc += rho[(a * db + b, a2 * db + b2)] * x[(b2, b)];
                    }
                }
                s[(a, a2)] = acc;
            }
        }
        Ok(s)
    }

    fn product_probabilities(&self, basis_a: &CMatrix, basis_b: &CMatrix) -> Result<Vec<f64>> {
        let (da, db) = (self.dim_a(), self.dim_b());
        check_bases(da, db, basis_a, basis_b)?;
        // g_beta[a, a'] = f_beta^dagger R_{a a'} f_beta, then e_alpha^dagger g_beta e_alpha.
        let mut g = vec![CMatrix::zeros(da, da); db];
        for a in 0..da {
            for a2 in 0..da {
                let r = self.block(a, a2);
                let rf = &r * basis_b;
                for (beta, gb) in g.iter_mut().enumerate() {
                    gb[(a, a2)] = basis_b.column(beta).dotc(&rf.column(beta));
                }
            }
        }
        let mut out = vec![0.0; da * db];
        for (beta, gb) in g.iter().enumerate() {
            let ge = hermitian_part(gb) * basis_a;
            for alpha in 0..da {
                out[alpha * db + beta] = basis_a.column(alpha).dotc(&ge.column(alpha)).re.max(0.0);
            }
        }
        Ok(out)
    }
}
