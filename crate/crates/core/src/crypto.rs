//! Client/server simulations of purity-based verification and blind
//! observable estimation. The server is a strategy object; messages are an
//! in-process transcript.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{single_copy_purity_attack, swap_test_moment, MAX_SWAP_QUBITS};
use crate::bipartite::{Bipartite, PurifiedState};
use crate::ensembles::{haar_unitary, verification_state};
use crate::error::{Error, Result};
use crate::linalg::{identity, real, trace_norm, CMatrix, CVector, DensityMatrix, Observable, PureState};
use crate::measurement::{sample_counts, tomography, ShotBudget};
use crate::rng::{derive_path, rng_from_seed};
use crate::stats::{mean, std_error, wilson};

// ---------------------------------------------------------------------------
// Transcripts

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientAction {
    SendState,
    RequestReport,
    MeasureAncilla,
    Decide,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ServerReport {
    Value(f64),
    Histogram(Vec<u64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub round: u64,
    pub client_action: ClientAction,
    pub server_report: Option<ServerReport>,
    pub client_side_data: Option<Vec<u64>>,
}

/// Ordered log; rounds strictly increase and reports only follow a state
/// transmission.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    entries: Vec<TranscriptEntry>,
    #[serde(skip)]
    state_sent: bool,
}

impl Transcript {
    pub fn push(&mut self, entry: TranscriptEntry) -> Result<()> {
        if let Some(last) = self.entries.last() {
            if entry.round <= last.round {
                return Err(Error::Validation(format!("round {} after round {}", entry.round, last.round)));
            }
        }
        if entry.client_action == ClientAction::SendState {
            self.state_sent = true;
        }
        if entry.server_report.is_some() && !self.state_sent {
            return Err(Error::Validation("server report before any state was sent".into()));
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn entries(&self) -> &[TranscriptEntry] {
        &self.entries
    }

    pub fn next_round(&self) -> u64 {
        self.entries.last().map_or(0, |e| e.round + 1)
    }

    pub fn to_jsonl(&self) -> String {
        self.entries.iter().map(|e| serde_json::to_string(e).expect("entry serializes") + "\n").collect()
    }

    /// Replays a JSON-lines log through the same ordering checks.
    pub fn from_jsonl(s: &str) -> Result<Self> {
        let mut t = Self::default();
        for line in s.lines().filter(|l| !l.trim().is_empty()) {
            t.push(serde_json::from_str(line).map_err(|e| Error::Validation(e.to_string()))?)?;
        }
        Ok(t)
    }
}

// ---------------------------------------------------------------------------
// Verification

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServerKind {
    HonestUnbounded,
    SingleCopyLimited,
    DishonestConstant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServerModel {
    pub kind: ServerKind,
    pub budget: ShotBudget,
    /// Report of the dishonest server.
    #[serde(default = "default_guess")]
    pub constant: f64,
}

fn default_guess() -> f64 {
    0.66
}

impl ServerModel {
    pub fn new(kind: ServerKind, shots: u64) -> Self {
        Self { kind, budget: ShotBudget::tomography_only(shots), constant: default_guess() }
    }

    /// Purity report on copies of `rho_a`.
    fn report(&self, rho_a: &DensityMatrix, seed: u64) -> Result<f64> {
        let shots = self.budget.total();
        match self.kind {
            ServerKind::DishonestConstant => Ok(self.constant),
            ServerKind::SingleCopyLimited => Ok(single_copy_purity_attack(rho_a, shots, None, seed)?.value),
            ServerKind::HonestUnbounded => {
                if 2 * rho_a.n_qubits() < MAX_SWAP_QUBITS {
                    Ok(swap_test_moment(rho_a, None, 2, shots, seed)?.value)
                } else {
                    // Same outcome law as the SWAP test: P(+) = (1 + Tr rho^2) / 2.
                    let p = 0.5 * (1.0 + rho_a.purity());
                    let c = sample_counts(&[p, 1.0 - p], shots, &mut rng_from_seed(seed));
                    Ok((c[0] as f64 - c[1] as f64) / shots as f64)
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationConfig {
    pub alphas: Vec<f64>,
    pub tolerance: f64,
    pub client_shots: u64,
}

impl Default for VerificationConfig {
    fn default() -> Self {
        Self { alphas: vec![0.9_f64.sqrt(), 0.5_f64.sqrt()], tolerance: 0.1, client_shots: 2000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationStats {
    pub server: ServerKind,
    pub n: usize,
    pub trials: u64,
    pub accepted: u64,
    pub acceptance: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Acceptance rate per entry of `alphas`.
    pub per_alpha: Vec<f64>,
    pub tolerance: f64,
}

/// Each trial: the client picks `alpha`, builds the verification state on
/// `n + 1` qubits, hands rho_A to the server and compares the server's
/// purity report with its own tomography of the one-qubit B register.
pub fn run_verification(
    n: usize,
    server: &ServerModel,
    config: &VerificationConfig,
    trials: u64,
    seed: u64,
) -> Result<(VerificationStats, Vec<Transcript>)> {
    if n < 2 {
        return Err(Error::Domain(format!("verification needs n >= 2, got {n}")));
    }
    if config.alphas.is_empty() || config.alphas.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
        return Err(Error::Domain(format!("invalid alpha set {:?}", config.alphas)));
    }
    if trials == 0 {
        return Err(Error::InsufficientData("no trials".into()));
    }
    let mut accepted = 0;
    let mut per_alpha = vec![(0u64, 0u64); config.alphas.len()];
    let mut transcripts = Vec::with_capacity(trials as usize);
    for i in 0..trials {
        let mut rng = rng_from_seed(derive_path(seed, &[i, 0]));
        let which = rng.random_range(0..config.alphas.len());
        let u = haar_unitary(n, &mut rng)?;
        let v = haar_unitary(n, &mut rng)?;
        let psi = PurifiedState::new(verification_state(config.alphas[which], &u, &v)?)?;
        let mut t = Transcript::default();
        t.push(TranscriptEntry {
            round: 0,
            client_action: ClientAction::SendState,
            server_report: None,
            client_side_data: None,
        })?;
        let report = server.report(psi.rho_a(), derive_path(seed, &[i, 1]))?;
        t.push(TranscriptEntry {
            round: 1,
            client_action: ClientAction::RequestReport,
            server_report: Some(ServerReport::Value(report)),
            client_side_data: None,
        })?;
        let tomo = tomography(psi.rho_b(), config.client_shots, &mut rng_from_seed(derive_path(seed, &[i, 2])))?;
        let own = tomo.estimate.purity();
        t.push(TranscriptEntry {
            round: 2,
            client_action: ClientAction::MeasureAncilla,
            server_report: None,
            client_side_data: Some(tomo.counts.concat()),
        })?;
        let ok = (report - own).abs() <= config.tolerance;
        t.push(TranscriptEntry {
            round: 3,
            client_action: ClientAction::Decide,
            server_report: None,
            client_side_data: Some(vec![ok as u64]),
        })?;
        transcripts.push(t);
        accepted += ok as u64;
        per_alpha[which].0 += ok as u64;
        per_alpha[which].1 += 1;
    }
    let p = wilson(accepted, trials);
    let stats = VerificationStats {
        server: server.kind,
        n,
        trials,
        accepted,
        acceptance: p.estimate,
        ci_low: p.ci_low,
        ci_high: p.ci_high,
        per_alpha: per_alpha.iter().map(|(a, b)| if *b == 0 { f64::NAN } else { *a as f64 / *b as f64 }).collect(),
        tolerance: config.tolerance,
    };
    Ok((stats, transcripts))
}

// ---------------------------------------------------------------------------
// Blind estimation

/// `(|0>_1 |0>_B + |1>_1 |1>_B) / sqrt 2` on the first qubit, then `U` on A:
/// `(|psi> |0> + |psi_perp> |1>) / sqrt 2` with `psi = U|0..0>` and
/// `psi_perp = U|10..0>`.
pub struct BlindSetup {
    state: PurifiedState,
    psi: CVector,
    psi_perp: CVector,
}

impl BlindSetup {
    pub fn new(u: &CMatrix) -> Result<Self> {
        let n = crate::linalg::qubits_for_dim(u.nrows())?;
        if u.ncols() != u.nrows() {
            return Err(Error::Dimension(format!("U is {:?}", u.shape())));
        }
        let d = u.nrows();
        let psi = u.column(0).into_owned();
        let psi_perp = u.column(1 << (n - 1)).into_owned();
        let s = real(0.5_f64.sqrt());
        let amps =
            CVector::from_fn(2 * d, |idx, _| if idx % 2 == 0 { psi[idx / 2] * s } else { psi_perp[idx / 2] * s });
        let state = PurifiedState::new(PureState::normalized(amps, n, 1)?)?;
        Ok(Self { state, psi, psi_perp })
    }

    pub fn state(&self) -> &PurifiedState {
        &self.state
    }

    /// What the server holds each round: rho_A, fixed before any client
    /// measurement.
    pub fn server_view(&self) -> &DensityMatrix {
        self.state.rho_a()
    }

    pub fn psi(&self) -> &CVector {
        &self.psi
    }

    pub fn psi_perp(&self) -> &CVector {
        &self.psi_perp
    }

    /// `||rho_A - sum_b P(b) rho_(A|b)||_1`; zero when the client's outcome
    /// carries no signal to the server.
    pub fn server_view_deviation(&self) -> f64 {
        let a = crate::linalg::outer(&self.psi, &self.psi);
        let b = crate::linalg::outer(&self.psi_perp, &self.psi_perp);
        let mixture = (a + b) * real(0.5);
        trace_norm(&(self.server_view().matrix() - mixture))
    }
}

/// Per-observable round sampler: the server's outcome from its own view,
/// then the client's B outcome conditioned on it.
struct RoundSampler {
    values: Vec<f64>,
    server_probs: Vec<f64>,
    /// `P(b = 0 | k)`.
    keep_given: Vec<f64>,
}

impl RoundSampler {
    fn new(setup: &BlindSetup, o: &Observable) -> Result<Self> {
        let st = setup.state();
        if o.dim() != st.dim_a() {
            return Err(Error::Dimension(format!(
                "observable of dimension {} on A of dimension {}",
                o.dim(),
                st.dim_a()
            )));
        }
        let basis = o.spectral().eigenvectors();
        let server_probs = crate::linalg::StateRef::from(setup.server_view()).probabilities_in(basis)?;
        let joint = st.product_probabilities(basis, &identity(2))?;
        let keep_given = (0..basis.ncols())
            .map(|k| {
                let p = joint[2 * k] + joint[2 * k + 1];
                if p > 0.0 {
                    joint[2 * k] / p
                } else {
                    0.0
                }
            })
            .collect();
        Ok(Self { values: o.spectral().eigenvalues().to_vec(), server_probs, keep_given })
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, bool) {
        let mut u: f64 = rng.random();
        let mut k = self.server_probs.len() - 1;
        for (i, p) in self.server_probs.iter().enumerate() {
            if u < *p {
                k = i;
                break;
            }
            u -= p;
        }
        (k, rng.random::<f64>() < self.keep_given[k])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlindResult {
    pub rounds: u64,
    pub kept: u64,
    pub keep_fraction: f64,
    pub client_estimate: f64,
    pub client_stderr: f64,
    /// `<psi|O|psi>`.
    pub truth: f64,
    pub all_rounds_mean: f64,
    /// `Tr(O rho_A)`.
    pub all_rounds_truth: f64,
    pub server_view_deviation: f64,
}

pub fn run_blind_estimation(u: &CMatrix, o: &Observable, rounds: u64, seed: u64) -> Result<(BlindResult, Transcript)> {
    if rounds < 100 {
        return Err(Error::InsufficientData(format!("{rounds} rounds, at least 100 needed")));
    }
    let setup = BlindSetup::new(u)?;
    let sampler = RoundSampler::new(&setup, o)?;
    let mut rng = rng_from_seed(seed);
    let mut transcript = Transcript::default();
    let (mut kept, mut all) = (vec![], Vec::with_capacity(rounds as usize));
    for r in 0..rounds {
        let (k, keep) = sampler.draw(&mut rng);
        let value = sampler.values[k];
        transcript.push(TranscriptEntry {
            round: 2 * r,
            client_action: ClientAction::SendState,
            server_report: None,
            client_side_data: None,
        })?;
        transcript.push(TranscriptEntry {
            round: 2 * r + 1,
            client_action: ClientAction::MeasureAncilla,
            server_report: Some(ServerReport::Value(value)),
            client_side_data: Some(vec![!keep as u64]),
        })?;
        all.push(value);
        if keep {
            kept.push(value);
        }
    }
    let truth = setup.psi.dotc(&(o.matrix() * &setup.psi)).re;
    let result = BlindResult {
        rounds,
        kept: kept.len() as u64,
        keep_fraction: kept.len() as f64 / rounds as f64,
        client_estimate: mean(&kept),
        client_stderr: std_error(&kept),
        truth,
        all_rounds_mean: mean(&all),
        all_rounds_truth: setup.server_view().expectation(o.matrix())?,
        server_view_deviation: setup.server_view_deviation(),
    };
    Ok((result, transcript))
}

// ---------------------------------------------------------------------------
// Test-observable audit

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AuditServer {
    Honest,
    /// Adds `delta` to every report.
    Biased {
        delta: f64,
    },
    /// Adds `delta` to target reports only.
    TargetOnly {
        delta: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestCheck {
    pub index: usize,
    pub kept: u64,
    pub mean: f64,
    pub known: f64,
    pub stderr: f64,
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditVerdict {
    pub pass: bool,
    pub tests: Vec<TestCheck>,
    pub target_estimates: Vec<f64>,
    pub rounds: u64,
}

/// Interleave target and test observables uniformly at random; the audit
/// passes iff every test mean over kept rounds sits within 3 standard errors
/// of its known value.
pub fn run_test_observable_audit(
    u: &CMatrix,
    targets: &[Observable],
    tests: &[(Observable, f64)],
    server: AuditServer,
    rounds: u64,
    seed: u64,
) -> Result<AuditVerdict> {
    if tests.is_empty() {
        return Err(Error::Validation("an audit needs at least one test observable".into()));
    }
    let setup = BlindSetup::new(u)?;
    let all: Vec<&Observable> = targets.iter().chain(tests.iter().map(|(o, _)| o)).collect();
    let samplers = all.iter().map(|o| RoundSampler::new(&setup, o)).collect::<Result<Vec<_>>>()?;
    let mut kept: Vec<Vec<f64>> = vec![vec![]; all.len()];
    let mut rng = rng_from_seed(seed);
    for _ in 0..rounds {
        let which = rng.random_range(0..all.len());
        let (k, keep) = samplers[which].draw(&mut rng);
        let is_target = which < targets.len();
        let bias = match server {
            AuditServer::Honest => 0.0,
            AuditServer::Biased { delta } => delta,
            AuditServer::TargetOnly { delta } => {
                if is_target {
                    delta
                } else {
                    0.0
                }
            }
        };
        if keep {
            kept[which].push(samplers[which].values[k] + bias);
        }
    }
    let checks: Vec<TestCheck> = tests
        .iter()
        .enumerate()
        .map(|(i, (_, known))| {
            let xs = &kept[targets.len() + i];
            let (m, se) = (mean(xs), std_error(xs));
            let diff = (m - known).abs();
            let z = if diff < 1e-12 {
                0.0
            } else if se > 0.0 {
                diff / se
            } else {
                f64::INFINITY
            };
            TestCheck { index: i, kept: xs.len() as u64, mean: m, known: *known, stderr: se, z }
        })
        .collect();
    Ok(AuditVerdict {
        pass: checks.iter().all(|c| c.z.is_finite() && c.z <= 3.0),
        tests: checks,
        target_estimates: kept[..targets.len()].iter().map(|xs| mean(xs)).collect(),
        rounds,
    })
}

/// Test observables `U P U^dagger` for `P = Z` on each qubit, whose value on
/// `U|0..0>` is known to be 1.
pub fn stabilizer_tests(u: &CMatrix) -> Result<Vec<(Observable, f64)>> {
    let n = crate::linalg::qubits_for_dim(u.nrows())?;
    (0..n)
        .map(|q| {
            let z = Observable::z_on(n, q)?;
            Ok((Observable::new(u * z.matrix() * u.adjoint())?, 1.0))
        })
        .collect()
}
