//! Entanglement-witness measurement from local POVM statistics.
//!
//! A witness W is measured as Tr(ρW) = Σ c_ij p_ij where p_ij are joint
//! outcome probabilities of one POVM per side. A negative value certifies
//! entanglement; null outcomes carry coefficient zero so detection
//! inefficiency rescales but never flips the statistic.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::qmat::{
    eig_hermitian_full, frob_dist, identity, sigma_x, sigma_y, sigma_z, tensor, CMatrix, Povm,
};
use crate::sources::{sample_runs, SourceProcess};

use super::{CriteriaAudit, ExecMode, VerifierReport, ViolationSide};

/// A witness expressed through local measurements: one POVM per side and a
/// coefficient per joint outcome.
#[derive(Debug, Clone)]
pub struct LocalDecomposition {
    pub povm_a: Povm,
    pub povm_b: Povm,
    /// coefficients[(i, j)] multiplies p(i on A, j on B).
    pub coefficients: DMatrix<f64>,
}

impl LocalDecomposition {
    pub fn new(povm_a: Povm, povm_b: Povm, coefficients: DMatrix<f64>) -> Result<Self> {
        if coefficients.nrows() != povm_a.len() || coefficients.ncols() != povm_b.len() {
            return Err(Error::DimMismatch(format!(
                "coefficient shape {}x{} vs POVM sizes {}x{}",
                coefficients.nrows(),
                coefficients.ncols(),
                povm_a.len(),
                povm_b.len()
            )));
        }
        Ok(Self {
            povm_a,
            povm_b,
            coefficients,
        })
    }

    /// Σ c_ij F_i ⊗ G_j.
    pub fn reconstruct(&self) -> CMatrix {
        let da = self.povm_a.dim();
        let db = self.povm_b.dim();
        let mut out = CMatrix::zeros(da * db, da * db);
        for (i, f) in self.povm_a.elements().iter().enumerate() {
            for (j, g) in self.povm_b.elements().iter().enumerate() {
                out += tensor(f, g).scale(self.coefficients[(i, j)]);
            }
        }
        out
    }

    /// Conjugates Bob's POVM by a fixed unitary (an unknown local frame);
    /// coefficients are unchanged.
    pub fn rotate_b(&self, u: &CMatrix) -> Result<Self> {
        let rotated: Vec<CMatrix> = self
            .povm_b
            .elements()
            .iter()
            .map(|g| u * g * u.adjoint())
            .collect();
        Ok(Self {
            povm_a: self.povm_a.clone(),
            povm_b: Povm::new(rotated)?,
            coefficients: self.coefficients.clone(),
        })
    }

    /// Appends one outcome per side with zero coefficient and zero operator.
    /// Null handling: extra outcomes never move the statistic.
    pub fn with_null_outcomes(&self) -> Result<Self> {
        let extend = |p: &Povm| -> Result<Povm> {
            let mut els = p.elements().to_vec();
            els.push(CMatrix::zeros(p.dim(), p.dim()));
            Povm::new(els)
        };
        let mut coeff = DMatrix::zeros(self.povm_a.len() + 1, self.povm_b.len() + 1);
        coeff
            .view_mut((0, 0), (self.povm_a.len(), self.povm_b.len()))
            .copy_from(&self.coefficients);
        Ok(Self {
            povm_a: extend(&self.povm_a)?,
            povm_b: extend(&self.povm_b)?,
            coefficients: coeff,
        })
    }
}

const PAULI_AXES: usize = 3;

fn paulis() -> [CMatrix; 4] {
    [identity(2), sigma_x(), sigma_y(), sigma_z()]
}

/// Projectors (P+, P−) of a Pauli axis.
fn axis_projectors(axis: &CMatrix) -> (CMatrix, CMatrix) {
    let (vals, vecs) = eig_hermitian_full(axis).expect("Pauli is Hermitian");
    let mut plus = CMatrix::zeros(2, 2);
    let mut minus = CMatrix::zeros(2, 2);
    for (i, &v) in vals.iter().enumerate() {
        let col = vecs.column(i);
        let pr = col * col.adjoint();
        if v > 0.0 {
            plus += pr;
        } else {
            minus += pr;
        }
    }
    (plus, minus)
}

/// The six-outcome "random Pauli basis" POVM {P_{μ,±}/3} for μ ∈ {x, y, z}.
/// Outcome index 2μ + (0 for +, 1 for −).
pub fn pauli6_povm() -> Povm {
    let p = paulis();
    let mut els = Vec::with_capacity(6);
    for axis in p.iter().take(PAULI_AXES + 1).skip(1) {
        let (plus, minus) = axis_projectors(axis);
        els.push(plus.scale(1.0 / 3.0));
        els.push(minus.scale(1.0 / 3.0));
    }
    Povm::new(els).expect("pauli6 sums to identity")
}

/// Exact local decomposition of any two-qubit Hermitian operator over the
/// Pauli-6 POVM on each side.
pub fn pauli6_decomposition(w: &CMatrix) -> Result<LocalDecomposition> {
    if w.nrows() != 4 || w.ncols() != 4 {
        return Err(Error::DimMismatch("witness must act on two qubits".into()));
    }
    if crate::qmat::herm_defect(w) > crate::qmat::HERM_TOL {
        return Err(Error::NotHermitian(crate::qmat::herm_defect(w)));
    }
    let p = paulis();
    // Pauli coordinates w_{μν} = Tr[W σμ⊗σν]/4.
    let mut coords = [[0.0f64; 4]; 4];
    for (mu, pm) in p.iter().enumerate() {
        for (nu, pn) in p.iter().enumerate() {
            coords[mu][nu] = (tensor(pm, pn) * w).trace().re / 4.0;
        }
    }
    let sign = |o: usize| if o.is_multiple_of(2) { 1.0 } else { -1.0 };
    let mut coeff = DMatrix::zeros(6, 6);
    for oa in 0..6 {
        let mu = oa / 2 + 1;
        for ob in 0..6 {
            let nu = ob / 2 + 1;
            coeff[(oa, ob)] = 9.0 * coords[mu][nu] * sign(oa) * sign(ob)
                + 3.0 * coords[mu][0] * sign(oa)
                + 3.0 * coords[0][nu] * sign(ob)
                + coords[0][0];
        }
    }
    LocalDecomposition::new(pauli6_povm(), pauli6_povm(), coeff)
}

/// The projective witness W = I/2 − |ψ⁻⟩⟨ψ⁻|, optimal for Werner states.
pub fn werner_optimal_witness() -> CMatrix {
    identity(4).scale(0.5) - crate::qmat::psi_minus().to_density().mat()
}

/// Witness measurement options.
#[derive(Debug, Clone, Copy)]
pub struct WitnessOptions {
    /// Per-side detection efficiency; no-click outcomes carry coefficient 0.
    pub detection_eta: f64,
}

impl Default for WitnessOptions {
    fn default() -> Self {
        Self { detection_eta: 1.0 }
    }
}

/// Measures Tr(ρW) from local statistics. Verdict: entangled iff the
/// statistic is below zero by more than 3·stderr.
pub fn witness_test(
    src: &SourceProcess,
    witness: &CMatrix,
    decomposition: &LocalDecomposition,
    mode: ExecMode,
    options: WitnessOptions,
    seed: u64,
) -> Result<VerifierReport> {
    let recon = decomposition.reconstruct();
    if frob_dist(&recon, witness) > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "decomposition reconstructs witness only within {:.3e}",
            frob_dist(&recon, witness)
        )));
    }
    let eta = options.detection_eta;
    if !(0.0..=1.0).contains(&eta) || eta == 0.0 {
        return Err(Error::InvalidArgument(format!("detection eta {eta}")));
    }
    let (da, db) = src.side_dims();
    if decomposition.povm_a.dim() != da || decomposition.povm_b.dim() != db {
        return Err(Error::DimMismatch(format!(
            "witness POVMs ({}, {}) do not match source dims ({da}, {db})",
            decomposition.povm_a.dim(),
            decomposition.povm_b.dim()
        )));
    }
    let audit = CriteriaAudit::all_respected();
    let mut notes = Vec::new();
    if eta < 1.0 {
        notes.push(format!(
            "detection eta {eta}: null outcomes contribute coefficient 0"
        ));
    }

    match mode {
        ExecMode::Exact => {
            // With per-side efficiency η the clicked fraction carries the
            // full coefficient pattern and nulls carry zero.
            let statistic = eta * eta * src.ground_truth().run_marginal.expect(witness);
            Ok(VerifierReport::decide(
                "witness",
                statistic,
                0.0,
                ViolationSide::Below,
                0.0,
                0,
                audit,
                notes,
            ))
        }
        ExecMode::Sampled { shots } => {
            if shots == 0 {
                return Err(Error::InsufficientShots { got: 0, need: 1 });
            }
            let batch = sample_runs(
                src,
                shots as usize,
                crate::statproc::derive_seed(seed, "runs"),
            )?;
            let mut rng: ChaCha8Rng =
                SeedableRng::seed_from_u64(crate::statproc::derive_seed(seed, "outcomes"));
            let na = decomposition.povm_a.len();
            let nb = decomposition.povm_b.len();
            let mut sum = 0.0f64;
            let mut sum_sq = 0.0f64;
            for t in 0..shots as usize {
                let rho = batch.run_state(t)?;
                // Joint outcome from the product POVM.
                let mut probs = Vec::with_capacity(na * nb);
                for f in decomposition.povm_a.elements() {
                    for g in decomposition.povm_b.elements() {
                        probs.push(rho.expect(&tensor(f, g)).max(0.0));
                    }
                }
                let k = sample_index(&probs, &mut rng);
                let (i, j) = (k / nb, k % nb);
                let click_a = eta >= 1.0 || rng.gen::<f64>() < eta;
                let click_b = eta >= 1.0 || rng.gen::<f64>() < eta;
                // A null on either side contributes zero.
                let x = if click_a && click_b {
                    decomposition.coefficients[(i, j)]
                } else {
                    0.0
                };
                sum += x;
                sum_sq += x * x;
            }
            let n = shots as f64;
            let mean = sum / n;
            let var = (sum_sq / n - mean * mean).max(0.0);
            let stderr = (var / n).sqrt();
            Ok(VerifierReport::decide(
                "witness",
                mean,
                0.0,
                ViolationSide::Below,
                stderr,
                shots,
                audit,
                notes,
            ))
        }
    }
}

/// Samples an index from unnormalized weights.
pub(crate) fn sample_index<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let x: f64 = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if x < acc {
            return i;
        }
    }
    weights.len() - 1
}
