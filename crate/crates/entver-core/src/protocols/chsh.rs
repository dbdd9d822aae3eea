//! CHSH inequality estimation with per-run random setting choice.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::qmat::{identity, sigma_x, sigma_z, tensor, CMatrix, Povm};
use crate::sources::{sample_runs, SourceProcess};
use crate::statproc::derive_seed;

use super::witness::{pauli6_decomposition, LocalDecomposition};
use super::{CriteriaAudit, ExecMode, VerifierReport, ViolationSide};

/// Two ±1 observables per side.
#[derive(Debug, Clone)]
pub struct ChshSettings {
    pub a: [CMatrix; 2],
    pub b: [CMatrix; 2],
}

impl ChshSettings {
    /// Validates that all four observables are Hermitian with ±1 spectrum.
    pub fn new(a: [CMatrix; 2], b: [CMatrix; 2]) -> Result<Self> {
        for obs in a.iter().chain(b.iter()) {
            Povm::from_pm_observable(obs)?;
        }
        Ok(Self { a, b })
    }
}

/// Settings reaching S = 2√2 on the singlet: A₁ = σ_z, A₂ = σ_x,
/// B₁ = −(σ_z+σ_x)/√2, B₂ = (σ_x−σ_z)/√2.
pub fn chsh_optimal_settings() -> ChshSettings {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    ChshSettings {
        a: [sigma_z(), sigma_x()],
        b: [
            (sigma_z() + sigma_x()).scale(-s),
            (sigma_x() - sigma_z()).scale(s),
        ],
    }
}

/// The Bell operator B = A₁⊗B₁ + A₁⊗B₂ + A₂⊗B₁ − A₂⊗B₂.
pub fn bell_operator(settings: &ChshSettings) -> CMatrix {
    tensor(&settings.a[0], &settings.b[0])
        + tensor(&settings.a[0], &settings.b[1])
        + tensor(&settings.a[1], &settings.b[0])
        - tensor(&settings.a[1], &settings.b[1])
}

/// The Bell inequality as a witness: W = 2I − B, so Tr(ρW) < 0 ⟺ S > 2
/// for exact expectations.
pub fn bell_operator_witness(settings: &ChshSettings) -> Result<(CMatrix, LocalDecomposition)> {
    let w = identity(4).scale(2.0) - bell_operator(settings);
    let dec = pauli6_decomposition(&w)?;
    Ok((w, dec))
}

#[derive(Debug, Clone, Copy)]
pub struct ChshOptions {
    /// Per-side detection efficiency.
    pub detection_eta: f64,
    /// Drop runs without a double click (fair-sampling assumption) instead
    /// of counting them as zero-contribution outcomes.
    pub postselect: bool,
}

impl Default for ChshOptions {
    fn default() -> Self {
        Self {
            detection_eta: 1.0,
            postselect: false,
        }
    }
}

/// Estimates S = ⟨A₁B₁⟩+⟨A₁B₂⟩+⟨A₂B₁⟩−⟨A₂B₂⟩ with per-run random setting
/// choice. Threshold 2; verdict entangled iff S exceeds it by 3·stderr.
pub fn chsh_test(
    src: &SourceProcess,
    settings: &ChshSettings,
    mode: ExecMode,
    options: ChshOptions,
    seed: u64,
) -> Result<VerifierReport> {
    let eta = options.detection_eta;
    if !(0.0..=1.0).contains(&eta) || eta == 0.0 {
        return Err(Error::InvalidArgument(format!("detection eta {eta}")));
    }
    if src.side_dims() != (2, 2) {
        return Err(Error::DimMismatch("CHSH needs qubit pairs".into()));
    }
    let audit = CriteriaAudit::all_respected();
    let mut notes = Vec::new();
    if eta < 1.0 && options.postselect {
        notes.push(
            "no-click runs dropped under the fair-sampling assumption (about the \
             verifier's devices, not the source)"
                .into(),
        );
    } else if eta < 1.0 {
        notes.push("no-click runs kept as zero-contribution outcomes".into());
    }

    let signs = [1.0, 1.0, 1.0, -1.0];
    match mode {
        ExecMode::Exact => {
            let rho = &src.ground_truth().run_marginal;
            let scale = if options.postselect { 1.0 } else { eta * eta };
            let mut s = 0.0;
            for (k, sign) in signs.iter().enumerate() {
                let obs = tensor(&settings.a[k / 2], &settings.b[k % 2]);
                s += sign * scale * rho.expect(&obs);
            }
            Ok(VerifierReport::decide(
                "chsh",
                s,
                2.0,
                ViolationSide::Above,
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
            let batch = sample_runs(src, shots as usize, derive_seed(seed, "runs"))?;
            let mut rng: ChaCha8Rng = SeedableRng::seed_from_u64(derive_seed(seed, "outcomes"));
            // Four POVMs {P_{a,±}⊗P_{b,±}} indexed by setting pair.
            let mut povms = Vec::with_capacity(4);
            for k in 0..4usize {
                let pa = Povm::from_pm_observable(&settings.a[k / 2])?;
                let pb = Povm::from_pm_observable(&settings.b[k % 2])?;
                povms.push((pa, pb));
            }
            let mut sums = [0.0f64; 4];
            let mut sums_sq = [0.0f64; 4];
            let mut counts = [0u64; 4];
            for t in 0..shots as usize {
                let k = rng.gen_range(0..4usize);
                let rho = batch.run_state(t)?;
                let (pa, pb) = &povms[k];
                let mut probs = [0.0f64; 4];
                for (i, f) in pa.elements().iter().enumerate() {
                    for (j, g) in pb.elements().iter().enumerate() {
                        probs[i * 2 + j] = rho.expect(&tensor(f, g)).max(0.0);
                    }
                }
                let o = super::witness::sample_index(&probs, &mut rng);
                let a_val = if o / 2 == 0 { 1.0 } else { -1.0 };
                let b_val = if o % 2 == 0 { 1.0 } else { -1.0 };
                let click_a = eta >= 1.0 || rng.gen::<f64>() < eta;
                let click_b = eta >= 1.0 || rng.gen::<f64>() < eta;
                let product = if click_a && click_b {
                    a_val * b_val
                } else if options.postselect {
                    continue; // dropped run
                } else {
                    0.0
                };
                sums[k] += product;
                sums_sq[k] += product * product;
                counts[k] += 1;
            }
            if counts.contains(&0) {
                return Err(Error::InsufficientShots { got: 0, need: 4 });
            }
            let mut s = 0.0;
            let mut var_s = 0.0;
            for k in 0..4 {
                let n = counts[k] as f64;
                let mean = sums[k] / n;
                let var = (sums_sq[k] / n - mean * mean).max(0.0);
                s += signs[k] * mean;
                var_s += var / n;
            }
            let used: u64 = counts.iter().sum();
            Ok(VerifierReport::decide(
                "chsh",
                s,
                2.0,
                ViolationSide::Above,
                var_s.sqrt(),
                used,
                audit,
                notes,
            ))
        }
    }
}
