//! Qubit teleportation as an entanglement test.
//!
//! The verifier teleports test-ensemble states through the resource pairs
//! and compares the average output fidelity against the classical
//! intercept-resend threshold for that ensemble. Beating the threshold
//! certifies that the resource was entangled.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::measures::FilterPair;
use crate::qmat::{
    identity, partial_trace_raw, sigma_x, sigma_z, tensor, CMatrix, DensityMatrix, PureState,
};
use crate::sources::{sample_runs, SourceProcess};
use crate::statproc::derive_seed;

use super::ensembles::TestEnsemble;
use super::witness::{pauli6_decomposition, LocalDecomposition};
use super::{CriteriaAudit, ExecMode, VerifierReport, ViolationSide};

/// Bell measurement basis, in the order Φ⁺, Φ⁻, Ψ⁺, Ψ⁻.
fn bell_basis() -> [PureState; 4] {
    [
        crate::qmat::phi_plus(),
        crate::qmat::phi_minus(),
        crate::qmat::psi_plus(),
        crate::qmat::psi_minus(),
    ]
}

/// Pauli corrections matching [`bell_basis`] for a |ψ⁻⟩ resource:
/// Φ⁺ → σ_zσ_x, Φ⁻ → σ_x, Ψ⁺ → σ_z, Ψ⁻ → I.
fn corrections() -> [CMatrix; 4] {
    [sigma_z() * sigma_x(), sigma_x(), sigma_z(), identity(2)]
}

/// Exact teleportation of `input` through the resource `rho`:
/// Bell outcome probabilities and the corrected output states.
pub fn teleport_channel(
    input: &PureState,
    rho: &DensityMatrix,
) -> Result<Vec<(f64, DensityMatrix)>> {
    if rho.dims() != [2, 2] || input.dims() != [2] {
        return Err(Error::DimMismatch(
            "teleportation needs qubit resource and input".into(),
        ));
    }
    let joint = input.to_density().tensor(rho); // (in, A, B)
    let mut out = Vec::with_capacity(4);
    for (k, bell) in bell_basis().iter().enumerate() {
        let proj = tensor(bell.to_density().mat(), &identity(2));
        let post = &proj * joint.mat() * proj.adjoint();
        let reduced = partial_trace_raw(&post, &[2, 2, 2], &[2]);
        let p = reduced.trace().re;
        let u = &corrections()[k];
        let corrected_raw = u * reduced * u.adjoint();
        let corrected = if p > 1e-15 {
            DensityMatrix::new(vec![2], corrected_raw.scale(1.0 / p))?
        } else {
            DensityMatrix::maximally_mixed(vec![2])
        };
        out.push((p.max(0.0), corrected));
    }
    Ok(out)
}

/// Average output fidelity of the exact channel for one input state.
pub fn teleport_fidelity(input: &PureState, rho: &DensityMatrix) -> Result<f64> {
    let obs = input.to_density();
    Ok(teleport_channel(input, rho)?
        .iter()
        .map(|(p, out)| p * out.expect(obs.mat()))
        .sum())
}

/// Average fidelity over a test ensemble, linear in the resource state.
pub fn ensemble_fidelity(ensemble: &TestEnsemble, rho: &DensityMatrix) -> Result<f64> {
    let mut f = 0.0;
    for (state, p) in ensemble.iter() {
        f += p * teleport_fidelity(state, rho)?;
    }
    Ok(f)
}

#[derive(Debug, Clone, Default)]
pub struct TeleportOptions {
    /// Local filter applied to each resource pair before use; failed runs
    /// are discarded (conditional teleportation).
    pub conditioning_filter: Option<FilterPair>,
}

/// Teleports ensemble states (drawn in random order) through the source's
/// resource pairs. Statistic: average output fidelity. Threshold: the
/// caller-supplied classical bound `f_tilde` for this ensemble.
pub fn teleport_test(
    src: &SourceProcess,
    ensemble: &TestEnsemble,
    f_tilde: f64,
    mode: ExecMode,
    options: TeleportOptions,
    seed: u64,
) -> Result<VerifierReport> {
    if ensemble.is_empty() {
        return Err(Error::InvalidArgument("ensemble empty".into()));
    }
    if src.side_dims() != (2, 2) {
        return Err(Error::DimMismatch(
            "teleportation needs qubit-pair runs".into(),
        ));
    }
    let audit = CriteriaAudit::all_respected();
    let mut notes = Vec::new();
    if options.conditioning_filter.is_some() {
        notes.push("conditional teleportation: resource locally filtered before use".into());
    }

    match mode {
        ExecMode::Exact => {
            let rho = match &options.conditioning_filter {
                None => src.ground_truth().run_marginal.clone(),
                Some(f) => {
                    crate::measures::apply_filter(&src.ground_truth().run_marginal, f)?.rho_pass
                }
            };
            let stat = ensemble_fidelity(ensemble, &rho)?;
            Ok(VerifierReport::decide(
                "teleport",
                stat,
                f_tilde,
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
            let mut rng: ChaCha8Rng = SeedableRng::seed_from_u64(derive_seed(seed, "protocol"));
            let mut hits = 0u64;
            let mut used = 0u64;
            for t in 0..shots as usize {
                let mut rho = batch.run_state(t)?;
                if let Some(f) = &options.conditioning_filter {
                    let out = match crate::measures::apply_filter(&rho, f) {
                        Ok(o) => o,
                        Err(Error::FilterAnnihilates(_)) => continue,
                        Err(e) => return Err(e),
                    };
                    if rng.gen::<f64>() >= out.p_pass {
                        continue; // filter failed; discard run
                    }
                    rho = out.rho_pass;
                }
                // Test state drawn in random order.
                let i = super::witness::sample_index(ensemble.probs(), &mut rng);
                let input = &ensemble.states()[i];
                let branches = teleport_channel(input, &rho)?;
                let probs: Vec<f64> = branches.iter().map(|(p, _)| *p).collect();
                let k = super::witness::sample_index(&probs, &mut rng);
                let fid = branches[k]
                    .1
                    .expect(input.to_density().mat())
                    .clamp(0.0, 1.0);
                // The verifier checks the output against the known input
                // with a two-outcome measurement.
                if rng.gen::<f64>() < fid {
                    hits += 1;
                }
                used += 1;
            }
            if used == 0 {
                return Err(Error::InsufficientShots { got: 0, need: 1 });
            }
            let n = used as f64;
            let mean = hits as f64 / n;
            let stderr = (mean * (1.0 - mean) / n).sqrt();
            Ok(VerifierReport::decide(
                "teleport",
                mean,
                f_tilde,
                ViolationSide::Above,
                stderr,
                used,
                audit,
                notes,
            ))
        }
    }
}

/// The average-fidelity observable Ω with Tr(ρ_AB Ω) = F_avg(ρ_AB) for the
/// exact teleportation channel.
pub fn fidelity_observable(ensemble: &TestEnsemble) -> CMatrix {
    let mut omega = CMatrix::zeros(4, 4);
    for (state, p) in ensemble.iter() {
        let psi = state.to_density();
        let mut t = CMatrix::zeros(8, 8);
        for (k, bell) in bell_basis().iter().enumerate() {
            let u = &corrections()[k];
            let back = u.adjoint() * psi.mat() * u;
            t += tensor(bell.to_density().mat(), &back);
        }
        // Tr[T (ψ ⊗ ρ)] = Tr_AB[ Tr_in[(ψ⊗I)·T] · ρ ].
        let sandwich = tensor(psi.mat(), &identity(4)) * t;
        omega += partial_trace_raw(&sandwich, &[2, 2, 2], &[1, 2]).scale(p);
    }
    omega
}

/// Teleportation as a witness: W = f̃·I − Ω, so Tr(ρ W) = f̃ − F_avg(ρ)
/// and a negative expectation means the fidelity beats the threshold.
pub fn teleportation_witness(
    ensemble: &TestEnsemble,
    f_tilde: f64,
) -> Result<(CMatrix, LocalDecomposition)> {
    if ensemble.is_empty() {
        return Err(Error::InvalidArgument("ensemble empty".into()));
    }
    let w = identity(4).scale(f_tilde) - fidelity_observable(ensemble);
    let dec = pauli6_decomposition(&w)?;
    Ok((w, dec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::werner;
    use crate::random_states::random_pure;
    use crate::sources::{make_a_priori, make_werner};
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;

    #[test]
    fn singlet_teleports_perfectly() {
        let singlet = crate::qmat::psi_minus().to_density();
        let mut rng = StdRng::seed_from_u64(2);
        for _ in 0..20 {
            let input = random_pure(&[2], &mut rng);
            assert_abs_diff_eq!(
                teleport_fidelity(&input, &singlet).unwrap(),
                1.0,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn werner_fidelity_is_half_plus_half_alpha() {
        // Exact channel oracle: F(W_α) = (1+α)/2 on an 11-point grid.
        let m = TestEnsemble::mub6();
        for i in 0..=10 {
            let alpha = i as f64 / 10.0;
            let f = ensemble_fidelity(&m, &werner(alpha).unwrap()).unwrap();
            assert_abs_diff_eq!(f, (1.0 + alpha) / 2.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn werner_half_beats_classical_threshold() {
        let src = make_werner(0.5).unwrap();
        let rep = teleport_test(
            &src,
            &TestEnsemble::mub6(),
            2.0 / 3.0,
            ExecMode::Exact,
            TeleportOptions::default(),
            0,
        )
        .unwrap();
        assert_abs_diff_eq!(rep.statistic, 0.75, epsilon = 1e-9);
        assert_eq!(rep.verdict, super::super::Verdict::Entangled);
    }

    #[test]
    fn maximally_mixed_resource_gives_half() {
        let src = make_werner(0.0).unwrap();
        let rep = teleport_test(
            &src,
            &TestEnsemble::mub6(),
            2.0 / 3.0,
            ExecMode::Exact,
            TeleportOptions::default(),
            0,
        )
        .unwrap();
        assert_abs_diff_eq!(rep.statistic, 0.5, epsilon = 1e-9);
        assert_eq!(rep.verdict, super::super::Verdict::Inconclusive);
    }

    #[test]
    fn sampled_matches_exact_within_three_sigma() {
        let src = make_werner(0.5).unwrap();
        let sampled = teleport_test(
            &src,
            &TestEnsemble::mub6(),
            2.0 / 3.0,
            ExecMode::Sampled { shots: 40_000 },
            TeleportOptions::default(),
            5,
        )
        .unwrap();
        assert!(
            (sampled.statistic - 0.75).abs() <= 3.0 * sampled.stderr,
            "sampled {} se {}",
            sampled.statistic,
            sampled.stderr
        );
    }

    #[test]
    fn teleportation_witness_consistency() {
        let m = TestEnsemble::mub6();
        let (w, dec) = teleportation_witness(&m, 2.0 / 3.0).unwrap();
        assert!(crate::qmat::frob_dist(&dec.reconstruct(), &w) < 1e-9);
        let cases = [
            (werner(0.5).unwrap(), 2.0 / 3.0 - 0.75),
            (crate::qmat::psi_minus().to_density(), 2.0 / 3.0 - 1.0),
            (DensityMatrix::maximally_mixed(vec![2, 2]), 2.0 / 3.0 - 0.5),
        ];
        for (rho, expected) in cases {
            assert_abs_diff_eq!(rho.expect(&w), expected, epsilon = 1e-9);
        }
    }

    #[test]
    fn conditional_teleportation_on_filtered_resource() {
        // A pure non-maximally-entangled resource can be locally filtered
        // toward the singlet, raising the conditional fidelity.
        let theta: f64 = 0.3;
        let amp = crate::qmat::CVector::from_vec(vec![
            crate::qmat::C_ZERO,
            crate::qmat::cr(theta.cos()),
            crate::qmat::cr(-theta.sin()),
            crate::qmat::C_ZERO,
        ]);
        let skew = PureState::new(vec![2, 2], amp).unwrap().to_density();
        let src = make_a_priori("skewed", skew.clone()).unwrap();
        let unfiltered = teleport_test(
            &src,
            &TestEnsemble::mub6(),
            2.0 / 3.0,
            ExecMode::Exact,
            TeleportOptions::default(),
            0,
        )
        .unwrap();
        // Filter diag(tanθ-ish) balances the amplitudes.
        let f_a = CMatrix::from_row_slice(
            2,
            2,
            &[
                crate::qmat::cr(theta.sin() / theta.cos()),
                crate::qmat::C_ZERO,
                crate::qmat::C_ZERO,
                crate::qmat::cr(1.0),
            ],
        );
        let filter = FilterPair::new(f_a, identity(2)).unwrap();
        let conditional = teleport_test(
            &src,
            &TestEnsemble::mub6(),
            2.0 / 3.0,
            ExecMode::Exact,
            TeleportOptions {
                conditioning_filter: Some(filter),
            },
            0,
        )
        .unwrap();
        assert!(conditional.statistic > unfiltered.statistic);
        assert_abs_diff_eq!(conditional.statistic, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn empty_ensemble_is_rejected() {
        let src = make_werner(1.0).unwrap();
        let empty = TestEnsemble::new("e", vec![], vec![]);
        assert!(empty.is_err());
        let _ = src;
    }
}
