//! Two-qubit state tomography from the nine Pauli setting pairs, with
//! linear inversion and physicality projection.
//!
//! The analyzer-phase policy models the decisive experimental choice: an
//! `Independent` analyzer is referenced to a fixed external phase, while
//! `SharedPath` reuses the generation path so the analyzer co-rotates with
//! the source's per-run phase. The latter makes a phase-averaged separable
//! source look maximally entangled.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::concurrence;
use crate::qmat::{
    identity, project_to_physical, sigma_x, sigma_y, sigma_z, tensor, CMatrix, DensityMatrix, Povm,
};
use crate::sources::{
    click_filter, condition_on_one_photon_total, sample_runs, SourceKind, SourceProcess,
};
use crate::statproc::{derive_seed, randomized_order, MeasurementRecord, RecordEntry};

use super::witness::sample_index;
use super::{CriteriaAudit, ExecMode, VerifierReport, ViolationSide};

/// Minimum shots per setting the estimator accepts.
pub const MIN_SHOTS_PER_SETTING: u64 = 100;
/// Bootstrap replicates for the concurrence standard error.
const BOOTSTRAP_REPS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalyzerPhasePolicy {
    /// Analyzer referenced to the fixed external phase standard.
    Independent,
    /// Analyzer co-rotates with the run's generation phase when the source
    /// leaks it: verification depends on the generation procedure.
    SharedPath,
}

/// Postselection applied to each run before tomography.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Postselection {
    #[default]
    None,
    /// Local click filter (flag level rejected on each side separately).
    LocalClicks,
    /// Keep only the one-photon-total subspace: a nonlocal filter.
    OnePhotonTotal,
}

#[derive(Debug, Clone, Copy)]
pub struct TomographyOptions {
    pub policy: AnalyzerPhasePolicy,
    pub postselection: Postselection,
}

impl Default for TomographyOptions {
    fn default() -> Self {
        Self {
            policy: AnalyzerPhasePolicy::Independent,
            postselection: Postselection::None,
        }
    }
}

fn paulis() -> [CMatrix; 4] {
    [identity(2), sigma_x(), sigma_y(), sigma_z()]
}

/// Setting labels, row-major over (μ, ν) ∈ {x, y, z}².
pub const SETTING_LABELS: [&str; 9] = ["xx", "xy", "xz", "yx", "yy", "yz", "zx", "zy", "zz"];
/// Outcome labels (s on A, t on B).
pub const OUTCOME_LABELS: [&str; 4] = ["++", "+-", "-+", "--"];

/// Per-setting outcome counts from a measurement record. Order-free: any
/// permutation of the entries yields the same counts.
pub fn counts_from_record(record: &MeasurementRecord) -> Result<[[u64; 4]; 9]> {
    let mut counts = [[0u64; 4]; 9];
    for entry in &record.entries {
        let s = SETTING_LABELS
            .iter()
            .position(|l| *l == entry.setting)
            .ok_or_else(|| Error::InvalidArgument(format!("setting {:?}", entry.setting)))?;
        let o = OUTCOME_LABELS
            .iter()
            .position(|l| *l == entry.outcome)
            .ok_or_else(|| Error::InvalidArgument(format!("outcome {:?}", entry.outcome)))?;
        counts[s][o] += 1;
    }
    Ok(counts)
}

/// Keeps the {0,1} levels of each side of a 3⊗3 state (support must
/// already lie there, e.g. after a click filter).
fn truncate_to_qubits(rho: &DensityMatrix) -> Result<DensityMatrix> {
    if rho.dims() != [3, 3] {
        return Err(Error::DimMismatch("expected a 3⊗3 state".into()));
    }
    let mut mat = CMatrix::zeros(4, 4);
    for ia in 0..2 {
        for ib in 0..2 {
            for ja in 0..2 {
                for jb in 0..2 {
                    mat[(ia * 2 + ib, ja * 2 + jb)] = rho.mat()[(ia * 3 + ib, ja * 3 + jb)];
                }
            }
        }
    }
    let tr = mat.trace().re;
    if tr < 1.0 - 1e-6 {
        return Err(Error::NotPhysical(format!(
            "state leaks outside the qubit levels (trace {tr})"
        )));
    }
    DensityMatrix::new(vec![2, 2], mat.scale(1.0 / tr))
}

/// Per-run postselection: returns the kept state and its keep probability.
fn postselect(rho: &DensityMatrix, policy: Postselection) -> Result<Option<(DensityMatrix, f64)>> {
    match policy {
        Postselection::None => Ok(Some((rho.clone(), 1.0))),
        Postselection::LocalClicks => match crate::measures::apply_filter(rho, &click_filter()) {
            Ok(out) => Ok(Some((truncate_to_qubits(&out.rho_pass)?, out.p_pass))),
            Err(Error::FilterAnnihilates(_)) => Ok(None),
            Err(e) => Err(e),
        },
        Postselection::OnePhotonTotal => match condition_on_one_photon_total(rho) {
            Ok((cond, p)) => Ok(Some((cond, p))),
            Err(Error::FilterAnnihilates(_)) => Ok(None),
            Err(e) => Err(e),
        },
    }
}

/// Phase co-rotation on Alice's analyzer: diag(1, e^{−iφ}) ⊗ I.
fn corotate(rho: &DensityMatrix, phi: f64) -> DensityMatrix {
    let mut u = identity(2);
    u[(1, 1)] = Complex64::from_polar(1.0, -phi);
    let full = tensor(&u, &identity(2));
    let mat = &full * rho.mat() * full.adjoint();
    DensityMatrix::new(vec![2, 2], mat).expect("unitary conjugation preserves physicality")
}

/// Linear inversion from the 36 outcome frequencies: one frequency table
/// per setting pair (μ, ν), outcomes (s, t) ∈ {+,−}².
fn linear_inversion(freqs: &[[f64; 4]; 9]) -> CMatrix {
    let p = paulis();
    // w[μ][ν] coordinates of ρ in the Pauli basis, w[0][0] = 1.
    let mut w = [[0.0f64; 4]; 4];
    w[0][0] = 1.0;
    let sign = |o: usize| if o == 0 { 1.0 } else { -1.0 };
    for mu in 1..4 {
        for nu in 1..4 {
            let f = &freqs[(mu - 1) * 3 + (nu - 1)];
            w[mu][nu] = f[0] - f[1] - f[2] + f[3];
        }
    }
    // Single-side expectations from the marginals, averaged over the other
    // side's three settings.
    for mu in 1..4 {
        let mut acc = 0.0;
        for nu in 1..4 {
            let f = &freqs[(mu - 1) * 3 + (nu - 1)];
            for (o, &v) in f.iter().enumerate() {
                acc += sign(o / 2) * v;
            }
        }
        w[mu][0] = acc / 3.0;
    }
    for nu in 1..4 {
        let mut acc = 0.0;
        for mu in 1..4 {
            let f = &freqs[(mu - 1) * 3 + (nu - 1)];
            for (o, &v) in f.iter().enumerate() {
                acc += sign(o % 2) * v;
            }
        }
        w[0][nu] = acc / 3.0;
    }
    let mut rho = CMatrix::zeros(4, 4);
    for mu in 0..4 {
        for nu in 0..4 {
            rho += tensor(&p[mu], &p[nu]).scale(w[mu][nu] / 4.0);
        }
    }
    rho
}

/// Concurrence of the physical projection of a frequency table.
fn concurrence_of_freqs(freqs: &[[f64; 4]; 9]) -> Result<(DensityMatrix, f64)> {
    let rho_hat = project_to_physical(&linear_inversion(freqs), vec![2, 2])?;
    let c = concurrence(&rho_hat)?.concurrence;
    Ok((rho_hat, c))
}

/// Full two-qubit tomography. Returns the reconstructed state and the
/// verdict report; the statistic is the concurrence of the estimate with a
/// bootstrap standard error.
pub fn tomography_test(
    src: &SourceProcess,
    shots_per_setting: u64,
    options: TomographyOptions,
    mode: ExecMode,
    seed: u64,
) -> Result<(DensityMatrix, VerifierReport)> {
    let (da, db) = src.side_dims();
    if options.postselection == Postselection::None && (da, db) != (2, 2) {
        return Err(Error::DimMismatch(format!(
            "tomography needs qubit pairs (or a postselection policy), got ({da}, {db})"
        )));
    }
    let source_leaks = matches!(
        (src.kind(), options.policy),
        (SourceKind::PhaseDrift(pd), AnalyzerPhasePolicy::SharedPath) if pd.leak_phase_to_verifier
    );
    let mut audit = CriteriaAudit::all_respected();
    let mut notes = Vec::new();
    if source_leaks {
        audit.c4 = false;
        notes.push("analyzer phase shares the generation path (co-rotating frame)".into());
    } else if options.policy == AnalyzerPhasePolicy::SharedPath {
        notes.push("shared-path requested but the source leaks no phase; independent".into());
    }
    if options.postselection == Postselection::OnePhotonTotal {
        audit.c5 = false;
        notes.push("one-photon-total postselection is a nonlocal filter".into());
    }

    match mode {
        ExecMode::Exact => {
            let marginal = &src.ground_truth().run_marginal;
            let rho_eff = if source_leaks {
                // Every run measured in its own co-rotating frame looks
                // like the φ = 0 state.
                crate::sources::phase_bell_state(0.0).to_density()
            } else {
                match postselect(marginal, options.postselection)? {
                    Some((r, _)) => r,
                    None => {
                        return Err(Error::FilterAnnihilates(0.0));
                    }
                }
            };
            let c = concurrence(&rho_eff)?.concurrence;
            let report = VerifierReport::decide(
                "tomography",
                c,
                0.0,
                ViolationSide::Above,
                0.0,
                0,
                audit,
                notes,
            );
            Ok((rho_eff, report))
        }
        ExecMode::Sampled { shots: _ } => {
            if shots_per_setting < MIN_SHOTS_PER_SETTING {
                return Err(Error::InsufficientShots {
                    got: shots_per_setting,
                    need: MIN_SHOTS_PER_SETTING,
                });
            }
            let n_runs = 9 * shots_per_setting as usize;
            let plan: Vec<(usize, usize)> =
                (0..9).map(|s| (s, shots_per_setting as usize)).collect();
            let order = randomized_order(&plan, n_runs, derive_seed(seed, "order"))?;
            let batch = sample_runs(src, n_runs, derive_seed(seed, "runs"))?;
            let mut rng: ChaCha8Rng = SeedableRng::seed_from_u64(derive_seed(seed, "outcomes"));

            let p = paulis();
            let mut projectors = Vec::with_capacity(9);
            for mu in 1..4 {
                for nu in 1..4 {
                    let pa = Povm::from_pm_observable(&p[mu])?;
                    let pb = Povm::from_pm_observable(&p[nu])?;
                    let mut ops = Vec::with_capacity(4);
                    for f in pa.elements() {
                        for g in pb.elements() {
                            ops.push(tensor(f, g));
                        }
                    }
                    projectors.push(ops);
                }
            }

            let mut record = MeasurementRecord::new(seed);
            for (t, &setting) in order.iter().enumerate() {
                let raw = batch.run_state(t)?;
                let Some((mut rho, keep_p)) = postselect(&raw, options.postselection)? else {
                    continue;
                };
                if keep_p < 1.0 && rand::Rng::gen::<f64>(&mut rng) >= keep_p {
                    continue;
                }
                if source_leaks {
                    if let Some(phi) = batch.leaked_phase(t) {
                        rho = corotate(&rho, phi);
                    }
                }
                let probs: Vec<f64> = projectors[setting]
                    .iter()
                    .map(|op| rho.expect(op).max(0.0))
                    .collect();
                let o = sample_index(&probs, &mut rng);
                record.push(RecordEntry {
                    run_id: t as u64,
                    block_id: batch.locate(t).0 as u64,
                    setting: SETTING_LABELS[setting].into(),
                    outcome: OUTCOME_LABELS[o].into(),
                });
            }
            let counts = counts_from_record(&record)?;
            let totals: Vec<u64> = counts.iter().map(|c| c.iter().sum()).collect();
            if totals.contains(&0) {
                return Err(Error::InsufficientShots { got: 0, need: 1 });
            }
            let freq = |c: &[[u64; 4]; 9]| -> [[f64; 4]; 9] {
                let mut f = [[0.0f64; 4]; 9];
                for s in 0..9 {
                    let n: u64 = c[s].iter().sum();
                    for o in 0..4 {
                        f[s][o] = c[s][o] as f64 / n as f64;
                    }
                }
                f
            };
            let (rho_hat, statistic) = concurrence_of_freqs(&freq(&counts))?;

            // Bootstrap: multinomial resample of each setting's counts.
            let mut boot_rng: ChaCha8Rng =
                SeedableRng::seed_from_u64(derive_seed(seed, "bootstrap"));
            let base = freq(&counts);
            let mut cs = Vec::with_capacity(BOOTSTRAP_REPS);
            for _ in 0..BOOTSTRAP_REPS {
                let mut resampled = [[0u64; 4]; 9];
                for s in 0..9 {
                    for _ in 0..totals[s] {
                        let o = sample_index(&base[s], &mut boot_rng);
                        resampled[s][o] += 1;
                    }
                }
                cs.push(concurrence_of_freqs(&freq(&resampled))?.1);
            }
            let mean: f64 = cs.iter().sum::<f64>() / cs.len() as f64;
            let var: f64 =
                cs.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / cs.len() as f64;
            let stderr = var.sqrt();
            let used: u64 = totals.iter().sum();
            let report = VerifierReport::decide(
                "tomography",
                statistic,
                0.0,
                ViolationSide::Above,
                stderr,
                used,
                audit,
                notes,
            );
            Ok((rho_hat, report))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qmat::frob_dist;
    use crate::sources::{
        make_dual_rail, make_phase_mixed, make_werner, DualRailVariant, PhaseLaw,
    };
    use approx::assert_abs_diff_eq;

    #[test]
    fn exact_singlet_reconstructs_perfectly() {
        let src = make_werner(1.0).unwrap();
        let (rho, rep) =
            tomography_test(&src, 1000, TomographyOptions::default(), ExecMode::Exact, 0).unwrap();
        assert_abs_diff_eq!(rep.statistic, 1.0, epsilon = 1e-10);
        assert!(frob_dist(rho.mat(), crate::qmat::psi_minus().to_density().mat()) < 1e-10);
    }

    #[test]
    fn sampled_singlet_certifies() {
        let src = make_werner(1.0).unwrap();
        let (_, rep) = tomography_test(
            &src,
            500,
            TomographyOptions::default(),
            ExecMode::Sampled { shots: 0 },
            3,
        )
        .unwrap();
        assert!(rep.statistic > 0.9, "C = {}", rep.statistic);
        assert_eq!(rep.verdict, super::super::Verdict::Entangled);
        assert!(rep.criteria_audit.is_clean());
    }

    #[test]
    fn phase_mixed_independent_shows_no_entanglement() {
        let src = make_phase_mixed(PhaseLaw::Uniform, true).unwrap();
        let (_, rep) = tomography_test(
            &src,
            500,
            TomographyOptions::default(),
            ExecMode::Sampled { shots: 0 },
            5,
        )
        .unwrap();
        assert!(
            rep.statistic <= 3.0 * rep.stderr + 1e-9,
            "C = {} (se {})",
            rep.statistic,
            rep.stderr
        );
        assert_eq!(rep.verdict, super::super::Verdict::Inconclusive);
    }

    #[test]
    fn shared_path_fakes_maximal_entanglement() {
        let src = make_phase_mixed(PhaseLaw::Uniform, true).unwrap();
        let opts = TomographyOptions {
            policy: AnalyzerPhasePolicy::SharedPath,
            postselection: Postselection::None,
        };
        let (_, rep) = tomography_test(&src, 500, opts, ExecMode::Sampled { shots: 0 }, 5).unwrap();
        assert!(rep.statistic > 0.9, "C = {}", rep.statistic);
        assert!(!rep.criteria_audit.c4);
        let (rho, exact) = tomography_test(&src, 500, opts, ExecMode::Exact, 0).unwrap();
        assert_abs_diff_eq!(exact.statistic, 1.0, epsilon = 1e-10);
        assert!(
            frob_dist(
                rho.mat(),
                crate::sources::phase_bell_state(0.0).to_density().mat()
            ) < 1e-10
        );
    }

    #[test]
    fn shared_path_without_leak_falls_back_to_independent() {
        let src = make_phase_mixed(PhaseLaw::Uniform, false).unwrap();
        let opts = TomographyOptions {
            policy: AnalyzerPhasePolicy::SharedPath,
            postselection: Postselection::None,
        };
        let (_, rep) = tomography_test(&src, 500, opts, ExecMode::Exact, 0).unwrap();
        assert!(rep.criteria_audit.c4);
        assert!(rep.statistic < 1e-9);
    }

    #[test]
    fn one_photon_postselection_fakes_entanglement_on_product_source() {
        let src = make_dual_rail(DualRailVariant::ProductEq10, 0.1, 0.8).unwrap();
        assert!(src.is_unentangled());
        let opts = TomographyOptions {
            policy: AnalyzerPhasePolicy::Independent,
            postselection: Postselection::OnePhotonTotal,
        };
        let (_, rep) = tomography_test(&src, 100, opts, ExecMode::Exact, 0).unwrap();
        assert_abs_diff_eq!(rep.statistic, 1.0, epsilon = 1e-9);
        assert!(!rep.criteria_audit.c5);
    }

    #[test]
    fn min_shots_enforced() {
        let src = make_werner(1.0).unwrap();
        let out = tomography_test(
            &src,
            99,
            TomographyOptions::default(),
            ExecMode::Sampled { shots: 0 },
            0,
        );
        assert!(matches!(out, Err(Error::InsufficientShots { .. })));
    }

    #[test]
    fn rejects_qutrit_source_without_postselection() {
        let src = make_dual_rail(DualRailVariant::EntangledEq9, 0.1, 0.0).unwrap();
        let out = tomography_test(&src, 500, TomographyOptions::default(), ExecMode::Exact, 0);
        assert!(matches!(out, Err(Error::DimMismatch(_))));
    }
}

#[cfg(test)]
mod record_tests {
    use super::*;
    use crate::statproc::{MeasurementRecord, RecordEntry};
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    #[test]
    fn counts_are_invariant_under_record_permutation() {
        let mut record = MeasurementRecord::new(3);
        let mut rng = rand::rngs::StdRng::seed_from_u64(9);
        for t in 0..500u64 {
            record.push(RecordEntry {
                run_id: t,
                block_id: t,
                setting: SETTING_LABELS[(t % 9) as usize].into(),
                outcome: OUTCOME_LABELS[(t % 4) as usize].into(),
            });
        }
        let base = counts_from_record(&record).unwrap();
        record.entries.shuffle(&mut rng);
        assert_eq!(base, counts_from_record(&record).unwrap());
    }
}
