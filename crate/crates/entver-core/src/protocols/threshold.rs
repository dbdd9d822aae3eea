//! Classical intercept-resend fidelity thresholds via see-saw optimization.
//!
//! A measure-and-prepare strategy is a POVM on the input qubit plus one
//! resend state per outcome. Its average fidelity on a test ensemble bounds
//! what any entanglement-free teleportation can achieve; the optimizer
//! searches over strategies and the maximum is the threshold F̃.
//!
//! The POVM is parametrized by up to four unnormalized vectors u_j via
//! E_j = S^{-1/2}|u_j⟩⟨u_j|S^{-1/2}, S = Σ|u_j⟩⟨u_j| (completeness by
//! construction), and optimized by gradient-free coordinate updates with
//! random restarts. The resend step is closed-form: for fixed POVM the
//! optimal resend for outcome j is the top eigenvector of the
//! POVM-conditioned average projector B_j = Σᵢ pᵢ⟨ψᵢ|E_j|ψᵢ⟩|ψᵢ⟩⟨ψᵢ|.

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::qmat::{eig_hermitian_full, CMatrix, CVector, PureState};
use crate::statproc::derive_seed;

use super::ensembles::TestEnsemble;

/// Number of rank-one POVM elements the strategy may use.
const POVM_ELEMENTS: usize = 4;
/// Real parameters: 2 complex amplitudes per element vector.
const N_PARAMS: usize = POVM_ELEMENTS * 4;
/// Coordinate step floor; shrinking past this counts as converged.
const STEP_FLOOR: f64 = 1e-7;

/// What the strategy maximizes over the test ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FidelityObjective {
    /// Probability-weighted average fidelity: the threshold an honest
    /// teleporter's average must beat.
    #[default]
    EnsembleAverage,
    /// The worst per-state fidelity: the best attack that reproduces
    /// *every* test state at least this well.
    WorstState,
}

/// Best measure-and-prepare fidelity found for a test ensemble.
#[derive(Debug, Clone, Serialize)]
pub struct ThresholdResult {
    pub f_tilde: f64,
    pub iterations: u64,
    pub converged: bool,
    /// Best-so-far objective after each sweep of the winning restart.
    pub trace: Vec<f64>,
    #[serde(skip)]
    pub povm: Vec<CMatrix>,
    #[serde(skip)]
    pub resend: Vec<PureState>,
}

struct Objective<'a> {
    ensemble: &'a TestEnsemble,
    objective: FidelityObjective,
}

impl Objective<'_> {
    fn n_params(&self) -> usize {
        match self.objective {
            // Closed-form resends: only the POVM is parametrized.
            FidelityObjective::EnsembleAverage => N_PARAMS,
            // Explicit resend amplitudes join the coordinate search.
            FidelityObjective::WorstState => 2 * N_PARAMS,
        }
    }

    /// POVM from raw parameters; `None` when S is numerically singular.
    fn povm(&self, params: &[f64]) -> Option<Vec<CMatrix>> {
        let vectors: Vec<CVector> = (0..POVM_ELEMENTS)
            .map(|j| {
                CVector::from_vec(vec![
                    Complex64::new(params[4 * j], params[4 * j + 1]),
                    Complex64::new(params[4 * j + 2], params[4 * j + 3]),
                ])
            })
            .collect();
        let mut s = CMatrix::zeros(2, 2);
        for u in &vectors {
            s += u * u.adjoint();
        }
        let (vals, vecs) = eig_hermitian_full(&s).ok()?;
        if vals.iter().any(|&v| v < 1e-10) {
            return None;
        }
        let mut inv_sqrt = CMatrix::zeros(2, 2);
        for (i, &v) in vals.iter().enumerate() {
            let col = vecs.column(i);
            inv_sqrt += (col * col.adjoint()).scale(1.0 / v.sqrt());
        }
        Some(
            vectors
                .iter()
                .map(|u| {
                    let w = &inv_sqrt * u;
                    &w * w.adjoint()
                })
                .collect(),
        )
    }

    fn explicit_resends(&self, params: &[f64]) -> Vec<PureState> {
        (0..POVM_ELEMENTS)
            .map(|j| {
                let base = N_PARAMS + 4 * j;
                let v = CVector::from_vec(vec![
                    Complex64::new(params[base], params[base + 1]),
                    Complex64::new(params[base + 2], params[base + 3]),
                ]);
                PureState::normalized(vec![2], v).unwrap_or_else(|_| PureState::ket_bits(&[0]))
            })
            .collect()
    }

    /// Conditioned average projector for one POVM element.
    fn conditioned_average(&self, element: &CMatrix) -> CMatrix {
        let mut b = CMatrix::zeros(2, 2);
        for (state, p) in self.ensemble.iter() {
            let weight = p * state.to_density().expect(element);
            b += state.to_density().mat().scale(weight);
        }
        b
    }

    fn value(&self, params: &[f64]) -> Option<f64> {
        let povm = self.povm(params)?;
        match self.objective {
            FidelityObjective::EnsembleAverage => {
                // Closed-form optimal resends: Σ_j λ_max(B_j).
                let mut f = 0.0;
                for e in &povm {
                    let b = self.conditioned_average(e);
                    f += eig_hermitian_full(&b).ok()?.0[0].max(0.0);
                }
                Some(f)
            }
            FidelityObjective::WorstState => {
                let resend = self.explicit_resends(params);
                let mut worst = f64::INFINITY;
                for (state, _) in self.ensemble.iter() {
                    let mut f = 0.0;
                    for (e, chi) in povm.iter().zip(resend.iter()) {
                        f += state.to_density().expect(e) * state.fidelity(chi);
                    }
                    worst = worst.min(f);
                }
                Some(worst)
            }
        }
    }

    /// Strategy (POVM and resends) realized by the parameters.
    fn strategy(&self, params: &[f64]) -> Option<(Vec<CMatrix>, Vec<PureState>)> {
        let povm = self.povm(params)?;
        match self.objective {
            FidelityObjective::EnsembleAverage => {
                let mut resend = Vec::with_capacity(povm.len());
                for e in &povm {
                    let (_, vecs) = eig_hermitian_full(&self.conditioned_average(e)).ok()?;
                    let top: CVector = vecs.column(0).into_owned();
                    resend.push(PureState::normalized(vec![2], top).ok()?);
                }
                Some((povm, resend))
            }
            FidelityObjective::WorstState => {
                let resend = self.explicit_resends(params);
                Some((povm, resend))
            }
        }
    }
}

/// Optimal intercept-resend fidelity for `ensemble` under the
/// ensemble-average objective. See [`classical_threshold_with`].
pub fn classical_threshold(
    ensemble: &TestEnsemble,
    restarts: usize,
    max_iter: usize,
    seed: u64,
) -> Result<ThresholdResult> {
    classical_threshold_with(
        ensemble,
        FidelityObjective::EnsembleAverage,
        restarts,
        max_iter,
        seed,
    )
}

/// Best measure-and-prepare strategy for `ensemble` under the chosen
/// objective, maximized over `restarts` random starts with at most
/// `max_iter` coordinate sweeps each.
///
/// Non-convergence (sweep budget exhausted before the step floor) is
/// reported through `converged = false`; the best value found is still
/// returned.
pub fn classical_threshold_with(
    ensemble: &TestEnsemble,
    objective: FidelityObjective,
    restarts: usize,
    max_iter: usize,
    seed: u64,
) -> Result<ThresholdResult> {
    if ensemble.is_empty() {
        return Err(Error::InvalidArgument("ensemble empty".into()));
    }
    if restarts == 0 || max_iter == 0 {
        return Err(Error::InvalidArgument(
            "need restarts ≥ 1 and max_iter ≥ 1".into(),
        ));
    }
    let objective = Objective {
        ensemble,
        objective,
    };
    let n_params = objective.n_params();
    let mut rng: ChaCha8Rng = SeedableRng::seed_from_u64(derive_seed(seed, "seesaw"));

    let mut best_value = f64::NEG_INFINITY;
    let mut best_params = vec![0.0; n_params];
    let mut best_trace = Vec::new();
    let mut best_converged = false;
    let mut best_iterations = 0u64;

    for restart in 0..restarts {
        let mut params = vec![0.0f64; n_params];
        if restart == 0 {
            // Projective z-basis start: at least the best blind-guess value.
            params[0] = 1.0; // u_0 = |0⟩
            params[6] = 1.0; // u_1 = |1⟩ (real part of second amplitude)
            if n_params > N_PARAMS {
                params[N_PARAMS] = 1.0; // resend |0⟩
                params[N_PARAMS + 6] = 1.0; // resend |1⟩
                params[N_PARAMS + 8] = 1.0;
                params[N_PARAMS + 12] = 1.0;
            }
        } else {
            for p in params.iter_mut() {
                *p = rng.gen_range(-1.0..1.0);
            }
        }
        let Some(mut current) = objective.value(&params) else {
            continue;
        };
        let mut step = 0.3f64;
        let mut trace = vec![current];
        let mut sweeps = 0u64;
        let mut converged = false;
        while (sweeps as usize) < max_iter {
            sweeps += 1;
            let mut improved = false;
            for k in 0..n_params {
                for dir in [1.0f64, -1.0] {
                    let mut cand = params.clone();
                    cand[k] += dir * step;
                    if let Some(v) = objective.value(&cand) {
                        if v > current + 1e-14 {
                            current = v;
                            params = cand;
                            improved = true;
                        }
                    }
                }
            }
            trace.push(current);
            if !improved {
                step *= 0.5;
                if step < STEP_FLOOR {
                    converged = true;
                    break;
                }
            }
        }
        if current > best_value {
            best_value = current;
            best_params = params;
            best_trace = trace;
            best_converged = converged;
            best_iterations = sweeps;
        }
    }

    let (povm, resend) = objective
        .strategy(&best_params)
        .ok_or_else(|| Error::InvalidArgument("optimizer produced a singular strategy".into()))?;
    Ok(ThresholdResult {
        f_tilde: best_value,
        iterations: best_iterations,
        converged: best_converged,
        trace: best_trace,
        povm,
        resend,
    })
}

/// Best blind-guess fidelity (no measurement): λ_max of the average state.
pub fn blind_guess_baseline(ensemble: &TestEnsemble) -> f64 {
    let mut avg = CMatrix::zeros(2, 2);
    for (state, p) in ensemble.iter() {
        avg += state.to_density().mat().scale(p);
    }
    eig_hermitian_full(&avg).map(|(v, _)| v[0]).unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn threshold(ens: &TestEnsemble) -> ThresholdResult {
        classical_threshold(ens, 8, 300, 11).unwrap()
    }

    #[test]
    fn tetrahedral_threshold_is_two_thirds() {
        let r = threshold(&TestEnsemble::tetrahedral());
        assert!((r.f_tilde - 2.0 / 3.0).abs() < 1e-3, "F~ = {}", r.f_tilde);
    }

    #[test]
    fn mub_threshold_is_two_thirds() {
        let r = threshold(&TestEnsemble::mub6());
        assert!((r.f_tilde - 2.0 / 3.0).abs() < 1e-3, "F~ = {}", r.f_tilde);
    }

    #[test]
    fn trace_is_monotone_nondecreasing() {
        let r = threshold(&TestEnsemble::tetrahedral());
        for w in r.trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-12);
        }
    }

    #[test]
    fn threshold_beats_blind_guess() {
        for ens in [
            TestEnsemble::tetrahedral(),
            TestEnsemble::mub6(),
            TestEnsemble::four_state_default(),
        ] {
            let r = threshold(&ens);
            assert!(r.f_tilde >= blind_guess_baseline(&ens) - 1e-9);
        }
    }

    #[test]
    fn two_orthogonal_states_reach_unit_fidelity() {
        let ens = TestEnsemble::mub_subset(&[0, 1]).unwrap();
        let r = threshold(&ens);
        assert!((r.f_tilde - 1.0).abs() < 1e-6, "F~ = {}", r.f_tilde);
    }

    #[test]
    fn povm_is_complete() {
        let r = threshold(&TestEnsemble::tetrahedral());
        let mut sum = CMatrix::zeros(2, 2);
        for e in &r.povm {
            sum += e;
        }
        assert!(crate::qmat::frob_dist(&sum, &crate::qmat::identity(2)) < 1e-8);
        assert_eq!(r.resend.len(), r.povm.len());
    }
}
