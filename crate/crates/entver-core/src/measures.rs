//! Entanglement quantifiers and the local-filtering machinery.
//!
//! Two independent two-qubit oracles are provided: Wootters concurrence
//! (via the spin-flipped product ρρ̃) and negativity (via the partial
//! transpose). At 2×2 these agree on the entangled/separable boundary,
//! which the test suites exploit.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::qmat::{
    self, eig_hermitian, identity, sqrt_psd, tensor, CMatrix, DensityMatrix, PSD_TOL,
};

/// Eigenvalues below this (after the Hermitian route) are treated as
/// round-off zeros; anything more negative signals a non-physical input.
pub const LAMBDA_CLIP: f64 = 1e-8;

/// Positive eigenvalues of ρρ̃ below this are round-off zeros of a
/// separable state; without the floor the square root amplifies 1e-16
/// noise into a 1e-8 spurious concurrence.
pub const LAMBDA_POS_FLOOR: f64 = 1e-12;

/// Tolerance for the filtering-monotonicity inequality.
pub const MONOTONICITY_TOL: f64 = 1e-7;

/// Spin-flipped state ρ̃ = (σ_y⊗σ_y) ρ* (σ_y⊗σ_y).
pub fn spin_flip(rho: &DensityMatrix) -> Result<CMatrix> {
    if rho.dims() != [2, 2] {
        return Err(Error::DimMismatch(format!(
            "spin flip needs a two-qubit state, got dims {:?}",
            rho.dims()
        )));
    }
    let yy = tensor(&qmat::sigma_y(), &qmat::sigma_y());
    let conj = rho.mat().map(|z| z.conj());
    Ok(&yy * conj * &yy)
}

/// The four λᵢ of ρρ̃ (nonincreasing) and the Wootters concurrence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConcurrenceBreakdown {
    pub lambdas: [f64; 4],
    pub concurrence: f64,
}

/// Wootters concurrence C(ρ) = max(0, √λ₁−√λ₂−√λ₃−√λ₄).
///
/// The λᵢ are computed through the Hermitian route (eigenvalues of
/// √ρ ρ̃ √ρ), which has the same spectrum as the nonhermitian ρρ̃.
pub fn concurrence(rho: &DensityMatrix) -> Result<ConcurrenceBreakdown> {
    let flipped = spin_flip(rho)?;
    let s = sqrt_psd(rho.mat())?;
    let m = &s * flipped * &s;
    let eigs = eig_hermitian(&m)?;
    let mut lambdas = [0.0f64; 4];
    for (i, &v) in eigs.iter().enumerate() {
        if v < -LAMBDA_CLIP {
            return Err(Error::NotPhysical(format!(
                "eigenvalue {v:.3e} of rho*rho_tilde"
            )));
        }
        lambdas[i] = if v < LAMBDA_POS_FLOOR { 0.0 } else { v };
    }
    let c = lambdas[0].sqrt() - lambdas[1].sqrt() - lambdas[2].sqrt() - lambdas[3].sqrt();
    Ok(ConcurrenceBreakdown {
        lambdas,
        concurrence: c.max(0.0),
    })
}

/// Negativity (‖ρ^{T_B}‖₁ − 1)/2 of a bipartite state.
pub fn negativity(rho: &DensityMatrix) -> Result<f64> {
    let pt = rho.partial_transpose(1)?;
    let eigs = eig_hermitian(&pt)?;
    let trace_norm: f64 = eigs.iter().map(|v| v.abs()).sum();
    Ok(((trace_norm - 1.0) / 2.0).max(0.0))
}

/// Recovers the four eigenvalues λᵢ from the power sums
/// m_k = Tr[(ρρ̃)^k], k = 1..4, via Newton's identities and the roots of
/// the quartic characteristic polynomial (companion-matrix eigenvalues).
///
/// Returns the roots' real parts in nonincreasing order together with the
/// largest imaginary magnitude encountered; a large imaginary part means
/// the moments are inconsistent with any single density matrix.
pub fn lambdas_from_moments(moments: &[f64; 4]) -> (Vec<f64>, f64) {
    let [m1, m2, m3, m4] = *moments;
    let e1 = m1;
    let e2 = (e1 * m1 - m2) / 2.0;
    let e3 = (e2 * m1 - e1 * m2 + m3) / 3.0;
    let e4 = (e3 * m1 - e2 * m2 + e1 * m3 - m4) / 4.0;
    // Monic x^4 − e1 x^3 + e2 x^2 − e3 x + e4, low-order first.
    let mut coeffs = vec![e4, -e3, e2, -e1, 1.0];
    // Deflate exact zero roots first: a repeated zero root is badly
    // conditioned in the companion matrix and its noise blows up under the
    // square roots downstream.
    let scale = coeffs.iter().fold(1.0f64, |a, c| a.max(c.abs()));
    let mut zero_roots = 0usize;
    while coeffs.len() > 1 && coeffs[0].abs() <= 1e-12 * scale {
        coeffs.remove(0);
        zero_roots += 1;
    }
    let degree = coeffs.len() - 1;
    let mut reals: Vec<f64> = vec![0.0; zero_roots];
    let mut max_imag = 0.0f64;
    if degree > 0 {
        let lead = coeffs[degree];
        let mut companion = DMatrix::<f64>::zeros(degree, degree);
        for k in 0..degree {
            companion[(0, k)] = -coeffs[degree - 1 - k] / lead;
        }
        for k in 1..degree {
            companion[(k, k - 1)] = 1.0;
        }
        let roots = companion.complex_eigenvalues();
        max_imag = roots.iter().map(|z| z.im.abs()).fold(0.0f64, f64::max);
        reals.extend(roots.iter().map(|z| z.re));
    }
    reals.sort_by(|a, b| b.partial_cmp(a).unwrap());
    (reals, max_imag)
}

/// Power sums Tr[(ρρ̃)^k] for k = 1..4, computed directly from the
/// (nonhermitian) product. Serves as the independent oracle for the
/// Hermitian eigenvalue route.
pub fn spin_flip_moments(rho: &DensityMatrix) -> Result<[f64; 4]> {
    let m = rho.mat() * spin_flip(rho)?;
    let mut out = [0.0f64; 4];
    let mut acc = m.clone();
    out[0] = acc.trace().re;
    for slot in out.iter_mut().skip(1) {
        acc = &acc * &m;
        *slot = acc.trace().re;
    }
    Ok(out)
}

/// A pair of local filter operators, each with operator norm ≤ 1.
#[derive(Debug, Clone)]
pub struct FilterPair {
    f_a: CMatrix,
    f_b: CMatrix,
}

impl FilterPair {
    /// Validates f†f ≤ I (within [`PSD_TOL`]) on both sides.
    pub fn new(f_a: CMatrix, f_b: CMatrix) -> Result<Self> {
        for (side, f) in [("A", &f_a), ("B", &f_b)] {
            if f.nrows() != f.ncols() {
                return Err(Error::DimMismatch(format!("filter {side} is not square")));
            }
            let gram = f.adjoint() * f;
            let top = eig_hermitian(&gram)?[0];
            if top > 1.0 + PSD_TOL {
                return Err(Error::NotPhysical(format!(
                    "filter {side} has operator norm {:.6} > 1",
                    top.sqrt()
                )));
            }
        }
        Ok(Self { f_a, f_b })
    }

    pub fn identity(da: usize, db: usize) -> Self {
        Self {
            f_a: identity(da),
            f_b: identity(db),
        }
    }

    pub fn f_a(&self) -> &CMatrix {
        &self.f_a
    }

    pub fn f_b(&self) -> &CMatrix {
        &self.f_b
    }
}

/// Result of pushing a state through a two-sided local filter.
#[derive(Debug, Clone)]
pub struct FilterOutcome {
    pub p_pass: f64,
    pub rho_pass: DensityMatrix,
    pub p_fail: f64,
    pub rho_fail: DensityMatrix,
}

/// Applies a two-sided local filter. The pass branch is
/// (f_A⊗f_B) ρ (f_A⊗f_B)†; the three complementary Kraus branches
/// (√(I−f†f) on either or both sides) are merged into one fail branch, so
/// p_pass + p_fail = 1.
pub fn apply_filter(rho: &DensityMatrix, filter: &FilterPair) -> Result<FilterOutcome> {
    let dims = rho.dims();
    if dims.len() != 2 || filter.f_a.nrows() != dims[0] || filter.f_b.nrows() != dims[1] {
        return Err(Error::DimMismatch(format!(
            "filter dims ({}, {}) do not match state dims {:?}",
            filter.f_a.nrows(),
            filter.f_b.nrows(),
            dims
        )));
    }
    let g_a = sqrt_psd(&(identity(dims[0]) - filter.f_a.adjoint() * &filter.f_a))?;
    let g_b = sqrt_psd(&(identity(dims[1]) - filter.f_b.adjoint() * &filter.f_b))?;

    let branch = |ka: &CMatrix, kb: &CMatrix| -> CMatrix {
        let k = tensor(ka, kb);
        &k * rho.mat() * k.adjoint()
    };

    let pass_raw = branch(&filter.f_a, &filter.f_b);
    let p_pass = pass_raw.trace().re;
    if p_pass < 1e-12 {
        return Err(Error::FilterAnnihilates(p_pass));
    }
    let fail_raw = branch(&g_a, &filter.f_b) + branch(&filter.f_a, &g_b) + branch(&g_a, &g_b);
    let p_fail = fail_raw.trace().re;
    debug_assert!((p_pass + p_fail - 1.0).abs() < 1e-9);

    let dims_vec = dims.to_vec();
    let rho_pass = DensityMatrix::new(dims_vec.clone(), pass_raw.scale(1.0 / p_pass))?;
    let rho_fail = if p_fail < 1e-12 {
        // Dead branch; keep a physical placeholder at weight ~0.
        DensityMatrix::maximally_mixed(dims_vec)
    } else {
        DensityMatrix::new(dims_vec, fail_raw.scale(1.0 / p_fail))?
    };
    Ok(FilterOutcome {
        p_pass,
        rho_pass,
        p_fail,
        rho_fail,
    })
}

/// Which entanglement measure to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    Concurrence,
    Negativity,
}

pub fn evaluate_measure(measure: Measure, rho: &DensityMatrix) -> Result<f64> {
    match measure {
        Measure::Concurrence => Ok(concurrence(rho)?.concurrence),
        Measure::Negativity => negativity(rho),
    }
}

/// Checks E(ρ) ≥ p_pass·E(ρ_pass) + p_fail·E(ρ_fail) within
/// [`MONOTONICITY_TOL`].
pub fn monotonicity_check(
    rho: &DensityMatrix,
    filter: &FilterPair,
    measure: Measure,
) -> Result<bool> {
    let out = apply_filter(rho, filter)?;
    let before = evaluate_measure(measure, rho)?;
    let after = out.p_pass * evaluate_measure(measure, &out.rho_pass)?
        + out.p_fail * evaluate_measure(measure, &out.rho_fail)?;
    Ok(before + MONOTONICITY_TOL >= after)
}

/// Werner state W_α = α|ψ⁻⟩⟨ψ⁻| + (1−α) I/4.
pub fn werner(alpha: f64) -> Result<DensityMatrix> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!(
            "Werner parameter {alpha} outside [0, 1]"
        )));
    }
    DensityMatrix::mixture(&[
        (alpha, qmat::psi_minus().to_density()),
        (1.0 - alpha, DensityMatrix::maximally_mixed(vec![2, 2])),
    ])
}

/// Closed form for the Werner-state concurrence, max(0, (3α−1)/2).
pub fn werner_concurrence(alpha: f64) -> f64 {
    ((3.0 * alpha - 1.0) / 2.0).max(0.0)
}
