//! Seeded generators for random states, unitaries and filters.
//!
//! Used by the see-saw optimizer's restarts and by the property suites.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::qmat::{CMatrix, CVector, DensityMatrix, PureState, C_ONE};

fn cnormal<R: Rng>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im)
}

/// Ginibre matrix with i.i.d. complex-normal entries.
pub fn ginibre<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| cnormal(rng))
}

/// Haar-random pure state over the given factorization.
pub fn random_pure<R: Rng>(dims: &[usize], rng: &mut R) -> PureState {
    let n: usize = dims.iter().product();
    let amp = CVector::from_fn(n, |_, _| cnormal(rng));
    PureState::normalized(dims.to_vec(), amp).expect("nonzero Gaussian vector")
}

/// Random mixed state ρ = GG†/Tr(GG†) with G of the given rank.
pub fn random_density<R: Rng>(dims: &[usize], rank: usize, rng: &mut R) -> DensityMatrix {
    let n: usize = dims.iter().product();
    let g = ginibre(n, rank.clamp(1, n), rng);
    let m = &g * g.adjoint();
    let m = m.scale(1.0 / m.trace().re);
    DensityMatrix::new(dims.to_vec(), m).expect("Wishart state is physical")
}

/// Haar-distributed unitary via phase-fixed QR of a Ginibre matrix.
pub fn random_unitary<R: Rng>(n: usize, rng: &mut R) -> CMatrix {
    let g = ginibre(n, n, rng);
    let qr = g.qr();
    let q = qr.q();
    let r = qr.r();
    let mut ph = CMatrix::zeros(n, n);
    for i in 0..n {
        let d = r[(i, i)];
        ph[(i, i)] = if d.norm() > 1e-12 {
            d / d.norm()
        } else {
            C_ONE
        };
    }
    q * ph
}

/// Random contraction (operator norm ≤ 1): a Ginibre matrix rescaled by its
/// largest singular value and a uniform factor in (0, 1].
pub fn random_contraction<R: Rng>(n: usize, rng: &mut R) -> CMatrix {
    let g = ginibre(n, n, rng);
    let top_sv = (g.adjoint() * &g)
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(0.0f64, f64::max)
        .sqrt();
    let scale = rng.gen_range(0.05..=1.0) / top_sv.max(1e-12);
    g.scale(scale)
}
