//! Complex linear algebra and quantum-state primitives on small dense
//! Hilbert spaces (total dimension ≤ 256).
//!
//! Subsystem ordering is row-major throughout: in `tensor(a, b)` the first
//! argument is the most significant factor, so basis index
//! `i = i_0·d_1·d_2·… + i_1·d_2·… + …`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Tolerance for Hermiticity checks.
pub const HERM_TOL: f64 = 1e-9;
/// Tolerance for unit-trace and unit-norm checks.
pub const TRACE_TOL: f64 = 1e-10;
/// Most negative eigenvalue a physical state may carry.
pub const PSD_TOL: f64 = 1e-9;
/// Largest dense dimension the crate will materialize.
pub const MAX_DENSE_DIM: usize = 256;

pub const C_ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const C_ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const C_I: Complex64 = Complex64::new(0.0, 1.0);

pub fn cr(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

pub fn sigma_x() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[C_ZERO, C_ONE, C_ONE, C_ZERO])
}

pub fn sigma_y() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[C_ZERO, -C_I, C_I, C_ZERO])
}

pub fn sigma_z() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[C_ONE, C_ZERO, C_ZERO, -C_ONE])
}

/// Kronecker product with the first argument most significant.
pub fn tensor(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Kronecker product of a list of factors, left to right.
pub fn tensor_all(factors: &[&CMatrix]) -> CMatrix {
    assert!(!factors.is_empty());
    let mut out = factors[0].clone();
    for f in &factors[1..] {
        out = tensor(&out, f);
    }
    out
}

/// Maximum absolute deviation from Hermiticity.
pub fn herm_defect(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            let d = (m[(i, j)] - m[(j, i)].conj()).norm();
            if d > worst {
                worst = d;
            }
        }
    }
    worst
}

pub fn trace(m: &CMatrix) -> Complex64 {
    m.trace()
}

/// Frobenius distance between two matrices.
pub fn frob_dist(a: &CMatrix, b: &CMatrix) -> f64 {
    (a - b).norm()
}

/// Eigenvalues of a Hermitian matrix in nonincreasing order.
///
/// Errors if the input deviates from Hermiticity by more than [`HERM_TOL`].
pub fn eig_hermitian(m: &CMatrix) -> Result<Vec<f64>> {
    Ok(eig_hermitian_full(m)?.0)
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues nonincreasing,
/// eigenvectors as the corresponding columns.
pub fn eig_hermitian_full(m: &CMatrix) -> Result<(Vec<f64>, CMatrix)> {
    let defect = herm_defect(m);
    if defect > HERM_TOL {
        return Err(Error::NotHermitian(defect));
    }
    // Symmetrize to kill round-off before factorizing.
    let h = (m + m.adjoint()).scale(0.5);
    let se = h.symmetric_eigen();
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| se.eigenvalues[b].partial_cmp(&se.eigenvalues[a]).unwrap());
    let vals: Vec<f64> = order.iter().map(|&i| se.eigenvalues[i]).collect();
    let mut vecs = CMatrix::zeros(n, n);
    for (new, &old) in order.iter().enumerate() {
        vecs.set_column(new, &se.eigenvectors.column(old));
    }
    Ok((vals, vecs))
}

/// Principal square root of a PSD Hermitian matrix. Eigenvalues in
/// `[-PSD_TOL, 0)` are clipped to zero; anything more negative is an error.
pub fn sqrt_psd(m: &CMatrix) -> Result<CMatrix> {
    let (vals, vecs) = eig_hermitian_full(m)?;
    let n = m.nrows();
    let mut d = CMatrix::zeros(n, n);
    for (i, &v) in vals.iter().enumerate() {
        if v < -PSD_TOL {
            return Err(Error::NotPhysical(format!(
                "negative eigenvalue {v:.3e} in matrix square root"
            )));
        }
        d[(i, i)] = cr(v.max(0.0).sqrt());
    }
    Ok(&vecs * d * vecs.adjoint())
}

fn check_dims_product(dims: &[usize], n: usize) -> Result<()> {
    let prod: usize = dims.iter().product();
    if dims.is_empty() || prod != n {
        return Err(Error::DimMismatch(format!(
            "subsystem dims {dims:?} do not factor dimension {n}"
        )));
    }
    if n > MAX_DENSE_DIM {
        return Err(Error::DimMismatch(format!(
            "dimension {n} exceeds dense cap {MAX_DENSE_DIM}"
        )));
    }
    Ok(())
}

/// Row-major strides for a list of subsystem dimensions.
fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; dims.len()];
    for k in (0..dims.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * dims[k + 1];
    }
    s
}

/// A pure state over a declared tensor factorization.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    dims: Vec<usize>,
    amp: CVector,
}

impl PureState {
    /// Validates unit norm within [`TRACE_TOL`].
    pub fn new(dims: Vec<usize>, amp: CVector) -> Result<Self> {
        check_dims_product(&dims, amp.len())?;
        let norm = amp.norm();
        if (norm - 1.0).abs() > TRACE_TOL {
            return Err(Error::NotPhysical(format!("state norm {norm} != 1")));
        }
        Ok(Self { dims, amp })
    }

    /// Normalizes the amplitudes, then constructs the state.
    pub fn normalized(dims: Vec<usize>, amp: CVector) -> Result<Self> {
        let norm = amp.norm();
        if norm < 1e-15 {
            return Err(Error::NotPhysical("zero vector".into()));
        }
        Self::new(dims, amp.unscale(norm))
    }

    /// Computational basis state |b_0 b_1 …⟩ for qubit factors.
    pub fn ket_bits(bits: &[u8]) -> Self {
        let n = bits.len();
        let mut idx = 0usize;
        for &b in bits {
            idx = idx * 2 + b as usize;
        }
        let mut amp = CVector::zeros(1 << n);
        amp[idx] = C_ONE;
        Self {
            dims: vec![2; n],
            amp,
        }
    }

    /// Single-qubit state cos(θ/2)|0⟩ + e^{iφ} sin(θ/2)|1⟩.
    pub fn qubit(theta: f64, phi: f64) -> Self {
        let amp = CVector::from_vec(vec![
            cr((theta / 2.0).cos()),
            Complex64::from_polar((theta / 2.0).sin(), phi),
        ]);
        Self { dims: vec![2], amp }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amp
    }

    pub fn dim(&self) -> usize {
        self.amp.len()
    }

    /// Tensor product of two pure states.
    pub fn tensor(&self, other: &PureState) -> PureState {
        let mut dims = self.dims.clone();
        dims.extend_from_slice(&other.dims);
        PureState {
            dims,
            amp: self.amp.kronecker(&other.amp),
        }
    }

    /// |ψ⟩⟨ψ| as a density matrix.
    pub fn to_density(&self) -> DensityMatrix {
        let mat = &self.amp * self.amp.adjoint();
        DensityMatrix {
            dims: self.dims.clone(),
            mat,
        }
    }

    pub fn inner(&self, other: &PureState) -> Complex64 {
        self.amp.dotc(&other.amp)
    }

    /// |⟨self|other⟩|².
    pub fn fidelity(&self, other: &PureState) -> f64 {
        self.inner(other).norm_sqr()
    }
}

/// Singlet |ψ⁻⟩ = (|01⟩ − |10⟩)/√2.
pub fn psi_minus() -> PureState {
    let s = cr(std::f64::consts::FRAC_1_SQRT_2);
    PureState {
        dims: vec![2, 2],
        amp: CVector::from_vec(vec![C_ZERO, s, -s, C_ZERO]),
    }
}

/// |ψ⁺⟩ = (|01⟩ + |10⟩)/√2.
pub fn psi_plus() -> PureState {
    let s = cr(std::f64::consts::FRAC_1_SQRT_2);
    PureState {
        dims: vec![2, 2],
        amp: CVector::from_vec(vec![C_ZERO, s, s, C_ZERO]),
    }
}

/// |Φ⁺⟩ = (|00⟩ + |11⟩)/√2.
pub fn phi_plus() -> PureState {
    let s = cr(std::f64::consts::FRAC_1_SQRT_2);
    PureState {
        dims: vec![2, 2],
        amp: CVector::from_vec(vec![s, C_ZERO, C_ZERO, s]),
    }
}

/// |Φ⁻⟩ = (|00⟩ − |11⟩)/√2.
pub fn phi_minus() -> PureState {
    let s = cr(std::f64::consts::FRAC_1_SQRT_2);
    PureState {
        dims: vec![2, 2],
        amp: CVector::from_vec(vec![s, C_ZERO, C_ZERO, -s]),
    }
}

/// A Hermitian, PSD, unit-trace matrix over a declared tensor factorization.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    dims: Vec<usize>,
    mat: CMatrix,
}

impl DensityMatrix {
    /// Validates Hermiticity, unit trace and positivity (within tolerances).
    pub fn new(dims: Vec<usize>, mat: CMatrix) -> Result<Self> {
        if mat.nrows() != mat.ncols() {
            return Err(Error::DimMismatch(format!(
                "density matrix must be square, got {}x{}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        check_dims_product(&dims, mat.nrows())?;
        let defect = herm_defect(&mat);
        if defect > HERM_TOL {
            return Err(Error::NotHermitian(defect));
        }
        let tr = mat.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::NotPhysical(format!("trace {tr} != 1")));
        }
        let symm = (&mat + mat.adjoint()).scale(0.5);
        let min_eig = symm
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if min_eig < -PSD_TOL {
            return Err(Error::NotPhysical(format!(
                "minimum eigenvalue {min_eig:.3e}"
            )));
        }
        Ok(Self { dims, mat })
    }

    /// Maximally mixed state I/d over the given factorization.
    pub fn maximally_mixed(dims: Vec<usize>) -> Self {
        let d: usize = dims.iter().product();
        Self {
            dims,
            mat: identity(d).scale(1.0 / d as f64),
        }
    }

    /// Convex mixture Σ pᵢ ρᵢ. Probabilities must sum to 1 within 1e-12.
    pub fn mixture(parts: &[(f64, DensityMatrix)]) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("empty mixture".into()));
        }
        let psum: f64 = parts.iter().map(|(p, _)| p).sum();
        if (psum - 1.0).abs() > 1e-12 {
            return Err(Error::NotPhysical(format!("mixture weights sum to {psum}")));
        }
        let dims = parts[0].1.dims.clone();
        let n = parts[0].1.dim();
        let mut mat = CMatrix::zeros(n, n);
        for (p, rho) in parts {
            if *p < 0.0 {
                return Err(Error::NotPhysical(format!("negative weight {p}")));
            }
            if rho.dims != dims {
                return Err(Error::DimMismatch("mixture parts disagree on dims".into()));
            }
            mat += rho.mat.scale(*p);
        }
        Ok(Self { dims, mat })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn mat(&self) -> &CMatrix {
        &self.mat
    }

    /// Reinterprets the same matrix under a different factorization.
    pub fn refactor(&self, dims: Vec<usize>) -> Result<Self> {
        check_dims_product(&dims, self.dim())?;
        Ok(Self {
            dims,
            mat: self.mat.clone(),
        })
    }

    /// Tensor product ρ_A ⊗ ρ_B.
    pub fn tensor(&self, other: &DensityMatrix) -> DensityMatrix {
        let mut dims = self.dims.clone();
        dims.extend_from_slice(&other.dims);
        DensityMatrix {
            dims,
            mat: tensor(&self.mat, &other.mat),
        }
    }

    /// Expectation value Tr(ρ O) for a Hermitian observable; returns the
    /// real part (imaginary part is round-off for Hermitian O).
    pub fn expect(&self, obs: &CMatrix) -> f64 {
        debug_assert_eq!(obs.nrows(), self.dim());
        (obs * &self.mat).trace().re
    }

    /// Reduced state on the kept subsystems (ascending index order).
    pub fn partial_trace(&self, keep: &[usize]) -> Result<DensityMatrix> {
        if keep.is_empty() {
            return Err(Error::NothingKept);
        }
        let mut keep = keep.to_vec();
        keep.sort_unstable();
        keep.dedup();
        if keep.iter().any(|&k| k >= self.dims.len()) {
            return Err(Error::DimMismatch(format!(
                "keep set {keep:?} out of range for {} subsystems",
                self.dims.len()
            )));
        }
        let keep_dims: Vec<usize> = keep.iter().map(|&k| self.dims[k]).collect();
        let out = partial_trace_raw(&self.mat, &self.dims, &keep);
        Ok(DensityMatrix {
            dims: keep_dims,
            mat: out,
        })
    }

    /// Transpose of the chosen factor of a two-subsystem state.
    pub fn partial_transpose(&self, side: usize) -> Result<CMatrix> {
        if self.dims.len() != 2 {
            return Err(Error::DimMismatch(format!(
                "partial transpose needs a bipartition, got {} subsystems",
                self.dims.len()
            )));
        }
        if side > 1 {
            return Err(Error::InvalidArgument(format!("side {side} out of range")));
        }
        Ok(partial_transpose_raw(
            &self.mat,
            (self.dims[0], self.dims[1]),
            side,
        ))
    }

    /// Reorders subsystems: new position `i` holds old subsystem `perm[i]`.
    pub fn permute_subsystems(&self, perm: &[usize]) -> Result<DensityMatrix> {
        let n = self.dims.len();
        let mut seen = vec![false; n];
        if perm.len() != n
            || perm
                .iter()
                .any(|&p| p >= n || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::InvalidArgument(format!(
                "invalid permutation {perm:?}"
            )));
        }
        let new_dims: Vec<usize> = perm.iter().map(|&p| self.dims[p]).collect();
        let old_strides = strides(&self.dims);
        let new_strides = strides(&new_dims);
        let dim = self.dim();
        // old index -> new index
        let map: Vec<usize> = (0..dim)
            .map(|old| {
                let mut new = 0usize;
                for (npos, &opos) in perm.iter().enumerate() {
                    let coord = (old / old_strides[opos]) % self.dims[opos];
                    new += coord * new_strides[npos];
                }
                new
            })
            .collect();
        let mut out = CMatrix::zeros(dim, dim);
        for i in 0..dim {
            for j in 0..dim {
                out[(map[i], map[j])] = self.mat[(i, j)];
            }
        }
        Ok(DensityMatrix {
            dims: new_dims,
            mat: out,
        })
    }
}

/// Partial trace on a raw matrix: keeps the listed subsystems (ascending,
/// deduplicated) and sums out the rest.
pub fn partial_trace_raw(mat: &CMatrix, dims: &[usize], keep: &[usize]) -> CMatrix {
    let trace_out: Vec<usize> = (0..dims.len()).filter(|i| !keep.contains(i)).collect();
    let st = strides(dims);
    let keep_dims: Vec<usize> = keep.iter().map(|&k| dims[k]).collect();
    let out_dim: usize = keep_dims.iter().product();
    let env_dims: Vec<usize> = trace_out.iter().map(|&k| dims[k]).collect();
    let env_size: usize = env_dims.iter().product::<usize>().max(1);
    let keep_strides = strides(&keep_dims);

    let mut out = CMatrix::zeros(out_dim, out_dim);
    for oi in 0..out_dim {
        for oj in 0..out_dim {
            // Base indices from the kept subsystems.
            let mut base_i = 0usize;
            let mut base_j = 0usize;
            for (pos, &k) in keep.iter().enumerate() {
                let di = (oi / keep_strides[pos]) % keep_dims[pos];
                let dj = (oj / keep_strides[pos]) % keep_dims[pos];
                base_i += di * st[k];
                base_j += dj * st[k];
            }
            let mut acc = C_ZERO;
            for e in 0..env_size {
                let mut off = 0usize;
                let mut rem = e;
                for (pos, &k) in trace_out.iter().enumerate() {
                    let d = env_dims[pos];
                    let coord = rem % d;
                    rem /= d;
                    off += coord * st[k];
                }
                acc += mat[(base_i + off, base_j + off)];
            }
            out[(oi, oj)] = acc;
        }
    }
    out
}

/// Partial transpose on a raw matrix over the bipartition `(da, db)`.
pub fn partial_transpose_raw(mat: &CMatrix, dims: (usize, usize), side: usize) -> CMatrix {
    let (da, db) = dims;
    let n = da * db;
    debug_assert_eq!(mat.nrows(), n);
    let mut out = CMatrix::zeros(n, n);
    for ia in 0..da {
        for ja in 0..da {
            for ib in 0..db {
                for jb in 0..db {
                    let (src_a, src_b) = if side == 0 {
                        ((ja, ib), (ia, jb))
                    } else {
                        ((ia, jb), (ja, ib))
                    };
                    out[(ia * db + ib, ja * db + jb)] =
                        mat[(src_a.0 * db + src_a.1, src_b.0 * db + src_b.1)];
                }
            }
        }
    }
    out
}

/// Clips negative eigenvalues to zero and renormalizes to unit trace.
/// Idempotent on already-physical inputs.
pub fn project_to_physical(m: &CMatrix, dims: Vec<usize>) -> Result<DensityMatrix> {
    let (vals, vecs) = eig_hermitian_full(m)?;
    let n = m.nrows();
    let clipped: Vec<f64> = vals.iter().map(|&v| v.max(0.0)).collect();
    let tr: f64 = clipped.iter().sum();
    if tr <= 0.0 {
        return Err(Error::UnrecoverableEstimate);
    }
    let mut d = CMatrix::zeros(n, n);
    for (i, &v) in clipped.iter().enumerate() {
        d[(i, i)] = cr(v / tr);
    }
    let mat = &vecs * d * vecs.adjoint();
    // Re-symmetrize round-off so the validated constructor accepts it.
    let mat = (&mat + mat.adjoint()).scale(0.5);
    DensityMatrix::new(dims, mat)
}

/// A positive-operator-valued measure: PSD elements summing to identity.
#[derive(Debug, Clone)]
pub struct Povm {
    elements: Vec<CMatrix>,
}

impl Povm {
    pub fn new(elements: Vec<CMatrix>) -> Result<Self> {
        if elements.is_empty() {
            return Err(Error::InvalidArgument("empty POVM".into()));
        }
        let n = elements[0].nrows();
        let mut sum = CMatrix::zeros(n, n);
        for e in &elements {
            if e.nrows() != n || e.ncols() != n {
                return Err(Error::DimMismatch("POVM elements disagree on size".into()));
            }
            let min_eig = eig_hermitian(e)?.last().copied().unwrap_or(0.0);
            if min_eig < -PSD_TOL {
                return Err(Error::NotPhysical(format!(
                    "POVM element has eigenvalue {min_eig:.3e}"
                )));
            }
            sum += e;
        }
        if frob_dist(&sum, &identity(n)) > PSD_TOL * n as f64 {
            return Err(Error::NotPhysical(
                "POVM elements do not sum to identity".into(),
            ));
        }
        Ok(Self { elements })
    }

    pub fn elements(&self) -> &[CMatrix] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.elements[0].nrows()
    }

    /// Outcome probabilities on a state (clipped to [0, 1] against round-off).
    pub fn probabilities(&self, rho: &DensityMatrix) -> Vec<f64> {
        self.elements
            .iter()
            .map(|e| rho.expect(e).clamp(0.0, 1.0))
            .collect()
    }

    /// Two-outcome projective measurement of a ±1 observable, elements
    /// ordered (+1 projector, −1 projector).
    pub fn from_pm_observable(obs: &CMatrix) -> Result<Self> {
        let n = obs.nrows();
        let (vals, vecs) = eig_hermitian_full(obs)?;
        if vals.iter().any(|v| (v.abs() - 1.0).abs() > 1e-9) {
            return Err(Error::InvalidArgument(
                "observable eigenvalues are not ±1".into(),
            ));
        }
        let mut plus = CMatrix::zeros(n, n);
        let mut minus = CMatrix::zeros(n, n);
        for (i, &v) in vals.iter().enumerate() {
            let col = vecs.column(i);
            let proj = col * col.adjoint();
            if v > 0.0 {
                plus += proj;
            } else {
                minus += proj;
            }
        }
        Povm::new(vec![plus, minus])
    }
}
