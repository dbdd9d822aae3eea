//! Honest and adversarial state-generation processes.
//!
//! A source emits a long sequence of runs; each run owns one A slot and one
//! B slot. Classical correlations between runs are expressed through block
//! ensembles: a block of `block_len` runs is drawn as a classical mixture of
//! components, each component a product of small factor states wired onto
//! the block's slots. Adversarial sources are exactly such mixtures of
//! products, so their cross-A/B entanglement is zero by construction while
//! their within-side correlations can still fool naive verifiers.
//!
//! Every source carries ground-truth metadata: the per-run (A, B) marginal
//! and its true cross-A/B entanglement.

use std::f64::consts::TAU;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{self, Measure};
use crate::qmat::{cr, CVector, DensityMatrix, PureState, C_ONE};

/// Which side of the bipartite experiment a slot belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

/// A slot inside a block: run position plus side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Slot {
    pub pos: usize,
    pub side: Side,
}

impl Slot {
    pub fn a(pos: usize) -> Self {
        Slot { pos, side: Side::A }
    }
    pub fn b(pos: usize) -> Self {
        Slot { pos, side: Side::B }
    }
}

/// A factor state together with the block slots its subsystems occupy.
#[derive(Debug, Clone)]
pub struct Factor {
    pub state: DensityMatrix,
    pub slots: Vec<Slot>,
}

impl Factor {
    pub fn new(state: DensityMatrix, slots: Vec<Slot>) -> Result<Self> {
        if state.dims().len() != slots.len() {
            return Err(Error::DimMismatch(format!(
                "factor has {} subsystems but {} slots",
                state.dims().len(),
                slots.len()
            )));
        }
        Ok(Self { state, slots })
    }
}

/// One classical alternative for a block: a product of factors.
#[derive(Debug, Clone)]
pub struct BlockComponent {
    pub probability: f64,
    pub factors: Vec<Factor>,
    /// Classical per-run label exposed by heralded sources.
    pub herald: Option<bool>,
}

/// A block-structured ensemble: `block_len` runs drawn jointly as a
/// classical mixture of factorized components.
#[derive(Debug, Clone)]
pub struct BlockEnsemble {
    pub block_len: usize,
    pub components: Vec<BlockComponent>,
}

impl BlockEnsemble {
    /// Validates weights and slot coverage (every slot of every run covered
    /// exactly once per component).
    pub fn new(block_len: usize, components: Vec<BlockComponent>) -> Result<Self> {
        if block_len == 0 || components.is_empty() {
            return Err(Error::InvalidArgument("empty block ensemble".into()));
        }
        let total: f64 = components.iter().map(|c| c.probability).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::NotPhysical(format!(
                "component probabilities sum to {total}"
            )));
        }
        for comp in &components {
            if comp.probability < 0.0 {
                return Err(Error::NotPhysical("negative component probability".into()));
            }
            let mut cover = vec![0u8; 2 * block_len];
            for factor in &comp.factors {
                for slot in &factor.slots {
                    if slot.pos >= block_len {
                        return Err(Error::InvalidArgument(format!(
                            "slot position {} outside block of length {block_len}",
                            slot.pos
                        )));
                    }
                    let idx = slot.pos * 2 + usize::from(slot.side == Side::B);
                    cover[idx] += 1;
                }
            }
            if cover.iter().any(|&c| c != 1) {
                return Err(Error::InvalidArgument(
                    "every A/B slot must be covered exactly once per component".into(),
                ));
            }
        }
        Ok(Self {
            block_len,
            components,
        })
    }

    /// Joint state of a slot subset for one component, in requested order.
    pub fn component_joint(&self, component: usize, slots: &[Slot]) -> Result<DensityMatrix> {
        component_joint(&self.components[component].factors, slots)
    }

    /// Per-run (A, B) marginal averaged over components and run positions.
    pub fn run_marginal(&self) -> Result<DensityMatrix> {
        let mut parts = Vec::new();
        for comp in &self.components {
            for pos in 0..self.block_len {
                let joint = component_joint(&comp.factors, &[Slot::a(pos), Slot::b(pos)])?;
                parts.push((comp.probability / self.block_len as f64, joint));
            }
        }
        DensityMatrix::mixture(&parts)
    }
}

/// Assembles the joint state on the requested slots from a factorized
/// component, tracing out everything else. Result subsystems follow the
/// requested slot order.
fn component_joint(factors: &[Factor], slots: &[Slot]) -> Result<DensityMatrix> {
    for (i, s) in slots.iter().enumerate() {
        if slots[..i].contains(s) {
            return Err(Error::InvalidArgument(format!(
                "slot {s:?} requested twice"
            )));
        }
    }
    // Reduce each factor onto its requested subsystems, remembering which
    // requested slot each kept subsystem realizes.
    let mut pieces: Vec<(DensityMatrix, Vec<usize>)> = Vec::new();
    for factor in factors {
        let mut keep: Vec<usize> = Vec::new();
        for (sub, slot) in factor.slots.iter().enumerate() {
            if slots.contains(slot) {
                keep.push(sub);
            }
        }
        if keep.is_empty() {
            continue;
        }
        let reduced = if keep.len() == factor.slots.len() {
            factor.state.clone()
        } else {
            factor.state.partial_trace(&keep)?
        };
        // partial_trace keeps ascending subsystem order.
        let kept_slots: Vec<usize> = keep
            .iter()
            .map(|&sub| slots.iter().position(|s| *s == factor.slots[sub]).unwrap())
            .collect();
        pieces.push((reduced, kept_slots));
    }
    let covered: usize = pieces.iter().map(|(_, s)| s.len()).sum();
    if covered != slots.len() {
        return Err(Error::InvalidArgument(
            "requested slots not fully covered by factors".into(),
        ));
    }
    let mut joint = pieces[0].0.clone();
    let mut order: Vec<usize> = pieces[0].1.clone();
    for (piece, slot_ids) in &pieces[1..] {
        joint = joint.tensor(piece);
        order.extend_from_slice(slot_ids);
    }
    // order[k] = requested index held at current position k; permute so that
    // new position i holds requested slot i.
    let mut perm = vec![0usize; order.len()];
    for (cur, &req) in order.iter().enumerate() {
        perm[req] = cur;
    }
    joint.permute_subsystems(&perm)
}

/// Distribution of the per-run phase of a phase-drift source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "law")]
pub enum PhaseLaw {
    /// Independent uniform phase on [0, 2π) each run.
    Uniform,
    /// Random walk φ_{t+1} = φ_t + σ·N(0,1), φ_0 uniform.
    RandomWalk { sigma: f64 },
}

/// Emits |Ψ(φ)⟩ = (|01⟩ + e^{iφ}|10⟩)/√2 with φ drawn per run.
#[derive(Debug, Clone)]
pub struct PhaseDriftSource {
    pub law: PhaseLaw,
    /// When set, the per-run φ is recorded on the run descriptor, modelling
    /// a verifier that reuses the generation path.
    pub leak_phase_to_verifier: bool,
}

/// The dual-rail state family (photon numbers 0..2 per mode).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DualRailVariant {
    /// (|01⟩ + e^{iφ}|10⟩)/√2: one photon shared between the sides.
    EntangledEq9,
    /// (|0⟩ + εe^{iφ}|1⟩) ⊗ (|0⟩ + ε|1⟩), normalized; a product state.
    ProductEq10,
}

const QUTRIT: usize = 3;

fn qutrit_ket(amp0: f64, amp1: num_complex::Complex64, amp2: f64) -> CVector {
    CVector::from_vec(vec![cr(amp0), amp1, cr(amp2)])
}

/// Dual-rail pure state over 3⊗3 photon-number space.
pub fn dual_rail_state(variant: DualRailVariant, epsilon: f64, phase: f64) -> Result<PureState> {
    if !(0.0..=0.3).contains(&epsilon) || epsilon == 0.0 {
        return Err(Error::InvalidArgument(format!(
            "epsilon {epsilon} outside (0, 0.3]"
        )));
    }
    let eiphi = num_complex::Complex64::from_polar(1.0, phase);
    match variant {
        DualRailVariant::EntangledEq9 => {
            let mut amp = CVector::zeros(QUTRIT * QUTRIT);
            amp[1] = cr(std::f64::consts::FRAC_1_SQRT_2); // |0⟩_A|1⟩_B
            amp[QUTRIT] = eiphi * cr(std::f64::consts::FRAC_1_SQRT_2); // |1⟩_A|0⟩_B
            PureState::new(vec![QUTRIT, QUTRIT], amp)
        }
        DualRailVariant::ProductEq10 => {
            let a = PureState::normalized(vec![QUTRIT], qutrit_ket(1.0, eiphi * cr(epsilon), 0.0))?;
            let b = PureState::normalized(vec![QUTRIT], qutrit_ket(1.0, cr(epsilon), 0.0))?;
            Ok(a.tensor(&b))
        }
    }
}

/// The product source with its double-emission component (the ε²|11⟩ term)
/// dropped and renormalized: the emitted state under the usual weak-pump
/// approximation. Unlike the exact product this carries order-ε²
/// entanglement.
pub fn dual_rail_neglect_double_emission(epsilon: f64, phase: f64) -> Result<PureState> {
    if !(0.0..=0.3).contains(&epsilon) || epsilon == 0.0 {
        return Err(Error::InvalidArgument(format!(
            "epsilon {epsilon} outside (0, 0.3]"
        )));
    }
    let eiphi = num_complex::Complex64::from_polar(1.0, phase);
    let mut amp = CVector::zeros(QUTRIT * QUTRIT);
    amp[0] = C_ONE; // |00⟩
    amp[1] = cr(epsilon); // |0⟩_A|1⟩_B
    amp[QUTRIT] = eiphi * cr(epsilon); // |1⟩_A|0⟩_B
    PureState::normalized(vec![QUTRIT, QUTRIT], amp)
}

/// Conditions a dual-rail state on the one-photon-total subspace
/// span{|01⟩, |10⟩}; returns the conditional state (as a two-level-per-side
/// qubit pair) and the probability of the condition. This is a *nonlocal*
/// filter.
pub fn condition_on_one_photon_total(state: &DensityMatrix) -> Result<(DensityMatrix, f64)> {
    if state.dims() != [QUTRIT, QUTRIT] {
        return Err(Error::DimMismatch(format!(
            "expected a 3⊗3 dual-rail state, got {:?}",
            state.dims()
        )));
    }
    // |01⟩ and |10⟩ sit at indices 1 and 3 of the 9-dim space; map them to
    // indices 1 and 2 of the two-qubit space.
    let idx = [(1usize, 1usize), (QUTRIT, 2)];
    let mut mat = crate::qmat::CMatrix::zeros(4, 4);
    for &(si, di) in &idx {
        for &(sj, dj) in &idx {
            mat[(di, dj)] = state.mat()[(si, sj)];
        }
    }
    let p = mat.trace().re;
    if p < 1e-12 {
        return Err(Error::FilterAnnihilates(p));
    }
    Ok((DensityMatrix::new(vec![2, 2], mat.scale(1.0 / p))?, p))
}

/// Generative rule of a source.
#[derive(Debug, Clone)]
pub enum SourceKind {
    /// Classically correlated blocks (IID sources are block_len = 1).
    Block(BlockEnsemble),
    /// Per-run phase-mixed Bell state.
    PhaseDrift(PhaseDriftSource),
    /// One component drawn per *batch*, then copies of it: ∫dρ P(ρ) ρ^⊗N.
    DeFinetti {
        components: Vec<(f64, DensityMatrix)>,
    },
}

/// Ground-truth metadata of a source.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// Average (A, B) state of a single run.
    pub run_marginal: DensityMatrix,
    /// Cross-A/B entanglement of the run marginal.
    pub entanglement: f64,
    /// Which measure `entanglement` is (concurrence at 2×2, else negativity).
    pub measure: Measure,
}

impl GroundTruth {
    fn from_marginal(run_marginal: DensityMatrix) -> Result<Self> {
        let (measure, entanglement) = if run_marginal.dims() == [2, 2] {
            (
                Measure::Concurrence,
                measures::concurrence(&run_marginal)?.concurrence,
            )
        } else {
            (Measure::Negativity, measures::negativity(&run_marginal)?)
        };
        Ok(Self {
            run_marginal,
            entanglement,
            measure,
        })
    }
}

struct SourceInner {
    label: String,
    kind: SourceKind,
    ground_truth: GroundTruth,
    is_iid: bool,
}

/// A stochastic emitter of runs of bipartite states.
#[derive(Clone)]
pub struct SourceProcess {
    inner: Arc<SourceInner>,
}

impl std::fmt::Debug for SourceProcess {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SourceProcess")
            .field("label", &self.inner.label)
            .field("is_iid", &self.inner.is_iid)
            .finish()
    }
}

impl SourceProcess {
    fn from_parts(label: String, kind: SourceKind, is_iid: bool) -> Result<Self> {
        let marginal = match &kind {
            SourceKind::Block(ens) => ens.run_marginal()?,
            SourceKind::PhaseDrift(_) => DensityMatrix::mixture(&[
                (0.5, PureState::ket_bits(&[0, 1]).to_density()),
                (0.5, PureState::ket_bits(&[1, 0]).to_density()),
            ])?,
            SourceKind::DeFinetti { components } => DensityMatrix::mixture(components)?,
        };
        let ground_truth = GroundTruth::from_marginal(marginal)?;
        Ok(Self {
            inner: Arc::new(SourceInner {
                label,
                kind,
                ground_truth,
                is_iid,
            }),
        })
    }

    pub fn label(&self) -> &str {
        &self.inner.label
    }

    pub fn kind(&self) -> &SourceKind {
        &self.inner.kind
    }

    pub fn ground_truth(&self) -> &GroundTruth {
        &self.inner.ground_truth
    }

    pub fn is_iid(&self) -> bool {
        self.inner.is_iid
    }

    /// True when the source's ground-truth cross-A/B entanglement is zero
    /// (below 1e-12).
    pub fn is_unentangled(&self) -> bool {
        self.inner.ground_truth.entanglement < 1e-12
    }

    pub fn block_len(&self) -> usize {
        match &self.inner.kind {
            SourceKind::Block(b) => b.block_len,
            _ => 1,
        }
    }

    /// Run-state dimensions per side, e.g. (2, 2) for qubit pairs.
    pub fn side_dims(&self) -> (usize, usize) {
        let d = self.inner.ground_truth.run_marginal.dims();
        (d[0], d[1])
    }
}

/// IID source with a fixed bipartite run state.
pub fn make_a_priori(label: impl Into<String>, rho: DensityMatrix) -> Result<SourceProcess> {
    if rho.dims().len() != 2 {
        return Err(Error::DimMismatch("run state must be bipartite".into()));
    }
    let ens = BlockEnsemble::new(
        1,
        vec![BlockComponent {
            probability: 1.0,
            factors: vec![Factor::new(rho, vec![Slot::a(0), Slot::b(0)])?],
            herald: None,
        }],
    )?;
    SourceProcess::from_parts(label.into(), SourceKind::Block(ens), true)
}

/// Werner source W_α = α|ψ⁻⟩⟨ψ⁻| + (1−α)I/4.
pub fn make_werner(alpha: f64) -> Result<SourceProcess> {
    make_a_priori(format!("werner({alpha:.3})"), measures::werner(alpha)?)
}

/// Heralded source: with probability `p_yes` the run is `rho_ent` and the
/// classical herald reads yes; otherwise `rho_unent` with herald no.
pub fn make_heralded(
    p_yes: f64,
    rho_ent: DensityMatrix,
    rho_unent: DensityMatrix,
) -> Result<SourceProcess> {
    if !(0.0..=1.0).contains(&p_yes) {
        return Err(Error::InvalidArgument(format!(
            "p_yes {p_yes} outside [0,1]"
        )));
    }
    if rho_ent.dims() != rho_unent.dims() || rho_ent.dims().len() != 2 {
        return Err(Error::DimMismatch(
            "heralded components must share a bipartite factorization".into(),
        ));
    }
    let comp = |p: f64, rho: DensityMatrix, herald: bool| -> Result<BlockComponent> {
        Ok(BlockComponent {
            probability: p,
            factors: vec![Factor::new(rho, vec![Slot::a(0), Slot::b(0)])?],
            herald: Some(herald),
        })
    };
    let ens = BlockEnsemble::new(
        1,
        vec![
            comp(p_yes, rho_ent, true)?,
            comp(1.0 - p_yes, rho_unent, false)?,
        ],
    )?;
    SourceProcess::from_parts(
        format!("heralded({p_yes:.3})"),
        SourceKind::Block(ens),
        true,
    )
}

/// The flag level used by the default a-posteriori model.
pub const FLAG_LEVEL: usize = 2;

/// Embeds a two-qubit state into 3⊗3 on the {0, 1} levels of each side.
pub fn embed_qubits_in_qutrits(rho: &DensityMatrix) -> Result<DensityMatrix> {
    if rho.dims() != [2, 2] {
        return Err(Error::DimMismatch("expected a two-qubit state".into()));
    }
    let mut mat = crate::qmat::CMatrix::zeros(QUTRIT * QUTRIT, QUTRIT * QUTRIT);
    for ia in 0..2 {
        for ib in 0..2 {
            for ja in 0..2 {
                for jb in 0..2 {
                    mat[(ia * QUTRIT + ib, ja * QUTRIT + jb)] =
                        rho.mat()[(ia * 2 + ib, ja * 2 + jb)];
                }
            }
        }
    }
    DensityMatrix::new(vec![QUTRIT, QUTRIT], mat)
}

/// The no-click flag state |2⟩|2⟩⟨2|⟨2|, orthogonal to the qubit subspace.
pub fn flag_state() -> DensityMatrix {
    let mut amp = CVector::zeros(QUTRIT * QUTRIT);
    amp[FLAG_LEVEL * QUTRIT + FLAG_LEVEL] = C_ONE;
    PureState::new(vec![QUTRIT, QUTRIT], amp)
        .unwrap()
        .to_density()
}

/// Local detection filter: projects each side onto its {0, 1} levels, so a
/// click means "not the flag level".
pub fn click_filter() -> measures::FilterPair {
    let mut proj = crate::qmat::CMatrix::zeros(QUTRIT, QUTRIT);
    proj[(0, 0)] = C_ONE;
    proj[(1, 1)] = C_ONE;
    measures::FilterPair::new(proj.clone(), proj).unwrap()
}

/// A-posteriori source ρ = (1−P)ρ₀ + Pρ_ent, with ρ₀ undetectable.
pub fn make_a_posteriori(
    p: f64,
    rho0: DensityMatrix,
    rho_ent: DensityMatrix,
) -> Result<SourceProcess> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("P {p} outside [0,1]")));
    }
    if rho0.dims() != rho_ent.dims() || rho0.dims().len() != 2 {
        return Err(Error::DimMismatch(
            "a-posteriori components must share a bipartite factorization".into(),
        ));
    }
    let run = DensityMatrix::mixture(&[(1.0 - p, rho0), (p, rho_ent)])?;
    let ens = BlockEnsemble::new(
        1,
        vec![BlockComponent {
            probability: 1.0,
            factors: vec![Factor::new(run, vec![Slot::a(0), Slot::b(0)])?],
            herald: None,
        }],
    )?;
    SourceProcess::from_parts(
        format!("a_posteriori({p:.3})"),
        SourceKind::Block(ens),
        true,
    )
}

/// A-posteriori source with the default flag model: ρ₀ = |22⟩⟨22| and the
/// singlet embedded on the qubit levels.
pub fn make_a_posteriori_default(p: f64) -> Result<SourceProcess> {
    let ent = embed_qubits_in_qutrits(&crate::qmat::psi_minus().to_density())?;
    make_a_posteriori(p, flag_state(), ent)
}

/// Phase-mixed source emitting |Ψ(φ)⟩ with φ drawn from `law`.
pub fn make_phase_mixed(law: PhaseLaw, leak_phase_to_verifier: bool) -> Result<SourceProcess> {
    let label = match law {
        PhaseLaw::Uniform => "phase_mixed(uniform)".to_string(),
        PhaseLaw::RandomWalk { sigma } => format!("phase_mixed(walk,{sigma:.3})"),
    };
    SourceProcess::from_parts(
        label,
        SourceKind::PhaseDrift(PhaseDriftSource {
            law,
            leak_phase_to_verifier,
        }),
        false,
    )
}

/// Dual-rail source over photon-number space.
pub fn make_dual_rail(variant: DualRailVariant, epsilon: f64, phase: f64) -> Result<SourceProcess> {
    let state = dual_rail_state(variant, epsilon, phase)?.to_density();
    let label = match variant {
        DualRailVariant::EntangledEq9 => format!("dual_rail_entangled(eps={epsilon:.3})"),
        DualRailVariant::ProductEq10 => format!("dual_rail_product(eps={epsilon:.3})"),
    };
    let ens = BlockEnsemble::new(
        1,
        vec![BlockComponent {
            probability: 1.0,
            factors: vec![Factor::new(state, vec![Slot::a(0), Slot::b(0)])?],
            herald: None,
        }],
    )?;
    SourceProcess::from_parts(label, SourceKind::Block(ens), true)
}

/// De Finetti source: a component is drawn once per batch, after which all
/// runs are copies of it.
pub fn make_definetti(components: Vec<(f64, DensityMatrix)>) -> Result<SourceProcess> {
    if components.is_empty() {
        return Err(Error::InvalidArgument("empty De Finetti mixture".into()));
    }
    let total: f64 = components.iter().map(|(p, _)| p).sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::NotPhysical(format!("weights sum to {total}")));
    }
    for (_, rho) in &components {
        if rho.dims().len() != 2 {
            return Err(Error::DimMismatch("components must be bipartite".into()));
        }
    }
    SourceProcess::from_parts(
        format!("definetti({} components)", components.len()),
        SourceKind::DeFinetti { components },
        false,
    )
}

/// The adversarial sources of the direct-measurement discussion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "cheat")]
pub enum CheatKind {
    /// Pairs of Alice particles: 1/4 singlets, 3/4 random |00⟩ or |11⟩;
    /// Bob's particles in a fixed product state.
    SingletFraction,
    /// Like `SingletFraction` but Bob mirrors Alice (singlet ⟺ singlet).
    CrossSideCorrelated,
    /// Blocks of `group_size` runs whose fixed-position chain statistics
    /// mimic an IID singlet source.
    AntiGrouping { group_size: usize },
}

/// The group size the anti-grouping cheat is built for (2+4+6+8 copies).
pub const MOMENT_GROUP_SIZE: usize = 20;

pub fn make_cheat(kind: CheatKind) -> Result<SourceProcess> {
    let ket = |b: u8| PureState::ket_bits(&[b]).to_density();
    match kind {
        CheatKind::SingletFraction | CheatKind::CrossSideCorrelated => {
            let mirrored = kind == CheatKind::CrossSideCorrelated;
            let singlet = crate::qmat::psi_minus().to_density();
            let bob_pair = |comp_factors: &mut Vec<Factor>, bits: Option<u8>| -> Result<()> {
                match (mirrored, bits) {
                    (true, None) => comp_factors
                        .push(Factor::new(singlet.clone(), vec![Slot::b(0), Slot::b(1)])?),
                    (true, Some(b)) => {
                        comp_factors.push(Factor::new(ket(b), vec![Slot::b(0)])?);
                        comp_factors.push(Factor::new(ket(b), vec![Slot::b(1)])?);
                    }
                    // Fixed product state on Bob's side regardless of Alice.
                    (false, _) => {
                        comp_factors.push(Factor::new(ket(0), vec![Slot::b(0)])?);
                        comp_factors.push(Factor::new(ket(0), vec![Slot::b(1)])?);
                    }
                }
                Ok(())
            };
            let mut components = Vec::new();
            // Singlet component on Alice's pair.
            let mut factors = vec![Factor::new(singlet.clone(), vec![Slot::a(0), Slot::a(1)])?];
            bob_pair(&mut factors, None)?;
            components.push(BlockComponent {
                probability: 0.25,
                factors,
                herald: None,
            });
            // |00⟩ and |11⟩ components on Alice's pair.
            for b in [0u8, 1u8] {
                let mut factors = vec![
                    Factor::new(ket(b), vec![Slot::a(0)])?,
                    Factor::new(ket(b), vec![Slot::a(1)])?,
                ];
                bob_pair(&mut factors, Some(b))?;
                components.push(BlockComponent {
                    probability: 0.375,
                    factors,
                    herald: None,
                });
            }
            let label = if mirrored {
                "cheat(cross_side_correlated)"
            } else {
                "cheat(singlet_fraction)"
            };
            SourceProcess::from_parts(
                label.to_string(),
                SourceKind::Block(BlockEnsemble::new(2, components)?),
                false,
            )
        }
        CheatKind::AntiGrouping { group_size } => {
            if group_size != MOMENT_GROUP_SIZE {
                return Err(Error::InvalidArgument(format!(
                    "unsupported anti-grouping size {group_size} (only {MOMENT_GROUP_SIZE})"
                )));
            }
            // Alternating |11⟩ / |00⟩ pattern: every fixed-position chain
            // Tr[ρ_i ρ̃_{i+1} …] aligned to the block evaluates to 1,
            // mimicking an IID singlet, while every run is a product state.
            let mut factors = Vec::new();
            for pos in 0..group_size {
                let bit = u8::from(pos % 2 == 0);
                factors.push(Factor::new(ket(bit), vec![Slot::a(pos)])?);
                factors.push(Factor::new(ket(bit), vec![Slot::b(pos)])?);
            }
            let ens = BlockEnsemble::new(
                group_size,
                vec![BlockComponent {
                    probability: 1.0,
                    factors,
                    herald: None,
                }],
            )?;
            SourceProcess::from_parts(
                format!("cheat(anti_grouping,{group_size})"),
                SourceKind::Block(ens),
                false,
            )
        }
    }
}

/// What one block realized during sampling.
#[derive(Debug, Clone)]
enum RealizedBlock {
    /// Index of the drawn component of a block ensemble.
    Component(usize),
    /// Resolved per-run phase of a phase-drift source.
    Phase(f64),
    /// Index of the batch-level De Finetti component.
    DeFinettiComponent(usize),
}

/// A key into a batch: global run index plus side.
pub type RunSlot = (usize, Side);

/// A sampled sequence of runs with classical randomness resolved.
#[derive(Debug, Clone)]
pub struct RunBatch {
    source: SourceProcess,
    blocks: Vec<RealizedBlock>,
    n_runs: usize,
    block_len: usize,
    seed: u64,
}

impl RunBatch {
    pub fn len(&self) -> usize {
        self.n_runs
    }

    pub fn is_empty(&self) -> bool {
        self.n_runs == 0
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn source(&self) -> &SourceProcess {
        &self.source
    }

    pub fn block_len(&self) -> usize {
        self.block_len
    }

    /// Block index and in-block position of a run.
    pub fn locate(&self, run: usize) -> (usize, usize) {
        (run / self.block_len, run % self.block_len)
    }

    /// Herald label of a run, if the source exposes one.
    pub fn herald(&self, run: usize) -> Option<bool> {
        let (block, _) = self.locate(run);
        match (&self.source.inner.kind, &self.blocks[block]) {
            (SourceKind::Block(ens), RealizedBlock::Component(c)) => ens.components[*c].herald,
            _ => None,
        }
    }

    /// The realized phase of a run, available only for phase-drift sources that leak
    /// it to the verifier.
    pub fn leaked_phase(&self, run: usize) -> Option<f64> {
        let (block, _) = self.locate(run);
        match (&self.source.inner.kind, &self.blocks[block]) {
            (SourceKind::PhaseDrift(pd), RealizedBlock::Phase(phi)) => {
                pd.leak_phase_to_verifier.then_some(*phi)
            }
            _ => None,
        }
    }

    /// Realized factors of the block containing `run`.
    fn realized_factors(&self, block: usize) -> Vec<Factor> {
        match (&self.source.inner.kind, &self.blocks[block]) {
            (SourceKind::Block(ens), RealizedBlock::Component(c)) => {
                ens.components[*c].factors.clone()
            }
            (SourceKind::PhaseDrift(_), RealizedBlock::Phase(phi)) => {
                let state = phase_bell_state(*phi).to_density();
                vec![Factor {
                    state,
                    slots: vec![Slot::a(0), Slot::b(0)],
                }]
            }
            (SourceKind::DeFinetti { components }, RealizedBlock::DeFinettiComponent(c)) => {
                vec![Factor {
                    state: components[*c].1.clone(),
                    slots: vec![Slot::a(0), Slot::b(0)],
                }]
            }
            _ => unreachable!("realized block kind matches source kind"),
        }
    }

    /// Realized (A, B) state of one run.
    pub fn run_state(&self, run: usize) -> Result<DensityMatrix> {
        self.joint_state(&[(run, Side::A), (run, Side::B)])
    }

    /// Realized joint state over the requested (run, side) slots, in
    /// requested order. Slots in the same block keep their within-block
    /// correlations; distinct blocks are independent.
    pub fn joint_state(&self, slots: &[RunSlot]) -> Result<DensityMatrix> {
        for (i, s) in slots.iter().enumerate() {
            if slots[..i].contains(s) {
                return Err(Error::InvalidArgument(format!(
                    "slot {s:?} requested twice"
                )));
            }
            if s.0 >= self.n_runs {
                return Err(Error::InvalidArgument(format!("run {} out of range", s.0)));
            }
        }
        // Group requested slots by block, preserving their requested index.
        let mut by_block: Vec<(usize, Vec<(usize, Slot)>)> = Vec::new();
        for (req, &(run, side)) in slots.iter().enumerate() {
            let (block, pos) = self.locate(run);
            let entry = match by_block.iter_mut().find(|(b, _)| *b == block) {
                Some(e) => e,
                None => {
                    by_block.push((block, Vec::new()));
                    by_block.last_mut().unwrap()
                }
            };
            entry.1.push((req, Slot { pos, side }));
        }
        let mut joint: Option<DensityMatrix> = None;
        let mut order: Vec<usize> = Vec::new();
        for (block, wanted) in &by_block {
            let block_slots: Vec<Slot> = wanted.iter().map(|(_, s)| *s).collect();
            let factors = self.realized_factors(*block);
            let piece = component_joint(&factors, &block_slots)?;
            joint = Some(match joint {
                None => piece,
                Some(j) => j.tensor(&piece),
            });
            order.extend(wanted.iter().map(|(req, _)| *req));
        }
        let joint = joint.ok_or_else(|| Error::InvalidArgument("no slots requested".into()))?;
        let mut perm = vec![0usize; order.len()];
        for (cur, &req) in order.iter().enumerate() {
            perm[req] = cur;
        }
        joint.permute_subsystems(&perm)
    }
}

/// |Ψ(φ)⟩ = (|01⟩ + e^{iφ}|10⟩)/√2.
pub fn phase_bell_state(phi: f64) -> PureState {
    let amp = CVector::from_vec(vec![
        crate::qmat::C_ZERO,
        cr(std::f64::consts::FRAC_1_SQRT_2),
        num_complex::Complex64::from_polar(std::f64::consts::FRAC_1_SQRT_2, phi),
        crate::qmat::C_ZERO,
    ]);
    PureState::new(vec![2, 2], amp).unwrap()
}

/// Samples `n` runs. Deterministic given the seed; block boundaries are
/// recorded so grouped measurements can honor within-block correlations.
pub fn sample_runs(src: &SourceProcess, n: usize, seed: u64) -> Result<RunBatch> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one run".into()));
    }
    let mut rng: ChaCha8Rng = rand::SeedableRng::seed_from_u64(seed);
    let block_len = src.block_len();
    let n_blocks = n.div_ceil(block_len);
    let blocks: Vec<RealizedBlock> = match &src.inner.kind {
        SourceKind::Block(ens) => {
            let weights: Vec<f64> = ens.components.iter().map(|c| c.probability).collect();
            (0..n_blocks)
                .map(|_| RealizedBlock::Component(weighted_draw(&weights, &mut rng)))
                .collect()
        }
        SourceKind::PhaseDrift(pd) => {
            let mut phi: f64 = rng.gen_range(0.0..TAU);
            (0..n_blocks)
                .map(|i| {
                    match pd.law {
                        PhaseLaw::Uniform => {
                            if i > 0 {
                                phi = rng.gen_range(0.0..TAU);
                            }
                        }
                        PhaseLaw::RandomWalk { sigma } => {
                            if i > 0 {
                                let step: f64 = rng.sample(StandardNormal);
                                phi = (phi + sigma * step).rem_euclid(TAU);
                            }
                        }
                    }
                    RealizedBlock::Phase(phi)
                })
                .collect()
        }
        SourceKind::DeFinetti { components } => {
            let weights: Vec<f64> = components.iter().map(|(p, _)| *p).collect();
            let c = weighted_draw(&weights, &mut rng);
            vec![RealizedBlock::DeFinettiComponent(c); n_blocks]
        }
    };
    Ok(RunBatch {
        source: src.clone(),
        blocks,
        n_runs: n,
        block_len,
        seed,
    })
}

fn weighted_draw<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let x: f64 = rng.gen::<f64>();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if x < acc {
            return i;
        }
    }
    weights.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{apply_filter, concurrence, negativity};
    use crate::qmat::{frob_dist, identity, psi_minus};
    use approx::assert_abs_diff_eq;

    #[test]
    fn werner_one_emits_singlets() {
        let src = make_werner(1.0).unwrap();
        let batch = sample_runs(&src, 5, 42).unwrap();
        for i in 0..5 {
            let run = batch.run_state(i).unwrap();
            assert!(frob_dist(run.mat(), psi_minus().to_density().mat()) < 1e-12);
        }
        assert_abs_diff_eq!(src.ground_truth().entanglement, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn werner_ground_truth_matches_formula() {
        for alpha in [0.0, 1.0 / 3.0, 0.5, 0.8, 1.0] {
            let src = make_werner(alpha).unwrap();
            assert_abs_diff_eq!(
                src.ground_truth().entanglement,
                measures::werner_concurrence(alpha),
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn same_seed_reproduces_sequences() {
        let src = make_phase_mixed(PhaseLaw::Uniform, true).unwrap();
        let b1 = sample_runs(&src, 50, 7).unwrap();
        let b2 = sample_runs(&src, 50, 7).unwrap();
        for i in 0..50 {
            assert_eq!(b1.leaked_phase(i), b2.leaked_phase(i));
        }
    }

    #[test]
    fn phase_mixed_sample_mean_of_phasor_vanishes() {
        let src = make_phase_mixed(PhaseLaw::Uniform, true).unwrap();
        let batch = sample_runs(&src, 10_000, 3).unwrap();
        let mut sum = num_complex::Complex64::new(0.0, 0.0);
        for i in 0..batch.len() {
            let phi = batch.leaked_phase(i).unwrap();
            sum += num_complex::Complex64::from_polar(1.0, phi);
        }
        let mean = sum / cr(batch.len() as f64);
        // CLT: |mean| ~ Rayleigh with scale 1/sqrt(2n) ≈ 0.007 at n = 1e4.
        assert!(mean.norm() < 0.05, "|mean phasor| = {}", mean.norm());
    }

    #[test]
    fn phase_mixed_marginal_is_separable() {
        let src = make_phase_mixed(PhaseLaw::Uniform, false).unwrap();
        let gt = src.ground_truth();
        assert_abs_diff_eq!(gt.entanglement, 0.0, epsilon = 1e-12);
        // Leak flag off: phases withheld from the verifier.
        let batch = sample_runs(&src, 3, 1).unwrap();
        assert_eq!(batch.leaked_phase(0), None);
    }

    #[test]
    fn heralded_conditioning_recovers_entangled_state() {
        let singlet = psi_minus().to_density();
        let mixed = DensityMatrix::maximally_mixed(vec![2, 2]);
        let src = make_heralded(0.1, singlet.clone(), mixed).unwrap();
        let batch = sample_runs(&src, 400, 11).unwrap();
        let mut yes = 0usize;
        for i in 0..batch.len() {
            if batch.herald(i) == Some(true) {
                yes += 1;
                let run = batch.run_state(i).unwrap();
                assert!(frob_dist(run.mat(), singlet.mat()) < 1e-12);
            }
        }
        assert!(yes > 10, "expected some heralds at p_yes = 0.1, got {yes}");
    }

    #[test]
    fn a_posteriori_entanglement_is_order_p() {
        let p = 0.01;
        let src = make_a_posteriori_default(p).unwrap();
        let gt = src.ground_truth();
        assert_eq!(gt.measure, Measure::Negativity);
        // Negativity of (1−P)|22⟩⟨22| + P·ψ⁻ is P/2: order P.
        assert_abs_diff_eq!(gt.entanglement, p / 2.0, epsilon = 1e-9);
    }

    #[test]
    fn a_posteriori_click_filter_recovers_entangled_state() {
        let p = 0.01;
        let src = make_a_posteriori_default(p).unwrap();
        let out = apply_filter(&src.ground_truth().run_marginal, &click_filter()).unwrap();
        assert_abs_diff_eq!(out.p_pass, p, epsilon = 1e-12);
        let expected = embed_qubits_in_qutrits(&psi_minus().to_density()).unwrap();
        assert!(frob_dist(out.rho_pass.mat(), expected.mat()) < 1e-10);
    }

    #[test]
    fn dual_rail_states_are_normalized() {
        for variant in [DualRailVariant::EntangledEq9, DualRailVariant::ProductEq10] {
            for eps in [0.01, 0.1, 0.3] {
                let s = dual_rail_state(variant, eps, 0.7).unwrap();
                assert_abs_diff_eq!(s.amplitudes().norm(), 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn dual_rail_product_has_zero_negativity() {
        let src = make_dual_rail(DualRailVariant::ProductEq10, 0.2, 0.4).unwrap();
        assert!(src.ground_truth().entanglement < 1e-12);
    }

    #[test]
    fn dual_rail_conditionals_match() {
        for eps in [0.01, 0.1, 0.3] {
            let phi = 1.3;
            let ent = dual_rail_state(DualRailVariant::EntangledEq9, eps, phi)
                .unwrap()
                .to_density();
            let prod = dual_rail_state(DualRailVariant::ProductEq10, eps, phi)
                .unwrap()
                .to_density();
            let (c_ent, p_ent) = condition_on_one_photon_total(&ent).unwrap();
            let (c_prod, p_prod) = condition_on_one_photon_total(&prod).unwrap();
            assert_abs_diff_eq!(p_ent, 1.0, epsilon = 1e-12);
            assert!(p_prod < 2.0 * eps * eps);
            assert!(frob_dist(c_ent.mat(), c_prod.mat()) < 1e-9);
        }
    }

    #[test]
    fn neglected_double_emission_negativity_scales_as_eps_squared() {
        let n_at = |eps: f64| {
            negativity(
                &dual_rail_neglect_double_emission(eps, 0.0)
                    .unwrap()
                    .to_density(),
            )
            .unwrap()
        };
        let ratio = n_at(0.1) / n_at(0.01);
        assert!((80.0..=120.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn singlet_fraction_antisymmetric_expectation_is_quarter() {
        let src = make_cheat(CheatKind::SingletFraction).unwrap();
        let SourceKind::Block(ens) = src.kind() else {
            panic!()
        };
        let p_singlet = psi_minus().to_density().mat().clone();
        let mut expect = 0.0;
        for (c, comp) in ens.components.iter().enumerate() {
            let alice_pair = ens.component_joint(c, &[Slot::a(0), Slot::a(1)]).unwrap();
            expect += comp.probability * alice_pair.expect(&p_singlet);
        }
        assert_abs_diff_eq!(expect, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn cheat_sources_have_zero_cross_entanglement() {
        for kind in [
            CheatKind::SingletFraction,
            CheatKind::CrossSideCorrelated,
            CheatKind::AntiGrouping {
                group_size: MOMENT_GROUP_SIZE,
            },
        ] {
            let src = make_cheat(kind).unwrap();
            let gt = src.ground_truth();
            assert!(gt.entanglement < 1e-12, "{:?}: {}", kind, gt.entanglement);
            assert_abs_diff_eq!(negativity(&gt.run_marginal).unwrap(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn cross_side_cheat_shows_quarter_on_both_sides() {
        let src = make_cheat(CheatKind::CrossSideCorrelated).unwrap();
        let SourceKind::Block(ens) = src.kind() else {
            panic!()
        };
        let p_singlet = psi_minus().to_density().mat().clone();
        for side in [Side::A, Side::B] {
            let slots = [Slot { pos: 0, side }, Slot { pos: 1, side }];
            let mut expect = 0.0;
            for (c, comp) in ens.components.iter().enumerate() {
                let pair = ens.component_joint(c, &slots).unwrap();
                expect += comp.probability * pair.expect(&p_singlet);
            }
            assert_abs_diff_eq!(expect, 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn anti_grouping_rejects_unsupported_size() {
        assert!(make_cheat(CheatKind::AntiGrouping { group_size: 7 }).is_err());
    }

    #[test]
    fn definetti_draws_once_per_batch() {
        let src = make_definetti(vec![
            (0.5, psi_minus().to_density()),
            (0.5, DensityMatrix::maximally_mixed(vec![2, 2])),
        ])
        .unwrap();
        assert!(!src.is_iid());
        for seed in 0..6 {
            let batch = sample_runs(&src, 20, seed).unwrap();
            let first = batch.run_state(0).unwrap();
            for i in 1..batch.len() {
                assert!(frob_dist(batch.run_state(i).unwrap().mat(), first.mat()) < 1e-12);
            }
        }
    }

    #[test]
    fn monte_carlo_marginal_matches_ground_truth() {
        let n = 10_000usize;
        for (src, seed) in [
            (make_werner(0.5).unwrap(), 101u64),
            (make_phase_mixed(PhaseLaw::Uniform, false).unwrap(), 102),
            (make_cheat(CheatKind::SingletFraction).unwrap(), 103),
            (
                make_heralded(
                    0.3,
                    psi_minus().to_density(),
                    DensityMatrix::maximally_mixed(vec![2, 2]),
                )
                .unwrap(),
                104,
            ),
        ] {
            let batch = sample_runs(&src, n, seed).unwrap();
            let dim = src.ground_truth().run_marginal.dim();
            let mut sum = crate::qmat::CMatrix::zeros(dim, dim);
            let mut sum_sq = nalgebra::DMatrix::<f64>::zeros(dim, dim);
            for i in 0..n {
                let run = batch.run_state(i).unwrap();
                sum += run.mat();
                sum_sq += run.mat().map(|z| z.norm_sqr());
            }
            let mean = sum.scale(1.0 / n as f64);
            let gt = &src.ground_truth().run_marginal;
            for r in 0..dim {
                for c in 0..dim {
                    let var = (sum_sq[(r, c)] / n as f64 - mean[(r, c)].norm_sqr()).max(0.0);
                    let se = (var / n as f64).sqrt();
                    let dev = (mean[(r, c)] - gt.mat()[(r, c)]).norm();
                    assert!(
                        dev <= 3.0 * se + 1e-12,
                        "{}: entry ({r},{c}) off by {dev:.2e} (3se = {:.2e})",
                        src.label(),
                        3.0 * se
                    );
                }
            }
        }
    }

    #[test]
    fn joint_state_respects_block_correlations() {
        let src = make_cheat(CheatKind::SingletFraction).unwrap();
        // Find a batch whose first block realized the singlet component.
        let mut found = false;
        for seed in 0..50 {
            let batch = sample_runs(&src, 4, seed).unwrap();
            let pair = batch.joint_state(&[(0, Side::A), (1, Side::A)]).unwrap();
            let p_a = pair.expect(psi_minus().to_density().mat());
            if (p_a - 1.0).abs() < 1e-9 {
                found = true;
                // Same block: perfectly antisymmetric. Cross-block pair is not.
                let cross = batch.joint_state(&[(0, Side::A), (2, Side::A)]).unwrap();
                let p_cross = cross.expect(psi_minus().to_density().mat());
                assert!(p_cross < 0.751, "cross-block P_a = {p_cross}");
                break;
            }
        }
        assert!(found, "no singlet block sampled in 50 seeds");
    }

    #[test]
    fn joint_state_rejects_duplicate_slots() {
        let src = make_werner(0.5).unwrap();
        let batch = sample_runs(&src, 2, 1).unwrap();
        assert!(batch.joint_state(&[(0, Side::A), (0, Side::A)]).is_err());
    }

    #[test]
    fn block_ensemble_validates_coverage() {
        let bad = BlockEnsemble::new(
            1,
            vec![BlockComponent {
                probability: 1.0,
                factors: vec![Factor::new(
                    PureState::ket_bits(&[0]).to_density(),
                    vec![Slot::a(0)],
                )
                .unwrap()],
                herald: None,
            }],
        );
        assert!(bad.is_err(), "B slot left uncovered");
    }

    #[test]
    fn anti_grouping_marginal_is_even_mixture() {
        let src = make_cheat(CheatKind::AntiGrouping {
            group_size: MOMENT_GROUP_SIZE,
        })
        .unwrap();
        let gt = &src.ground_truth().run_marginal;
        let expected = DensityMatrix::mixture(&[
            (0.5, PureState::ket_bits(&[1, 1]).to_density()),
            (0.5, PureState::ket_bits(&[0, 0]).to_density()),
        ])
        .unwrap();
        assert!(frob_dist(gt.mat(), expected.mat()) < 1e-12);
        let _ = identity(2);
        let _ = concurrence(gt).unwrap();
    }
}
