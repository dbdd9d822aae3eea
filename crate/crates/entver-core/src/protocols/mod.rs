//! Verification protocols: CHSH, entanglement witnesses, tomography,
//! teleportation, direct multi-copy measurements, and the classical
//! intercept-resend threshold optimizer.
//!
//! Each protocol consumes a [`crate::sources::SourceProcess`], runs either
//! in exact-expectation mode or in seeded sampled mode, and returns a
//! [`VerifierReport`] with its verdict, test statistic, threshold, and an
//! audit of which verification criteria the configuration respects.

pub mod chsh;
pub mod direct;
pub mod ensembles;
pub mod teleport;
pub mod threshold;
pub mod tomography;
pub mod witness;

use serde::{Deserialize, Serialize};

pub use chsh::{
    bell_operator, bell_operator_witness, chsh_optimal_settings, chsh_test, ChshOptions,
    ChshSettings,
};
pub use direct::{
    direct_concurrence_2copy, moment_concurrence, DirectOptions, Grouping2, MomentOptions, Sides,
};
pub use ensembles::TestEnsemble;
pub use teleport::{teleport_test, teleportation_witness, TeleportOptions};
pub use threshold::{
    classical_threshold, classical_threshold_with, FidelityObjective, ThresholdResult,
};
pub use tomography::{tomography_test, AnalyzerPhasePolicy, Postselection, TomographyOptions};
pub use witness::{
    pauli6_decomposition, werner_optimal_witness, witness_test, LocalDecomposition, WitnessOptions,
};

/// How many standard errors a statistic must clear its threshold by.
pub const SIGNIFICANCE_SIGMAS: f64 = 3.0;

/// Floating-point floor for the violation margin: a statistic within this
/// of its threshold is a tie, and ties are inconclusive.
pub const TIE_EPS: f64 = 1e-12;

/// Exact-expectation evaluation or seeded finite-shot sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    Exact,
    Sampled { shots: u64 },
}

impl ExecMode {
    pub fn shots(&self) -> u64 {
        match self {
            ExecMode::Exact => 0,
            ExecMode::Sampled { shots } => *shots,
        }
    }
}

/// Whether the verdict rule applies the procedural safeguards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Compliance {
    /// Significance only; documented criteria violations allowed.
    Naive,
    /// Significance plus every safeguard the protocol defines.
    #[default]
    Compliant,
}

/// The verifier's verdict. There is no "separable" verdict: a failed test
/// is merely inconclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Entangled,
    Inconclusive,
}

/// Which side of the threshold violates it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationSide {
    Above,
    Below,
}

/// Audit of the five verification criteria; `true` means respected.
///
/// c1: no assumption on the state's form. c2: none on its symmetries.
/// c3: no unverified multi-copy (De Finetti) assumption. c4: verification
/// independent of the generation procedure. c5: postselection only as
/// local filtering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriteriaAudit {
    pub c1: bool,
    pub c2: bool,
    pub c3: bool,
    pub c4: bool,
    pub c5: bool,
}

impl Default for CriteriaAudit {
    fn default() -> Self {
        Self::all_respected()
    }
}

impl CriteriaAudit {
    pub fn all_respected() -> Self {
        Self {
            c1: true,
            c2: true,
            c3: true,
            c4: true,
            c5: true,
        }
    }

    pub fn is_clean(&self) -> bool {
        self.c1 && self.c2 && self.c3 && self.c4 && self.c5
    }

    /// Indices (1-based) of violated criteria.
    pub fn violations(&self) -> Vec<u8> {
        [self.c1, self.c2, self.c3, self.c4, self.c5]
            .iter()
            .enumerate()
            .filter_map(|(i, ok)| (!ok).then_some(i as u8 + 1))
            .collect()
    }
}

/// Verdict, statistic and provenance of one verification run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifierReport {
    pub protocol: String,
    pub verdict: Verdict,
    pub statistic: f64,
    pub threshold: f64,
    /// Runs actually contributing to the statistic (0 in exact mode).
    pub shots: u64,
    pub stderr: f64,
    pub criteria_audit: CriteriaAudit,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl VerifierReport {
    /// Builds a report, deciding the verdict by the 3σ rule: entangled only
    /// if the statistic clears the threshold on the violating side by more
    /// than [`SIGNIFICANCE_SIGMAS`]·stderr. A statistic exactly at the
    /// threshold is inconclusive.
    #[allow(clippy::too_many_arguments)]
    pub fn decide(
        protocol: impl Into<String>,
        statistic: f64,
        threshold: f64,
        side: ViolationSide,
        stderr: f64,
        shots: u64,
        criteria_audit: CriteriaAudit,
        notes: Vec<String>,
    ) -> Self {
        let margin = (SIGNIFICANCE_SIGMAS * stderr).max(TIE_EPS);
        let violated = match side {
            ViolationSide::Above => statistic - threshold > margin,
            ViolationSide::Below => threshold - statistic > margin,
        };
        Self {
            protocol: protocol.into(),
            verdict: if violated {
                Verdict::Entangled
            } else {
                Verdict::Inconclusive
            },
            statistic,
            threshold,
            shots,
            stderr,
            criteria_audit,
            notes,
        }
    }

    pub fn with_verdict(mut self, verdict: Verdict) -> Self {
        self.verdict = verdict;
        self
    }

    pub fn note(mut self, s: impl Into<String>) -> Self {
        self.notes.push(s.into());
        self
    }
}
