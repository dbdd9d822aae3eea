//! Test ensembles of qubit states for teleportation verification.

use crate::error::{Error, Result};
use crate::qmat::PureState;

use std::f64::consts::PI;

/// A weighted set of pure qubit test states.
#[derive(Debug, Clone)]
pub struct TestEnsemble {
    pub name: String,
    states: Vec<PureState>,
    probs: Vec<f64>,
}

impl TestEnsemble {
    pub fn new(name: impl Into<String>, states: Vec<PureState>, probs: Vec<f64>) -> Result<Self> {
        if states.is_empty() || states.len() != probs.len() {
            return Err(Error::InvalidArgument(
                "ensemble needs matching, nonempty states and probabilities".into(),
            ));
        }
        if states.iter().any(|s| s.dims() != [2]) {
            return Err(Error::DimMismatch(
                "ensemble states must be single qubits".into(),
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 || probs.iter().any(|p| *p < 0.0) {
            return Err(Error::NotPhysical(format!("probabilities sum to {total}")));
        }
        Ok(Self {
            name: name.into(),
            states,
            probs,
        })
    }

    /// The four tetrahedral states on the Bloch sphere, p = 1/4 each.
    pub fn tetrahedral() -> Self {
        let dirs: [(f64, f64, f64); 4] = [
            (1.0, 1.0, 1.0),
            (1.0, -1.0, -1.0),
            (-1.0, 1.0, -1.0),
            (-1.0, -1.0, 1.0),
        ];
        let states = dirs
            .iter()
            .map(|&(x, y, z)| {
                let norm = (x * x + y * y + z * z).sqrt();
                let theta = (z / norm).acos();
                let phi = y.atan2(x);
                PureState::qubit(theta, phi)
            })
            .collect();
        Self {
            name: "T".into(),
            states,
            probs: vec![0.25; 4],
        }
    }

    /// The six mutually unbiased basis states |±z⟩, |±x⟩, |±y⟩, p = 1/6.
    /// Indices: 0 = |0⟩, 1 = |1⟩, 2 = |+x⟩, 3 = |−x⟩, 4 = |+y⟩, 5 = |−y⟩.
    pub fn mub6() -> Self {
        let states = vec![
            PureState::qubit(0.0, 0.0),                 // |0⟩
            PureState::qubit(PI, 0.0),                  // |1⟩
            PureState::qubit(PI / 2.0, 0.0),            // |+x⟩
            PureState::qubit(PI / 2.0, PI),             // |−x⟩
            PureState::qubit(PI / 2.0, PI / 2.0),       // |+y⟩
            PureState::qubit(PI / 2.0, 3.0 * PI / 2.0), // |−y⟩
        ];
        Self {
            name: "M".into(),
            states,
            probs: vec![1.0 / 6.0; 6],
        }
    }

    /// A uniform subset of the six MUB states, by index into [`Self::mub6`].
    pub fn mub_subset(indices: &[usize]) -> Result<Self> {
        if indices.is_empty() || indices.len() > 6 {
            return Err(Error::InvalidArgument("subset size must be 1..=6".into()));
        }
        let mut seen = [false; 6];
        let full = Self::mub6();
        let mut states = Vec::new();
        for &i in indices {
            if i >= 6 || std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidArgument(format!("bad MUB index {i}")));
            }
            states.push(full.states[i].clone());
        }
        let n = states.len();
        let mut name: Vec<String> = indices.iter().map(ToString::to_string).collect();
        name.sort();
        Ok(Self {
            name: format!("subset:{}", name.join(",")),
            states,
            probs: vec![1.0 / n as f64; n],
        })
    }

    /// The four states {|0⟩, |1⟩, |+x⟩, |+y⟩}, the documented default for
    /// the four-state attack.
    pub fn four_state_default() -> Self {
        Self::mub_subset(&[0, 1, 2, 4]).unwrap()
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[PureState] {
        &self.states
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn iter(&self) -> impl Iterator<Item = (&PureState, f64)> {
        self.states.iter().zip(self.probs.iter().copied())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn tetrahedral_states_have_pairwise_overlap_third() {
        let t = TestEnsemble::tetrahedral();
        for i in 0..4 {
            for j in 0..4 {
                let f = t.states()[i].fidelity(&t.states()[j]);
                let expect = if i == j { 1.0 } else { 1.0 / 3.0 };
                assert_abs_diff_eq!(f, expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn mub_states_are_unbiased_across_bases() {
        let m = TestEnsemble::mub6();
        // Same basis: orthogonal. Different basis: overlap 1/2.
        for i in 0..6 {
            for j in 0..6 {
                let f = m.states()[i].fidelity(&m.states()[j]);
                let expect = if i == j {
                    1.0
                } else if i / 2 == j / 2 {
                    0.0
                } else {
                    0.5
                };
                assert_abs_diff_eq!(f, expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn subset_rejects_duplicates() {
        assert!(TestEnsemble::mub_subset(&[0, 0, 1, 2]).is_err());
    }

    #[test]
    fn average_state_of_t_and_m_is_maximally_mixed() {
        for ens in [TestEnsemble::tetrahedral(), TestEnsemble::mub6()] {
            let mut avg = crate::qmat::CMatrix::zeros(2, 2);
            for (s, p) in ens.iter() {
                avg += s.to_density().mat().scale(p);
            }
            assert!(crate::qmat::frob_dist(&avg, &crate::qmat::identity(2).scale(0.5)) < 1e-12);
        }
    }
}
