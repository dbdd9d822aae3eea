//! Desk-scale simulator for bipartite entanglement verification.
//!
//! The crate models the full verification loop: honest and adversarial
//! sources emit runs of bipartite states ([`sources`]), verification
//! protocols measure them and issue verdicts ([`protocols`]), entanglement
//! measures provide ground-truth oracles ([`measures`]), and procedural
//! safeguards (randomized ordering, random grouping, deletion stability)
//! live in [`statproc`]. The [`harness`] module ties scenarios together
//! into reproducible, seeded reports.

pub mod error;
pub mod harness;
pub mod measures;
pub mod protocols;
pub mod qmat;
pub mod random_states;
pub mod sources;
pub mod statproc;

pub use error::{Error, Result};
