//! Scale geometry of weighted sequence spaces: weights and their monotone
//! rearrangements, block-reversal permutations and wild sets, and the
//! generalized eigenproblems behind canonical scales.

pub mod error;
pub mod io;
pub mod permutation;
#[cfg(test)]
mod proptests;
pub mod rational;
pub mod spectral;
pub mod weightfn;
pub mod wildperm;

pub use error::{Error, Result};
pub use permutation::Permutation;
pub use spectral::{GramPairTrunc, IsoCandidate, InvariantTable, ScaleTupleTrunc};
pub use weightfn::{DivergingSeq, EquivVerdict, TailRule, Weight, WeightSpec};
pub use wildperm::{WildConfig, WildPermutation, WildSet};
