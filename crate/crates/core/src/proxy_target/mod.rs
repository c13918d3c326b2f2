//! E-step constructors for the proxy target T.

mod align;
mod dynamic;

pub use align::{
    alignment_cost, axe_align, axe_brute_force, hungarian, oaxe_align, oaxe_brute_force,
    AlignResult, PROB_FLOOR,
};
pub use dynamic::{default_gamma_grid, dynamic_kd_select, tune_gamma, CandidateSet};

use crate::data::TokenSeq;

/// The raw reference, unchanged.
pub fn raw_target(pair: &(TokenSeq, TokenSeq)) -> TokenSeq {
    pair.1.clone()
}

/// The teacher's beam-search output for `x`, computed once before student training.
pub fn kd_target(
    teacher: &crate::model::AtModel,
    x: &[usize],
    beam: usize,
) -> crate::Result<TokenSeq> {
    Ok(teacher.beam_search(x, beam, 1.0)?.tokens)
}
