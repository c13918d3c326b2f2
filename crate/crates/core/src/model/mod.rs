//! Encoder-decoder models: the autoregressive teacher and the parallel student.

mod at;
mod checkpoint;
mod nat;
mod transformer;

pub use at::{at_logprob, beam_search, AtModel, AtScore, BatchGrads, BeamHypothesis};
pub use checkpoint::checkpoint_kind;
pub use nat::{
    input_predictor_logprob, length_class, mask_head_grads, nat_logprob, predict_length,
    InputPredictor, NatExample, NatLossConfig, NatModel, NatScore, LENGTH_CLASSES, MAX_OFFSET,
};
pub use transformer::ModelDims;

pub(crate) use nat::factor_logprob;
