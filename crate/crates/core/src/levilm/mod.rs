//! Two-stage grounding: prompt construction, cross-modal fusion, anchor
//! regions and region-entity matching.

mod model;
mod prompt;
mod regions;
mod scoring;

pub use model::{EpochLog, FusionBlock, Levilm, LevilmConfig, Prepared, Regime, TextVariant};
pub use prompt::{build_prompt, spans_to_tokens, Prompt, Source};
pub use regions::{anchors, build_target, MATCH_IOU};
pub use scoring::{
    alignment_scores, entity_features, matching_loss, matching_loss_with_grad, select_prediction, Strategy,
    CANDIDATE_PROB,
};
