//! Attention mappings: scaled dot-product heads with concatenation, additive
//! self-attention, and the sentence classifier built on the latter.

mod additive;
mod checkpoint;
mod classifier;
mod dot_product;

pub use additive::{additive_attention, AdditiveAttnParams};
pub use checkpoint::{attention_csv, Checkpoint, ShapeEntry};
pub use classifier::{argmax, ForwardPass, ModelConfig, ParamGroup, SentenceClassifier};
pub use dot_product::{
    dot_product_head, multihead_concat, DotProductHeadParams, DotProductMha, ProjectionScope,
};

use crate::error::Result;

/// Class probabilities for `tokens`.
pub fn classifier_forward(tokens: &[usize], model: &SentenceClassifier) -> Result<Vec<f64>> {
    model.forward(tokens)
}

/// Copy of `model` with head `head` zeroed at inference.
pub fn mask_head(model: &SentenceClassifier, head: usize) -> Result<SentenceClassifier> {
    model.mask_head(head)
}
