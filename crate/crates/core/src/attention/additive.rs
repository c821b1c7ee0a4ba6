use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{matmul, softmax_rows, Tensor2};

/// Self-attentive additive attention parameters.
///
/// `w` is `d_a × d` and shared by every head; column `i` of `v` (`d_a × M`)
/// is head `i`'s alignment vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditiveAttnParams {
    pub w: Tensor2,
    pub v: Tensor2,
}

impl AdditiveAttnParams {
    pub fn heads(&self) -> usize {
        self.v.cols()
    }

    pub fn d_a(&self) -> usize {
        self.w.rows()
    }

    pub fn d(&self) -> usize {
        self.w.cols()
    }
}

/// `A = softmax(Vᵀ tanh(W Hᵀ))` row-wise over positions and `Z = A H`.
pub fn additive_attention(h: &Tensor2, params: &AdditiveAttnParams) -> Result<(Tensor2, Tensor2)> {
    if h.rows() == 0 {
        return Err(Error::invalid("additive_attention", "empty sequence"));
    }
    if h.cols() != params.d() {
        return Err(Error::shapes("additive_attention", h.shape(), params.w.shape()));
    }
    if params.v.rows() != params.d_a() {
        return Err(Error::shapes("additive_attention", params.w.shape(), params.v.shape()));
    }
    let s = matmul(&params.w, &h.transpose())?.map(f64::tanh);
    let logits = matmul(&params.v.transpose(), &s)?;
    let a = softmax_rows(&logits);
    let z = matmul(&a, h)?;
    Ok((a, z))
}
