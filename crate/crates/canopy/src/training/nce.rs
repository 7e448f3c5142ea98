//! Noise-contrastive listwise loss over one positive and K negatives.
//!
//! loss = logsumexp(o_pos, o_neg_1, ..., o_neg_K) - o_pos, the negative log
//! likelihood of picking the positive under a softmax over the K+1 scores.
//! It is strictly positive, invariant to shifting every score by a constant,
//! and equals ln(K+1) when all scores tie.

use crate::autograd::{Graph, NodeId};
use crate::error::{Error, Result};

/// Value-level loss, stabilized by max subtraction.
pub fn nce_loss(o_pos: f64, o_negs: &[f64]) -> Result<f64> {
    if !o_pos.is_finite() || o_negs.iter().any(|s| !s.is_finite()) {
        return Err(Error::Invalid(format!(
            "non-finite score in loss: pos={o_pos}, negs={o_negs:?}"
        )));
    }
    let max = o_negs.iter().fold(o_pos, |m, &s| m.max(s));
    let sum: f64 = std::iter::once(o_pos)
        .chain(o_negs.iter().copied())
        .map(|s| (s - max).exp())
        .sum();
    Ok(max + sum.ln() - o_pos)
}

/// Graph-side loss over 1x1 score nodes, for training.
pub fn nce_loss_node(g: &mut Graph, o_pos: NodeId, o_negs: &[NodeId]) -> NodeId {
    let mut scores = Vec::with_capacity(1 + o_negs.len());
    scores.push(o_pos);
    scores.extend_from_slice(o_negs);
    let row = g.concat_cols(&scores);
    let lse = g.logsumexp(row);
    g.sub(lse, o_pos)
}
