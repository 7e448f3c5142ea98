//! News representation: word and entity encoders with attentive fusion.
//!
//! Encoding is expressed as graph construction so the same forward pass
//! serves training (with gradients and dropout) and scoring (plain values,
//! dropout off). Padded positions are never materialized: only the nonzero
//! prefix of each id sequence enters the graph, so padding provably cannot
//! influence outputs or receive gradient.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, NodeId};
use crate::data::mind::NewsArticle;
use crate::model::ModelParams;
use crate::params::ParamId;

/// Inverted dropout over node values. `off` is the scoring path; an active
/// instance owns its rng so mask draws are reproducible run to run.
pub struct Dropout {
    rate: f64,
    rng: Option<ChaCha8Rng>,
}

impl Dropout {
    pub fn off() -> Self {
        Self { rate: 0.0, rng: None }
    }

    pub fn active(rate: f64, rng: ChaCha8Rng) -> Self {
        assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0,1)");
        Self {
            rate,
            rng: Some(rng),
        }
    }

    pub fn apply(&mut self, g: &mut Graph, x: NodeId) -> NodeId {
        let Some(rng) = self.rng.as_mut() else {
            return x;
        };
        if self.rate == 0.0 {
            return x;
        }
        let keep = 1.0 - self.rate;
        let mask = Array2::from_shape_fn(g.value(x).raw_dim(), |_| {
            if rng.random::<f64>() < self.rate {
                0.0
            } else {
                1.0 / keep
            }
        });
        g.mul_mask(x, mask)
    }
}

/// Multi-head self-attention over the rows of `x` without output projection
/// or score scaling: per head, `out_i = Σ_j softmax_j(q_i·k_j) v_j`, heads
/// concatenated. `x` holds only real positions; callers drop padding first.
pub fn multi_head_self_attention(
    g: &mut Graph,
    x: NodeId,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    heads: usize,
    head_dim: usize,
) -> NodeId {
    assert!(g.value(x).nrows() >= 1, "attention needs at least one row");
    let wq = g.param(wq);
    let wk = g.param(wk);
    let wv = g.param(wv);
    let q_all = g.matmul(x, wq);
    let k_all = g.matmul(x, wk);
    let v_all = g.matmul(x, wv);

    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let q = g.slice_cols(q_all, h * head_dim, head_dim);
        let k = g.slice_cols(k_all, h * head_dim, head_dim);
        let v = g.slice_cols(v_all, h * head_dim, head_dim);
        let kt = g.transpose(k);
        let scores = g.matmul(q, kt);
        let attn = g.softmax_rows(scores);
        outs.push(g.matmul(attn, v));
    }
    g.concat_cols(&outs)
}

/// Additive attention pooling: `score_i = query · tanh(x_i·proj + bias)`,
/// output is the softmax-weighted sum of the input rows.
pub fn attentive_pool(
    g: &mut Graph,
    x: NodeId,
    proj: ParamId,
    bias: ParamId,
    query: ParamId,
) -> NodeId {
    assert!(g.value(x).nrows() >= 1, "pooling needs at least one row");
    let proj = g.param(proj);
    let bias = g.param(bias);
    let query = g.param(query);
    let hidden = g.matmul(x, proj);
    let hidden = g.add_row_broadcast(hidden, bias);
    let hidden = g.tanh(hidden);
    let scores = g.matmul(hidden, query);
    let scores_row = g.transpose(scores);
    let weights = g.softmax_rows(scores_row);
    g.matmul(weights, x)
}

/// Title text representation n_t. Empty titles yield a zero vector.
pub fn encode_text(
    g: &mut Graph,
    article: &NewsArticle,
    p: &ModelParams,
    drop: &mut Dropout,
) -> NodeId {
    if article.word_count == 0 {
        return g.constant(Array2::zeros((1, p.dims.news_dim())));
    }
    let x = g.gather(p.word_emb, &article.word_ids[..article.word_count]);
    let x = drop.apply(g, x);
    let attn = multi_head_self_attention(
        g,
        x,
        p.text_wq,
        p.text_wk,
        p.text_wv,
        p.dims.text_heads,
        p.dims.head_dim,
    );
    let attn = drop.apply(g, attn);
    attentive_pool(g, attn, p.text_pool_proj, p.text_pool_bias, p.text_pool_query)
}

/// Title entity representation n_e. Articles without entities yield a zero
/// vector so fusion falls back to pure text.
pub fn encode_entities(
    g: &mut Graph,
    article: &NewsArticle,
    p: &ModelParams,
    drop: &mut Dropout,
) -> NodeId {
    if article.entity_count == 0 {
        return g.constant(Array2::zeros((1, p.dims.entity_out())));
    }
    let x = g.gather(p.entity_emb, &article.entity_ids[..article.entity_count]);
    let x = drop.apply(g, x);
    let attn = multi_head_self_attention(
        g,
        x,
        p.entity_wq,
        p.entity_wk,
        p.entity_wv,
        p.dims.entity_heads,
        p.dims.head_dim,
    );
    let attn = drop.apply(g, attn);
    attentive_pool(
        g,
        attn,
        p.entity_pool_proj,
        p.entity_pool_bias,
        p.entity_pool_query,
    )
}

/// Value-level convenience: encode one article with dropout off.
pub fn news_vector(article: &NewsArticle, p: &ModelParams) -> Array1<f64> {
    let mut g = Graph::new(&p.set);
    let node = encode_news(&mut g, article, p, &mut Dropout::off());
    g.value(node).row(0).to_owned()
}

/// Unified news vector n = n_t·W_t + n_e·W_e.
pub fn encode_news(
    g: &mut Graph,
    article: &NewsArticle,
    p: &ModelParams,
    drop: &mut Dropout,
) -> NodeId {
    let n_t = encode_text(g, article, p, drop);
    let n_e = encode_entities(g, article, p, drop);
    let wt = g.param(p.fusion_wt);
    let we = g.param(p.fusion_we);
    let from_text = g.matmul(n_t, wt);
    let from_entities = g.matmul(n_e, we);
    g.add(from_text, from_entities)
}
