//! Multi-level interest matching and score aggregation.
//!
//! Each candidate gets three scores against the user tree: subtopic, topic,
//! and user level. Level scores are dot products weighted by the user's
//! click ratio for that category, zero when the category was never clicked,
//! and combined as o = λ_s·o_s + λ_t·o_t + (1−λ_s−λ_t)·o_g.

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, NodeId};
use crate::data::interest::InterestIndex;
use crate::data::mind::NewsArticle;
use crate::encoder::{encode_news, Dropout};
use crate::error::{Error, Result};
use crate::hierarchy::{InterestTree, TreeNodes};
use crate::model::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchConfig {
    pub lambda_s: f64,
    pub lambda_t: f64,
    /// Ablation switches. A disabled component is zeroed without
    /// renormalizing the remaining coefficients.
    pub use_subtopic: bool,
    pub use_topic: bool,
    pub use_user: bool,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            lambda_s: 0.7,
            lambda_t: 0.15,
            use_subtopic: true,
            use_topic: true,
            use_user: true,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_s <= 0.0 || self.lambda_t <= 0.0 {
            return Err(Error::Config(format!(
                "lambda_s and lambda_t must be positive, got {} and {}",
                self.lambda_s, self.lambda_t
            )));
        }
        if self.lambda_s + self.lambda_t >= 1.0 {
            return Err(Error::Config(format!(
                "lambda_s + lambda_t must be < 1, got {}",
                self.lambda_s + self.lambda_t
            )));
        }
        Ok(())
    }

    pub fn lambda_g(&self) -> f64 {
        1.0 - self.lambda_s - self.lambda_t
    }

    pub fn with_mask(mut self, use_subtopic: bool, use_topic: bool, use_user: bool) -> Self {
        self.use_subtopic = use_subtopic;
        self.use_topic = use_topic;
        self.use_user = use_user;
        self
    }
}

/// Every term behind one candidate's final score. Masked or unclicked
/// components appear as zero, so `o` always equals
/// `λ_s·o_s + λ_t·o_t + (1−λ_s−λ_t)·o_g` over the recorded fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub o_g: f64,
    pub o_t_raw: f64,
    pub o_s_raw: f64,
    pub w_t: f64,
    pub w_s: f64,
    pub o_t: f64,
    pub o_s: f64,
    pub o: f64,
}

pub fn user_level_score(candidate: ArrayView1<f64>, tree: &InterestTree) -> f64 {
    candidate.dot(&tree.u_g)
}

/// (ô_t, w_t, o_t); all zero when the user never clicked `topic_id`.
pub fn topic_level_score(
    candidate: ArrayView1<f64>,
    topic_id: usize,
    tree: &InterestTree,
    index: &InterestIndex,
) -> (f64, f64, f64) {
    match (tree.topic_rep(topic_id), index.topic(topic_id)) {
        (Some(u_t), Some(group)) => {
            let raw = candidate.dot(u_t);
            (raw, group.ratio, raw * group.ratio)
        }
        _ => (0.0, 0.0, 0.0),
    }
}

/// (ô_s, w_s, o_s); all zero when the user never clicked `subtopic_id`.
pub fn subtopic_level_score(
    candidate: ArrayView1<f64>,
    subtopic_id: usize,
    tree: &InterestTree,
    index: &InterestIndex,
) -> (f64, f64, f64) {
    match (tree.subtopic_rep(subtopic_id), index.subtopic(subtopic_id)) {
        (Some(u_s), Some(group)) => {
            let raw = candidate.dot(u_s);
            (raw, group.ratio, raw * group.ratio)
        }
        _ => (0.0, 0.0, 0.0),
    }
}

pub fn combine_scores(o_s: f64, o_t: f64, o_g: f64, config: &MatchConfig) -> f64 {
    let o_s = if config.use_subtopic { o_s } else { 0.0 };
    let o_t = if config.use_topic { o_t } else { 0.0 };
    let o_g = if config.use_user { o_g } else { 0.0 };
    config.lambda_s * o_s + config.lambda_t * o_t + config.lambda_g() * o_g
}

/// Score a candidate vector whose topic and subtopic ids are known.
pub fn score_with_vector(
    candidate: ArrayView1<f64>,
    topic_id: usize,
    subtopic_id: usize,
    tree: &InterestTree,
    index: &InterestIndex,
    config: &MatchConfig,
) -> ScoreBreakdown {
    let o_g = if config.use_user {
        user_level_score(candidate, tree)
    } else {
        0.0
    };
    let (o_t_raw, w_t, o_t) = if config.use_topic {
        topic_level_score(candidate, topic_id, tree, index)
    } else {
        (0.0, 0.0, 0.0)
    };
    let (o_s_raw, w_s, o_s) = if config.use_subtopic {
        subtopic_level_score(candidate, subtopic_id, tree, index)
    } else {
        (0.0, 0.0, 0.0)
    };
    let o = config.lambda_s * o_s + config.lambda_t * o_t + config.lambda_g() * o_g;
    ScoreBreakdown {
        o_g,
        o_t_raw,
        o_s_raw,
        w_t,
        w_s,
        o_t,
        o_s,
        o,
    }
}

/// Encode a candidate (dropout off) and score it against the tree.
pub fn score_candidate(
    article: &NewsArticle,
    tree: &InterestTree,
    index: &InterestIndex,
    p: &ModelParams,
    config: &MatchConfig,
) -> ScoreBreakdown {
    let mut g = Graph::new(&p.set);
    let node = encode_news(&mut g, article, p, &mut Dropout::off());
    let vec = g.value(node).row(0).to_owned();
    score_with_vector(
        vec.view(),
        article.topic_id,
        article.subtopic_id,
        tree,
        index,
        config,
    )
}

/// Graph-side combined score for training: same zero rules and coefficients
/// as the value path, producing a 1×1 node. Unclicked or masked components
/// are omitted from the graph entirely, which is the constant-zero rule in
/// differentiable form.
pub fn score_candidate_node(
    g: &mut Graph,
    candidate: NodeId,
    topic_id: usize,
    subtopic_id: usize,
    tree: &TreeNodes,
    index: &InterestIndex,
    config: &MatchConfig,
) -> NodeId {
    let mut terms: Vec<NodeId> = Vec::with_capacity(3);

    if config.use_subtopic {
        if let (Some(u_s), Some(group)) =
            (tree.subtopic_node(subtopic_id), index.subtopic(subtopic_id))
        {
            let raw = g.dot(candidate, u_s);
            terms.push(g.scale(raw, config.lambda_s * group.ratio));
        }
    }
    if config.use_topic {
        if let (Some(u_t), Some(group)) = (tree.topic_node(topic_id), index.topic(topic_id)) {
            let raw = g.dot(candidate, u_t);
            terms.push(g.scale(raw, config.lambda_t * group.ratio));
        }
    }
    if config.use_user && !tree.cold_start {
        let raw = g.dot(candidate, tree.u_g);
        terms.push(g.scale(raw, config.lambda_g()));
    }

    match terms.split_first() {
        None => g.scalar_constant(0.0),
        Some((&first, rest)) => {
            let mut acc = first;
            for &t in rest {
                acc = g.add(acc, t);
            }
            acc
        }
    }
}
