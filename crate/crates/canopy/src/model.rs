//! Model dimensions and the full learnable parameter registry.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::embeddings::PretrainedEmbeddings;
use crate::data::interest::HISTORY_CAP;
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamSet};

/// Size configuration for every tensor in the model. The news vector
/// dimension is `text_heads * head_dim` and doubles as the topic and
/// subtopic embedding dimension so the levels combine additively.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub n_words: usize,
    pub n_entities: usize,
    pub n_topics: usize,
    pub n_subtopics: usize,
    pub word_dim: usize,
    pub entity_dim: usize,
    pub text_heads: usize,
    pub entity_heads: usize,
    pub head_dim: usize,
    pub pool_dim: usize,
    pub count_dim: usize,
}

impl ModelDims {
    /// Full-scale defaults: 300-d words, 100-d entities, 20×20 text heads
    /// (400-d news vectors), 5×20 entity heads, 200-d pooling queries,
    /// 100-d count embeddings.
    pub fn full(n_words: usize, n_entities: usize, n_topics: usize, n_subtopics: usize) -> Self {
        Self {
            n_words,
            n_entities,
            n_topics,
            n_subtopics,
            word_dim: 300,
            entity_dim: 100,
            text_heads: 20,
            entity_heads: 5,
            head_dim: 20,
            pool_dim: 200,
            count_dim: 100,
        }
    }

    /// Every dimension ≤ 8, for finite-difference verification.
    pub fn tiny(n_words: usize, n_entities: usize, n_topics: usize, n_subtopics: usize) -> Self {
        Self {
            n_words,
            n_entities,
            n_topics,
            n_subtopics,
            word_dim: 4,
            entity_dim: 3,
            text_heads: 2,
            entity_heads: 1,
            head_dim: 3,
            pool_dim: 4,
            count_dim: 2,
        }
    }

    /// News vector dimension; also the text self-attention output width.
    pub fn news_dim(&self) -> usize {
        self.text_heads * self.head_dim
    }

    pub fn entity_out(&self) -> usize {
        self.entity_heads * self.head_dim
    }

    /// Count embeddings are indexed by click count clipped to the cap.
    pub fn count_rows(&self) -> usize {
        HISTORY_CAP + 1
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.n_words,
            self.n_topics,
            self.n_subtopics,
            self.word_dim,
            self.entity_dim,
            self.text_heads,
            self.entity_heads,
            self.head_dim,
            self.pool_dim,
            self.count_dim,
        ];
        if positive.iter().any(|&d| d == 0) {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        Ok(())
    }
}

/// All learnable tensors, registered under stable names so checkpoints are
/// self-describing.
pub struct ModelParams {
    pub dims: ModelDims,
    pub set: ParamSet,

    pub word_emb: ParamId,
    pub entity_emb: ParamId,

    pub text_wq: ParamId,
    pub text_wk: ParamId,
    pub text_wv: ParamId,
    pub entity_wq: ParamId,
    pub entity_wk: ParamId,
    pub entity_wv: ParamId,

    pub text_pool_proj: ParamId,
    pub text_pool_bias: ParamId,
    pub text_pool_query: ParamId,
    pub entity_pool_proj: ParamId,
    pub entity_pool_bias: ParamId,
    pub entity_pool_query: ParamId,

    pub fusion_wt: ParamId,
    pub fusion_we: ParamId,

    pub subtopic_emb: ParamId,
    pub topic_emb: ParamId,
    pub subtopic_count_emb: ParamId,
    pub topic_count_emb: ParamId,

    pub phi_s_w: ParamId,
    pub phi_s_b: ParamId,
    pub phi_t_w: ParamId,
    pub phi_t_b: ParamId,
    pub phi_g_w: ParamId,
    pub phi_g_b: ParamId,
}

fn glorot(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-a..a))
}

fn embedding(rng: &mut impl Rng, rows: usize, cols: usize, zero_first_row: bool) -> Array2<f64> {
    let mut e = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-0.1..0.1));
    if zero_first_row {
        e.row_mut(0).fill(0.0);
    }
    e
}

impl ModelParams {
    pub fn init(dims: ModelDims, rng: &mut impl Rng) -> Result<Self> {
        dims.validate()?;
        let mut set = ParamSet::new();
        let d = &dims;
        let text_out = d.news_dim();
        let entity_out = d.entity_out();
        let phi_in = d.news_dim() + d.count_dim;

        let word_emb = set.register("word_emb", embedding(rng, d.n_words, d.word_dim, true));
        let entity_emb = set.register(
            "entity_emb",
            embedding(rng, d.n_entities.max(1), d.entity_dim, true),
        );

        let text_wq = set.register("text_attn.wq", glorot(rng, d.word_dim, text_out));
        let text_wk = set.register("text_attn.wk", glorot(rng, d.word_dim, text_out));
        let text_wv = set.register("text_attn.wv", glorot(rng, d.word_dim, text_out));
        let entity_wq = set.register("entity_attn.wq", glorot(rng, d.entity_dim, entity_out));
        let entity_wk = set.register("entity_attn.wk", glorot(rng, d.entity_dim, entity_out));
        let entity_wv = set.register("entity_attn.wv", glorot(rng, d.entity_dim, entity_out));

        let text_pool_proj = set.register("text_pool.proj", glorot(rng, text_out, d.pool_dim));
        let text_pool_bias = set.register("text_pool.bias", Array2::zeros((1, d.pool_dim)));
        let text_pool_query = set.register("text_pool.query", glorot(rng, d.pool_dim, 1));
        let entity_pool_proj =
            set.register("entity_pool.proj", glorot(rng, entity_out, d.pool_dim));
        let entity_pool_bias = set.register("entity_pool.bias", Array2::zeros((1, d.pool_dim)));
        let entity_pool_query = set.register("entity_pool.query", glorot(rng, d.pool_dim, 1));

        let fusion_wt = set.register("fusion.wt", glorot(rng, text_out, d.news_dim()));
        let fusion_we = set.register("fusion.we", glorot(rng, entity_out, d.news_dim()));

        let subtopic_emb = set.register(
            "subtopic_emb",
            embedding(rng, d.n_subtopics, d.news_dim(), false),
        );
        let topic_emb = set.register("topic_emb", embedding(rng, d.n_topics, d.news_dim(), false));
        let subtopic_count_emb = set.register(
            "subtopic_count_emb",
            embedding(rng, d.count_rows(), d.count_dim, false),
        );
        let topic_count_emb = set.register(
            "topic_count_emb",
            embedding(rng, d.count_rows(), d.count_dim, false),
        );

        let phi_s_w = set.register("phi_s.w", glorot(rng, d.news_dim(), 1));
        let phi_s_b = set.register("phi_s.b", Array2::zeros((1, 1)));
        let phi_t_w = set.register("phi_t.w", glorot(rng, phi_in, 1));
        let phi_t_b = set.register("phi_t.b", Array2::zeros((1, 1)));
        let phi_g_w = set.register("phi_g.w", glorot(rng, phi_in, 1));
        let phi_g_b = set.register("phi_g.b", Array2::zeros((1, 1)));

        Ok(Self {
            dims,
            set,
            word_emb,
            entity_emb,
            text_wq,
            text_wk,
            text_wv,
            entity_wq,
            entity_wk,
            entity_wv,
            text_pool_proj,
            text_pool_bias,
            text_pool_query,
            entity_pool_proj,
            entity_pool_bias,
            entity_pool_query,
            fusion_wt,
            fusion_we,
            subtopic_emb,
            topic_emb,
            subtopic_count_emb,
            topic_count_emb,
            phi_s_w,
            phi_s_b,
            phi_t_w,
            phi_t_b,
            phi_g_w,
            phi_g_b,
        })
    }

    /// Replace the word and entity tables with pretrained vectors.
    pub fn apply_pretrained(&mut self, pre: &PretrainedEmbeddings) -> Result<()> {
        let word = self.set.get_mut(self.word_emb);
        if word.dim() != pre.word_table.dim() {
            return Err(Error::Config(format!(
                "pretrained word table is {:?}, model expects {:?}",
                pre.word_table.dim(),
                word.dim()
            )));
        }
        word.assign(&pre.word_table);

        let entity = self.set.get_mut(self.entity_emb);
        if entity.dim() != pre.entity_table.dim() {
            return Err(Error::Config(format!(
                "pretrained entity table is {:?}, model expects {:?}",
                pre.entity_table.dim(),
                entity.dim()
            )));
        }
        entity.assign(&pre.entity_table);
        Ok(())
    }

    /// Index into the count embedding tables for a click count.
    pub fn count_index(count: usize) -> usize {
        count.min(HISTORY_CAP)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        ModelParams::init(ModelDims::tiny(10, 6, 3, 7), &mut rng).unwrap()
    }

    #[test]
    fn registry_shapes_are_consistent() {
        let p = tiny();
        assert_eq!(p.set.get(p.word_emb).dim(), (10, 4));
        assert_eq!(p.set.get(p.text_wq).dim(), (4, 6));
        assert_eq!(p.set.get(p.entity_wv).dim(), (3, 3));
        assert_eq!(p.set.get(p.text_pool_query).dim(), (4, 1));
        assert_eq!(p.set.get(p.fusion_wt).dim(), (6, 6));
        assert_eq!(p.set.get(p.fusion_we).dim(), (3, 6));
        assert_eq!(p.set.get(p.subtopic_emb).dim(), (7, 6));
        assert_eq!(p.set.get(p.subtopic_count_emb).dim(), (51, 2));
        assert_eq!(p.set.get(p.phi_t_w).dim(), (8, 1));
    }

    #[test]
    fn padding_rows_start_at_zero() {
        let p = tiny();
        assert!(p.set.get(p.word_emb).row(0).iter().all(|&v| v == 0.0));
        assert!(p.set.get(p.entity_emb).row(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn same_seed_reproduces_initialization() {
        let mut r1 = ChaCha8Rng::seed_from_u64(42);
        let mut r2 = ChaCha8Rng::seed_from_u64(42);
        let a = ModelParams::init(ModelDims::tiny(10, 6, 3, 7), &mut r1).unwrap();
        let b = ModelParams::init(ModelDims::tiny(10, 6, 3, 7), &mut r2).unwrap();
        for (id, _, tensor) in a.set.iter() {
            assert_eq!(tensor, b.set.get(id));
        }
    }

    #[test]
    fn count_index_clips_at_cap() {
        assert_eq!(ModelParams::count_index(3), 3);
        assert_eq!(ModelParams::count_index(50), 50);
        assert_eq!(ModelParams::count_index(51), 50);
        assert_eq!(ModelParams::count_index(500), 50);
    }
}
