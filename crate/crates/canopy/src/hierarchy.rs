//! The three-level user interest tree: subtopic, topic, and user vectors.
//!
//! Level combinators are graph builders like the encoder, so training
//! differentiates through the whole tree while scoring extracts plain
//! vectors from the same forward construction.

use std::collections::HashMap;

use ndarray::{Array1, Array2};

use crate::autograd::{Graph, NodeId};
use crate::data::interest::InterestIndex;
use crate::data::mind::Catalog;
use crate::encoder::{encode_news, Dropout};
use crate::model::ModelParams;
use crate::params::ParamId;

/// Softmax-weighted sum of `rows` with logits from a single dense layer
/// applied to `features`, which must have the same row count.
fn attend(
    g: &mut Graph,
    rows: NodeId,
    features: NodeId,
    w: ParamId,
    b: ParamId,
) -> NodeId {
    let w = g.param(w);
    let b = g.param(b);
    let logits = g.matmul(features, w);
    let logits = g.add_row_broadcast(logits, b);
    let logits_row = g.transpose(logits);
    let weights = g.softmax_rows(logits_row);
    g.matmul(weights, rows)
}

/// Subtopic-level interest: softmax(φ_s(n_k))-weighted click combination
/// plus the subtopic embedding.
pub fn subtopic_interest(
    g: &mut Graph,
    clicks: &[NodeId],
    subtopic_id: usize,
    p: &ModelParams,
) -> NodeId {
    assert!(!clicks.is_empty(), "subtopic groups are never empty");
    let n = g.concat_rows(clicks);
    let c = attend(g, n, n, p.phi_s_w, p.phi_s_b);
    let s_emb = g.gather(p.subtopic_emb, &[subtopic_id]);
    g.add(c, s_emb)
}

/// Topic-level interest: subtopic vectors weighted by
/// softmax(φ_t([u^s; count embedding])) plus the topic embedding.
pub fn topic_interest(
    g: &mut Graph,
    subtopic_reps: &[NodeId],
    click_counts: &[usize],
    topic_id: usize,
    p: &ModelParams,
) -> NodeId {
    assert!(!subtopic_reps.is_empty(), "topic groups are never empty");
    assert_eq!(subtopic_reps.len(), click_counts.len());
    let u = g.concat_rows(subtopic_reps);
    let count_rows: Vec<usize> = click_counts
        .iter()
        .map(|&c| ModelParams::count_index(c))
        .collect();
    let counts = g.gather(p.subtopic_count_emb, &count_rows);
    let v = g.concat_cols(&[u, counts]);
    let z = attend(g, u, v, p.phi_t_w, p.phi_t_b);
    let t_emb = g.gather(p.topic_emb, &[topic_id]);
    g.add(z, t_emb)
}

/// User-level interest: topic vectors weighted by
/// softmax(φ_g([u^t; count embedding])); no embedding is added at the root.
/// An empty topic list is the cold-start case and yields a zero vector.
pub fn user_interest(
    g: &mut Graph,
    topic_reps: &[NodeId],
    click_counts: &[usize],
    p: &ModelParams,
) -> NodeId {
    if topic_reps.is_empty() {
        return g.constant(Array2::zeros((1, p.dims.news_dim())));
    }
    assert_eq!(topic_reps.len(), click_counts.len());
    let u = g.concat_rows(topic_reps);
    let count_rows: Vec<usize> = click_counts
        .iter()
        .map(|&c| ModelParams::count_index(c))
        .collect();
    let counts = g.gather(p.topic_count_emb, &count_rows);
    let v = g.concat_cols(&[u, counts]);
    attend(g, u, v, p.phi_g_w, p.phi_g_b)
}

/// Graph-side interest tree: node handles for the user vector and every
/// clicked topic/subtopic vector, in the interest index's order.
pub struct TreeNodes {
    pub u_g: NodeId,
    pub topics: Vec<(usize, NodeId)>,
    pub subtopics: Vec<(usize, NodeId)>,
    pub cold_start: bool,
}

impl TreeNodes {
    pub fn topic_node(&self, topic_id: usize) -> Option<NodeId> {
        self.topics
            .iter()
            .find(|(id, _)| *id == topic_id)
            .map(|&(_, n)| n)
    }

    pub fn subtopic_node(&self, subtopic_id: usize) -> Option<NodeId> {
        self.subtopics
            .iter()
            .find(|(id, _)| *id == subtopic_id)
            .map(|&(_, n)| n)
    }
}

/// Build the full tree over an interest index. `news_node` supplies the
/// vector node for a clicked news id; repeated clicks of one article should
/// return the same node so gradient accumulates through it once per click.
pub fn build_tree_nodes(
    g: &mut Graph,
    index: &InterestIndex,
    p: &ModelParams,
    news_node: &mut dyn FnMut(&mut Graph, &str) -> NodeId,
) -> TreeNodes {
    if index.is_empty() {
        let u_g = g.constant(Array2::zeros((1, p.dims.news_dim())));
        return TreeNodes {
            u_g,
            topics: Vec::new(),
            subtopics: Vec::new(),
            cold_start: true,
        };
    }

    let mut topic_nodes = Vec::with_capacity(index.topics.len());
    let mut topic_counts = Vec::with_capacity(index.topics.len());
    let mut all_subtopics = Vec::new();

    for topic in &index.topics {
        let mut sub_nodes = Vec::with_capacity(topic.subtopics.len());
        let mut sub_counts = Vec::with_capacity(topic.subtopics.len());
        for sub in &topic.subtopics {
            let clicks: Vec<NodeId> = sub
                .news_ids
                .iter()
                .map(|id| news_node(g, id))
                .collect();
            let u_s = subtopic_interest(g, &clicks, sub.subtopic_id, p);
            all_subtopics.push((sub.subtopic_id, u_s));
            sub_nodes.push(u_s);
            sub_counts.push(sub.click_count);
        }
        let u_t = topic_interest(g, &sub_nodes, &sub_counts, topic.topic_id, p);
        topic_nodes.push(u_t);
        topic_counts.push(topic.click_count);
    }

    let u_g = user_interest(g, &topic_nodes, &topic_counts, p);
    TreeNodes {
        u_g,
        topics: index
            .topics
            .iter()
            .map(|t| t.topic_id)
            .zip(topic_nodes)
            .collect(),
        subtopics: all_subtopics,
        cold_start: false,
    }
}

/// A news-node provider that encodes articles from the catalog, caching by
/// news id within one graph.
pub struct EncodeProvider<'a> {
    pub catalog: &'a Catalog,
    pub params: &'a ModelParams,
    pub dropout: Dropout,
    cache: HashMap<String, NodeId>,
}

impl<'a> EncodeProvider<'a> {
    pub fn new(catalog: &'a Catalog, params: &'a ModelParams, dropout: Dropout) -> Self {
        Self {
            catalog,
            params,
            dropout,
            cache: HashMap::new(),
        }
    }

    pub fn node(&mut self, g: &mut Graph, news_id: &str) -> NodeId {
        if let Some(&n) = self.cache.get(news_id) {
            return n;
        }
        let article = &self.catalog[news_id];
        let n = encode_news(g, article, self.params, &mut self.dropout);
        self.cache.insert(news_id.to_string(), n);
        n
    }
}

/// Computed interest vectors for one user, extracted from a scoring-mode
/// graph pass.
#[derive(Debug, Clone)]
pub struct InterestTree {
    pub u_g: Array1<f64>,
    pub topics: Vec<(usize, Array1<f64>)>,
    pub subtopics: Vec<(usize, Array1<f64>)>,
    pub cold_start: bool,
}

impl InterestTree {
    pub fn topic_rep(&self, topic_id: usize) -> Option<&Array1<f64>> {
        self.topics
            .iter()
            .find(|(id, _)| *id == topic_id)
            .map(|(_, v)| v)
    }

    pub fn subtopic_rep(&self, subtopic_id: usize) -> Option<&Array1<f64>> {
        self.subtopics
            .iter()
            .find(|(id, _)| *id == subtopic_id)
            .map(|(_, v)| v)
    }
}

/// Compute the value-level tree from precomputed news vectors (dropout off).
pub fn build_interest_tree(
    index: &InterestIndex,
    p: &ModelParams,
    news_vec: &dyn Fn(&str) -> Array1<f64>,
) -> InterestTree {
    let mut g = Graph::new(&p.set);
    let mut provider = |g: &mut Graph, id: &str| {
        let v = news_vec(id);
        let row = v.insert_axis(ndarray::Axis(0));
        g.constant(row)
    };
    let nodes = build_tree_nodes(&mut g, index, p, &mut provider);
    InterestTree {
        u_g: g.value(nodes.u_g).row(0).to_owned(),
        topics: nodes
            .topics
            .iter()
            .map(|&(id, n)| (id, g.value(n).row(0).to_owned()))
            .collect(),
        subtopics: nodes
            .subtopics
            .iter()
            .map(|&(id, n)| (id, g.value(n).row(0).to_owned()))
            .collect(),
        cold_start: nodes.cold_start,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::interest::build_interest_index;
    use crate::data::mind::{NewsArticle, ENTITY_LEN, TITLE_LEN};
    use crate::model::ModelDims;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_params(seed: u64) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ModelParams::init(ModelDims::tiny(12, 8, 3, 6), &mut rng).unwrap()
    }

    fn row(g: &Graph, n: NodeId) -> Vec<f64> {
        g.value(n).row(0).to_vec()
    }

    #[test]
    fn single_click_subtopic_interest_is_click_plus_embedding() {
        let p = tiny_params(1);
        let mut g = Graph::new(&p.set);
        let click = g.constant(array![[0.3, -1.0, 0.5, 2.0, 0.0, 1.1]]);
        let u_s = subtopic_interest(&mut g, &[click], 2, &p);
        let expected = g.value(click) + &p.set.get(p.subtopic_emb).row(2);
        for (a, b) in g.value(u_s).iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicated_click_changes_nothing() {
        let p = tiny_params(2);
        let mut g = Graph::new(&p.set);
        let click = g.constant(array![[0.3, -1.0, 0.5, 2.0, 0.0, 1.1]]);
        let once = subtopic_interest(&mut g, &[click], 1, &p);
        let twice = subtopic_interest(&mut g, &[click, click], 1, &p);
        for (a, b) in row(&g, once).iter().zip(row(&g, twice).iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn subtopic_interest_matches_direct_formula() {
        // independent evaluation: logits through φ_s, explicit softmax,
        // weighted sum, embedding add
        let p = tiny_params(3);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let clicks_v: Vec<Array2<f64>> = (0..3)
            .map(|_| Array2::from_shape_fn((1, 6), |_| rng.random_range(-1.0..1.0)))
            .collect();

        let w = p.set.get(p.phi_s_w);
        let b = p.set.get(p.phi_s_b)[[0, 0]];
        let logits: Vec<f64> = clicks_v.iter().map(|n| n.dot(w)[[0, 0]] + b).collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let mut expected: Array2<f64> = Array2::zeros((1, 6));
        for (gamma, n) in exps.iter().map(|e| e / z).zip(&clicks_v) {
            expected = expected + n.mapv(|v| v * gamma);
        }
        expected = expected + &p.set.get(p.subtopic_emb).row(4);

        let mut g = Graph::new(&p.set);
        let clicks: Vec<NodeId> = clicks_v.iter().map(|v| g.constant(v.clone())).collect();
        let u_s = subtopic_interest(&mut g, &clicks, 4, &p);
        for (a, b) in g.value(u_s).iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_subtopic_topic_interest_adds_topic_embedding() {
        let p = tiny_params(4);
        let mut g = Graph::new(&p.set);
        let u_s = g.constant(array![[1.0, 0.0, -1.0, 0.5, 0.25, 2.0]]);
        let u_t = topic_interest(&mut g, &[u_s], &[3], 1, &p);
        let expected = g.value(u_s) + &p.set.get(p.topic_emb).row(1);
        for (a, b) in g.value(u_t).iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn click_counts_clip_at_the_history_cap() {
        let p = tiny_params(5);
        let mut g = Graph::new(&p.set);
        let u_s = g.constant(array![[1.0, 0.0, -1.0, 0.5, 0.25, 2.0]]);
        let a = topic_interest(&mut g, &[u_s], &[51], 0, &p);
        let b = topic_interest(&mut g, &[u_s], &[500], 0, &p);
        assert_eq!(g.value(a), g.value(b));
    }

    #[test]
    fn single_topic_user_interest_is_that_topic() {
        let p = tiny_params(6);
        let mut g = Graph::new(&p.set);
        let u_t = g.constant(array![[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]]);
        let u_g = user_interest(&mut g, &[u_t], &[7], &p);
        assert_eq!(g.value(u_g), g.value(u_t));
    }

    #[test]
    fn user_interest_is_permutation_invariant() {
        let p = tiny_params(7);
        let mut g = Graph::new(&p.set);
        let a = g.constant(array![[1.0, -0.5, 0.0, 2.0, 0.3, -1.0]]);
        let b = g.constant(array![[0.2, 0.8, -0.4, 0.0, 1.5, 0.7]]);
        let c = g.constant(array![[-1.0, 0.1, 0.9, 0.4, -0.2, 0.5]]);
        let fwd = user_interest(&mut g, &[a, b, c], &[5, 2, 1], &p);
        let rev = user_interest(&mut g, &[c, a, b], &[1, 5, 2], &p);
        for (x, y) in row(&g, fwd).iter().zip(row(&g, rev).iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn user_interest_matches_direct_formula() {
        let p = tiny_params(8);
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let reps: Vec<Array2<f64>> = (0..3)
            .map(|_| Array2::from_shape_fn((1, 6), |_| rng.random_range(-1.0..1.0)))
            .collect();
        let counts = [4usize, 2, 9];

        let w = p.set.get(p.phi_g_w);
        let b = p.set.get(p.phi_g_b)[[0, 0]];
        let count_table = p.set.get(p.topic_count_emb);
        let logits: Vec<f64> = reps
            .iter()
            .zip(&counts)
            .map(|(u, &c)| {
                let mut v = u.row(0).to_vec();
                v.extend(count_table.row(ModelParams::count_index(c)).iter());
                let feat = Array2::from_shape_vec((1, v.len()), v).unwrap();
                feat.dot(w)[[0, 0]] + b
            })
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let mut expected: Array2<f64> = Array2::zeros((1, 6));
        for (alpha, u) in exps.iter().map(|e| e / z).zip(&reps) {
            expected = expected + u.mapv(|v| v * alpha);
        }

        let mut g = Graph::new(&p.set);
        let nodes: Vec<NodeId> = reps.iter().map(|v| g.constant(v.clone())).collect();
        let u_g = user_interest(&mut g, &nodes, &counts, &p);
        for (a, e) in g.value(u_g).iter().zip(expected.iter()) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    fn catalog_article(id: &str, topic: usize, subtopic: usize, words: &[usize]) -> NewsArticle {
        let mut word_ids = words.to_vec();
        word_ids.resize(TITLE_LEN, 0);
        NewsArticle {
            news_id: id.to_string(),
            topic_id: topic,
            subtopic_id: subtopic,
            word_ids,
            entity_ids: vec![0; ENTITY_LEN],
            word_count: words.len(),
            entity_count: 0,
        }
    }

    #[test]
    fn singleton_chain_collapses_to_click_plus_both_embeddings() {
        let p = tiny_params(9);
        let catalog: Catalog = [(
            "A".to_string(),
            catalog_article("A", 1, 2, &[3, 4]),
        )]
        .into();
        let index = build_interest_index(&["A".to_string()], &catalog);

        let mut g = Graph::new(&p.set);
        let mut provider = EncodeProvider::new(&catalog, &p, Dropout::off());
        let tree = build_tree_nodes(&mut g, &index, &p, &mut |g, id| provider.node(g, id));
        assert!(!tree.cold_start);

        let n = {
            let mut g2 = Graph::new(&p.set);
            let node = encode_news(&mut g2, &catalog["A"], &p, &mut Dropout::off());
            g2.value(node).clone()
        };
        let expected = n + &p.set.get(p.subtopic_emb).row(2) + &p.set.get(p.topic_emb).row(1);
        for (a, b) in g.value(tree.u_g).iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(tree.topics.len(), 1);
        assert_eq!(tree.subtopics.len(), 1);
        assert_eq!(tree.topics[0].0, 1);
        assert_eq!(tree.subtopics[0].0, 2);
    }

    #[test]
    fn tree_keys_mirror_the_index() {
        let p = tiny_params(10);
        let catalog: Catalog = [
            ("A".to_string(), catalog_article("A", 0, 0, &[1])),
            ("B".to_string(), catalog_article("B", 0, 1, &[2])),
            ("C".to_string(), catalog_article("C", 2, 5, &[3])),
        ]
        .into();
        let history: Vec<String> =
            ["A", "B", "C", "A"].iter().map(|s| s.to_string()).collect();
        let index = build_interest_index(&history, &catalog);

        let tree = build_interest_tree(&index, &p, &|id| {
            let mut g = Graph::new(&p.set);
            let n = encode_news(&mut g, &catalog[id], &p, &mut Dropout::off());
            g.value(n).row(0).to_owned()
        });

        let topic_keys: Vec<usize> = tree.topics.iter().map(|(id, _)| *id).collect();
        let sub_keys: Vec<usize> = tree.subtopics.iter().map(|(id, _)| *id).collect();
        assert_eq!(topic_keys, vec![0, 2]);
        assert_eq!(sub_keys, vec![0, 1, 5]);
        assert!(tree.topic_rep(2).is_some());
        assert!(tree.topic_rep(1).is_none());
        assert!(tree.subtopic_rep(5).is_some());
    }

    #[test]
    fn empty_index_is_cold_start() {
        let p = tiny_params(11);
        let index = InterestIndex::default();
        let tree = build_interest_tree(&index, &p, &|_| unreachable!("no clicks"));
        assert!(tree.cold_start);
        assert!(tree.u_g.iter().all(|&v| v == 0.0));
        assert!(tree.topics.is_empty());
    }

    #[test]
    fn subtopic_interest_stays_in_hull_after_embedding_removal() {
        let p = tiny_params(12);
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        for _ in 0..10 {
            let clicks_v: Vec<Array2<f64>> = (0..4)
                .map(|_| Array2::from_shape_fn((1, 6), |_| rng.random_range(-2.0..2.0)))
                .collect();
            let mut g = Graph::new(&p.set);
            let clicks: Vec<NodeId> =
                clicks_v.iter().map(|v| g.constant(v.clone())).collect();
            let u_s = subtopic_interest(&mut g, &clicks, 3, &p);
            let c = g.value(u_s) - &p.set.get(p.subtopic_emb).row(3);
            for col in 0..6 {
                let vals: Vec<f64> = clicks_v.iter().map(|v| v[[0, col]]).collect();
                let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                assert!(c[[0, col]] >= min - 1e-9 && c[[0, col]] <= max + 1e-9);
            }
        }
    }
}
