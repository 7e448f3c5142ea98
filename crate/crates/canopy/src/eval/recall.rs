//! Multi-channel candidate recall and intra-list diversity.
//!
//! Each clicked subtopic contributes one recall channel (its interest
//! vector); channels take turns contributing their best not-yet-taken
//! article. Users without history fall back to a single channel built from
//! the (zero) user vector. The round-robin stream is prefix-stable: the
//! first k items of the order are exactly the top-k recall set, which lets
//! one pass serve every cutoff in a sweep.

use std::collections::HashSet;

use ndarray::{Array1, ArrayView1};
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{build_interest_index, Catalog, Impression};
use crate::eval::rank::encode_referenced_articles;
use crate::hierarchy::{build_interest_tree, InterestTree};
use crate::model::ModelParams;

/// One recallable article.
#[derive(Debug, Clone)]
pub struct PoolEntry {
    pub news_id: String,
    pub vector: Array1<f64>,
}

/// Deterministic recall stream for one user.
#[derive(Debug, Clone)]
pub struct RecallOrder {
    /// Pool indices, best-first; truncate to k for the top-k recall set.
    pub order: Vec<usize>,
    pub n_channels: usize,
    /// True when the pool could not fill the requested k.
    pub pool_exhausted: bool,
}

/// Channel vectors for a user: clicked subtopic interests in index order,
/// or the user-level vector alone when no subtopic exists.
pub fn recall_channels(tree: &InterestTree) -> Vec<&Array1<f64>> {
    if tree.subtopics.is_empty() {
        vec![&tree.u_g]
    } else {
        tree.subtopics.iter().map(|(_, v)| v).collect()
    }
}

/// Round-robin recall over explicit channel vectors. Every channel ranks the
/// whole pool by dot product (ties keep pool order); channels take turns
/// yielding their highest-ranked article not already taken.
pub fn recall_by_channels(
    channels: &[&Array1<f64>],
    pool: &[PoolEntry],
    k: usize,
) -> RecallOrder {
    assert!(!channels.is_empty(), "recall needs at least one channel");
    let rankings: Vec<Vec<usize>> = channels
        .iter()
        .map(|c| {
            let scores: Vec<f64> = pool.iter().map(|e| e.vector.dot(*c)).collect();
            let mut order: Vec<usize> = (0..pool.len()).collect();
            order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));
            order
        })
        .collect();

    let target = k.min(pool.len());
    let mut taken = vec![false; pool.len()];
    let mut cursors = vec![0usize; channels.len()];
    let mut order = Vec::with_capacity(target);
    let mut turn = 0;
    while order.len() < target {
        let ch = turn % channels.len();
        turn += 1;
        let cursor = &mut cursors[ch];
        while taken[rankings[ch][*cursor]] {
            *cursor += 1;
        }
        let pick = rankings[ch][*cursor];
        taken[pick] = true;
        order.push(pick);
    }
    RecallOrder {
        order,
        n_channels: channels.len(),
        pool_exhausted: pool.len() < k,
    }
}

/// Intra-list average distance: mean over unordered pairs of one minus
/// cosine similarity. Pairs involving a zero vector count similarity zero.
/// Undefined below two items.
pub fn ilad(vectors: &[ArrayView1<f64>]) -> Option<f64> {
    if vectors.len() < 2 {
        return None;
    }
    let mut sum = 0.0;
    for i in 0..vectors.len() {
        for j in (i + 1)..vectors.len() {
            sum += 1.0 - cosine(vectors[i], vectors[j]);
        }
    }
    let pairs = vectors.len() * (vectors.len() - 1) / 2;
    Some(sum / pairs as f64)
}

fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.dot(&b) / (na * nb)
}

/// Streaming ILAD over a growing list; `value` after n pushes equals `ilad`
/// of those n vectors. Lets a k-sweep reuse one pass over the recall order.
#[derive(Default)]
pub struct IladAccumulator {
    units: Vec<Option<Array1<f64>>>,
    sum_dist: f64,
}

impl IladAccumulator {
    pub fn push(&mut self, v: ArrayView1<f64>) {
        let norm = v.dot(&v).sqrt();
        let unit = (norm > 0.0).then(|| v.to_owned() / norm);
        for prev in &self.units {
            let cos = match (&unit, prev) {
                (Some(a), Some(b)) => a.dot(b),
                _ => 0.0,
            };
            self.sum_dist += 1.0 - cos;
        }
        self.units.push(unit);
    }

    pub fn value(&self) -> Option<f64> {
        let n = self.units.len();
        (n >= 2).then(|| self.sum_dist / (n * (n - 1) / 2) as f64)
    }
}

/// Recall quality at one cutoff, macro-averaged over impressions.
#[derive(Debug, Clone, Serialize)]
pub struct RecallPoint {
    pub k: usize,
    /// Fraction of the impression's clicked articles that were recalled.
    pub recall: f64,
    pub ilad: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RecallReport {
    pub points: Vec<RecallPoint>,
    pub n_impressions: usize,
    /// Impressions without any clicked positive in the catalog.
    pub n_skipped: usize,
    pub pool_size: usize,
    pub mean_channels: f64,
    pub any_pool_exhausted: bool,
}

/// Per-impression measurements before macro-averaging.
struct ImpressionRecall {
    n_channels: usize,
    pool_exhausted: bool,
    /// (recall, ilad) aligned with the requested cutoffs.
    at_k: Vec<(f64, f64)>,
}

/// Evaluate recall over impressions against the full catalog pool.
/// `multi_channel` false scores every pool item with the user-level vector
/// alone, the single-vector baseline for diversity comparisons.
pub fn evaluate_recall(
    params: &ModelParams,
    catalog: &Catalog,
    impressions: &[Impression],
    ks: &[usize],
    multi_channel: bool,
) -> RecallReport {
    assert!(!ks.is_empty(), "need at least one cutoff");
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let max_k = *ks.last().unwrap();

    let vectors = encode_referenced_articles(params, catalog, impressions);
    // BTreeMap iteration orders the pool by news id
    let pool: Vec<PoolEntry> = catalog
        .iter()
        .map(|(id, article)| PoolEntry {
            news_id: id.clone(),
            vector: vectors
                .get(id)
                .cloned()
                .unwrap_or_else(|| crate::encoder::news_vector(article, params)),
        })
        .collect();

    let rows: Vec<Option<ImpressionRecall>> = impressions
        .par_iter()
        .map(|imp| {
            let clicked: HashSet<&str> = imp
                .positives()
                .filter(|id| catalog.contains_key(*id))
                .collect();
            if clicked.is_empty() {
                return None;
            }
            let index = build_interest_index(&imp.history, catalog);
            let tree = build_interest_tree(&index, params, &|id| vectors[id].clone());
            let channels: Vec<&Array1<f64>> = if multi_channel {
                recall_channels(&tree)
            } else {
                vec![&tree.u_g]
            };
            let recall = recall_by_channels(&channels, &pool, max_k);

            let mut acc = IladAccumulator::default();
            let mut hits = 0usize;
            let mut at_k = Vec::with_capacity(ks.len());
            let mut next = 0;
            for (m, &pool_idx) in recall.order.iter().enumerate() {
                let entry = &pool[pool_idx];
                if clicked.contains(entry.news_id.as_str()) {
                    hits += 1;
                }
                acc.push(entry.vector.view());
                while next < ks.len() && m + 1 == ks[next].min(pool.len()) {
                    at_k.push((
                        hits as f64 / clicked.len() as f64,
                        acc.value().unwrap_or(0.0),
                    ));
                    next += 1;
                }
            }
            Some(ImpressionRecall {
                n_channels: recall.n_channels,
                pool_exhausted: recall.pool_exhausted,
                at_k,
            })
        })
        .collect();

    let n_skipped = rows.iter().filter(|r| r.is_none()).count();
    let kept: Vec<ImpressionRecall> = rows.into_iter().flatten().collect();
    let n = kept.len();
    let points = ks
        .iter()
        .enumerate()
        .map(|(j, &k)| {
            let (mut recall, mut ilad) = (0.0, 0.0);
            for row in &kept {
                recall += row.at_k[j].0;
                ilad += row.at_k[j].1;
            }
            RecallPoint {
                k,
                recall: if n == 0 { 0.0 } else { 100.0 * recall / n as f64 },
                ilad: if n == 0 { 0.0 } else { ilad / n as f64 },
            }
        })
        .collect();
    RecallReport {
        points,
        n_impressions: n,
        n_skipped,
        pool_size: pool.len(),
        mean_channels: if n == 0 {
            0.0
        } else {
            kept.iter().map(|r| r.n_channels as f64).sum::<f64>() / n as f64
        },
        any_pool_exhausted: kept.iter().any(|r| r.pool_exhausted),
    }
}
