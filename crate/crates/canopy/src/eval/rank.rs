//! Ranking evaluation over a set of impressions.
//!
//! Every distinct article is encoded exactly once (dropout off), then each
//! impression builds its interest tree from those cached vectors and scores
//! its candidates. Impressions run in parallel but the report is assembled
//! in input order, so results are independent of thread scheduling.

use std::collections::HashMap;

use ndarray::Array1;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{build_interest_index, Catalog, Impression};
use crate::encoder::news_vector;
use crate::eval::metrics::{auc, mrr, ndcg_at_k, ndcg_normalizer_exceeds_cutoff};
use crate::hierarchy::build_interest_tree;
use crate::matching::{score_with_vector, MatchConfig, ScoreBreakdown};
use crate::model::ModelParams;

/// Metrics for one impression, kept for paired significance tests.
#[derive(Debug, Clone, Serialize)]
pub struct ImpressionMetrics {
    pub impression_id: String,
    pub auc: f64,
    pub mrr: f64,
    pub ndcg5: f64,
    pub ndcg10: f64,
}

/// Aggregate report. Metric means are reported on the conventional 0-100
/// scale; per-impression values stay in [0, 1].
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub auc: f64,
    pub mrr: f64,
    pub ndcg5: f64,
    pub ndcg10: f64,
    pub n_impressions: usize,
    /// Impressions without both a scorable positive and negative.
    pub n_skipped: usize,
    /// Impressions where positives outnumber the nDCG@5 cutoff.
    pub n_normalizer_past_cutoff: usize,
    pub per_impression: Vec<ImpressionMetrics>,
}

/// Scored candidates of one impression, cached so lambda sweeps and ablation
/// masks can rescale level contributions without another forward pass.
#[derive(Debug, Clone, Serialize)]
pub struct ScoredImpression {
    pub impression_id: String,
    pub labels: Vec<u8>,
    pub breakdowns: Vec<ScoreBreakdown>,
}

/// Encode every distinct article referenced by the impressions, in parallel.
pub fn encode_referenced_articles(
    params: &ModelParams,
    catalog: &Catalog,
    impressions: &[Impression],
) -> HashMap<String, Array1<f64>> {
    let mut seen = std::collections::HashSet::new();
    let mut ids: Vec<&str> = Vec::new();
    for imp in impressions {
        for id in imp.history.iter().chain(imp.candidates.iter().map(|(id, _)| id)) {
            if catalog.contains_key(id.as_str()) && seen.insert(id.as_str()) {
                ids.push(id);
            }
        }
    }
    ids.par_iter()
        .map(|id| (id.to_string(), news_vector(&catalog[*id], params)))
        .collect()
}

/// Score every impression's candidates with cached article vectors.
/// Candidates missing from the catalog are dropped from the impression.
pub fn score_impressions(
    params: &ModelParams,
    catalog: &Catalog,
    impressions: &[Impression],
    config: &MatchConfig,
) -> Vec<ScoredImpression> {
    let vectors = encode_referenced_articles(params, catalog, impressions);
    impressions
        .par_iter()
        .map(|imp| {
            let index = build_interest_index(&imp.history, catalog);
            let tree = build_interest_tree(&index, params, &|id| vectors[id].clone());
            let mut labels = Vec::new();
            let mut breakdowns = Vec::new();
            for (id, label) in &imp.candidates {
                let Some(article) = catalog.get(id) else { continue };
                labels.push(*label);
                breakdowns.push(score_with_vector(
                    vectors[id].view(),
                    article.topic_id,
                    article.subtopic_id,
                    &tree,
                    &index,
                    config,
                ));
            }
            ScoredImpression {
                impression_id: imp.impression_id.clone(),
                labels,
                breakdowns,
            }
        })
        .collect()
}

/// Compute the aggregate report from cached candidate scores.
pub fn report_from_scored(scored: &[ScoredImpression]) -> MetricsReport {
    report_from_scored_with(scored, false, |b| b.o)
}

/// Same, but ranking by `score_of` instead of the recorded combined score;
/// this is how lambda sweeps and ablations reuse a single scoring pass.
pub fn report_from_scored_with(
    scored: &[ScoredImpression],
    ties_half: bool,
    score_of: impl Fn(&ScoreBreakdown) -> f64 + Sync,
) -> MetricsReport {
    let rows: Vec<Option<(ImpressionMetrics, bool)>> = scored
        .par_iter()
        .map(|imp| {
            let scores: Vec<f64> = imp.breakdowns.iter().map(&score_of).collect();
            let auc = auc(&imp.labels, &scores, ties_half)?;
            let mrr = mrr(&imp.labels, &scores)?;
            let ndcg5 = ndcg_at_k(&imp.labels, &scores, 5)?;
            let ndcg10 = ndcg_at_k(&imp.labels, &scores, 10)?;
            Some((
                ImpressionMetrics {
                    impression_id: imp.impression_id.clone(),
                    auc,
                    mrr,
                    ndcg5,
                    ndcg10,
                },
                ndcg_normalizer_exceeds_cutoff(&imp.labels, 5),
            ))
        })
        .collect();

    let n_skipped = rows.iter().filter(|r| r.is_none()).count();
    let kept: Vec<(ImpressionMetrics, bool)> = rows.into_iter().flatten().collect();
    let n = kept.len();
    let mean = |f: &dyn Fn(&ImpressionMetrics) -> f64| {
        if n == 0 {
            return 0.0;
        }
        kept.iter().map(|(m, _)| f(m)).sum::<f64>() / n as f64
    };
    MetricsReport {
        auc: 100.0 * mean(&|m| m.auc),
        mrr: 100.0 * mean(&|m| m.mrr),
        ndcg5: 100.0 * mean(&|m| m.ndcg5),
        ndcg10: 100.0 * mean(&|m| m.ndcg10),
        n_impressions: n,
        n_skipped,
        n_normalizer_past_cutoff: kept.iter().filter(|(_, past)| *past).count(),
        per_impression: kept.into_iter().map(|(m, _)| m).collect(),
    }
}

/// Full evaluation: encode, score, aggregate.
pub fn evaluate_ranking(
    params: &ModelParams,
    catalog: &Catalog,
    impressions: &[Impression],
    config: &MatchConfig,
) -> MetricsReport {
    report_from_scored(&score_impressions(params, catalog, impressions, config))
}
