//! Offline evaluation: ranking metrics, recall with diversity, significance.

pub mod metrics;
pub mod rank;
pub mod recall;
pub mod stats;

pub use metrics::{auc, mrr, ndcg_at_k, ranking};
pub use rank::{
    evaluate_ranking, report_from_scored, report_from_scored_with, score_impressions,
    ImpressionMetrics, MetricsReport, ScoredImpression,
};
pub use recall::{
    evaluate_recall, ilad, recall_by_channels, recall_channels, IladAccumulator, PoolEntry,
    RecallOrder, RecallPoint, RecallReport,
};
pub use stats::{paired_t_test, PairedTTest};
