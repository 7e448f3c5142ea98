//! Impression-level ranking metrics.
//!
//! All three metrics rank candidates by descending score with ties kept in
//! original candidate order (stable sort). AUC uses the strict-inequality
//! indicator, so tied positive/negative pairs contribute nothing; pass
//! `ties_half` for the conventional half-credit variant. The nDCG
//! normalizer sums 1/log2(1+i) over every positive, even beyond the cutoff.

/// Candidate order after ranking: indices into the input, best first.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));
    order
}

/// Pairwise ranking accuracy. `None` when the impression has no positive or
/// no negative.
pub fn auc(labels: &[u8], scores: &[f64], ties_half: bool) -> Option<f64> {
    debug_assert_eq!(labels.len(), scores.len());
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut hits = 0.0;
    for (p_score, _) in scores.iter().zip(labels).filter(|(_, &l)| l == 1) {
        for (n_score, _) in scores.iter().zip(labels).filter(|(_, &l)| l == 0) {
            if p_score > n_score {
                hits += 1.0;
            } else if ties_half && p_score == n_score {
                hits += 0.5;
            }
        }
    }
    Some(hits / (n_pos * n_neg) as f64)
}

/// Mean reciprocal rank over all positives. `None` without a positive.
pub fn mrr(labels: &[u8], scores: &[f64]) -> Option<f64> {
    debug_assert_eq!(labels.len(), scores.len());
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    if n_pos == 0 {
        return None;
    }
    let sum: f64 = ranking(scores)
        .iter()
        .enumerate()
        .filter(|&(_, &i)| labels[i] == 1)
        .map(|(rank0, _)| 1.0 / (rank0 + 1) as f64)
        .sum();
    Some(sum / n_pos as f64)
}

/// nDCG at cutoff `k`. `None` without a positive.
pub fn ndcg_at_k(labels: &[u8], scores: &[f64], k: usize) -> Option<f64> {
    debug_assert_eq!(labels.len(), scores.len());
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    if n_pos == 0 {
        return None;
    }
    let dcg: f64 = ranking(scores)
        .iter()
        .take(k)
        .enumerate()
        .map(|(rank0, &i)| {
            let gain = (1u32 << labels[i]) as f64 - 1.0;
            gain / ((rank0 + 2) as f64).log2()
        })
        .sum();
    let norm: f64 = (1..=n_pos).map(|i| 1.0 / ((i + 1) as f64).log2()).sum();
    Some(dcg / norm)
}

/// True when the normalizer counts positives past the cutoff, making the
/// ideal DCG unreachable; reports surface this per impression.
pub fn ndcg_normalizer_exceeds_cutoff(labels: &[u8], k: usize) -> bool {
    labels.iter().filter(|&&l| l == 1).count() > k
}
