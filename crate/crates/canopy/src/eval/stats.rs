//! Paired significance testing over per-impression metric values.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PairedTTest {
    pub t: f64,
    /// Two-sided p-value with n-1 degrees of freedom.
    pub p_value: f64,
    pub mean_diff: f64,
    pub n: usize,
}

/// Paired t-test of `a` against `b` (same impressions, same order).
/// `None` when the arrays differ in length or hold fewer than two pairs.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Option<PairedTTest> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let n = a.len();
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();

    let (t, p_value) = if sd == 0.0 {
        if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (mean.signum() * f64::INFINITY, 0.0)
        }
    } else {
        let t = mean / (sd / (n as f64).sqrt());
        let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("valid dof");
        (t, 2.0 * (1.0 - dist.cdf(t.abs())))
    };
    Some(PairedTTest {
        t,
        p_value,
        mean_diff: mean,
        n,
    })
}
