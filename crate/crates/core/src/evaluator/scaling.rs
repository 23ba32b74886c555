//! Best-score-so-far against cumulative completion tokens.

use serde::{Deserialize, Serialize};

use crate::orchestrator::RunTrace;

/// Budgets 2^9 .. 2^13 completion tokens.
pub const LOG2_BUCKETS: [u32; 5] = [9, 10, 11, 12, 13];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingScore {
    /// Mean of the three verifier criteria.
    VerifierAvg,
    /// Per-round element F1; rounds without one are skipped.
    EvalF1,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub cumulative_completion_tokens: u64,
    pub best_score_so_far: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BucketPoint {
    pub log2_tokens: u32,
    pub mean_best_score: f64,
    pub n_tasks: usize,
}

/// One point per scored round, at the completion tokens spent before that
/// round's program could be scored.
pub fn trace_points(trace: &RunTrace, score: ScalingScore) -> Vec<ScalingPoint> {
    let mut rounds: Vec<(u64, f64)> = trace
        .rounds
        .iter()
        .filter_map(|r| {
            let s = match score {
                ScalingScore::VerifierAvg => Some(r.decision.scores.mean()),
                ScalingScore::EvalF1 => r.eval_f1,
            }?;
            Some((trace.ledger.completion_until_scored(r.round), s))
        })
        .collect();
    rounds.sort_by_key(|&(tokens, _)| tokens);
    let mut best = f64::NEG_INFINITY;
    rounds
        .into_iter()
        .map(|(tokens, s)| {
            best = best.max(s);
            ScalingPoint {
                cumulative_completion_tokens: tokens,
                best_score_so_far: best,
            }
        })
        .collect()
}

/// For each budget 2^b, the mean over tasks of the best score reached within
/// that budget. Tasks with no round inside a budget do not contribute to it;
/// buckets no task reaches are omitted.
pub fn scaling_series(traces: &[RunTrace], score: ScalingScore) -> Vec<BucketPoint> {
    let per_trace: Vec<Vec<ScalingPoint>> = traces.iter().map(|t| trace_points(t, score)).collect();
    LOG2_BUCKETS
        .iter()
        .filter_map(|&b| {
            let budget = 1u64 << b;
            let bests: Vec<f64> = per_trace
                .iter()
                .filter_map(|pts| {
                    pts.iter()
                        .take_while(|p| p.cumulative_completion_tokens <= budget)
                        .last()
                        .map(|p| p.best_score_so_far)
                })
                .collect();
            (!bests.is_empty()).then(|| BucketPoint {
                log2_tokens: b,
                mean_best_score: bests.iter().sum::<f64>() / bests.len() as f64,
                n_tasks: bests.len(),
            })
        })
        .collect()
}
