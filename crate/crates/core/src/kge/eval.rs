use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{score_all_tails, KgeError, Query};
use crate::dataset::Triple;
use crate::numcore::Matrix;

/// Filtered Hits@{1,3,10} and MRR over a set of triples, each evaluated in
/// both directions. `count` is the number of triples, used as the
/// aggregation weight.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RankingMetrics {
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub mrr: f64,
    pub count: usize,
}

/// Every known answer of each `(head, relation_row)` query, in both
/// directions.
#[derive(Clone, Debug, Default)]
pub struct FilterIndex {
    answers: HashMap<(usize, usize), Vec<usize>>,
}

impl FilterIndex {
    pub fn new<'a>(triples: impl IntoIterator<Item = &'a Triple>, n_rel: usize) -> Self {
        let mut answers: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for t in triples {
            answers.entry((t.head, t.relation)).or_default().push(t.tail);
            answers.entry((t.tail, t.relation + n_rel)).or_default().push(t.head);
        }
        for v in answers.values_mut() {
            v.sort_unstable();
            v.dedup();
        }
        Self { answers }
    }

    pub fn answers(&self, head: usize, relation_row: usize) -> &[usize] {
        self.answers.get(&(head, relation_row)).map_or(&[], Vec::as_slice)
    }

    /// Known answers other than `target`.
    pub fn filter_for(&self, q: &Query) -> Vec<usize> {
        self.answers(q.head, q.relation_row)
            .iter()
            .copied()
            .filter(|&e| e != q.target)
            .collect()
    }
}

/// Mid-rank of `scores[target]` after removing `filtered` entries:
/// `1 + #greater + floor(#equal / 2)`.
pub fn rank_of(scores: &[f64], target: usize, filtered: &[usize]) -> Result<usize, KgeError> {
    if target >= scores.len() {
        return Err(KgeError::Contract(format!("target {target} outside {} scores", scores.len())));
    }
    if filtered.contains(&target) {
        return Err(KgeError::Contract(format!("target {target} is in its own filter set")));
    }
    let mut skip = vec![false; scores.len()];
    for &f in filtered {
        if f < skip.len() {
            skip[f] = true;
        }
    }
    skip[target] = true;
    let s = scores[target];
    let (mut greater, mut equal) = (0, 0);
    for (e, &x) in scores.iter().enumerate() {
        if skip[e] {
            continue;
        }
        if x > s {
            greater += 1;
        } else if x == s {
            equal += 1;
        }
    }
    Ok(1 + greater + equal / 2)
}

/// Filtered rank of `q.target` among all entities.
pub fn filtered_rank(ent: &Matrix, rel: &Matrix, q: &Query, filtered: &[usize], gamma: f64) -> Result<usize, KgeError> {
    let scores = score_all_tails(ent, rel, q.head, q.relation_row, gamma);
    rank_of(&scores, q.target, filtered)
}

pub fn metrics_from_ranks(ranks: &[usize], count: usize) -> RankingMetrics {
    if ranks.is_empty() {
        return RankingMetrics {
            count,
            ..Default::default()
        };
    }
    let n = ranks.len() as f64;
    let hits = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
    RankingMetrics {
        hits1: hits(1),
        hits3: hits(3),
        hits10: hits(10),
        mrr: ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
        count,
    }
}

/// Tail and head queries for every triple under phase-rotation scoring.
pub fn evaluate_triples(
    ent: &Matrix,
    rel: &Matrix,
    n_rel: usize,
    triples: &[Triple],
    filter: &FilterIndex,
    gamma: f64,
) -> Result<RankingMetrics, KgeError> {
    evaluate_with(n_rel, triples, filter, |q| score_all_tails(ent, rel, q.head, q.relation_row, gamma))
}

/// Tail and head queries for every triple, ranked in parallel with a
/// caller-supplied scorer returning one score per entity.
pub fn evaluate_with<F>(n_rel: usize, triples: &[Triple], filter: &FilterIndex, scorer: F) -> Result<RankingMetrics, KgeError>
where
    F: Fn(&Query) -> Vec<f64> + Sync,
{
    let queries = super::training_queries(triples, n_rel);
    let ranks = queries
        .par_iter()
        .map(|q| rank_of(&scorer(q), q.target, &filter.filter_for(q)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(metrics_from_ranks(&ranks, triples.len()))
}

/// Count-weighted mean of per-client metrics.
pub fn aggregate_metrics(per_client: &[RankingMetrics]) -> Result<RankingMetrics, KgeError> {
    let total: usize = per_client.iter().map(|m| m.count).sum();
    if total == 0 {
        return Err(KgeError::Empty("aggregate over zero triples".into()));
    }
    let mut out = RankingMetrics {
        count: total,
        ..Default::default()
    };
    for m in per_client {
        let w = m.count as f64 / total as f64;
        out.hits1 += w * m.hits1;
        out.hits3 += w * m.hits3;
        out.hits10 += w * m.hits10;
        out.mrr += w * m.mrr;
    }
    Ok(out)
}
