use super::KgeError;
use crate::dataset::Triple;
use crate::numcore::{xent_rows, RotateQuery, Rng, Tape, Var};

/// A tail-prediction query. Head prediction for `(h, r, t)` is the query
/// `(t, r + n_rel, h)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Query {
    pub head: usize,
    pub relation_row: usize,
    pub target: usize,
}

/// Both prediction directions for every triple.
pub fn training_queries(triples: &[Triple], n_rel: usize) -> Vec<Query> {
    triples
        .iter()
        .flat_map(|t| {
            [
                Query {
                    head: t.head,
                    relation_row: t.relation,
                    target: t.tail,
                },
                Query {
                    head: t.tail,
                    relation_row: t.relation + n_rel,
                    target: t.head,
                },
            ]
        })
        .collect()
}

/// `k` distinct entities from `0..entity_count`, never `target`.
pub fn sample_negatives(target: usize, entity_count: usize, k: usize, rng: &mut Rng) -> Result<Vec<usize>, KgeError> {
    if k >= entity_count {
        return Err(KgeError::Config(format!(
            "{k} negatives need more than {k} entities, have {entity_count}"
        )));
    }
    if target >= entity_count {
        return Err(KgeError::Contract(format!("target {target} outside {entity_count} entities")));
    }
    Ok(rng
        .sample_distinct(entity_count - 1, k)
        .into_iter()
        .map(|x| if x >= target { x + 1 } else { x })
        .collect())
}

/// Queries with their candidate sets; column 0 of every candidate row is the
/// true target, followed by the sampled negatives.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateBatch {
    pub heads: Vec<usize>,
    pub relation_rows: Vec<usize>,
    pub candidates: Vec<usize>,
    pub width: usize,
}

impl CandidateBatch {
    pub fn sample(queries: &[Query], entity_count: usize, k: usize, rng: &mut Rng) -> Result<Self, KgeError> {
        let mut candidates = Vec::with_capacity(queries.len() * (k + 1));
        for q in queries {
            candidates.push(q.target);
            candidates.extend(sample_negatives(q.target, entity_count, k, rng)?);
        }
        Ok(Self {
            heads: queries.iter().map(|q| q.head).collect(),
            relation_rows: queries.iter().map(|q| q.relation_row).collect(),
            candidates,
            width: k + 1,
        })
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    /// Distinct entities touched by the batch, ascending.
    pub fn entities(&self) -> Vec<usize> {
        let mut e: Vec<usize> = self.heads.iter().chain(&self.candidates).copied().collect();
        e.sort_unstable();
        e.dedup();
        e
    }
}

/// Candidate scores as a `B x (k + 1)` node.
pub fn score_candidates(tape: &mut Tape, ent: Var, rel: Var, batch: &CandidateBatch, gamma: f64) -> Result<Var, KgeError> {
    let q = RotateQuery {
        heads: &batch.heads,
        rels: &batch.relation_rows,
        cands: &batch.candidates,
        k: batch.width,
        gamma,
    };
    Ok(tape.rotate_scores(ent, rel, &q)?)
}

/// Mean over the batch of the cross-entropy of the true target against its
/// candidate set.
pub fn kgc_loss(tape: &mut Tape, ent: Var, rel: Var, batch: &CandidateBatch, gamma: f64) -> Result<Var, KgeError> {
    if batch.is_empty() {
        return Err(KgeError::Empty("kgc_loss on an empty batch".into()));
    }
    let logits = score_candidates(tape, ent, rel, batch, gamma)?;
    Ok(xent_rows(tape, logits, &vec![0; batch.len()])?)
}
