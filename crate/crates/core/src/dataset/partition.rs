//! Non-IID federated partitioning.
//!
//! Three procedures build a federated benchmark from one graph:
//! triples are dealt to clients by relation, each entity's feature variants
//! are spread over the clients holding that entity with Dirichlet
//! proportions, and per-client availability masks are drawn Bernoulli.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{DataError, Modality, MultimodalKG, Triple};
use crate::numcore::{Matrix, Rng};

/// Variance of the Gaussian padding written into unavailable feature rows.
pub const PADDING_VARIANCE: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionConfig {
    pub num_clients: usize,
    pub dirichlet_alpha: f64,
    /// Probability that an entity's modality is available on a client.
    pub availability_rate: f64,
    /// Train/valid/test fractions.
    pub split: [f64; 3],
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            num_clients: 3,
            dirichlet_alpha: 0.1,
            availability_rate: 0.5,
            split: [0.8, 0.1, 0.1],
        }
    }
}

impl PartitionConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.num_clients == 0 {
            return Err(DataError::Config("num_clients must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.availability_rate) {
            return Err(DataError::Config(format!(
                "availability_rate {} outside [0, 1]",
                self.availability_rate
            )));
        }
        if !(self.dirichlet_alpha > 0.0) {
            return Err(DataError::Config(format!(
                "dirichlet_alpha must be > 0, got {}",
                self.dirichlet_alpha
            )));
        }
        check_ratios(&self.split)
    }
}

fn check_ratios(r: &[f64; 3]) -> Result<(), DataError> {
    if r.iter().any(|&x| x < 0.0) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DataError::Config(format!("split ratios {r:?} must be >= 0 and sum to 1")));
    }
    Ok(())
}

/// One client's slice of the graph before splitting, in global indices.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationShard {
    pub relations: Vec<usize>,
    pub triples: Vec<Triple>,
    /// Entities appearing in `triples`, ascending.
    pub entities: Vec<usize>,
}

/// Deals shuffled relations round-robin to clients; every triple goes to the
/// client owning its relation.
pub fn partition_by_relation(kg: &MultimodalKG, num_clients: usize, rng: &mut Rng) -> Result<Vec<RelationShard>, DataError> {
    if num_clients == 0 || num_clients > kg.num_relations() {
        return Err(DataError::Config(format!(
            "cannot deal {} relations to {num_clients} clients",
            kg.num_relations()
        )));
    }
    let mut rels: Vec<usize> = (0..kg.num_relations()).collect();
    rng.shuffle(&mut rels);
    let mut owner = vec![0; kg.num_relations()];
    let mut shards: Vec<RelationShard> = (0..num_clients)
        .map(|_| RelationShard {
            relations: Vec::new(),
            triples: Vec::new(),
            entities: Vec::new(),
        })
        .collect();
    for (i, &r) in rels.iter().enumerate() {
        owner[r] = i % num_clients;
        shards[i % num_clients].relations.push(r);
    }
    for t in &kg.triples {
        shards[owner[t.relation]].triples.push(*t);
    }
    for s in &mut shards {
        s.relations.sort_unstable();
        let ents: BTreeSet<usize> = s.triples.iter().flat_map(|t| [t.head, t.tail]).collect();
        s.entities = ents.into_iter().collect();
    }
    Ok(shards)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Split {
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
}

/// Uniform shuffle, then contiguous train/valid/test blocks. Valid and test
/// sizes are rounded down; the residue goes to train.
pub fn split_train_valid_test(triples: &[Triple], ratios: [f64; 3], rng: &mut Rng) -> Result<Split, DataError> {
    check_ratios(&ratios)?;
    if triples.is_empty() {
        return Err(DataError::Config("cannot split an empty shard".into()));
    }
    let n = triples.len();
    let mut order = triples.to_vec();
    rng.shuffle(&mut order);
    let n_valid = (n as f64 * ratios[1] + 1e-9).floor() as usize;
    let n_test = (n as f64 * ratios[2] + 1e-9).floor() as usize;
    let n_train = n - n_valid - n_test;
    let test = order.split_off(n_train + n_valid);
    let valid = order.split_off(n_train);
    Ok(Split {
        train: order,
        valid,
        test,
    })
}

/// One modality's features for one client, in the client's local entity
/// order. `present[i]` is false when no variant of that entity exists at all.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientFeatures {
    pub features: Matrix,
    pub present: Vec<bool>,
}

/// Holder index for each of `variants` variants, drawn with one set of
/// Dirichlet(`alpha`) proportions over `holders` holders.
pub fn assign_variants(variants: usize, holders: usize, alpha: f64, rng: &mut Rng) -> Vec<usize> {
    let props = if holders == 1 {
        vec![1.0]
    } else {
        rng.dirichlet(alpha, holders)
    };
    (0..variants).map(|_| rng.categorical(&props)).collect()
}

/// Spreads each entity's variants over the clients that hold the entity with
/// Dirichlet(`alpha`) proportions; a client's vector is the mean of the
/// variants it received, or one uniformly drawn variant if it received none.
pub fn partition_multimodal_dirichlet(
    kg: &MultimodalKG,
    modality: Modality,
    client_entities: &[Vec<usize>],
    alpha: f64,
    rng: &mut Rng,
) -> Result<Vec<ClientFeatures>, DataError> {
    if !(alpha > 0.0) {
        return Err(DataError::Config(format!("dirichlet_alpha must be > 0, got {alpha}")));
    }
    let fv = kg.features(modality);
    let dim = fv.dim;
    let mut holders: Vec<Vec<(usize, usize)>> = vec![Vec::new(); kg.num_entities()];
    for (c, ents) in client_entities.iter().enumerate() {
        for (local, &g) in ents.iter().enumerate() {
            holders[g].push((c, local));
        }
    }
    let mut out: Vec<ClientFeatures> = client_entities
        .iter()
        .map(|ents| ClientFeatures {
            features: Matrix::zeros(ents.len(), dim),
            present: vec![false; ents.len()],
        })
        .collect();
    for (g, hold) in holders.iter().enumerate() {
        if hold.is_empty() {
            continue;
        }
        let variants = fv.per_entity.get(g).map(Vec::as_slice).unwrap_or(&[]);
        if variants.is_empty() {
            continue;
        }
        let mut sums = vec![vec![0.0; dim]; hold.len()];
        let mut counts = vec![0usize; hold.len()];
        for (v, k) in variants.iter().zip(assign_variants(variants.len(), hold.len(), alpha, rng)) {
            counts[k] += 1;
            for (s, x) in sums[k].iter_mut().zip(v) {
                *s += x;
            }
        }
        for (k, &(c, local)) in hold.iter().enumerate() {
            let row = out[c].features.row_mut(local);
            if counts[k] > 0 {
                for (o, s) in row.iter_mut().zip(&sums[k]) {
                    *o = s / counts[k] as f64;
                }
            } else {
                row.copy_from_slice(&variants[rng.below(variants.len())]);
            }
            out[c].present[local] = true;
        }
    }
    Ok(out)
}

/// Per-entity availability of one modality on one client. As a matrix every
/// row is all ones or all zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalityMask {
    pub available: Vec<bool>,
    pub dim: usize,
}

impl ModalityMask {
    pub fn all(n: usize, dim: usize, available: bool) -> Self {
        Self {
            available: vec![available; n],
            dim,
        }
    }

    pub fn to_matrix(&self) -> Matrix {
        self.to_matrix_width(self.dim)
    }

    /// The mask broadcast to `width` columns.
    pub fn to_matrix_width(&self, width: usize) -> Matrix {
        let mut m = Matrix::zeros(self.available.len(), width);
        for (i, &a) in self.available.iter().enumerate() {
            if a {
                m.row_mut(i).fill(1.0);
            }
        }
        m
    }

    pub fn from_matrix(m: &Matrix) -> Result<Self, DataError> {
        let mut available = Vec::with_capacity(m.rows());
        for i in 0..m.rows() {
            let row = m.row(i);
            let first = row.first().copied().unwrap_or(0.0);
            if (first != 0.0 && first != 1.0) || row.iter().any(|&x| x != first) {
                return Err(DataError::Format(format!("mask row {i} is not constant 0 or 1")));
            }
            available.push(first == 1.0);
        }
        Ok(Self {
            available,
            dim: m.cols(),
        })
    }

    pub fn rate(&self) -> f64 {
        if self.available.is_empty() {
            return 0.0;
        }
        self.available.iter().filter(|&&a| a).count() as f64 / self.available.len() as f64
    }
}

/// Draws Bernoulli(`rate`) availability per entity (forced off where no
/// feature exists) and overwrites unavailable rows with N(0, 0.01) padding.
pub fn generate_missing_mask(features: &mut ClientFeatures, rate: f64, rng: &mut Rng) -> ModalityMask {
    let n = features.present.len();
    let dim = features.features.cols();
    let pad_std = PADDING_VARIANCE.sqrt();
    let mut available = Vec::with_capacity(n);
    for i in 0..n {
        let a = rng.bernoulli(rate) && features.present[i];
        if !a {
            for x in features.features.row_mut(i) {
                *x = pad_std * rng.normal();
            }
        }
        available.push(a);
    }
    ModalityMask { available, dim }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::FeatureVariants;

    fn kg_with_relations(n_rel: usize) -> MultimodalKG {
        let mut kg = MultimodalKG::default();
        kg.entity_names = (0..10).map(|i| format!("e{i}")).collect();
        kg.relation_names = (0..n_rel).map(|i| format!("r{i}")).collect();
        for r in 0..n_rel {
            for h in 0..4 {
                kg.triples.push(Triple::new(h, r, (h + r + 1) % 10));
            }
        }
        kg
    }

    #[test]
    fn single_client_gets_everything() {
        let kg = kg_with_relations(5);
        let s = partition_by_relation(&kg, 1, &mut Rng::new(0)).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].triples, kg.triples);
        assert_eq!(s[0].relations, (0..5).collect::<Vec<_>>());
    }

    #[test]
    fn relations_237_over_3_clients_average_79() {
        let kg = kg_with_relations(237);
        let s = partition_by_relation(&kg, 3, &mut Rng::new(1)).unwrap();
        let avg = s.iter().map(|x| x.relations.len()).sum::<usize>() as f64 / 3.0;
        assert_eq!(avg, 79.0);
    }

    #[test]
    fn each_triple_lands_in_exactly_one_shard() {
        let kg = kg_with_relations(7);
        let shards = partition_by_relation(&kg, 3, &mut Rng::new(2)).unwrap();
        let total: usize = shards.iter().map(|s| s.triples.len()).sum();
        assert_eq!(total, kg.triples.len());
        for t in &kg.triples {
            let n = shards.iter().filter(|s| s.triples.contains(t)).count();
            assert_eq!(n, 1);
        }
        for s in &shards {
            assert!(s.triples.iter().all(|t| s.relations.contains(&t.relation)));
        }
    }

    #[test]
    fn too_many_clients_is_config_error() {
        let kg = kg_with_relations(2);
        assert!(matches!(
            partition_by_relation(&kg, 3, &mut Rng::new(0)),
            Err(DataError::Config(_))
        ));
    }

    #[test]
    fn split_examples() {
        let ts: Vec<Triple> = (0..10).map(|i| Triple::new(i, 0, i + 1)).collect();
        let s = split_train_valid_test(&ts, [0.8, 0.1, 0.1], &mut Rng::new(3)).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (8, 1, 1));
        let s = split_train_valid_test(&ts[..1], [0.8, 0.1, 0.1], &mut Rng::new(3)).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (1, 0, 0));
        let a = split_train_valid_test(&ts, [0.8, 0.1, 0.1], &mut Rng::new(4)).unwrap();
        let b = split_train_valid_test(&ts, [0.8, 0.1, 0.1], &mut Rng::new(4)).unwrap();
        assert_eq!(a, b);
        assert!(split_train_valid_test(&ts, [0.8, 0.1, 0.2], &mut Rng::new(4)).is_err());
    }

    #[test]
    fn one_client_receives_mean_of_all_variants() {
        let mut kg = kg_with_relations(1);
        kg.visual = FeatureVariants {
            dim: 2,
            per_entity: vec![vec![vec![1.0, 2.0], vec![3.0, 6.0]]; 10],
        };
        let out = partition_multimodal_dirichlet(&kg, Modality::Visual, &[vec![0, 3]], 0.1, &mut Rng::new(0)).unwrap();
        assert_eq!(out[0].features.row(0), &[2.0, 4.0]);
        assert_eq!(out[0].features.row(1), &[2.0, 4.0]);
        assert!(out[0].present.iter().all(|&p| p));
    }

    #[test]
    fn client_without_variants_falls_back_to_one() {
        let mut kg = kg_with_relations(1);
        kg.visual = FeatureVariants {
            dim: 1,
            per_entity: vec![vec![vec![5.0]]; 10],
        };
        // One variant, two holders: exactly one holder is assigned it, the
        // other falls back to the same single variant.
        let out = partition_multimodal_dirichlet(&kg, Modality::Visual, &[vec![0], vec![0]], 0.1, &mut Rng::new(0)).unwrap();
        assert_eq!(out[0].features.get(0, 0), 5.0);
        assert_eq!(out[1].features.get(0, 0), 5.0);
    }

    #[test]
    fn entity_without_variants_is_absent() {
        let mut kg = kg_with_relations(1);
        kg.visual = FeatureVariants::empty(10, 3);
        let out = partition_multimodal_dirichlet(&kg, Modality::Visual, &[vec![1]], 0.1, &mut Rng::new(0)).unwrap();
        assert_eq!(out[0].present, vec![false]);
        assert!(partition_multimodal_dirichlet(&kg, Modality::Visual, &[vec![1]], 0.0, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn full_rate_keeps_everything() {
        let mut f = ClientFeatures {
            features: Matrix::filled(4, 3, 2.0),
            present: vec![true; 4],
        };
        let m = generate_missing_mask(&mut f, 1.0, &mut Rng::new(0));
        assert_eq!(m.to_matrix(), Matrix::filled(4, 3, 1.0));
        assert_eq!(f.features, Matrix::filled(4, 3, 2.0));
    }

    #[test]
    fn masked_rows_are_padded_small() {
        let mut f = ClientFeatures {
            features: Matrix::filled(200, 4, 10.0),
            present: vec![true; 200],
        };
        let m = generate_missing_mask(&mut f, 0.5, &mut Rng::new(1));
        for (i, &a) in m.available.iter().enumerate() {
            let row = f.features.row(i);
            if a {
                assert!(row.iter().all(|&x| x == 10.0));
            } else {
                assert!(row.iter().all(|&x| x.abs() < 1.0));
            }
        }
    }

    #[test]
    fn non_constant_mask_row_is_rejected() {
        let m = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        assert!(ModalityMask::from_matrix(&m).is_err());
    }
}
