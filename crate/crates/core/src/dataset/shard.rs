//! Per-client shards in local index space.

use super::{
    generate_missing_mask, partition_by_relation, partition_multimodal_dirichlet,
    split_train_valid_test, DataError, Modality, ModalityMask, MultimodalKG, PartitionConfig,
    Triple,
};
use crate::numcore::{Matrix, Rng};

/// One client's data. Triples use local entity and relation indices;
/// `entities[i]` and `relations[j]` give the global ids.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientShard {
    pub client_id: usize,
    pub entities: Vec<usize>,
    pub relations: Vec<usize>,
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    pub visual: Matrix,
    pub textual: Matrix,
    pub mask_visual: ModalityMask,
    pub mask_textual: ModalityMask,
}

impl ClientShard {
    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn features(&self, m: Modality) -> &Matrix {
        match m {
            Modality::Visual => &self.visual,
            Modality::Textual => &self.textual,
        }
    }

    pub fn mask(&self, m: Modality) -> &ModalityMask {
        match m {
            Modality::Visual => &self.mask_visual,
            Modality::Textual => &self.mask_textual,
        }
    }

    /// All triples of the shard, in train, valid, test order.
    pub fn all_triples(&self) -> impl Iterator<Item = &Triple> {
        self.train.iter().chain(&self.valid).chain(&self.test)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FederatedDataset {
    pub entity_names: Vec<String>,
    pub relation_names: Vec<String>,
    pub visual_dim: usize,
    pub textual_dim: usize,
    pub clients: Vec<ClientShard>,
}

impl FederatedDataset {
    pub fn num_entities(&self) -> usize {
        self.entity_names.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relation_names.len()
    }
}

fn round_f32(m: &mut Matrix) {
    m.data_mut().iter_mut().for_each(|x| *x = *x as f32 as f64);
}

/// Runs the relation partition, the per-client split, the Dirichlet feature
/// assignment and the availability masks, all drawn from `rng`.
///
/// Features are rounded to `f32` precision so a write/read cycle through the
/// binary format is lossless.
pub fn build_federated(kg: &MultimodalKG, cfg: &PartitionConfig, rng: &mut Rng) -> Result<FederatedDataset, DataError> {
    cfg.validate()?;
    let shards = partition_by_relation(kg, cfg.num_clients, rng)?;
    let client_entities: Vec<Vec<usize>> = shards.iter().map(|s| s.entities.clone()).collect();
    let mut feats = Vec::new();
    for m in Modality::ALL {
        feats.push(partition_multimodal_dirichlet(
            kg,
            m,
            &client_entities,
            cfg.dirichlet_alpha,
            rng,
        )?);
    }
    let textual_feats = feats.pop().expect("two modalities");
    let visual_feats = feats.pop().expect("two modalities");

    let mut clients = Vec::with_capacity(shards.len());
    for (c, ((shard, mut fv), mut fd)) in shards
        .into_iter()
        .zip(visual_feats)
        .zip(textual_feats)
        .enumerate()
    {
        let mut ent_local = vec![usize::MAX; kg.num_entities()];
        for (i, &g) in shard.entities.iter().enumerate() {
            ent_local[g] = i;
        }
        let mut rel_local = vec![usize::MAX; kg.num_relations()];
        for (j, &g) in shard.relations.iter().enumerate() {
            rel_local[g] = j;
        }
        let local: Vec<Triple> = shard
            .triples
            .iter()
            .map(|t| Triple::new(ent_local[t.head], rel_local[t.relation], ent_local[t.tail]))
            .collect();
        let split = if local.is_empty() {
            Default::default()
        } else {
            split_train_valid_test(&local, cfg.split, rng)?
        };
        let mask_visual = generate_missing_mask(&mut fv, cfg.availability_rate, rng);
        let mask_textual = generate_missing_mask(&mut fd, cfg.availability_rate, rng);
        round_f32(&mut fv.features);
        round_f32(&mut fd.features);
        clients.push(ClientShard {
            client_id: c,
            entities: shard.entities,
            relations: shard.relations,
            train: split.train,
            valid: split.valid,
            test: split.test,
            visual: fv.features,
            textual: fd.features,
            mask_visual,
            mask_textual,
        });
    }
    Ok(FederatedDataset {
        entity_names: kg.entity_names.clone(),
        relation_names: kg.relation_names.clone(),
        visual_dim: kg.visual.dim,
        textual_dim: kg.textual.dim,
        clients,
    })
}
