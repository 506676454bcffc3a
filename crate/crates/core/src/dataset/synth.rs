//! Synthetic multimodal graphs generated by a latent rotation model.
//!
//! Every entity has a vector of latent phases scattered around the centroid
//! of its group, and every relation a vector of latent rotation angles. A
//! tail is drawn with probability decreasing in the distance between the
//! rotated head and the tail on the unit circles, so held-out triples are
//! predictable from observed ones. Feature type vectors are a fixed random
//! linear image of the latent phases plus entity-level noise, so features
//! carry information about which tails are plausible.

use std::collections::HashSet;
use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use super::{DataError, FeatureVariants, Modality, MultimodalKG, Triple};
use crate::numcore::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthGraphConfig {
    pub entities: usize,
    pub relations: usize,
    pub triples: usize,
    pub groups: usize,
    /// Number of latent phases per entity.
    pub latent_dim: usize,
    /// Standard deviation of an entity's phases around its group centroid.
    pub group_spread: f64,
    /// Softmax temperature over squared latent distances; smaller means
    /// more deterministic tails.
    pub temperature: f64,
}

impl Default for SynthGraphConfig {
    fn default() -> Self {
        Self {
            entities: 300,
            relations: 24,
            triples: 3000,
            groups: 10,
            latent_dim: 4,
            group_spread: 0.5,
            temperature: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthFeatureConfig {
    pub visual_dim: usize,
    pub textual_dim: usize,
    pub variants_per_entity: usize,
    /// Entity-level noise added to the image of the latent phases.
    pub entity_spread: f64,
    /// Spread of variants around the entity's type vector.
    pub variant_noise: f64,
}

impl Default for SynthFeatureConfig {
    fn default() -> Self {
        Self {
            visual_dim: 16,
            textual_dim: 16,
            variants_per_entity: 3,
            entity_spread: 0.1,
            variant_noise: 0.1,
        }
    }
}

fn circle_distance(a: &[f64], rot: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(rot).zip(b).map(|((x, r), y)| 2.0 - 2.0 * (x + r - y).cos()).sum()
}

/// Generates the triple structure of a synthetic graph (no features).
pub fn synth_graph(cfg: &SynthGraphConfig, rng: &mut Rng) -> Result<MultimodalKG, DataError> {
    if cfg.entities < 2 || cfg.relations == 0 || cfg.groups == 0 || cfg.groups > cfg.entities || cfg.latent_dim == 0 {
        return Err(DataError::Config(format!(
            "synthetic graph needs >= 2 entities, >= 1 relation, 1..=entities groups and a latent dimension, got {cfg:?}"
        )));
    }
    if !(cfg.temperature.is_finite() && cfg.temperature > 0.0 && cfg.group_spread >= 0.0) {
        return Err(DataError::Config(format!(
            "temperature must be positive and group_spread non-negative, got {cfg:?}"
        )));
    }
    let n = cfg.entities;
    let k = cfg.latent_dim;
    let centroids: Vec<Vec<f64>> = (0..cfg.groups).map(|_| (0..k).map(|_| TAU * rng.uniform()).collect()).collect();
    let latent: Vec<Vec<f64>> = (0..n)
        .map(|e| centroids[e % cfg.groups].iter().map(|c| c + cfg.group_spread * rng.normal()).collect())
        .collect();
    let rotations: Vec<Vec<f64>> = (0..cfg.relations).map(|_| (0..k).map(|_| TAU * rng.uniform()).collect()).collect();

    let mut seen = HashSet::new();
    let mut triples = Vec::with_capacity(cfg.triples);
    let max_attempts = cfg.triples * 50;
    let mut attempts = 0;
    let mut weights = vec![0.0; n];
    while triples.len() < cfg.triples && attempts < max_attempts {
        attempts += 1;
        let r = rng.below(cfg.relations);
        let h = rng.below(n);
        let dist: Vec<f64> = latent.iter().map(|t| circle_distance(&latent[h], &rotations[r], t)).collect();
        let lo = dist.iter().cloned().fold(f64::INFINITY, f64::min);
        for (w, d) in weights.iter_mut().zip(&dist) {
            *w = (-(d - lo) / cfg.temperature).exp();
        }
        weights[h] = 0.0;
        let total: f64 = weights.iter().sum();
        let mut u = rng.uniform() * total;
        let mut t = n - 1;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                t = i;
                break;
            }
            u -= w;
        }
        if t == h {
            continue;
        }
        let tr = Triple::new(h, r, t);
        if seen.insert(tr) {
            triples.push(tr);
        }
    }
    if triples.is_empty() {
        return Err(DataError::EmptyGraph);
    }
    Ok(MultimodalKG {
        entity_names: (0..n).map(|i| format!("e{i}")).collect(),
        relation_names: (0..cfg.relations).map(|i| format!("r{i}")).collect(),
        triples,
        visual: FeatureVariants::empty(n, 0),
        textual: FeatureVariants::empty(n, 0),
        latent: Some(latent),
    })
}

/// Fills `kg`'s feature variants with synthetic vectors.
///
/// Each entity gets a type vector per modality: a random linear image of
/// its latent cosines and sines when the graph carries latent phases, a
/// standard normal draw otherwise. Variants are the type vector plus small
/// Gaussian noise, so variants of one entity are closer to each other than
/// to other entities' variants.
pub fn synth_features(kg: &mut MultimodalKG, cfg: &SynthFeatureConfig, rng: &mut Rng) -> Result<(), DataError> {
    if cfg.visual_dim == 0 || cfg.textual_dim == 0 {
        return Err(DataError::Config("feature dimensions must be >= 1".into()));
    }
    let n = kg.num_entities();
    for m in Modality::ALL {
        let dim = match m {
            Modality::Visual => cfg.visual_dim,
            Modality::Textual => cfg.textual_dim,
        };
        let mut fv = FeatureVariants::empty(n, dim);
        let projection: Option<Vec<Vec<f64>>> = kg.latent.as_ref().map(|lat| {
            let width = 2 * lat.first().map_or(0, Vec::len);
            let scale = 1.0 / (width.max(1) as f64 / 2.0).sqrt();
            (0..dim).map(|_| (0..width).map(|_| scale * rng.normal()).collect()).collect()
        });
        for e in 0..n {
            let ty: Vec<f64> = match (&projection, kg.latent.as_ref()) {
                (Some(proj), Some(lat)) => {
                    let basis: Vec<f64> = lat[e].iter().map(|p| p.cos()).chain(lat[e].iter().map(|p| p.sin())).collect();
                    proj.iter()
                        .map(|row| row.iter().zip(&basis).map(|(a, b)| a * b).sum::<f64>() + cfg.entity_spread * rng.normal())
                        .collect()
                }
                _ => (0..dim).map(|_| rng.normal()).collect(),
            };
            fv.per_entity[e] = (0..cfg.variants_per_entity)
                .map(|_| ty.iter().map(|x| x + cfg.variant_noise * rng.normal()).collect())
                .collect();
        }
        *kg.features_mut(m) = fv;
    }
    Ok(())
}
