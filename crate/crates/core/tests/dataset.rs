use std::collections::{HashMap, HashSet};

use fedmkgc::dataset::{
    assign_variants, build_federated, generate_missing_mask, partition_by_relation, split_train_valid_test,
    synth_features, synth_graph, ClientFeatures, FeatureVariants, MultimodalKG, PartitionConfig, SynthFeatureConfig,
    SynthGraphConfig, Triple,
};
use fedmkgc::numcore::{Matrix, Rng};
use proptest::prelude::*;

fn random_kg(entities: usize, relations: usize, triples: usize, rng: &mut Rng) -> MultimodalKG {
    MultimodalKG {
        entity_names: (0..entities).map(|i| format!("e{i}")).collect(),
        relation_names: (0..relations).map(|i| format!("r{i}")).collect(),
        triples: (0..triples)
            .map(|_| Triple::new(rng.below(entities), rng.below(relations), rng.below(entities)))
            .collect(),
        visual: FeatureVariants::empty(entities, 0),
        textual: FeatureVariants::empty(entities, 0),
        latent: None,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn relation_partition_is_disjoint_and_covering(
        seed in any::<u64>(),
        relations in 1usize..20,
        clients in 1usize..6,
        triples in 1usize..200,
    ) {
        prop_assume!(clients <= relations);
        let mut rng = Rng::new(seed);
        let kg = random_kg(15, relations, triples, &mut rng);
        let shards = partition_by_relation(&kg, clients, &mut rng).unwrap();
        let mut owners = HashMap::new();
        for (c, s) in shards.iter().enumerate() {
            for &r in &s.relations {
                prop_assert!(owners.insert(r, c).is_none(), "relation {} dealt twice", r);
            }
        }
        prop_assert_eq!(owners.len(), relations);
        let mut all: Vec<Triple> = shards.iter().flat_map(|s| s.triples.iter().copied()).collect();
        let mut expected = kg.triples.clone();
        all.sort_by_key(|t| (t.head, t.relation, t.tail));
        expected.sort_by_key(|t| (t.head, t.relation, t.tail));
        prop_assert_eq!(all, expected);
        for (c, s) in shards.iter().enumerate() {
            prop_assert!(s.triples.iter().all(|t| owners[&t.relation] == c));
            let ents: HashSet<usize> = s.triples.iter().flat_map(|t| [t.head, t.tail]).collect();
            prop_assert_eq!(ents.len(), s.entities.len());
        }
    }

    #[test]
    fn split_keeps_every_triple_once(seed in any::<u64>(), n in 1usize..500) {
        let mut rng = Rng::new(seed);
        let kg = random_kg(30, 4, n, &mut rng);
        let s = split_train_valid_test(&kg.triples, [0.8, 0.1, 0.1], &mut rng).unwrap();
        prop_assert_eq!(s.train.len() + s.valid.len() + s.test.len(), n);
        prop_assert_eq!(s.valid.len(), n / 10);
        prop_assert_eq!(s.test.len(), n / 10);
    }
}

#[test]
fn eight_one_one_split_counts() {
    let mut rng = Rng::new(1);
    let kg = random_kg(50, 3, 1000, &mut rng);
    let s = split_train_valid_test(&kg.triples, [0.8, 0.1, 0.1], &mut rng).unwrap();
    assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (800, 100, 100));
}

fn present(n: usize) -> ClientFeatures {
    ClientFeatures {
        features: Matrix::filled(n, 2, 1.0),
        present: vec![true; n],
    }
}

#[test]
fn mask_rate_is_within_binomial_interval() {
    let n = 10_000;
    for rate in [0.25, 0.5, 0.75] {
        let mask = generate_missing_mask(&mut present(n), rate, &mut Rng::new(2));
        let sigma = (rate * (1.0 - rate) / n as f64).sqrt();
        assert!((mask.rate() - rate).abs() <= 3.0 * sigma, "rate {rate}: {}", mask.rate());
    }
    let half = generate_missing_mask(&mut present(n), 0.5, &mut Rng::new(3));
    assert!((0.485..=0.515).contains(&half.rate()));
    let full = generate_missing_mask(&mut present(n), 1.0, &mut Rng::new(3));
    assert_eq!(full.rate(), 1.0);
}

#[test]
fn modality_availability_is_uncorrelated() {
    let n = 10_000;
    let mut rng = Rng::new(4);
    let a = generate_missing_mask(&mut present(n), 0.5, &mut rng);
    let b = generate_missing_mask(&mut present(n), 0.5, &mut rng);
    let x: Vec<f64> = a.available.iter().map(|&v| v as u8 as f64).collect();
    let y: Vec<f64> = b.available.iter().map(|&v| v as u8 as f64).collect();
    let (mx, my) = (x.iter().sum::<f64>() / n as f64, y.iter().sum::<f64>() / n as f64);
    let cov: f64 = x.iter().zip(&y).map(|(p, q)| (p - mx) * (q - my)).sum();
    let vx: f64 = x.iter().map(|p| (p - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|q| (q - my).powi(2)).sum();
    assert!((cov / (vx * vy).sqrt()).abs() < 0.05);
}

#[test]
fn masked_rows_are_constant_in_the_matrix_form() {
    let mut f = present(50);
    let mask = generate_missing_mask(&mut f, 0.5, &mut Rng::new(5));
    let m = mask.to_matrix();
    for i in 0..50 {
        assert!(m.row(i).iter().all(|&x| x == m.row(i)[0]));
    }
}

#[test]
fn large_concentration_spreads_variants_uniformly() {
    // Chi-square with 3 degrees of freedom; 11.345 is the 1% critical value.
    let holders = 4;
    let n = 10_000;
    let picks = assign_variants(n, holders, 1e6, &mut Rng::new(6));
    let mut counts = vec![0usize; holders];
    for k in picks {
        counts[k] += 1;
    }
    let expected = n as f64 / holders as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    assert!(chi2 < 11.345, "chi-square {chi2} for {counts:?}");
}

#[test]
fn small_concentration_skews_variants() {
    // With a tiny concentration nearly all variants go to one holder.
    let picks = assign_variants(1000, 4, 1e-3, &mut Rng::new(7));
    let mut counts = [0usize; 4];
    for k in picks {
        counts[k] += 1;
    }
    assert!(counts.iter().max().unwrap() > &900, "{counts:?}");
}

#[test]
fn federated_build_is_deterministic_and_consistent() {
    let mut kg = synth_graph(&SynthGraphConfig::default(), &mut Rng::new(8)).unwrap();
    synth_features(&mut kg, &SynthFeatureConfig::default(), &mut Rng::new(9)).unwrap();
    let cfg = PartitionConfig::default();
    let a = build_federated(&kg, &cfg, &mut Rng::new(10)).unwrap();
    let b = build_federated(&kg, &cfg, &mut Rng::new(10)).unwrap();
    assert_eq!(a.clients.len(), 3);
    let total: usize = a.clients.iter().map(|c| c.train.len() + c.valid.len() + c.test.len()).sum();
    assert_eq!(total, kg.triples.len());
    for (x, y) in a.clients.iter().zip(&b.clients) {
        assert_eq!(x.train, y.train);
        assert_eq!(x.visual, y.visual);
        assert_eq!(x.mask_visual, y.mask_visual);
        assert_eq!(x.visual.rows(), x.entities.len());
    }
}

#[test]
fn synthetic_tails_follow_the_latent_rotation() {
    // Held-out structure is predictable: most tails lie close to the
    // rotated head, far closer than a random entity.
    let kg = synth_graph(&SynthGraphConfig::default(), &mut Rng::new(11)).unwrap();
    let latent = kg.latent.as_ref().unwrap();
    let mut by_rel: HashMap<usize, Vec<&Triple>> = HashMap::new();
    for t in &kg.triples {
        by_rel.entry(t.relation).or_default().push(t);
    }
    // The best single rotation per relation and dimension explains tails
    // far better than a shuffled pairing.
    let spread = |pairs: &[(usize, usize)]| -> f64 {
        let k = latent[0].len();
        let mut total = 0.0;
        for d in 0..k {
            let (mut c, mut s) = (0.0, 0.0);
            for &(h, t) in pairs {
                let diff = latent[t][d] - latent[h][d];
                c += diff.cos();
                s += diff.sin();
            }
            total += (c * c + s * s).sqrt() / pairs.len() as f64;
        }
        total / k as f64
    };
    let mut rng = Rng::new(12);
    for ts in by_rel.values() {
        let real: Vec<(usize, usize)> = ts.iter().map(|t| (t.head, t.tail)).collect();
        let fake: Vec<(usize, usize)> = ts.iter().map(|t| (t.head, rng.below(kg.num_entities()))).collect();
        assert!(spread(&real) > spread(&fake) + 0.3, "{} vs {}", spread(&real), spread(&fake));
    }
}
