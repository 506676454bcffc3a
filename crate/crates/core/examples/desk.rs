//! Desk-scale run on the synthetic benchmark.
//!
//! `cargo run --release --example desk -- <objective> <imputer> <rate> <seed> [rounds] [batch] [lr] [negatives] [mu] [eta]`

use std::time::Instant;

use fedmkgc::dataset::{build_federated, synth_features, synth_graph, PartitionConfig, SynthFeatureConfig, SynthGraphConfig};
use fedmkgc::fedproto::{Federation, TrainingConfig};
use fedmkgc::numcore::Rng;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let objective = args.get(1).map_or("mmfed3", String::as_str).parse().expect("objective");
    let imputer = args.get(2).map_or("hide", String::as_str).parse().expect("imputer");
    let rate: f64 = args.get(3).map_or(0.5, |s| s.parse().expect("rate"));
    let seed: u64 = args.get(4).map_or(0, |s| s.parse().expect("seed"));
    let rounds: usize = args.get(5).map_or(40, |s| s.parse().expect("rounds"));
    let batch_size: usize = args.get(6).map_or(256, |s| s.parse().expect("batch size"));
    let lr: f64 = args.get(7).map_or(0.01, |s| s.parse().expect("learning rate"));
    let negatives: usize = args.get(8).map_or(64, |s| s.parse().expect("negatives"));
    let mu: Option<f64> = args.get(9).map(|s| s.parse().expect("mu"));
    let eta: Option<f64> = args.get(10).map(|s| s.parse().expect("eta"));

    let root = Rng::new(seed);
    let mut prng = root.substream("partition");
    let mut kg = synth_graph(&SynthGraphConfig::default(), &mut prng).expect("graph");
    synth_features(&mut kg, &SynthFeatureConfig::default(), &mut prng).expect("features");
    let pcfg = PartitionConfig {
        availability_rate: rate,
        ..Default::default()
    };
    let data = build_federated(&kg, &pcfg, &mut prng).expect("partition");

    let mut cfg = TrainingConfig {
        rounds,
        batch_size,
        negatives,
        objective,
        ..Default::default()
    };
    cfg.optimizer.lr = lr;
    cfg.imputer.kind = imputer;
    if let Some(mu) = mu {
        cfg.weights.mu = mu;
    }
    if let Some(eta) = eta {
        cfg.weights.eta = eta;
    }
    let mut fed = Federation::new(&data, cfg, seed).expect("federation");
    let t = Instant::now();
    let out = fed
        .train_until_stop(|r| {
            if r.client == "aggregate" {
                eprintln!("round {} {} mrr {:.4} ({:.1}s)", r.round, r.split, r.mrr, r.wall_seconds);
            }
        })
        .expect("training");
    let test = out.log.iter().rev().find(|r| r.client == "aggregate" && r.split == "test").map_or(0.0, |r| r.mrr);
    println!(
        "{objective} {imputer} r={rate} seed={seed} best_round={:?} valid={:.4} test={test:.4} time={:.1}s",
        out.best_round,
        out.best_valid_mrr,
        t.elapsed().as_secs_f64()
    );
}
