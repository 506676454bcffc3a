//! The four subcommands.
//!
//! A run directory holds `config.json` (the resolved configuration, seed
//! included), `run.json` (version, config hash, outcome), `metrics.csv`,
//! `partition.json` and `checkpoint/`. Rerunning `train` on its
//! `config.json` reproduces `metrics.csv` apart from the timing column.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use fedmkgc::dataset::{
    build_federated, load_features, load_triples, read_partition, synth_features, synth_graph, write_partition,
    FeatureVariants, FederatedDataset, MultimodalKG, PartitionManifest,
};
use fedmkgc::fedproto::{
    load_checkpoint, save_checkpoint, write_metrics_csv, CheckpointManifest, Federation, MetricRow, SplitKind,
    TrainOutcome,
};
use fedmkgc::numcore::{Matrix, Rng};
use serde::{Deserialize, Serialize};

use crate::config::{DataSource, ExperimentConfig};
use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub best_round: Option<usize>,
    pub best_valid_mrr: f64,
    pub rounds_run: usize,
    pub stopped_early: bool,
}

fn as_variants(m: &Matrix) -> FeatureVariants {
    FeatureVariants {
        dim: m.cols(),
        per_entity: (0..m.rows()).map(|i| vec![m.row(i).to_vec()]).collect(),
    }
}

fn raw_graph(source: &DataSource, rng: &mut Rng) -> Result<MultimodalKG, CliError> {
    match source {
        DataSource::Synthetic { graph, features } => {
            let mut kg = synth_graph(graph, rng)?;
            synth_features(&mut kg, features, rng)?;
            Ok(kg)
        }
        DataSource::Files { triples, visual, textual } => {
            let mut kg = load_triples(triples)?;
            kg.visual = as_variants(&load_features(visual, kg.num_entities())?);
            kg.textual = as_variants(&load_features(textual, kg.num_entities())?);
            Ok(kg)
        }
        DataSource::Partition { .. } => Err(CliError::Config("data is already partitioned".into())),
    }
}

/// The federated dataset a configuration describes, with its manifest.
/// Generation and partitioning draw from the `partition` stream of the
/// root seed.
pub fn dataset(cfg: &ExperimentConfig) -> Result<(FederatedDataset, PartitionManifest), CliError> {
    if let DataSource::Partition { dir } = &cfg.data {
        return Ok(read_partition(dir)?);
    }
    let mut rng = Rng::new(cfg.seed).substream("partition");
    let kg = raw_graph(&cfg.data, &mut rng)?;
    let data = build_federated(&kg, &cfg.partition, &mut rng)?;
    let manifest = PartitionManifest::new(&data, &cfg.partition, cfg.seed);
    Ok((data, manifest))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// The configuration as stored in an output directory, which is its own
/// location.
fn stored(cfg: &ExperimentConfig) -> ExperimentConfig {
    ExperimentConfig {
        out: None,
        ..cfg.clone()
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn partition(cfg: &ExperimentConfig, out: &Path) -> Result<PartitionManifest, CliError> {
    if matches!(cfg.data, DataSource::Partition { .. }) {
        return Err(CliError::Config("partition needs triples or synthetic parameters".into()));
    }
    let (data, manifest) = dataset(cfg)?;
    create_dir(out)?;
    write_partition(out, &data, &manifest)?;
    write_json(&out.join("config.json"), &stored(cfg))?;
    Ok(manifest)
}

fn write_metrics(path: &Path, rows: &[MetricRow]) -> Result<(), CliError> {
    let mut buf = Vec::new();
    write_metrics_csv(&mut buf, rows).expect("writing to memory");
    fs::write(path, buf).map_err(|e| CliError::io(path, e))
}

pub fn train(cfg: &ExperimentConfig, out: &Path) -> Result<(RunManifest, TrainOutcome), CliError> {
    cfg.validate()?;
    let (data, partition) = dataset(cfg)?;
    let mut fed = Federation::new(&data, cfg.training.clone(), cfg.seed)?;
    create_dir(out)?;
    write_json(&out.join("config.json"), &stored(cfg))?;
    write_json(&out.join("partition.json"), &partition)?;
    let outcome = fed.train_until_stop(|r| {
        if r.client == "aggregate" {
            eprintln!("round {:>3} {:<5} mrr {:.4}", r.round, r.split, r.mrr);
        }
    })?;
    write_metrics(&out.join("metrics.csv"), &outcome.log)?;
    let config_hash = cfg.hash();
    let checkpoint = CheckpointManifest {
        round: outcome.best_round.unwrap_or(0),
        seed: cfg.seed,
        config_hash: config_hash.clone(),
        metric_log: outcome.log.clone(),
    };
    save_checkpoint(out.join("checkpoint"), &fed, &checkpoint)?;
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        config_hash,
        best_round: outcome.best_round,
        best_valid_mrr: outcome.best_valid_mrr,
        rounds_run: outcome.rounds_run,
        stopped_early: outcome.stopped_early,
    };
    write_json(&out.join("run.json"), &manifest)?;
    Ok((manifest, outcome))
}

/// Test metrics of a checkpoint, per client and aggregated, written to
/// `eval.csv` under `out` and printed as a table.
pub fn eval(cfg: &ExperimentConfig, checkpoint: &Path, out: &Path) -> Result<Vec<MetricRow>, CliError> {
    cfg.validate()?;
    let text = fs::read_to_string(checkpoint.join("manifest.json")).map_err(|e| CliError::io(checkpoint, e))?;
    let stored: CheckpointManifest = serde_json::from_str(&text)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", checkpoint.join("manifest.json").display())))?;
    let hash = cfg.hash();
    if stored.config_hash != hash {
        return Err(CliError::Config(format!(
            "checkpoint was trained under configuration {} but this configuration hashes to {hash}",
            stored.config_hash
        )));
    }
    let (data, _) = dataset(cfg)?;
    let mut fed = Federation::new(&data, cfg.training.clone(), cfg.seed)?;
    let manifest = load_checkpoint(checkpoint, &mut fed)?;
    let rows = fed.metric_rows(SplitKind::Test, manifest.round, 0.0)?;
    create_dir(out)?;
    write_metrics(&out.join("eval.csv"), &rows)?;
    print_table(&rows);
    Ok(rows)
}

fn print_table(rows: &[MetricRow]) {
    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    let _ = writeln!(w, "{:<10} {:>8} {:>8} {:>8} {:>8}", "client", "hits@1", "hits@3", "hits@10", "mrr");
    for r in rows {
        let _ = writeln!(
            w,
            "{:<10} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            r.client, r.hits1, r.hits3, r.hits10, r.mrr
        );
    }
}

/// One training run per grid point under `out/run_NNN`, plus
/// `ablation.csv` with one row per point.
pub fn ablate(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf, CliError> {
    let points = cfg.sweep.points()?;
    let configs: Vec<ExperimentConfig> = points.iter().map(|p| cfg.at_point(p)).collect();
    for (p, c) in points.iter().zip(&configs) {
        c.validate().map_err(|e| {
            let at: Vec<String> = p.iter().map(|v| format!("{}={}", v.axis(), v.label())).collect();
            CliError::Config(format!("grid point [{}]: {e}", at.join(", ")))
        })?;
    }
    create_dir(out)?;
    let columns = cfg.sweep.columns();
    let mut csv = String::new();
    for c in &columns {
        csv.push_str(c);
        csv.push(',');
    }
    csv.push_str("run,best_round,rounds_run,valid_mrr,hits1,hits3,hits10,mrr\n");
    for (i, (p, c)) in points.iter().zip(&configs).enumerate() {
        let name = format!("run_{i:03}");
        let (manifest, outcome) = train(c, &out.join(&name))?;
        let test = outcome
            .log
            .iter()
            .rfind(|r| r.client == "aggregate" && r.split == "test")
            .cloned();
        for v in p {
            csv.push_str(&v.label());
            csv.push(',');
        }
        let best = manifest.best_round.map_or(String::new(), |r| r.to_string());
        csv.push_str(&format!("{name},{best},{},{}", manifest.rounds_run, manifest.best_valid_mrr));
        match test {
            Some(t) => csv.push_str(&format!(",{},{},{},{}\n", t.hits1, t.hits3, t.hits10, t.mrr)),
            None => csv.push_str(",,,,\n"),
        }
    }
    let path = out.join("ablation.csv");
    fs::write(&path, csv).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}
