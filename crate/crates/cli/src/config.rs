//! Experiment configuration documents.
//!
//! One JSON document describes where the graph comes from, how it is
//! partitioned, how it is trained and, for `ablate`, which axes to sweep.
//! Unknown keys are rejected at every level.

use std::fs;
use std::path::{Path, PathBuf};

use fedmkgc::dataset::{PartitionConfig, SynthFeatureConfig, SynthGraphConfig};
use fedmkgc::fedproto::TrainingConfig;
use fedmkgc::fusion::FusionKind;
use fedmkgc::hide::{ImputerKind, ReconKind};
use fedmkgc::objectives::ObjectiveKind;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Latent-rotation generator with correlated features.
    Synthetic {
        #[serde(default)]
        graph: SynthGraphConfig,
        #[serde(default)]
        features: SynthFeatureConfig,
    },
    /// A tab-separated triple file and one feature matrix per modality whose
    /// rows follow the order in which entities first appear in the triples.
    Files {
        triples: PathBuf,
        visual: PathBuf,
        textual: PathBuf,
    },
    /// A directory written by `partition`.
    Partition { dir: PathBuf },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic {
            graph: SynthGraphConfig::default(),
            features: SynthFeatureConfig::default(),
        }
    }
}

/// Axes of an ablation grid. An empty axis is not swept.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Sweep {
    pub availability_rate: Vec<f64>,
    pub fusion: Vec<FusionKind>,
    pub imputer: Vec<ImputerKind>,
    pub objective: Vec<ObjectiveKind>,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub eta: Vec<f64>,
    pub steps: Vec<usize>,
    pub network: Vec<ReconKind>,
}

/// One value on one axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AxisValue {
    Rate(f64),
    Fusion(FusionKind),
    Imputer(ImputerKind),
    Objective(ObjectiveKind),
    Lambda(f64),
    Mu(f64),
    Eta(f64),
    Steps(usize),
    Network(ReconKind),
}

impl AxisValue {
    pub fn axis(&self) -> &'static str {
        match self {
            AxisValue::Rate(_) => "availability_rate",
            AxisValue::Fusion(_) => "fusion",
            AxisValue::Imputer(_) => "imputer",
            AxisValue::Objective(_) => "objective",
            AxisValue::Lambda(_) => "lambda",
            AxisValue::Mu(_) => "mu",
            AxisValue::Eta(_) => "eta",
            AxisValue::Steps(_) => "steps",
            AxisValue::Network(_) => "network",
        }
    }

    pub fn label(&self) -> String {
        match self {
            AxisValue::Rate(v) | AxisValue::Lambda(v) | AxisValue::Mu(v) | AxisValue::Eta(v) => v.to_string(),
            AxisValue::Fusion(k) => k.to_string(),
            AxisValue::Imputer(k) => k.to_string(),
            AxisValue::Objective(k) => k.to_string(),
            AxisValue::Steps(n) => n.to_string(),
            AxisValue::Network(k) => k.to_string(),
        }
    }

    fn apply(&self, cfg: &mut ExperimentConfig) {
        let t = &mut cfg.training;
        match *self {
            AxisValue::Rate(v) => cfg.partition.availability_rate = v,
            AxisValue::Fusion(k) => t.fusion = k,
            AxisValue::Imputer(k) => t.imputer.kind = k,
            AxisValue::Objective(k) => t.objective = k,
            AxisValue::Lambda(v) => t.weights.lambda = v,
            AxisValue::Mu(v) => t.weights.mu = v,
            AxisValue::Eta(v) => t.weights.eta = v,
            AxisValue::Steps(n) => t.imputer.schedule.steps = n,
            AxisValue::Network(k) => t.imputer.network = k,
        }
    }
}

impl Sweep {
    fn axes(&self) -> Vec<Vec<AxisValue>> {
        let axes = vec![
            self.availability_rate.iter().map(|&v| AxisValue::Rate(v)).collect::<Vec<_>>(),
            self.fusion.iter().map(|&k| AxisValue::Fusion(k)).collect(),
            self.imputer.iter().map(|&k| AxisValue::Imputer(k)).collect(),
            self.objective.iter().map(|&k| AxisValue::Objective(k)).collect(),
            self.lambda.iter().map(|&v| AxisValue::Lambda(v)).collect(),
            self.mu.iter().map(|&v| AxisValue::Mu(v)).collect(),
            self.eta.iter().map(|&v| AxisValue::Eta(v)).collect(),
            self.steps.iter().map(|&n| AxisValue::Steps(n)).collect(),
            self.network.iter().map(|&k| AxisValue::Network(k)).collect(),
        ];
        axes.into_iter().filter(|a| !a.is_empty()).collect()
    }

    /// Names of the swept axes, in column order.
    pub fn columns(&self) -> Vec<&'static str> {
        self.axes().iter().map(|a| a[0].axis()).collect()
    }

    /// Cartesian product of the non-empty axes, last axis fastest. An empty
    /// sweep yields one point with no values.
    pub fn points(&self) -> Result<Vec<Vec<AxisValue>>, CliError> {
        let axes = self.axes();
        for axis in &axes {
            for (i, v) in axis.iter().enumerate() {
                if axis[..i].contains(v) {
                    return Err(CliError::Config(format!("sweep axis {} repeats {}", v.axis(), v.label())));
                }
            }
        }
        let mut points: Vec<Vec<AxisValue>> = vec![Vec::new()];
        for axis in axes {
            points = points
                .into_iter()
                .flat_map(|p| {
                    axis.iter().map(move |v| {
                        let mut q = p.clone();
                        q.push(*v);
                        q
                    })
                })
                .collect();
        }
        Ok(points)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub partition: PartitionConfig,
    pub training: TrainingConfig,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub sweep: Sweep,
}

/// The parts of a configuration that determine results.
#[derive(Serialize)]
struct Fingerprint<'a> {
    data: &'a DataSource,
    partition: &'a PartitionConfig,
    training: &'a TrainingConfig,
    seed: u64,
}

impl ExperimentConfig {
    /// Reads a document and resolves relative data paths against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut cfg.data {
            DataSource::Synthetic { .. } => {}
            DataSource::Files { triples, visual, textual } => {
                resolve(triples);
                resolve(visual);
                resolve(textual);
            }
            DataSource::Partition { dir } => resolve(dir),
        }
        if let Some(out) = &mut cfg.out {
            resolve(out);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.training.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.partition.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    /// Copy with one grid point applied and the sweep cleared.
    pub fn at_point(&self, point: &[AxisValue]) -> Self {
        let mut cfg = self.clone();
        cfg.sweep = Sweep::default();
        for v in point {
            v.apply(&mut cfg);
        }
        cfg
    }

    /// SHA-256 over the result-determining fields, as lowercase hex.
    pub fn hash(&self) -> String {
        let fp = Fingerprint {
            data: &self.data,
            partition: &self.partition,
            training: &self.training,
            seed: self.seed,
        };
        let bytes = serde_json::to_vec(&fp).expect("configuration serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}
