//! Multimodal knowledge graphs, synthetic generation, federated partitioning
//! and on-disk formats.

mod io;
mod kg;
mod partition;
mod shard;
mod synth;

pub use io::{
    load_features, read_matrix, read_partition, write_matrix, write_matrix_exact, write_partition, ClientStats,
    PartitionManifest,
};
pub use kg::{load_triples, FeatureVariants, Modality, MultimodalKG, Triple};
pub use partition::{
    assign_variants, generate_missing_mask, partition_by_relation, partition_multimodal_dirichlet,
    split_train_valid_test, ClientFeatures, ModalityMask, PartitionConfig, RelationShard, Split,
    PADDING_VARIANCE,
};
pub use shard::{build_federated, ClientShard, FederatedDataset};
pub use synth::{synth_features, synth_graph, SynthFeatureConfig, SynthGraphConfig};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("graph has no triples")]
    EmptyGraph,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
