//! Checkpoint directories: binary matrices plus a JSON manifest.
//!
//! ```text
//! manifest.json
//! server/{entity,visual,textual}.bin   (float64 payload)
//! client_<id>/param_<k>.bin
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Federation, MetricRow, ProtoError};
use crate::dataset::{read_matrix, write_matrix_exact};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub round: usize,
    pub seed: u64,
    pub config_hash: String,
    pub metric_log: Vec<MetricRow>,
}

pub fn save_checkpoint(dir: impl AsRef<Path>, fed: &Federation, manifest: &CheckpointManifest) -> Result<(), ProtoError> {
    let dir = dir.as_ref();
    let server = dir.join("server");
    fs::create_dir_all(&server)?;
    write_matrix_exact(server.join("entity.bin"), &fed.server.entity)?;
    write_matrix_exact(server.join("visual.bin"), &fed.server.visual)?;
    write_matrix_exact(server.join("textual.bin"), &fed.server.textual)?;
    for c in &fed.clients {
        let cd = dir.join(format!("client_{}", c.id));
        fs::create_dir_all(&cd)?;
        for (k, m) in c.param_values().iter().enumerate() {
            write_matrix_exact(cd.join(format!("param_{k:03}.bin")), m)?;
        }
    }
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(manifest)?)?;
    Ok(())
}

/// Reads a checkpoint into `fed`, which must have been built from the same
/// data and configuration.
pub fn load_checkpoint(dir: impl AsRef<Path>, fed: &mut Federation) -> Result<CheckpointManifest, ProtoError> {
    let dir = dir.as_ref();
    let text = fs::read_to_string(dir.join("manifest.json"))
        .map_err(|e| ProtoError::Checkpoint(format!("{}: {e}", dir.join("manifest.json").display())))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)?;
    let server = dir.join("server");
    let entity = read_matrix(server.join("entity.bin"))?;
    let visual = read_matrix(server.join("visual.bin"))?;
    let textual = read_matrix(server.join("textual.bin"))?;
    if entity.shape() != fed.server.entity.shape()
        || visual.shape() != fed.server.visual.shape()
        || textual.shape() != fed.server.textual.shape()
    {
        return Err(ProtoError::Checkpoint("server tables do not match the configuration".into()));
    }
    fed.server.entity = entity;
    fed.server.visual = visual;
    fed.server.textual = textual;
    fed.server.round = manifest.round;
    for c in &mut fed.clients {
        let cd = dir.join(format!("client_{}", c.id));
        let count = c.param_values().len();
        let values = (0..count)
            .map(|k| read_matrix(cd.join(format!("param_{k:03}.bin"))))
            .collect::<Result<Vec<_>, _>>()?;
        c.set_param_values(values)?;
    }
    Ok(manifest)
}
