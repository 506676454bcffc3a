//! Binary matrix files and the partition directory layout.
//!
//! Matrix files are little-endian: the magic `FMKG`, a `u32` version,
//! `u32` rows, `u32` cols, then `rows * cols` values row-major: `f32` for
//! version 1, `f64` for version 2.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClientShard, DataError, FederatedDataset, ModalityMask, PartitionConfig, Triple};
use crate::numcore::Matrix;

const MAGIC: &[u8; 4] = b"FMKG";
/// float32 payload, used for feature files.
const VERSION_F32: u32 = 1;
/// float64 payload, used where values must survive a round trip exactly.
const VERSION_F64: u32 = 2;
const HEADER_LEN: usize = 16;

fn encode(m: &Matrix, version: u32) -> Result<Vec<u8>, DataError> {
    let width = if version == VERSION_F64 { 8 } else { 4 };
    let mut buf = Vec::with_capacity(HEADER_LEN + width * m.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&version.to_le_bytes());
    for n in [m.rows(), m.cols()] {
        let n = u32::try_from(n).map_err(|_| DataError::Format(format!("dimension {n} exceeds u32")))?;
        buf.extend_from_slice(&n.to_le_bytes());
    }
    for &x in m.data() {
        if version == VERSION_F64 {
            buf.extend_from_slice(&x.to_le_bytes());
        } else {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    Ok(buf)
}

/// Writes `m` with a float32 payload.
pub fn write_matrix(path: impl AsRef<Path>, m: &Matrix) -> Result<(), DataError> {
    fs::write(path, encode(m, VERSION_F32)?)?;
    Ok(())
}

/// Writes `m` with a float64 payload; [`read_matrix`] restores it bit for bit.
pub fn write_matrix_exact(path: impl AsRef<Path>, m: &Matrix) -> Result<(), DataError> {
    fs::write(path, encode(m, VERSION_F64)?)?;
    Ok(())
}

/// Reads either payload width.
pub fn read_matrix(path: impl AsRef<Path>) -> Result<Matrix, DataError> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let fail = |msg: String| DataError::Format(format!("{}: {msg}", path.display()));
    if bytes.len() < HEADER_LEN {
        return Err(fail(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(fail("bad magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let width = match word(4) {
        VERSION_F32 => 4,
        VERSION_F64 => 8,
        v => return Err(fail(format!("unsupported version {v}"))),
    };
    let (rows, cols) = (word(8) as usize, word(12) as usize);
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(width))
        .ok_or_else(|| fail("dimension overflow".into()))?;
    if bytes.len() - HEADER_LEN != expected {
        return Err(fail(format!(
            "{rows}x{cols} needs {expected} payload bytes, found {}",
            bytes.len() - HEADER_LEN
        )));
    }
    let payload = &bytes[HEADER_LEN..];
    let data = if width == 8 {
        payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect()
    } else {
        payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect()
    };
    Matrix::from_vec(rows, cols, data).map_err(|e| fail(e.to_string()))
}

/// Reads a feature matrix and checks it has one row per entity.
pub fn load_features(path: impl AsRef<Path>, entities: usize) -> Result<Matrix, DataError> {
    let m = read_matrix(&path)?;
    if m.rows() != entities {
        return Err(DataError::Format(format!(
            "{}: {} rows for {entities} entities",
            path.as_ref().display(),
            m.rows()
        )));
    }
    Ok(m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientStats {
    pub client_id: usize,
    pub entities: usize,
    pub relations: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub visual_available: f64,
    pub textual_available: f64,
}

/// Summary written next to a partition, with dataset-statistics columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionManifest {
    pub seed: u64,
    pub num_clients: usize,
    pub dirichlet_alpha: f64,
    pub availability_rate: f64,
    pub split: [f64; 3],
    pub num_entities: usize,
    pub num_relations: usize,
    pub visual_dim: usize,
    pub textual_dim: usize,
    pub avg_entities: f64,
    pub avg_relations: f64,
    pub avg_triples: f64,
    pub clients: Vec<ClientStats>,
}

impl PartitionManifest {
    pub fn new(data: &FederatedDataset, cfg: &PartitionConfig, seed: u64) -> Self {
        let clients: Vec<ClientStats> = data
            .clients
            .iter()
            .map(|c| ClientStats {
                client_id: c.client_id,
                entities: c.num_entities(),
                relations: c.num_relations(),
                train: c.train.len(),
                valid: c.valid.len(),
                test: c.test.len(),
                visual_available: c.mask_visual.rate(),
                textual_available: c.mask_textual.rate(),
            })
            .collect();
        let n = clients.len().max(1) as f64;
        let avg = |f: &dyn Fn(&ClientStats) -> usize| clients.iter().map(f).sum::<usize>() as f64 / n;
        Self {
            seed,
            num_clients: data.clients.len(),
            dirichlet_alpha: cfg.dirichlet_alpha,
            availability_rate: cfg.availability_rate,
            split: cfg.split,
            num_entities: data.num_entities(),
            num_relations: data.num_relations(),
            visual_dim: data.visual_dim,
            textual_dim: data.textual_dim,
            avg_entities: avg(&|c| c.entities),
            avg_relations: avg(&|c| c.relations),
            avg_triples: avg(&|c| c.train + c.valid + c.test),
            clients,
        }
    }
}

fn client_dir(c: usize) -> String {
    format!("client_{c}")
}

fn write_names(path: &Path, ids: impl Iterator<Item = usize>, names: &[String]) -> Result<(), DataError> {
    let mut s = String::new();
    for g in ids {
        s.push_str(&format!("{g}\t{}\n", names[g]));
    }
    fs::write(path, s)?;
    Ok(())
}

fn read_names(path: &Path) -> Result<Vec<(usize, String)>, DataError> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let (id, name) = line.split_once('\t').ok_or_else(|| DataError::Parse {
            line: i + 1,
            msg: format!("{}: expected id<TAB>name", path.display()),
        })?;
        let id = id.parse().map_err(|_| DataError::Parse {
            line: i + 1,
            msg: format!("{}: bad id {id:?}", path.display()),
        })?;
        out.push((id, name.to_string()));
    }
    Ok(out)
}

fn write_triples(path: &Path, triples: &[Triple], shard: &ClientShard, data: &FederatedDataset) -> Result<(), DataError> {
    let mut s = String::new();
    for t in triples {
        s.push_str(&format!(
            "{}\t{}\t{}\n",
            data.entity_names[shard.entities[t.head]],
            data.relation_names[shard.relations[t.relation]],
            data.entity_names[shard.entities[t.tail]]
        ));
    }
    fs::write(path, s)?;
    Ok(())
}

fn read_triples(
    path: &Path,
    ent: &HashMap<&str, usize>,
    rel: &HashMap<&str, usize>,
) -> Result<Vec<Triple>, DataError> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let f: Vec<&str> = line.split('\t').collect();
        let lookup = |m: &HashMap<&str, usize>, k: &str| {
            m.get(k).copied().ok_or_else(|| DataError::Parse {
                line: i + 1,
                msg: format!("{}: unknown name {k:?}", path.display()),
            })
        };
        if f.len() != 3 {
            return Err(DataError::Parse {
                line: i + 1,
                msg: format!("{}: expected 3 fields", path.display()),
            });
        }
        out.push(Triple::new(lookup(ent, f[0])?, lookup(rel, f[1])?, lookup(ent, f[2])?));
    }
    Ok(out)
}

/// Writes the partition layout: root `entities.txt`, `relations.txt` and
/// `partition.json`, plus one `client_<c>` directory per client holding
/// split files, features, masks and local-to-global maps.
pub fn write_partition(dir: impl AsRef<Path>, data: &FederatedDataset, manifest: &PartitionManifest) -> Result<(), DataError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_names(&dir.join("entities.txt"), 0..data.num_entities(), &data.entity_names)?;
    write_names(&dir.join("relations.txt"), 0..data.num_relations(), &data.relation_names)?;
    let json = serde_json::to_string_pretty(manifest).map_err(|e| DataError::Format(e.to_string()))?;
    fs::write(dir.join("partition.json"), json + "\n")?;
    for shard in &data.clients {
        let cd = dir.join(client_dir(shard.client_id));
        fs::create_dir_all(&cd)?;
        for (name, ts) in [("train.tsv", &shard.train), ("valid.tsv", &shard.valid), ("test.tsv", &shard.test)] {
            write_triples(&cd.join(name), ts, shard, data)?;
        }
        write_matrix(cd.join("feat_v.bin"), &shard.visual)?;
        write_matrix(cd.join("feat_d.bin"), &shard.textual)?;
        write_matrix(cd.join("mask_v.bin"), &shard.mask_visual.to_matrix())?;
        write_matrix(cd.join("mask_d.bin"), &shard.mask_textual.to_matrix())?;
        write_names(&cd.join("entities.txt"), shard.entities.iter().copied(), &data.entity_names)?;
        write_names(&cd.join("relations.txt"), shard.relations.iter().copied(), &data.relation_names)?;
    }
    Ok(())
}

/// Reads a directory written by [`write_partition`].
pub fn read_partition(dir: impl AsRef<Path>) -> Result<(FederatedDataset, PartitionManifest), DataError> {
    let dir = dir.as_ref();
    let manifest: PartitionManifest = serde_json::from_str(&fs::read_to_string(dir.join("partition.json"))?)
        .map_err(|e| DataError::Format(format!("partition.json: {e}")))?;
    let names = |file: &str| -> Result<Vec<String>, DataError> {
        let rows = read_names(&dir.join(file))?;
        for (i, (id, _)) in rows.iter().enumerate() {
            if *id != i {
                return Err(DataError::Format(format!("{file}: id {id} at position {i}")));
            }
        }
        Ok(rows.into_iter().map(|(_, n)| n).collect())
    };
    let entity_names = names("entities.txt")?;
    let relation_names = names("relations.txt")?;
    let mut clients = Vec::with_capacity(manifest.num_clients);
    for c in 0..manifest.num_clients {
        let cd = dir.join(client_dir(c));
        let entities: Vec<usize> = read_names(&cd.join("entities.txt"))?.into_iter().map(|(g, _)| g).collect();
        let relations: Vec<usize> = read_names(&cd.join("relations.txt"))?.into_iter().map(|(g, _)| g).collect();
        if entities.iter().any(|&g| g >= entity_names.len()) || relations.iter().any(|&g| g >= relation_names.len()) {
            return Err(DataError::Format(format!("client {c}: global id out of range")));
        }
        let ent: HashMap<&str, usize> = entities
            .iter()
            .enumerate()
            .map(|(l, &g)| (entity_names[g].as_str(), l))
            .collect();
        let rel: HashMap<&str, usize> = relations
            .iter()
            .enumerate()
            .map(|(l, &g)| (relation_names[g].as_str(), l))
            .collect();
        let n = entities.len();
        let visual = load_features(cd.join("feat_v.bin"), n)?;
        let textual = load_features(cd.join("feat_d.bin"), n)?;
        let mask_visual = ModalityMask::from_matrix(&load_features(cd.join("mask_v.bin"), n)?)?;
        let mask_textual = ModalityMask::from_matrix(&load_features(cd.join("mask_d.bin"), n)?)?;
        clients.push(ClientShard {
            client_id: c,
            train: read_triples(&cd.join("train.tsv"), &ent, &rel)?,
            valid: read_triples(&cd.join("valid.tsv"), &ent, &rel)?,
            test: read_triples(&cd.join("test.tsv"), &ent, &rel)?,
            entities,
            relations,
            visual,
            textual,
            mask_visual,
            mask_textual,
        });
    }
    let data = FederatedDataset {
        entity_names,
        relation_names,
        visual_dim: manifest.visual_dim,
        textual_dim: manifest.textual_dim,
        clients,
    };
    Ok((data, manifest))
}
