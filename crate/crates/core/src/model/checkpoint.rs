//! Checkpoints: a JSON manifest next to a raw little-endian f64 blob with
//! every parameter concatenated in manifest order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{build_network, Network, NetworkPlan};
use crate::error::{Error, Result};
use crate::rng::Prng;
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT: &str = "reco-kd-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format: String,
    pub plan: NetworkPlan,
    pub params: Vec<ParamEntry>,
    pub prng_state: Option<Prng>,
    pub step: usize,
    /// File name of the blob, relative to the manifest.
    pub blob: String,
    pub blob_sha256: String,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub network: Network,
    pub prng_state: Option<Prng>,
    pub step: usize,
}

fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

/// Writes `<path>` (manifest) and `<path>.bin` with the extension replaced.
pub fn save_checkpoint(path: &Path, net: &Network, prng_state: Option<&Prng>, step: usize) -> Result<()> {
    let mut blob = Vec::with_capacity(net.num_params() * 8);
    for p in net.params() {
        for &v in p.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let bp = blob_path(path);
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        plan: net.plan().clone(),
        params: net
            .shapes()
            .into_iter()
            .map(|(name, shape)| ParamEntry { name, shape })
            .collect(),
        prng_state: prng_state.cloned(),
        step,
        blob: bp
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default(),
        blob_sha256: hex::encode(Sha256::digest(&blob)),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(&bp, &blob).map_err(|e| Error::io(&bp, e))?;
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint into a trainable network of its recorded plan.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m: CheckpointManifest = serde_json::from_str(&text)?;
    if m.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!("unknown format {:?}", m.format)));
    }
    let bp = path.with_file_name(&m.blob);
    let blob = fs::read(&bp).map_err(|e| Error::io(&bp, e))?;
    if hex::encode(Sha256::digest(&blob)) != m.blob_sha256 {
        return Err(Error::Checkpoint(format!("{} does not match its recorded hash", bp.display())));
    }
    let template = build_network(&m.plan, 0)?;
    let expected: Vec<ParamEntry> = template
        .shapes()
        .into_iter()
        .map(|(name, shape)| ParamEntry { name, shape })
        .collect();
    if expected != m.params {
        return Err(Error::Checkpoint("parameter list does not match the plan".into()));
    }
    let total: usize = m.params.iter().map(|p| p.shape.iter().product::<usize>()).sum();
    if blob.len() != total * 8 {
        return Err(Error::Checkpoint(format!("blob has {} bytes, expected {}", blob.len(), total * 8)));
    }
    let mut off = 0;
    let mut tensors = Vec::with_capacity(m.params.len());
    for p in &m.params {
        let n: usize = p.shape.iter().product();
        let data = blob[off..off + n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        tensors.push(Tensor::param(&p.shape, data)?);
        off += n * 8;
    }
    Ok(Checkpoint {
        network: template.with_params(tensors)?,
        prng_state: m.prng_state,
        step: m.step,
    })
}
