//! Versioned binary checkpoints: magic string, JSON architecture descriptor,
//! then raw little-endian f64 parameters per layer in declaration order.
//! Training metadata goes into a JSON sidecar next to the checkpoint.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::net::{NetConfig, PolicyValueNet};

const MAGIC: &[u8; 8] = b"PVNETv1\n";

#[derive(Debug, Serialize, Deserialize)]
struct Descriptor {
    config: NetConfig,
    param_count: usize,
}

pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    checkpoint.with_file_name(name)
}

pub fn save_checkpoint(
    net: &PolicyValueNet,
    path: &Path,
    metadata: &serde_json::Value,
) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    let descriptor = Descriptor {
        config: net.config.clone(),
        param_count: net.param_count(),
    };
    let json = serde_json::to_vec(&descriptor)
        .map_err(|e| Error::Checkpoint(format!("descriptor encode: {e}")))?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for layer in net.layers() {
        for v in layer.weights.iter().chain(layer.bias.iter()) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    fs::write(
        sidecar_path(path),
        serde_json::to_string_pretty(metadata)
            .map_err(|e| Error::Checkpoint(format!("metadata encode: {e}")))?,
    )?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<PolicyValueNet> {
    let file = fs::File::open(path).map_err(|e| {
        Error::Checkpoint(format!("cannot open {}: {e}", path.display()))
    })?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("truncated checkpoint".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic (not a checkpoint file)".into()));
    }
    let mut len_bytes = [0u8; 4];
    r.read_exact(&mut len_bytes)
        .map_err(|_| Error::Checkpoint("truncated descriptor length".into()))?;
    let len = u32::from_le_bytes(len_bytes) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)
        .map_err(|_| Error::Checkpoint("truncated descriptor".into()))?;
    let descriptor: Descriptor = serde_json::from_slice(&json)
        .map_err(|e| Error::Checkpoint(format!("descriptor decode: {e}")))?;

    let mut net = PolicyValueNet::new(descriptor.config, 0)?;
    if net.param_count() != descriptor.param_count {
        return Err(Error::Checkpoint(format!(
            "architecture mismatch: descriptor says {} params, rebuilt net has {}",
            descriptor.param_count,
            net.param_count()
        )));
    }
    let mut buf = [0u8; 8];
    for layer in net.layers_mut() {
        for v in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
            r.read_exact(&mut buf)
                .map_err(|_| Error::Checkpoint("truncated parameter data".into()))?;
            *v = f64::from_le_bytes(buf);
        }
    }
    if r.read(&mut buf)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after parameters".into()));
    }
    Ok(net)
}
