//! Binary model files: `RDCK`, format version (u32 LE), header length (u32 LE), a JSON
//! header, then the flat parameter vector as little-endian f32.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RDCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: String,
    pub architecture: serde_json::Value,
    pub architecture_hash: String,
    pub seed: u64,
    pub param_count: usize,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

/// SHA-256 of the canonical JSON encoding of an architecture description.
pub fn architecture_hash<A: Serialize>(architecture: &A) -> Result<String> {
    let value = serde_json::to_value(architecture)?;
    let digest = Sha256::digest(serde_json::to_string(&value)?.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

pub fn save<A: Serialize, M: Serialize>(
    path: &Path,
    kind: &str,
    architecture: &A,
    seed: u64,
    metadata: &M,
    params: &[f32],
) -> Result<()> {
    let header = CheckpointHeader {
        kind: kind.to_string(),
        architecture: serde_json::to_value(architecture)?,
        architecture_hash: architecture_hash(architecture)?,
        seed,
        param_count: params.len(),
        metadata: serde_json::to_value(metadata)?,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&(json.len() as u32).to_le_bytes())?;
    out.write_all(&json)?;
    for p in params {
        out.write_all(&p.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Reads a checkpoint of the given kind, checking the stored hash against the stored
/// architecture and the parameter count against the payload.
pub fn load(path: &Path, expected_kind: &str) -> Result<(CheckpointHeader, Vec<f32>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint(format!("{} is too short", path.display())))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a model checkpoint",
            path.display()
        )));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let len = read_u32(&mut r)? as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: CheckpointHeader = serde_json::from_slice(&json)?;
    if header.kind != expected_kind {
        return Err(Error::Checkpoint(format!(
            "expected a {expected_kind} checkpoint, found {}",
            header.kind
        )));
    }
    if architecture_hash(&header.architecture)? != header.architecture_hash {
        return Err(Error::Checkpoint(
            "architecture hash does not match the stored architecture".into(),
        ));
    }
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != 4 * header.param_count {
        return Err(Error::Checkpoint(format!(
            "expected {} parameters, found {} bytes",
            header.param_count,
            bytes.len()
        )));
    }
    let params = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((header, params))
}

/// Fails unless `header` was written for exactly `architecture`.
pub fn require_architecture<A: Serialize>(header: &CheckpointHeader, architecture: &A) -> Result<()> {
    if architecture_hash(architecture)? != header.architecture_hash {
        return Err(Error::Checkpoint(
            "checkpoint architecture does not match the requested model".into(),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn round_trip_and_rejections() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let arch = json!({"hidden": [4, 4], "input": 3});
        save(&path, "mask", &arch, 7, &json!({"note": 1}), &[1.0, -2.5, 3.25]).unwrap();
        let (h, p) = load(&path, "mask").unwrap();
        assert_eq!(p, vec![1.0, -2.5, 3.25]);
        assert_eq!(h.seed, 7);
        require_architecture(&h, &arch).unwrap();
        assert!(require_architecture(&h, &json!({"hidden": [8], "input": 3})).is_err());
        assert!(load(&path, "value").is_err());

        let mut bytes = std::fs::read(&path).unwrap();
        bytes.pop();
        std::fs::write(&path, &bytes).unwrap();
        assert!(load(&path, "mask").is_err());
        std::fs::write(&path, b"nope").unwrap();
        assert!(load(&path, "mask").is_err());
    }
}
