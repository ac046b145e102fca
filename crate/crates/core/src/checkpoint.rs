//! Binary network checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! | offset      | size      | field                                        |
//! |-------------|-----------|----------------------------------------------|
//! | 0           | 4         | magic `b"NNCK"`                              |
//! | 4           | 4         | format version (`u32`, currently 1)          |
//! | 8           | 4         | layer count `L` (`u32`)                      |
//! | 12          | 4 L       | layer sizes `N_1 .. N_L` (`u32` each)        |
//! | 12 + 4 L    | 8 P       | weights `W^2 .. W^L`, row-major `f64` each   |
//! | end - 32    | 32        | SHA-256 of every preceding byte              |
//!
//! `P` is the total parameter count `Σ N_{n-1} N_n`.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mathcore::Matrix;
use crate::network::{DenseNetwork, NetworkTopology};

pub const MAGIC: &[u8; 4] = b"NNCK";
pub const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

pub fn to_bytes(net: &DenseNetwork) -> Vec<u8> {
    let sizes = net.topology().sizes();
    let mut out = Vec::with_capacity(12 + 4 * sizes.len() + 8 * net.parameter_count() + DIGEST_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(sizes.len() as u32).to_le_bytes());
    for &s in sizes {
        out.extend_from_slice(&(s as u32).to_le_bytes());
    }
    for w in net.weights() {
        for v in w.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<DenseNetwork> {
    let bad = |msg: String| Error::Checkpoint(msg);
    if bytes.len() < 12 + DIGEST_LEN {
        return Err(bad(format!("file too short ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(bad("missing NNCK magic".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(bad("checksum mismatch".into()));
    }
    let word = |i: usize| u32::from_le_bytes(body[i..i + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let layers = word(8) as usize;
    let header = 12 + 4 * layers;
    if body.len() < header {
        return Err(bad(format!("header declares {layers} layers but file ends early")));
    }
    let sizes: Vec<usize> = (0..layers).map(|k| word(12 + 4 * k) as usize).collect();
    let topology = NetworkTopology::new(sizes.clone()).map_err(|e| bad(e.to_string()))?;
    let params: usize = sizes.windows(2).map(|p| p[0] * p[1]).sum();
    if body.len() != header + 8 * params {
        return Err(bad(format!(
            "payload is {} bytes, topology {} needs {}",
            body.len() - header,
            topology,
            8 * params
        )));
    }
    let mut values = body[header..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let weights = sizes
        .windows(2)
        .map(|p| Matrix::new(p[0], p[1], values.by_ref().take(p[0] * p[1]).collect()))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| bad(e.to_string()))?;
    DenseNetwork::new(topology, weights)
}

pub fn save(net: &DenseNetwork, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(net)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<DenseNetwork> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}
