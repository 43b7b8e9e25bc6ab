//! Policy snapshot container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes   "TTPOLICY"
//! version   u32
//! hlen      u64       header length
//! header    hlen      JSON (SnapshotHeader)
//! plen      u64       payload length
//! payload   plen      f64 parameters, see below
//! checksum  32 bytes  SHA-256 of header || payload
//! ```
//!
//! Tabular payload: per entry in ascending key order, a 16-byte key then 7
//! values. Neural payload: weights then bias for each layer, input first.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::qfunction::{Backend, NeuralQ, QFunction, TabularQ};
use crate::gridworld::{EnvConfig, StateKey, NUM_ACTIONS};
use crate::instructions::Instruction;
use crate::nn::{Dense, Parameters};
use crate::scalar::Scalar;

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"TTPOLICY";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("snapshot io: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),
    #[error("snapshot format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("snapshot stores {found} parameters, requested {expected}")]
    ScalarMismatch { found: String, expected: String },
}

/// A trained policy plus the metadata needed to reproduce and reuse it.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySnapshot<T> {
    pub q: QFunction<T>,
    pub instruction: Instruction,
    pub env_config: EnvConfig,
    pub train_steps_used: usize,
    pub final_success_rate: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub backend: Backend,
    pub scalar: String,
    pub instruction: Instruction,
    pub seed: u64,
    pub env_config: EnvConfig,
    pub config_hash: String,
    pub train_steps_used: usize,
    pub final_success_rate: f64,
    /// Tabular: number of table entries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entries: Option<usize>,
    /// Neural: `[in_dim, out_dim]` per layer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<[usize; 2]>>,
}

/// Hex SHA-256 prefix of any serializable value's JSON form.
pub fn json_hash<S: Serialize>(value: &S) -> String {
    let bytes = serde_json::to_vec(value).expect("value serializes");
    Sha256::digest(&bytes)[..8]
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn corrupt(msg: impl Into<String>) -> SnapshotError {
    SnapshotError::CorruptSnapshot(msg.into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SnapshotError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| corrupt("unexpected end of data"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, SnapshotError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, SnapshotError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, SnapshotError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

impl<T: Scalar> PolicySnapshot<T> {
    pub fn backend(&self) -> Backend {
        self.q.backend()
    }

    fn header(&self) -> SnapshotHeader {
        let (entries, layers) = match &self.q {
            QFunction::Tabular(t) => (Some(t.table.len()), None),
            QFunction::Neural(n) => (
                None,
                Some(
                    [&n.input, &n.hidden, &n.output]
                        .iter()
                        .map(|l| [l.in_dim, l.out_dim])
                        .collect(),
                ),
            ),
        };
        SnapshotHeader {
            backend: self.backend(),
            scalar: T::NAME.to_string(),
            instruction: self.instruction,
            seed: self.seed,
            env_config: self.env_config,
            config_hash: json_hash(&self.env_config),
            train_steps_used: self.train_steps_used,
            final_success_rate: self.final_success_rate,
            entries,
            layers,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header()).expect("header serializes");
        let mut payload = Vec::new();
        match &self.q {
            QFunction::Tabular(t) => {
                for (key, values) in t.sorted_entries() {
                    payload.extend_from_slice(&key.0.to_le_bytes());
                    for v in values {
                        payload.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
                    }
                }
            }
            QFunction::Neural(n) => {
                for &v in n.param_groups().into_iter().flatten() {
                    payload.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
                }
            }
        }

        let mut out = Vec::with_capacity(header.len() + payload.len() + 64);
        out.extend_from_slice(SNAPSHOT_MAGIC);
        out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
        let mut h = Sha256::new();
        h.update(&header);
        h.update(&payload);
        out.extend_from_slice(&h.finalize());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SnapshotError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8).map_err(|_| corrupt("missing magic"))? != SNAPSHOT_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = r.u32()?;
        if version != SNAPSHOT_VERSION {
            return Err(SnapshotError::VersionMismatch {
                found: version,
                expected: SNAPSHOT_VERSION,
            });
        }
        let hlen = r.u64()? as usize;
        let header_bytes = r.take(hlen)?;
        let plen = r.u64()? as usize;
        let payload = r.take(plen)?;
        let checksum = r.take(32)?;
        if r.pos != bytes.len() {
            return Err(corrupt("trailing bytes"));
        }
        let mut h = Sha256::new();
        h.update(header_bytes);
        h.update(payload);
        if h.finalize().as_slice() != checksum {
            return Err(corrupt("checksum mismatch"));
        }
        let header: SnapshotHeader =
            serde_json::from_slice(header_bytes).map_err(|e| corrupt(format!("header: {e}")))?;
        if header.scalar != T::NAME {
            return Err(SnapshotError::ScalarMismatch {
                found: header.scalar,
                expected: T::NAME.to_string(),
            });
        }

        let mut p = Reader {
            bytes: payload,
            pos: 0,
        };
        let q = match header.backend {
            Backend::Tabular => {
                let entries = header.entries.ok_or_else(|| corrupt("tabular header lacks entries"))?;
                let mut table = TabularQ::new();
                for _ in 0..entries {
                    let key = u128::from_le_bytes(p.take(16)?.try_into().unwrap());
                    let mut values = [T::zero(); NUM_ACTIONS];
                    for v in values.iter_mut() {
                        *v = T::from_f64_lossy(p.f64()?);
                    }
                    table.table.insert(StateKey(key), values);
                }
                QFunction::Tabular(table)
            }
            Backend::Neural => {
                let layers = header.layers.clone().ok_or_else(|| corrupt("neural header lacks layers"))?;
                let [l1, l2, l3]: [[usize; 2]; 3] = layers
                    .try_into()
                    .map_err(|_| corrupt("neural snapshot needs exactly 3 layers"))?;
                let mut net = NeuralQ {
                    input: Dense::zeros(l1[0], l1[1]),
                    hidden: Dense::zeros(l2[0], l2[1]),
                    output: Dense::zeros(l3[0], l3[1]),
                };
                for group in net.param_groups_mut() {
                    for v in group.iter_mut() {
                        *v = T::from_f64_lossy(p.f64()?);
                    }
                }
                QFunction::Neural(net)
            }
        };
        if p.pos != payload.len() {
            return Err(corrupt("payload length does not match header"));
        }
        Ok(PolicySnapshot {
            q,
            instruction: header.instruction,
            env_config: header.env_config,
            train_steps_used: header.train_steps_used,
            final_success_rate: header.final_success_rate,
            seed: header.seed,
        })
    }

    /// Hex SHA-256 of the serialized container.
    pub fn content_hash(&self) -> String {
        Sha256::digest(self.to_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

pub fn save_snapshot<T: Scalar>(snapshot: &PolicySnapshot<T>, path: &Path) -> Result<(), SnapshotError> {
    fs::write(path, snapshot.to_bytes())?;
    Ok(())
}

pub fn load_snapshot<T: Scalar>(path: &Path) -> Result<PolicySnapshot<T>, SnapshotError> {
    PolicySnapshot::from_bytes(&fs::read(path)?)
}
