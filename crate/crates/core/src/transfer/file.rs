//! Classifier model file and prediction CSV.
//!
//! Same layout as policy snapshots: magic `TTMODEL1`, u32 version, u64
//! header length, JSON [`ModelHeader`], u64 payload length, f64 parameters
//! in [`Parameters`] group order, SHA-256 of header and payload.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{predicted_label, ClassifierConfig, TransferError, TransferModel};
use crate::adaptation::ComparisonRecord;
use crate::instructions::token_table;
use crate::learner::json_hash;
use crate::nn::Parameters;
use crate::scalar::Scalar;

pub const MODEL_MAGIC: &[u8; 8] = b"TTMODEL1";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub scalar: String,
    /// Hash of the token table the embedding rows refer to.
    pub token_table_hash: String,
    pub config: ClassifierConfig,
    pub param_count: usize,
}

fn corrupt(m: &str) -> TransferError {
    TransferError::CorruptModel(m.to_string())
}

pub fn model_to_bytes<T: Scalar>(model: &TransferModel<T>, config: &ClassifierConfig) -> Vec<u8> {
    let header = ModelHeader {
        scalar: T::NAME.to_string(),
        token_table_hash: json_hash(&token_table()),
        config: config.clone(),
        param_count: model.param_count(),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let payload: Vec<u8> = model
        .flat_params()
        .iter()
        .flat_map(|v| v.to_f64_lossy().to_le_bytes())
        .collect();
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
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

pub fn model_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<(TransferModel<T>, ModelHeader), TransferError> {
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8], TransferError> {
        let end = pos.checked_add(n).filter(|&e| e <= bytes.len()).ok_or_else(|| corrupt("unexpected end of data"))?;
        let out = &bytes[pos..end];
        pos = end;
        Ok(out)
    };
    if take(8)? != MODEL_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != MODEL_VERSION {
        return Err(TransferError::VersionMismatch {
            found: version,
            expected: MODEL_VERSION,
        });
    }
    let hlen = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let header_bytes = take(hlen)?;
    let plen = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let payload = take(plen)?;
    let checksum = take(32)?;
    if pos != bytes.len() {
        return Err(corrupt("trailing bytes"));
    }
    let mut h = Sha256::new();
    h.update(header_bytes);
    h.update(payload);
    if h.finalize().as_slice() != checksum {
        return Err(corrupt("checksum mismatch"));
    }
    let header: ModelHeader = serde_json::from_slice(header_bytes).map_err(|e| corrupt(&e.to_string()))?;
    if header.scalar != T::NAME {
        return Err(corrupt(&format!("stores {} parameters, requested {}", header.scalar, T::NAME)));
    }
    if header.token_table_hash != json_hash(&token_table()) {
        return Err(corrupt("token table differs from this build"));
    }
    let mut model = TransferModel::<T>::zeros();
    if header.param_count != model.param_count() || payload.len() != 8 * header.param_count {
        return Err(corrupt("parameter count does not match the architecture"));
    }
    let flat: Vec<T> = payload
        .chunks_exact(8)
        .map(|c| T::from_f64_lossy(f64::from_le_bytes(c.try_into().unwrap())))
        .collect();
    model.set_flat_params(&flat);
    Ok((model, header))
}

pub fn save_model<T: Scalar>(model: &TransferModel<T>, config: &ClassifierConfig, path: &Path) -> Result<(), TransferError> {
    fs::write(path, model_to_bytes(model, config))?;
    Ok(())
}

pub fn load_model<T: Scalar>(path: &Path) -> Result<(TransferModel<T>, ModelHeader), TransferError> {
    model_from_bytes(&fs::read(path)?)
}

/// CSV `z_x,z_i,z_j,probability,label,correct`.
pub fn write_predictions<T: Scalar, W: Write>(
    out: W,
    model: &TransferModel<T>,
    records: &[ComparisonRecord],
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["z_x", "z_i", "z_j", "probability", "label", "correct"])?;
    for r in records {
        let p = model.predict(&r.z_x, &r.z_i, &r.z_j);
        let correct = predicted_label(p) == r.label;
        w.write_record([
            r.z_x.render(),
            r.z_i.render(),
            r.z_j.render(),
            format!("{:.6}", p.to_f64_lossy()),
            r.label.to_string(),
            (correct as u8).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
