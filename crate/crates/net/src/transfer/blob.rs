//! Weight blob format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! offset size  field
//! 0      4     magic "FLWT"
//! 4      2     format version (currently 1)
//! 6      10    reserved, zero
//! 16     4     dim (u32)
//! 20     4     base_version (u32)
//! 24     4     local_epochs (u32)
//! 28     8*dim IEEE-754 f64 values
//! ```

use fedloop_core::weights::{Owner, VersionedWeights, WeightVector};

use super::TransferError;

pub const WEIGHT_MAGIC: [u8; 4] = *b"FLWT";
pub const WEIGHT_FORMAT_VERSION: u16 = 1;
/// Blobs are exempt from the control-frame cap but still bounded.
pub const MAX_WEIGHT_BLOB: usize = 1 << 30;

const HEADER_LEN: usize = 16;
const PREFIX_LEN: usize = HEADER_LEN + 12;

/// Exact byte length of a blob holding `dim` values.
pub fn weight_blob_len(dim: usize) -> usize {
    PREFIX_LEN + 8 * dim
}

pub fn encode_weights(vw: &VersionedWeights) -> Result<Vec<u8>, TransferError> {
    let dim = vw.weights.dim();
    if weight_blob_len(dim) > MAX_WEIGHT_BLOB {
        return Err(TransferError::StorageFailure(format!("dim {dim} exceeds the blob cap")));
    }
    let base_version = u32::try_from(vw.base_version).map_err(|_| {
        TransferError::StorageFailure(format!("base version {} exceeds u32", vw.base_version))
    })?;
    let mut out = Vec::with_capacity(weight_blob_len(dim));
    out.extend_from_slice(&WEIGHT_MAGIC);
    out.extend_from_slice(&WEIGHT_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&[0u8; 10]);
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&base_version.to_le_bytes());
    out.extend_from_slice(&vw.local_epochs.to_le_bytes());
    for v in vw.weights.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Inverse of [`encode_weights`]. The owner is supplied by the caller;
/// it is contextual, not part of the blob.
pub fn decode_weights(bytes: &[u8], owner: Owner) -> Result<VersionedWeights, TransferError> {
    if bytes.len() < PREFIX_LEN {
        return Err(TransferError::MalformedBlob("shorter than the fixed prefix".to_string()));
    }
    if bytes[0..4] != WEIGHT_MAGIC {
        return Err(TransferError::MalformedBlob("bad magic".to_string()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != WEIGHT_FORMAT_VERSION {
        return Err(TransferError::MalformedBlob(format!("unsupported format version {version}")));
    }
    let dim = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
    let base_version = u64::from(u32::from_le_bytes(bytes[20..24].try_into().unwrap()));
    let local_epochs = u32::from_le_bytes(bytes[24..28].try_into().unwrap());
    if bytes.len() != weight_blob_len(dim) {
        return Err(TransferError::MalformedBlob(format!(
            "length {} does not match dim {dim}",
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes[PREFIX_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let weights = WeightVector::new(values)
        .map_err(|e| TransferError::MalformedBlob(e.to_string()))?;
    Ok(VersionedWeights { weights, base_version, local_epochs, owner })
}
