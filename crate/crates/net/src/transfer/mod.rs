//! Out-of-band weight transfer with one-time credentials.
//!
//! Weights never ride the control plane. The owning side exports a
//! weight blob into its warehouse and mints a single-use, expiring
//! credential; the fetching side redeems the credential against the
//! owner's blob service and receives the raw blob. Redemption consumes
//! the token atomically, so exactly one of any number of concurrent
//! attempts succeeds, and the backing blob is deleted once delivered.

mod blob;
mod service;
mod store;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use fedloop_core::types::{DataId, Endpoint};

pub use blob::{decode_weights, encode_weights, weight_blob_len, MAX_WEIGHT_BLOB, WEIGHT_FORMAT_VERSION, WEIGHT_MAGIC};
pub use service::{redeem_remote, serve_blobs, BlobListener, KIND_REDEEM_REQUEST, KIND_REDEEM_RESPONSE};
pub use store::CredentialStore;

/// Default credential lifetime in (virtual or real) seconds.
pub const DEFAULT_CREDENTIAL_TTL: f64 = 300.0;

#[derive(Debug, Error, PartialEq)]
pub enum TransferError {
    #[error("failed to stage weights: {0}")]
    StorageFailure(String),
    #[error("credential already redeemed")]
    AlreadyRedeemed,
    #[error("credential expired")]
    Expired,
    #[error("unknown credential token")]
    UnknownToken,
    #[error("malformed weight blob: {0}")]
    MalformedBlob(String),
    #[error("transfer i/o failure: {0}")]
    Io(String),
}

/// Single-use authorization to download one weight blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferCredential {
    /// Opaque 128-bit random token, hex encoded.
    pub token: String,
    /// Blob service to redeem against.
    pub endpoint: Endpoint,
    pub blob_id: DataId,
    /// Redemption fails strictly after this time.
    pub expires_at: f64,
    /// Always true; kept on the wire for forward compatibility.
    pub one_time: bool,
}
