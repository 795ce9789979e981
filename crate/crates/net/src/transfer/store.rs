//! Credential bookkeeping around the warehouse.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use fedloop_core::types::{DataId, Endpoint};
use fedloop_core::warehouse::{StorageBackendKind, Warehouse};
use fedloop_core::weights::{Owner, VersionedWeights};

use super::blob::{decode_weights, encode_weights};
use super::{TransferCredential, TransferError};

struct CredRecord {
    blob_id: DataId,
    expires_at: f64,
    redeemed: bool,
}

/// Issues and redeems one-time weight credentials backed by a warehouse.
pub struct CredentialStore {
    warehouse: Arc<Warehouse>,
    backend: StorageBackendKind,
    ttl: f64,
    endpoint: RwLock<Endpoint>,
    creds: Mutex<HashMap<String, CredRecord>>,
    rng: Mutex<ChaCha20Rng>,
}

impl CredentialStore {
    pub fn new(warehouse: Arc<Warehouse>, backend: StorageBackendKind, ttl: f64, endpoint: Endpoint) -> Self {
        Self {
            warehouse,
            backend,
            ttl,
            endpoint: RwLock::new(endpoint),
            creds: Mutex::new(HashMap::new()),
            rng: Mutex::new(ChaCha20Rng::from_entropy()),
        }
    }

    /// Rebinds the advertised blob-service address (used once the real
    /// listener knows its port).
    pub fn set_endpoint(&self, endpoint: Endpoint) {
        *self.endpoint.write().unwrap() = endpoint;
    }

    pub fn ttl(&self) -> f64 {
        self.ttl
    }

    /// Serializes the weights into the warehouse and mints a fresh
    /// one-time credential for them.
    pub fn export_weights(
        &self,
        vw: &VersionedWeights,
        now: f64,
    ) -> Result<TransferCredential, TransferError> {
        let blob = encode_weights(vw)?;
        let blob_id = self
            .warehouse
            .put(&blob, self.backend)
            .map_err(|e| TransferError::StorageFailure(e.to_string()))?;
        let token = {
            let mut rng = self.rng.lock().unwrap();
            DataId::random(&mut *rng).to_string()
        };
        let expires_at = now + self.ttl;
        self.creds.lock().unwrap().insert(
            token.clone(),
            CredRecord { blob_id: blob_id.clone(), expires_at, redeemed: false },
        );
        Ok(TransferCredential {
            token,
            endpoint: self.endpoint.read().unwrap().clone(),
            blob_id,
            expires_at,
            one_time: true,
        })
    }

    /// Consumes a token and returns the raw blob. The consume-or-fail
    /// step happens under the lock, so concurrent redeems of one token
    /// see exactly one success.
    pub fn redeem_blob(&self, token: &str, now: f64) -> Result<Vec<u8>, TransferError> {
        let blob_id = {
            let mut creds = self.creds.lock().unwrap();
            let record = creds.get_mut(token).ok_or(TransferError::UnknownToken)?;
            if record.redeemed {
                return Err(TransferError::AlreadyRedeemed);
            }
            if now > record.expires_at {
                return Err(TransferError::Expired);
            }
            record.redeemed = true;
            record.blob_id.clone()
        };
        let blob = self
            .warehouse
            .get(&blob_id)
            .map_err(|e| TransferError::StorageFailure(e.to_string()))?;
        self.warehouse.delete(&blob_id);
        Ok(blob)
    }

    /// Redeems and deserializes in one step.
    pub fn redeem(&self, token: &str, now: f64, owner: Owner) -> Result<VersionedWeights, TransferError> {
        decode_weights(&self.redeem_blob(token, now)?, owner)
    }

    /// Purges credentials past their expiry along with any backing
    /// blobs; returns how many credentials were removed.
    pub fn gc_expired(&self, now: f64) -> usize {
        let mut creds = self.creds.lock().unwrap();
        let expired: Vec<String> = creds
            .iter()
            .filter(|(_, r)| r.expires_at < now)
            .map(|(t, _)| t.clone())
            .collect();
        for token in &expired {
            if let Some(record) = creds.remove(token) {
                self.warehouse.delete(&record.blob_id);
            }
        }
        expired.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use fedloop_core::types::WorkerId;
    use fedloop_core::weights::WeightVector;

    fn store() -> CredentialStore {
        CredentialStore::new(
            Arc::new(Warehouse::in_memory()),
            StorageBackendKind::Memory,
            300.0,
            Endpoint::new("127.0.0.1", 0),
        )
    }

    fn weights(values: Vec<f64>) -> VersionedWeights {
        VersionedWeights::worker(WorkerId(1), WeightVector::new(values).unwrap(), 2, 3)
    }

    #[test]
    fn export_redeem_round_trip() {
        let st = store();
        let vw = weights(vec![0.25, -4.0, 1.0e-9]);
        let cred = st.export_weights(&vw, 0.0).unwrap();
        assert!(cred.one_time);
        assert_eq!(cred.expires_at, 300.0);
        let back = st.redeem(&cred.token, 10.0, Owner::Worker(WorkerId(1))).unwrap();
        assert_eq!(back, vw);
    }

    #[test]
    fn two_exports_of_same_weights_get_distinct_tokens() {
        let st = store();
        let vw = weights(vec![1.0]);
        let a = st.export_weights(&vw, 0.0).unwrap();
        let b = st.export_weights(&vw, 0.0).unwrap();
        assert_ne!(a.token, b.token);
        assert_ne!(a.blob_id, b.blob_id);
        // A one-dimensional vector is still redeemable.
        assert!(st.redeem(&a.token, 1.0, Owner::Server).is_ok());
        assert!(st.redeem(&b.token, 1.0, Owner::Server).is_ok());
    }

    #[test]
    fn second_redeem_fails() {
        let st = store();
        let cred = st.export_weights(&weights(vec![1.0]), 0.0).unwrap();
        st.redeem_blob(&cred.token, 1.0).unwrap();
        assert_eq!(st.redeem_blob(&cred.token, 1.0), Err(TransferError::AlreadyRedeemed));
    }

    #[test]
    fn redemption_after_expiry_fails() {
        let st = store();
        let cred = st.export_weights(&weights(vec![1.0]), 0.0).unwrap();
        // Exactly at expiry is still valid; one second past is not.
        assert_eq!(
            st.redeem_blob(&cred.token, cred.expires_at + 1.0),
            Err(TransferError::Expired)
        );
        assert_eq!(st.redeem_blob("feedfacefeedfacefeedfacefeedface", 0.0), Err(TransferError::UnknownToken));
    }

    #[test]
    fn backing_blob_is_deleted_after_redemption() {
        let wh = Arc::new(Warehouse::in_memory());
        let st = CredentialStore::new(
            Arc::clone(&wh),
            StorageBackendKind::Memory,
            300.0,
            Endpoint::new("127.0.0.1", 0),
        );
        let cred = st.export_weights(&weights(vec![1.0]), 0.0).unwrap();
        assert!(wh.get(&cred.blob_id).is_ok());
        st.redeem_blob(&cred.token, 1.0).unwrap();
        assert!(wh.get(&cred.blob_id).is_err());
    }

    #[test]
    fn gc_purges_only_expired() {
        let st = store();
        assert_eq!(st.gc_expired(1000.0), 0);
        let mut live = Vec::new();
        for _ in 0..3 {
            st.export_weights(&weights(vec![1.0]), 0.0).unwrap();
        }
        for _ in 0..2 {
            live.push(st.export_weights(&weights(vec![2.0]), 900.0).unwrap());
        }
        assert_eq!(st.gc_expired(1000.0), 3);
        assert_eq!(st.gc_expired(1000.0), 0);
        for cred in live {
            assert!(st.redeem_blob(&cred.token, 1000.0).is_ok());
        }
    }

    #[test]
    fn exactly_one_of_concurrent_redeems_succeeds() {
        let st = Arc::new(store());
        let cred = st.export_weights(&weights(vec![1.0, 2.0]), 0.0).unwrap();
        let barrier = Arc::new(std::sync::Barrier::new(32));
        let mut handles = Vec::new();
        for _ in 0..32 {
            let st = Arc::clone(&st);
            let token = cred.token.clone();
            let barrier = Arc::clone(&barrier);
            handles.push(std::thread::spawn(move || {
                barrier.wait();
                st.redeem_blob(&token, 1.0).is_ok()
            }));
        }
        let successes =
            handles.into_iter().map(|h| h.join().unwrap()).filter(|ok| *ok).count();
        assert_eq!(successes, 1);
    }
}
