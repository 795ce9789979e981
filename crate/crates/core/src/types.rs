//! Identifiers, network endpoints, and worker resource profiles.

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TypeError {
    #[error("invalid endpoint `{0}`, expected host:port")]
    InvalidEndpoint(String),
    #[error("invalid data id `{0}`, expected 32 hex characters")]
    InvalidDataId(String),
    #[error("invalid worker profile: {0}")]
    InvalidProfile(String),
}

/// Stable identifier for a worker within one run. Assigned by the
/// aggregation server at registration time, in registration order.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct WorkerId(pub u32);

impl fmt::Display for WorkerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "w{}", self.0)
    }
}

/// A reachable network address: host plus TCP port.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Endpoint {
    pub host: String,
    pub port: u16,
}

impl Endpoint {
    pub fn new(host: impl Into<String>, port: u16) -> Self {
        Self { host: host.into(), port }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.host, self.port)
    }
}

impl FromStr for Endpoint {
    type Err = TypeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (host, port) = s
            .rsplit_once(':')
            .ok_or_else(|| TypeError::InvalidEndpoint(s.to_string()))?;
        if host.is_empty() {
            return Err(TypeError::InvalidEndpoint(s.to_string()));
        }
        let port = port
            .parse::<u16>()
            .map_err(|_| TypeError::InvalidEndpoint(s.to_string()))?;
        Ok(Endpoint::new(host, port))
    }
}

/// Opaque 128-bit token naming a datum (or a model) on one node.
/// Random rather than content-derived: the contract is uniqueness, not
/// deduplication.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DataId(String);

impl DataId {
    pub fn random(rng: &mut impl RngCore) -> Self {
        let mut bytes = [0u8; 16];
        rng.fill_bytes(&mut bytes);
        Self(hex::encode(bytes))
    }

    pub fn from_hex(s: &str) -> Result<Self, TypeError> {
        if s.len() != 32 || !s.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(TypeError::InvalidDataId(s.to_string()));
        }
        Ok(Self(s.to_ascii_lowercase()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DataId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// (address, id) pair uniquely naming a model held on a remote node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteModelRef {
    pub address: Endpoint,
    pub model_id: DataId,
}

/// Per-worker resource and timing statistics that drive selection.
///
/// `t_one` is the estimated wall time for one full pass over the
/// worker's local data; `t_transmit` is the estimated round-trip time to
/// move one weight blob between server and worker. Both start as
/// calibration-probe estimates and are refined by measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerProfile {
    pub worker_id: WorkerId,
    /// Processor frequency in Hz.
    pub cpu_freq: f64,
    /// Fraction of the processor available to this worker, in (0, 1].
    pub cpu_avail: f64,
    /// Number of local training batches.
    pub data_batches: u32,
    /// Seconds per full local epoch.
    pub t_one: f64,
    /// Seconds per full weight round trip.
    pub t_transmit: f64,
    /// Time of the most recent actual observation, if any.
    pub last_measured: Option<f64>,
}

impl WorkerProfile {
    pub fn validate(&self) -> Result<(), TypeError> {
        if !(self.cpu_freq.is_finite() && self.cpu_freq > 0.0) {
            return Err(TypeError::InvalidProfile(format!(
                "cpu_freq must be positive, got {}",
                self.cpu_freq
            )));
        }
        if !(self.cpu_avail.is_finite() && self.cpu_avail > 0.0 && self.cpu_avail <= 1.0) {
            return Err(TypeError::InvalidProfile(format!(
                "cpu_avail must lie in (0, 1], got {}",
                self.cpu_avail
            )));
        }
        if !(self.t_one.is_finite() && self.t_one >= 0.0) {
            return Err(TypeError::InvalidProfile(format!(
                "t_one must be non-negative, got {}",
                self.t_one
            )));
        }
        if !(self.t_transmit.is_finite() && self.t_transmit >= 0.0) {
            return Err(TypeError::InvalidProfile(format!(
                "t_transmit must be non-negative, got {}",
                self.t_transmit
            )));
        }
        Ok(())
    }
}
