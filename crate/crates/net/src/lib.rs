//! Networking for fedloop: the framed control-plane protocol and the
//! credentialed out-of-band weight transfer channel.
//!
//! Control messages are small, canonical-JSON frames capped at 16 MiB;
//! weight blobs never travel on the control plane. They move through the
//! [`transfer`] module instead: the owner exports a blob and hands out a
//! single-use, expiring credential, and the peer redeems it against the
//! owner's blob service.

pub mod clock;
pub mod transfer;
pub mod wire;

pub use clock::{Clock, ManualClock, SystemClock};
