//! Control-plane protocol: canonical-JSON messages in length-prefixed
//! frames, a dispatcher keyed on message kind, and a threaded socket
//! server.
//!
//! A frame is a 4-byte big-endian unsigned body length followed by that
//! many bytes of UTF-8 JSON: `{"kind": ..., "payload": {...}, "sender":
//! {"host": ..., "port": ...}}` with keys sorted at every level, so a
//! given message always encodes to the same bytes. Control frames are
//! capped at 16 MiB; weight blobs use the transfer channel instead.

mod codec;
mod dispatch;
mod message;
mod server;

use thiserror::Error;

pub use codec::{
    decode, decode_body, decode_envelope, encode, encode_envelope, read_frame, write_frame,
    MAX_CONTROL_FRAME,
};
pub use dispatch::{dispatch, Handler, HandlerTable, KindGroup};
pub use message::{
    CredentialPayload, DonePayload, FetchPayload, InjectedTiming, InvitePayload, Message,
    MessageKind, Payload, ReadyPayload, RejectPayload, RejectReason, StartPayload,
};
pub use server::{connect, request, send_message, serve, Listener};

#[derive(Debug, Error, PartialEq)]
pub enum WireError {
    #[error("message body of {size} bytes exceeds the control-frame cap")]
    OversizeMessage { size: usize },
    #[error("incomplete frame, need more bytes")]
    Truncated,
    #[error("malformed message body: {0}")]
    MalformedBody(String),
    #[error("unknown message kind `{0}`")]
    UnknownKind(String),
    #[error("no handler registered for {0:?} messages")]
    NoHandler(KindGroup),
    #[error("failed to bind listener: {0}")]
    BindFailure(String),
    #[error("i/o failure: {0}")]
    Io(String),
    #[error("timed out waiting for a response")]
    Timeout,
}

impl From<std::io::Error> for WireError {
    fn from(e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::TimedOut || e.kind() == std::io::ErrorKind::WouldBlock {
            WireError::Timeout
        } else {
            WireError::Io(e.to_string())
        }
    }
}
