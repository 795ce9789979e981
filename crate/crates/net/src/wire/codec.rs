//! Frame and body codec.
//!
//! Bodies are serialized through `serde_json::Value`, whose object maps
//! are ordered, so every encoding of a message is byte-identical. Decode
//! is total: any input yields a message, `Truncated`, or a malformed
//! error.

use std::io::{self, Read, Write};

use serde_json::Value;

use fedloop_core::types::Endpoint;

use super::message::{
    CredentialPayload, DonePayload, FetchPayload, InvitePayload, Message, MessageKind, Payload,
    ReadyPayload, RejectPayload, StartPayload,
};
use super::WireError;

/// Control frames never exceed 16 MiB; weights travel out of band.
pub const MAX_CONTROL_FRAME: usize = 16 * 1024 * 1024;

fn to_canonical_value<T: serde::Serialize>(payload: &T) -> Result<Value, WireError> {
    let value = serde_json::to_value(payload)
        .map_err(|e| WireError::MalformedBody(e.to_string()))?;
    reject_nulls(&value)?;
    Ok(value)
}

/// JSON cannot carry NaN or infinity; serde_json silently turns them
/// into null, which would break the round-trip law. Optional fields are
/// skipped when absent, so any null here is a non-finite float.
fn reject_nulls(value: &Value) -> Result<(), WireError> {
    match value {
        Value::Null => Err(WireError::MalformedBody("non-finite number in payload".to_string())),
        Value::Array(items) => items.iter().try_for_each(reject_nulls),
        Value::Object(map) => map.values().try_for_each(reject_nulls),
        _ => Ok(()),
    }
}

/// Builds the canonical envelope body for any kind string and payload.
pub fn encode_envelope(
    kind: &str,
    sender: &Endpoint,
    payload: Value,
) -> Result<Vec<u8>, WireError> {
    let envelope = serde_json::json!({
        "kind": kind,
        "payload": payload,
        "sender": { "host": sender.host, "port": sender.port },
    });
    Ok(serde_json::to_vec(&envelope).expect("envelope is valid json"))
}

/// Splits a body back into (kind, sender, payload), enforcing the exact
/// three-field envelope shape.
pub fn decode_envelope(body: &[u8]) -> Result<(String, Endpoint, Value), WireError> {
    let value: Value = serde_json::from_slice(body)
        .map_err(|e| WireError::MalformedBody(e.to_string()))?;
    let map = value
        .as_object()
        .ok_or_else(|| WireError::MalformedBody("body is not an object".to_string()))?;
    if map.len() != 3 || !map.contains_key("kind") || !map.contains_key("payload") || !map.contains_key("sender")
    {
        return Err(WireError::MalformedBody(
            "envelope must have exactly kind, payload, and sender".to_string(),
        ));
    }
    let kind = map["kind"]
        .as_str()
        .ok_or_else(|| WireError::MalformedBody("kind must be a string".to_string()))?
        .to_string();
    let sender: Endpoint = serde_json::from_value(map["sender"].clone())
        .map_err(|e| WireError::MalformedBody(format!("bad sender: {e}")))?;
    Ok((kind, sender, map["payload"].clone()))
}

/// Wraps a body in a length-prefixed frame.
pub fn frame(body: &[u8]) -> Result<Vec<u8>, WireError> {
    if body.len() > MAX_CONTROL_FRAME {
        return Err(WireError::OversizeMessage { size: body.len() });
    }
    let mut out = Vec::with_capacity(4 + body.len());
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(body);
    Ok(out)
}

/// Serializes a message into one deterministic frame.
pub fn encode(msg: &Message) -> Result<Vec<u8>, WireError> {
    let payload = match &msg.payload {
        Payload::InviteWorker(p) => to_canonical_value(p)?,
        Payload::WorkerReady(p) => to_canonical_value(p)?,
        Payload::StartTraining(p) => to_canonical_value(p)?,
        Payload::TrainingDone(p) => to_canonical_value(p)?,
        Payload::FetchWeights(p) => to_canonical_value(p)?,
        Payload::WeightsCredential(p) => to_canonical_value(p)?,
        Payload::Reject(p) => to_canonical_value(p)?,
    };
    let body = encode_envelope(msg.kind().as_str(), &msg.sender, payload)?;
    frame(&body)
}

/// Parses a typed message out of an envelope body.
pub fn decode_body(body: &[u8]) -> Result<Message, WireError> {
    let (kind, sender, payload) = decode_envelope(body)?;
    let kind = MessageKind::from_str(&kind).ok_or(WireError::UnknownKind(kind))?;
    let malformed = |e: serde_json::Error| WireError::MalformedBody(e.to_string());
    let payload = match kind {
        MessageKind::InviteWorker => {
            Payload::InviteWorker(serde_json::from_value::<InvitePayload>(payload).map_err(malformed)?)
        }
        MessageKind::WorkerReady => {
            Payload::WorkerReady(serde_json::from_value::<ReadyPayload>(payload).map_err(malformed)?)
        }
        MessageKind::StartTraining => {
            Payload::StartTraining(serde_json::from_value::<StartPayload>(payload).map_err(malformed)?)
        }
        MessageKind::TrainingDone => {
            Payload::TrainingDone(serde_json::from_value::<DonePayload>(payload).map_err(malformed)?)
        }
        MessageKind::FetchWeights => {
            Payload::FetchWeights(serde_json::from_value::<FetchPayload>(payload).map_err(malformed)?)
        }
        MessageKind::WeightsCredential => Payload::WeightsCredential(
            serde_json::from_value::<CredentialPayload>(payload).map_err(malformed)?,
        ),
        MessageKind::Reject => {
            Payload::Reject(serde_json::from_value::<RejectPayload>(payload).map_err(malformed)?)
        }
    };
    Ok(Message { sender, payload })
}

/// Decodes one complete frame from the front of `bytes`, returning the
/// message and the bytes consumed. `Truncated` means more bytes are
/// needed.
pub fn decode(bytes: &[u8]) -> Result<(Message, usize), WireError> {
    if bytes.len() < 4 {
        return Err(WireError::Truncated);
    }
    let len = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
    if len > MAX_CONTROL_FRAME {
        return Err(WireError::MalformedBody(format!("frame length {len} exceeds cap")));
    }
    if bytes.len() < 4 + len {
        return Err(WireError::Truncated);
    }
    let msg = decode_body(&bytes[4..4 + len])?;
    Ok((msg, 4 + len))
}

/// Reads one complete frame body, blocking across partial segments.
/// `Ok(None)` is clean end-of-stream before any byte of a new frame.
pub fn read_frame(stream: &mut impl Read, cap: usize) -> io::Result<Option<Vec<u8>>> {
    let mut len_buf = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        let n = stream.read(&mut len_buf[filled..])?;
        if n == 0 {
            if filled == 0 {
                return Ok(None);
            }
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "eof inside frame header"));
        }
        filled += n;
    }
    let len = u32::from_be_bytes(len_buf) as usize;
    if len > cap {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("frame length {len} exceeds cap {cap}"),
        ));
    }
    let mut body = vec![0u8; len];
    stream.read_exact(&mut body)?;
    Ok(Some(body))
}

pub fn write_frame(stream: &mut impl Write, body: &[u8]) -> io::Result<()> {
    stream.write_all(&(body.len() as u32).to_be_bytes())?;
    stream.write_all(body)?;
    stream.flush()
}
