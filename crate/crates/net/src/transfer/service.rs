//! Socket front end for the credential store.
//!
//! One exchange per connection: the client sends a framed
//! `redeem-request` envelope carrying its token, the service answers
//! with a framed `redeem-response`, and on success streams the raw blob
//! as a 4-byte big-endian length followed by the bytes. The blob section
//! is exempt from the control-frame cap but bounded at 1 GiB. Nothing is
//! retrievable from this endpoint without a valid credential.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use fedloop_core::types::Endpoint;

use crate::clock::Clock;
use crate::wire::{decode_envelope, encode_envelope, read_frame, write_frame, WireError, MAX_CONTROL_FRAME};

use super::blob::MAX_WEIGHT_BLOB;
use super::store::CredentialStore;
use super::TransferError;

pub const KIND_REDEEM_REQUEST: &str = "redeem-request";
pub const KIND_REDEEM_RESPONSE: &str = "redeem-response";

pub struct BlobListener {
    local: Endpoint,
    stop: Arc<AtomicBool>,
    accept_thread: Option<JoinHandle<()>>,
}

impl BlobListener {
    pub fn local_endpoint(&self) -> &Endpoint {
        &self.local
    }

    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect((self.local.host.as_str(), self.local.port));
        if let Some(handle) = self.accept_thread.take() {
            let _ = handle.join();
        }
    }
}

impl Drop for BlobListener {
    fn drop(&mut self) {
        if self.accept_thread.is_some() {
            self.stop_now();
        }
    }
}

/// Serves redeem requests against `store`, stamping redemptions with
/// `clock` time. Also rebinds the store's advertised endpoint to the
/// actual bound address.
pub fn serve_blobs(
    endpoint: &Endpoint,
    store: Arc<CredentialStore>,
    clock: Arc<dyn Clock>,
) -> Result<BlobListener, WireError> {
    let listener = TcpListener::bind((endpoint.host.as_str(), endpoint.port))
        .map_err(|e| WireError::BindFailure(format!("{endpoint}: {e}")))?;
    let local_addr = listener.local_addr().map_err(|e| WireError::BindFailure(e.to_string()))?;
    let local = Endpoint::new(endpoint.host.clone(), local_addr.port());
    store.set_endpoint(local.clone());

    let stop = Arc::new(AtomicBool::new(false));
    let accept_stop = Arc::clone(&stop);
    let serve_local = local.clone();
    let accept_thread = std::thread::spawn(move || {
        for stream in listener.incoming() {
            if accept_stop.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = stream else { continue };
            let store = Arc::clone(&store);
            let clock = Arc::clone(&clock);
            let local = serve_local.clone();
            std::thread::spawn(move || {
                let _ = serve_one(stream, &store, &*clock, &local);
            });
        }
    });

    Ok(BlobListener { local, stop, accept_thread: Some(accept_thread) })
}

fn serve_one(
    mut stream: TcpStream,
    store: &CredentialStore,
    clock: &dyn Clock,
    local: &Endpoint,
) -> std::io::Result<()> {
    stream.set_read_timeout(Some(Duration::from_secs(30)))?;
    let Some(body) = read_frame(&mut stream, MAX_CONTROL_FRAME)? else {
        return Ok(());
    };
    let token = match decode_envelope(&body) {
        Ok((kind, _, payload)) if kind == KIND_REDEEM_REQUEST => {
            payload.get("token").and_then(|t| t.as_str()).map(str::to_string)
        }
        _ => None,
    };
    let outcome = match token {
        Some(token) => store.redeem_blob(&token, clock.now()),
        None => Err(TransferError::UnknownToken),
    };
    match outcome {
        Ok(blob) => {
            let response = encode_envelope(
                KIND_REDEEM_RESPONSE,
                local,
                serde_json::json!({ "ok": true }),
            )
            .expect("static envelope");
            write_frame(&mut stream, &response)?;
            stream.write_all(&(blob.len() as u32).to_be_bytes())?;
            stream.write_all(&blob)?;
            stream.flush()
        }
        Err(e) => {
            let response = encode_envelope(
                KIND_REDEEM_RESPONSE,
                local,
                serde_json::json!({ "ok": false, "error": e.to_string() }),
            )
            .expect("static envelope");
            write_frame(&mut stream, &response)
        }
    }
}

/// Client side: redeems `token` at a remote blob service and returns the
/// raw blob bytes.
pub fn redeem_remote(
    endpoint: &Endpoint,
    token: &str,
    timeout: Duration,
) -> Result<Vec<u8>, TransferError> {
    let io_err = |e: std::io::Error| TransferError::Io(e.to_string());
    let addrs: Vec<std::net::SocketAddr> =
        std::net::ToSocketAddrs::to_socket_addrs(&(endpoint.host.as_str(), endpoint.port))
            .map_err(io_err)?
            .collect();
    let addr =
        addrs.first().ok_or_else(|| TransferError::Io(format!("no address for {endpoint}")))?;
    let mut stream = TcpStream::connect_timeout(addr, timeout).map_err(io_err)?;
    stream.set_read_timeout(Some(timeout)).map_err(io_err)?;
    stream.set_write_timeout(Some(timeout)).map_err(io_err)?;

    let request = encode_envelope(
        KIND_REDEEM_REQUEST,
        &Endpoint::new("client", 0),
        serde_json::json!({ "token": token }),
    )
    .map_err(|e| TransferError::Io(e.to_string()))?;
    write_frame(&mut stream, &request).map_err(io_err)?;

    let body = read_frame(&mut stream, MAX_CONTROL_FRAME)
        .map_err(io_err)?
        .ok_or_else(|| TransferError::Io("service closed without replying".to_string()))?;
    let (kind, _, payload) =
        decode_envelope(&body).map_err(|e| TransferError::Io(e.to_string()))?;
    if kind != KIND_REDEEM_RESPONSE {
        return Err(TransferError::Io(format!("unexpected response kind {kind}")));
    }
    if payload.get("ok").and_then(|v| v.as_bool()) != Some(true) {
        let error = payload
            .get("error")
            .and_then(|v| v.as_str())
            .unwrap_or("redemption refused")
            .to_string();
        return Err(match error.as_str() {
            e if e.contains("expired") => TransferError::Expired,
            e if e.contains("already redeemed") => TransferError::AlreadyRedeemed,
            _ => TransferError::UnknownToken,
        });
    }
    let mut len_buf = [0u8; 4];
    stream.read_exact(&mut len_buf).map_err(io_err)?;
    let len = u32::from_be_bytes(len_buf) as usize;
    if len > MAX_WEIGHT_BLOB {
        return Err(TransferError::MalformedBlob(format!("blob length {len} exceeds cap")));
    }
    let mut blob = vec![0u8; len];
    stream.read_exact(&mut blob).map_err(io_err)?;
    Ok(blob)
}
