//! Threaded socket server and client helpers.
//!
//! One thread per connection; frames on a connection are dispatched in
//! arrival order, and a handler's reply (if any) is written back on the
//! same connection. Malformed bodies and registry gaps are logged and
//! skipped; the connection stays alive because framing is still intact.

use std::io::Write;
use std::net::{Shutdown, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use fedloop_core::types::Endpoint;

use super::codec::{decode_body, encode, read_frame, MAX_CONTROL_FRAME};
use super::dispatch::{dispatch, HandlerTable};
use super::message::Message;
use super::WireError;

#[derive(Default)]
struct Inflight {
    count: Mutex<usize>,
    zero: Condvar,
}

impl Inflight {
    fn enter(&self) {
        *self.count.lock().unwrap() += 1;
    }

    fn leave(&self) {
        let mut count = self.count.lock().unwrap();
        *count -= 1;
        if *count == 0 {
            self.zero.notify_all();
        }
    }

    fn wait_idle(&self, timeout: Duration) {
        let count = self.count.lock().unwrap();
        let _ = self
            .zero
            .wait_timeout_while(count, timeout, |c| *c > 0)
            .map(|(guard, _)| drop(guard));
    }
}

/// Handle to a running listener. Dropping it also shuts the listener
/// down, but `shutdown` waits for in-flight handlers to drain.
pub struct Listener {
    local: Endpoint,
    stop: Arc<AtomicBool>,
    inflight: Arc<Inflight>,
    accept_thread: Option<JoinHandle<()>>,
}

impl Listener {
    pub fn local_endpoint(&self) -> &Endpoint {
        &self.local
    }

    /// Stops accepting, unblocks the accept loop, and drains handlers.
    pub fn shutdown(mut self) {
        self.stop_now();
        self.inflight.wait_idle(Duration::from_secs(5));
    }

    fn stop_now(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Unblock the blocking accept with a throwaway connection.
        let _ = TcpStream::connect((self.local.host.as_str(), self.local.port));
        if let Some(handle) = self.accept_thread.take() {
            let _ = handle.join();
        }
    }
}

impl Drop for Listener {
    fn drop(&mut self) {
        if self.accept_thread.is_some() {
            self.stop_now();
        }
    }
}

/// Binds `endpoint` and serves frames to the handler table until
/// shutdown. Binding port 0 picks a free port; see
/// [`Listener::local_endpoint`] for the actual address.
pub fn serve(endpoint: &Endpoint, table: Arc<HandlerTable>) -> Result<Listener, WireError> {
    let listener = TcpListener::bind((endpoint.host.as_str(), endpoint.port))
        .map_err(|e| WireError::BindFailure(format!("{endpoint}: {e}")))?;
    let local_addr =
        listener.local_addr().map_err(|e| WireError::BindFailure(e.to_string()))?;
    let local = Endpoint::new(endpoint.host.clone(), local_addr.port());
    let stop = Arc::new(AtomicBool::new(false));
    let inflight = Arc::new(Inflight::default());

    let accept_stop = Arc::clone(&stop);
    let accept_inflight = Arc::clone(&inflight);
    let accept_thread = std::thread::spawn(move || {
        for stream in listener.incoming() {
            if accept_stop.load(Ordering::SeqCst) {
                break;
            }
            let stream = match stream {
                Ok(s) => s,
                Err(_) => continue,
            };
            let table = Arc::clone(&table);
            let inflight = Arc::clone(&accept_inflight);
            std::thread::spawn(move || serve_connection(stream, table, inflight));
        }
    });

    Ok(Listener { local, stop, inflight, accept_thread: Some(accept_thread) })
}

fn serve_connection(mut stream: TcpStream, table: Arc<HandlerTable>, inflight: Arc<Inflight>) {
    loop {
        let body = match read_frame(&mut stream, MAX_CONTROL_FRAME) {
            Ok(Some(body)) => body,
            Ok(None) | Err(_) => return,
        };
        let msg = match decode_body(&body) {
            Ok(msg) => msg,
            // The frame boundary is intact; skip the bad body and keep
            // the connection.
            Err(_) => continue,
        };
        inflight.enter();
        let reply = dispatch(&msg, &table);
        inflight.leave();
        match reply {
            Ok(Some(reply)) => {
                let Ok(bytes) = encode(&reply) else { continue };
                if stream.write_all(&bytes).and_then(|_| stream.flush()).is_err() {
                    return;
                }
            }
            Ok(None) => {}
            // Registry gap: surfaced to the log, connection stays alive.
            Err(_) => {}
        }
    }
}

pub fn connect(ep: &Endpoint, timeout: Duration) -> Result<TcpStream, WireError> {
    let addrs: Vec<std::net::SocketAddr> = std::net::ToSocketAddrs::to_socket_addrs(&(
        ep.host.as_str(),
        ep.port,
    ))
    .map_err(|e| WireError::Io(e.to_string()))?
    .collect();
    let addr = addrs.first().ok_or_else(|| WireError::Io(format!("no address for {ep}")))?;
    let stream = TcpStream::connect_timeout(addr, timeout)?;
    stream.set_read_timeout(Some(timeout))?;
    stream.set_write_timeout(Some(timeout))?;
    Ok(stream)
}

/// Fire-and-forget: one frame, no reply expected.
pub fn send_message(ep: &Endpoint, msg: &Message, timeout: Duration) -> Result<(), WireError> {
    let mut stream = connect(ep, timeout)?;
    let bytes = encode(msg)?;
    stream.write_all(&bytes)?;
    stream.flush()?;
    let _ = stream.shutdown(Shutdown::Write);
    Ok(())
}

/// Request/response: one frame out, one reply frame back on the same
/// connection.
pub fn request(ep: &Endpoint, msg: &Message, timeout: Duration) -> Result<Message, WireError> {
    let mut stream = connect(ep, timeout)?;
    let bytes = encode(msg)?;
    stream.write_all(&bytes)?;
    stream.flush()?;
    match read_frame(&mut stream, MAX_CONTROL_FRAME)? {
        Some(body) => decode_body(&body),
        None => Err(WireError::Io("peer closed without replying".to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::message::{Payload, RejectPayload, RejectReason, StartPayload};
    use crate::wire::Handler;
    use fedloop_core::types::{DataId, WorkerId};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::atomic::AtomicUsize;

    fn loopback() -> Endpoint {
        Endpoint::new("127.0.0.1", 0)
    }

    fn start_training(epochs: u32) -> Message {
        Message::new(
            Endpoint::new("127.0.0.1", 1),
            Payload::StartTraining(StartPayload {
                worker_id: WorkerId(0),
                model_id: DataId::random(&mut ChaCha8Rng::seed_from_u64(0)),
                epochs,
            }),
        )
    }

    struct Recorder {
        seen: Mutex<Vec<u32>>,
    }

    impl Handler for Recorder {
        fn handle(&self, msg: &Message) -> Result<Option<Message>, WireError> {
            if let Payload::StartTraining(p) = &msg.payload {
                self.seen.lock().unwrap().push(p.epochs);
            }
            Ok(None)
        }
    }

    #[test]
    fn two_messages_in_one_segment_dispatch_in_order() {
        let recorder = Arc::new(Recorder { seen: Mutex::new(vec![]) });
        let table =
            Arc::new(HandlerTable::new().with_training(Arc::clone(&recorder) as Arc<dyn Handler>));
        let listener = serve(&loopback(), table).unwrap();
        let ep = listener.local_endpoint().clone();

        let mut stream = connect(&ep, Duration::from_secs(2)).unwrap();
        let mut combined = encode(&start_training(1)).unwrap();
        combined.extend(encode(&start_training(2)).unwrap());
        stream.write_all(&combined).unwrap();
        stream.flush().unwrap();
        let _ = stream.shutdown(Shutdown::Write);

        for _ in 0..100 {
            if recorder.seen.lock().unwrap().len() == 2 {
                break;
            }
            std::thread::sleep(Duration::from_millis(10));
        }
        assert_eq!(*recorder.seen.lock().unwrap(), vec![1, 2]);
        listener.shutdown();
    }

    #[test]
    fn one_message_split_across_five_segments_dispatches_once() {
        let recorder = Arc::new(Recorder { seen: Mutex::new(vec![]) });
        let table =
            Arc::new(HandlerTable::new().with_training(Arc::clone(&recorder) as Arc<dyn Handler>));
        let listener = serve(&loopback(), table).unwrap();
        let ep = listener.local_endpoint().clone();

        let bytes = encode(&start_training(7)).unwrap();
        let mut stream = connect(&ep, Duration::from_secs(2)).unwrap();
        for chunk in bytes.chunks(bytes.len().div_ceil(5)) {
            stream.write_all(chunk).unwrap();
            stream.flush().unwrap();
            std::thread::sleep(Duration::from_millis(5));
        }
        let _ = stream.shutdown(Shutdown::Write);

        for _ in 0..100 {
            if !recorder.seen.lock().unwrap().is_empty() {
                break;
            }
            std::thread::sleep(Duration::from_millis(10));
        }
        std::thread::sleep(Duration::from_millis(20));
        assert_eq!(*recorder.seen.lock().unwrap(), vec![7]);
        listener.shutdown();
    }

    #[test]
    fn occupied_port_is_bind_failure() {
        let table = Arc::new(HandlerTable::new());
        let first = serve(&loopback(), Arc::clone(&table)).unwrap();
        let occupied = first.local_endpoint().clone();
        assert!(matches!(serve(&occupied, table), Err(WireError::BindFailure(_))));
        first.shutdown();
    }

    #[test]
    fn registry_gap_keeps_connection_alive() {
        let recorder = Arc::new(Recorder { seen: Mutex::new(vec![]) });
        // Training handler only: the fetch-weights frame hits a gap, the
        // following start-training frame must still arrive.
        let table =
            Arc::new(HandlerTable::new().with_training(Arc::clone(&recorder) as Arc<dyn Handler>));
        let listener = serve(&loopback(), table).unwrap();
        let ep = listener.local_endpoint().clone();

        let fetch = Message::new(
            Endpoint::new("127.0.0.1", 1),
            Payload::FetchWeights(crate::wire::message::FetchPayload {
                model_id: DataId::random(&mut ChaCha8Rng::seed_from_u64(1)),
            }),
        );
        let mut stream = connect(&ep, Duration::from_secs(2)).unwrap();
        stream.write_all(&encode(&fetch).unwrap()).unwrap();
        stream.write_all(&encode(&start_training(9)).unwrap()).unwrap();
        stream.flush().unwrap();
        let _ = stream.shutdown(Shutdown::Write);

        for _ in 0..100 {
            if !recorder.seen.lock().unwrap().is_empty() {
                break;
            }
            std::thread::sleep(Duration::from_millis(10));
        }
        assert_eq!(*recorder.seen.lock().unwrap(), vec![9]);
        listener.shutdown();
    }

    #[test]
    fn request_gets_reply_on_same_connection() {
        let table = Arc::new(HandlerTable::new().with_training(Arc::new(
            |msg: &Message| -> Result<Option<Message>, WireError> {
                Ok(Some(Message::new(
                    msg.sender.clone(),
                    Payload::Reject(RejectPayload {
                        reason: RejectReason::Busy,
                        detail: "echo".to_string(),
                    }),
                )))
            },
        )
            as Arc<dyn Handler>));
        let listener = serve(&loopback(), table).unwrap();
        let ep = listener.local_endpoint().clone();
        let reply = request(&ep, &start_training(1), Duration::from_secs(2)).unwrap();
        assert!(matches!(reply.payload, Payload::Reject(_)));
        listener.shutdown();
    }

    #[test]
    fn concurrent_connections_all_served() {
        let counter = Arc::new(AtomicUsize::new(0));
        let c = Arc::clone(&counter);
        let table = Arc::new(HandlerTable::new().with_training(Arc::new(
            move |_: &Message| -> Result<Option<Message>, WireError> {
                c.fetch_add(1, Ordering::SeqCst);
                Ok(None)
            },
        )
            as Arc<dyn Handler>));
        let listener = serve(&loopback(), table).unwrap();
        let ep = listener.local_endpoint().clone();
        let mut handles = vec![];
        for _ in 0..8 {
            let ep = ep.clone();
            handles.push(std::thread::spawn(move || {
                send_message(&ep, &start_training(1), Duration::from_secs(2)).unwrap();
            }));
        }
        for h in handles {
            h.join().unwrap();
        }
        for _ in 0..100 {
            if counter.load(Ordering::SeqCst) == 8 {
                break;
            }
            std::thread::sleep(Duration::from_millis(10));
        }
        assert_eq!(counter.load(Ordering::SeqCst), 8);
        listener.shutdown();
    }
}
