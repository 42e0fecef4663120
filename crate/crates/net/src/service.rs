//! Thread-per-connection request/response loop shared by the storage server
//! and the auditor.

use std::collections::HashMap;
use std::io::{self, BufReader, BufWriter};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use crate::frame::{read_frame, write_frame, FrameError};
use crate::message::{decode_request, encode, DecodeError, Request, Response};

/// Answers one decoded request.
pub trait Handler: Send + Sync + 'static {
    fn handle(&self, request: Request) -> Response;
}

impl<H: Handler> Handler for Arc<H> {
    fn handle(&self, request: Request) -> Response {
        (**self).handle(request)
    }
}

/// A running service. Dropping the handle does not stop it; call
/// [`ServiceHandle::shutdown`].
#[derive(Debug)]
pub struct ServiceHandle {
    addr: SocketAddr,
    stopping: Arc<AtomicBool>,
    connections: Arc<Mutex<HashMap<u64, TcpStream>>>,
    accept: Option<JoinHandle<()>>,
}

impl ServiceHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting, closes open connections and waits for the accept
    /// loop to exit.
    pub fn shutdown(mut self) {
        self.stop();
    }

    /// Blocks until the service stops.
    pub fn join(mut self) {
        if let Some(t) = self.accept.take() {
            let _ = t.join();
        }
    }

    fn stop(&mut self) {
        self.stopping.store(true, Ordering::SeqCst);
        // Wake the blocking accept.
        let _ = TcpStream::connect(self.addr);
        for (_, conn) in self.connections.lock().unwrap().drain() {
            let _ = conn.shutdown(Shutdown::Both);
        }
        if let Some(t) = self.accept.take() {
            let _ = t.join();
        }
    }
}

/// Binds `endpoint` and serves `handler` on background threads.
pub fn spawn<H: Handler>(endpoint: impl ToSocketAddrs, handler: H) -> io::Result<ServiceHandle> {
    let listener = TcpListener::bind(endpoint)?;
    let addr = listener.local_addr()?;
    let stopping = Arc::new(AtomicBool::new(false));
    let connections = Arc::new(Mutex::new(HashMap::new()));
    let handler = Arc::new(handler);

    let accept = {
        let stopping = stopping.clone();
        let connections = connections.clone();
        std::thread::Builder::new()
            .name(format!("accept-{addr}"))
            .spawn(move || accept_loop(listener, handler, stopping, connections))?
    };
    log::info!("listening on {addr}");
    Ok(ServiceHandle {
        addr,
        stopping,
        connections,
        accept: Some(accept),
    })
}

fn accept_loop<H: Handler>(
    listener: TcpListener,
    handler: Arc<H>,
    stopping: Arc<AtomicBool>,
    connections: Arc<Mutex<HashMap<u64, TcpStream>>>,
) {
    let next_id = AtomicU64::new(0);
    for stream in listener.incoming() {
        if stopping.load(Ordering::SeqCst) {
            break;
        }
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                log::warn!("accept failed: {e}");
                continue;
            }
        };
        let id = next_id.fetch_add(1, Ordering::Relaxed);
        if let Ok(clone) = stream.try_clone() {
            connections.lock().unwrap().insert(id, clone);
        }
        let handler = handler.clone();
        let connections = connections.clone();
        let spawned = std::thread::Builder::new().name(format!("conn-{id}")).spawn(move || {
            let peer = stream.peer_addr().ok();
            if let Err(e) = serve_connection(stream, &*handler) {
                log::debug!("connection {peer:?} ended: {e}");
            }
            connections.lock().unwrap().remove(&id);
        });
        if let Err(e) = spawned {
            log::error!("cannot spawn connection thread: {e}");
        }
    }
}

/// Runs the request/response loop on one connection until the peer hangs
/// up. An unknown message type gets an error response; a second
/// consecutive undecodable frame closes the connection.
pub fn serve_connection<H: Handler + ?Sized>(stream: TcpStream, handler: &H) -> Result<(), FrameError> {
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    let mut strikes = 0;
    loop {
        let payload = match read_frame(&mut reader) {
            Ok(Some(p)) => p,
            Ok(None) => return Ok(()),
            Err(FrameError::TooLarge(n)) => {
                let resp = Response::error("FrameTooLarge", FrameError::TooLarge(n));
                let _ = write_frame(&mut writer, &encode(&resp));
                return Err(FrameError::TooLarge(n));
            }
            Err(e) => return Err(e),
        };
        let response = match decode_request(&payload) {
            Ok(req) => {
                strikes = 0;
                handler.handle(req)
            }
            Err(e @ DecodeError::UnknownType(_)) => {
                strikes = 0;
                Response::error(e.code(), &e)
            }
            Err(e @ DecodeError::Malformed(_)) => {
                strikes += 1;
                let resp = Response::error(e.code(), &e);
                if strikes > 1 {
                    let _ = write_frame(&mut writer, &encode(&resp));
                    log::warn!("closing connection after repeated malformed frames");
                    return Ok(());
                }
                resp
            }
        };
        write_frame(&mut writer, &encode(&response))?;
    }
}
