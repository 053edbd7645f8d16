//! Newline-delimited JSON transport: a TCP server for any backend and the
//! matching client backend.
//!
//! One JSON object per line in each direction. Connections are served on
//! their own thread; requests on one connection are answered in order.

use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde_json::Value as Json;

use super::{ErrorKind, ToolBackend, ToolRequest, ToolResponse};

/// Answers one request line. Malformed lines produce an `invalid:` error
/// carrying the request id when one can be recovered, else 0.
pub fn handle_line(line: &str, backend: &dyn ToolBackend) -> ToolResponse {
    let value: Json = match serde_json::from_str(line) {
        Ok(v) => v,
        Err(e) => return ToolResponse::failure(0, ErrorKind::Invalid, format!("malformed json: {e}")),
    };
    let id = value.get("id").and_then(Json::as_u64).unwrap_or(0);
    let req: ToolRequest = match serde_json::from_value(value) {
        Ok(r) => r,
        Err(e) => return ToolResponse::failure(id, ErrorKind::Invalid, format!("malformed request: {e}")),
    };
    if let Err(msg) = req.validate() {
        return ToolResponse::failure(req.id, ErrorKind::Invalid, msg);
    }
    backend.dispatch(&req)
}

fn serve_connection(stream: TcpStream, backend: Arc<dyn ToolBackend>) -> io::Result<()> {
    let mut writer = stream.try_clone()?;
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let resp = handle_line(&line, backend.as_ref());
        let mut text = serde_json::to_string(&resp).expect("response serializes");
        text.push('\n');
        writer.write_all(text.as_bytes())?;
        writer.flush()?;
    }
    Ok(())
}

/// Accepts connections until `stop` is set, one thread per connection.
pub fn serve(listener: TcpListener, backend: Arc<dyn ToolBackend>, stop: Arc<AtomicBool>) -> io::Result<()> {
    for stream in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        match stream {
            Ok(stream) => {
                let backend = Arc::clone(&backend);
                thread::spawn(move || {
                    let _ = serve_connection(stream, backend);
                });
            }
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

/// A server running on a background thread.
pub struct MockServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<io::Result<()>>>,
}

impl MockServer {
    pub fn spawn(backend: Arc<dyn ToolBackend>, addr: impl ToSocketAddrs) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let handle = thread::spawn(move || serve(listener, backend, flag));
        Ok(Self { addr, stop, handle: Some(handle) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_inner();
    }

    fn stop_inner(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the accept loop
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if self.handle.is_some() {
            self.stop_inner();
        }
    }
}

struct Connection {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

/// Client side of the wire protocol over one persistent connection.
/// Requests are serialized through a lock; a failed exchange drops the
/// connection and the next request reconnects.
pub struct RemoteBackend {
    addr: String,
    timeout: Duration,
    conn: Mutex<Option<Connection>>,
}

impl RemoteBackend {
    pub fn new(addr: impl Into<String>, timeout: Duration) -> Self {
        Self { addr: addr.into(), timeout, conn: Mutex::new(None) }
    }

    fn connect(&self) -> io::Result<Connection> {
        let addr = self
            .addr
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, format!("cannot resolve {}", self.addr)))?;
        let stream = TcpStream::connect_timeout(&addr, self.timeout)?;
        stream.set_read_timeout(Some(self.timeout))?;
        stream.set_write_timeout(Some(self.timeout))?;
        stream.set_nodelay(true)?;
        Ok(Connection { reader: BufReader::new(stream.try_clone()?), writer: stream })
    }

    fn exchange(&self, conn: &mut Connection, req: &ToolRequest) -> io::Result<ToolResponse> {
        let mut text = serde_json::to_string(req).map_err(io::Error::other)?;
        text.push('\n');
        conn.writer.write_all(text.as_bytes())?;
        conn.writer.flush()?;
        let mut line = String::new();
        if conn.reader.read_line(&mut line)? == 0 {
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "connection closed by server"));
        }
        serde_json::from_str(&line).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }

    /// Checks that the server is reachable.
    pub fn ping(&self) -> io::Result<()> {
        let mut guard = self.conn.lock().unwrap_or_else(|e| e.into_inner());
        if guard.is_none() {
            *guard = Some(self.connect()?);
        }
        Ok(())
    }
}

impl ToolBackend for RemoteBackend {
    fn dispatch(&self, req: &ToolRequest) -> ToolResponse {
        let mut guard = self.conn.lock().unwrap_or_else(|e| e.into_inner());
        if guard.is_none() {
            match self.connect() {
                Ok(c) => *guard = Some(c),
                Err(e) => return ToolResponse::failure(req.id, ErrorKind::Transport, format!("{}: {e}", self.addr)),
            }
        }
        let conn = guard.as_mut().expect("connected above");
        match self.exchange(conn, req) {
            Ok(resp) => resp,
            Err(e) => {
                *guard = None;
                ToolResponse::failure(req.id, ErrorKind::Transport, e)
            }
        }
    }

    fn describe(&self) -> String {
        format!("remote {}", self.addr)
    }
}
