//! Line-delimited JSON framing used to talk to out-of-process models.
//!
//! Both sides open with a handshake line `{"proto":"sensaudit/1"}`. After
//! that every line is one JSON object carrying a string `id`. Responses may
//! arrive in any order; the client matches them to requests by id, so many
//! requests can be in flight on one connection.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

pub const PROTOCOL: &str = "sensaudit/1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WireError {
    #[error("i/o error: {0}")]
    Io(String),
    #[error("handshake failed: {0}")]
    Handshake(String),
    #[error("timed out waiting for response `{0}`")]
    Timeout(String),
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("connection closed")]
    Closed,
}

impl From<std::io::Error> for WireError {
    fn from(e: std::io::Error) -> Self {
        WireError::Io(e.to_string())
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Handshake {
    pub proto: String,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct PredictRequest {
    pub id: String,
    pub tokens: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct PredictResponse {
    pub id: String,
    pub p: f64,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ContextRequest {
    pub id: String,
    pub tokens: Vec<String>,
    pub mask_index: usize,
    pub k: usize,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ContextResponse {
    pub id: String,
    pub replacements: Vec<String>,
}

fn handshake_line() -> String {
    json!({ "proto": PROTOCOL }).to_string()
}

fn check_handshake(line: &str) -> Result<(), WireError> {
    let hs: Handshake = serde_json::from_str(line.trim_end())
        .map_err(|e| WireError::Handshake(format!("expected protocol line: {e}")))?;
    if hs.proto != PROTOCOL {
        return Err(WireError::Handshake(format!(
            "peer speaks `{}`, expected `{PROTOCOL}`",
            hs.proto
        )));
    }
    Ok(())
}

type Reply = Result<Value, WireError>;

#[derive(Default)]
struct Pending {
    waiters: HashMap<String, Sender<Reply>>,
    broken: Option<WireError>,
}

impl Pending {
    fn fail_all(&mut self, err: WireError) {
        for (_, tx) in self.waiters.drain() {
            let _ = tx.send(Err(err.clone()));
        }
        self.broken = Some(err);
    }
}

/// An outstanding request.
pub struct Ticket {
    id: String,
    rx: Receiver<Reply>,
}

impl Ticket {
    pub fn id(&self) -> &str {
        &self.id
    }
}

/// Client side of a connection. Safe to share across threads.
pub struct WireClient {
    writer: Mutex<Box<dyn Write + Send>>,
    pending: Arc<Mutex<Pending>>,
    next_id: AtomicU64,
    timeout: Duration,
    child: Option<Mutex<Child>>,
}

impl WireClient {
    /// Performs the handshake over an arbitrary byte stream pair and starts
    /// the response dispatcher.
    pub fn from_streams<R, W>(reader: R, writer: W, timeout: Duration) -> Result<Self, WireError>
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        let mut writer: Box<dyn Write + Send> = Box::new(writer);
        writeln!(writer, "{}", handshake_line())?;
        writer.flush()?;

        let mut reader = BufReader::new(reader);
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            return Err(WireError::Handshake("peer closed before handshake".into()));
        }
        check_handshake(&line)?;

        let pending = Arc::new(Mutex::new(Pending::default()));
        let dispatch = Arc::clone(&pending);
        thread::Builder::new()
            .name("sensaudit-wire".into())
            .spawn(move || dispatch_responses(reader, dispatch))?;

        Ok(WireClient {
            writer: Mutex::new(writer),
            pending,
            next_id: AtomicU64::new(0),
            timeout,
            child: None,
        })
    }

    pub fn connect_tcp(addr: impl ToSocketAddrs, timeout: Duration) -> Result<Self, WireError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let read_half = stream.try_clone()?;
        Self::from_streams(read_half, stream, timeout)
    }

    /// Spawns `program` and speaks the protocol over its stdin/stdout.
    pub fn spawn(program: &str, args: &[String], timeout: Duration) -> Result<Self, WireError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()?;
        let stdin = child.stdin.take().ok_or(WireError::Closed)?;
        let stdout = child.stdout.take().ok_or(WireError::Closed)?;
        let mut client = Self::from_streams(stdout, stdin, timeout)?;
        client.child = Some(Mutex::new(child));
        Ok(client)
    }

    /// Parses an endpoint of the form `tcp:HOST:PORT` or `exec:PROGRAM ARGS...`.
    pub fn connect(endpoint: &str, timeout: Duration) -> Result<Self, WireError> {
        if let Some(addr) = endpoint.strip_prefix("tcp:") {
            Self::connect_tcp(addr, timeout)
        } else if let Some(cmd) = endpoint.strip_prefix("exec:") {
            let mut parts = cmd.split_whitespace().map(str::to_owned);
            let program = parts
                .next()
                .ok_or_else(|| WireError::Io("empty exec endpoint".into()))?;
            let args: Vec<String> = parts.collect();
            Self::spawn(&program, &args, timeout)
        } else {
            Err(WireError::Io(format!(
                "unsupported endpoint `{endpoint}` (expected tcp:HOST:PORT or exec:COMMAND)"
            )))
        }
    }

    /// Sends one request. `body` receives the allocated id and returns the
    /// full message object.
    pub fn send(&self, body: impl FnOnce(String) -> Value) -> Result<Ticket, WireError> {
        let id = format!("r{}", self.next_id.fetch_add(1, Ordering::Relaxed));
        let (tx, rx) = mpsc::channel();
        {
            let mut pending = self.pending.lock().expect("pending lock");
            if let Some(err) = &pending.broken {
                return Err(err.clone());
            }
            pending.waiters.insert(id.clone(), tx);
        }
        let line = body(id.clone()).to_string();
        let written = {
            let mut w = self.writer.lock().expect("writer lock");
            w.write_all(line.as_bytes())
                .and_then(|_| w.write_all(b"\n"))
                .and_then(|_| w.flush())
        };
        if let Err(e) = written {
            self.pending.lock().expect("pending lock").waiters.remove(&id);
            return Err(e.into());
        }
        Ok(Ticket { id, rx })
    }

    pub fn wait(&self, ticket: Ticket) -> Result<Value, WireError> {
        match ticket.rx.recv_timeout(self.timeout) {
            Ok(reply) => reply,
            Err(RecvTimeoutError::Timeout) => {
                self.pending.lock().expect("pending lock").waiters.remove(&ticket.id);
                Err(WireError::Timeout(ticket.id))
            }
            Err(RecvTimeoutError::Disconnected) => Err(WireError::Closed),
        }
    }
}

impl Drop for WireClient {
    fn drop(&mut self) {
        if let Some(child) = &self.child {
            if let Ok(mut child) = child.lock() {
                let _ = child.kill();
                let _ = child.wait();
            }
        }
    }
}

fn dispatch_responses<R: BufRead>(mut reader: R, pending: Arc<Mutex<Pending>>) {
    let mut line = String::new();
    loop {
        line.clear();
        match reader.read_line(&mut line) {
            Ok(0) => {
                pending.lock().expect("pending lock").fail_all(WireError::Closed);
                return;
            }
            Err(e) => {
                pending.lock().expect("pending lock").fail_all(e.into());
                return;
            }
            Ok(_) => {}
        }
        let parsed: Result<Value, _> = serde_json::from_str(line.trim_end());
        let id = parsed
            .as_ref()
            .ok()
            .and_then(|v| v.get("id"))
            .and_then(Value::as_str)
            .map(str::to_owned);
        match (parsed, id) {
            (Ok(value), Some(id)) => {
                let waiter = pending.lock().expect("pending lock").waiters.remove(&id);
                // Unknown ids are late replies to requests that timed out.
                if let Some(tx) = waiter {
                    let _ = tx.send(Ok(value));
                }
            }
            _ => {
                let err = WireError::Malformed(format!("unroutable line `{}`", line.trim_end()));
                pending.lock().expect("pending lock").fail_all(err);
                return;
            }
        }
    }
}

/// Server side of the protocol: handshake, then answer each request line
/// with `handler`. Returns when the client closes the stream.
pub fn serve<R, W, F>(reader: R, mut writer: W, mut handler: F) -> Result<(), WireError>
where
    R: BufRead,
    W: Write,
    F: FnMut(Value) -> Value,
{
    let mut lines = reader.lines();
    let first = lines
        .next()
        .ok_or_else(|| WireError::Handshake("client closed before handshake".into()))??;
    check_handshake(&first)?;
    writeln!(writer, "{}", handshake_line())?;
    writer.flush()?;
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let request: Value =
            serde_json::from_str(&line).map_err(|e| WireError::Malformed(e.to_string()))?;
        writeln!(writer, "{}", handler(request))?;
        writer.flush()?;
    }
    Ok(())
}
