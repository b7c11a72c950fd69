//! Pluggable transports: in-process calls and line-delimited JSON over TCP.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use thiserror::Error;

use super::envelope::{Request, Response};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("transport I/O: {0}")]
    Io(String),
    #[error("connection closed")]
    Closed,
    #[error("malformed frame: {0}")]
    Malformed(String),
}

pub trait Transport: Send {
    fn exchange(&mut self, request: Request) -> Result<Response, TransportError>;
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn exchange(&mut self, request: Request) -> Result<Response, TransportError> {
        (**self).exchange(request)
    }
}

/// Something that answers requests, such as the voting server.
pub trait Handler: Send + Sync {
    fn handle(&self, request: Request) -> Response;
}

impl<H: Handler + ?Sized> Handler for Arc<H> {
    fn handle(&self, request: Request) -> Response {
        (**self).handle(request)
    }
}

/// Direct in-process calls into a handler.
pub struct Local<H>(pub H);

impl<H: Handler> Transport for Local<H> {
    fn exchange(&mut self, request: Request) -> Result<Response, TransportError> {
        Ok(self.0.handle(request))
    }
}

/// A transport whose every call fails; used to exercise retry paths.
#[derive(Debug, Default)]
pub struct Unreachable;

impl Transport for Unreachable {
    fn exchange(&mut self, _request: Request) -> Result<Response, TransportError> {
        Err(TransportError::Io("network unreachable".into()))
    }
}

/// One JSON object per line in each direction.
pub struct SocketTransport {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl SocketTransport {
    pub fn connect<A: ToSocketAddrs>(addr: A) -> Result<Self, TransportError> {
        let stream = TcpStream::connect(addr).map_err(|e| TransportError::Io(e.to_string()))?;
        let writer = stream.try_clone().map_err(|e| TransportError::Io(e.to_string()))?;
        Ok(Self {
            reader: BufReader::new(stream),
            writer,
        })
    }
}

impl Transport for SocketTransport {
    fn exchange(&mut self, request: Request) -> Result<Response, TransportError> {
        write_frame(&mut self.writer, &request)?;
        read_frame(&mut self.reader)?.ok_or(TransportError::Closed)
    }
}

fn write_frame<T: serde::Serialize>(w: &mut TcpStream, value: &T) -> Result<(), TransportError> {
    let mut line = serde_json::to_vec(value).map_err(|e| TransportError::Malformed(e.to_string()))?;
    line.push(b'\n');
    w.write_all(&line).map_err(|e| TransportError::Io(e.to_string()))
}

fn read_frame<T: serde::de::DeserializeOwned>(r: &mut BufReader<TcpStream>) -> Result<Option<T>, TransportError> {
    let mut line = String::new();
    let n = r.read_line(&mut line).map_err(|e| TransportError::Io(e.to_string()))?;
    if n == 0 {
        return Ok(None);
    }
    serde_json::from_str(line.trim_end())
        .map(Some)
        .map_err(|e| TransportError::Malformed(e.to_string()))
}

pub type ConnectionHandler = Box<dyn FnMut(Request) -> Response + Send>;

/// Accept loop running on a background thread; one thread per connection.
pub struct ServeHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ServeHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_accepting();
    }

    fn stop_accepting(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the blocking accept.
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServeHandle {
    fn drop(&mut self) {
        if self.thread.is_some() {
            self.stop_accepting();
        }
    }
}

/// Serves line-delimited JSON. `new_connection` is called once per accepted
/// connection and returns that connection's request handler.
pub fn serve<F>(listener: TcpListener, new_connection: F) -> std::io::Result<ServeHandle>
where
    F: Fn() -> ConnectionHandler + Send + Sync + 'static,
{
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let stop_flag = Arc::clone(&stop);
    let thread = std::thread::spawn(move || {
        for stream in listener.incoming() {
            if stop_flag.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = stream else { continue };
            let mut handler = new_connection();
            std::thread::spawn(move || {
                let Ok(mut writer) = stream.try_clone() else { return };
                let mut reader = BufReader::new(stream);
                while let Ok(Some(request)) = read_frame::<Request>(&mut reader) {
                    if write_frame(&mut writer, &handler(request)).is_err() {
                        break;
                    }
                }
            });
        }
    });
    Ok(ServeHandle {
        addr,
        stop,
        thread: Some(thread),
    })
}
