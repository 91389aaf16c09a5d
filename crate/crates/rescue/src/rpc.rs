//! XML-RPC over HTTP/1.1: a blocking client and a multi-worker server.

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use crate::xmlrpc::{self, DecodeError, Value};

#[derive(Debug, thiserror::Error)]
pub enum CallError {
    #[error("transport: {0}")]
    Transport(String),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

/// Calls `method` on the XML-RPC server at `uri`. `timeout` bounds the
/// whole exchange, connect included. Connections are never reused so a
/// restarted peer is always reached through a fresh socket.
pub fn call(uri: &str, method: &str, params: &[Value], timeout: Duration) -> Result<Value, CallError> {
    let agent = ureq::AgentBuilder::new()
        .timeout_connect(timeout)
        .timeout(timeout)
        .max_idle_connections(0)
        .build();
    let body = xmlrpc::encode_call(method, params);
    let response = match agent
        .post(uri)
        .set("Content-Type", "text/xml")
        .send_string(&body)
    {
        Ok(r) => r,
        // XML-RPC servers may report faults with non-2xx status codes
        Err(ureq::Error::Status(_, r)) => r,
        Err(e) => return Err(CallError::Transport(e.to_string())),
    };
    let text = response
        .into_string()
        .map_err(|e| CallError::Transport(e.to_string()))?;
    Ok(xmlrpc::decode_response(&text)?)
}

/// Unpacks a `[code, statusMessage, value]` triple.
pub fn split_triple(value: Value) -> Result<(i32, String, Value), CallError> {
    let shape = || CallError::Decode(DecodeError::Structure("response is not a [code, message, value] triple".into()));
    let Value::Array(items) = value else {
        return Err(shape());
    };
    let [code, message, value]: [Value; 3] = items.try_into().map_err(|_| shape())?;
    match (code, message) {
        (Value::Int(code), Value::Str(message)) => Ok((code, message, value)),
        _ => Err(shape()),
    }
}

/// Calls a method that answers with a status triple and returns the payload
/// when the code is 1.
pub fn call_ok(uri: &str, method: &str, params: &[Value], timeout: Duration) -> Result<Value, CallError> {
    let (code, message, value) = split_triple(call(uri, method, params, timeout)?)?;
    if code == 1 {
        Ok(value)
    } else {
        Err(CallError::Decode(DecodeError::Fault { code, message }))
    }
}

/// Request handler: method name and decoded parameters in, response value out.
pub type Handler = dyn Fn(&str, Vec<Value>) -> Value + Send + Sync;

/// Produces the response body for a request that could not be decoded.
pub type Malformed = dyn Fn(&DecodeError) -> Value + Send + Sync;

/// An XML-RPC server running on a pool of worker threads.
pub struct RpcServer {
    server: Arc<tiny_http::Server>,
    workers: Vec<JoinHandle<()>>,
    addr: SocketAddr,
}

impl RpcServer {
    pub fn bind(host: &str, port: u16) -> std::io::Result<BoundListener> {
        let server = tiny_http::Server::http((host, port)).map_err(std::io::Error::other)?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("listener has no ip address"))?;
        Ok(BoundListener { server, addr })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn port(&self) -> u16 {
        self.addr.port()
    }

    /// Stops accepting, waits for in-flight requests, then closes the
    /// listening socket.
    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        for _ in &self.workers {
            self.server.unblock();
        }
        for worker in self.workers.drain(..) {
            let _ = worker.join();
        }
    }
}

impl Drop for RpcServer {
    fn drop(&mut self) {
        self.stop();
    }
}

/// A bound socket that is not yet answering requests. Connections made
/// before [`BoundListener::serve`] wait in the accept queue.
pub struct BoundListener {
    server: tiny_http::Server,
    addr: SocketAddr,
}

impl BoundListener {
    pub fn port(&self) -> u16 {
        self.addr.port()
    }

    pub fn serve(self, workers: usize, handler: Arc<Handler>, malformed: Arc<Malformed>) -> RpcServer {
        let server = Arc::new(self.server);
        let workers = (0..workers.max(1))
            .map(|i| {
                let server = Arc::clone(&server);
                let handler = Arc::clone(&handler);
                let malformed = Arc::clone(&malformed);
                std::thread::Builder::new()
                    .name(format!("rpc-worker-{i}"))
                    .spawn(move || {
                        while let Ok(request) = server.recv() {
                            respond(request, &*handler, &*malformed);
                        }
                    })
                    .expect("spawn rpc worker")
            })
            .collect();
        RpcServer {
            server,
            workers,
            addr: self.addr,
        }
    }
}

fn respond(mut request: tiny_http::Request, handler: &Handler, malformed: &Malformed) {
    let mut body = String::new();
    let value = match request.as_reader().read_to_string(&mut body) {
        Ok(_) => match xmlrpc::decode_call(&body) {
            Ok((method, params)) => handler(&method, params),
            Err(e) => malformed(&e),
        },
        Err(e) => malformed(&DecodeError::Xml(e.to_string())),
    };
    let header = tiny_http::Header::from_bytes(&b"Content-Type"[..], &b"text/xml"[..]).expect("static header");
    let response = tiny_http::Response::from_string(xmlrpc::encode_response(&value)).with_header(header);
    if let Err(e) = request.respond(response) {
        log::debug!("failed to send response: {e}");
    }
}
