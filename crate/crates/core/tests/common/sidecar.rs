//! Mock provider sidecar speaking the JSON-over-HTTP protocol.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};

use qaforge_core::providers::http::{HttpClient, HttpOptions};
use qaforge_core::providers::Role;
use serde_json::Value;

#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub method: String,
    pub path: String,
    pub body: Value,
}

type Handler = dyn Fn(&Request) -> (u16, String) + Send + Sync;

pub struct MockSidecar {
    pub base: String,
    log: Arc<Mutex<Vec<Request>>>,
}

impl MockSidecar {
    pub fn start(handler: impl Fn(&Request) -> (u16, String) + Send + Sync + 'static) -> Self {
        Self::start_limited(None, handler)
    }

    /// Serves one request per connection for the first `limit` connections,
    /// then stops listening so later calls are refused.
    pub fn start_limited(
        limit: Option<usize>,
        handler: impl Fn(&Request) -> (u16, String) + Send + Sync + 'static,
    ) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let log = Arc::new(Mutex::new(Vec::new()));
        let handler: Arc<Handler> = Arc::new(handler);
        let shared = log.clone();
        std::thread::spawn(move || {
            for (n, stream) in listener.incoming().enumerate() {
                let Ok(stream) = stream else { continue };
                let (log, handler) = (shared.clone(), handler.clone());
                let once = limit.is_some();
                let worker = std::thread::spawn(move || serve(stream, &log, &*handler, once));
                if limit.is_some_and(|l| n + 1 >= l) {
                    let _ = worker.join();
                    return;
                }
            }
        });
        MockSidecar { base, log }
    }

    pub fn json(handler: impl Fn(&Request) -> Value + Send + Sync + 'static) -> Self {
        Self::start(move |r| (200, handler(r).to_string()))
    }

    pub fn requests(&self) -> Vec<Request> {
        self.log.lock().unwrap().clone()
    }

    pub fn client(&self, role: Role) -> HttpClient {
        HttpClient::new(
            role,
            &self.base,
            &HttpOptions {
                timeout_ms: 10_000,
                max_in_flight: 4,
            },
        )
    }
}

fn serve(stream: TcpStream, log: &Mutex<Vec<Request>>, handler: &Handler, once: bool) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut out = stream;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let mut parts = line.split_whitespace();
        let method = parts.next().unwrap_or_default().to_string();
        let path = parts.next().unwrap_or_default().to_string();
        let mut length = 0usize;
        loop {
            let mut h = String::new();
            reader.read_line(&mut h).unwrap();
            let h = h.trim_end();
            if h.is_empty() {
                break;
            }
            if let Some((k, v)) = h.split_once(':') {
                if k.eq_ignore_ascii_case("content-length") {
                    length = v.trim().parse().unwrap();
                }
            }
        }
        let mut body = vec![0u8; length];
        reader.read_exact(&mut body).unwrap();
        let body = if body.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&body).expect("request body is JSON")
        };
        let req = Request { method, path, body };
        log.lock().unwrap().push(req.clone());
        let (status, text) = handler(&req);
        let reason = if status == 200 { "OK" } else { "Error" };
        let close = if once { "Connection: close\r\n" } else { "" };
        let resp = format!(
            "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\n{close}Content-Length: {}\r\n\r\n{text}",
            text.len()
        );
        if out.write_all(resp.as_bytes()).is_err() || once {
            return;
        }
    }
}

pub fn post(path: &str, body: Value) -> Request {
    Request {
        method: "POST".into(),
        path: path.into(),
        body,
    }
}
