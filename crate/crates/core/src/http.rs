//! Blocking JSON-over-HTTP client shared by the external backends.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("backend at {endpoint} unreachable after {attempts} attempt(s): {message}")]
    Unreachable {
        endpoint: String,
        attempts: u32,
        message: String,
    },
    #[error("backend returned an invalid response: {0}")]
    InvalidResponse(String),
    #[error("fixture {path}: {message}")]
    Fixture { path: String, message: String },
    #[error("mock backend has no entry for {0:?}")]
    UnknownQuery(String),
    #[error("backend descriptor invalid: {0}")]
    Descriptor(String),
}

/// Timeout and retry policy for remote backends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpSettings {
    pub timeout_secs: f64,
    /// Extra attempts after the first failure.
    pub retries: u32,
}

impl Default for HttpSettings {
    fn default() -> Self {
        Self {
            timeout_secs: 30.0,
            retries: 2,
        }
    }
}

pub(crate) fn post_json<Req, Resp>(
    endpoint: &str,
    body: &Req,
    settings: &HttpSettings,
) -> Result<Resp, BackendError>
where
    Req: Serialize,
    Resp: DeserializeOwned,
{
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs_f64(settings.timeout_secs.max(0.001))))
        .build()
        .into();
    let attempts = settings.retries + 1;
    let mut last = String::new();
    for _ in 0..attempts {
        match agent.post(endpoint).send_json(body) {
            Ok(mut resp) => {
                return resp
                    .body_mut()
                    .read_json::<Resp>()
                    .map_err(|e| BackendError::InvalidResponse(e.to_string()));
            }
            Err(e) => last = e.to_string(),
        }
    }
    Err(BackendError::Unreachable {
        endpoint: endpoint.to_string(),
        attempts,
        message: last,
    })
}

pub(crate) fn read_fixture<T: DeserializeOwned>(path: &std::path::Path) -> Result<T, BackendError> {
    let err = |message: String| BackendError::Fixture {
        path: path.display().to_string(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| err(e.to_string()))
}

#[cfg(test)]
pub(crate) mod test_server {
    //! One-shot HTTP responder for exercising the wire contracts.

    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::mpsc;
    use std::thread;

    /// Serves `count` requests, replying with `reply(request_body)`, and
    /// returns the endpoint URL plus a channel yielding each request body.
    pub fn serve<F>(count: usize, reply: F) -> (String, mpsc::Receiver<String>)
    where
        F: Fn(&str) -> String + Send + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for stream in listener.incoming().take(count) {
                let mut stream = stream.unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let l = line.trim_end();
                    if l.is_empty() {
                        break;
                    }
                    if let Some((k, v)) = l.split_once(':') {
                        if k.eq_ignore_ascii_case("content-length") {
                            len = v.trim().parse().unwrap();
                        }
                    }
                }
                let mut body = vec![0u8; len];
                reader.read_exact(&mut body).unwrap();
                let body = String::from_utf8(body).unwrap();
                let out = reply(&body);
                tx.send(body).ok();
                write!(
                    stream,
                    "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                    out.len(),
                    out
                )
                .unwrap();
            }
        });
        (format!("http://{addr}"), rx)
    }
}
