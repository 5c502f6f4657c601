//! Executes requests against a network endpoint or an in-process handler.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Per-request timeout used when none is configured.
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

/// Largest response body read from the wire.
const BODY_LIMIT: u64 = 16 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "kebab-case")]
pub enum TransportError {
    Timeout,
    ConnectionRefused,
    ProtocolError(String),
}

impl fmt::Display for TransportError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransportError::Timeout => f.write_str("timeout"),
            TransportError::ConnectionRefused => f.write_str("connection refused"),
            TransportError::ProtocolError(msg) => write!(f, "protocol error: {msg}"),
        }
    }
}

/// A request as it goes on the wire.
#[derive(Debug, Clone, PartialEq)]
pub struct WireRequest {
    pub method: http::Method,
    /// Origin-form target: path plus optional query.
    pub target: String,
    pub headers: Vec<(String, String)>,
    pub body: Option<Vec<u8>>,
}

/// Outcome of one exchange. Exactly one of `status` and `transport_error`
/// is set.
#[derive(Debug, Clone, PartialEq)]
pub struct HttpExchangeResult {
    pub status: Option<u16>,
    /// Lowercased header names.
    pub headers: BTreeMap<String, String>,
    pub body: Vec<u8>,
    /// Parsed body when the content type is JSON and the body parses.
    pub json: Option<Value>,
    pub latency: Duration,
    pub transport_error: Option<TransportError>,
}

impl HttpExchangeResult {
    pub fn received(
        status: u16,
        headers: BTreeMap<String, String>,
        body: Vec<u8>,
        latency: Duration,
    ) -> HttpExchangeResult {
        let headers: BTreeMap<String, String> = headers
            .into_iter()
            .map(|(k, v)| (k.to_ascii_lowercase(), v))
            .collect();
        let is_json = headers
            .get("content-type")
            .is_some_and(|ct| crate::spec::is_json_media_type(ct.split(';').next().unwrap_or("")));
        let json = if is_json {
            serde_json::from_slice(&body).ok()
        } else {
            None
        };
        HttpExchangeResult {
            status: Some(status),
            headers,
            body,
            json,
            latency,
            transport_error: None,
        }
    }

    pub fn failed(error: TransportError, latency: Duration) -> HttpExchangeResult {
        HttpExchangeResult {
            status: None,
            headers: BTreeMap::new(),
            body: Vec::new(),
            json: None,
            latency,
            transport_error: Some(error),
        }
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.get(&name.to_ascii_lowercase()).map(String::as_str)
    }

    pub fn is_success(&self) -> bool {
        self.status.is_some_and(|s| (200..300).contains(&s))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DriverError {
    #[error("invalid base URL `{0}`")]
    BadBaseUrl(String),
    #[error("endpoint {endpoint} is unreachable: {error}")]
    EndpointUnreachable {
        endpoint: String,
        error: TransportError,
    },
}

/// Something requests can be sent to. Implementations are shared by all
/// in-flight workers.
pub trait Target: Send + Sync {
    /// Sends one request, at most one wire attempt, and never fails past the
    /// result.
    fn execute(&self, request: &WireRequest, timeout: Duration) -> HttpExchangeResult;

    /// Checks once that the endpoint answers at all.
    fn probe(&self, timeout: Duration) -> Result<(), DriverError>;

    fn describe(&self) -> String;
}

#[derive(Debug, Clone, Default)]
pub struct NetworkOptions {
    /// Sent with every request unless the request sets the same header.
    pub default_headers: Vec<(String, String)>,
    /// Skip TLS certificate verification.
    pub insecure: bool,
}

/// HTTP/1.1 endpoint reached over TCP, optionally TLS.
pub struct NetworkTarget {
    base_url: String,
    agent: ureq::Agent,
    default_headers: Vec<(String, String)>,
}

impl NetworkTarget {
    pub fn new(base_url: &str, options: NetworkOptions) -> Result<NetworkTarget, DriverError> {
        let base_url = base_url.trim_end_matches('/').to_string();
        let parsed: http::Uri = base_url
            .parse()
            .map_err(|_| DriverError::BadBaseUrl(base_url.clone()))?;
        if parsed.scheme().is_none() || parsed.host().is_none() {
            return Err(DriverError::BadBaseUrl(base_url));
        }
        let tls = ureq::tls::TlsConfig::builder()
            .disable_verification(options.insecure)
            .build();
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .max_redirects(0)
            .max_idle_connections_per_host(64)
            .timeout_global(Some(DEFAULT_TIMEOUT))
            .tls_config(tls)
            .build()
            .into();
        Ok(NetworkTarget {
            base_url,
            agent,
            default_headers: options.default_headers,
        })
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn send(&self, request: &WireRequest, timeout: Duration) -> Result<HttpExchangeResult, TransportError> {
        let started = Instant::now();
        let mut builder = http::Request::builder()
            .method(request.method.clone())
            .uri(format!("{}{}", self.base_url, request.target));
        for (name, value) in &self.default_headers {
            if !request.headers.iter().any(|(n, _)| n.eq_ignore_ascii_case(name)) {
                builder = builder.header(name.as_str(), value.as_str());
            }
        }
        for (name, value) in &request.headers {
            builder = builder.header(name.as_str(), value.as_str());
        }
        let req = builder
            .body(request.body.clone().unwrap_or_default())
            .map_err(|e| TransportError::ProtocolError(e.to_string()))?;
        let req = self
            .agent
            .configure_request(req)
            .timeout_global(Some(timeout))
            .build();
        let response = self.agent.run(req).map_err(map_error)?;
        let status = response.status().as_u16();
        let headers = response
            .headers()
            .iter()
            .map(|(k, v)| (k.as_str().to_string(), String::from_utf8_lossy(v.as_bytes()).into_owned()))
            .collect();
        let body = response
            .into_body()
            .with_config()
            .limit(BODY_LIMIT)
            .read_to_vec()
            .map_err(map_error)?;
        Ok(HttpExchangeResult::received(status, headers, body, started.elapsed()))
    }
}

fn map_error(error: ureq::Error) -> TransportError {
    match error {
        ureq::Error::Timeout(_) => TransportError::Timeout,
        ureq::Error::ConnectionFailed => TransportError::ConnectionRefused,
        ureq::Error::Io(e) => match e.kind() {
            std::io::ErrorKind::ConnectionRefused => TransportError::ConnectionRefused,
            std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock => TransportError::Timeout,
            _ => TransportError::ProtocolError(e.to_string()),
        },
        other => TransportError::ProtocolError(other.to_string()),
    }
}

impl Target for NetworkTarget {
    fn execute(&self, request: &WireRequest, timeout: Duration) -> HttpExchangeResult {
        let started = Instant::now();
        self.send(request, timeout)
            .unwrap_or_else(|e| HttpExchangeResult::failed(e, started.elapsed()))
    }

    fn probe(&self, timeout: Duration) -> Result<(), DriverError> {
        let request = WireRequest {
            method: http::Method::GET,
            target: "/".into(),
            headers: Vec::new(),
            body: None,
        };
        match self.execute(&request, timeout).transport_error {
            None => Ok(()),
            Some(error) => Err(DriverError::EndpointUnreachable {
                endpoint: self.base_url.clone(),
                error,
            }),
        }
    }

    fn describe(&self) -> String {
        self.base_url.clone()
    }
}

type Handler = dyn Fn(http::Request<Vec<u8>>) -> http::Response<Vec<u8>> + Send + Sync;

/// A handler called directly, without sockets. The timeout is not enforced.
#[derive(Clone)]
pub struct InProcessTarget {
    handler: Arc<Handler>,
}

impl InProcessTarget {
    pub fn new<F>(handler: F) -> InProcessTarget
    where
        F: Fn(http::Request<Vec<u8>>) -> http::Response<Vec<u8>> + Send + Sync + 'static,
    {
        InProcessTarget {
            handler: Arc::new(handler),
        }
    }
}

impl fmt::Debug for InProcessTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("InProcessTarget")
    }
}

impl Target for InProcessTarget {
    fn execute(&self, request: &WireRequest, _timeout: Duration) -> HttpExchangeResult {
        let started = Instant::now();
        let mut builder = http::Request::builder()
            .method(request.method.clone())
            .uri(request.target.as_str());
        for (name, value) in &request.headers {
            builder = builder.header(name.as_str(), value.as_str());
        }
        let req = match builder.body(request.body.clone().unwrap_or_default()) {
            Ok(req) => req,
            Err(e) => {
                return HttpExchangeResult::failed(
                    TransportError::ProtocolError(e.to_string()),
                    started.elapsed(),
                )
            }
        };
        let response = (self.handler)(req);
        let status = response.status().as_u16();
        let headers = response
            .headers()
            .iter()
            .map(|(k, v)| (k.as_str().to_string(), String::from_utf8_lossy(v.as_bytes()).into_owned()))
            .collect();
        HttpExchangeResult::received(status, headers, response.into_body(), started.elapsed())
    }

    fn probe(&self, _timeout: Duration) -> Result<(), DriverError> {
        Ok(())
    }

    fn describe(&self) -> String {
        "in-process".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn get(target: &str) -> WireRequest {
        WireRequest {
            method: http::Method::GET,
            target: target.into(),
            headers: vec![],
            body: None,
        }
    }

    #[test]
    fn rejects_relative_base_urls() {
        assert!(NetworkTarget::new("localhost:8080", NetworkOptions::default()).is_err());
        assert!(NetworkTarget::new("http://localhost:8080/", NetworkOptions::default()).is_ok());
    }

    #[test]
    fn closed_port_is_connection_refused() {
        let port = std::net::TcpListener::bind("127.0.0.1:0")
            .unwrap()
            .local_addr()
            .unwrap()
            .port();
        let target = NetworkTarget::new(&format!("http://127.0.0.1:{port}"), NetworkOptions::default()).unwrap();
        let result = target.execute(&get("/books"), Duration::from_secs(2));
        assert_eq!(result.status, None);
        assert_eq!(result.transport_error, Some(TransportError::ConnectionRefused));
        assert!(target.probe(Duration::from_secs(2)).is_err());
    }

    #[test]
    fn in_process_results_are_normalized() {
        let target = InProcessTarget::new(|req| {
            http::Response::builder()
                .status(200)
                .header("Content-Type", "application/json")
                .body(format!("{{\"path\":\"{}\"}}", req.uri()).into_bytes())
                .unwrap()
        });
        let result = target.execute(&get("/books?limit=2"), DEFAULT_TIMEOUT);
        assert_eq!(result.status, Some(200));
        assert_eq!(result.header("Content-Type"), Some("application/json"));
        assert_eq!(result.json.unwrap()["path"], "/books?limit=2");
    }
}
