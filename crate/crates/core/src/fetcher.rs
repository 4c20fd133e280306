//! One-URL loader with the calibrated crawler behavior: fixed total timeout,
//! browser user agent, `www.` fallback on DNS failure, cookie replay across
//! redirects, and HTTP-to-HTTPS redirect following.

mod http;

use std::collections::BTreeMap;
use std::net::{IpAddr, SocketAddr, ToSocketAddrs};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blockpage::{classify_bytes, RuleSet};
use crate::model::{BodyDigest, FetchOutcome, ProbeConfig, StatusClass, TargetUrl};

pub use http::ReqwestTransport;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot resolve {host}: {reason}")]
pub struct ResolveError {
    pub host: String,
    pub reason: String,
}

/// Name resolution: host to address list.
pub trait Resolver: Send + Sync {
    fn resolve(&self, host: &str) -> Result<Vec<IpAddr>, ResolveError>;
}

/// The operating system resolver.
#[derive(Debug, Default, Clone, Copy)]
pub struct SystemResolver;

impl Resolver for SystemResolver {
    fn resolve(&self, host: &str) -> Result<Vec<IpAddr>, ResolveError> {
        let addrs: Vec<IpAddr> = (host, 80)
            .to_socket_addrs()
            .map_err(|e| ResolveError {
                host: host.into(),
                reason: e.to_string(),
            })?
            .map(|sa| sa.ip())
            .collect();
        if addrs.is_empty() {
            return Err(ResolveError {
                host: host.into(),
                reason: "no addresses".into(),
            });
        }
        Ok(addrs)
    }
}

/// A target after the `www.` fallback step. Empty `addresses` means neither
/// variant resolved; fetching it yields a DNS error.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedTarget {
    pub target: TargetUrl,
    pub addresses: Vec<IpAddr>,
}

impl ResolvedTarget {
    pub fn is_resolved(&self) -> bool {
        !self.addresses.is_empty()
    }
}

/// Tries the listed host first; only on DNS failure, and only when the host
/// lacks a `www.` prefix, tries the `www.` variant.
pub fn resolve_with_www_fallback(target: &TargetUrl, resolver: &dyn Resolver) -> ResolvedTarget {
    if let Ok(addresses) = resolver.resolve(target.host()) {
        return ResolvedTarget {
            target: target.clone(),
            addresses,
        };
    }
    if let Some(www) = target.with_www() {
        if let Ok(addresses) = resolver.resolve(www.host()) {
            return ResolvedTarget { target: www, addresses };
        }
    }
    ResolvedTarget {
        target: target.clone(),
        addresses: Vec::new(),
    }
}

/// Why a transport exchange produced no HTTP response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TransportFailure {
    Dns,
    ConnectionRefused,
    ConnectionReset,
    ConnectionAborted,
    ConnectFailed,
    DeadlineExceeded,
    RedirectLimit,
    Tls,
    Protocol,
    Other,
}

impl TransportFailure {
    pub const ALL: [TransportFailure; 10] = [
        TransportFailure::Dns,
        TransportFailure::ConnectionRefused,
        TransportFailure::ConnectionReset,
        TransportFailure::ConnectionAborted,
        TransportFailure::ConnectFailed,
        TransportFailure::DeadlineExceeded,
        TransportFailure::RedirectLimit,
        TransportFailure::Tls,
        TransportFailure::Protocol,
        TransportFailure::Other,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ClassifyError {
    #[error("both an HTTP status and a transport failure were given")]
    BothPresent,
    #[error("neither an HTTP status nor a transport failure was given")]
    NeitherPresent,
}

/// Maps the final response status, or the failure that prevented one, to its class.
pub fn classify_response(
    http_status: Option<u16>,
    failure: Option<TransportFailure>,
) -> Result<StatusClass, ClassifyError> {
    Ok(match (http_status, failure) {
        (Some(_), Some(_)) => return Err(ClassifyError::BothPresent),
        (None, None) => return Err(ClassifyError::NeitherPresent),
        (Some(status), None) => match status {
            200..=299 => StatusClass::Ok2xx,
            403 => StatusClass::Forbidden403,
            400..=499 => StatusClass::Client4xxOther,
            503 => StatusClass::Unavailable503,
            500..=599 => StatusClass::Server5xxOther,
            _ => StatusClass::Other,
        },
        (None, Some(failure)) => match failure {
            TransportFailure::Dns => StatusClass::DnsError,
            TransportFailure::ConnectionRefused
            | TransportFailure::ConnectionReset
            | TransportFailure::ConnectionAborted
            | TransportFailure::ConnectFailed => StatusClass::ConnError,
            TransportFailure::DeadlineExceeded => StatusClass::Timeout,
            TransportFailure::RedirectLimit => StatusClass::RedirectLoop,
            TransportFailure::Tls | TransportFailure::Protocol | TransportFailure::Other => StatusClass::Other,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpRequest {
    pub method: String,
    pub url: String,
    pub headers: Vec<(String, String)>,
    pub cookies: Vec<(String, String)>,
}

impl HttpRequest {
    pub fn header(&self, name: &str) -> Option<&str> {
        find_header(&self.headers, name)
    }

    /// The `Cookie` header value a transport should send, if any.
    pub fn cookie_header(&self) -> Option<String> {
        if self.cookies.is_empty() {
            return None;
        }
        Some(
            self.cookies
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect::<Vec<_>>()
                .join("; "),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
    pub remote: Option<SocketAddr>,
}

impl HttpResponse {
    pub fn header(&self, name: &str) -> Option<&str> {
        find_header(&self.headers, name)
    }
}

fn find_header<'a>(headers: &'a [(String, String)], name: &str) -> Option<&'a str> {
    headers
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case(name))
        .map(|(_, v)| v.as_str())
}

/// Result of one request/response exchange and the time it took.
#[derive(Debug, Clone)]
pub struct Exchange {
    pub result: Result<HttpResponse, TransportFailure>,
    pub elapsed: Duration,
}

/// A single-hop HTTP client. Redirects are never followed by the transport.
pub trait HttpTransport: Send + Sync {
    fn send(&self, request: &HttpRequest, budget: Duration) -> Exchange;
}

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// A clock that always reads the same instant; used for reproducible simulator runs.
#[derive(Debug, Clone, Copy)]
pub struct FixedClock(pub DateTime<Utc>);

impl Clock for FixedClock {
    fn now(&self) -> DateTime<Utc> {
        self.0
    }
}

/// Cookies scoped to one redirect chain.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CookieJar {
    cookies: BTreeMap<String, String>,
}

impl CookieJar {
    pub fn get(&self, name: &str) -> Option<&str> {
        self.cookies.get(name).map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.cookies.is_empty()
    }

    pub fn pairs(&self) -> Vec<(String, String)> {
        self.cookies.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    /// Records a `Set-Cookie` header value (attributes after `;` are ignored).
    pub fn store(&mut self, set_cookie: &str) {
        let pair = set_cookie.split(';').next().unwrap_or_default();
        if let Some((name, value)) = pair.split_once('=') {
            let name = name.trim();
            if !name.is_empty() {
                self.cookies.insert(name.to_string(), value.trim().to_string());
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct FetchRequest<'a> {
    pub target: TargetUrl,
    pub config: &'a ProbeConfig,
    pub session: CookieJar,
}

impl<'a> FetchRequest<'a> {
    pub fn new(target: TargetUrl, config: &'a ProbeConfig) -> Self {
        Self {
            target,
            config,
            session: CookieJar::default(),
        }
    }
}

/// Everything a fetch needs besides the request itself.
#[derive(Clone, Copy)]
pub struct Fetcher<'a> {
    pub transport: &'a dyn HttpTransport,
    pub rules: &'a RuleSet,
    pub clock: &'a dyn Clock,
}

fn is_redirect(status: u16) -> bool {
    matches!(status, 301 | 302 | 303 | 307 | 308)
}

impl Fetcher<'_> {
    /// Loads one URL. Never fails: every failure mode becomes a status class.
    pub fn fetch(&self, mut request: FetchRequest<'_>, vantage_id: &str, run_index: u32) -> FetchOutcome {
        let config = request.config;
        let timestamp = self.clock.now();
        let mut url = request.target.effective().to_string();
        let mut elapsed = Duration::ZERO;
        let mut redirects = 0u32;

        let finish =
            |class: StatusClass, status: Option<u16>, body: Option<&[u8]>, final_url: String, elapsed: Duration| {
                let blockpage = body.map(|b| classify_bytes(b, status.unwrap_or(0), self.rules));
                FetchOutcome {
                    url: request.target.clone(),
                    vantage_id: vantage_id.to_string(),
                    run_index,
                    status_class: class,
                    http_status: status,
                    body_digest: body.map(BodyDigest::of),
                    body_size: body.map(|b| b.len() as u64),
                    blockpage,
                    final_url,
                    elapsed_ms: elapsed.as_millis() as u64,
                    timestamp,
                }
            };

        loop {
            let Some(budget) = config.fetch_timeout.checked_sub(elapsed).filter(|b| !b.is_zero()) else {
                return finish(StatusClass::Timeout, None, None, url, elapsed);
            };
            let http_request = HttpRequest {
                method: "GET".into(),
                url: url.clone(),
                headers: vec![("User-Agent".into(), config.user_agent.clone())],
                cookies: request.session.pairs(),
            };
            let exchange = self.transport.send(&http_request, budget);
            elapsed += exchange.elapsed;

            let response = match exchange.result {
                Ok(response) => response,
                Err(failure) => {
                    let class = classify_response(None, Some(failure)).expect("failure only");
                    return finish(class, None, None, url, elapsed);
                }
            };
            for (name, value) in &response.headers {
                if name.eq_ignore_ascii_case("set-cookie") {
                    request.session.store(value);
                }
            }
            let next = is_redirect(response.status)
                .then(|| response.header("location"))
                .flatten()
                .and_then(|loc| url::Url::parse(&url).ok()?.join(loc).ok());
            match next {
                Some(next) => {
                    redirects += 1;
                    if redirects > config.redirect_limit {
                        let class =
                            classify_response(None, Some(TransportFailure::RedirectLimit)).expect("failure only");
                        return finish(class, None, None, url, elapsed);
                    }
                    url = next.to_string();
                }
                None => {
                    if elapsed > config.fetch_timeout {
                        return finish(StatusClass::Timeout, None, None, url, elapsed);
                    }
                    let class = classify_response(Some(response.status), None).expect("status only");
                    return finish(
                        class,
                        class.is_http().then_some(response.status),
                        Some(&response.body),
                        url,
                        elapsed,
                    );
                }
            }
        }
    }
}
