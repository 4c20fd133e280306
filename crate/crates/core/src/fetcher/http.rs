//! Real-network transport backed by a blocking reqwest client.

use std::error::Error as _;
use std::io;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use reqwest::blocking::Client;
use reqwest::dns::{Addrs, Name, Resolve, Resolving};
use reqwest::redirect::Policy;

use super::{Exchange, HttpRequest, HttpResponse, HttpTransport, Resolver, TransportFailure};
use crate::model::ProbeConfig;

/// Bodies larger than this are truncated.
const MAX_BODY_BYTES: usize = 8 << 20;

pub struct ReqwestTransport {
    client: Client,
}

struct ResolverBridge(Arc<dyn Resolver>);

impl Resolve for ResolverBridge {
    fn resolve(&self, name: Name) -> Resolving {
        let result = self
            .0
            .resolve(name.as_str())
            .map(|ips| Box::new(ips.into_iter().map(|ip| SocketAddr::new(ip, 0))) as Addrs)
            .map_err(|e| e.into());
        Box::pin(std::future::ready(result))
    }
}

impl ReqwestTransport {
    /// Uses the system resolver.
    pub fn new(config: &ProbeConfig) -> Result<Self, reqwest::Error> {
        Self::build(config, None)
    }

    /// Resolves host names through `resolver` instead of the system.
    pub fn with_resolver(config: &ProbeConfig, resolver: Arc<dyn Resolver>) -> Result<Self, reqwest::Error> {
        Self::build(config, Some(resolver))
    }

    fn build(config: &ProbeConfig, resolver: Option<Arc<dyn Resolver>>) -> Result<Self, reqwest::Error> {
        let mut builder = Client::builder()
            .redirect(Policy::none())
            .danger_accept_invalid_certs(!config.verify_tls)
            .timeout(None);
        if let Some(resolver) = resolver {
            builder = builder.dns_resolver(Arc::new(ResolverBridge(resolver)));
        }
        Ok(Self {
            client: builder.build()?,
        })
    }
}

fn failure_of(err: &reqwest::Error) -> TransportFailure {
    if err.is_timeout() {
        return TransportFailure::DeadlineExceeded;
    }
    if err.is_dns() {
        return TransportFailure::Dns;
    }
    let mut source = err.source();
    while let Some(inner) = source {
        if let Some(io_err) = inner.downcast_ref::<io::Error>() {
            match io_err.kind() {
                io::ErrorKind::ConnectionRefused => return TransportFailure::ConnectionRefused,
                io::ErrorKind::ConnectionReset => return TransportFailure::ConnectionReset,
                io::ErrorKind::ConnectionAborted | io::ErrorKind::BrokenPipe => {
                    return TransportFailure::ConnectionAborted
                }
                io::ErrorKind::TimedOut => return TransportFailure::DeadlineExceeded,
                _ => {}
            }
        }
        source = inner.source();
    }
    if err.is_connect() {
        TransportFailure::ConnectFailed
    } else if err.is_request() || err.is_body() || err.is_decode() {
        TransportFailure::Protocol
    } else {
        TransportFailure::Other
    }
}

impl HttpTransport for ReqwestTransport {
    fn send(&self, request: &HttpRequest, budget: Duration) -> Exchange {
        let start = Instant::now();
        let result = (|| {
            let method = reqwest::Method::from_bytes(request.method.as_bytes()).map_err(|_| TransportFailure::Other)?;
            let mut builder = self.client.request(method, &request.url).timeout(budget);
            for (name, value) in &request.headers {
                builder = builder.header(name, value);
            }
            if let Some(cookie) = request.cookie_header() {
                builder = builder.header("Cookie", cookie);
            }
            let response = builder.send().map_err(|e| failure_of(&e))?;
            let status = response.status().as_u16();
            let remote = response.remote_addr();
            let headers = response
                .headers()
                .iter()
                .map(|(k, v)| {
                    (
                        k.as_str().to_string(),
                        String::from_utf8_lossy(v.as_bytes()).into_owned(),
                    )
                })
                .collect();
            let mut body = response.bytes().map_err(|e| failure_of(&e))?.to_vec();
            body.truncate(MAX_BODY_BYTES);
            Ok(HttpResponse {
                status,
                headers,
                body,
                remote,
            })
        })();
        Exchange {
            result,
            elapsed: start.elapsed(),
        }
    }
}
