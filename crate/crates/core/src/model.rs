//! Shared domain types and measurement constants.

use std::collections::HashSet;
use std::fmt;
use std::io::BufRead;
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Browser user agent the crawler presents on every request.
pub const DEFAULT_USER_AGENT: &str = "Mozilla/5.0 (Macintosh; Intel Mac OS X 10_11_6) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/66.0.3359.139 Safari/537.36";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("fetch_timeout must be positive")]
    ZeroTimeout,
    #[error("hop_delta_threshold must be at least 1")]
    ZeroHopDelta,
    #[error("max_ttl must be in 1..=255")]
    ZeroMaxTtl,
    #[error("per_ttl_probe_count must be at least 1")]
    ZeroProbeCount,
    #[error("redirect_limit must be at least 1")]
    ZeroRedirectLimit,
    #[error("per_hop_timeout must be positive")]
    ZeroHopTimeout,
}

/// Tunables shared by the fetcher and the traceroute stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeConfig {
    /// Total budget for one URL load, redirects included.
    pub fetch_timeout: Duration,
    pub user_agent: String,
    /// A TCP/HTTP path shorter than the ICMP path by more than this many hops is flagged.
    pub hop_delta_threshold: u32,
    pub max_ttl: u8,
    pub per_ttl_probe_count: u32,
    pub per_hop_timeout: Duration,
    pub redirect_limit: u32,
    pub verify_tls: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            fetch_timeout: Duration::from_secs(30),
            user_agent: DEFAULT_USER_AGENT.to_string(),
            hop_delta_threshold: 3,
            max_ttl: 30,
            per_ttl_probe_count: 3,
            per_hop_timeout: Duration::from_secs(2),
            redirect_limit: 30,
            verify_tls: true,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.fetch_timeout.is_zero() {
            return Err(ConfigError::ZeroTimeout);
        }
        if self.hop_delta_threshold < 1 {
            return Err(ConfigError::ZeroHopDelta);
        }
        if self.max_ttl < 1 {
            return Err(ConfigError::ZeroMaxTtl);
        }
        if self.per_ttl_probe_count < 1 {
            return Err(ConfigError::ZeroProbeCount);
        }
        if self.per_hop_timeout.is_zero() {
            return Err(ConfigError::ZeroHopTimeout);
        }
        if self.redirect_limit < 1 {
            return Err(ConfigError::ZeroRedirectLimit);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkKind {
    Institutional,
    Home,
    Dorm,
    Isp,
    Vpn,
    Cloud,
}

/// A measurement client location.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vantage {
    pub id: String,
    /// ISO-3166 alpha-3.
    pub country: String,
    pub city: String,
    pub network_kind: NetworkKind,
    pub region_label: String,
}

#[derive(Debug, Error)]
pub enum RosterError {
    #[error("roster i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("roster line {line}: {message}")]
    Invalid { line: usize, message: String },
}

/// Reads a vantage roster: one JSON object per line, blank lines ignored.
pub fn load_roster(path: &Path) -> Result<Vec<Vantage>, RosterError> {
    let file = std::fs::File::open(path)?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (idx, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let vantage: Vantage = serde_json::from_str(&line).map_err(|e| RosterError::Invalid {
            line: lineno,
            message: e.to_string(),
        })?;
        if vantage.region_label.trim().is_empty() {
            return Err(RosterError::Invalid {
                line: lineno,
                message: "region_label is empty".into(),
            });
        }
        if !seen.insert(vantage.id.clone()) {
            return Err(RosterError::Invalid {
                line: lineno,
                message: format!("duplicate vantage id {:?}", vantage.id),
            });
        }
        out.push(vantage);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Http,
    Https,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum UrlError {
    #[error("empty url")]
    Empty,
    #[error("unsupported scheme in {0:?}")]
    Scheme(String),
    #[error("no host in {0:?}")]
    NoHost(String),
    #[error("effective url {effective:?} is not {raw:?} with a www. prefix")]
    NotWwwVariant { raw: String, effective: String },
}

/// A URL from the input list, plus the variant actually fetched.
///
/// `raw` is the listed entry normalized to `scheme://host[/path]`; entries listed
/// without a scheme get `http://`. `effective` equals `raw` or `raw` with the
/// host prefixed by `www.`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TargetUrl {
    raw: String,
    effective: String,
    host: String,
    scheme: Scheme,
}

impl TargetUrl {
    pub fn parse(listed: &str) -> Result<Self, UrlError> {
        let raw = normalize_listed_url(listed)?;
        let (scheme, host) = split_host(&raw)?;
        Ok(Self {
            effective: raw.clone(),
            raw,
            host,
            scheme,
        })
    }

    /// Rebuilds a target from its two textual forms, as stored in a log record.
    pub fn from_parts(raw: &str, effective: &str) -> Result<Self, UrlError> {
        let base = Self::parse(raw)?;
        if base.raw != raw {
            // raw must already be normalized
            return Err(UrlError::NotWwwVariant {
                raw: raw.into(),
                effective: effective.into(),
            });
        }
        if effective == base.raw {
            return Ok(base);
        }
        match base.with_www() {
            Some(www) if www.effective == effective => Ok(www),
            _ => Err(UrlError::NotWwwVariant {
                raw: raw.into(),
                effective: effective.into(),
            }),
        }
    }

    /// The `www.`-prefixed variant, or `None` when the host already has it
    /// (or is an IP literal).
    pub fn with_www(&self) -> Option<Self> {
        if self.host.starts_with("www.") || self.host.parse::<std::net::IpAddr>().is_ok() {
            return None;
        }
        let sep = self.raw.find("://")? + 3;
        let effective = format!("{}www.{}", &self.raw[..sep], &self.raw[sep..]);
        Some(Self {
            raw: self.raw.clone(),
            host: format!("www.{}", self.host),
            effective,
            scheme: self.scheme,
        })
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }

    pub fn effective(&self) -> &str {
        &self.effective
    }

    pub fn host(&self) -> &str {
        &self.host
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn uses_fallback(&self) -> bool {
        self.raw != self.effective
    }
}

impl fmt::Display for TargetUrl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.effective)
    }
}

/// Canonical text form of a URL-list entry: trimmed, `http://` added when no
/// scheme is given, scheme and host lower-cased, a lone trailing `/` dropped.
pub fn normalize_listed_url(listed: &str) -> Result<String, UrlError> {
    let trimmed = listed.trim();
    if trimmed.is_empty() {
        return Err(UrlError::Empty);
    }
    let (scheme, rest) = match trimmed.find("://") {
        Some(pos) => (trimmed[..pos].to_ascii_lowercase(), &trimmed[pos + 3..]),
        None => ("http".to_string(), trimmed),
    };
    if scheme != "http" && scheme != "https" {
        return Err(UrlError::Scheme(trimmed.into()));
    }
    let (authority, path) = match rest.find(['/', '?', '#']) {
        Some(pos) => (&rest[..pos], &rest[pos..]),
        None => (rest, ""),
    };
    if authority.is_empty() {
        return Err(UrlError::NoHost(trimmed.into()));
    }
    let path = if path == "/" { "" } else { path };
    Ok(format!("{scheme}://{}{path}", authority.to_ascii_lowercase()))
}

fn split_host(url: &str) -> Result<(Scheme, String), UrlError> {
    let parsed = url::Url::parse(url).map_err(|_| UrlError::NoHost(url.into()))?;
    let scheme = match parsed.scheme() {
        "http" => Scheme::Http,
        "https" => Scheme::Https,
        _ => return Err(UrlError::Scheme(url.into())),
    };
    let host = parsed
        .host_str()
        .filter(|h| !h.is_empty())
        .ok_or_else(|| UrlError::NoHost(url.into()))?;
    Ok((scheme, host.trim_matches(['[', ']']).to_string()))
}

/// Outcome class of one URL load. Declaration order is the tie-break order for
/// majority computations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StatusClass {
    #[serde(rename = "2XX")]
    Ok2xx,
    #[serde(rename = "403")]
    Forbidden403,
    #[serde(rename = "4XX")]
    Client4xxOther,
    #[serde(rename = "503")]
    Unavailable503,
    #[serde(rename = "5XX")]
    Server5xxOther,
    #[serde(rename = "ConnErr")]
    ConnError,
    #[serde(rename = "DnsErr")]
    DnsError,
    #[serde(rename = "Timeout")]
    Timeout,
    #[serde(rename = "RD")]
    RedirectLoop,
    #[serde(rename = "Other")]
    Other,
}

impl StatusClass {
    pub const ALL: [StatusClass; 10] = [
        StatusClass::Ok2xx,
        StatusClass::Forbidden403,
        StatusClass::Client4xxOther,
        StatusClass::Unavailable503,
        StatusClass::Server5xxOther,
        StatusClass::ConnError,
        StatusClass::DnsError,
        StatusClass::Timeout,
        StatusClass::RedirectLoop,
        StatusClass::Other,
    ];

    /// Name used in log records.
    pub fn wire_name(self) -> &'static str {
        match self {
            StatusClass::Ok2xx => "2XX",
            StatusClass::Forbidden403 => "403",
            StatusClass::Client4xxOther => "4XX",
            StatusClass::Unavailable503 => "503",
            StatusClass::Server5xxOther => "5XX",
            StatusClass::ConnError => "ConnErr",
            StatusClass::DnsError => "DnsErr",
            StatusClass::Timeout => "Timeout",
            StatusClass::RedirectLoop => "RD",
            StatusClass::Other => "Other",
        }
    }

    /// Column heading in the per-vantage count table.
    pub fn column_heading(self) -> &'static str {
        match self {
            StatusClass::Ok2xx => "2XX",
            StatusClass::Forbidden403 => "403",
            StatusClass::Client4xxOther => "4XX (Other)",
            StatusClass::Unavailable503 => "503",
            StatusClass::Server5xxOther => "5XX (Other)",
            StatusClass::ConnError => "Conn. Err",
            StatusClass::DnsError => "DNS Err",
            StatusClass::Timeout => "Timed Out",
            StatusClass::RedirectLoop => "Too Many Redirects",
            StatusClass::Other => "Other",
        }
    }

    /// Short code for matrix cells of non-HTTP failures.
    pub fn short_code(self) -> &'static str {
        match self {
            StatusClass::Ok2xx => "200",
            StatusClass::Forbidden403 => "403",
            StatusClass::Client4xxOther => "4XX",
            StatusClass::Unavailable503 => "503",
            StatusClass::Server5xxOther => "5XX",
            StatusClass::ConnError => "CE",
            StatusClass::DnsError => "DE",
            StatusClass::Timeout => "TO",
            StatusClass::RedirectLoop => "RD",
            StatusClass::Other => "OT",
        }
    }

    /// True for the classes that carry an HTTP status code.
    pub fn is_http(self) -> bool {
        matches!(
            self,
            StatusClass::Ok2xx
                | StatusClass::Forbidden403
                | StatusClass::Client4xxOther
                | StatusClass::Unavailable503
                | StatusClass::Server5xxOther
        )
    }
}

impl fmt::Display for StatusClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.wire_name())
    }
}

impl FromStr for StatusClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StatusClass::ALL
            .into_iter()
            .find(|c| c.wire_name() == s)
            .ok_or_else(|| format!("unknown status class {s:?}"))
    }
}

/// Block-type of a response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BlockpageClass {
    GeoBlockExplicit,
    BypassableChallenge,
    StaticDeny,
    /// Assigned from failure classes only, never from body text.
    NonHttpBlock,
    NotBlockpage,
}

impl BlockpageClass {
    pub const ALL: [BlockpageClass; 5] = [
        BlockpageClass::GeoBlockExplicit,
        BlockpageClass::BypassableChallenge,
        BlockpageClass::StaticDeny,
        BlockpageClass::NonHttpBlock,
        BlockpageClass::NotBlockpage,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BlockpageClass::GeoBlockExplicit => "GeoBlockExplicit",
            BlockpageClass::BypassableChallenge => "BypassableChallenge",
            BlockpageClass::StaticDeny => "StaticDeny",
            BlockpageClass::NonHttpBlock => "NonHttpBlock",
            BlockpageClass::NotBlockpage => "NotBlockpage",
        }
    }

    pub fn is_block(self) -> bool {
        self != BlockpageClass::NotBlockpage
    }
}

impl fmt::Display for BlockpageClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BlockpageClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BlockpageClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown blockpage class {s:?}"))
    }
}

/// SHA-256 of a raw response body.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct BodyDigest(pub [u8; 32]);

impl BodyDigest {
    pub fn of(body: &[u8]) -> Self {
        use sha2::{Digest, Sha256};
        Self(Sha256::digest(body).into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let bytes = hex::decode(s).ok()?;
        Some(Self(bytes.try_into().ok()?))
    }
}

impl fmt::Debug for BodyDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BodyDigest({})", self.to_hex())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OutcomeError {
    #[error("http_status must be present exactly for HTTP classes (class {class}, status {status:?})")]
    StatusMismatch { class: StatusClass, status: Option<u16> },
    #[error("blockpage label without a response body")]
    BlockpageWithoutBody,
}

/// One URL-load attempt from one vantage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FetchOutcome {
    pub url: TargetUrl,
    pub vantage_id: String,
    pub run_index: u32,
    pub status_class: StatusClass,
    pub http_status: Option<u16>,
    pub body_digest: Option<BodyDigest>,
    pub body_size: Option<u64>,
    pub blockpage: Option<BlockpageClass>,
    pub final_url: String,
    pub elapsed_ms: u64,
    pub timestamp: DateTime<Utc>,
}

impl FetchOutcome {
    pub fn validate(&self) -> Result<(), OutcomeError> {
        if self.status_class.is_http() != self.http_status.is_some() {
            return Err(OutcomeError::StatusMismatch {
                class: self.status_class,
                status: self.http_status,
            });
        }
        if self.blockpage.is_some() && self.body_size.is_none() {
            return Err(OutcomeError::BlockpageWithoutBody);
        }
        Ok(())
    }

    /// Block type for reporting: body label when present, else failure-class evidence.
    pub fn block_type(&self) -> BlockpageClass {
        match (self.blockpage, self.status_class) {
            (Some(label), _) => label,
            (None, StatusClass::DnsError | StatusClass::ConnError | StatusClass::Timeout) => {
                BlockpageClass::NonHttpBlock
            }
            (None, _) => BlockpageClass::NotBlockpage,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ManualResult {
    AvailableClean,
    AvailableWithCaptcha,
    AvailableWithDelay,
    NotAvailable,
}

/// Result of a human loading a short-listed URL from the blocked region.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManualAnnotation {
    pub url: String,
    pub region_label: String,
    pub result: ManualResult,
    #[serde(default)]
    pub note: String,
}
