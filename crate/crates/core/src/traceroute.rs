//! Three-protocol traceroute differential.
//!
//! An ICMP echo traceroute gives the baseline hop count to the server. A
//! TCP-SYN traceroute and a stateful HTTP traceroute then measure how far the
//! first transport or application reply is. A reply that arrives well short of
//! the baseline, or one whose source disagrees with the ICMP responder at the
//! same hop, points at an on-path middlebox.

mod packet;
pub mod raw;

use std::net::IpAddr;
use std::sync::atomic::{AtomicU16, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ProbeConfig;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("raw socket access denied: {0}")]
    Permission(String),
    #[error("tcp handshake failed: {0}")]
    Handshake(String),
    #[error("unsupported probe: {0}")]
    Unsupported(String),
    #[error("probe i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// What a probe carries.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Payload {
    EchoRequest,
    Syn {
        port: u16,
    },
    HttpGet {
        port: u16,
        host: String,
        path: String,
        user_agent: String,
    },
}

/// Identifiers used to pair replies with probes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ProbeIdent {
    pub flow: u16,
    pub seq: u16,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeSpec {
    pub destination: IpAddr,
    pub ttl: u8,
    pub attempt: u32,
    pub ident: ProbeIdent,
    pub payload: Payload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ReplyKind {
    TtlExceeded,
    EchoReply,
    SynAck,
    Rst,
    HttpResponse,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeReply {
    pub responder: IpAddr,
    pub kind: ReplyKind,
    pub rtt: Duration,
}

/// Sends one TTL-limited probe and waits for its matching reply.
pub trait ProbeTransport: Send + Sync {
    /// `Ok(None)` means no matching reply before `timeout`.
    fn probe(&self, spec: &ProbeSpec, timeout: Duration) -> Result<Option<ProbeReply>, ProbeError>;

    /// Completes a full TCP handshake with the destination (untruncated TTL).
    fn handshake(&self, destination: IpAddr, port: u16, timeout: Duration) -> Result<(), ProbeError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TraceProtocol {
    Icmp,
    Tcp,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HopKind {
    TtlExceeded,
    EchoReply,
    SynAck,
    Rst,
    HttpResponse,
    NoReply,
}

impl From<ReplyKind> for HopKind {
    fn from(kind: ReplyKind) -> Self {
        match kind {
            ReplyKind::TtlExceeded => HopKind::TtlExceeded,
            ReplyKind::EchoReply => HopKind::EchoReply,
            ReplyKind::SynAck => HopKind::SynAck,
            ReplyKind::Rst => HopKind::Rst,
            ReplyKind::HttpResponse => HopKind::HttpResponse,
        }
    }
}

impl HopKind {
    /// A reply from the transport or application layer rather than a router.
    pub fn is_endpoint_reply(self) -> bool {
        matches!(self, HopKind::SynAck | HopKind::Rst | HopKind::HttpResponse)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopRecord {
    pub ttl: u8,
    pub responder: Option<IpAddr>,
    pub kind: HopKind,
    pub rtt_ms: Option<f64>,
}

impl HopRecord {
    pub fn silent(ttl: u8) -> Self {
        Self {
            ttl,
            responder: None,
            kind: HopKind::NoReply,
            rtt_ms: None,
        }
    }

    pub fn from_reply(ttl: u8, reply: &ProbeReply) -> Self {
        Self {
            ttl,
            responder: Some(reply.responder),
            kind: reply.kind.into(),
            rtt_ms: Some(reply.rtt.as_secs_f64() * 1000.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRun {
    pub protocol: TraceProtocol,
    pub destination: IpAddr,
    pub hops: Vec<HopRecord>,
    pub complete: bool,
    pub path_length: u8,
    pub underapproximate: bool,
}

impl TraceRun {
    /// Derives completeness and path length from the hop list.
    ///
    /// Complete runs measure to the first hop where the destination itself
    /// gave the protocol's terminal reply; incomplete runs fall back to the
    /// last hop that replied at all (0 if none did).
    pub fn from_hops(protocol: TraceProtocol, destination: IpAddr, hops: Vec<HopRecord>) -> Self {
        let terminal = |h: &HopRecord| {
            h.responder == Some(destination)
                && match protocol {
                    TraceProtocol::Icmp => h.kind == HopKind::EchoReply,
                    TraceProtocol::Tcp => matches!(h.kind, HopKind::SynAck | HopKind::Rst),
                    TraceProtocol::Http => h.kind == HopKind::HttpResponse,
                }
        };
        let first_terminal = hops.iter().find(|h| terminal(h)).map(|h| h.ttl);
        let last_reply = hops
            .iter()
            .filter(|h| h.responder.is_some())
            .map(|h| h.ttl)
            .max()
            .unwrap_or(0);
        Self {
            protocol,
            destination,
            complete: first_terminal.is_some(),
            path_length: first_terminal.unwrap_or(last_reply),
            underapproximate: first_terminal.is_none(),
            hops,
        }
    }

    /// A run that never got to send anything.
    pub fn empty(protocol: TraceProtocol, destination: IpAddr) -> Self {
        Self::from_hops(protocol, destination, Vec::new())
    }

    pub fn any_reply(&self) -> bool {
        self.hops.iter().any(|h| h.responder.is_some())
    }

    pub fn has_kind(&self, kind: HopKind) -> bool {
        self.hops.iter().any(|h| h.kind == kind)
    }

    pub fn has_tcp_reply(&self) -> bool {
        self.hops
            .iter()
            .any(|h| matches!(h.kind, HopKind::SynAck | HopKind::Rst))
    }

    pub fn hop(&self, ttl: u8) -> Option<&HopRecord> {
        self.hops.iter().find(|h| h.ttl == ttl)
    }

    /// Same run as seen by a tracer whose probes beyond `ttl` all went unanswered.
    pub fn truncated(&self, ttl: u8) -> Self {
        let hops = self
            .hops
            .iter()
            .map(|h| {
                if h.ttl > ttl {
                    HopRecord::silent(h.ttl)
                } else {
                    h.clone()
                }
            })
            .collect();
        Self::from_hops(self.protocol, self.destination, hops)
    }
}

static NEXT_FLOW: AtomicU16 = AtomicU16::new(0);

fn next_flow() -> u16 {
    let base = (std::process::id() as u16).rotate_left(5);
    base ^ NEXT_FLOW.fetch_add(1, Ordering::Relaxed)
}

fn run_trace(
    protocol: TraceProtocol,
    destination: IpAddr,
    payload: Payload,
    config: &ProbeConfig,
    transport: &dyn ProbeTransport,
) -> Result<TraceRun, ProbeError> {
    let flow = next_flow();
    let mut hops = Vec::new();
    for ttl in 1..=config.max_ttl {
        let mut hop = HopRecord::silent(ttl);
        for attempt in 0..config.per_ttl_probe_count {
            let spec = ProbeSpec {
                destination,
                ttl,
                attempt,
                ident: ProbeIdent {
                    flow,
                    seq: (u16::from(ttl) << 6) | (attempt as u16 & 0x3f),
                },
                payload: payload.clone(),
            };
            if let Some(reply) = transport.probe(&spec, config.per_hop_timeout)? {
                hop = HopRecord::from_reply(ttl, &reply);
                break;
            }
        }
        let stop = match protocol {
            TraceProtocol::Icmp => hop.kind == HopKind::EchoReply && hop.responder == Some(destination),
            TraceProtocol::Tcp => matches!(hop.kind, HopKind::SynAck | HopKind::Rst),
            TraceProtocol::Http => matches!(hop.kind, HopKind::HttpResponse | HopKind::Rst),
        };
        hops.push(hop);
        if stop {
            break;
        }
    }
    Ok(TraceRun::from_hops(protocol, destination, hops))
}

/// Echo-request traceroute establishing the baseline hop count.
pub fn icmp_traceroute(
    destination: IpAddr,
    config: &ProbeConfig,
    transport: &dyn ProbeTransport,
) -> Result<TraceRun, ProbeError> {
    run_trace(
        TraceProtocol::Icmp,
        destination,
        Payload::EchoRequest,
        config,
        transport,
    )
}

/// SYN traceroute; stops at the first SYN-ACK or RST from any address.
pub fn tcp_traceroute(
    destination: IpAddr,
    port: u16,
    config: &ProbeConfig,
    transport: &dyn ProbeTransport,
) -> Result<TraceRun, ProbeError> {
    run_trace(
        TraceProtocol::Tcp,
        destination,
        Payload::Syn { port },
        config,
        transport,
    )
}

/// Stateful HTTP traceroute: after a real handshake, the segment carrying the
/// GET is TTL-limited. Uses the fetcher's user agent and Host header.
pub fn http_traceroute(
    destination: IpAddr,
    host: &str,
    path: &str,
    config: &ProbeConfig,
    transport: &dyn ProbeTransport,
) -> Result<TraceRun, ProbeError> {
    transport.handshake(destination, 80, config.per_hop_timeout)?;
    run_trace(
        TraceProtocol::Http,
        destination,
        Payload::HttpGet {
            port: 80,
            host: host.to_string(),
            path: if path.is_empty() { "/".into() } else { path.to_string() },
            user_agent: config.user_agent.clone(),
        },
        config,
        transport,
    )
}

/// True when, at some TTL, the ICMP run heard from one address while the other
/// run got a transport or application reply from a different one.
pub fn detect_spoof(icmp_run: &TraceRun, other_run: &TraceRun) -> bool {
    other_run.hops.iter().any(|other| {
        let Some(b) = other.responder.filter(|_| other.kind.is_endpoint_reply()) else {
            return false;
        };
        icmp_run
            .hop(other.ttl)
            .and_then(|h| h.responder)
            .is_some_and(|a| a != b)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BlockKind {
    ServerSide,
    MiddleboxSuspected,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VerdictReason {
    EqualPaths,
    ShortPath,
    SpoofedResponse,
    NoTcpResponse,
    NoHttpResponse,
    NoIcmpBaseline,
}

impl VerdictReason {
    pub fn kind(self) -> BlockKind {
        match self {
            VerdictReason::EqualPaths => BlockKind::ServerSide,
            VerdictReason::ShortPath | VerdictReason::SpoofedResponse => BlockKind::MiddleboxSuspected,
            VerdictReason::NoTcpResponse | VerdictReason::NoHttpResponse | VerdictReason::NoIcmpBaseline => {
                BlockKind::Inconclusive
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Decision {
    pub kind: BlockKind,
    pub reason: VerdictReason,
}

impl From<VerdictReason> for Decision {
    fn from(reason: VerdictReason) -> Self {
        Self {
            kind: reason.kind(),
            reason,
        }
    }
}

fn short_path(icmp: &TraceRun, other: &TraceRun, config: &ProbeConfig) -> bool {
    i32::from(icmp.path_length) - i32::from(other.path_length) > config.hop_delta_threshold as i32
}

/// The decision up to, but not including, the HTTP stage. `None` means the
/// HTTP traceroute must be consulted.
pub fn decide_before_http(icmp: &TraceRun, tcp: &TraceRun, config: &ProbeConfig) -> Option<Decision> {
    if !icmp.any_reply() {
        return Some(VerdictReason::NoIcmpBaseline.into());
    }
    if !tcp.has_tcp_reply() {
        return Some(VerdictReason::NoTcpResponse.into());
    }
    if short_path(icmp, tcp, config) {
        return Some(VerdictReason::ShortPath.into());
    }
    if detect_spoof(icmp, tcp) {
        return Some(VerdictReason::SpoofedResponse.into());
    }
    None
}

/// Applies the rules in fixed order: ICMP baseline, TCP reply, TCP short
/// path, TCP spoof, then the same two heuristics on the HTTP run.
pub fn decide(icmp: &TraceRun, tcp: &TraceRun, http: Option<&TraceRun>, config: &ProbeConfig) -> Decision {
    if let Some(decision) = decide_before_http(icmp, tcp, config) {
        return decision;
    }
    let Some(http) = http.filter(|h| h.has_kind(HopKind::HttpResponse)) else {
        return VerdictReason::NoHttpResponse.into();
    };
    if short_path(icmp, http, config) {
        return VerdictReason::ShortPath.into();
    }
    if detect_spoof(icmp, http) {
        return VerdictReason::SpoofedResponse.into();
    }
    VerdictReason::EqualPaths.into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockVerdict {
    pub url: String,
    pub vantage_id: String,
    pub kind: BlockKind,
    pub reason: VerdictReason,
    pub icmp: Option<TraceRun>,
    pub tcp: Option<TraceRun>,
    pub http: Option<TraceRun>,
    /// The host could not be resolved, so no trace was possible.
    #[serde(default)]
    pub dns_error: bool,
    /// Probe failures encountered along the way.
    #[serde(default)]
    pub errors: Vec<String>,
}

/// Wraps [`decide`] with its evidence.
pub fn detect_middlebox(
    url: &str,
    vantage_id: &str,
    icmp: TraceRun,
    tcp: TraceRun,
    http: Option<TraceRun>,
    config: &ProbeConfig,
) -> BlockVerdict {
    let decision = decide(&icmp, &tcp, http.as_ref(), config);
    BlockVerdict {
        url: url.to_string(),
        vantage_id: vantage_id.to_string(),
        kind: decision.kind,
        reason: decision.reason,
        icmp: Some(icmp),
        tcp: Some(tcp),
        http,
        dns_error: false,
        errors: Vec::new(),
    }
}

impl BlockVerdict {
    /// Verdict for a URL whose host did not resolve.
    pub fn unresolved(url: &str, vantage_id: &str) -> Self {
        Self {
            url: url.to_string(),
            vantage_id: vantage_id.to_string(),
            kind: BlockKind::Inconclusive,
            reason: VerdictReason::NoIcmpBaseline,
            icmp: None,
            tcp: None,
            http: None,
            dns_error: true,
            errors: Vec::new(),
        }
    }
}

/// What to trace for one short-listed URL.
#[derive(Debug, Clone)]
pub struct TraceTarget<'a> {
    pub url: &'a str,
    pub vantage_id: &'a str,
    pub destination: IpAddr,
    pub host: &'a str,
    pub path: &'a str,
}

/// Runs ICMP, then TCP, then (only if still undecided) HTTP, and decides.
///
/// Permission errors abort; other probe failures are recorded and the
/// affected run is treated as having heard nothing.
pub fn trace_target(
    target: &TraceTarget<'_>,
    config: &ProbeConfig,
    transport: &dyn ProbeTransport,
) -> Result<BlockVerdict, ProbeError> {
    let mut errors = Vec::new();
    let mut attempt = |protocol: TraceProtocol, result: Result<TraceRun, ProbeError>| match result {
        Ok(run) => Ok(run),
        Err(ProbeError::Permission(msg)) => Err(ProbeError::Permission(msg)),
        Err(e) => {
            errors.push(format!("{protocol:?}: {e}"));
            Ok(TraceRun::empty(protocol, target.destination))
        }
    };
    let icmp = attempt(
        TraceProtocol::Icmp,
        icmp_traceroute(target.destination, config, transport),
    )?;
    let tcp = attempt(
        TraceProtocol::Tcp,
        tcp_traceroute(target.destination, 80, config, transport),
    )?;
    let http = if decide_before_http(&icmp, &tcp, config).is_none() {
        match http_traceroute(target.destination, target.host, target.path, config, transport) {
            Ok(run) => Some(run),
            Err(ProbeError::Permission(msg)) => return Err(ProbeError::Permission(msg)),
            Err(e) => {
                errors.push(format!("Http: {e}"));
                None
            }
        }
    } else {
        None
    };
    let mut verdict = detect_middlebox(target.url, target.vantage_id, icmp, tcp, http, config);
    verdict.errors = errors;
    Ok(verdict)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn addr(last: u8) -> IpAddr {
        IpAddr::from([10, 0, 0, last])
    }

    fn hop(ttl: u8, responder: Option<u8>, kind: HopKind) -> HopRecord {
        HopRecord {
            ttl,
            responder: responder.map(addr),
            kind,
            rtt_ms: responder.map(|_| 1.0),
        }
    }

    fn icmp_path(depth: u8, dest: u8) -> TraceRun {
        let hops = (1..=depth)
            .map(|t| {
                if t == depth {
                    hop(t, Some(dest), HopKind::EchoReply)
                } else {
                    hop(t, Some(t), HopKind::TtlExceeded)
                }
            })
            .collect();
        TraceRun::from_hops(TraceProtocol::Icmp, addr(dest), hops)
    }

    fn endpoint_path(protocol: TraceProtocol, len: u8, responder: u8, dest: u8, kind: HopKind) -> TraceRun {
        let hops = (1..=len)
            .map(|t| {
                if t == len {
                    hop(t, Some(responder), kind)
                } else {
                    hop(t, Some(t), HopKind::TtlExceeded)
                }
            })
            .collect();
        TraceRun::from_hops(protocol, addr(dest), hops)
    }

    #[test]
    fn path_length_rules() {
        let full = icmp_path(8, 99);
        assert!(full.complete);
        assert_eq!(full.path_length, 8);
        assert!(!full.underapproximate);

        let cut = full.truncated(5);
        assert!(!cut.complete);
        assert!(cut.underapproximate);
        assert_eq!(cut.path_length, 5);

        let silent = TraceRun::from_hops(TraceProtocol::Icmp, addr(99), vec![HopRecord::silent(1)]);
        assert_eq!(silent.path_length, 0);
        assert!(!silent.any_reply());

        let one = icmp_path(1, 99);
        assert_eq!(one.path_length, 1);
    }

    #[test]
    fn tcp_reply_from_other_address_is_incomplete_but_measured() {
        let run = endpoint_path(TraceProtocol::Tcp, 5, 50, 99, HopKind::SynAck);
        assert!(!run.complete);
        assert_eq!(run.path_length, 5);
        assert!(run.has_tcp_reply());
    }

    #[test]
    fn spoof_examples() {
        let mut icmp = icmp_path(10, 9);
        icmp.hops[4] = hop(5, Some(5), HopKind::TtlExceeded);
        let tcp = endpoint_path(TraceProtocol::Tcp, 5, 9, 9, HopKind::SynAck);
        assert!(detect_spoof(&icmp, &tcp));

        let clean = endpoint_path(TraceProtocol::Tcp, 10, 9, 9, HopKind::SynAck);
        assert!(!detect_spoof(&icmp, &clean));

        let nothing = TraceRun::from_hops(TraceProtocol::Tcp, addr(9), (1..=30).map(HopRecord::silent).collect());
        assert!(!detect_spoof(&icmp, &nothing));
    }

    #[test]
    fn router_disagreement_alone_is_not_spoofing() {
        let icmp = icmp_path(10, 99);
        let mut tcp = endpoint_path(TraceProtocol::Tcp, 10, 99, 99, HopKind::SynAck);
        tcp.hops[2].responder = Some(addr(77));
        assert!(!detect_spoof(&icmp, &tcp));
    }

    #[test]
    fn decision_order() {
        let cfg = ProbeConfig::default();
        let icmp = icmp_path(10, 99);
        let tcp = endpoint_path(TraceProtocol::Tcp, 10, 99, 99, HopKind::SynAck);
        let http = endpoint_path(TraceProtocol::Http, 10, 99, 99, HopKind::HttpResponse);
        assert_eq!(
            decide(&icmp, &tcp, Some(&http), &cfg),
            Decision {
                kind: BlockKind::ServerSide,
                reason: VerdictReason::EqualPaths
            }
        );

        let icmp12 = icmp_path(12, 99);
        let short = endpoint_path(TraceProtocol::Tcp, 5, 99, 99, HopKind::SynAck);
        assert_eq!(decide(&icmp12, &short, None, &cfg).reason, VerdictReason::ShortPath);

        let no_icmp = TraceRun::empty(TraceProtocol::Icmp, addr(99));
        assert_eq!(
            decide(&no_icmp, &tcp, Some(&http), &cfg).reason,
            VerdictReason::NoIcmpBaseline
        );

        let no_tcp = TraceRun::from_hops(
            TraceProtocol::Tcp,
            addr(99),
            (1..=12).map(|t| hop(t, Some(t), HopKind::TtlExceeded)).collect(),
        );
        assert!(!no_tcp.complete);
        assert_eq!(
            decide(&icmp, &no_tcp, Some(&http), &cfg).reason,
            VerdictReason::NoTcpResponse
        );
        assert_eq!(decide(&icmp, &tcp, None, &cfg).reason, VerdictReason::NoHttpResponse);

        let http_short = endpoint_path(TraceProtocol::Http, 4, 4, 99, HopKind::HttpResponse);
        assert_eq!(
            decide(&icmp, &tcp, Some(&http_short), &cfg).reason,
            VerdictReason::ShortPath
        );
    }

    #[test]
    fn threshold_is_strict() {
        let cfg = ProbeConfig::default();
        let icmp = icmp_path(10, 99);
        let at = endpoint_path(TraceProtocol::Tcp, 7, 99, 99, HopKind::SynAck);
        let over = endpoint_path(TraceProtocol::Tcp, 6, 99, 99, HopKind::SynAck);
        assert_ne!(
            decide_before_http(&icmp, &at, &cfg).map(|d| d.reason),
            Some(VerdictReason::ShortPath)
        );
        assert_eq!(
            decide_before_http(&icmp, &over, &cfg).map(|d| d.reason),
            Some(VerdictReason::ShortPath)
        );
    }

    #[test]
    fn reasons_partition_kinds() {
        use VerdictReason::*;
        for reason in [
            EqualPaths,
            ShortPath,
            SpoofedResponse,
            NoTcpResponse,
            NoHttpResponse,
            NoIcmpBaseline,
        ] {
            let kind = reason.kind();
            assert_eq!(
                kind == BlockKind::MiddleboxSuspected,
                matches!(reason, ShortPath | SpoofedResponse)
            );
            assert_eq!(
                kind == BlockKind::Inconclusive,
                matches!(reason, NoTcpResponse | NoHttpResponse | NoIcmpBaseline)
            );
        }
    }

    #[test]
    fn verdict_json_round_trips() {
        let cfg = ProbeConfig::default();
        let v = detect_middlebox(
            "http://a.test",
            "v1",
            icmp_path(3, 9),
            endpoint_path(TraceProtocol::Tcp, 3, 9, 9, HopKind::Rst),
            None,
            &cfg,
        );
        let text = serde_json::to_string(&v).unwrap();
        let back: BlockVerdict = serde_json::from_str(&text).unwrap();
        assert_eq!(back, v);
        assert_eq!(v.reason, VerdictReason::NoHttpResponse);
    }
}
