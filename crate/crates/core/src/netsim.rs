//! Deterministic network simulator.
//!
//! A [`SimTopology`] is a linear path of routers ending at a server, with an
//! optional on-path middlebox. [`simulate_probe`] answers TTL-limited probes
//! and [`serve_fetch`] answers whole HTTP loads, so both the fetcher and the
//! tracers can run offline. ICMP echo traffic is never touched by the
//! middlebox.
//!
//! All addresses come from the documentation prefixes (192.0.2.0/24,
//! 198.51.100.0/24, 203.0.113.0/24).

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::Path;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fetcher::{Exchange, HttpRequest, HttpResponse, HttpTransport, ResolveError, Resolver, TransportFailure};
use crate::model::Vantage;
use crate::traceroute::{Payload, ProbeError, ProbeReply, ProbeSpec, ProbeTransport, ReplyKind};

/// Body a blocking middlebox injects in place of the real page.
pub const MIDDLEBOX_BLOCKPAGE: &str = "<html><head><title>Access Denied</title></head>\
<body><h1>Access Denied</h1><p>You don't have permission to access this page.</p></body></html>";

const SERVE_200_BODY: &str =
    "<html><head><title>Welcome</title></head><body><p>Catalog, cart and account pages.</p></body></html>";
const SERVE_403_BODY: &str = "<html><head><title>403 Forbidden</title></head><body><p>Forbidden.</p></body></html>";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ServerBehavior {
    Serve200,
    Serve403,
    /// 200 OK carrying the given body.
    ServeBlockpage(String),
    DropSyn,
    RstSyn,
    AcceptThenSilent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Intercept {
    Tcp,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MiddleboxAction {
    Rst,
    SynAckThenBlockpage,
    Drop,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MiddleboxSpec {
    /// 1-based hop number, strictly before the server. The middlebox sits at
    /// that router's address.
    pub position: usize,
    pub intercepts: BTreeSet<Intercept>,
    pub spoof_destination_address: bool,
    pub reveals_own_icmp: bool,
    pub action: MiddleboxAction,
}

impl MiddleboxSpec {
    pub fn intercepts(&self, which: Intercept) -> bool {
        self.intercepts.contains(&which)
    }

    /// Whether an HTTP request on an established connection meets the
    /// middlebox: it either inspects HTTP or terminated the TCP connection.
    fn sees_http(&self) -> bool {
        self.intercepts(Intercept::Http)
            || (self.intercepts(Intercept::Tcp) && self.action == MiddleboxAction::SynAckThenBlockpage)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TopologyError {
    #[error("topology has no hops")]
    Empty,
    #[error("destination_index {0} is not the last hop")]
    DestinationNotLast(usize),
    #[error("icmp_responsive has {got} entries for {want} hops")]
    ResponsiveLength { got: usize, want: usize },
    #[error("duplicate hop address {0}")]
    DuplicateAddress(IpAddr),
    #[error("middlebox position {position} must be in 1..{depth}")]
    MiddleboxPosition { position: usize, depth: usize },
    #[error("middlebox intercepts nothing")]
    NoIntercepts,
    #[error("depth {0} is out of range 1..=255")]
    Depth(usize),
}

/// A linear simulated path. `hop_addresses[i]` answers for hop `i + 1`; the
/// last entry is the server.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimTopology {
    pub hop_addresses: Vec<IpAddr>,
    pub destination_index: usize,
    pub server_behavior: ServerBehavior,
    #[serde(default)]
    pub middlebox: Option<MiddleboxSpec>,
    pub icmp_responsive: Vec<bool>,
}

/// Router address for hop `k` in generated topologies.
pub fn router_address(k: usize) -> IpAddr {
    IpAddr::V4(Ipv4Addr::new(198, 51, 100, k as u8))
}

impl SimTopology {
    /// All hops responsive, routers at 198.51.100.k.
    pub fn linear(depth: usize, destination: IpAddr, server_behavior: ServerBehavior) -> Self {
        assert!((1..=255).contains(&depth), "depth out of range");
        let mut hop_addresses: Vec<IpAddr> = (1..depth).map(router_address).collect();
        hop_addresses.push(destination);
        Self {
            hop_addresses,
            destination_index: depth - 1,
            server_behavior,
            middlebox: None,
            icmp_responsive: vec![true; depth],
        }
    }

    pub fn with_middlebox(mut self, spec: MiddleboxSpec) -> Self {
        self.middlebox = Some(spec);
        self
    }

    /// Marks hop `k` (1-based) as ICMP-silent.
    pub fn silence_hop(mut self, k: usize) -> Self {
        self.icmp_responsive[k - 1] = false;
        self
    }

    pub fn validate(&self) -> Result<(), TopologyError> {
        let depth = self.hop_addresses.len();
        if depth == 0 {
            return Err(TopologyError::Empty);
        }
        if depth > 255 {
            return Err(TopologyError::Depth(depth));
        }
        if self.destination_index != depth - 1 {
            return Err(TopologyError::DestinationNotLast(self.destination_index));
        }
        if self.icmp_responsive.len() != depth {
            return Err(TopologyError::ResponsiveLength {
                got: self.icmp_responsive.len(),
                want: depth,
            });
        }
        let mut seen = HashSet::new();
        for addr in &self.hop_addresses {
            if !seen.insert(*addr) {
                return Err(TopologyError::DuplicateAddress(*addr));
            }
        }
        if let Some(mb) = &self.middlebox {
            if mb.position == 0 || mb.position >= depth {
                return Err(TopologyError::MiddleboxPosition {
                    position: mb.position,
                    depth,
                });
            }
            if mb.intercepts.is_empty() {
                return Err(TopologyError::NoIntercepts);
            }
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.destination_index + 1
    }

    pub fn destination(&self) -> IpAddr {
        self.hop_addresses[self.destination_index]
    }

    /// Address of hop `k` (1-based).
    pub fn hop_address(&self, k: usize) -> IpAddr {
        self.hop_addresses[k - 1]
    }

    /// Whether hop `k` sends time-exceeded messages.
    pub fn hop_replies(&self, k: usize) -> bool {
        let hidden = self
            .middlebox
            .as_ref()
            .is_some_and(|mb| mb.position == k && !mb.reveals_own_icmp);
        self.icmp_responsive[k - 1] && !hidden
    }

    fn middlebox_source(&self, mb: &MiddleboxSpec) -> IpAddr {
        if mb.spoof_destination_address {
            self.destination()
        } else {
            self.hop_address(mb.position)
        }
    }

    fn router_reply(&self, hop: usize) -> Option<SimReply> {
        self.hop_replies(hop).then(|| SimReply {
            responder: self.hop_address(hop),
            kind: ReplyKind::TtlExceeded,
            hop,
        })
    }
}

/// A simulated reply and the hop that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimReply {
    pub responder: IpAddr,
    pub kind: ReplyKind,
    pub hop: usize,
}

/// Answers one probe. Pure: the same topology and probe always give the
/// same result.
pub fn simulate_probe(topology: &SimTopology, probe: &ProbeSpec) -> Option<SimReply> {
    let depth = topology.depth();
    let ttl = usize::from(probe.ttl);
    if ttl == 0 {
        return None;
    }
    let reached = ttl.min(depth);
    let server = |kind: ReplyKind| SimReply {
        responder: topology.destination(),
        kind,
        hop: depth,
    };
    let middlebox_answer = |mb: &MiddleboxSpec, kind: Option<ReplyKind>| {
        kind.map(|kind| SimReply {
            responder: topology.middlebox_source(mb),
            kind,
            hop: mb.position,
        })
    };

    match &probe.payload {
        Payload::EchoRequest => {
            if ttl < depth {
                topology.router_reply(ttl)
            } else {
                topology.icmp_responsive[depth - 1].then(|| server(ReplyKind::EchoReply))
            }
        }
        Payload::Syn { .. } => {
            if let Some(mb) = topology
                .middlebox
                .as_ref()
                .filter(|mb| mb.intercepts(Intercept::Tcp) && reached >= mb.position)
            {
                let kind = match mb.action {
                    MiddleboxAction::Rst => Some(ReplyKind::Rst),
                    MiddleboxAction::SynAckThenBlockpage => Some(ReplyKind::SynAck),
                    MiddleboxAction::Drop => None,
                };
                return middlebox_answer(mb, kind);
            }
            if ttl < depth {
                return topology.router_reply(ttl);
            }
            match topology.server_behavior {
                ServerBehavior::DropSyn => None,
                ServerBehavior::RstSyn => Some(server(ReplyKind::Rst)),
                _ => Some(server(ReplyKind::SynAck)),
            }
        }
        Payload::HttpGet { .. } => {
            if let Some(mb) = topology
                .middlebox
                .as_ref()
                .filter(|mb| mb.sees_http() && reached >= mb.position)
            {
                let kind = match mb.action {
                    MiddleboxAction::Rst => Some(ReplyKind::Rst),
                    MiddleboxAction::SynAckThenBlockpage => Some(ReplyKind::HttpResponse),
                    MiddleboxAction::Drop => None,
                };
                return middlebox_answer(mb, kind);
            }
            if ttl < depth {
                return topology.router_reply(ttl);
            }
            match topology.server_behavior {
                ServerBehavior::Serve200 | ServerBehavior::Serve403 | ServerBehavior::ServeBlockpage(_) => {
                    Some(server(ReplyKind::HttpResponse))
                }
                ServerBehavior::RstSyn => Some(server(ReplyKind::Rst)),
                ServerBehavior::DropSyn | ServerBehavior::AcceptThenSilent => None,
            }
        }
    }
}

/// Outcome of a full TCP handshake with the server.
pub fn simulate_handshake(topology: &SimTopology) -> Result<(), ProbeError> {
    if let Some(mb) = topology.middlebox.as_ref().filter(|mb| mb.intercepts(Intercept::Tcp)) {
        return match mb.action {
            MiddleboxAction::Rst => Err(ProbeError::Handshake("connection reset".into())),
            MiddleboxAction::Drop => Err(ProbeError::Handshake("timed out".into())),
            MiddleboxAction::SynAckThenBlockpage => Ok(()),
        };
    }
    match topology.server_behavior {
        ServerBehavior::DropSyn => Err(ProbeError::Handshake("timed out".into())),
        ServerBehavior::RstSyn => Err(ProbeError::Handshake("connection refused".into())),
        _ => Ok(()),
    }
}

/// Serves one HTTP request at connection level. `hop_latency` is the one-way
/// delay per hop; a load costs two round trips to whoever answers.
pub fn serve_fetch(topology: &SimTopology, request: &HttpRequest, budget: Duration, hop_latency: Duration) -> Exchange {
    let port = if request.url.starts_with("https:") { 443 } else { 80 };
    let remote = Some(SocketAddr::new(topology.destination(), port));
    let cost = |hops: usize| hop_latency * (4 * hops as u32);
    let timeout = Exchange {
        result: Err(TransportFailure::DeadlineExceeded),
        elapsed: budget,
    };
    let respond = |status: u16, body: &str, hops: usize| {
        let elapsed = cost(hops);
        if elapsed > budget {
            return Exchange {
                result: Err(TransportFailure::DeadlineExceeded),
                elapsed: budget,
            };
        }
        Exchange {
            result: Ok(HttpResponse {
                status,
                headers: vec![("Content-Type".into(), "text/html".into())],
                body: body.as_bytes().to_vec(),
                remote,
            }),
            elapsed,
        }
    };
    let failure = |failure: TransportFailure, hops: usize| Exchange {
        result: Err(failure),
        elapsed: cost(hops).min(budget),
    };

    if let Some(mb) = topology
        .middlebox
        .as_ref()
        .filter(|mb| mb.intercepts(Intercept::Tcp) || mb.intercepts(Intercept::Http))
    {
        let at = mb.position;
        let on_syn = mb.intercepts(Intercept::Tcp);
        return match mb.action {
            MiddleboxAction::SynAckThenBlockpage => respond(200, MIDDLEBOX_BLOCKPAGE, at),
            MiddleboxAction::Rst if on_syn => failure(TransportFailure::ConnectionRefused, at),
            MiddleboxAction::Rst => failure(TransportFailure::ConnectionReset, at),
            MiddleboxAction::Drop => timeout,
        };
    }
    let depth = topology.depth();
    match &topology.server_behavior {
        ServerBehavior::Serve200 => respond(200, SERVE_200_BODY, depth),
        ServerBehavior::Serve403 => respond(403, SERVE_403_BODY, depth),
        ServerBehavior::ServeBlockpage(body) => respond(200, body, depth),
        ServerBehavior::RstSyn => failure(TransportFailure::ConnectionRefused, depth),
        ServerBehavior::DropSyn | ServerBehavior::AcceptThenSilent => timeout,
    }
}

/// Every topology used by the oracle equivalence check, for server depths
/// `1..=max_depth`: no middlebox, plus each middlebox position before the
/// server crossed with spoof × reveal × intercept set ({Tcp}, {Http}, both).
/// All hops respond; the server sends 403s; middleboxes answer SYNs and
/// inject a block page. Yields `D + 6·D·(D−1)` topologies.
pub fn enumerate_topologies(max_depth: usize) -> impl Iterator<Item = SimTopology> {
    let destination = IpAddr::V4(Ipv4Addr::new(203, 0, 113, 1));
    let intercept_sets = [
        BTreeSet::from([Intercept::Tcp]),
        BTreeSet::from([Intercept::Http]),
        BTreeSet::from([Intercept::Tcp, Intercept::Http]),
    ];
    (1..=max_depth).flat_map(move |depth| {
        let base = SimTopology::linear(depth, destination, ServerBehavior::Serve403);
        let with_boxes = {
            let base = base.clone();
            let intercept_sets = intercept_sets.clone();
            (1..depth).flat_map(move |position| {
                let base = base.clone();
                let intercept_sets = intercept_sets.clone();
                [false, true].into_iter().flat_map(move |spoof| {
                    let base = base.clone();
                    let intercept_sets = intercept_sets.clone();
                    [false, true].into_iter().flat_map(move |reveal| {
                        let base = base.clone();
                        intercept_sets.clone().into_iter().map(move |intercepts| {
                            base.clone().with_middlebox(MiddleboxSpec {
                                position,
                                intercepts,
                                spoof_destination_address: spoof,
                                reveals_own_icmp: reveal,
                                action: MiddleboxAction::SynAckThenBlockpage,
                            })
                        })
                    })
                })
            })
        };
        std::iter::once(base).chain(with_boxes)
    })
}

/// Short fixture form: routers are generated and the server address is
/// allocated from the host name's position in the fixture.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompactTopology {
    pub depth: usize,
    #[serde(default = "default_server")]
    pub server: ServerBehavior,
    #[serde(default)]
    pub address: Option<IpAddr>,
    #[serde(default)]
    pub middlebox: Option<MiddleboxSpec>,
    /// 1-based hops that never send ICMP.
    #[serde(default)]
    pub silent_hops: Vec<usize>,
}

fn default_server() -> ServerBehavior {
    ServerBehavior::Serve200
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HostEntry {
    Full(SimTopology),
    Compact(CompactTopology),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossModel {
    pub seed: u64,
    /// Probability in [0, 1] that a probe reply is lost.
    pub rate: f64,
}

/// JSON fixture for [`SimNetwork`]. `overrides` are keyed by region label or
/// vantage id (the id wins) and replace `hosts` entries for that vantage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimFixture {
    /// One-way delay per hop, in milliseconds of modeled time.
    #[serde(default = "default_latency")]
    pub latency_ms: u64,
    /// Real time each HTTP load takes, to make runs interruptible.
    #[serde(default)]
    pub wall_delay_ms: u64,
    #[serde(default)]
    pub loss: Option<LossModel>,
    #[serde(default)]
    pub hosts: BTreeMap<String, HostEntry>,
    #[serde(default)]
    pub overrides: BTreeMap<String, BTreeMap<String, HostEntry>>,
}

fn default_latency() -> u64 {
    5
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("reading fixture: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing fixture: {0}")]
    Json(#[from] serde_json::Error),
    #[error("host {host}: {source}")]
    Topology {
        host: String,
        #[source]
        source: TopologyError,
    },
    #[error("hosts {0} and {1} share address {2} with different topologies")]
    AddressClash(String, String, IpAddr),
    #[error("fixture has more hosts than the address pool ({0})")]
    PoolExhausted(usize),
    #[error("loss rate {0} is outside [0, 1]")]
    LossRate(f64),
}

fn pool_address(i: usize) -> Option<IpAddr> {
    let (block, n) = (i / 254, (i % 254) as u8 + 1);
    match block {
        0 => Some(Ipv4Addr::new(203, 0, 113, n).into()),
        1 => Some(Ipv4Addr::new(192, 0, 2, n).into()),
        _ => None,
    }
}

impl CompactTopology {
    fn expand(&self, fallback: IpAddr) -> Result<SimTopology, TopologyError> {
        if !(1..=255).contains(&self.depth) {
            return Err(TopologyError::Depth(self.depth));
        }
        let mut topo = SimTopology::linear(self.depth, self.address.unwrap_or(fallback), self.server.clone());
        topo.middlebox = self.middlebox.clone();
        for &k in &self.silent_hops {
            if (1..=self.depth).contains(&k) {
                topo = topo.silence_hop(k);
            }
        }
        topo.validate()?;
        Ok(topo)
    }
}

/// A simulated network view from one vantage. Implements name resolution,
/// HTTP and probe transports.
#[derive(Debug, Clone)]
pub struct SimNetwork {
    hosts: BTreeMap<String, SimTopology>,
    by_address: HashMap<IpAddr, SimTopology>,
    hop_latency: Duration,
    wall_delay: Duration,
    loss: Option<LossModel>,
}

impl SimNetwork {
    pub fn new(hosts: BTreeMap<String, SimTopology>) -> Result<Self, SimError> {
        let mut by_address: HashMap<IpAddr, (String, SimTopology)> = HashMap::new();
        for (host, topo) in &hosts {
            topo.validate().map_err(|source| SimError::Topology {
                host: host.clone(),
                source,
            })?;
            match by_address.get(&topo.destination()) {
                Some((other, existing)) if existing != topo => {
                    return Err(SimError::AddressClash(other.clone(), host.clone(), topo.destination()));
                }
                Some(_) => {}
                None => {
                    by_address.insert(topo.destination(), (host.clone(), topo.clone()));
                }
            }
        }
        Ok(Self {
            hosts,
            by_address: by_address.into_iter().map(|(a, (_, t))| (a, t)).collect(),
            hop_latency: Duration::from_millis(default_latency()),
            wall_delay: Duration::ZERO,
            loss: None,
        })
    }

    /// The view from `vantage`, or the base view when `None`.
    pub fn from_fixture(fixture: &SimFixture, vantage: Option<&Vantage>) -> Result<Self, SimError> {
        let names: BTreeSet<&String> = fixture
            .hosts
            .keys()
            .chain(fixture.overrides.values().flat_map(|m| m.keys()))
            .collect();
        let pool: HashMap<&String, IpAddr> = names
            .iter()
            .enumerate()
            .map(|(i, name)| pool_address(i).map(|a| (*name, a)).ok_or(SimError::PoolExhausted(i)))
            .collect::<Result<_, _>>()?;

        let mut entries: BTreeMap<&String, &HostEntry> = fixture.hosts.iter().collect();
        if let Some(v) = vantage {
            for key in [&v.region_label, &v.id] {
                if let Some(over) = fixture.overrides.get(key) {
                    entries.extend(over.iter());
                }
            }
        }
        let mut hosts = BTreeMap::new();
        for (name, entry) in entries {
            let topo = match entry {
                HostEntry::Full(t) => t.clone(),
                HostEntry::Compact(c) => c.expand(pool[name]).map_err(|source| SimError::Topology {
                    host: name.clone(),
                    source,
                })?,
            };
            hosts.insert(name.clone(), topo);
        }
        let mut net = Self::new(hosts)?;
        net.hop_latency = Duration::from_millis(fixture.latency_ms);
        net.wall_delay = Duration::from_millis(fixture.wall_delay_ms);
        if let Some(loss) = fixture.loss {
            net = net.with_loss(loss)?;
        }
        Ok(net)
    }

    pub fn load(path: &Path, vantage: Option<&Vantage>) -> Result<Self, SimError> {
        let fixture: SimFixture = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_fixture(&fixture, vantage)
    }

    pub fn with_latency(mut self, hop_latency: Duration) -> Self {
        self.hop_latency = hop_latency;
        self
    }

    pub fn with_wall_delay(mut self, delay: Duration) -> Self {
        self.wall_delay = delay;
        self
    }

    pub fn with_loss(mut self, loss: LossModel) -> Result<Self, SimError> {
        if !(0.0..=1.0).contains(&loss.rate) {
            return Err(SimError::LossRate(loss.rate));
        }
        self.loss = Some(loss);
        Ok(self)
    }

    pub fn host(&self, host: &str) -> Option<&SimTopology> {
        self.hosts.get(host)
    }

    pub fn hosts(&self) -> impl Iterator<Item = (&str, &SimTopology)> {
        self.hosts.iter().map(|(h, t)| (h.as_str(), t))
    }

    /// Stateless loss decision keyed on the probe, not on its flow id, so
    /// replays agree.
    fn lost(&self, spec: &ProbeSpec) -> bool {
        let Some(loss) = self.loss else { return false };
        let proto = match spec.payload {
            Payload::EchoRequest => 1u64,
            Payload::Syn { .. } => 2,
            Payload::HttpGet { .. } => 3,
        };
        let addr_bits = match spec.destination {
            IpAddr::V4(a) => u64::from(u32::from(a)),
            IpAddr::V6(a) => u128::from(a) as u64,
        };
        let key = addr_bits << 24 | u64::from(spec.ttl) << 16 | (u64::from(spec.attempt) & 0xff) << 8 | proto;
        ChaCha8Rng::seed_from_u64(loss.seed ^ key.rotate_left(17)).random_bool(loss.rate)
    }
}

impl Resolver for SimNetwork {
    fn resolve(&self, host: &str) -> Result<Vec<IpAddr>, ResolveError> {
        self.hosts
            .get(host)
            .map(|t| vec![t.destination()])
            .ok_or_else(|| ResolveError {
                host: host.into(),
                reason: "NXDOMAIN (simulated)".into(),
            })
    }
}

impl HttpTransport for SimNetwork {
    fn send(&self, request: &HttpRequest, budget: Duration) -> Exchange {
        if !self.wall_delay.is_zero() {
            std::thread::sleep(self.wall_delay);
        }
        let topology = url::Url::parse(&request.url)
            .ok()
            .and_then(|u| u.host_str().and_then(|h| self.hosts.get(h)));
        match topology {
            Some(t) => serve_fetch(t, request, budget, self.hop_latency),
            None => Exchange {
                result: Err(TransportFailure::Dns),
                elapsed: Duration::ZERO,
            },
        }
    }
}

impl ProbeTransport for SimNetwork {
    fn probe(&self, spec: &ProbeSpec, timeout: Duration) -> Result<Option<ProbeReply>, ProbeError> {
        let Some(topology) = self.by_address.get(&spec.destination) else {
            return Ok(None);
        };
        if self.lost(spec) {
            return Ok(None);
        }
        Ok(simulate_probe(topology, spec)
            .map(|r| ProbeReply {
                responder: r.responder,
                kind: r.kind,
                rtt: self.hop_latency * (2 * r.hop as u32),
            })
            .filter(|r| r.rtt <= timeout))
    }

    fn handshake(&self, destination: IpAddr, _port: u16, _timeout: Duration) -> Result<(), ProbeError> {
        match self.by_address.get(&destination) {
            Some(t) => simulate_handshake(t),
            None => Err(ProbeError::Handshake("no route to host (simulated)".into())),
        }
    }
}
