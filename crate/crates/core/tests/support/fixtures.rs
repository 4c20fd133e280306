//! Synthetic logs and simulator fixtures with known answers.

use std::collections::{BTreeMap, BTreeSet};
use std::net::IpAddr;
use std::path::Path;
use std::time::Duration;

use chrono::DateTime;
use geoblock_core::blockpage::RuleSet;
use geoblock_core::campaign::{
    cmd_crawl, parse_url_list, CampaignError, CampaignManifest, CrawlControl, CrawlEnv, CrawlSummary,
};
use geoblock_core::fetcher::FixedClock;
use geoblock_core::netsim::{ServerBehavior, SimFixture, SimNetwork, SimTopology};
use geoblock_core::traceroute::{
    trace_target, BlockKind, BlockVerdict, Payload, ProbeError, ProbeReply, ProbeSpec, ProbeTransport, TraceTarget,
    VerdictReason,
};
use geoblock_core::{BlockpageClass, FetchOutcome, NetworkKind, ProbeConfig, StatusClass, TargetUrl, Vantage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

pub fn vantage(id: &str, region: &str) -> Vantage {
    Vantage {
        id: id.into(),
        country: region.into(),
        city: format!("{region}-city"),
        network_kind: NetworkKind::Institutional,
        region_label: region.into(),
    }
}

pub fn http_status_for(class: StatusClass) -> Option<u16> {
    match class {
        StatusClass::Ok2xx => Some(200),
        StatusClass::Forbidden403 => Some(403),
        StatusClass::Client4xxOther => Some(404),
        StatusClass::Unavailable503 => Some(503),
        StatusClass::Server5xxOther => Some(500),
        _ => None,
    }
}

pub fn outcome(
    url: &str,
    vantage: &str,
    run: u32,
    class: StatusClass,
    blockpage: Option<BlockpageClass>,
) -> FetchOutcome {
    let status = http_status_for(class);
    let target = TargetUrl::parse(url).unwrap();
    let blockpage = status.map(|_| blockpage.unwrap_or(BlockpageClass::NotBlockpage));
    FetchOutcome {
        final_url: target.effective().to_string(),
        url: target,
        vantage_id: vantage.into(),
        run_index: run,
        status_class: class,
        http_status: status,
        body_digest: None,
        body_size: status.map(|_| 512),
        blockpage,
        elapsed_ms: 40,
        timestamp: DateTime::UNIX_EPOCH,
    }
}

/// An observation: class plus whether a 200 carried a block page.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Obs(pub StatusClass, pub bool);

impl Obs {
    pub const OK: Obs = Obs(StatusClass::Ok2xx, false);
    pub const BLOCKPAGE_200: Obs = Obs(StatusClass::Ok2xx, true);

    pub fn available(self) -> bool {
        self.0 == StatusClass::Ok2xx && !self.1
    }
}

/// Failure observations the fixture builder draws from.
pub const FAILURES: [Obs; 8] = [
    Obs(StatusClass::Forbidden403, false),
    Obs(StatusClass::Client4xxOther, false),
    Obs(StatusClass::Unavailable503, false),
    Obs(StatusClass::Server5xxOther, false),
    Obs(StatusClass::ConnError, false),
    Obs(StatusClass::DnsError, false),
    Obs(StatusClass::Timeout, false),
    Obs::BLOCKPAGE_200,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FunnelSpec {
    pub total: usize,
    pub always_available: usize,
    pub always_unavailable: usize,
    pub same_problem: usize,
    pub shortlisted: usize,
}

pub struct FunnelFixture {
    pub control_vantages: Vec<Vantage>,
    pub test_vantages: Vec<Vantage>,
    pub control: Vec<FetchOutcome>,
    pub test: Vec<FetchOutcome>,
    pub qualifying: BTreeSet<String>,
    pub runs: u32,
}

#[derive(Debug, Clone, Copy)]
enum Side {
    AlwaysAvailable,
    /// At least one observation unavailable.
    NotAlwaysAvailable,
    Consistent,
    UnavailableMixed,
    /// At least one observation available.
    NotAlwaysUnavailable,
}

fn plant(side: Side, n: usize, rng: &mut ChaCha8Rng) -> Vec<Obs> {
    let pick_failure = |rng: &mut ChaCha8Rng| FAILURES[rng.random_range(0..FAILURES.len())];
    match side {
        Side::AlwaysAvailable => vec![Obs::OK; n],
        Side::Consistent => vec![pick_failure(rng); n],
        Side::UnavailableMixed => loop {
            let v: Vec<Obs> = (0..n).map(|_| pick_failure(rng)).collect();
            if v.iter().any(|o| o.0 != v[0].0) {
                return v;
            }
        },
        Side::NotAlwaysAvailable => {
            let mut v: Vec<Obs> = (0..n)
                .map(|_| {
                    if rng.random_bool(0.5) {
                        Obs::OK
                    } else {
                        pick_failure(rng)
                    }
                })
                .collect();
            let i = rng.random_range(0..n);
            v[i] = pick_failure(rng);
            v
        }
        Side::NotAlwaysUnavailable => {
            let mut v: Vec<Obs> = (0..n)
                .map(|_| {
                    if rng.random_bool(0.5) {
                        Obs::OK
                    } else {
                        pick_failure(rng)
                    }
                })
                .collect();
            let i = rng.random_range(0..n);
            v[i] = Obs::OK;
            v
        }
    }
}

/// Builds control and test logs (two vantages x `runs` each side) whose
/// funnel is exactly `spec`, by planting each URL's pattern directly.
pub fn funnel_fixture(spec: FunnelSpec, seed: u64) -> FunnelFixture {
    let runs = 3u32;
    let per_side = 2 * runs as usize;
    let a = spec.shortlisted;
    let b = spec.same_problem - a;
    let mixed_unavail = spec.always_unavailable - spec.same_problem;
    let c = mixed_unavail.min(spec.always_available - a) / 2;
    let d = mixed_unavail - c;
    let e = spec.always_available - a - c;
    let f = spec.total - a - b - c - d - e;
    let mut plan: Vec<(Side, Side, bool)> = Vec::new();
    let groups = [
        (a, Side::AlwaysAvailable, Side::Consistent, true),
        (b, Side::NotAlwaysAvailable, Side::Consistent, false),
        (c, Side::AlwaysAvailable, Side::UnavailableMixed, false),
        (d, Side::NotAlwaysAvailable, Side::UnavailableMixed, false),
        (e, Side::AlwaysAvailable, Side::NotAlwaysUnavailable, false),
        (f, Side::NotAlwaysAvailable, Side::NotAlwaysUnavailable, false),
    ];
    for (count, ctl, tst, q) in groups {
        plan.extend(std::iter::repeat_n((ctl, tst, q), count));
    }
    assert_eq!(plan.len(), spec.total);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    plan.shuffle(&mut rng);
    let control_vantages = vec![vantage("ctl-a", "CTL"), vantage("ctl-b", "CTL")];
    let test_vantages = vec![vantage("tst-a", "TST"), vantage("tst-b", "TST")];
    let mut fx = FunnelFixture {
        control_vantages,
        test_vantages,
        control: Vec::new(),
        test: Vec::new(),
        qualifying: BTreeSet::new(),
        runs,
    };
    for (i, (ctl, tst, q)) in plan.into_iter().enumerate() {
        let url = format!("http://site{i:03}.test");
        if q {
            fx.qualifying.insert(url.clone());
        }
        for (side, vantages, out) in [
            (ctl, &fx.control_vantages, &mut fx.control),
            (tst, &fx.test_vantages, &mut fx.test),
        ] {
            let obs = plant(side, per_side, &mut rng);
            let mut k = 0;
            for v in vantages {
                for run in 0..runs {
                    let Obs(class, bp) = obs[k];
                    k += 1;
                    out.push(outcome(
                        &url,
                        &v.id,
                        run,
                        class,
                        bp.then_some(BlockpageClass::GeoBlockExplicit),
                    ));
                }
            }
        }
    }
    fx
}

pub const E2E_CONTROL: &str = "us-1";
pub const E2E_TEST: [&str; 2] = ["pk-1", "pk-2"];

pub fn e2e_roster() -> Vec<Vantage> {
    vec![vantage("us-1", "US"), vantage("pk-1", "PK"), vantage("pk-2", "PK")]
}

pub fn e2e_roster_jsonl() -> String {
    e2e_roster()
        .iter()
        .map(|v| serde_json::to_string(v).unwrap() + "\n")
        .collect()
}

/// Twenty listed URLs; `gone.test` resolves nowhere and `fallback.test`
/// resolves only with the `www.` prefix.
pub fn e2e_urls() -> Vec<String> {
    let mut urls: Vec<String> = (1..=10).map(|i| format!("ok{i:02}.test")).collect();
    urls.extend(
        [
            "clean403-a.test",
            "clean403-b.test",
            "shortpath.test",
            "spoofing.test",
            "silent.test",
            "geo-wall.test",
            "mixedfail.test",
            "down.test",
            "gone.test",
            "fallback.test",
        ]
        .map(String::from),
    );
    urls
}

pub fn e2e_url_list() -> String {
    e2e_urls().join("\n") + "\n"
}

/// The five short-listed URLs and the verdict each must get from pk-1.
pub fn e2e_expected_verdicts() -> BTreeMap<String, (BlockKind, VerdictReason)> {
    BTreeMap::from([
        (
            "http://clean403-a.test".into(),
            (BlockKind::ServerSide, VerdictReason::EqualPaths),
        ),
        (
            "http://clean403-b.test".into(),
            (BlockKind::ServerSide, VerdictReason::EqualPaths),
        ),
        (
            "http://shortpath.test".into(),
            (BlockKind::MiddleboxSuspected, VerdictReason::ShortPath),
        ),
        (
            "http://spoofing.test".into(),
            (BlockKind::MiddleboxSuspected, VerdictReason::SpoofedResponse),
        ),
        (
            "http://silent.test".into(),
            (BlockKind::Inconclusive, VerdictReason::NoTcpResponse),
        ),
    ])
}

/// Funnel of the e2e fixture: (total, always available, always unavailable,
/// same problem, short-listed).
pub const E2E_FUNNEL: (usize, usize, usize, usize, usize) = (20, 18, 8, 7, 5);

pub fn e2e_fixture_json(wall_delay_ms: u64) -> String {
    let mut hosts = serde_json::Map::new();
    for i in 1..=10 {
        hosts.insert(format!("ok{i:02}.test"), json!({"depth": 6 + i}));
    }
    for h in [
        "clean403-a.test",
        "clean403-b.test",
        "shortpath.test",
        "spoofing.test",
        "silent.test",
        "geo-wall.test",
        "mixedfail.test",
    ] {
        hosts.insert(h.into(), json!({"depth": 10}));
    }
    hosts.insert("down.test".into(), json!({"depth": 7, "server": "Serve403"}));
    hosts.insert("www.fallback.test".into(), json!({"depth": 8}));
    let fixture = json!({
        "latency_ms": 5,
        "wall_delay_ms": wall_delay_ms,
        "hosts": hosts,
        "overrides": {
            "PK": {
                "clean403-a.test": {"depth": 10, "server": "Serve403"},
                "clean403-b.test": {"depth": 14, "server": "Serve403"},
                "shortpath.test": {"depth": 12, "middlebox": {
                    "position": 5, "intercepts": ["Tcp", "Http"],
                    "spoof_destination_address": false, "reveals_own_icmp": true,
                    "action": "SynAckThenBlockpage"}},
                "spoofing.test": {"depth": 10, "middlebox": {
                    "position": 8, "intercepts": ["Tcp"],
                    "spoof_destination_address": true, "reveals_own_icmp": true,
                    "action": "SynAckThenBlockpage"}},
                "silent.test": {"depth": 9, "server": "DropSyn"},
                "mixedfail.test": {"depth": 10, "server": "Serve403"}
            },
            "pk-2": {
                "geo-wall.test": {"depth": 10, "server": "Serve403"},
                "mixedfail.test": {"depth": 10, "server": "DropSyn"}
            }
        }
    });
    serde_json::to_string_pretty(&fixture).unwrap()
}

/// Host name used when a single topology is traced on its own.
pub const TRACE_HOST: &str = "t.test";

pub fn single_host_network(topology: &SimTopology) -> SimNetwork {
    SimNetwork::new(BTreeMap::from([(TRACE_HOST.to_string(), topology.clone())])).unwrap()
}

/// Traces `topology` end to end through the simulator.
pub fn trace_topology(topology: &SimTopology, config: &ProbeConfig) -> BlockVerdict {
    trace_through(&single_host_network(topology), topology.destination(), config)
}

pub fn trace_through(transport: &dyn ProbeTransport, destination: IpAddr, config: &ProbeConfig) -> BlockVerdict {
    let target = TraceTarget {
        url: "http://t.test",
        vantage_id: "sim",
        destination,
        host: TRACE_HOST,
        path: "/",
    };
    trace_target(&target, config, transport).unwrap()
}

/// Echo probes see one path, SYN and GET probes another, to the same
/// destination: a route change between the ICMP and TCP runs.
pub struct SplitTransport {
    pub icmp: SimNetwork,
    pub tcp: SimNetwork,
}

impl ProbeTransport for SplitTransport {
    fn probe(&self, spec: &ProbeSpec, timeout: Duration) -> Result<Option<ProbeReply>, ProbeError> {
        match spec.payload {
            Payload::EchoRequest => self.icmp.probe(spec, timeout),
            _ => self.tcp.probe(spec, timeout),
        }
    }

    fn handshake(&self, destination: IpAddr, port: u16, timeout: Duration) -> Result<(), ProbeError> {
        self.tcp.handshake(destination, port, timeout)
    }
}

/// ICMP path 12 hops with hops 10 and 11 silent; TCP and HTTP reach the same
/// server in 10 hops.
pub fn wobble_transport() -> (SplitTransport, IpAddr) {
    let dest = IpAddr::from([203, 0, 113, 50]);
    let icmp = SimTopology::linear(12, dest, ServerBehavior::Serve403)
        .silence_hop(10)
        .silence_hop(11);
    let tcp = SimTopology::linear(10, dest, ServerBehavior::Serve403);
    (
        SplitTransport {
            icmp: single_host_network(&icmp),
            tcp: single_host_network(&tcp),
        },
        dest,
    )
}

pub fn e2e_network(wall_delay_ms: u64, vantage: &Vantage) -> SimNetwork {
    let fixture: SimFixture = serde_json::from_str(&e2e_fixture_json(wall_delay_ms)).unwrap();
    SimNetwork::from_fixture(&fixture, Some(vantage)).unwrap()
}

pub fn e2e_vantage(id: &str) -> Vantage {
    e2e_roster().into_iter().find(|v| v.id == id).unwrap()
}

/// Crawls `urls` from `vantage` over the e2e simulator into `dir`.
pub fn crawl_sim(
    urls: &[String],
    vantage: &Vantage,
    dir: &Path,
    runs: u32,
    control: CrawlControl,
) -> Result<CrawlSummary, CampaignError> {
    let net = e2e_network(0, vantage);
    let rules = RuleSet::starter();
    let clock = FixedClock(DateTime::UNIX_EPOCH);
    let env = CrawlEnv {
        resolver: &net,
        transport: &net,
        rules: &rules,
        clock: &clock,
    };
    let list = parse_url_list(&urls.join("\n"));
    let mut manifest = CampaignManifest::new(list.urls, vantage.clone(), dir.to_path_buf());
    manifest.runs = runs;
    manifest.concurrency = 4;
    cmd_crawl(&manifest, &env, control)
}

/// Every record line under `dir`, sorted.
pub fn sorted_record_lines(dir: &Path) -> Vec<String> {
    let mut lines = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|x| x == "jsonl") {
            let text = std::fs::read_to_string(&path).unwrap();
            lines.extend(text.lines().filter(|l| !l.trim().is_empty()).map(String::from));
        }
    }
    lines.sort();
    lines
}

/// A small complete log: 1-4 URLs, 1-3 vantages, 1-3 runs, drawn from a
/// palette of 1-3 classes.
pub fn random_log(rng: &mut ChaCha8Rng) -> Vec<FetchOutcome> {
    let urls = rng.random_range(1..=4);
    let vantages = rng.random_range(1..=3);
    let runs = rng.random_range(1..=3);
    let palette: Vec<StatusClass> = (0..rng.random_range(1..=3))
        .map(|_| StatusClass::ALL[rng.random_range(0..StatusClass::ALL.len())])
        .collect();
    let mut out = Vec::new();
    for u in 0..urls {
        for v in 0..vantages {
            for run in 0..runs {
                let class = palette[rng.random_range(0..palette.len())];
                let bp = (class.is_http() && rng.random_bool(0.2))
                    .then(|| BlockpageClass::ALL[rng.random_range(0..BlockpageClass::ALL.len())]);
                out.push(outcome(&format!("u{u}.test"), &format!("v{v}"), run, class, bp));
            }
        }
    }
    out
}
