use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::DateTime;
use geoblock_core::aggregator::{read_shortlist_csv, write_shortlist_csv};
use geoblock_core::blockpage::{load_fingerprints, RuleSet};
use geoblock_core::campaign::{
    cmd_crawl, cmd_shortlist, cmd_trace, load_campaign_dir, read_url_list, read_verdicts, write_verdicts,
    CampaignError, CampaignManifest, CrawlControl, CrawlEnv, TraceEnv,
};
use geoblock_core::fetcher::{FixedClock, ReqwestTransport, SystemClock, SystemResolver};
use geoblock_core::netsim::SimNetwork;
use geoblock_core::report::{
    class_table_csv, class_table_markdown, cmd_annotate, cmd_report, read_annotations, TraceTree,
};
use geoblock_core::traceroute::raw::RawProbeTransport;
use geoblock_core::traceroute::ProbeError;
use geoblock_core::{load_roster, FetchOutcome, ProbeConfig, Vantage};

use crate::args::{
    AnnotateArgs, Cli, Command, CrawlArgs, ReportArgs, ShortlistArgs, TraceArgs, TransportChoice, VantageArgs,
};
use crate::{EXIT_PERMISSION, EXIT_RUNTIME, EXIT_USAGE};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
    Permission(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
            CliError::Permission(_) => EXIT_PERMISSION,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) | CliError::Permission(m) => f.write_str(m),
        }
    }
}

fn runtime(e: impl fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

const PERMISSION_HINT: &str = "raw sockets are needed for real traceroutes; run as root or grant the \
capability with `sudo setcap cap_net_raw+ep $(command -v geoblock)`";

impl From<CampaignError> for CliError {
    fn from(e: CampaignError) -> Self {
        if e.is_permission() {
            CliError::Permission(format!("{e}; {PERMISSION_HINT}"))
        } else {
            runtime(e)
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Crawl(a) => crawl(a),
        Command::Shortlist(a) => shortlist(a),
        Command::Trace(a) => trace(a),
        Command::Report(a) => report(a),
        Command::Annotate(a) => annotate(a),
    }
}

fn pick_vantage(args: &VantageArgs) -> Result<Vantage, CliError> {
    let roster = load_roster(&args.vantage_file)
        .map_err(|e| CliError::Usage(format!("{}: {e}", args.vantage_file.display())))?;
    match &args.vantage_id {
        Some(id) => roster
            .into_iter()
            .find(|v| &v.id == id)
            .ok_or_else(|| CliError::Usage(format!("vantage {id:?} is not in {}", args.vantage_file.display()))),
        None if roster.len() == 1 => Ok(roster.into_iter().next().expect("one entry")),
        None => Err(CliError::Usage(format!(
            "{} lists {} vantages; pick one with --vantage-id",
            args.vantage_file.display(),
            roster.len()
        ))),
    }
}

fn load_sim(path: &Path, vantage: Option<&Vantage>) -> Result<SimNetwork, CliError> {
    SimNetwork::load(path, vantage).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn crawl(args: CrawlArgs) -> Result<(), CliError> {
    let list = read_url_list(&args.urls).map_err(|e| CliError::Usage(e.to_string()))?;
    let vantage = pick_vantage(&args.vantage)?;
    let rules = match &args.fingerprints {
        Some(p) => load_fingerprints(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?,
        None => RuleSet::starter(),
    };
    let config = ProbeConfig {
        fetch_timeout: Duration::from_secs(args.timeout_secs),
        verify_tls: !args.insecure,
        ..ProbeConfig::default()
    };
    let url_count = list.urls.len();
    let mut manifest = CampaignManifest::new(list.urls, vantage.clone(), args.out.clone());
    manifest.runs = args.runs;
    manifest.config = config.clone();
    manifest.concurrency = args.concurrency as usize;
    manifest.seed = args.seed;
    let control = CrawlControl {
        stop_after: args.stop_after,
    };

    let summary = match &args.transport {
        TransportChoice::Real => {
            let transport = ReqwestTransport::new(&config).map_err(runtime)?;
            let env = CrawlEnv {
                resolver: &SystemResolver,
                transport: &transport,
                rules: &rules,
                clock: &SystemClock,
            };
            cmd_crawl(&manifest, &env, control)?
        }
        TransportChoice::Sim(path) => {
            let net = load_sim(path, Some(&vantage))?;
            let clock = FixedClock(DateTime::UNIX_EPOCH);
            let env = CrawlEnv {
                resolver: &net,
                transport: &net,
                rules: &rules,
                clock: &clock,
            };
            cmd_crawl(&manifest, &env, control)?
        }
    };
    println!(
        "{url_count} urls x {} runs from {}: {} records written, {} already present{}",
        args.runs,
        vantage.id,
        summary.written,
        summary.resumed,
        if summary.interrupted { " (stopped early)" } else { "" }
    );
    Ok(())
}

struct LoadedLogs {
    records: Vec<FetchOutcome>,
    regions: Vec<Option<String>>,
    region_of: HashMap<String, String>,
}

fn load_dirs(paths: &[PathBuf]) -> Result<LoadedLogs, CliError> {
    let mut loaded = LoadedLogs {
        records: Vec::new(),
        regions: Vec::new(),
        region_of: HashMap::new(),
    };
    for p in paths {
        let (vantage, records) = load_campaign_dir(p)?;
        if let Some(v) = &vantage {
            loaded.region_of.insert(v.id.clone(), v.region_label.clone());
        }
        loaded.regions.push(vantage.map(|v| v.region_label));
        loaded.records.extend(records);
    }
    Ok(loaded)
}

fn label_for(explicit: Option<String>, logs: &LoadedLogs, flag: &str) -> Result<String, CliError> {
    explicit
        .or_else(|| logs.regions.iter().flatten().next().cloned())
        .ok_or_else(|| CliError::Usage(format!("no vantage.json found; pass --{flag}")))
}

fn shortlist(args: ShortlistArgs) -> Result<(), CliError> {
    let control = load_dirs(&args.control)?;
    let test = load_dirs(&args.test)?;
    let control_label = label_for(args.control_label, &control, "control-label")?;
    let test_label = label_for(args.test_label, &test, "test-label")?;
    let mut others: BTreeMap<String, Vec<FetchOutcome>> = BTreeMap::new();
    for p in &args.other {
        let (vantage, records) = load_campaign_dir(p)?;
        let region = vantage.map_or_else(|| p.display().to_string(), |v| v.region_label);
        others.entry(region).or_default().extend(records);
    }

    let result = cmd_shortlist(&control.records, &test.records, &control_label, &test_label, &others)?;
    let file = File::create(&args.out).map_err(|e| runtime(format!("{}: {e}", args.out.display())))?;
    write_shortlist_csv(file, &result.entries).map_err(runtime)?;
    if !result.only_one_side.is_empty() {
        println!("{} urls seen on one side only were ignored", result.only_one_side.len());
    }
    print!("{}", result.funnel.render(&control_label, &test_label));
    Ok(())
}

fn trace(args: TraceArgs) -> Result<(), CliError> {
    let file =
        File::open(&args.shortlist).map_err(|e| CliError::Usage(format!("{}: {e}", args.shortlist.display())))?;
    let entries =
        read_shortlist_csv(file).map_err(|e| CliError::Usage(format!("{}: {e}", args.shortlist.display())))?;
    let vantage = pick_vantage(&args.vantage)?;
    let config = ProbeConfig {
        hop_delta_threshold: args.hop_delta,
        ..ProbeConfig::default()
    };
    let concurrency = args.concurrency as usize;
    let verdicts = match &args.transport {
        TransportChoice::Real => {
            let transport = RawProbeTransport::new().map_err(|e| match e {
                ProbeError::Permission(m) => CliError::Permission(format!("{m}; {PERMISSION_HINT}")),
                other => runtime(other),
            })?;
            let env = TraceEnv {
                resolver: &SystemResolver,
                transport: &transport,
            };
            cmd_trace(&entries, &vantage.id, &config, &env, concurrency)?
        }
        TransportChoice::Sim(path) => {
            let net = load_sim(path, Some(&vantage))?;
            let env = TraceEnv {
                resolver: &net,
                transport: &net,
            };
            cmd_trace(&entries, &vantage.id, &config, &env, concurrency)?
        }
    };
    write_verdicts(&args.out, &verdicts)?;
    print!("{}", TraceTree::build(&verdicts, &BTreeMap::new()).render());
    Ok(())
}

fn report(args: ReportArgs) -> Result<(), CliError> {
    let logs = load_dirs(&args.logs)?;
    let report = cmd_report(&logs.records, &logs.region_of);
    fs::create_dir_all(&args.out).map_err(|e| runtime(format!("{}: {e}", args.out.display())))?;
    let write = |name: &str, text: &str| {
        let path = args.out.join(name);
        fs::write(&path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))
    };
    let counts_md = class_table_markdown(&report.class_counts);
    write("class_counts.csv", &class_table_csv(&report.class_counts))?;
    write("class_counts.md", &counts_md)?;
    write("matrix.csv", &report.matrix.to_csv())?;
    write("matrix.md", &report.matrix.to_markdown())?;
    print!("{counts_md}");
    Ok(())
}

fn annotate(args: AnnotateArgs) -> Result<(), CliError> {
    let verdicts =
        read_verdicts(&args.verdicts).map_err(|e| CliError::Usage(format!("{}: {e}", args.verdicts.display())))?;
    let annotations = match &args.annotations {
        Some(p) => read_annotations(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?,
        None => Vec::new(),
    };
    let merged = cmd_annotate(&verdicts, &annotations);
    let text = serde_json::to_string_pretty(&merged).map_err(runtime)?;
    fs::write(&args.out, text + "\n").map_err(|e| runtime(format!("{}: {e}", args.out.display())))?;
    print!("{}", merged.tree.render());
    Ok(())
}
