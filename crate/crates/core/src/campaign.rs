//! Campaign driver: crawl a URL list from one vantage, short-list across two
//! regions, and trace the short-list.
//!
//! Output layout of a crawl directory:
//!
//! ```text
//! vantage.json        the vantage that produced the logs
//! run-<i>.jsonl       one record per URL for run i (0-based)
//! run-<i>.checkpoint  "<i>\t<url>" for every URL whose record is on disk
//! ```

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::thread;

use crossbeam_channel::bounded;
use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::aggregator::{
    aggregate_log, infer_listing, region_availability, shortlist, symmetric_difference, Funnel, ShortlistEntry,
};
use crate::blockpage::RuleSet;
use crate::fetcher::{resolve_with_www_fallback, Clock, FetchRequest, Fetcher, HttpTransport, Resolver};
use crate::model::{ConfigError, FetchOutcome, ProbeConfig, TargetUrl, Vantage};
use crate::record::{decode_record, encode_record, read_logs, RecordError};
use crate::traceroute::{trace_target, BlockVerdict, ProbeError, ProbeTransport, TraceTarget};

pub const DEFAULT_RUNS: u32 = 3;
pub const DEFAULT_CONCURRENCY: usize = 16;
pub const DEFAULT_TRACE_CONCURRENCY: usize = 4;
pub const DEFAULT_SEED: u64 = 0x5eed;

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("output directory {}: {source}", path.display())]
    Output { path: PathBuf, source: io::Error },
    #[error("url list {}: {source}", path.display())]
    UrlList { path: PathBuf, source: io::Error },
    #[error("runs must be at least 1")]
    ZeroRuns,
    #[error("concurrency must be at least 1")]
    ZeroConcurrency,
    #[error("invalid config: {0}")]
    Config(#[from] ConfigError),
    #[error("{} was written by vantage {found:?}, not {expected:?}", dir.display())]
    VantageMismatch {
        dir: PathBuf,
        found: String,
        expected: String,
    },
    #[error("no control observations")]
    NoControlObservations,
    #[error("no test observations")]
    NoTestObservations,
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error("vantage file {}: {source}", path.display())]
    VantageFile { path: PathBuf, source: serde_json::Error },
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
}

impl CampaignError {
    pub fn is_permission(&self) -> bool {
        matches!(self, CampaignError::Probe(ProbeError::Permission(_)))
    }
}

/// A URL list after normalization and de-duplication.
#[derive(Debug, Clone, Default)]
pub struct UrlList {
    pub urls: Vec<TargetUrl>,
    pub warnings: Vec<String>,
}

/// Parses a newline-delimited list. Blank lines and `#` comments are
/// skipped; unparsable and duplicate entries are dropped with a warning.
pub fn parse_url_list(text: &str) -> UrlList {
    let mut list = UrlList::default();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match TargetUrl::parse(line) {
            Ok(url) if seen.insert(url.raw().to_string()) => list.urls.push(url),
            Ok(url) => list
                .warnings
                .push(format!("line {}: duplicate url {}", i + 1, url.raw())),
            Err(e) => list.warnings.push(format!("line {}: {e}", i + 1)),
        }
    }
    for w in &list.warnings {
        warn!("{w}");
    }
    list
}

pub fn read_url_list(path: &Path) -> Result<UrlList, CampaignError> {
    let text = fs::read_to_string(path).map_err(|source| CampaignError::UrlList {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(parse_url_list(&text))
}

/// Visit order for one run: a seeded shuffle, different per run.
pub fn run_order(urls: &[TargetUrl], seed: u64, run: u32) -> Vec<TargetUrl> {
    let mut order = urls.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (u64::from(run) << 32 | u64::from(run)));
    order.shuffle(&mut rng);
    order
}

#[derive(Debug, Clone)]
pub struct CampaignManifest {
    pub urls: Vec<TargetUrl>,
    pub vantage: Vantage,
    pub runs: u32,
    pub output_dir: PathBuf,
    pub config: ProbeConfig,
    pub concurrency: usize,
    pub seed: u64,
}

impl CampaignManifest {
    pub fn new(urls: Vec<TargetUrl>, vantage: Vantage, output_dir: PathBuf) -> Self {
        Self {
            urls,
            vantage,
            runs: DEFAULT_RUNS,
            output_dir,
            config: ProbeConfig::default(),
            concurrency: DEFAULT_CONCURRENCY,
            seed: DEFAULT_SEED,
        }
    }
}

/// Everything a crawl talks to.
#[derive(Clone, Copy)]
pub struct CrawlEnv<'a> {
    pub resolver: &'a dyn Resolver,
    pub transport: &'a dyn HttpTransport,
    pub rules: &'a RuleSet,
    pub clock: &'a dyn Clock,
}

/// Test hook: stop once this many records have been written by this call,
/// as if the process had been killed.
#[derive(Debug, Clone, Copy, Default)]
pub struct CrawlControl {
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CrawlSummary {
    /// Records written by this call.
    pub written: usize,
    /// Records already on disk from an earlier call.
    pub resumed: usize,
    pub interrupted: bool,
    pub warnings: Vec<String>,
}

pub fn run_log_path(dir: &Path, run: u32) -> PathBuf {
    dir.join(format!("run-{run}.jsonl"))
}

pub fn checkpoint_path(dir: &Path, run: u32) -> PathBuf {
    dir.join(format!("run-{run}.checkpoint"))
}

pub fn vantage_path(dir: &Path) -> PathBuf {
    dir.join("vantage.json")
}

fn prepare_output(manifest: &CampaignManifest) -> Result<(), CampaignError> {
    let dir = &manifest.output_dir;
    let output = |source| CampaignError::Output {
        path: dir.clone(),
        source,
    };
    fs::create_dir_all(dir).map_err(output)?;
    let vpath = vantage_path(dir);
    match fs::read_to_string(&vpath) {
        Ok(text) => {
            let found: Vantage = serde_json::from_str(&text).map_err(|source| CampaignError::VantageFile {
                path: vpath.clone(),
                source,
            })?;
            if found != manifest.vantage {
                return Err(CampaignError::VantageMismatch {
                    dir: dir.clone(),
                    found: found.id,
                    expected: manifest.vantage.id.clone(),
                });
            }
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            let text = serde_json::to_string_pretty(&manifest.vantage).expect("vantage serializes");
            fs::write(&vpath, text + "\n").map_err(output)?;
        }
        Err(e) => return Err(output(e)),
    }
    Ok(())
}

/// Brings one run's files to a consistent state and returns the URLs already
/// recorded. A torn last line is cut off; the checkpoint is rewritten from
/// the log, which is authoritative.
fn recover_run(dir: &Path, run: u32, warnings: &mut Vec<String>) -> Result<BTreeSet<String>, CampaignError> {
    let log = run_log_path(dir, run);
    let mut done = BTreeSet::new();
    match fs::read(&log) {
        Ok(bytes) => {
            let keep = match bytes.iter().rposition(|b| *b == b'\n') {
                Some(i) => i + 1,
                None => 0,
            };
            if keep < bytes.len() {
                warnings.push(format!("{}: dropped torn final line", log.display()));
                OpenOptions::new().write(true).open(&log)?.set_len(keep as u64)?;
            }
            let text = String::from_utf8_lossy(&bytes[..keep]);
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let record = decode_record(line).map_err(|e| RecordError::AtLine {
                    path: log.display().to_string(),
                    line: i + 1,
                    source: Box::new(e),
                })?;
                if !done.insert(record.url.raw().to_string()) {
                    warnings.push(format!("{}: duplicate record for {}", log.display(), record.url.raw()));
                }
            }
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => {}
        Err(e) => return Err(e.into()),
    }

    let ckpt = checkpoint_path(dir, run);
    if let Ok(text) = fs::read_to_string(&ckpt) {
        for line in text.lines() {
            let url = line.split_once('\t').map_or(line, |(_, u)| u);
            if !url.is_empty() && !done.contains(url) {
                warnings.push(format!("{}: {url} has no record, fetching again", ckpt.display()));
            }
        }
    }
    let mut rewritten = String::new();
    for url in &done {
        rewritten.push_str(&format!("{run}\t{url}\n"));
    }
    fs::write(&ckpt, rewritten)?;
    Ok(done)
}

/// Runs `work` over `jobs` on `concurrency` threads and feeds results to
/// `sink` on the calling thread, in completion order. `sink` returning
/// `Ok(false)` stops the pool; in-flight results are then discarded.
pub fn bounded_map<J, R, E>(
    jobs: Vec<J>,
    concurrency: usize,
    work: impl Fn(J) -> R + Sync,
    mut sink: impl FnMut(R) -> Result<bool, E>,
) -> Result<bool, E>
where
    J: Send,
    R: Send,
{
    let concurrency = concurrency.max(1);
    let stop = AtomicBool::new(false);
    let (job_tx, job_rx) = bounded::<J>(concurrency);
    let (res_tx, res_rx) = bounded::<R>(concurrency);
    thread::scope(|s| {
        for _ in 0..concurrency {
            let job_rx = job_rx.clone();
            let res_tx = res_tx.clone();
            let (work, stop) = (&work, &stop);
            s.spawn(move || {
                for job in job_rx {
                    if stop.load(Ordering::Relaxed) {
                        break;
                    }
                    if res_tx.send(work(job)).is_err() {
                        break;
                    }
                }
            });
        }
        drop(job_rx);
        drop(res_tx);
        let stop_ref = &stop;
        s.spawn(move || {
            for job in jobs {
                if stop_ref.load(Ordering::Relaxed) || job_tx.send(job).is_err() {
                    break;
                }
            }
        });
        let result = (|| {
            for r in res_rx.iter() {
                if !sink(r)? {
                    return Ok(false);
                }
            }
            Ok(true)
        })();
        stop.store(true, Ordering::Relaxed);
        drop(res_rx);
        result
    })
}

/// Fetches one URL, trying the `www.` variant when the listed host does not resolve.
pub fn fetch_one(
    env: &CrawlEnv<'_>,
    config: &ProbeConfig,
    url: &TargetUrl,
    vantage_id: &str,
    run: u32,
) -> FetchOutcome {
    let resolved = resolve_with_www_fallback(url, env.resolver);
    let fetcher = Fetcher {
        transport: env.transport,
        rules: env.rules,
        clock: env.clock,
    };
    fetcher.fetch(FetchRequest::new(resolved.target, config), vantage_id, run)
}

/// Crawls every URL once per run. Resumes from whatever an earlier,
/// interrupted call left on disk; never writes a second record for a
/// (URL, run) pair.
pub fn cmd_crawl(
    manifest: &CampaignManifest,
    env: &CrawlEnv<'_>,
    control: CrawlControl,
) -> Result<CrawlSummary, CampaignError> {
    if manifest.runs == 0 {
        return Err(CampaignError::ZeroRuns);
    }
    if manifest.concurrency == 0 {
        return Err(CampaignError::ZeroConcurrency);
    }
    manifest.config.validate()?;
    prepare_output(manifest)?;
    let dir = &manifest.output_dir;
    let mut summary = CrawlSummary::default();

    for run in 0..manifest.runs {
        let done = recover_run(dir, run, &mut summary.warnings)?;
        summary.resumed += manifest.urls.iter().filter(|u| done.contains(u.raw())).count();
        let pending: Vec<TargetUrl> = run_order(&manifest.urls, manifest.seed, run)
            .into_iter()
            .filter(|u| !done.contains(u.raw()))
            .collect();
        if pending.is_empty() {
            continue;
        }
        let mut log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(run_log_path(dir, run))?;
        let mut ckpt = OpenOptions::new()
            .create(true)
            .append(true)
            .open(checkpoint_path(dir, run))?;
        let vantage_id = manifest.vantage.id.as_str();
        let finished = bounded_map(
            pending,
            manifest.concurrency,
            |url| fetch_one(env, &manifest.config, &url, vantage_id, run),
            |outcome| -> io::Result<bool> {
                let mut line = encode_record(&outcome);
                line.push('\n');
                log.write_all(line.as_bytes())?;
                log.flush()?;
                writeln!(ckpt, "{run}\t{}", outcome.url.raw())?;
                ckpt.flush()?;
                summary.written += 1;
                Ok(control.stop_after.is_none_or(|n| summary.written < n))
            },
        )?;
        if !finished {
            summary.interrupted = true;
            return Ok(summary);
        }
    }
    Ok(summary)
}

/// Reads a crawl directory: its vantage (if recorded) and all run logs.
pub fn load_campaign_dir(dir: &Path) -> Result<(Option<Vantage>, Vec<FetchOutcome>), CampaignError> {
    let vpath = vantage_path(dir);
    let vantage = match fs::read_to_string(&vpath) {
        Ok(text) => {
            Some(serde_json::from_str(&text).map_err(|source| CampaignError::VantageFile { path: vpath, source })?)
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => None,
        Err(e) => return Err(e.into()),
    };
    Ok((vantage, read_logs(dir)?))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShortlistReport {
    pub entries: Vec<ShortlistEntry>,
    pub funnel: Funnel,
    /// URLs seen on only one side; they are left out.
    pub only_one_side: Vec<String>,
}

/// Aggregates both regions and short-lists. `others` are extra regions used
/// only for the whitelisting/blacklisting signal.
pub fn cmd_shortlist(
    control_logs: &[FetchOutcome],
    test_logs: &[FetchOutcome],
    control_label: &str,
    test_label: &str,
    others: &BTreeMap<String, Vec<FetchOutcome>>,
) -> Result<ShortlistReport, CampaignError> {
    if control_logs.is_empty() {
        return Err(CampaignError::NoControlObservations);
    }
    if test_logs.is_empty() {
        return Err(CampaignError::NoTestObservations);
    }
    let control = aggregate_log(control_label, control_logs);
    let test = aggregate_log(test_label, test_logs);
    let only_one_side = symmetric_difference(&control, &test);
    if !only_one_side.is_empty() {
        warn!(
            "{} urls appear on only one side and are ignored: {}",
            only_one_side.len(),
            only_one_side.join(", ")
        );
    }
    let mut entries = shortlist(&control, &test);
    if !others.is_empty() {
        let mut availability: BTreeMap<String, BTreeMap<String, bool>> = BTreeMap::new();
        for (region, logs) in std::iter::once((control_label, control_logs))
            .chain(std::iter::once((test_label, test_logs)))
            .chain(others.iter().map(|(r, l)| (r.as_str(), l.as_slice())))
        {
            for (url, available) in region_availability(logs) {
                availability
                    .entry(url)
                    .or_default()
                    .insert(region.to_string(), available);
            }
        }
        let probes: BTreeSet<String> = others.keys().cloned().collect();
        for entry in &mut entries {
            entry.listing = availability
                .get(&entry.url)
                .and_then(|by_region| infer_listing(&entry.url, by_region, control_label, &probes).ok());
        }
    }
    let funnel = Funnel::compute(&control, &test, entries.len());
    Ok(ShortlistReport {
        entries,
        funnel,
        only_one_side,
    })
}

/// Everything the trace stage talks to.
#[derive(Clone, Copy)]
pub struct TraceEnv<'a> {
    pub resolver: &'a dyn Resolver,
    pub transport: &'a dyn ProbeTransport,
}

fn split_path(url: &str) -> String {
    url::Url::parse(url)
        .map(|u| {
            let mut p = u.path().to_string();
            if let Some(q) = u.query() {
                p.push('?');
                p.push_str(q);
            }
            p
        })
        .unwrap_or_else(|_| "/".into())
}

fn trace_entry(
    entry: &ShortlistEntry,
    vantage_id: &str,
    config: &ProbeConfig,
    env: &TraceEnv<'_>,
) -> Result<BlockVerdict, ProbeError> {
    let Ok(target) = TargetUrl::parse(&entry.url) else {
        return Ok(BlockVerdict::unresolved(&entry.url, vantage_id));
    };
    let resolved = resolve_with_www_fallback(&target, env.resolver);
    let Some(destination) = resolved.addresses.first().copied() else {
        return Ok(BlockVerdict::unresolved(&entry.url, vantage_id));
    };
    let path = split_path(resolved.target.effective());
    trace_target(
        &TraceTarget {
            url: &entry.url,
            vantage_id,
            destination,
            host: resolved.target.host(),
            path: &path,
        },
        config,
        env.transport,
    )
}

/// Traces every short-listed URL, up to `concurrency` at a time. Returns
/// verdicts sorted by URL. A permission failure aborts the stage.
pub fn cmd_trace(
    entries: &[ShortlistEntry],
    vantage_id: &str,
    config: &ProbeConfig,
    env: &TraceEnv<'_>,
    concurrency: usize,
) -> Result<Vec<BlockVerdict>, CampaignError> {
    config.validate()?;
    let mut verdicts = Vec::with_capacity(entries.len());
    bounded_map(
        entries.iter().collect(),
        concurrency,
        |entry| trace_entry(entry, vantage_id, config, env),
        |result| -> Result<bool, ProbeError> {
            verdicts.push(result?);
            Ok(true)
        },
    )?;
    verdicts.sort_by(|a, b| a.url.cmp(&b.url));
    Ok(verdicts)
}

pub fn write_verdicts(path: &Path, verdicts: &[BlockVerdict]) -> Result<(), CampaignError> {
    let mut file = File::create(path)?;
    serde_json::to_writer_pretty(&mut file, verdicts).map_err(io::Error::from)?;
    file.write_all(b"\n")?;
    Ok(())
}

pub fn read_verdicts(path: &Path) -> Result<Vec<BlockVerdict>, CampaignError> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text).map_err(io::Error::from)?)
}
