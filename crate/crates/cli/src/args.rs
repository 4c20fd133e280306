use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Region-scale blocking measurements: crawl, short-list, trace, report.
///
/// Every flag can also be set through an environment variable named
/// GEOBLOCK_<FLAG>, e.g. GEOBLOCK_RUNS=5.
#[derive(Debug, Parser)]
#[command(name = "geoblock", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fetch every URL in a list from one vantage, once per run.
    Crawl(CrawlArgs),
    /// Compare a control region against a test region and short-list URLs.
    Shortlist(ShortlistArgs),
    /// Run the traceroute differential over a short-list.
    Trace(TraceArgs),
    /// Class-count table and status matrix over crawl logs.
    Report(ReportArgs),
    /// Merge manual-check results into a verdict file.
    Annotate(AnnotateArgs),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportChoice {
    Real,
    Sim(PathBuf),
}

pub fn parse_transport(s: &str) -> Result<TransportChoice, String> {
    match s {
        "real" => Ok(TransportChoice::Real),
        _ => match s.strip_prefix("sim:") {
            Some(path) if !path.is_empty() => Ok(TransportChoice::Sim(PathBuf::from(path))),
            _ => Err(format!("expected `real` or `sim:<fixture.json>`, got {s:?}")),
        },
    }
}

#[derive(Debug, Args)]
pub struct VantageArgs {
    /// JSON-lines vantage roster.
    #[arg(long, env = "GEOBLOCK_VANTAGE_FILE")]
    pub vantage_file: PathBuf,
    /// Vantage id in the roster; may be omitted when the roster has one entry.
    #[arg(long, env = "GEOBLOCK_VANTAGE_ID")]
    pub vantage_id: Option<String>,
}

#[derive(Debug, Args)]
pub struct CrawlArgs {
    /// Newline-delimited URL list.
    #[arg(long, env = "GEOBLOCK_URLS")]
    pub urls: PathBuf,
    #[command(flatten)]
    pub vantage: VantageArgs,
    #[arg(long, env = "GEOBLOCK_RUNS", default_value_t = 3, value_parser = clap::value_parser!(u32).range(1..))]
    pub runs: u32,
    /// Output directory for run logs and checkpoints.
    #[arg(long, env = "GEOBLOCK_OUT")]
    pub out: PathBuf,
    /// Total budget per URL load, redirects included.
    #[arg(long, env = "GEOBLOCK_TIMEOUT_SECS", default_value_t = 30, value_parser = clap::value_parser!(u64).range(1..))]
    pub timeout_secs: u64,
    #[arg(long, env = "GEOBLOCK_TRANSPORT", default_value = "real", value_parser = parse_transport)]
    pub transport: TransportChoice,
    #[arg(long, env = "GEOBLOCK_CONCURRENCY", default_value_t = 16, value_parser = clap::value_parser!(u64).range(1..))]
    pub concurrency: u64,
    /// Seed for the per-run URL order.
    #[arg(long, env = "GEOBLOCK_SEED", default_value_t = 0x5eed)]
    pub seed: u64,
    /// Block-page fingerprint file (TSV); defaults to the built-in rules.
    #[arg(long, env = "GEOBLOCK_FINGERPRINTS")]
    pub fingerprints: Option<PathBuf>,
    /// Accept invalid TLS certificates.
    #[arg(long, env = "GEOBLOCK_INSECURE")]
    pub insecure: bool,
    /// Stop after writing this many records (for testing resume).
    #[arg(long, hide = true, env = "GEOBLOCK_STOP_AFTER")]
    pub stop_after: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ShortlistArgs {
    /// Crawl directories (or log files) from the control region.
    #[arg(long, env = "GEOBLOCK_CONTROL", required = true, num_args = 1.., value_delimiter = ',')]
    pub control: Vec<PathBuf>,
    /// Crawl directories (or log files) from the test region.
    #[arg(long, env = "GEOBLOCK_TEST", required = true, num_args = 1.., value_delimiter = ',')]
    pub test: Vec<PathBuf>,
    /// Further regions, used only for the listing signal.
    #[arg(long, env = "GEOBLOCK_OTHER", num_args = 1.., value_delimiter = ',')]
    pub other: Vec<PathBuf>,
    /// Defaults to the region recorded in the first control directory.
    #[arg(long, env = "GEOBLOCK_CONTROL_LABEL")]
    pub control_label: Option<String>,
    /// Defaults to the region recorded in the first test directory.
    #[arg(long, env = "GEOBLOCK_TEST_LABEL")]
    pub test_label: Option<String>,
    /// Short-list CSV to write.
    #[arg(long, env = "GEOBLOCK_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    /// Short-list CSV from `shortlist`.
    #[arg(long, env = "GEOBLOCK_SHORTLIST")]
    pub shortlist: PathBuf,
    #[command(flatten)]
    pub vantage: VantageArgs,
    /// Verdict JSON to write.
    #[arg(long, env = "GEOBLOCK_OUT")]
    pub out: PathBuf,
    #[arg(long, env = "GEOBLOCK_TRANSPORT", default_value = "real", value_parser = parse_transport)]
    pub transport: TransportChoice,
    /// Flag a TCP/HTTP path shorter than the ICMP path by more than this many hops.
    #[arg(long, env = "GEOBLOCK_HOP_DELTA", default_value_t = 3, value_parser = clap::value_parser!(u32).range(1..))]
    pub hop_delta: u32,
    #[arg(long, env = "GEOBLOCK_CONCURRENCY", default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..))]
    pub concurrency: u64,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Crawl directories, one or more per vantage.
    #[arg(long, env = "GEOBLOCK_LOGS", required = true, num_args = 1.., value_delimiter = ',')]
    pub logs: Vec<PathBuf>,
    /// Directory for the CSV and Markdown outputs.
    #[arg(long, env = "GEOBLOCK_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    /// Verdict JSON from `trace`.
    #[arg(long, env = "GEOBLOCK_VERDICTS")]
    pub verdicts: PathBuf,
    /// JSON-lines manual-check annotations.
    #[arg(long, env = "GEOBLOCK_ANNOTATIONS")]
    pub annotations: Option<PathBuf>,
    /// Merged report JSON to write.
    #[arg(long, env = "GEOBLOCK_OUT")]
    pub out: PathBuf,
}
