//! Table-style reports: per-vantage class counts, the per-URL status matrix,
//! and the manual-check / traceroute tree for short-listed URLs.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregator::majority_class;
use crate::model::{FetchOutcome, ManualAnnotation, ManualResult, StatusClass};
use crate::traceroute::{BlockKind, BlockVerdict, VerdictReason};

/// One row of the class-count table: counts per class averaged over runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassCountRow {
    pub vantage_id: String,
    pub region_label: String,
    pub runs: usize,
    /// Indexed like [`StatusClass::ALL`].
    pub counts: [f64; StatusClass::ALL.len()],
}

impl ClassCountRow {
    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }
}

fn region_for<'a>(vantage: &'a str, region_of: &'a HashMap<String, String>) -> &'a str {
    region_of.get(vantage).map_or(vantage, String::as_str)
}

/// Rows sorted by region, then vantage.
pub fn class_count_table(records: &[FetchOutcome], region_of: &HashMap<String, String>) -> Vec<ClassCountRow> {
    let mut per_vantage: BTreeMap<&str, BTreeMap<u32, [usize; StatusClass::ALL.len()]>> = BTreeMap::new();
    for r in records {
        per_vantage
            .entry(&r.vantage_id)
            .or_default()
            .entry(r.run_index)
            .or_default()[r.status_class as usize] += 1;
    }
    let mut rows: Vec<ClassCountRow> = per_vantage
        .into_iter()
        .map(|(vantage, runs)| {
            let n = runs.len();
            let mut counts = [0f64; StatusClass::ALL.len()];
            for run in runs.values() {
                for (slot, c) in counts.iter_mut().zip(run) {
                    *slot += *c as f64;
                }
            }
            for slot in &mut counts {
                *slot /= n as f64;
            }
            ClassCountRow {
                vantage_id: vantage.to_string(),
                region_label: region_for(vantage, region_of).to_string(),
                runs: n,
                counts,
            }
        })
        .collect();
    rows.sort_by(|a, b| (&a.region_label, &a.vantage_id).cmp(&(&b.region_label, &b.vantage_id)));
    rows
}

fn fmt_count(x: f64) -> String {
    if (x - x.round()).abs() < 1e-9 {
        format!("{}", x.round() as i64)
    } else {
        format!("{x:.1}")
    }
}

fn class_table_header() -> Vec<String> {
    let mut header = vec!["Vantage".to_string(), "Region".to_string()];
    header.extend(StatusClass::ALL.iter().map(|c| c.column_heading().to_string()));
    header.push("Total".into());
    header
}

fn class_table_cells(row: &ClassCountRow) -> Vec<String> {
    let mut cells = vec![row.vantage_id.clone(), row.region_label.clone()];
    cells.extend(row.counts.iter().map(|c| fmt_count(*c)));
    cells.push(fmt_count(row.total()));
    cells
}

pub fn class_table_csv(rows: &[ClassCountRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(class_table_header()).expect("in-memory csv");
    for row in rows {
        w.write_record(class_table_cells(row)).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
}

fn markdown(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "| {} |", header.join(" | "));
    let _ = writeln!(out, "|{}", "---|".repeat(header.len()));
    for row in rows {
        let _ = writeln!(out, "| {} |", row.join(" | "));
    }
    out
}

pub fn class_table_markdown(rows: &[ClassCountRow]) -> String {
    markdown(&class_table_header(), rows.iter().map(class_table_cells))
}

/// One matrix cell: the majority outcome of a (URL, vantage) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MatrixCell {
    pub majority: StatusClass,
    /// Rendered outcome: the HTTP code for HTTP classes (`*200` for a
    /// block page served with 200), else the class short code.
    pub code: String,
    /// The runs did not all produce the same outcome.
    pub disagree: bool,
}

impl MatrixCell {
    pub fn label(&self) -> String {
        if self.disagree {
            format!("{}\u{2020}", self.code)
        } else {
            self.code.clone()
        }
    }
}

fn outcome_code(r: &FetchOutcome) -> String {
    match (r.status_class, r.http_status) {
        (StatusClass::Ok2xx, Some(200)) if r.blockpage.is_some_and(|b| b.is_block()) => "*200".into(),
        (class, Some(code)) if class.is_http() => code.to_string(),
        (class, _) => class.short_code().into(),
    }
}

/// Majority cell for one (URL, vantage) pair. Ties go to the class declared
/// first, then to the smallest code.
pub fn matrix_cell(records: &[&FetchOutcome]) -> Option<MatrixCell> {
    let majority = majority_class(records.iter().map(|r| r.status_class))?;
    let mut codes: BTreeMap<String, usize> = BTreeMap::new();
    for r in records.iter().filter(|r| r.status_class == majority) {
        *codes.entry(outcome_code(r)).or_default() += 1;
    }
    let best = codes.values().copied().max().unwrap_or(0);
    let code = codes
        .into_iter()
        .find(|(_, n)| *n == best)
        .map(|(c, _)| c)
        .unwrap_or_default();
    let first = outcome_code(records[0]);
    let disagree = records.iter().any(|r| outcome_code(r) != first);
    Some(MatrixCell {
        majority,
        code,
        disagree,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatusMatrix {
    /// (region, vantage) per column, grouped by region.
    pub columns: Vec<(String, String)>,
    pub rows: Vec<(String, Vec<Option<MatrixCell>>)>,
}

pub fn status_matrix(records: &[FetchOutcome], region_of: &HashMap<String, String>) -> StatusMatrix {
    let mut columns: Vec<(String, String)> = records
        .iter()
        .map(|r| (region_for(&r.vantage_id, region_of).to_string(), r.vantage_id.clone()))
        .collect();
    columns.sort();
    columns.dedup();
    let col_index: HashMap<&str, usize> = columns.iter().enumerate().map(|(i, (_, v))| (v.as_str(), i)).collect();

    let mut grouped: BTreeMap<&str, Vec<Vec<&FetchOutcome>>> = BTreeMap::new();
    for r in records {
        let row = grouped
            .entry(r.url.raw())
            .or_insert_with(|| vec![Vec::new(); columns.len()]);
        row[col_index[r.vantage_id.as_str()]].push(r);
    }
    let rows = grouped
        .into_iter()
        .map(|(url, cells)| (url.to_string(), cells.iter().map(|c| matrix_cell(c)).collect()))
        .collect();
    StatusMatrix { columns, rows }
}

impl StatusMatrix {
    fn header(&self) -> Vec<String> {
        std::iter::once("URL".to_string())
            .chain(self.columns.iter().map(|(region, v)| format!("{region}/{v}")))
            .collect()
    }

    fn cells(&self) -> impl Iterator<Item = Vec<String>> + '_ {
        self.rows.iter().map(|(url, cells)| {
            std::iter::once(url.clone())
                .chain(
                    cells
                        .iter()
                        .map(|c| c.as_ref().map_or_else(|| "-".into(), MatrixCell::label)),
                )
                .collect()
        })
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.header()).expect("in-memory csv");
        for row in self.cells() {
            w.write_record(row).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
    }

    pub fn to_markdown(&self) -> String {
        let mut out = markdown(&self.header(), self.cells());
        out.push_str(
            "\nDE = DNS error, CE = connection error, TO = timed out, RD = too many redirects, \
OT = other, *200 = 200 with a block page, \u{2020} = majority of disagreeing runs\n",
        );
        out
    }
}

/// Both report tables for one set of logs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub class_counts: Vec<ClassCountRow>,
    pub matrix: StatusMatrix,
}

pub fn cmd_report(records: &[FetchOutcome], region_of: &HashMap<String, String>) -> Report {
    Report {
        class_counts: class_count_table(records, region_of),
        matrix: status_matrix(records, region_of),
    }
}

/// Counts for the short-list breakdown tree.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceTree {
    pub shortlisted: usize,
    pub manually_available: usize,
    pub with_captcha: usize,
    pub with_delay: usize,
    pub without_issues: usize,
    pub not_manually_available: usize,
    pub inconclusive: usize,
    pub dns_error: usize,
    pub no_syn_ack: usize,
    /// Inconclusive for another reason (no ICMP baseline, no HTTP reply).
    pub other_inconclusive: usize,
    pub conclusive: usize,
    pub stopped_short: usize,
    pub made_it_to_server: usize,
}

impl TraceTree {
    /// URLs without an annotation are counted as not manually available.
    pub fn build(verdicts: &[BlockVerdict], manual: &BTreeMap<String, ManualResult>) -> Self {
        let mut t = TraceTree {
            shortlisted: verdicts.len(),
            ..Self::default()
        };
        for v in verdicts {
            match manual.get(&v.url) {
                Some(ManualResult::AvailableWithCaptcha) => t.with_captcha += 1,
                Some(ManualResult::AvailableWithDelay) => t.with_delay += 1,
                Some(ManualResult::AvailableClean) => t.without_issues += 1,
                Some(ManualResult::NotAvailable) | None => {
                    t.not_manually_available += 1;
                    match v.kind {
                        BlockKind::Inconclusive if v.dns_error => t.dns_error += 1,
                        BlockKind::Inconclusive if v.reason == VerdictReason::NoTcpResponse => t.no_syn_ack += 1,
                        BlockKind::Inconclusive => t.other_inconclusive += 1,
                        BlockKind::MiddleboxSuspected => t.stopped_short += 1,
                        BlockKind::ServerSide => t.made_it_to_server += 1,
                    }
                }
            }
        }
        t.manually_available = t.with_captcha + t.with_delay + t.without_issues;
        t.inconclusive = t.dns_error + t.no_syn_ack + t.other_inconclusive;
        t.conclusive = t.stopped_short + t.made_it_to_server;
        t
    }

    pub fn render(&self) -> String {
        format!(
            "Short-listed: {}\n\
             \u{251c}\u{2500} Manually available: {}\n\
             \u{2502}  \u{251c}\u{2500} With CAPTCHA: {}\n\
             \u{2502}  \u{251c}\u{2500} With delay: {}\n\
             \u{2502}  \u{2514}\u{2500} Without issues: {}\n\
             \u{2514}\u{2500} Not manually available: {}\n\
             \u{0020}  \u{251c}\u{2500} Traceroute inconclusive: {}\n\
             \u{0020}  \u{2502}  \u{251c}\u{2500} DNS error: {}\n\
             \u{0020}  \u{2502}  \u{251c}\u{2500} No SYN-ACK: {}\n\
             \u{0020}  \u{2502}  \u{2514}\u{2500} Other: {}\n\
             \u{0020}  \u{2514}\u{2500} Traceroute conclusive: {}\n\
             \u{0020}     \u{251c}\u{2500} Stopped short: {}\n\
             \u{0020}     \u{2514}\u{2500} Made it to server: {}\n",
            self.shortlisted,
            self.manually_available,
            self.with_captcha,
            self.with_delay,
            self.without_issues,
            self.not_manually_available,
            self.inconclusive,
            self.dns_error,
            self.no_syn_ack,
            self.other_inconclusive,
            self.conclusive,
            self.stopped_short,
            self.made_it_to_server,
        )
    }
}

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("annotations line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("annotations: {0}")]
    Io(#[from] std::io::Error),
}

/// Reads JSON-lines [`ManualAnnotation`]s.
pub fn read_annotations(path: &Path) -> Result<Vec<ManualAnnotation>, AnnotationError> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| AnnotationError::Parse { line: i + 1, source })?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnnotatedVerdict {
    #[serde(flatten)]
    pub verdict: BlockVerdict,
    pub manual: Option<ManualResult>,
    #[serde(skip_serializing_if = "String::is_empty")]
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnnotatedReport {
    pub entries: Vec<AnnotatedVerdict>,
    pub tree: TraceTree,
    #[serde(skip)]
    pub warnings: Vec<String>,
}

/// Merges manual checks into the verdicts. For a URL annotated more than
/// once the last annotation wins; annotations for URLs without a verdict
/// are skipped. Both cases warn.
pub fn cmd_annotate(verdicts: &[BlockVerdict], annotations: &[ManualAnnotation]) -> AnnotatedReport {
    let mut warnings = Vec::new();
    let mut manual: BTreeMap<String, &ManualAnnotation> = BTreeMap::new();
    for a in annotations {
        if !verdicts.iter().any(|v| v.url == a.url) {
            warnings.push(format!("annotation for unknown url {} skipped", a.url));
            continue;
        }
        if let Some(prev) = manual.insert(a.url.clone(), a) {
            if prev.result != a.result {
                warnings.push(format!(
                    "conflicting annotations for {}: {:?} replaced by {:?}",
                    a.url, prev.result, a.result
                ));
            }
        }
    }
    for w in &warnings {
        warn!("{w}");
    }
    let results: BTreeMap<String, ManualResult> = manual.iter().map(|(u, a)| (u.clone(), a.result)).collect();
    let entries = verdicts
        .iter()
        .map(|v| AnnotatedVerdict {
            verdict: v.clone(),
            manual: results.get(&v.url).copied(),
            note: manual.get(&v.url).map(|a| a.note.clone()).unwrap_or_default(),
        })
        .collect();
    AnnotatedReport {
        entries,
        tree: TraceTree::build(verdicts, &results),
        warnings,
    }
}
