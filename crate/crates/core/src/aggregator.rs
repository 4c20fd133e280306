//! Regional aggregation and short-listing.
//!
//! The control region is aggregated with minimum availability (a URL must be
//! available in every observation) and the test region with maximum
//! availability (a URL must be unavailable in every observation), and test-side
//! failures must all share one status class.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BlockpageClass, FetchOutcome, StatusClass};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AggregateError {
    #[error("no observations for url {0:?}")]
    Empty(String),
    #[error("records for {expected:?} include url {found:?}")]
    MixedUrls { expected: String, found: String },
    #[error("availability missing for region {region:?} of url {url:?}")]
    MissingRegion { url: String, region: String },
}

/// Available means a 2xx response that is not a block page.
pub fn availability_of(outcome: &FetchOutcome) -> bool {
    outcome.status_class == StatusClass::Ok2xx && outcome.blockpage.is_none_or(|b| b == BlockpageClass::NotBlockpage)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VerdictKind {
    AlwaysAvailable,
    AlwaysUnavailableConsistent,
    AlwaysUnavailableMixed,
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionVerdict {
    pub url: String,
    pub region_label: String,
    pub kind: VerdictKind,
    /// Set only for `AlwaysUnavailableConsistent`.
    pub failure_class: Option<StatusClass>,
    pub majority_class: StatusClass,
}

/// Most frequent class; ties go to the class declared first.
pub fn majority_class<I: IntoIterator<Item = StatusClass>>(classes: I) -> Option<StatusClass> {
    let mut counts = [0usize; StatusClass::ALL.len()];
    let mut any = false;
    for class in classes {
        counts[class as usize] += 1;
        any = true;
    }
    if !any {
        return None;
    }
    let best = counts.iter().copied().max().unwrap_or(0);
    StatusClass::ALL.into_iter().find(|c| counts[*c as usize] == best)
}

/// Aggregates one URL's observations within one region.
pub fn aggregate_region(region_label: &str, records: &[&FetchOutcome]) -> Result<RegionVerdict, AggregateError> {
    let first = records.first().ok_or_else(|| AggregateError::Empty(String::new()))?;
    let url = first.url.raw();
    if let Some(other) = records.iter().find(|r| r.url.raw() != url) {
        return Err(AggregateError::MixedUrls {
            expected: url.to_string(),
            found: other.url.raw().to_string(),
        });
    }
    let available = records.iter().filter(|r| availability_of(r)).count();
    let majority = majority_class(records.iter().map(|r| r.status_class)).expect("non-empty");
    let (kind, failure_class) = if available == records.len() {
        (VerdictKind::AlwaysAvailable, None)
    } else if available > 0 {
        (VerdictKind::Mixed, None)
    } else if records.iter().all(|r| r.status_class == first.status_class) {
        (VerdictKind::AlwaysUnavailableConsistent, Some(first.status_class))
    } else {
        (VerdictKind::AlwaysUnavailableMixed, None)
    };
    Ok(RegionVerdict {
        url: url.to_string(),
        region_label: region_label.to_string(),
        kind,
        failure_class,
        majority_class: majority,
    })
}

/// Aggregates a whole region log, one verdict per URL.
///
/// Every URL is expected to have an observation for each (vantage, run) pair
/// seen anywhere in the log; a URL with gaps is declared `Mixed`.
pub fn aggregate_log(region_label: &str, records: &[FetchOutcome]) -> BTreeMap<String, RegionVerdict> {
    let expected: HashSet<(&str, u32)> = records.iter().map(|r| (r.vantage_id.as_str(), r.run_index)).collect();
    let mut by_url: BTreeMap<&str, Vec<&FetchOutcome>> = BTreeMap::new();
    for r in records {
        by_url.entry(r.url.raw()).or_default().push(r);
    }
    by_url
        .into_iter()
        .map(|(url, rs)| {
            let mut verdict = aggregate_region(region_label, &rs).expect("grouped by url, non-empty");
            let covered: HashSet<(&str, u32)> = rs.iter().map(|r| (r.vantage_id.as_str(), r.run_index)).collect();
            if covered.len() < expected.len() {
                verdict.kind = VerdictKind::Mixed;
                verdict.failure_class = None;
            }
            (url.to_string(), verdict)
        })
        .collect()
}

/// Region-level availability for listing inference: available if any observation was.
pub fn region_availability(records: &[FetchOutcome]) -> BTreeMap<String, bool> {
    let mut out: BTreeMap<String, bool> = BTreeMap::new();
    for r in records {
        *out.entry(r.url.raw().to_string()).or_default() |= availability_of(r);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ListingSignal {
    Whitelisting,
    Blacklisting,
    Ambiguous,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShortlistEntry {
    pub url: String,
    pub control_region: String,
    pub test_region: String,
    pub failure_class: StatusClass,
    pub listing: Option<ListingSignal>,
}

/// URLs always available in the control region and always unavailable, in a
/// single failure mode, in the test region. Sorted by URL.
pub fn shortlist(
    control: &BTreeMap<String, RegionVerdict>,
    test: &BTreeMap<String, RegionVerdict>,
) -> Vec<ShortlistEntry> {
    control
        .iter()
        .filter(|(_, c)| c.kind == VerdictKind::AlwaysAvailable)
        .filter_map(|(url, c)| {
            let t = test.get(url)?;
            let failure_class = match (t.kind, t.failure_class) {
                (VerdictKind::AlwaysUnavailableConsistent, Some(class)) => class,
                _ => return None,
            };
            Some(ShortlistEntry {
                url: url.clone(),
                control_region: c.region_label.clone(),
                test_region: t.region_label.clone(),
                failure_class,
                listing: None,
            })
        })
        .collect()
}

/// Whitelisting when only the home region could load the URL; blacklisting
/// when the home region and every probe region could. With no probe regions
/// there is no evidence either way.
pub fn infer_listing(
    url: &str,
    availability_by_region: &BTreeMap<String, bool>,
    home_region: &str,
    probe_regions: &BTreeSet<String>,
) -> Result<ListingSignal, AggregateError> {
    let lookup = |region: &str| {
        availability_by_region
            .get(region)
            .copied()
            .ok_or_else(|| AggregateError::MissingRegion {
                url: url.to_string(),
                region: region.to_string(),
            })
    };
    let home = lookup(home_region)?;
    let probes = probe_regions
        .iter()
        .map(|r| lookup(r))
        .collect::<Result<Vec<bool>, _>>()?;
    if !home || probes.is_empty() {
        return Ok(ListingSignal::Ambiguous);
    }
    let elsewhere = availability_by_region
        .iter()
        .any(|(region, available)| region != home_region && *available);
    if !elsewhere {
        Ok(ListingSignal::Whitelisting)
    } else if probes.iter().all(|a| *a) {
        Ok(ListingSignal::Blacklisting)
    } else {
        Ok(ListingSignal::Ambiguous)
    }
}

/// Short-listing funnel counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Funnel {
    pub total: usize,
    pub always_available: usize,
    pub always_unavailable: usize,
    pub same_problem: usize,
    pub shortlisted: usize,
}

impl Funnel {
    pub fn compute(
        control: &BTreeMap<String, RegionVerdict>,
        test: &BTreeMap<String, RegionVerdict>,
        shortlisted: usize,
    ) -> Self {
        let universe: BTreeSet<&String> = control.keys().filter(|k| test.contains_key(*k)).collect();
        let count = |map: &BTreeMap<String, RegionVerdict>, kinds: &[VerdictKind]| {
            universe.iter().filter(|u| kinds.contains(&map[**u].kind)).count()
        };
        Self {
            total: universe.len(),
            always_available: count(control, &[VerdictKind::AlwaysAvailable]),
            always_unavailable: count(
                test,
                &[
                    VerdictKind::AlwaysUnavailableConsistent,
                    VerdictKind::AlwaysUnavailableMixed,
                ],
            ),
            same_problem: count(test, &[VerdictKind::AlwaysUnavailableConsistent]),
            shortlisted,
        }
    }

    /// Block in the layout of the short-listing figure.
    pub fn render(&self, control: &str, test: &str) -> String {
        format!(
            "total URLs:                 {}\n\
             {control} always available:     {}\n\
             {test} always unavailable:   {}\n\
             {test} always same problem:  {}\n\
             short-listed:               {}\n",
            self.total, self.always_available, self.always_unavailable, self.same_problem, self.shortlisted
        )
    }
}

#[derive(Serialize, Deserialize)]
struct ShortlistRow {
    url: String,
    control_region: String,
    test_region: String,
    failure_class: StatusClass,
    listing: Option<ListingSignal>,
}

#[derive(Debug, Error)]
pub enum ShortlistCsvError {
    #[error("shortlist csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("shortlist csv: {0}")]
    Io(#[from] io::Error),
}

pub fn write_shortlist_csv<W: io::Write>(out: W, entries: &[ShortlistEntry]) -> Result<(), ShortlistCsvError> {
    let mut writer = csv::Writer::from_writer(out);
    if entries.is_empty() {
        writer.write_record(["url", "control_region", "test_region", "failure_class", "listing"])?;
    }
    for e in entries {
        writer.serialize(ShortlistRow {
            url: e.url.clone(),
            control_region: e.control_region.clone(),
            test_region: e.test_region.clone(),
            failure_class: e.failure_class,
            listing: e.listing,
        })?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_shortlist_csv<R: io::Read>(input: R) -> Result<Vec<ShortlistEntry>, ShortlistCsvError> {
    let mut reader = csv::Reader::from_reader(input);
    reader
        .deserialize::<ShortlistRow>()
        .map(|row| {
            let row = row?;
            Ok(ShortlistEntry {
                url: row.url,
                control_region: row.control_region,
                test_region: row.test_region,
                failure_class: row.failure_class,
                listing: row.listing,
            })
        })
        .collect()
}

/// URLs present on only one side.
pub fn symmetric_difference(
    control: &BTreeMap<String, RegionVerdict>,
    test: &BTreeMap<String, RegionVerdict>,
) -> Vec<String> {
    let a: BTreeSet<&String> = control.keys().collect();
    let b: BTreeSet<&String> = test.keys().collect();
    a.symmetric_difference(&b).map(|s| s.to_string()).collect()
}

/// Groups records by region label using a vantage-id to region map.
pub fn split_by_region<'a>(
    records: impl IntoIterator<Item = &'a FetchOutcome>,
    region_of: &HashMap<String, String>,
) -> BTreeMap<String, Vec<FetchOutcome>> {
    let mut out: BTreeMap<String, Vec<FetchOutcome>> = BTreeMap::new();
    for r in records {
        let region = region_of
            .get(&r.vantage_id)
            .cloned()
            .unwrap_or_else(|| r.vantage_id.clone());
        out.entry(region).or_default().push(r.clone());
    }
    out
}
