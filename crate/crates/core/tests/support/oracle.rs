//! Reference evaluators written from the rules alone, without calling the
//! code under test.

use std::collections::BTreeMap;

use geoblock_core::netsim::{Intercept, MiddleboxAction, ServerBehavior, SimTopology};
use geoblock_core::traceroute::{BlockKind, VerdictReason};
use geoblock_core::{BlockpageClass, FetchOutcome, StatusClass};

/// Expected verdict for an enumerated topology (all hops responsive, server
/// answering 403, middlebox answering SYNs and injecting a page).
///
/// Lengths are derived by hand: the echo path reaches the server at depth
/// d; a SYN or GET meets an intercepting middlebox at m and otherwise the
/// server at d. A spoofed reply is visible only when the middlebox also
/// reveals itself to ICMP at the same hop.
pub fn expected_reason(topology: &SimTopology, threshold: u32) -> VerdictReason {
    assert_eq!(topology.server_behavior, ServerBehavior::Serve403);
    assert!(topology.icmp_responsive.iter().all(|r| *r));
    let d = topology.hop_addresses.len() as i64;
    let (tcp_len, http_len, tcp_spoof, http_spoof) = match &topology.middlebox {
        None => (d, d, false, false),
        Some(mb) => {
            assert_eq!(mb.action, MiddleboxAction::SynAckThenBlockpage);
            let m = mb.position as i64;
            let on_tcp = mb.intercepts.contains(&Intercept::Tcp);
            let on_http = on_tcp || mb.intercepts.contains(&Intercept::Http);
            let visible = mb.spoof_destination_address && mb.reveals_own_icmp;
            (
                if on_tcp { m } else { d },
                if on_http { m } else { d },
                on_tcp && visible,
                on_http && visible,
            )
        }
    };
    let t = i64::from(threshold);
    // rule 1 (path length) before rule 2 (spoof), TCP before HTTP
    if d - tcp_len > t {
        VerdictReason::ShortPath
    } else if tcp_spoof {
        VerdictReason::SpoofedResponse
    } else if d - http_len > t {
        VerdictReason::ShortPath
    } else if http_spoof {
        VerdictReason::SpoofedResponse
    } else {
        VerdictReason::EqualPaths
    }
}

pub fn expected_kind(reason: VerdictReason) -> BlockKind {
    match reason {
        VerdictReason::EqualPaths => BlockKind::ServerSide,
        VerdictReason::ShortPath | VerdictReason::SpoofedResponse => BlockKind::MiddleboxSuspected,
        _ => BlockKind::Inconclusive,
    }
}

/// Number of enumerated topologies for depths 1..=max_depth, by direct
/// counting of the documented cross product.
pub fn enumeration_count(max_depth: usize) -> usize {
    let mut n = 0;
    for d in 1..=max_depth {
        n += 1; // no middlebox
        for _m in 1..d {
            n += 2 * 2 * 3; // spoof x reveal x intercept set
        }
    }
    n
}

pub fn is_available(r: &FetchOutcome) -> bool {
    r.status_class == StatusClass::Ok2xx && matches!(r.blockpage, None | Some(BlockpageClass::NotBlockpage))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    AlwaysAvailable,
    AlwaysUnavailableConsistent(StatusClass),
    AlwaysUnavailableMixed,
    Mixed,
}

fn declared_position(c: StatusClass) -> usize {
    StatusClass::ALL.iter().position(|x| *x == c).unwrap()
}

/// Brute-force majority: highest count, ties to the earliest declared class.
pub fn majority(records: &[&FetchOutcome]) -> StatusClass {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for r in records {
        *counts.entry(declared_position(r.status_class)).or_default() += 1;
    }
    let best = *counts.values().max().unwrap();
    let pos = *counts.iter().find(|(_, n)| **n == best).unwrap().0;
    StatusClass::ALL[pos]
}

pub fn categorize(records: &[&FetchOutcome]) -> Category {
    let available: Vec<bool> = records.iter().map(|r| is_available(r)).collect();
    if available.iter().all(|a| *a) {
        return Category::AlwaysAvailable;
    }
    if available.iter().any(|a| *a) {
        return Category::Mixed;
    }
    let first = records[0].status_class;
    if records.iter().all(|r| r.status_class == first) {
        Category::AlwaysUnavailableConsistent(first)
    } else {
        Category::AlwaysUnavailableMixed
    }
}
