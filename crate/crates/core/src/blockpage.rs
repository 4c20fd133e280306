//! Block-page fingerprinting.
//!
//! Rules come from a tab-separated file (`label<TAB>pattern<TAB>note`, `#`
//! comments). The first matching rule wins; no match means
//! [`BlockpageClass::NotBlockpage`].

use std::path::Path;

use regex::{Regex, RegexBuilder};
use thiserror::Error;

pub use crate::model::BlockpageClass;

/// Fingerprints shipped with the toolkit.
pub const STARTER_FINGERPRINTS: &str = include_str!("../data/fingerprints.tsv");

#[derive(Debug, Error)]
pub enum FingerprintError {
    #[error("fingerprint file i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("fingerprint line {line}: {message}")]
    Line { line: usize, message: String },
}

impl FingerprintError {
    pub fn line(&self) -> Option<usize> {
        match self {
            FingerprintError::Line { line, .. } => Some(*line),
            FingerprintError::Io(_) => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FingerprintRule {
    pub pattern: Regex,
    pub label: BlockpageClass,
    pub source_note: String,
}

/// Ordered rules; position is evaluation priority.
#[derive(Debug, Clone, Default)]
pub struct RuleSet {
    rules: Vec<FingerprintRule>,
}

impl RuleSet {
    pub fn new(rules: Vec<FingerprintRule>) -> Self {
        Self { rules }
    }

    pub fn starter() -> Self {
        parse_fingerprints(STARTER_FINGERPRINTS).expect("starter fingerprints are valid")
    }

    pub fn rules(&self) -> &[FingerprintRule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

pub fn load_fingerprints(path: &Path) -> Result<RuleSet, FingerprintError> {
    parse_fingerprints(&std::fs::read_to_string(path)?)
}

pub fn parse_fingerprints(text: &str) -> Result<RuleSet, FingerprintError> {
    let mut rules = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let bad = |message: String| FingerprintError::Line { line: lineno, message };
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let mut cols = line.splitn(3, '\t');
        let label = cols.next().unwrap_or_default().trim();
        let pattern = cols
            .next()
            .ok_or_else(|| bad("expected label<TAB>pattern[<TAB>note]".into()))?;
        let note = cols.next().unwrap_or_default().trim().to_string();

        let label: BlockpageClass = label.parse().map_err(bad)?;
        if matches!(label, BlockpageClass::NotBlockpage | BlockpageClass::NonHttpBlock) {
            return Err(bad(format!("{label} cannot be assigned from body text")));
        }
        let pattern = RegexBuilder::new(pattern)
            .case_insensitive(true)
            .build()
            .map_err(|e| bad(format!("bad pattern: {e}")))?;
        rules.push(FingerprintRule {
            pattern,
            label,
            source_note: note,
        });
    }
    Ok(RuleSet { rules })
}

/// Labels a received body. The status code does not gate matching: a 200 page
/// that matches a rule is still a block page.
pub fn classify_body(body: &str, _http_status: u16, rules: &RuleSet) -> BlockpageClass {
    rules
        .rules
        .iter()
        .find(|r| r.pattern.is_match(body))
        .map_or(BlockpageClass::NotBlockpage, |r| r.label)
}

/// Lossy-decodes raw body bytes and classifies them.
pub fn classify_bytes(body: &[u8], http_status: u16, rules: &RuleSet) -> BlockpageClass {
    classify_body(&String::from_utf8_lossy(body), http_status, rules)
}
