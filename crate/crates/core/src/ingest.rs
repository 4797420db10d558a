//! Merge incident-report tables, drop unusable rows, and flatten each report
//! into the four-column [`UnifiedRecord`].

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed table: {source}")]
    Malformed {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: header is missing required column {column:?}")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}: row {row} has an empty report id")]
    EmptyId { path: PathBuf, row: usize },
    #[error("invalid redaction marker {marker:?}: {source}")]
    BadMarker {
        marker: String,
        #[source]
        source: regex::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "ADS")]
    Ads,
    #[serde(rename = "ADAS")]
    Adas,
    Other,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Ads, Category::Adas, Category::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Ads => "ADS",
            Category::Adas => "ADAS",
            Category::Other => "Other",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ads" => Ok(Category::Ads),
            "adas" => Ok(Category::Adas),
            "other" | "others" => Ok(Category::Other),
            other => Err(format!("unknown category {other:?}")),
        }
    }
}

/// One source row before filtering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawReport {
    pub report_id: String,
    pub reporting_entity: String,
    pub make: String,
    pub model: String,
    /// Taken from which file the row came from, never from its text.
    pub category: Category,
    pub narrative: String,
    /// Every column other than id, entity, make and narrative, in source order.
    pub metadata: Vec<(String, String)>,
    /// Set when an earlier row (in file order) carried the same id.
    pub duplicate: bool,
}

/// The flattened record handed to the model.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UnifiedRecord {
    pub report_id: String,
    pub entity_make: String,
    pub full_text: String,
    pub category: Category,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DropReason {
    MissingNarrative,
    RedactedNarrative,
    DuplicateId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dropped {
    pub report_id: String,
    pub reason: DropReason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FilterOutcome {
    pub kept: Vec<UnifiedRecord>,
    pub dropped: Vec<Dropped>,
}

/// Header names of the columns the ingester needs by role. Matching is
/// case-insensitive after trimming.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub report_id: String,
    pub reporting_entity: String,
    pub make: String,
    pub model: String,
    pub narrative: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            report_id: "Report ID".into(),
            reporting_entity: "Reporting Entity".into(),
            make: "Make".into(),
            model: "Model".into(),
            narrative: "Narrative".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SourceFile {
    pub path: PathBuf,
    pub category: Category,
}

impl SourceFile {
    pub fn new(path: impl Into<PathBuf>, category: Category) -> Self {
        Self {
            path: path.into(),
            category,
        }
    }
}

/// Read every source file in order and mark repeated ids.
pub fn merge_sources(
    sources: &[SourceFile],
    columns: &ColumnMap,
) -> Result<Vec<RawReport>, IngestError> {
    let mut reports = Vec::new();
    for src in sources {
        let mut bytes = Vec::new();
        std::fs::File::open(&src.path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|source| IngestError::Unreadable {
                path: src.path.clone(),
                source,
            })?;
        reports.extend(parse_table(&bytes, &src.path, src.category, columns)?);
    }
    flag_duplicates(&mut reports);
    Ok(reports)
}

fn flag_duplicates(reports: &mut [RawReport]) {
    let mut seen = HashSet::new();
    for r in reports.iter_mut() {
        r.duplicate = !seen.insert(r.report_id.clone());
    }
}

/// Parse one delimited table. Invalid UTF-8 is replaced, not rejected.
pub fn parse_table(
    bytes: &[u8],
    path: &Path,
    category: Category,
    columns: &ColumnMap,
) -> Result<Vec<RawReport>, IngestError> {
    let bytes = bytes.strip_prefix(b"\xEF\xBB\xBF").unwrap_or(bytes);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(bytes);
    let malformed = |source| IngestError::Malformed {
        path: path.to_path_buf(),
        source,
    };
    let header: Vec<String> = reader
        .byte_headers()
        .map_err(malformed)?
        .iter()
        .map(|h| String::from_utf8_lossy(h).trim().to_string())
        .collect();

    let find = |name: &str| header.iter().position(|h| h.eq_ignore_ascii_case(name.trim()));
    let require = |name: &str| {
        find(name).ok_or_else(|| IngestError::MissingColumn {
            path: path.to_path_buf(),
            column: name.to_string(),
        })
    };
    let id_col = require(&columns.report_id)?;
    let narrative_col = require(&columns.narrative)?;
    let entity_col = find(&columns.reporting_entity);
    let make_col = find(&columns.make);
    let model_col = find(&columns.model);

    let mut out = Vec::new();
    for (row_idx, row) in reader.byte_records().enumerate() {
        let row = row.map_err(malformed)?;
        let field = |i: usize| {
            row.get(i)
                .map(|b| String::from_utf8_lossy(b).into_owned())
                .unwrap_or_default()
        };
        let report_id = field(id_col).trim().to_string();
        if report_id.is_empty() {
            return Err(IngestError::EmptyId {
                path: path.to_path_buf(),
                row: row_idx + 1,
            });
        }
        let opt = |c: Option<usize>| c.map(|i| field(i).trim().to_string()).unwrap_or_default();
        let metadata = header
            .iter()
            .enumerate()
            .filter(|(i, _)| {
                *i != id_col
                    && *i != narrative_col
                    && Some(*i) != entity_col
                    && Some(*i) != make_col
            })
            .map(|(i, name)| (name.clone(), field(i).trim().to_string()))
            .collect();
        out.push(RawReport {
            report_id,
            reporting_entity: opt(entity_col),
            make: opt(make_col),
            model: opt(model_col),
            category,
            narrative: field(narrative_col),
            metadata,
            duplicate: false,
        });
    }
    Ok(out)
}

/// Bracketed confidentiality phrases used by the public crash-report tables.
pub const DEFAULT_REDACTION_MARKERS: &[&str] = &[
    "[REDACTED, MAY CONTAIN CONFIDENTIAL BUSINESS INFORMATION]",
    "[MAY CONTAIN CONFIDENTIAL BUSINESS INFORMATION]",
    "[REDACTED, MAY CONTAIN PERSONALLY IDENTIFIABLE INFORMATION]",
    "[MAY CONTAIN PERSONALLY IDENTIFIABLE INFORMATION]",
    "[REDACTED]",
    "[XXX]",
];

/// Decides whether a narrative is nothing but redaction text.
///
/// A narrative is redacted when, after deleting every configured marker
/// (case-insensitive) and every bracketed span containing no lowercase
/// letters, no alphanumeric character remains.
#[derive(Debug, Clone)]
pub struct Redaction {
    markers: Vec<Regex>,
    bracketed: Regex,
}

impl Redaction {
    pub fn new<S: AsRef<str>>(markers: &[S]) -> Result<Self, IngestError> {
        let markers = markers
            .iter()
            .map(|m| {
                let m = m.as_ref();
                Regex::new(&format!("(?i){}", regex::escape(m))).map_err(|source| {
                    IngestError::BadMarker {
                        marker: m.to_string(),
                        source,
                    }
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            markers,
            bracketed: Regex::new(r"\[[^\]a-z]*\]").expect("static regex"),
        })
    }

    pub fn is_redacted(&self, narrative: &str) -> bool {
        let mut text = narrative.to_string();
        for m in &self.markers {
            text = m.replace_all(&text, " ").into_owned();
        }
        text = self.bracketed.replace_all(&text, " ").into_owned();
        !text.chars().any(char::is_alphanumeric)
    }
}

impl Default for Redaction {
    fn default() -> Self {
        Self::new(DEFAULT_REDACTION_MARKERS).expect("default markers are literal")
    }
}

fn drop_reason(report: &RawReport, redaction: &Redaction) -> Option<DropReason> {
    if report.duplicate {
        Some(DropReason::DuplicateId)
    } else if report.narrative.trim().is_empty() {
        Some(DropReason::MissingNarrative)
    } else if redaction.is_redacted(&report.narrative) {
        Some(DropReason::RedactedNarrative)
    } else {
        None
    }
}

/// Join reporting entity and make, skipping empty parts.
pub fn entity_make(entity: &str, make: &str) -> String {
    match (entity.is_empty(), make.is_empty()) {
        (false, false) => format!("{entity}/{make}"),
        (false, true) => entity.to_string(),
        (true, false) => make.to_string(),
        (true, true) => String::new(),
    }
}

/// `Field: value` metadata lines in source order, then the narrative under
/// a `Narrative:` header. Empty metadata values are omitted.
pub fn unify(report: &RawReport) -> UnifiedRecord {
    let mut full_text = String::new();
    for (name, value) in &report.metadata {
        if value.is_empty() {
            continue;
        }
        full_text.push_str(name);
        full_text.push_str(": ");
        full_text.push_str(value);
        full_text.push('\n');
    }
    full_text.push_str("Narrative:\n");
    full_text.push_str(&report.narrative);
    UnifiedRecord {
        report_id: report.report_id.clone(),
        entity_make: entity_make(&report.reporting_entity, &report.make),
        full_text,
        category: report.category,
    }
}

pub fn filter_and_unify(reports: &[RawReport], redaction: &Redaction) -> FilterOutcome {
    let mut outcome = FilterOutcome::default();
    for r in reports {
        match drop_reason(r, redaction) {
            Some(reason) => outcome.dropped.push(Dropped {
                report_id: r.report_id.clone(),
                reason,
            }),
            None => outcome.kept.push(unify(r)),
        }
    }
    outcome
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntityShare {
    pub entity_make: String,
    pub count: usize,
    pub percent: f64,
}

/// Cases per entity/make, most frequent first (ties by name).
pub fn entity_distribution(records: &[UnifiedRecord]) -> Vec<EntityShare> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in records {
        *counts.entry(r.entity_make.as_str()).or_default() += 1;
    }
    let total = records.len() as f64;
    let mut out: Vec<_> = counts
        .into_iter()
        .map(|(name, count)| EntityShare {
            entity_make: name.to_string(),
            count,
            percent: 100.0 * count as f64 / total,
        })
        .collect();
    out.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.entity_make.cmp(&b.entity_make)));
    out
}

/// Per-category counts before and after filtering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CategoryCounts {
    pub category: Category,
    pub original: usize,
    pub kept: usize,
}

pub fn category_summary(raw: &[RawReport], outcome: &FilterOutcome) -> Vec<CategoryCounts> {
    Category::ALL
        .into_iter()
        .map(|category| CategoryCounts {
            category,
            original: raw.iter().filter(|r| r.category == category).count(),
            kept: outcome.kept.iter().filter(|r| r.category == category).count(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(id: &str, narrative: &str) -> RawReport {
        RawReport {
            report_id: id.into(),
            reporting_entity: "Waymo LLC".into(),
            make: "Jaguar".into(),
            model: "I-Pace".into(),
            category: Category::Ads,
            narrative: narrative.into(),
            metadata: vec![
                ("Model".into(), "I-Pace".into()),
                ("City".into(), "Phoenix".into()),
                ("Weather".into(), String::new()),
            ],
            duplicate: false,
        }
    }

    #[test]
    fn unify_layout() {
        let u = unify(&raw("A1", "The AV was struck."));
        assert_eq!(
            u.full_text,
            "Model: I-Pace\nCity: Phoenix\nNarrative:\nThe AV was struck."
        );
        assert_eq!(u.entity_make, "Waymo LLC/Jaguar");
    }

    #[test]
    fn empty_narrative_is_missing() {
        let out = filter_and_unify(&[raw("A1", "")], &Redaction::default());
        assert!(out.kept.is_empty());
        assert_eq!(out.dropped[0].reason, DropReason::MissingNarrative);
    }

    #[test]
    fn redaction_detection() {
        let r = Redaction::default();
        assert!(r.is_redacted("[REDACTED, MAY CONTAIN CONFIDENTIAL BUSINESS INFORMATION]"));
        assert!(r.is_redacted("  [redacted, may contain confidential business information] "));
        assert!(r.is_redacted("[SOMETHING ELSE ENTIRELY]"));
        assert!(!r.is_redacted("AV stopped. [XXX] struck the rear bumper."));
        assert!(!r.is_redacted("[Waymo] vehicle proceeded"));
    }

    #[test]
    fn custom_marker() {
        let r = Redaction::new(&["withheld"]).unwrap();
        assert!(r.is_redacted("Withheld."));
        assert!(!r.is_redacted("Withheld by the operator until impact"));
    }

    #[test]
    fn header_missing_narrative_column() {
        let err = parse_table(
            b"Report ID,Make\n1,Jaguar\n",
            Path::new("ads.csv"),
            Category::Ads,
            &ColumnMap::default(),
        )
        .unwrap_err();
        assert!(matches!(err, IngestError::MissingColumn { ref column, .. } if column == "Narrative"));
        assert!(err.to_string().contains("Narrative"));
    }

    #[test]
    fn invalid_utf8_is_replaced() {
        let rows = parse_table(
            b"Report ID,Narrative\n1,caf\xe9 corner\n",
            Path::new("x.csv"),
            Category::Other,
            &ColumnMap::default(),
        )
        .unwrap();
        assert_eq!(rows[0].narrative, "caf\u{FFFD} corner");
    }

    #[test]
    fn entity_shares() {
        let rec = |e: &str| UnifiedRecord {
            report_id: e.into(),
            entity_make: e.into(),
            full_text: "x".into(),
            category: Category::Ads,
        };
        let d = entity_distribution(&[rec("A"), rec("B"), rec("A"), rec("A")]);
        assert_eq!(d[0].entity_make, "A");
        assert_eq!(d[0].count, 3);
        assert_eq!(d[0].percent, 75.0);
        assert_eq!(d[1].percent, 25.0);
        assert!(entity_distribution(&[]).is_empty());
    }
}
