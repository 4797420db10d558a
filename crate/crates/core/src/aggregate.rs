//! Corpus-level counts over classified incidents, and plot-ready tables.
//!
//! Percentages are displayed to one decimal by truncation toward zero,
//! computed in integer arithmetic so the printed figure never depends on
//! float rounding.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use regex::{Regex, RegexBuilder};
use serde::Serialize;
use thiserror::Error;

use crate::ingest::UnifiedRecord;
use crate::taxonomy::{AvFailed, Cause, ClassificationRecord, FailedSystem};

pub const DEFAULT_REAR_END_PATTERNS: &str = include_str!("../assets/rear_end_patterns.txt");

#[derive(Debug, Error)]
pub enum AggregateError {
    #[error("no rear-end flag for reports {0:?}")]
    MissingFlags(Vec<String>),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("pattern line {line}: {message}")]
    Pattern { line: usize, message: String },
}

/// `count / total` as a percentage with one decimal, truncated.
pub fn display_percent(count: usize, total: usize) -> String {
    if total == 0 {
        return "0.0".into();
    }
    let tenths = (count as u128 * 1000) / total as u128;
    format!("{}.{}", tenths / 10, tenths % 10)
}

/// One region of the late / AV-failed / rear-end diagram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct VennRegion {
    pub late: bool,
    pub av_failed: bool,
    pub rear_end: bool,
}

impl VennRegion {
    pub fn all() -> Vec<VennRegion> {
        let mut out = Vec::with_capacity(8);
        for late in [true, false] {
            for av_failed in [true, false] {
                for rear_end in [true, false] {
                    out.push(VennRegion {
                        late,
                        av_failed,
                        rear_end,
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AggregateStats {
    pub total: usize,
    pub cause_counts: BTreeMap<Cause, usize>,
    pub system_counts: BTreeMap<FailedSystem, usize>,
    pub late_count: usize,
    pub late_and_system_failure_count: usize,
    pub av_failed_count: usize,
    pub rear_end_count: usize,
    pub rear_end_and_late_count: usize,
    pub venn: BTreeMap<VennRegion, usize>,
    /// Which rear-end rule fired, for judging sensitivity to the pattern set.
    pub rear_end_patterns: BTreeMap<String, usize>,
}

impl Default for AggregateStats {
    fn default() -> Self {
        Self {
            total: 0,
            cause_counts: Cause::ALL.into_iter().map(|c| (c, 0)).collect(),
            system_counts: FailedSystem::ALL.into_iter().map(|s| (s, 0)).collect(),
            late_count: 0,
            late_and_system_failure_count: 0,
            av_failed_count: 0,
            rear_end_count: 0,
            rear_end_and_late_count: 0,
            venn: VennRegion::all().into_iter().map(|r| (r, 0)).collect(),
            rear_end_patterns: BTreeMap::new(),
        }
    }
}

impl AggregateStats {
    pub fn system_failure_count(&self) -> usize {
        self.cause_counts[&Cause::S]
    }

    fn fraction(n: usize, d: usize) -> f64 {
        if d == 0 {
            0.0
        } else {
            n as f64 / d as f64
        }
    }

    pub fn cause_fraction(&self, cause: Cause) -> f64 {
        Self::fraction(self.cause_counts[&cause], self.total)
    }

    pub fn late_rate(&self) -> f64 {
        Self::fraction(self.late_count, self.total)
    }

    /// Share of system-caused incidents that also show a late AI response.
    pub fn late_given_system_failure(&self) -> f64 {
        Self::fraction(self.late_and_system_failure_count, self.system_failure_count())
    }

    pub fn rear_end_rate(&self) -> f64 {
        Self::fraction(self.rear_end_count, self.total)
    }

    pub fn rear_end_and_late_rate(&self) -> f64 {
        Self::fraction(self.rear_end_and_late_count, self.total)
    }

    fn add(&mut self, record: &ClassificationRecord, rear_end: bool) {
        let l = &record.labels;
        let late = l.late_ai;
        let failed = l.av_failed == AvFailed::Y;
        self.total += 1;
        *self.cause_counts.get_mut(&l.primary_cause).expect("all causes") += 1;
        *self.system_counts.get_mut(&l.failed_system).expect("all systems") += 1;
        self.late_count += late as usize;
        self.late_and_system_failure_count += (late && l.primary_cause == Cause::S) as usize;
        self.av_failed_count += failed as usize;
        self.rear_end_count += rear_end as usize;
        self.rear_end_and_late_count += (rear_end && late) as usize;
        *self
            .venn
            .get_mut(&VennRegion {
                late,
                av_failed: failed,
                rear_end,
            })
            .expect("all regions") += 1;
    }

    /// Combine counts from two disjoint shards.
    pub fn merge(mut self, other: &AggregateStats) -> AggregateStats {
        self.total += other.total;
        for (k, v) in &other.cause_counts {
            *self.cause_counts.entry(*k).or_default() += v;
        }
        for (k, v) in &other.system_counts {
            *self.system_counts.entry(*k).or_default() += v;
        }
        self.late_count += other.late_count;
        self.late_and_system_failure_count += other.late_and_system_failure_count;
        self.av_failed_count += other.av_failed_count;
        self.rear_end_count += other.rear_end_count;
        self.rear_end_and_late_count += other.rear_end_and_late_count;
        for (k, v) in &other.venn {
            *self.venn.entry(*k).or_default() += v;
        }
        for (k, v) in &other.rear_end_patterns {
            *self.rear_end_patterns.entry(k.clone()).or_default() += v;
        }
        self
    }

    pub fn summary(&self) -> String {
        let t = self.total;
        let mut s = String::new();
        s.push_str(&format!("Incidents: {t}\n"));
        s.push_str("Primary cause:\n");
        for (c, n) in &self.cause_counts {
            s.push_str(&format!(
                "  {} ({}): {} ({}%)\n",
                c.label(),
                c.code(),
                n,
                display_percent(*n, t)
            ));
        }
        s.push_str("Failed system:\n");
        for (sys, n) in &self.system_counts {
            s.push_str(&format!("  {} ({}): {}\n", sys.label(), sys.code(), n));
        }
        s.push_str(&format!(
            "Late AI response: {} ({}%)\n",
            self.late_count,
            display_percent(self.late_count, t)
        ));
        s.push_str(&format!(
            "Late AI among system failures: {} of {} ({}%)\n",
            self.late_and_system_failure_count,
            self.system_failure_count(),
            display_percent(self.late_and_system_failure_count, self.system_failure_count())
        ));
        s.push_str(&format!(
            "AV failed: {} ({}%)\n",
            self.av_failed_count,
            display_percent(self.av_failed_count, t)
        ));
        s.push_str(&format!(
            "Rear-end collisions: {} ({}%)\n",
            self.rear_end_count,
            display_percent(self.rear_end_count, t)
        ));
        s.push_str(&format!(
            "Rear-end with late AI response: {} ({}%)\n",
            self.rear_end_and_late_count,
            display_percent(self.rear_end_and_late_count, t)
        ));
        if !self.rear_end_patterns.is_empty() {
            s.push_str("Rear-end rule matches:\n");
            for (p, n) in &self.rear_end_patterns {
                s.push_str(&format!("  {p}: {n}\n"));
            }
        }
        s
    }
}

pub fn compute_stats(
    records: &[ClassificationRecord],
    rear_end_flags: &HashMap<String, bool>,
) -> Result<AggregateStats, AggregateError> {
    let missing: Vec<String> = records
        .iter()
        .filter(|r| !rear_end_flags.contains_key(&r.report_id))
        .map(|r| r.report_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(AggregateError::MissingFlags(missing));
    }
    let mut stats = AggregateStats::default();
    for r in records {
        stats.add(r, rear_end_flags[&r.report_id]);
    }
    Ok(stats)
}

#[derive(Debug, Clone)]
enum RearEndRule {
    Phrase { label: String, regex: Regex },
    Field { name: String, value: String },
}

/// Configurable rear-end collision detector over a record's full text.
#[derive(Debug, Clone)]
pub struct RearEndDetector {
    rules: Vec<RearEndRule>,
}

impl RearEndDetector {
    /// `phrase<TAB>text` or `field<TAB>name<TAB>value` per line; `#`
    /// comments and blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self, AggregateError> {
        let mut rules = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let err = |message: String| AggregateError::Pattern {
                line: idx + 1,
                message,
            };
            let cols: Vec<&str> = line.split('\t').collect();
            match cols[..] {
                ["phrase", phrase] if !phrase.trim().is_empty() => {
                    let regex = RegexBuilder::new(&regex::escape(phrase.trim()))
                        .case_insensitive(true)
                        .build()
                        .map_err(|e| err(e.to_string()))?;
                    rules.push(RearEndRule::Phrase {
                        label: phrase.trim().to_string(),
                        regex,
                    });
                }
                ["field", name, value] => rules.push(RearEndRule::Field {
                    name: name.trim().to_string(),
                    value: value.trim().to_string(),
                }),
                _ => return Err(err(format!("unrecognised rule {line:?}"))),
            }
        }
        Ok(Self { rules })
    }

    pub fn load(path: &Path) -> Result<Self, AggregateError> {
        let text = fs::read_to_string(path).map_err(|e| AggregateError::Pattern {
            line: 0,
            message: format!("{}: {e}", path.display()),
        })?;
        Self::parse(&text)
    }

    /// Label of the first rule that fires, if any.
    pub fn matching_rule(&self, record: &UnifiedRecord) -> Option<String> {
        let metadata: Vec<(&str, &str)> = record
            .full_text
            .lines()
            .take_while(|l| *l != "Narrative:")
            .filter_map(|l| l.split_once(": "))
            .collect();
        self.rules.iter().find_map(|rule| match rule {
            RearEndRule::Phrase { label, regex } => {
                regex.is_match(&record.full_text).then(|| label.clone())
            }
            RearEndRule::Field { name, value } => metadata
                .iter()
                .any(|(k, v)| k.trim().eq_ignore_ascii_case(name) && v.trim().eq_ignore_ascii_case(value))
                .then(|| format!("{name}={value}")),
        })
    }
}

impl Default for RearEndDetector {
    fn default() -> Self {
        Self::parse(DEFAULT_REAR_END_PATTERNS).expect("shipped patterns are valid")
    }
}

pub fn detect_rear_end(record: &UnifiedRecord, detector: &RearEndDetector) -> bool {
    detector.matching_rule(record).is_some()
}

/// Flags for every record plus a histogram of the rule that fired.
pub fn rear_end_flags(
    records: &[UnifiedRecord],
    detector: &RearEndDetector,
) -> (HashMap<String, bool>, BTreeMap<String, usize>) {
    let mut flags = HashMap::new();
    let mut histogram = BTreeMap::new();
    for r in records {
        let hit = detector.matching_rule(r);
        if let Some(label) = &hit {
            *histogram.entry(label.clone()).or_default() += 1;
        }
        flags.insert(r.report_id.clone(), hit.is_some());
    }
    (flags, histogram)
}

fn write_file(path: PathBuf, content: &str) -> Result<PathBuf, AggregateError> {
    fs::write(&path, content).map_err(|source| AggregateError::Write {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

pub fn causes_table(stats: &AggregateStats) -> String {
    let mut s = String::from("group,code,label,count,percent\n");
    if stats.total == 0 {
        return s;
    }
    for (c, n) in &stats.cause_counts {
        s.push_str(&format!(
            "cause,{},{},{},{}\n",
            c.code(),
            c.label(),
            n,
            display_percent(*n, stats.total)
        ));
    }
    for (sys, n) in &stats.system_counts {
        s.push_str(&format!(
            "system,{},{},{},{}\n",
            sys.code(),
            sys.label(),
            n,
            display_percent(*n, stats.total)
        ));
    }
    s
}

pub fn venn_table(stats: &AggregateStats) -> String {
    let mut s = String::from("late,av_failed,rear_end,count,percent\n");
    if stats.total == 0 {
        return s;
    }
    for region in VennRegion::all() {
        let n = stats.venn[&region];
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            region.late,
            region.av_failed,
            region.rear_end,
            n,
            display_percent(n, stats.total)
        ));
    }
    s
}

/// Writes `causes.csv`, `venn.csv` and `summary.txt` into `out_dir`.
pub fn emit_report(stats: &AggregateStats, out_dir: &Path) -> Result<Vec<PathBuf>, AggregateError> {
    fs::create_dir_all(out_dir).map_err(|source| AggregateError::Write {
        path: out_dir.to_path_buf(),
        source,
    })?;
    Ok(vec![
        write_file(out_dir.join("causes.csv"), &causes_table(stats))?,
        write_file(out_dir.join("venn.csv"), &venn_table(stats))?,
        write_file(out_dir.join("summary.txt"), &stats.summary())?,
    ])
}
