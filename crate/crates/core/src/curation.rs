//! Normalization of multiple-choice answers to canonical option strings.
//!
//! Only VLM answers to the multiple-choice block are rewritten. Human and
//! open-text answers pass through unchanged with status `kept`.

use std::collections::{BTreeMap, HashMap};
use std::sync::LazyLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::model::{AnswerFormat, ResponseRecord, ResponseStatus, RunManifest, SystemKind};

/// Version tag of the extraction rule set, recorded with every curation run.
pub const RULES_VERSION: &str = "curation-rules/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum YesNo {
    Yes,
    No,
    NotRecognized,
}

impl YesNo {
    pub fn as_option(self) -> Option<&'static str> {
        match self {
            YesNo::Yes => Some("Yes"),
            YesNo::No => Some("No"),
            YesNo::NotRecognized => None,
        }
    }
}

static DECORATION: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"(?i)\b(?:options?|answers?|response)\s*(?:\d+\s*)?:|\bq\d{1,2}\s*[:.)]|[\[\]\(\)\{\}"'`‘’“”*]"#)
        .unwrap()
});
static YES_NO_TOKEN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\b(yes|no)\b").unwrap());

fn strip_decoration(text: &str) -> String {
    DECORATION.replace_all(text, " ").into_owned()
}

/// Detects a single Yes/No token after removing answer decoration.
pub fn normalize_yes_no(text: &str) -> YesNo {
    let cleaned = strip_decoration(text);
    let mut yes = false;
    let mut no = false;
    for m in YES_NO_TOKEN.find_iter(&cleaned) {
        if m.as_str().eq_ignore_ascii_case("yes") {
            yes = true;
        } else {
            no = true;
        }
    }
    match (yes, no) {
        (true, false) => YesNo::Yes,
        (false, true) => YesNo::No,
        _ => YesNo::NotRecognized,
    }
}

/// Closed integer interval; `hi = None` is unbounded above.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Interval {
    pub lo: u64,
    pub hi: Option<u64>,
}

impl Interval {
    fn point(v: u64) -> Self {
        Interval { lo: v, hi: Some(v) }
    }

    fn range(a: u64, b: u64) -> Self {
        Interval {
            lo: a.min(b),
            hi: Some(a.max(b)),
        }
    }

    fn at_least(v: u64) -> Self {
        Interval { lo: v, hi: None }
    }

    pub fn contains(&self, other: &Interval) -> bool {
        if other.lo < self.lo {
            return false;
        }
        match (self.hi, other.hi) {
            (None, _) => true,
            (Some(_), None) => false,
            (Some(h), Some(oh)) => oh <= h,
        }
    }

    /// Parses an option label such as `"7"`, `"2-3"` or `"21+"`.
    pub fn parse_option(label: &str) -> Option<Interval> {
        let l = label.trim();
        if let Some(base) = l.strip_suffix('+') {
            return base.trim().parse().ok().map(Interval::at_least);
        }
        if let Some((a, b)) = l.split_once('-') {
            let (a, b) = (a.trim().parse().ok()?, b.trim().parse().ok()?);
            return (a <= b).then_some(Interval { lo: a, hi: Some(b) });
        }
        l.parse().ok().map(Interval::point)
    }
}

// Alternation order is priority order: qualified bounds, ranges, "+" suffix, bare integers.
static NUMERIC: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?ix)
        \b(?P<gt>more\s+than|greater\s+than|over|above)\s*(?P<gt_n>\d+)
        | \b(?P<ge>at\s+least|minimum\s+of)\s*(?P<ge_n>\d+)
        | \b(?P<lt>less\s+than|fewer\s+than|under|below)\s*(?P<lt_n>\d+)
        | \b(?P<le>up\s+to|at\s+most|maximum\s+of)\s*(?P<le_n>\d+)
        | (?P<ormore_n>\d+)\s*(?:or\s+more|or\s+above|or\s+greater|\+|plus)
        | (?P<orless_n>\d+)\s*(?:or\s+less|or\s+fewer|or\s+below)
        | (?P<ra>\d+)\s*(?:-|–|—|to)\s*(?P<rb>\d+)
        | (?P<n>\d+)
        ",
    )
    .unwrap()
});

/// All numeric values or ranges mentioned in `text`, in order of appearance.
pub fn extract_numeric(text: &str) -> Vec<Interval> {
    let cleaned = strip_decoration(text);
    let num =
        |c: &regex::Captures, name: &str| c.name(name).and_then(|m| m.as_str().parse::<u64>().ok());
    NUMERIC
        .captures_iter(&cleaned)
        .filter_map(|c| {
            if let Some(n) = num(&c, "gt_n") {
                Some(Interval::at_least(n + 1))
            } else if let Some(n) = num(&c, "ge_n") {
                Some(Interval::at_least(n))
            } else if let Some(n) = num(&c, "lt_n") {
                Some(Interval::range(0, n.saturating_sub(1)))
            } else if let Some(n) = num(&c, "le_n") {
                Some(Interval::range(0, n))
            } else if let Some(n) = num(&c, "ormore_n") {
                Some(Interval::at_least(n))
            } else if let Some(n) = num(&c, "orless_n") {
                Some(Interval::range(0, n))
            } else if let (Some(a), Some(b)) = (num(&c, "ra"), num(&c, "rb")) {
                Some(Interval::range(a, b))
            } else {
                num(&c, "n").map(Interval::point)
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntervalMatch {
    Option(String),
    Ignored,
}

/// Maps a free-text answer onto the unique option whose interval fully
/// contains the value or range mentioned in the text.
pub fn match_interval(text: &str, options: &[String]) -> IntervalMatch {
    if let Some(exact) = options.iter().find(|o| o.as_str() == text.trim()) {
        return IntervalMatch::Option(exact.clone());
    }
    let mut found = extract_numeric(text);
    found.dedup();
    let first = match found.as_slice() {
        [one] => *one,
        [first, rest @ ..] if rest.iter().all(|r| r == first) => *first,
        _ => return IntervalMatch::Ignored,
    };
    let mut hits = options
        .iter()
        .filter(|o| Interval::parse_option(o).is_some_and(|iv| iv.contains(&first)));
    match (hits.next(), hits.next()) {
        (Some(o), None) => IntervalMatch::Option(o.clone()),
        _ => IntervalMatch::Ignored,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemCurationStats {
    pub modifications: u64,
    pub ignored: u64,
    pub total: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurationStats {
    pub rules_version: String,
    pub per_system: BTreeMap<String, SystemCurationStats>,
}

impl CurationStats {
    pub fn totals(&self) -> SystemCurationStats {
        self.per_system
            .values()
            .fold(SystemCurationStats::default(), |acc, s| {
                SystemCurationStats {
                    modifications: acc.modifications + s.modifications,
                    ignored: acc.ignored + s.ignored,
                    total: acc.total + s.total,
                }
            })
    }

    /// Totals over VLM systems only, the population curation applies to.
    pub fn vlm_totals(&self, manifest: &RunManifest) -> SystemCurationStats {
        let kinds = manifest.system_kinds();
        self.per_system
            .iter()
            .filter(|(id, _)| kinds.get(*id) == Some(&SystemKind::Vlm))
            .fold(SystemCurationStats::default(), |acc, (_, s)| {
                SystemCurationStats {
                    modifications: acc.modifications + s.modifications,
                    ignored: acc.ignored + s.ignored,
                    total: acc.total + s.total,
                }
            })
    }
}

/// Canonical option for a multiple-choice answer, or `None` when the answer
/// cannot be matched strictly.
pub fn canonical_answer(text: &str, format: AnswerFormat, options: &[String]) -> Option<String> {
    match format {
        AnswerFormat::OpenText => Some(text.to_string()),
        AnswerFormat::YesNo => {
            if let Some(exact) = options.iter().find(|o| o.as_str() == text) {
                return Some(exact.clone());
            }
            let label = normalize_yes_no(text).as_option()?;
            options
                .iter()
                .find(|o| o.eq_ignore_ascii_case(label))
                .cloned()
        }
        AnswerFormat::Scale1To10 | AnswerFormat::CountInterval => {
            match match_interval(text, options) {
                IntervalMatch::Option(o) => Some(o),
                IntervalMatch::Ignored => None,
            }
        }
    }
}

fn curate_one(
    record: &ResponseRecord,
    manifest: &RunManifest,
    kinds: &HashMap<String, SystemKind>,
) -> ResponseRecord {
    let mut out = record.clone();
    out.normalized_text = None;
    out.status = ResponseStatus::Kept;
    if kinds.get(&record.system_id) != Some(&SystemKind::Vlm) {
        return out;
    }
    let Some(question) = manifest.question(record.qid) else {
        return out;
    };
    if question.answer_format == AnswerFormat::OpenText {
        return out;
    }
    let options = question.options().unwrap_or_default();
    match canonical_answer(&record.text, question.answer_format, &options) {
        Some(canon) if canon == record.text => {}
        Some(canon) => {
            out.status = ResponseStatus::Modified;
            out.normalized_text = Some(canon);
        }
        None => out.status = ResponseStatus::Ignored,
    }
    out
}

/// Curates a record set. Output is sorted by record key; the original text
/// of every record is preserved.
pub fn curate(
    records: &[ResponseRecord],
    manifest: &RunManifest,
) -> (Vec<ResponseRecord>, CurationStats) {
    let kinds = manifest.system_kinds();
    let mut curated: Vec<ResponseRecord> = records
        .par_iter()
        .map(|r| curate_one(r, manifest, &kinds))
        .collect();
    curated.sort_by_key(|r| r.key());

    let mut stats = CurationStats {
        rules_version: RULES_VERSION.to_string(),
        per_system: BTreeMap::new(),
    };
    for r in &curated {
        let s = stats.per_system.entry(r.system_id.clone()).or_default();
        s.total += 1;
        match r.status {
            ResponseStatus::Modified => s.modifications += 1,
            ResponseStatus::Ignored => s.ignored += 1,
            _ => {}
        }
    }
    (curated, stats)
}
