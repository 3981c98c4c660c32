//! Data model for systems, clips, questions and responses, plus the on-disk
//! formats (`manifest.json`, `responses.jsonl`).

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Parse {
        line: Option<usize>,
        message: String,
    },
    #[error("validation error in {record}, field `{field}`: {message}")]
    Validation {
        record: String,
        field: String,
        message: String,
    },
}

impl ModelError {
    fn invalid(record: impl Into<String>, field: &str, message: impl Into<String>) -> Self {
        ModelError::Validation {
            record: record.into(),
            field: field.to_string(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemKind {
    Human,
    Vlm,
}

impl fmt::Display for SystemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SystemKind::Human => "human",
            SystemKind::Vlm => "vlm",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provider {
    Deepseek,
    Pixtral,
    Qwen2,
    Cogvlm,
    Gemini,
    Llama,
    GenericHttp,
}

impl Provider {
    pub const NAMED: [Provider; 6] = [
        Provider::Deepseek,
        Provider::Pixtral,
        Provider::Qwen2,
        Provider::Cogvlm,
        Provider::Gemini,
        Provider::Llama,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Provider::Deepseek => "deepseek",
            Provider::Pixtral => "pixtral",
            Provider::Qwen2 => "qwen2",
            Provider::Cogvlm => "cogvlm",
            Provider::Gemini => "gemini",
            Provider::Llama => "llama",
            Provider::GenericHttp => "generic-http",
        }
    }

    pub fn parse(name: &str) -> Option<Provider> {
        Provider::NAMED
            .into_iter()
            .chain([Provider::GenericHttp])
            .find(|p| p.as_str() == name)
    }
}

impl fmt::Display for Provider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Access {
    DirectApi,
    Replicate,
    Vertex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InputModality {
    #[serde(rename = "images+text")]
    ImagesText,
    #[serde(rename = "video+text")]
    VideoText,
}

/// Positive rational frame rate.
///
/// Serialized as a JSON integer when whole, as a decimal when the
/// denominator is a power of ten multiple of 2 and 5, and as `"n/d"` otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Fps {
    num: u32,
    den: u32,
}

impl Fps {
    pub fn new(num: u32, den: u32) -> Option<Fps> {
        if num == 0 || den == 0 {
            return None;
        }
        let g = gcd(num, den);
        Some(Fps {
            num: num / g,
            den: den / g,
        })
    }

    pub fn whole(n: u32) -> Fps {
        Fps::new(n, 1).expect("positive frame rate")
    }

    pub fn num(self) -> u32 {
        self.num
    }

    pub fn den(self) -> u32 {
        self.den
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    fn from_f64(v: f64) -> Option<Fps> {
        if !(v.is_finite() && v > 0.0) {
            return None;
        }
        for den in [1u32, 2, 4, 5, 8, 10, 20, 25, 50, 100, 1000] {
            let num = v * den as f64;
            if (num - num.round()).abs() < 1e-9 && num.round() <= u32::MAX as f64 {
                return Fps::new(num.round() as u32, den);
            }
        }
        None
    }
}

fn gcd(mut a: u32, mut b: u32) -> u32 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl fmt::Display for Fps {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl Serialize for Fps {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.den == 1 {
            return s.serialize_u32(self.num);
        }
        let mut d = self.den;
        while d.is_multiple_of(2) {
            d /= 2;
        }
        while d.is_multiple_of(5) {
            d /= 5;
        }
        if d == 1 {
            s.serialize_f64(self.as_f64())
        } else {
            s.serialize_str(&self.to_string())
        }
    }
}

impl<'de> Deserialize<'de> for Fps {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        let parsed = match Raw::deserialize(d)? {
            Raw::Num(v) => Fps::from_f64(v),
            Raw::Text(t) => match t.split_once('/') {
                Some((n, de)) => match (n.trim().parse(), de.trim().parse()) {
                    (Ok(n), Ok(de)) => Fps::new(n, de),
                    _ => None,
                },
                None => t.trim().parse::<f64>().ok().and_then(Fps::from_f64),
            },
        };
        parsed.ok_or_else(|| serde::de::Error::custom("frame rate must be a positive rational"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub provider: Provider,
    pub model_name: String,
    pub access: Access,
    pub frame_rate_fps: Fps,
    pub input_modality: InputModality,
    pub max_tokens: u32,
    pub temperature: f64,
    pub top_p: f64,
    pub repetitions: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemProfile {
    pub id: String,
    pub kind: SystemKind,
    pub display_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provider_config: Option<ProviderConfig>,
    #[serde(default)]
    pub anonymized: bool,
}

impl SystemProfile {
    /// Number of repetitions expected per (video, question) cell.
    pub fn repetitions(&self) -> u32 {
        self.provider_config.as_ref().map_or(1, |c| c.repetitions)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoClipRef {
    pub id: String,
    pub frame_count: u32,
    pub native_fps: u32,
    pub duration_s: f64,
    pub source_path_or_uri: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub city: Option<String>,
}

impl VideoClipRef {
    pub fn validate(&self) -> Result<(), ModelError> {
        let rec = format!("video `{}`", self.id);
        if self.id.is_empty() {
            return Err(ModelError::invalid(rec, "id", "must not be empty"));
        }
        if self.native_fps == 0 {
            return Err(ModelError::invalid(rec, "native_fps", "must be positive"));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(ModelError::invalid(rec, "duration_s", "must be positive"));
        }
        let expected = (self.native_fps as f64 * self.duration_s).round();
        if self.frame_count == 0 || self.frame_count as f64 != expected {
            return Err(ModelError::invalid(
                rec,
                "frame_count",
                format!(
                    "expected round(native_fps * duration_s) = {expected}, got {}",
                    self.frame_count
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    Variable,
    MultipleChoice,
    Counterfactual,
}

impl Block {
    pub const ALL: [Block; 3] = [
        Block::Variable,
        Block::MultipleChoice,
        Block::Counterfactual,
    ];

    /// Block that a question id belongs to, if the id is in 1..=15.
    pub fn of_qid(qid: u8) -> Option<Block> {
        match qid {
            1..=5 => Some(Block::Variable),
            6..=10 => Some(Block::MultipleChoice),
            11..=15 => Some(Block::Counterfactual),
            _ => None,
        }
    }

    /// 1-based block number used in file names.
    pub fn number(self) -> u8 {
        match self {
            Block::Variable => 1,
            Block::MultipleChoice => 2,
            Block::Counterfactual => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Block::Variable => "variable",
            Block::MultipleChoice => "multiple_choice",
            Block::Counterfactual => "counterfactual",
        }
    }
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerFormat {
    OpenText,
    YesNo,
    #[serde(rename = "scale_1_10")]
    Scale1To10,
    CountInterval,
}

pub const YES_NO_OPTIONS: [&str; 2] = ["Yes", "No"];
pub const PEDESTRIAN_COUNT_OPTIONS: [&str; 7] = ["0", "1", "2-3", "4-6", "7-10", "11-20", "21+"];

pub fn scale_options() -> Vec<String> {
    (1..=10).map(|i| i.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuestionSpec {
    pub qid: u8,
    pub block: Block,
    pub text: String,
    pub answer_format: AnswerFormat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allowed_options: Option<Vec<String>>,
}

impl QuestionSpec {
    /// Checks the fixed qid → block / answer-format mapping.
    pub fn validate(&self) -> Result<(), ModelError> {
        let rec = format!("question {}", self.qid);
        let Some(block) = Block::of_qid(self.qid) else {
            return Err(ModelError::invalid(rec, "qid", "must be in 1..=15"));
        };
        if self.block != block {
            return Err(ModelError::invalid(
                rec,
                "block",
                format!(
                    "qid {} belongs to block `{block}`, got `{}`",
                    self.qid, self.block
                ),
            ));
        }
        let expected_format = match self.qid {
            6 | 10 => AnswerFormat::Scale1To10,
            7 | 9 => AnswerFormat::YesNo,
            8 => AnswerFormat::CountInterval,
            _ => AnswerFormat::OpenText,
        };
        if self.answer_format != expected_format {
            return Err(ModelError::invalid(
                rec,
                "answer_format",
                format!(
                    "qid {} requires {:?}, got {:?}",
                    self.qid, expected_format, self.answer_format
                ),
            ));
        }
        let canonical = canonical_options(expected_format);
        match (&self.allowed_options, &canonical) {
            (Some(_), None) => {
                return Err(ModelError::invalid(
                    rec,
                    "allowed_options",
                    "open-text questions take no options",
                ))
            }
            (Some(given), Some(canon)) if given != canon => {
                return Err(ModelError::invalid(
                    rec,
                    "allowed_options",
                    format!("expected {canon:?}, got {given:?}"),
                ))
            }
            (None, Some(_)) if self.qid == 8 => {
                return Err(ModelError::invalid(
                    rec,
                    "allowed_options",
                    "qid 8 requires the count intervals",
                ))
            }
            _ => {}
        }
        if self.text.trim().is_empty() {
            return Err(ModelError::invalid(rec, "text", "must not be empty"));
        }
        Ok(())
    }

    /// Allowed options, falling back to the canonical list for the format.
    pub fn options(&self) -> Option<Vec<String>> {
        self.allowed_options
            .clone()
            .or_else(|| canonical_options(self.answer_format))
    }
}

fn canonical_options(format: AnswerFormat) -> Option<Vec<String>> {
    match format {
        AnswerFormat::OpenText => None,
        AnswerFormat::YesNo => Some(YES_NO_OPTIONS.iter().map(|s| s.to_string()).collect()),
        AnswerFormat::Scale1To10 => Some(scale_options()),
        AnswerFormat::CountInterval => Some(
            PEDESTRIAN_COUNT_OPTIONS
                .iter()
                .map(|s| s.to_string())
                .collect(),
        ),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseStatus {
    Raw,
    Kept,
    Modified,
    Ignored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseRecord {
    pub system_id: String,
    pub video_id: String,
    pub qid: u8,
    pub repetition: u32,
    pub text: String,
    pub status: ResponseStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalized_text: Option<String>,
    pub timestamp: String,
}

impl ResponseRecord {
    pub fn key(&self) -> RecordKey {
        RecordKey {
            system_id: self.system_id.clone(),
            video_id: self.video_id.clone(),
            qid: self.qid,
            repetition: self.repetition,
        }
    }

    /// Text used by the analysis stages: the normalized text when present.
    pub fn analysis_text(&self) -> Option<&str> {
        match self.status {
            ResponseStatus::Ignored => None,
            _ => Some(self.normalized_text.as_deref().unwrap_or(&self.text)),
        }
    }

    /// Checks the status / normalized_text invariants.
    pub fn check_status(&self) -> Result<(), String> {
        match (self.status, &self.normalized_text) {
            (ResponseStatus::Modified, None) => {
                Err("modified record without normalized_text".into())
            }
            (ResponseStatus::Modified, Some(n)) if *n == self.text => {
                Err("modified record with normalized_text equal to text".into())
            }
            (ResponseStatus::Ignored, Some(_)) => {
                Err("ignored record carries normalized_text".into())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RecordKey {
    pub system_id: String,
    pub video_id: String,
    pub qid: u8,
    pub repetition: u32,
}

/// One (video, question) stimulus. Ordering is lexicographic; use
/// [`RunManifest::cell_indices`] for manifest order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellIndex {
    pub video_id: String,
    pub qid: u8,
}

impl CellIndex {
    pub fn new(video_id: impl Into<String>, qid: u8) -> Self {
        CellIndex {
            video_id: video_id.into(),
            qid,
        }
    }
}

impl fmt::Display for CellIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/q{}", self.video_id, self.qid)
    }
}

/// (system, video, question) cell.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SystemCell {
    pub system_id: String,
    pub video_id: String,
    pub qid: u8,
}

impl SystemCell {
    pub fn new(system_id: impl Into<String>, cell: &CellIndex) -> Self {
        SystemCell {
            system_id: system_id.into(),
            video_id: cell.video_id.clone(),
            qid: cell.qid,
        }
    }

    pub fn cell(&self) -> CellIndex {
        CellIndex::new(self.video_id.clone(), self.qid)
    }
}

impl fmt::Display for SystemCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}/q{}", self.system_id, self.video_id, self.qid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub systems: Vec<SystemProfile>,
    pub videos: Vec<VideoClipRef>,
    pub questions: Vec<QuestionSpec>,
    /// Per-video texts of the video-specific questions (qids 1..=5).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub variable_questions: BTreeMap<String, Vec<String>>,
}

impl RunManifest {
    pub fn from_json_str(s: &str) -> Result<RunManifest, ModelError> {
        let manifest: RunManifest = serde_json::from_str(s).map_err(|e| ModelError::Parse {
            line: Some(e.line()),
            message: e.to_string(),
        })?;
        manifest.validate()?;
        Ok(manifest)
    }

    /// Canonical serialization: pretty JSON with a trailing newline.
    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.systems.is_empty() {
            return Err(ModelError::invalid("manifest", "systems", "empty systems"));
        }
        if self.videos.is_empty() {
            return Err(ModelError::invalid("manifest", "videos", "empty videos"));
        }
        if self.questions.is_empty() {
            return Err(ModelError::invalid(
                "manifest",
                "questions",
                "empty questions",
            ));
        }
        let mut ids = HashSet::new();
        for sys in &self.systems {
            let rec = format!("system `{}`", sys.id);
            if sys.id.is_empty() {
                return Err(ModelError::invalid(rec, "id", "must not be empty"));
            }
            if !ids.insert(sys.id.as_str()) {
                return Err(ModelError::invalid(rec, "id", "duplicate system id"));
            }
            match (sys.kind, &sys.provider_config) {
                (SystemKind::Vlm, None) => {
                    return Err(ModelError::invalid(
                        rec,
                        "provider_config",
                        "required for vlm systems",
                    ))
                }
                (SystemKind::Human, Some(_)) => {
                    return Err(ModelError::invalid(
                        rec,
                        "provider_config",
                        "not allowed for human systems",
                    ))
                }
                (SystemKind::Vlm, Some(cfg)) => validate_provider(&rec, cfg)?,
                (SystemKind::Human, None) => {}
            }
            if sys.kind == SystemKind::Vlm && sys.anonymized {
                return Err(ModelError::invalid(
                    rec,
                    "anonymized",
                    "only human systems are anonymized",
                ));
            }
        }
        let mut vids = HashSet::new();
        for v in &self.videos {
            v.validate()?;
            if !vids.insert(v.id.as_str()) {
                return Err(ModelError::invalid(
                    format!("video `{}`", v.id),
                    "id",
                    "duplicate video id",
                ));
            }
        }
        let mut qids = HashSet::new();
        for q in &self.questions {
            q.validate()?;
            if !qids.insert(q.qid) {
                return Err(ModelError::invalid(
                    format!("question {}", q.qid),
                    "qid",
                    "duplicate qid",
                ));
            }
        }
        for (video, texts) in &self.variable_questions {
            let rec = format!("variable_questions `{video}`");
            if !vids.contains(video.as_str()) {
                return Err(ModelError::invalid(rec, "video_id", "unknown video"));
            }
            if texts.len() != 5 || texts.iter().any(|t| t.trim().is_empty()) {
                return Err(ModelError::invalid(
                    rec,
                    "texts",
                    "exactly five non-empty questions required",
                ));
            }
        }
        Ok(())
    }

    pub fn system(&self, id: &str) -> Option<&SystemProfile> {
        self.systems.iter().find(|s| s.id == id)
    }

    pub fn question(&self, qid: u8) -> Option<&QuestionSpec> {
        self.questions.iter().find(|q| q.qid == qid)
    }

    pub fn system_kinds(&self) -> HashMap<String, SystemKind> {
        self.systems
            .iter()
            .map(|s| (s.id.clone(), s.kind))
            .collect()
    }

    /// All (video, qid) cells, video-major in manifest order, qids ascending.
    pub fn cell_indices(&self) -> Vec<CellIndex> {
        let mut qids: Vec<u8> = self.questions.iter().map(|q| q.qid).collect();
        qids.sort_unstable();
        self.videos
            .iter()
            .flat_map(|v| qids.iter().map(move |&q| CellIndex::new(v.id.clone(), q)))
            .collect()
    }

    /// Question text for a cell; video-specific text wins for qids 1..=5.
    pub fn question_text(&self, cell: &CellIndex) -> Option<String> {
        if (1..=5).contains(&cell.qid) {
            if let Some(t) = self
                .variable_questions
                .get(&cell.video_id)
                .and_then(|v| v.get(cell.qid as usize - 1))
            {
                return Some(t.clone());
            }
        }
        self.question(cell.qid).map(|q| q.text.clone())
    }
}

fn validate_provider(rec: &str, cfg: &ProviderConfig) -> Result<(), ModelError> {
    if cfg.provider != Provider::GenericHttp {
        let fps = cfg.frame_rate_fps;
        let allowed = [Fps::new(1, 2).unwrap(), Fps::whole(1), Fps::whole(10)];
        if !allowed.contains(&fps) {
            return Err(ModelError::invalid(
                rec,
                "frame_rate_fps",
                format!("{fps} not in {{0.5, 1, 10}}"),
            ));
        }
    }
    if cfg.repetitions == 0 {
        return Err(ModelError::invalid(
            rec,
            "repetitions",
            "must be at least 1",
        ));
    }
    if cfg.max_tokens == 0 {
        return Err(ModelError::invalid(rec, "max_tokens", "must be positive"));
    }
    if !(cfg.temperature.is_finite() && cfg.temperature >= 0.0) {
        return Err(ModelError::invalid(
            rec,
            "temperature",
            "must be non-negative",
        ));
    }
    if !(cfg.top_p > 0.0 && cfg.top_p <= 1.0) {
        return Err(ModelError::invalid(rec, "top_p", "must be in (0, 1]"));
    }
    if cfg.model_name.is_empty() {
        return Err(ModelError::invalid(rec, "model_name", "must not be empty"));
    }
    Ok(())
}

pub fn load_run_manifest(path: impl AsRef<Path>) -> Result<RunManifest, ModelError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    RunManifest::from_json_str(&text)
}

pub fn parse_responses(text: &str) -> Result<Vec<ResponseRecord>, ModelError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| ModelError::Parse {
                line: Some(i + 1),
                message: e.to_string(),
            })
        })
        .collect()
}

/// One compact JSON object per line, newline-terminated.
pub fn responses_to_jsonl(records: &[ResponseRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn read_responses(path: impl AsRef<Path>) -> Result<Vec<ResponseRecord>, ModelError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_responses(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnknownField {
    SystemId,
    VideoId,
    Qid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnknownRef {
    pub record: usize,
    pub field: UnknownField,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvalidRecord {
    pub record: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub missing: Vec<SystemCell>,
    pub duplicates: Vec<RecordKey>,
    pub unknown: Vec<UnknownRef>,
    pub invalid: Vec<InvalidRecord>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.missing.is_empty()
            && self.duplicates.is_empty()
            && self.unknown.is_empty()
            && self.invalid.is_empty()
    }
}

/// Report-only completeness and consistency check of a response set.
pub fn validate_responses(records: &[ResponseRecord], manifest: &RunManifest) -> ValidationReport {
    let mut report = ValidationReport::default();
    let kinds = manifest.system_kinds();
    let videos: HashSet<&str> = manifest.videos.iter().map(|v| v.id.as_str()).collect();
    let qids: HashSet<u8> = manifest.questions.iter().map(|q| q.qid).collect();

    let mut seen = HashSet::new();
    let mut present: BTreeSet<SystemCell> = BTreeSet::new();
    for (i, r) in records.iter().enumerate() {
        let mut known = true;
        if !kinds.contains_key(&r.system_id) {
            known = false;
            report.unknown.push(UnknownRef {
                record: i,
                field: UnknownField::SystemId,
                value: r.system_id.clone(),
            });
        }
        if !videos.contains(r.video_id.as_str()) {
            known = false;
            report.unknown.push(UnknownRef {
                record: i,
                field: UnknownField::VideoId,
                value: r.video_id.clone(),
            });
        }
        if !qids.contains(&r.qid) {
            known = false;
            report.unknown.push(UnknownRef {
                record: i,
                field: UnknownField::Qid,
                value: r.qid.to_string(),
            });
        }
        if !seen.insert(r.key()) {
            report.duplicates.push(r.key());
        }
        if let Err(reason) = r.check_status() {
            report.invalid.push(InvalidRecord { record: i, reason });
        }
        if kinds.get(&r.system_id) == Some(&SystemKind::Human) && r.repetition != 0 {
            report.invalid.push(InvalidRecord {
                record: i,
                reason: "human responses must have repetition 0".into(),
            });
        }
        if known {
            present.insert(SystemCell {
                system_id: r.system_id.clone(),
                video_id: r.video_id.clone(),
                qid: r.qid,
            });
        }
    }
    for sys in &manifest.systems {
        for cell in manifest.cell_indices() {
            let sc = SystemCell::new(sys.id.clone(), &cell);
            if !present.contains(&sc) {
                report.missing.push(sc);
            }
        }
    }
    report
}


#[cfg(test)]
mod tests {
    use super::tests_support::question;
    use super::*;

    fn human(id: &str) -> SystemProfile {
        SystemProfile {
            id: id.into(),
            kind: SystemKind::Human,
            display_name: id.into(),
            provider_config: None,
            anonymized: true,
        }
    }

    fn vlm(id: &str, reps: u32) -> SystemProfile {
        SystemProfile {
            id: id.into(),
            kind: SystemKind::Vlm,
            display_name: id.into(),
            provider_config: Some(ProviderConfig {
                provider: Provider::Gemini,
                model_name: "gemini-2.0-flash-exp".into(),
                access: Access::Vertex,
                frame_rate_fps: Fps::whole(10),
                input_modality: InputModality::ImagesText,
                max_tokens: 100,
                temperature: 1.0,
                top_p: 0.9,
                repetitions: reps,
            }),
            anonymized: false,
        }
    }

    fn video(id: &str) -> VideoClipRef {
        VideoClipRef {
            id: id.into(),
            frame_count: 50,
            native_fps: 10,
            duration_s: 5.0,
            source_path_or_uri: format!("clips/{id}.mp4"),
            city: Some("Lima".into()),
        }
    }

    fn manifest(humans: usize, vlms: usize, videos: usize) -> RunManifest {
        let mut systems: Vec<_> = (0..humans).map(|i| human(&format!("h{i}"))).collect();
        systems.extend((0..vlms).map(|i| vlm(&format!("v{i}"), 20)));
        RunManifest {
            systems,
            videos: (0..videos).map(|i| video(&format!("clip{i}"))).collect(),
            questions: (1..=15).map(question).collect(),
            variable_questions: BTreeMap::new(),
        }
    }

    fn record(sys: &str, video: &str, qid: u8, rep: u32) -> ResponseRecord {
        ResponseRecord {
            system_id: sys.into(),
            video_id: video.into(),
            qid,
            repetition: rep,
            text: "answer".into(),
            status: ResponseStatus::Raw,
            normalized_text: None,
            timestamp: "2025-01-01T00:00:00Z".into(),
        }
    }

    #[test]
    fn full_manifest_loads_with_105_cells() {
        let m = manifest(9, 6, 7);
        let parsed = RunManifest::from_json_str(&m.to_json_string()).unwrap();
        assert_eq!(parsed.systems.len(), 15);
        assert_eq!(parsed.cell_indices().len(), 105);
    }

    #[test]
    fn empty_systems_rejected() {
        let mut m = manifest(1, 0, 1);
        m.systems.clear();
        let err = RunManifest::from_json_str(&m.to_json_string()).unwrap_err();
        assert!(err.to_string().contains("empty systems"), "{err}");
    }

    #[test]
    fn yes_no_question_with_open_text_rejected() {
        let mut m = manifest(1, 0, 1);
        m.questions[6].answer_format = AnswerFormat::OpenText;
        m.questions[6].allowed_options = None;
        let err = RunManifest::from_json_str(&m.to_json_string()).unwrap_err();
        match err {
            ModelError::Validation { record, field, .. } => {
                assert_eq!(record, "question 7");
                assert_eq!(field, "answer_format");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn vlm_without_provider_config_rejected() {
        let mut m = manifest(0, 1, 1);
        m.systems[0].provider_config = None;
        assert!(m.validate().is_err());
    }

    #[test]
    fn frame_rate_outside_named_set_rejected() {
        let mut m = manifest(0, 1, 1);
        m.systems[0]
            .provider_config
            .as_mut()
            .unwrap()
            .frame_rate_fps = Fps::whole(2);
        assert!(m.validate().is_err());
        m.systems[0].provider_config.as_mut().unwrap().provider = Provider::GenericHttp;
        assert!(m.validate().is_ok());
    }

    #[test]
    fn frame_count_must_match_duration() {
        let mut v = video("a");
        v.frame_count = 49;
        assert!(v.validate().is_err());
    }

    #[test]
    fn fps_serializes_compactly() {
        let half = Fps::new(1, 2).unwrap();
        assert_eq!(serde_json::to_string(&half).unwrap(), "0.5");
        assert_eq!(serde_json::to_string(&Fps::whole(10)).unwrap(), "10");
        assert_eq!(
            serde_json::to_string(&Fps::new(1, 3).unwrap()).unwrap(),
            "\"1/3\""
        );
        let back: Fps = serde_json::from_str("\"1/3\"").unwrap();
        assert_eq!(back, Fps::new(1, 3).unwrap());
        assert_eq!(serde_json::from_str::<Fps>("0.5").unwrap(), half);
        assert!(serde_json::from_str::<Fps>("0").is_err());
    }

    #[test]
    fn complete_response_set_has_no_missing_cells() {
        let m = manifest(9, 6, 7);
        let mut records = Vec::new();
        for s in &m.systems {
            for c in m.cell_indices() {
                records.push(record(&s.id, &c.video_id, c.qid, 0));
            }
        }
        let report = validate_responses(&records, &m);
        assert!(report.is_clean(), "{report:?}");
    }

    #[test]
    fn unknown_system_flagged_once() {
        let m = manifest(1, 0, 1);
        let mut records: Vec<_> = m
            .cell_indices()
            .iter()
            .map(|c| record("h0", &c.video_id, c.qid, 0))
            .collect();
        records.push(record("ghost", "clip0", 1, 0));
        let report = validate_responses(&records, &m);
        assert_eq!(report.unknown.len(), 1);
        assert_eq!(report.unknown[0].field, UnknownField::SystemId);
        assert!(report.missing.is_empty());
    }

    #[test]
    fn vlm_repetitions_are_allowed() {
        let m = manifest(9, 1, 1);
        let mut records = Vec::new();
        for c in m.cell_indices() {
            for h in 0..9 {
                records.push(record(&format!("h{h}"), &c.video_id, c.qid, 0));
            }
            for rep in 0..20 {
                records.push(record("v0", &c.video_id, c.qid, rep));
            }
        }
        assert!(validate_responses(&records, &m).is_clean());
    }

    #[test]
    fn duplicates_and_status_violations_reported() {
        let m = manifest(1, 0, 1);
        let mut a = record("h0", "clip0", 1, 0);
        a.status = ResponseStatus::Modified;
        a.normalized_text = Some(a.text.clone());
        let report = validate_responses(&[a.clone(), a], &m);
        assert_eq!(report.duplicates.len(), 1);
        assert_eq!(report.invalid.len(), 2);
    }

    #[test]
    fn jsonl_round_trip_is_byte_identical() {
        let mut r = record("v0", "clip0", 8, 3);
        r.status = ResponseStatus::Modified;
        r.normalized_text = Some("7-10".into());
        let text = responses_to_jsonl(&[r.clone(), record("h0", "clip0", 1, 0)]);
        let parsed = parse_responses(&text).unwrap();
        assert_eq!(parsed[0], r);
        assert_eq!(responses_to_jsonl(&parsed), text);
    }

    #[test]
    fn manifest_round_trip_is_byte_identical() {
        let mut m = manifest(2, 2, 2);
        m.variable_questions.insert(
            "clip0".into(),
            (1..=5).map(|i| format!("What about {i}?")).collect(),
        );
        let text = m.to_json_string();
        assert_eq!(
            RunManifest::from_json_str(&text).unwrap().to_json_string(),
            text
        );
    }
}
