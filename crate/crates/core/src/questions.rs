//! Question bank, clip meta-tags, and the oracle prompt/parse cycle that
//! produces the five video-specific questions of each clip.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    AnswerFormat, Block, QuestionSpec, RunManifest, PEDESTRIAN_COUNT_OPTIONS, YES_NO_OPTIONS,
};

#[derive(Debug, Error)]
pub enum QuestionError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("metadata {path}: {message}")]
    Metadata { path: PathBuf, message: String },
    #[error("oracle prompt needs at least one metadata record")]
    NoRecords,
    #[error("oracle output, sample {sample}: {message}")]
    Parse { sample: String, message: String },
    #[error("oracle output contains no samples")]
    NoSamples,
    #[error("video `{0}` is not in the manifest")]
    UnknownVideo(String),
}

/// Manual annotation of one clip. Single-label attributes hold one value,
/// multi-label attributes zero or more; open-ended ones may hold free text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaTagRecord {
    pub video_id: String,
    pub vehicle_actions: String,
    pub driving_action_reasoning: Vec<String>,
    pub vehicle_motion_behavior: Vec<String>,
    pub traffic_signs: Vec<String>,
    pub traffic_lights: String,
    pub weather_conditions: Vec<String>,
    pub road_surface_conditions: Vec<String>,
    pub road_structures: Vec<String>,
    pub static_objects: Vec<String>,
    pub other_vehicle_behaviors: Vec<String>,
    pub pedestrian_behavior: Vec<String>,
    pub unexpected_obstacles: Vec<String>,
    pub emergency_situations: String,
    pub lighting_conditions: String,
    pub traffic_conditions: String,
    pub driving_environment: String,
}

/// Reads every `*.json` in `dir`, sorted by video id. The file stem must
/// equal the record's `video_id`.
pub fn load_metadata_dir(dir: impl AsRef<Path>) -> Result<Vec<MetaTagRecord>, QuestionError> {
    let dir = dir.as_ref();
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| QuestionError::Io { path, source }
    };
    let mut records = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io(dir))? {
        let path = entry.map_err(io(dir))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let text = std::fs::read_to_string(&path).map_err(io(&path))?;
        let rec: MetaTagRecord =
            serde_json::from_str(&text).map_err(|e| QuestionError::Metadata {
                path: path.clone(),
                message: e.to_string(),
            })?;
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default();
        if stem != rec.video_id {
            return Err(QuestionError::Metadata {
                path: path.clone(),
                message: format!("file name does not match video_id `{}`", rec.video_id),
            });
        }
        records.push(rec);
    }
    records.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    Ok(records)
}

pub const ORACLE_SYSTEM_INSTRUCTIONS: &str = r##"You are an AI assistant specialized in analyzing driving scenarios. You will receive a list of JSON objects, each containing partial metadata about different driving scenes. Be aware that the provided data is incomplete, and important elements of the scenes may be missing.

For each JSON sample, your task is to:
1. Read the JSON object.
2. Include the "#" and "Name" from the JSON object at the beginning to indicate which sample you are analyzing.
3. Generate **five** relevant and contextually appropriate questions based solely on the information available in the JSON object.
4. Provide short and direct answers to each question.

Focus on what is observed in the scene according to the metadata, and consider that there might be elements not explicitly mentioned.

Example format:

Sample #: 1
Name: 2023_01_10_153834_044_clip_00_16_100

Q1: [Question 1]
A1: [Answer 1]

Q2: [Question 2]
A2: [Answer 2]

Q3: [Question 3]
A3: [Answer 3]

Q4: [Question 4]
A4: [Answer 4]

Q5: [Question 5]
A5: [Answer 5]"##;

pub const ORACLE_STARTER_TEMPLATE: &str = "Below is a list of JSON samples, each containing partial information about different driving scenes. Please analyze each sample individually. For each one:

- Generate five relevant questions based on the metadata.
- Provide short and direct answers to each question.

Remember that the metadata may be incomplete, and consider the possibility that there are other elements not mentioned in the file.  [Insert the list of JSON samples here]";

const SAMPLES_SLOT: &str = "[Insert the list of JSON samples here]";

/// One metadata record as shown to the oracle, led by "#" and "Name".
#[derive(Serialize)]
struct OracleSample<'a> {
    #[serde(rename = "#")]
    number: usize,
    #[serde(rename = "Name")]
    name: &'a str,
    #[serde(flatten)]
    tags: TagView<'a>,
}

#[derive(Serialize)]
struct TagView<'a> {
    vehicle_actions: &'a str,
    driving_action_reasoning: &'a [String],
    vehicle_motion_behavior: &'a [String],
    traffic_signs: &'a [String],
    traffic_lights: &'a str,
    weather_conditions: &'a [String],
    road_surface_conditions: &'a [String],
    road_structures: &'a [String],
    static_objects: &'a [String],
    other_vehicle_behaviors: &'a [String],
    pedestrian_behavior: &'a [String],
    unexpected_obstacles: &'a [String],
    emergency_situations: &'a str,
    lighting_conditions: &'a str,
    traffic_conditions: &'a str,
    driving_environment: &'a str,
}

impl<'a> From<&'a MetaTagRecord> for TagView<'a> {
    fn from(r: &'a MetaTagRecord) -> Self {
        TagView {
            vehicle_actions: &r.vehicle_actions,
            driving_action_reasoning: &r.driving_action_reasoning,
            vehicle_motion_behavior: &r.vehicle_motion_behavior,
            traffic_signs: &r.traffic_signs,
            traffic_lights: &r.traffic_lights,
            weather_conditions: &r.weather_conditions,
            road_surface_conditions: &r.road_surface_conditions,
            road_structures: &r.road_structures,
            static_objects: &r.static_objects,
            other_vehicle_behaviors: &r.other_vehicle_behaviors,
            pedestrian_behavior: &r.pedestrian_behavior,
            unexpected_obstacles: &r.unexpected_obstacles,
            emergency_situations: &r.emergency_situations,
            lighting_conditions: &r.lighting_conditions,
            traffic_conditions: &r.traffic_conditions,
            driving_environment: &r.driving_environment,
        }
    }
}

/// Returns `(system_instructions, starter_message)`, samples numbered from 1
/// in input order.
pub fn build_oracle_prompt(records: &[MetaTagRecord]) -> Result<(String, String), QuestionError> {
    if records.is_empty() {
        return Err(QuestionError::NoRecords);
    }
    let samples: Vec<OracleSample> = records
        .iter()
        .enumerate()
        .map(|(i, r)| OracleSample {
            number: i + 1,
            name: &r.video_id,
            tags: r.into(),
        })
        .collect();
    let json = serde_json::to_string_pretty(&samples).expect("samples serialize");
    Ok((
        ORACLE_SYSTEM_INSTRUCTIONS.to_string(),
        ORACLE_STARTER_TEMPLATE.replace(SAMPLES_SLOT, &json),
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub question: String,
    pub answer: String,
}

/// Five oracle questions with reference answers for one clip. The answers
/// are kept as reference text only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleQA {
    pub video_id: String,
    pub pairs: Vec<QaPair>,
}

static SAMPLE_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^[\s*_#>-]*sample\s*#?\s*[:.]?[\s*_]*(\d+)").unwrap());
static NAME_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^[\s*_>-]*name\s*[:.][\s*_]*(.*?)[\s*_]*$").unwrap());
static QA_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^[\s*_>-]*([QA])([1-9]\d*)\s*[:.)][\s*_]*(.*?)[\s*_]*$").unwrap()
});

#[derive(Default)]
struct SampleDraft {
    label: String,
    name: Option<String>,
    questions: Vec<(usize, String)>,
    answers: Vec<(usize, String)>,
}

impl SampleDraft {
    fn finish(self) -> Result<OracleQA, QuestionError> {
        let err = |message: String| QuestionError::Parse {
            sample: self.label.clone(),
            message,
        };
        let video_id = self
            .name
            .clone()
            .ok_or_else(|| err("missing Name line".into()))?;
        if self.questions.len() != 5 || self.answers.len() != 5 {
            return Err(err(format!(
                "expected 5 question/answer pairs, found {} questions and {} answers",
                self.questions.len(),
                self.answers.len()
            )));
        }
        let mut pairs = Vec::with_capacity(5);
        for k in 1..=5 {
            let q = self.questions.iter().find(|(n, _)| *n == k);
            let a = self.answers.iter().find(|(n, _)| *n == k);
            match (q, a) {
                (Some((_, q)), Some((_, a))) if !q.is_empty() && !a.is_empty() => {
                    pairs.push(QaPair {
                        question: q.clone(),
                        answer: a.clone(),
                    })
                }
                _ => return Err(err(format!("pair {k} is missing or empty"))),
            }
        }
        Ok(OracleQA { video_id, pairs })
    }
}

/// Parses "Sample #/Name/Qn/An" blocks, ignoring any other lines.
/// Plain and bold-markdown labels are accepted.
pub fn parse_oracle_output(text: &str) -> Result<Vec<OracleQA>, QuestionError> {
    let mut drafts: Vec<SampleDraft> = Vec::new();
    for line in text.lines() {
        if let Some(c) = SAMPLE_LINE.captures(line) {
            drafts.push(SampleDraft {
                label: c[1].to_string(),
                ..Default::default()
            });
            continue;
        }
        if let Some(c) = NAME_LINE.captures(line) {
            if drafts.is_empty() {
                drafts.push(SampleDraft {
                    label: "1".into(),
                    ..Default::default()
                });
            }
            let d = drafts.last_mut().expect("non-empty");
            if d.name.is_none() {
                d.name = Some(c[1].trim().to_string());
            }
            continue;
        }
        if let Some(c) = QA_LINE.captures(line) {
            if drafts.is_empty() {
                drafts.push(SampleDraft {
                    label: "1".into(),
                    ..Default::default()
                });
            }
            let d = drafts.last_mut().expect("non-empty");
            let n: usize = c[2].parse().unwrap_or(0);
            let body = c[3].trim().to_string();
            if &c[1] == "Q" {
                d.questions.push((n, body));
            } else {
                d.answers.push((n, body));
            }
        }
    }
    if drafts.is_empty() {
        return Err(QuestionError::NoSamples);
    }
    drafts.into_iter().map(SampleDraft::finish).collect()
}

/// Canonical text form, in the layout of the oracle's example format.
pub fn render_oracle_output(qas: &[OracleQA]) -> String {
    let mut out = String::new();
    for (i, qa) in qas.iter().enumerate() {
        let _ = writeln!(out, "Sample #: {}", i + 1);
        let _ = writeln!(out, "Name: {}", qa.video_id);
        for (k, p) in qa.pairs.iter().enumerate() {
            let _ = write!(
                out,
                "\nQ{}: {}\nA{}: {}\n",
                k + 1,
                p.question,
                k + 1,
                p.answer
            );
        }
        out.push('\n');
    }
    out
}

/// Stores each clip's five oracle questions as its video-specific questions.
pub fn merge_into_manifest(
    manifest: &mut RunManifest,
    qas: &[OracleQA],
) -> Result<(), QuestionError> {
    for qa in qas {
        if !manifest.videos.iter().any(|v| v.id == qa.video_id) {
            return Err(QuestionError::UnknownVideo(qa.video_id.clone()));
        }
        manifest.variable_questions.insert(
            qa.video_id.clone(),
            qa.pairs.iter().map(|p| p.question.clone()).collect(),
        );
    }
    Ok(())
}

const BANK: [(u8, &str); 10] = [
    (6, "Please rate the level of clutter from 1 to 10. Consider 10 as the highest level of clutter and 1 as the lowest."),
    (7, "Is this a recurrent driving scenario for you?"),
    (8, "Estimate how many pedestrians are there in the scene?"),
    (9, "Is this situation hazardous for the driver?"),
    (10, "On a scale of 1-10, how well do you think an autonomous vehicle would drive in this scene? Consider 10 as perfect driving and 1 as terrible driving."),
    (11, "What would have had to happen in this video for a crash to have occured involving the driver?"),
    (12, "What would have had to happen in this video for an external crash to have occured not involving the driver?"),
    (13, "Imagine if you had taken the opposite action in this scene (for example, braking instead of accelerating, or accelerating instead of braking). What do you think would have happened?"),
    (14, "What would be the next action to perform a U-turn in the next frames if the driver was driving an ambulance instead?"),
    (15, "What would be the next action to perform a U-turn in the next frames if the driver was driving a motorcycle instead?"),
];

fn spec_for(qid: u8, text: &str) -> QuestionSpec {
    let (answer_format, allowed_options) = match qid {
        6 | 10 => (AnswerFormat::Scale1To10, None),
        7 | 9 => (
            AnswerFormat::YesNo,
            Some(YES_NO_OPTIONS.iter().map(|s| s.to_string()).collect()),
        ),
        8 => (
            AnswerFormat::CountInterval,
            Some(
                PEDESTRIAN_COUNT_OPTIONS
                    .iter()
                    .map(|s| s.to_string())
                    .collect(),
            ),
        ),
        _ => (AnswerFormat::OpenText, None),
    };
    QuestionSpec {
        qid,
        block: Block::of_qid(qid).expect("qid in 1..=15"),
        text: text.to_string(),
        answer_format,
        allowed_options,
    }
}

/// The ten fixed questions, qids 6..=15.
pub fn question_bank() -> Vec<QuestionSpec> {
    BANK.iter()
        .map(|&(qid, text)| spec_for(qid, text))
        .collect()
}

/// All fifteen questions. Qids 1..=5 carry placeholder text; their real
/// text is per video and comes from the oracle.
pub fn full_question_bank() -> Vec<QuestionSpec> {
    (1..=5u8)
        .map(|qid| spec_for(qid, &format!("Question {qid}")))
        .chain(question_bank())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str) -> MetaTagRecord {
        MetaTagRecord {
            video_id: id.into(),
            vehicle_actions: "turning left".into(),
            driving_action_reasoning: vec!["yield to pedestrian".into()],
            vehicle_motion_behavior: vec!["braking".into()],
            traffic_signs: vec![],
            traffic_lights: "off".into(),
            weather_conditions: vec!["sunny".into()],
            road_surface_conditions: vec!["potholes".into()],
            road_structures: vec!["pedestrian crossing".into()],
            static_objects: vec!["poles".into(), "trees".into()],
            other_vehicle_behaviors: vec!["overtaking".into()],
            pedestrian_behavior: vec!["crossing".into()],
            unexpected_obstacles: vec!["street vendor".into()],
            emergency_situations: "none".into(),
            lighting_conditions: "natural lighting".into(),
            traffic_conditions: "congested".into(),
            driving_environment: "market".into(),
        }
    }

    const SKELETON: &str = "Sample #: 1
Name: 2023_01_10_153834_044_clip_00_16_100

Q1: [Question 1]
A1: [Answer 1]

Q2: [Question 2]
A2: [Answer 2]

Q3: [Question 3]
A3: [Answer 3]

Q4: [Question 4]
A4: [Answer 4]

Q5: [Question 5]
A5: [Answer 5]";

    #[test]
    fn prompt_blocks_are_verbatim() {
        let (sys, starter) = build_oracle_prompt(&[record("v1"), record("v2")]).unwrap();
        assert!(sys.contains("Provide short and direct answers to each question."));
        assert!(sys.ends_with(SKELETON));
        assert!(starter.contains("Please analyze each sample individually."));
        assert!(starter.contains("not mentioned in the file.  [\n"));
        assert!(!starter.contains(SAMPLES_SLOT));
        let json = &starter[starter.find("  [").unwrap() + 2..];
        let parsed: serde_json::Value = serde_json::from_str(json).unwrap();
        assert_eq!(parsed[1]["#"], 2);
        assert_eq!(parsed[1]["Name"], "v2");
        assert_eq!(parsed[0].as_object().unwrap().len(), 18);
    }

    #[test]
    fn empty_records_rejected() {
        assert!(matches!(
            build_oracle_prompt(&[]),
            Err(QuestionError::NoRecords)
        ));
    }

    #[test]
    fn skeleton_parses_to_one_sample() {
        let qas = parse_oracle_output(SKELETON).unwrap();
        assert_eq!(qas.len(), 1);
        assert_eq!(qas[0].video_id, "2023_01_10_153834_044_clip_00_16_100");
        assert_eq!(qas[0].pairs[4].answer, "[Answer 5]");
    }

    #[test]
    fn four_pairs_is_an_error_naming_the_sample() {
        let text: String = SKELETON.lines().take(13).collect::<Vec<_>>().join("\n");
        let err = parse_oracle_output(&text).unwrap_err();
        assert!(
            matches!(err, QuestionError::Parse { ref sample, .. } if sample == "1"),
            "{err}"
        );
    }

    #[test]
    fn bold_variants_and_prose_are_tolerated() {
        let mut text =
            String::from("Sure! Here is my analysis.\n\n**Sample #: 7**\n**Name:** clipA\n");
        for k in 1..=5 {
            text.push_str(&format!(
                "**Q{k}:** Is thing {k} visible?\n**A{k}:** Yes, thing {k}.\n"
            ));
        }
        text.push_str("\nLet me know if you need more.\n");
        let qas = parse_oracle_output(&text).unwrap();
        assert_eq!(qas[0].video_id, "clipA");
        assert_eq!(qas[0].pairs[2].question, "Is thing 3 visible?");
        assert_eq!(qas[0].pairs[2].answer, "Yes, thing 3.");
    }

    #[test]
    fn two_blocks_and_round_trip() {
        let text = format!(
            "{SKELETON}\n\n{}",
            SKELETON.replace("Sample #: 1", "Sample #: 2")
        );
        let qas = parse_oracle_output(&text).unwrap();
        assert_eq!(qas.len(), 2);
        assert_eq!(
            parse_oracle_output(&render_oracle_output(&qas)).unwrap(),
            qas
        );
    }

    #[test]
    fn bank_texts_and_formats() {
        let bank = question_bank();
        assert_eq!(bank.len(), 10);
        assert_eq!(bank[3].qid, 9);
        assert_eq!(bank[3].text, "Is this situation hazardous for the driver?");
        assert_eq!(bank[3].answer_format, AnswerFormat::YesNo);
        assert!(bank[8].text.contains("driving an ambulance instead"));
        for q in full_question_bank() {
            q.validate().unwrap();
        }
        assert_eq!(question_bank(), question_bank());
    }
}
