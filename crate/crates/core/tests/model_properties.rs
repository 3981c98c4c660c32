use proptest::prelude::*;
use vqa_align::model::{
    parse_responses, responses_to_jsonl, AnswerFormat, Block, Provider, QuestionSpec,
    ResponseRecord, ResponseStatus, RunManifest,
};
use vqa_align::profiles::{human_profile, reference_manifest};
use vqa_align::questions::question_bank;

fn expected_format(qid: u8) -> AnswerFormat {
    match qid {
        6 | 10 => AnswerFormat::Scale1To10,
        7 | 9 => AnswerFormat::YesNo,
        8 => AnswerFormat::CountInterval,
        _ => AnswerFormat::OpenText,
    }
}

fn format_strategy() -> impl Strategy<Value = AnswerFormat> {
    prop_oneof![
        Just(AnswerFormat::OpenText),
        Just(AnswerFormat::YesNo),
        Just(AnswerFormat::Scale1To10),
        Just(AnswerFormat::CountInterval),
    ]
}

fn manifest_strategy() -> impl Strategy<Value = RunManifest> {
    (
        1usize..=9,
        prop::sample::subsequence(Provider::NAMED.to_vec(), 0..=6),
        1usize..=7,
        0.0f64..2.0,
        prop::option::of("[A-Za-z ]{1,20}"),
        any::<bool>(),
    )
        .prop_map(|(humans, providers, videos, temp, city, variable)| {
            let hs: Vec<String> = (0..humans).map(|i| format!("participant-{i:02}")).collect();
            let vs: Vec<String> = (0..videos).map(|i| format!("clip_{i}")).collect();
            let h: Vec<&str> = hs.iter().map(String::as_str).collect();
            let v: Vec<&str> = vs.iter().map(String::as_str).collect();
            let mut m = reference_manifest(&v, &h, &providers);
            for s in &mut m.systems {
                if let Some(c) = &mut s.provider_config {
                    c.temperature = temp;
                }
            }
            m.videos[0].city = city;
            if variable {
                m.variable_questions.insert(
                    vs[0].clone(),
                    (1..=5).map(|k| format!("What is \"item\" {k}?")).collect(),
                );
            }
            m
        })
}

proptest! {
    #[test]
    fn manifest_serialization_round_trips(m in manifest_strategy()) {
        let text = m.to_json_string();
        let parsed = RunManifest::from_json_str(&text).unwrap();
        prop_assert_eq!(&parsed, &m);
        prop_assert_eq!(parsed.to_json_string(), text);
    }

    #[test]
    fn qid_format_mismatches_are_rejected(qid in 1u8..=15, format in format_strategy()) {
        let options = match format {
            AnswerFormat::YesNo => Some(vec!["Yes".to_string(), "No".to_string()]),
            AnswerFormat::CountInterval => Some(vec!["0", "1", "2-3", "4-6", "7-10", "11-20", "21+"]
                .into_iter().map(String::from).collect()),
            _ => None,
        };
        let q = QuestionSpec {
            qid,
            block: Block::of_qid(qid).unwrap(),
            text: "text".into(),
            answer_format: format,
            allowed_options: options,
        };
        prop_assert_eq!(q.validate().is_ok(), format == expected_format(qid));
    }

    #[test]
    fn response_file_round_trips(
        texts in prop::collection::vec(("[ -~]{0,40}", 0u32..20, 1u8..=15, prop::option::of("[a-z0-9-]{1,5}")), 1..30)
    ) {
        let records: Vec<ResponseRecord> = texts
            .into_iter()
            .enumerate()
            .map(|(i, (text, rep, qid, norm))| ResponseRecord {
                system_id: format!("s{}", i % 3),
                video_id: "v".into(),
                qid,
                repetition: rep,
                status: if norm.is_some() { ResponseStatus::Modified } else { ResponseStatus::Raw },
                normalized_text: norm,
                text,
                timestamp: "2025-01-01T00:00:00Z".into(),
            })
            .collect();
        let file = responses_to_jsonl(&records);
        let parsed = parse_responses(&file).unwrap();
        prop_assert_eq!(&parsed, &records);
        prop_assert_eq!(responses_to_jsonl(&parsed), file);
    }
}

#[test]
fn reference_study_shape() {
    let vs: Vec<String> = (1..=7).map(|i| format!("v{i}")).collect();
    let hs: Vec<String> = (1..=9).map(|i| format!("h{i}")).collect();
    let v: Vec<&str> = vs.iter().map(String::as_str).collect();
    let h: Vec<&str> = hs.iter().map(String::as_str).collect();
    let m =
        RunManifest::from_json_str(&reference_manifest(&v, &h, &Provider::NAMED).to_json_string())
            .unwrap();
    assert_eq!(m.systems.len(), 15);
    assert_eq!(m.cell_indices().len(), 105);
}

#[test]
fn empty_systems_message() {
    let mut m = reference_manifest(&["v"], &["h"], &[]);
    m.systems.clear();
    let err = RunManifest::from_json_str(&m.to_json_string()).unwrap_err();
    assert!(err.to_string().contains("empty systems"), "{err}");
}

#[test]
fn open_text_qid7_is_rejected_on_load() {
    let mut m = reference_manifest(&["v"], &["h"], &[]);
    m.systems.push(human_profile("h2"));
    let q7 = m.questions.iter_mut().find(|q| q.qid == 7).unwrap();
    q7.answer_format = AnswerFormat::OpenText;
    q7.allowed_options = None;
    let err = RunManifest::from_json_str(&m.to_json_string()).unwrap_err();
    assert!(err.to_string().contains("answer_format"), "{err}");
    assert_eq!(question_bank().len(), 10);
}
