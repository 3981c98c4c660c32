//! Reference provider settings for the six evaluated VLMs and a builder for
//! complete run manifests.

use crate::model::{
    Access, Fps, InputModality, Provider, ProviderConfig, RunManifest, SystemKind, SystemProfile,
    VideoClipRef,
};
use crate::questions::full_question_bank;

/// Token limit used where no published value exists.
pub const UNPUBLISHED_MAX_TOKENS: u32 = 512;

/// Providers whose `max_tokens` falls back to [`UNPUBLISHED_MAX_TOKENS`].
pub fn max_tokens_is_unpublished(p: Provider) -> bool {
    matches!(p, Provider::Deepseek | Provider::Pixtral | Provider::Qwen2)
}

/// System id used for a provider's model in the released response data.
pub fn reference_system_id(p: Provider) -> &'static str {
    match p {
        Provider::Deepseek => "deepseek_v2",
        Provider::Pixtral => "pixtral",
        Provider::Qwen2 => "qwen2",
        Provider::Cogvlm => "cogvlm2",
        Provider::Gemini => "gemini-2.0",
        Provider::Llama => "Llama-3.2",
        Provider::GenericHttp => "generic-http",
    }
}

/// Reference configuration for a provider. Repetition counts follow the
/// per-system response totals (10, 10, 1, 1, 20, 10).
pub fn reference_provider_config(p: Provider) -> ProviderConfig {
    let (model_name, access, fps, modality, max_tokens, repetitions) = match p {
        Provider::Deepseek => (
            "deepseek-chat",
            Access::DirectApi,
            Fps::whole(10),
            InputModality::ImagesText,
            UNPUBLISHED_MAX_TOKENS,
            10,
        ),
        Provider::Pixtral => (
            "pixtral-large-latest",
            Access::DirectApi,
            Fps::whole(1),
            InputModality::ImagesText,
            UNPUBLISHED_MAX_TOKENS,
            10,
        ),
        Provider::Qwen2 => (
            "Qwen2-VL-7B",
            Access::Replicate,
            Fps::whole(10),
            InputModality::VideoText,
            UNPUBLISHED_MAX_TOKENS,
            1,
        ),
        Provider::Cogvlm => (
            "cogvlm2-video",
            Access::Replicate,
            Fps::whole(10),
            InputModality::VideoText,
            2000,
            1,
        ),
        Provider::Gemini => (
            "gemini-2.0-flash-exp",
            Access::Vertex,
            Fps::whole(10),
            InputModality::ImagesText,
            100,
            20,
        ),
        Provider::Llama => (
            "Llama-3.2-11B-Vision-Instruct",
            Access::Vertex,
            Fps::new(1, 2).expect("valid rate"),
            InputModality::ImagesText,
            100,
            10,
        ),
        Provider::GenericHttp => (
            "generic",
            Access::DirectApi,
            Fps::whole(1),
            InputModality::ImagesText,
            UNPUBLISHED_MAX_TOKENS,
            1,
        ),
    };
    ProviderConfig {
        provider: p,
        model_name: model_name.to_string(),
        access,
        frame_rate_fps: fps,
        input_modality: modality,
        max_tokens,
        temperature: 1.0,
        top_p: 0.9,
        repetitions,
    }
}

pub fn human_profile(id: &str) -> SystemProfile {
    SystemProfile {
        id: id.to_string(),
        kind: SystemKind::Human,
        display_name: id.to_string(),
        provider_config: None,
        anonymized: true,
    }
}

pub fn vlm_profile(id: &str, config: ProviderConfig) -> SystemProfile {
    SystemProfile {
        id: id.to_string(),
        kind: SystemKind::Vlm,
        display_name: config.model_name.clone(),
        provider_config: Some(config),
        anonymized: false,
    }
}

/// Canonical 5 s clip sampled at 10 Hz.
pub fn canonical_clip(id: &str, source: &str) -> VideoClipRef {
    VideoClipRef {
        id: id.to_string(),
        frame_count: 50,
        native_fps: 10,
        duration_s: 5.0,
        source_path_or_uri: source.to_string(),
        city: None,
    }
}

/// Manifest with all fifteen questions, `human_ids` as human systems, and
/// each listed provider at its reference configuration.
pub fn reference_manifest(
    video_ids: &[&str],
    human_ids: &[&str],
    providers: &[Provider],
) -> RunManifest {
    let mut systems: Vec<SystemProfile> = human_ids.iter().map(|h| human_profile(h)).collect();
    systems.extend(
        providers
            .iter()
            .map(|&p| vlm_profile(reference_system_id(p), reference_provider_config(p))),
    );
    RunManifest {
        systems,
        videos: video_ids
            .iter()
            .map(|v| canonical_clip(v, &format!("videos/{v}")))
            .collect(),
        questions: full_question_bank(),
        variable_questions: Default::default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_manifest_validates() {
        let videos: Vec<String> = (1..=7).map(|i| format!("v{i}")).collect();
        let vids: Vec<&str> = videos.iter().map(String::as_str).collect();
        let humans: Vec<String> = (1..=9).map(|i| format!("h{i}")).collect();
        let hs: Vec<&str> = humans.iter().map(String::as_str).collect();
        let m = reference_manifest(&vids, &hs, &Provider::NAMED);
        m.validate().unwrap();
        assert_eq!(m.systems.len(), 15);
        assert_eq!(m.cell_indices().len(), 105);
        let totals: u32 = m
            .systems
            .iter()
            .filter(|s| s.kind == SystemKind::Vlm)
            .map(|s| s.repetitions() * 105)
            .sum();
        assert_eq!(totals, 5460);
    }
}
