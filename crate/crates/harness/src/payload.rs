//! Per-provider request documents.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde_json::{json, Value};
use thiserror::Error;
use vqa_align::model::{Fps, InputModality, Provider, ProviderConfig};

use crate::frames::{Frame, ImageKind};

pub const JPEG_PREFIX: &str = "data:image/jpeg;base64,";
pub const JPEG_QUALITY: u8 = 90;

/// Text that opens the image sequence in interleaved requests.
pub const VISUAL_START_MARKER: &str = "Video frames:";

#[derive(Debug, Error, PartialEq)]
pub enum PayloadError {
    #[error("{provider} accepts at most {cap} frames, got {got}")]
    TooManyFrames {
        provider: Provider,
        cap: usize,
        got: usize,
    },
    #[error("{0} request needs at least one frame")]
    NoFrames(Provider),
    #[error("payload sampled at {got} fps but {provider} is configured for {expected} fps")]
    RateMismatch {
        provider: Provider,
        expected: Fps,
        got: Fps,
    },
    #[error("{provider} takes {expected:?} input, got a {got:?} payload")]
    WrongEncoding {
        provider: Provider,
        expected: InputModality,
        got: Encoding,
    },
    #[error("frame {index}: {reason}")]
    Image { index: u32, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    JpegBase64,
    BinaryVideo,
    RemoteUri,
}

/// Encoded visual input. Frames of a `JpegBase64` payload each carry the
/// `data:image/jpeg;base64,` prefix; a video payload holds one element.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePayload {
    pub encoding: Encoding,
    pub frames: Vec<String>,
    pub fps_used: Fps,
}

impl FramePayload {
    /// JPEG-encodes frames in order. JPEG input is passed through as is.
    pub fn jpeg(frames: &[Frame], fps_used: Fps) -> Result<Self, PayloadError> {
        let frames = frames
            .iter()
            .map(|f| to_jpeg(f).map(|b| format!("{JPEG_PREFIX}{}", B64.encode(b))))
            .collect::<Result<_, _>>()?;
        Ok(FramePayload {
            encoding: Encoding::JpegBase64,
            frames,
            fps_used,
        })
    }

    pub fn video(bytes: &[u8], mime: &str, fps_used: Fps) -> Self {
        FramePayload {
            encoding: Encoding::BinaryVideo,
            frames: vec![format!("data:{mime};base64,{}", B64.encode(bytes))],
            fps_used,
        }
    }

    pub fn remote(uri: &str, fps_used: Fps) -> Self {
        FramePayload {
            encoding: Encoding::RemoteUri,
            frames: vec![uri.to_string()],
            fps_used,
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

fn to_jpeg(frame: &Frame) -> Result<Vec<u8>, PayloadError> {
    if frame.kind == ImageKind::Jpeg {
        return Ok(frame.bytes.clone());
    }
    let err = |e: image::ImageError| PayloadError::Image {
        index: frame.index,
        reason: e.to_string(),
    };
    let rgb = image::load_from_memory(&frame.bytes)
        .map_err(err)?
        .to_rgb8();
    let mut out = Vec::new();
    image::codecs::jpeg::JpegEncoder::new_with_quality(&mut out, JPEG_QUALITY)
        .encode_image(&rgb)
        .map_err(err)?;
    Ok(out)
}

/// Largest number of images a provider accepts per request.
pub fn frame_cap(provider: Provider) -> Option<usize> {
    match provider {
        Provider::Pixtral => Some(6),
        Provider::Llama => Some(3),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub system: String,
    pub user: String,
}

fn lead(system: &str) -> String {
    if system.is_empty() {
        VISUAL_START_MARKER.to_string()
    } else {
        format!("{system}\n{VISUAL_START_MARKER}")
    }
}

fn strip_prefix(frame: &str) -> &str {
    frame.strip_prefix(JPEG_PREFIX).unwrap_or(frame)
}

/// Checks encoding, rate, emptiness and frame cap. Frames are never dropped
/// to fit a cap.
pub fn validate_payload(cfg: &ProviderConfig, payload: &FramePayload) -> Result<(), PayloadError> {
    let provider = cfg.provider;
    let encoding_ok = match cfg.input_modality {
        InputModality::ImagesText => payload.encoding == Encoding::JpegBase64,
        InputModality::VideoText => payload.encoding != Encoding::JpegBase64,
    };
    if !encoding_ok {
        return Err(PayloadError::WrongEncoding {
            provider,
            expected: cfg.input_modality,
            got: payload.encoding,
        });
    }
    if payload.fps_used != cfg.frame_rate_fps {
        return Err(PayloadError::RateMismatch {
            provider,
            expected: cfg.frame_rate_fps,
            got: payload.fps_used,
        });
    }
    if payload.is_empty() {
        return Err(PayloadError::NoFrames(provider));
    }
    if let Some(cap) = frame_cap(provider) {
        if payload.len() > cap {
            return Err(PayloadError::TooManyFrames {
                provider,
                cap,
                got: payload.len(),
            });
        }
    }
    Ok(())
}

/// Builds the provider request body after [`validate_payload`].
pub fn adapt_payload(
    cfg: &ProviderConfig,
    payload: &FramePayload,
    prompt: &Prompt,
) -> Result<Value, PayloadError> {
    validate_payload(cfg, payload)?;
    let provider = cfg.provider;
    let user = prompt.user.as_str();
    Ok(match provider {
        Provider::Cogvlm => json!({
            "model": cfg.model_name,
            "input": {
                "prompt": user,
                "input_video": payload.frames[0],
                "top_p": cfg.top_p,
                "temperature": cfg.temperature,
                "max_new_tokens": cfg.max_tokens,
            }
        }),
        Provider::Qwen2 => json!({
            "model": cfg.model_name,
            "input": {
                "media": payload.frames[0],
                "prompt": user,
                "max_new_tokens": cfg.max_tokens,
                "temperature": cfg.temperature,
                "top_p": cfg.top_p,
            }
        }),
        Provider::Deepseek => json!({
            "model": cfg.model_name,
            "prompt": user,
            "images": payload.frames,
            "max_tokens": cfg.max_tokens,
            "temperature": cfg.temperature,
            "top_p": cfg.top_p,
        }),
        Provider::Pixtral | Provider::GenericHttp => {
            let mut content = vec![json!({"type": "text", "text": user})];
            content.extend(
                payload
                    .frames
                    .iter()
                    .map(|f| json!({"type": "image_url", "image_url": f})),
            );
            json!({
                "model": cfg.model_name,
                "messages": [{"role": "user", "content": content}],
                "max_tokens": cfg.max_tokens,
                "temperature": cfg.temperature,
                "top_p": cfg.top_p,
            })
        }
        Provider::Gemini => {
            let mut parts = vec![json!({"text": lead(&prompt.system)})];
            parts.extend(payload.frames.iter().map(
                |f| json!({"inline_data": {"mime_type": "image/jpeg", "data": strip_prefix(f)}}),
            ));
            parts.push(json!({"text": user}));
            json!({
                "model": cfg.model_name,
                "contents": [{"role": "user", "parts": parts}],
                "generationConfig": {
                    "maxOutputTokens": cfg.max_tokens,
                    "temperature": cfg.temperature,
                    "topP": cfg.top_p,
                }
            })
        }
        Provider::Llama => {
            let mut text = if prompt.system.is_empty() {
                format!("{user}\n\n{VISUAL_START_MARKER}")
            } else {
                format!("{}\n\n{user}\n\n{VISUAL_START_MARKER}", prompt.system)
            };
            for f in &payload.frames {
                text.push('\n');
                text.push_str(f);
            }
            json!({
                "model": cfg.model_name,
                "instances": [{"prompt": text}],
                "parameters": {
                    "maxOutputTokens": cfg.max_tokens,
                    "temperature": cfg.temperature,
                    "topP": cfg.top_p,
                }
            })
        }
    })
}
