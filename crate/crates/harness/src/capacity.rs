//! Synthetic frame-capacity probe: a red ball crossing the frame toward the
//! top-right, with a green star in exactly one frame.

use std::collections::BTreeMap;

use image::{Rgb, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use vqa_align::model::{Fps, InputModality, Provider, ProviderConfig};

use crate::frames::{Frame, ImageKind};
use crate::payload::{adapt_payload, FramePayload, Prompt};
use crate::transport::{ProviderRequest, Reply, Transport, TransportError};

pub const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
pub const RED: Rgb<u8> = Rgb([255, 0, 0]);
pub const GREEN: Rgb<u8> = Rgb([0, 200, 0]);

const PROMPT: &str = "Task: Answer the following questions based solely on the sequence of images provided. The images represent frames from a short video sequence.

Questions:
1. In which direction is the red ball moving?
2. Do you see any other objects besides the red ball? If so, please describe the object(s) and their color(s).

Instructions:
- Carefully analyze each image frame by frame.
- Base your answers only on what is visibly present in the images.
- Do not assume any information that is not directly observable.
- Provide a concise answer, and explain your reasoning if necessary.";

pub fn capacity_prompt() -> &'static str {
    PROMPT
}

#[derive(Debug, Error, PartialEq)]
pub enum CapacityError {
    #[error("a probe needs at least 2 frames, got {0}")]
    TooFewFrames(u32),
    #[error("star frame {index} is outside 0..{num_frames}")]
    StarOutOfRange { index: u32, num_frames: u32 },
    #[error("{num_frames} frames do not fit a strictly monotone path of {span} px")]
    PathTooShort { num_frames: u32, span: u32 },
    #[error("frame size {0}x{1} is too small for the ball, star and margins")]
    FrameTooSmall(u32, u32),
}

/// Drawing parameters, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    pub ball_radius: u32,
    pub star_box: u32,
    pub margin: u32,
}

impl Default for Geometry {
    fn default() -> Self {
        Geometry {
            ball_radius: 24,
            star_box: 48,
            margin: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapacityCase {
    pub num_frames: u32,
    pub star_frame_index: u32,
    pub frame_size: (u32, u32),
    pub ball_positions: Vec<(u32, u32)>,
}

fn ball_path(n: u32, (w, h): (u32, u32), g: &Geometry) -> Result<Vec<(u32, u32)>, CapacityError> {
    let lo = g.margin + g.ball_radius;
    if w < 2 * lo + 1
        || h < 2 * lo + 1
        || w < 2 * g.margin + g.star_box
        || h < 2 * g.margin + g.star_box
    {
        return Err(CapacityError::FrameTooSmall(w, h));
    }
    let (x0, x1) = (lo, w - 1 - lo);
    let (y0, y1) = (h - 1 - lo, lo);
    let span = (x1 - x0).min(y0 - y1);
    if n - 1 > span {
        return Err(CapacityError::PathTooShort {
            num_frames: n,
            span,
        });
    }
    let step = |a: u32, b: u32, k: u32| -> u32 {
        let d = b as i64 - a as i64;
        let den = (n - 1) as i64;
        (a as i64 + (d * k as i64 * 2 + den * d.signum()) / (2 * den)) as u32
    };
    Ok((0..n).map(|k| (step(x0, x1, k), step(y0, y1, k))).collect())
}

fn star_vertices(g: &Geometry) -> Vec<(f64, f64)> {
    let outer = g.star_box as f64 / 2.0;
    let inner = outer * (18f64.to_radians().sin() / 54f64.to_radians().sin());
    let c = g.margin as f64 + outer;
    (0..10)
        .map(|i| {
            let r = if i % 2 == 0 { outer } else { inner };
            let a = (-90.0 + 36.0 * i as f64).to_radians();
            (c + r * a.cos(), c + r * a.sin())
        })
        .collect()
}

fn inside(poly: &[(f64, f64)], x: f64, y: f64) -> bool {
    let mut hit = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            hit = !hit;
        }
        j = i;
    }
    hit
}

/// Rasterizes frame `k` without antialiasing: a pixel takes a shape's color
/// when its center lies inside the shape.
pub fn render_frame(case: &CapacityCase, g: &Geometry, k: u32) -> RgbImage {
    let (w, h) = case.frame_size;
    let mut img = RgbImage::from_pixel(w, h, WHITE);
    let (cx, cy) = case.ball_positions[k as usize];
    let r = g.ball_radius as i64;
    for y in (cy as i64 - r).max(0)..=(cy as i64 + r).min(h as i64 - 1) {
        for x in (cx as i64 - r).max(0)..=(cx as i64 + r).min(w as i64 - 1) {
            let (dx, dy) = (x - cx as i64, y - cy as i64);
            if dx * dx + dy * dy <= r * r {
                img.put_pixel(x as u32, y as u32, RED);
            }
        }
    }
    if k == case.star_frame_index {
        let poly = star_vertices(g);
        for y in g.margin..g.margin + g.star_box {
            for x in g.margin..g.margin + g.star_box {
                if inside(&poly, x as f64 + 0.5, y as f64 + 0.5) {
                    img.put_pixel(x, y, GREEN);
                }
            }
        }
    }
    img
}

/// Builds the case and its PNG frames.
pub fn generate_case(
    num_frames: u32,
    star_frame_index: u32,
    frame_size: (u32, u32),
    geometry: &Geometry,
) -> Result<(CapacityCase, Vec<Frame>), CapacityError> {
    if num_frames < 2 {
        return Err(CapacityError::TooFewFrames(num_frames));
    }
    if star_frame_index >= num_frames {
        return Err(CapacityError::StarOutOfRange {
            index: star_frame_index,
            num_frames,
        });
    }
    let case = CapacityCase {
        num_frames,
        star_frame_index,
        frame_size,
        ball_positions: ball_path(num_frames, frame_size, geometry)?,
    };
    let frames = (0..num_frames)
        .map(|k| Frame {
            index: k,
            kind: ImageKind::Png,
            bytes: crate::encode_png(&render_frame(&case, geometry, k)),
        })
        .collect();
    Ok((case, frames))
}

/// Content-derived file name that says nothing about the frame's position or
/// contents.
pub fn opaque_file_name(frame: &Frame) -> String {
    let digest = hex::encode(Sha256::digest(&frame.bytes));
    format!("{}.png", &digest[..16])
}

/// Phrase lists for grading. Matching is on lowercase word sequences with
/// hyphens treated as spaces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradingLexicon {
    pub direction: Vec<String>,
    pub star: Vec<String>,
    pub negators: Vec<String>,
    /// Words before a match that are searched for a negator.
    pub negation_window: usize,
}

impl Default for GradingLexicon {
    fn default() -> Self {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect();
        GradingLexicon {
            direction: s(&[
                "top right",
                "upper right",
                "up right",
                "up and right",
                "up and to the right",
                "upward and to the right",
                "upwards and to the right",
                "upward to the right",
                "upwards to the right",
                "upward right",
                "upwards right",
                "diagonally up and right",
                "northeast",
                "north east",
            ]),
            star: s(&[
                "star",
                "stars",
                "star shaped",
                "starlike",
                "green shape",
                "green object",
                "green figure",
                "green symbol",
                "green polygon",
            ]),
            negators: s(&[
                "no", "not", "don't", "dont", "doesn't", "without", "nothing", "none", "neither",
                "nor", "never", "cannot", "can't", "absent",
            ]),
            negation_window: 5,
        }
    }
}

fn sentences(text: &str) -> Vec<Vec<String>> {
    let lower = text.to_lowercase().replace(['’', '‘'], "'");
    lower
        .split(['.', '!', '?', '\n', ';', ':'])
        .map(|s| {
            s.split(|c: char| !(c.is_alphanumeric() || c == '\''))
                .filter(|w| !w.is_empty())
                .map(str::to_string)
                .collect()
        })
        .collect()
}

fn words(phrase: &str) -> Vec<String> {
    sentences(phrase).into_iter().flatten().collect()
}

impl GradingLexicon {
    /// True when some occurrence of a phrase has no negator in the preceding
    /// window of its sentence. Appending text can only add occurrences, so
    /// a true result stays true.
    fn affirms(&self, text: &str, phrases: &[String]) -> bool {
        let phrases: Vec<Vec<String>> = phrases
            .iter()
            .map(|p| words(p))
            .filter(|p| !p.is_empty())
            .collect();
        sentences(text).iter().any(|sent| {
            (0..sent.len()).any(|i| {
                phrases.iter().any(|p| sent[i..].starts_with(p))
                    && !sent[i.saturating_sub(self.negation_window)..i]
                        .iter()
                        .any(|w| self.negators.iter().any(|n| n == w))
            })
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grade {
    pub direction_ok: bool,
    pub star_detected: bool,
}

impl Grade {
    pub fn passed(&self) -> bool {
        self.direction_ok && self.star_detected
    }
}

/// The case does not change grading; it is taken so lexicons can depend on
/// it later without an interface change.
pub fn grade_response(text: &str, _case: &CapacityCase, lexicon: &GradingLexicon) -> Grade {
    Grade {
        direction_ok: lexicon.affirms(text, &lexicon.direction),
        star_detected: lexicon.affirms(text, &lexicon.star),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSettings {
    pub num_frames: u32,
    pub iterations: u32,
    pub duration_s: u32,
    pub frame_size: (u32, u32),
    pub geometry: Geometry,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        ProbeSettings {
            num_frames: 5,
            iterations: 5,
            duration_s: 5,
            frame_size: (512, 512),
            geometry: Geometry::default(),
        }
    }
}

impl ProbeSettings {
    /// Probe clip of `duration_s` seconds sampled at `fps`.
    pub fn at_rate(fps: Fps) -> Self {
        let d = ProbeSettings::default();
        let n = ((d.duration_s as u64 * fps.num() as u64) / fps.den() as u64).max(1) as u32;
        ProbeSettings { num_frames: n, ..d }
    }

    pub fn fps(&self) -> Fps {
        Fps::new(self.num_frames, self.duration_s).expect("positive frame count and duration")
    }

    /// Distinct star positions spread from the first to the last frame.
    pub fn star_positions(&self) -> Vec<u32> {
        let k = self.iterations.min(self.num_frames).max(1);
        if k == 1 {
            return vec![self.num_frames - 1];
        }
        (0..k)
            .map(|i| i * (self.num_frames - 1) / (k - 1))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationResult {
    pub iteration: u32,
    pub star_frame_index: u32,
    pub frame_files: Vec<String>,
    /// Set when the request could not be built or sent.
    pub error: Option<String>,
    pub response: Option<String>,
    pub direction_ok: bool,
    pub star_detected: bool,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityReport {
    pub provider: Provider,
    pub model_name: String,
    pub fps: Fps,
    pub num_frames: u32,
    pub frame_size: (u32, u32),
    /// Image input is only read as text by this provider, so a pass reflects
    /// file names rather than pixels.
    pub text_only_vision: bool,
    pub iterations: Vec<IterationResult>,
    pub passed: bool,
}

/// Providers known to read images only through OCR.
pub fn text_only_vision(p: Provider) -> bool {
    p == Provider::Deepseek
}

fn gif_bytes(frames: &[Frame], fps: Fps) -> Result<Vec<u8>, String> {
    use image::codecs::gif::{GifEncoder, Repeat};
    use image::{Delay, RgbaImage};
    let mut out = Vec::new();
    {
        let mut enc = GifEncoder::new(&mut out);
        enc.set_repeat(Repeat::Infinite)
            .map_err(|e| e.to_string())?;
        let delay = Delay::from_numer_denom_ms(1000 * fps.den(), fps.num());
        for f in frames {
            let img: RgbaImage = image::load_from_memory(&f.bytes)
                .map_err(|e| e.to_string())?
                .to_rgba8();
            enc.encode_frame(image::Frame::from_parts(img, 0, 0, delay))
                .map_err(|e| e.to_string())?;
        }
    }
    Ok(out)
}

fn run_iteration(
    cfg: &ProviderConfig,
    settings: &ProbeSettings,
    iteration: u32,
    star: u32,
    transport: &dyn Transport,
    lexicon: &GradingLexicon,
) -> Result<IterationResult, CapacityError> {
    let (case, frames) = generate_case(
        settings.num_frames,
        star,
        settings.frame_size,
        &settings.geometry,
    )?;
    let mut result = IterationResult {
        iteration,
        star_frame_index: star,
        frame_files: frames.iter().map(opaque_file_name).collect(),
        error: None,
        response: None,
        direction_ok: false,
        star_detected: false,
        passed: false,
    };
    let payload = match cfg.input_modality {
        InputModality::ImagesText => {
            FramePayload::jpeg(&frames, cfg.frame_rate_fps).map_err(|e| e.to_string())
        }
        InputModality::VideoText => gif_bytes(&frames, cfg.frame_rate_fps)
            .map(|b| FramePayload::video(&b, "image/gif", cfg.frame_rate_fps)),
    };
    let prompt = Prompt {
        system: String::new(),
        user: capacity_prompt().to_string(),
    };
    let reply = payload
        .and_then(|p| adapt_payload(cfg, &p, &prompt).map_err(|e| e.to_string()))
        .and_then(|body| {
            transport
                .send(&ProviderRequest {
                    provider: cfg.provider,
                    body,
                    repetition: iteration,
                })
                .map_err(|e| e.to_string())
        });
    match reply {
        Ok(r) => {
            let g = grade_response(&r.text, &case, lexicon);
            result.response = Some(r.text);
            result.direction_ok = g.direction_ok;
            result.star_detected = g.star_detected;
            result.passed = g.passed();
        }
        Err(e) => result.error = Some(e),
    }
    Ok(result)
}

/// Runs every star position through `transport` and grades the replies.
/// The provider's configured rate is replaced by the probe rate.
pub fn run_capacity(
    cfg: &ProviderConfig,
    settings: &ProbeSettings,
    transport: &dyn Transport,
    lexicon: &GradingLexicon,
) -> Result<CapacityReport, CapacityError> {
    let mut cfg = cfg.clone();
    cfg.frame_rate_fps = settings.fps();
    let stars = settings.star_positions();
    let iterations = stars
        .par_iter()
        .enumerate()
        .map(|(i, &s)| run_iteration(&cfg, settings, i as u32, s, transport, lexicon))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CapacityReport {
        provider: cfg.provider,
        model_name: cfg.model_name.clone(),
        fps: cfg.frame_rate_fps,
        num_frames: settings.num_frames,
        frame_size: settings.frame_size,
        text_only_vision: text_only_vision(cfg.provider),
        passed: !iterations.is_empty() && iterations.iter().all(|r| r.passed),
        iterations,
    })
}

/// Returns one fixed reply per provider.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CannedTransport {
    pub replies: BTreeMap<Provider, String>,
}

impl Transport for CannedTransport {
    fn send(&self, req: &ProviderRequest) -> Result<Reply, TransportError> {
        self.replies
            .get(&req.provider)
            .map(|t| Reply {
                text: t.clone(),
                timestamp: String::new(),
            })
            .ok_or_else(|| {
                TransportError::ReplayMiss(format!("no canned reply for {}", req.provider))
            })
    }
}
