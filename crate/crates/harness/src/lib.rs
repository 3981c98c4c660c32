//! Querying vision-language models with clip frames, and the synthetic
//! frame-capacity probe.

pub mod capacity;
pub mod frames;
pub mod jobs;
pub mod payload;
pub mod transport;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ImageEncoder, RgbImage};

/// Lossless PNG with fixed encoder settings, so equal images give equal
/// bytes.
pub fn encode_png(img: &RgbImage) -> Vec<u8> {
    let mut out = Vec::new();
    PngEncoder::new_with_quality(&mut out, CompressionType::Default, FilterType::Adaptive)
        .write_image(
            img.as_raw(),
            img.width(),
            img.height(),
            image::ExtendedColorType::Rgb8,
        )
        .expect("in-memory PNG encoding");
    out
}

/// UTC timestamp in RFC 3339 with second precision.
pub fn now_timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}
