//! Frame selection and loading.
//!
//! Clips are stored as pre-extracted frame directories; video decoding is
//! out of process.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;
use vqa_align::model::{Fps, VideoClipRef};

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("requested {requested} fps exceeds native {native} fps of `{video}`")]
    RateAboveNative {
        video: String,
        requested: Fps,
        native: u32,
    },
    #[error("cannot decode `{video}` frame {index}: {reason}")]
    Decode {
        video: String,
        index: u32,
        reason: String,
    },
    #[error("cannot read video `{video}`: {reason}")]
    Video { video: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageKind {
    Png,
    Jpeg,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub index: u32,
    pub kind: ImageKind,
    pub bytes: Vec<u8>,
}

/// Native frame indices sampled at `fps`: the first frame of each period.
pub fn frame_indices(video: &VideoClipRef, fps: Fps) -> Result<Vec<u32>, FrameError> {
    let native = video.native_fps as u64;
    // fps > native  <=>  num > native * den
    if fps.num() as u64 > native * fps.den() as u64 {
        return Err(FrameError::RateAboveNative {
            video: video.id.clone(),
            requested: fps,
            native: video.native_fps,
        });
    }
    let count = ((video.duration_s * fps.as_f64()) + 1e-9).floor().max(1.0) as u64;
    let last = video.frame_count.saturating_sub(1) as u64;
    Ok((0..count)
        .map(|k| ((k * native * fps.den() as u64) / fps.num() as u64).min(last) as u32)
        .collect())
}

/// Access to the frames and encoded video of a clip.
pub trait FrameSource: Send + Sync {
    fn frame(&self, video: &VideoClipRef, index: u32) -> Result<Frame, FrameError>;

    /// Encoded video file, for providers that take video input.
    fn video_bytes(&self, video: &VideoClipRef) -> Result<Vec<u8>, FrameError>;
}

/// Loads `frame_indices(video, fps)` from `source`.
pub fn extract_frames(
    source: &dyn FrameSource,
    video: &VideoClipRef,
    fps: Fps,
) -> Result<Vec<Frame>, FrameError> {
    frame_indices(video, fps)?
        .into_iter()
        .map(|i| source.frame(video, i))
        .collect()
}

/// `<root>/<video_id>/frame_NNNN.{png,jpg}` with the video file at
/// `<root>/<source_path_or_uri>`.
#[derive(Debug, Clone)]
pub struct DirFrameSource {
    pub root: PathBuf,
}

impl DirFrameSource {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DirFrameSource { root: root.into() }
    }

    fn frame_path(&self, video: &str, index: u32) -> Option<(PathBuf, ImageKind)> {
        let dir = self.root.join(video);
        [
            ("png", ImageKind::Png),
            ("jpg", ImageKind::Jpeg),
            ("jpeg", ImageKind::Jpeg),
        ]
        .into_iter()
        .map(|(ext, kind)| (dir.join(format!("frame_{index:04}.{ext}")), kind))
        .find(|(p, _)| p.is_file())
    }
}

impl FrameSource for DirFrameSource {
    fn frame(&self, video: &VideoClipRef, index: u32) -> Result<Frame, FrameError> {
        let decode = |reason: String| FrameError::Decode {
            video: video.id.clone(),
            index,
            reason,
        };
        let (path, kind) = self.frame_path(&video.id, index).ok_or_else(|| {
            decode(format!(
                "no frame file under {}",
                self.root.join(&video.id).display()
            ))
        })?;
        let bytes = fs::read(&path).map_err(|e| decode(format!("{}: {e}", path.display())))?;
        let format = match kind {
            ImageKind::Png => image::ImageFormat::Png,
            ImageKind::Jpeg => image::ImageFormat::Jpeg,
        };
        image::load_from_memory_with_format(&bytes, format).map_err(|e| decode(e.to_string()))?;
        Ok(Frame { index, kind, bytes })
    }

    fn video_bytes(&self, video: &VideoClipRef) -> Result<Vec<u8>, FrameError> {
        let path = resolve(&self.root, &video.source_path_or_uri);
        fs::read(&path).map_err(|e| FrameError::Video {
            video: video.id.clone(),
            reason: format!("{}: {e}", path.display()),
        })
    }
}

fn resolve(root: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        root.join(p)
    }
}

/// Deterministic placeholder clips: each frame is a small flat PNG whose
/// color encodes (video, index). Lets the full pipeline run with no media.
#[derive(Debug, Clone, Default)]
pub struct SyntheticFrameSource {
    pub size: u32,
}

impl SyntheticFrameSource {
    fn color(video: &str, index: u32) -> [u8; 3] {
        let h = video.bytes().fold(0xcbf29ce484222325u64, |h, b| {
            (h ^ b as u64).wrapping_mul(0x100000001b3)
        });
        let h = h.wrapping_add((index as u64).wrapping_mul(0x9e3779b97f4a7c15));
        [(h >> 8) as u8, (h >> 24) as u8, (h >> 40) as u8]
    }
}

impl FrameSource for SyntheticFrameSource {
    fn frame(&self, video: &VideoClipRef, index: u32) -> Result<Frame, FrameError> {
        if index >= video.frame_count {
            return Err(FrameError::Decode {
                video: video.id.clone(),
                index,
                reason: format!("clip has {} frames", video.frame_count),
            });
        }
        let size = self.size.max(1);
        let img =
            image::RgbImage::from_pixel(size, size, image::Rgb(Self::color(&video.id, index)));
        Ok(Frame {
            index,
            kind: ImageKind::Png,
            bytes: crate::encode_png(&img),
        })
    }

    fn video_bytes(&self, video: &VideoClipRef) -> Result<Vec<u8>, FrameError> {
        Ok(format!("synthetic-video:{}:{}", video.id, video.frame_count).into_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use vqa_align::profiles::canonical_clip;

    #[test]
    fn counts_follow_duration_times_rate() {
        let clip = canonical_clip("v", "v.mp4");
        assert_eq!(
            frame_indices(&clip, Fps::whole(10)).unwrap(),
            (0..50).collect::<Vec<_>>()
        );
        assert_eq!(
            frame_indices(&clip, Fps::whole(1)).unwrap(),
            vec![0, 10, 20, 30, 40]
        );
        assert_eq!(
            frame_indices(&clip, Fps::new(1, 2).unwrap()).unwrap(),
            vec![0, 20]
        );
        assert_eq!(
            frame_indices(&clip, Fps::new(1, 10).unwrap()).unwrap(),
            vec![0]
        );
    }

    #[test]
    fn rate_above_native_is_rejected() {
        let clip = canonical_clip("v", "v.mp4");
        assert!(matches!(
            frame_indices(&clip, Fps::whole(11)),
            Err(FrameError::RateAboveNative { .. })
        ));
    }

    #[test]
    fn missing_frame_file_is_a_decode_error() {
        let dir = tempfile::tempdir().unwrap();
        let src = DirFrameSource::new(dir.path());
        let clip = canonical_clip("v", "v.mp4");
        assert!(matches!(
            extract_frames(&src, &clip, Fps::whole(1)),
            Err(FrameError::Decode { index: 0, .. })
        ));
    }

    #[test]
    fn corrupt_frame_file_is_a_decode_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("v")).unwrap();
        fs::write(dir.path().join("v/frame_0000.png"), b"not a png").unwrap();
        let src = DirFrameSource::new(dir.path());
        let clip = canonical_clip("v", "v.mp4");
        assert!(matches!(
            src.frame(&clip, 0),
            Err(FrameError::Decode { .. })
        ));
    }

    #[test]
    fn synthetic_frames_are_stable() {
        let src = SyntheticFrameSource { size: 8 };
        let clip = canonical_clip("v", "v.mp4");
        let a = extract_frames(&src, &clip, Fps::whole(1)).unwrap();
        let b = extract_frames(&src, &clip, Fps::whole(1)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].bytes, a[1].bytes);
    }
}
