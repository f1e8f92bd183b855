//! Frame sources: the external decoder wrapper and a generated synthetic
//! video used for offline fixtures.

use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{FrameRef, ImageHandle, Seconds};

#[derive(Debug, Error)]
pub enum VideoError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error("decoder command failed: {0}")]
    Decoder(String),
    #[error("timestamp {t} outside video of {duration} s")]
    OutOfRange { t: Seconds, duration: Seconds },
    #[error("no video found for id {0}")]
    NotFound(String),
}

/// Anything that can hand out decoded frames for a video.
pub trait FrameSource: Send + Sync {
    fn video_id(&self) -> &str;
    fn duration(&self) -> Seconds;
    fn frames(&self, times: &[Seconds]) -> Result<Vec<FrameRef>, VideoError>;
}

fn check_range(times: &[Seconds], duration: Seconds) -> Result<(), VideoError> {
    match times.iter().find(|t| !(**t >= 0.0 && **t <= duration)) {
        Some(t) => Err(VideoError::OutOfRange { t: *t, duration }),
        None => Ok(()),
    }
}

// ---------------------------------------------------------------------------
// Synthetic
// ---------------------------------------------------------------------------

/// Manifest for a generated video, stored as `<id>.synth.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticVideo {
    pub video_id: String,
    pub duration: Seconds,
    #[serde(default = "default_width")]
    pub width: u32,
    #[serde(default = "default_height")]
    pub height: u32,
}

fn default_width() -> u32 {
    32
}

fn default_height() -> u32 {
    18
}

pub const SYNTHETIC_SUFFIX: &str = ".synth.json";

impl SyntheticVideo {
    pub fn new(video_id: impl Into<String>, duration: Seconds) -> Self {
        Self {
            video_id: video_id.into(),
            duration,
            width: default_width(),
            height: default_height(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, VideoError> {
        let text = std::fs::read_to_string(path).map_err(|source| VideoError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let v: SyntheticVideo = serde_json::from_str(&text).map_err(|e| VideoError::Manifest {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        if !(v.duration.is_finite() && v.duration > 0.0) || v.width == 0 || v.height == 0 {
            return Err(VideoError::Manifest {
                path: path.to_path_buf(),
                reason: "duration and size must be positive".into(),
            });
        }
        Ok(v)
    }

    /// Deterministic PNG for timestamp `t`: a colour that drifts with time
    /// plus a bar whose position encodes the second.
    pub fn render(&self, t: Seconds) -> Vec<u8> {
        let tenth = (t * 10.0).round() as u64;
        let base = [
            (tenth * 7 % 256) as u8,
            (tenth / 10 * 13 % 256) as u8,
            (tenth / 600 * 61 % 256) as u8,
        ];
        let bar = (tenth / 10) as u32 % self.width;
        let img = image::RgbImage::from_fn(self.width, self.height, |x, _| {
            if x == bar {
                image::Rgb([255, 255, 255])
            } else {
                image::Rgb(base)
            }
        });
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, image::ImageFormat::Png)
            .expect("png encoding into memory cannot fail");
        out.into_inner()
    }
}

impl FrameSource for SyntheticVideo {
    fn video_id(&self) -> &str {
        &self.video_id
    }

    fn duration(&self) -> Seconds {
        self.duration
    }

    fn frames(&self, times: &[Seconds]) -> Result<Vec<FrameRef>, VideoError> {
        check_range(times, self.duration)?;
        Ok(times
            .iter()
            .map(|&t| FrameRef {
                video_id: self.video_id.clone(),
                timestamp: t,
                image: ImageHandle::inline("image/png", self.render(t)),
            })
            .collect())
    }
}

// ---------------------------------------------------------------------------
// External decoder
// ---------------------------------------------------------------------------

/// Command templates for the external decoder. Each argument may contain
/// `{video}`, `{timestamps}` (comma separated seconds), and `{outdir}`.
/// The extract command must write `frame_00000.<ext>`, `frame_00001.<ext>`,
/// ... into `{outdir}`, one per requested timestamp, and exit with 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    pub probe_command: Vec<String>,
    pub extract_command: Vec<String>,
    pub frame_ext: String,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        let script = concat!(
            "i=0; for t in $(echo \"$1\" | tr , ' '); do ",
            "ffmpeg -v error -ss \"$t\" -i \"$0\" -frames:v 1 -vf scale=512:-2 -y ",
            "\"$2/$(printf 'frame_%05d.jpg' $i)\" || exit 1; i=$((i+1)); done"
        );
        Self {
            probe_command: vec![
                "ffprobe".into(),
                "-v".into(),
                "error".into(),
                "-show_entries".into(),
                "format=duration".into(),
                "-of".into(),
                "csv=p=0".into(),
                "{video}".into(),
            ],
            extract_command: vec![
                "sh".into(),
                "-c".into(),
                script.into(),
                "{video}".into(),
                "{timestamps}".into(),
                "{outdir}".into(),
            ],
            frame_ext: "jpg".into(),
        }
    }
}

pub fn frame_file_name(index: usize, ext: &str) -> String {
    format!("frame_{index:05}.{ext}")
}

fn substitute(args: &[String], video: &Path, timestamps: &str, outdir: &Path) -> Vec<String> {
    args.iter()
        .map(|a| {
            a.replace("{video}", &video.to_string_lossy())
                .replace("{timestamps}", timestamps)
                .replace("{outdir}", &outdir.to_string_lossy())
        })
        .collect()
}

fn run(args: &[String]) -> Result<std::process::Output, VideoError> {
    let (program, rest) = args
        .split_first()
        .ok_or_else(|| VideoError::Decoder("empty command template".into()))?;
    let out = Command::new(program)
        .args(rest)
        .output()
        .map_err(|e| VideoError::Decoder(format!("spawning {program}: {e}")))?;
    if !out.status.success() {
        return Err(VideoError::Decoder(format!(
            "{program} exited with {}: {}",
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        )));
    }
    Ok(out)
}

/// A video file decoded through an external command.
#[derive(Debug, Clone)]
pub struct CommandVideo {
    video_id: String,
    path: PathBuf,
    duration: Seconds,
    decoder: DecoderConfig,
}

impl CommandVideo {
    pub fn open(path: &Path, decoder: DecoderConfig) -> Result<Self, VideoError> {
        let args = substitute(&decoder.probe_command, path, "", Path::new(""));
        let out = run(&args)?;
        let text = String::from_utf8_lossy(&out.stdout);
        let duration: Seconds = text
            .trim()
            .lines()
            .next()
            .and_then(|l| l.trim().parse().ok())
            .filter(|d: &f64| d.is_finite() && *d > 0.0)
            .ok_or_else(|| VideoError::Decoder(format!("unparseable duration {:?}", text.trim())))?;
        let video_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .ok_or_else(|| VideoError::NotFound(path.display().to_string()))?;
        Ok(Self {
            video_id,
            path: path.to_path_buf(),
            duration,
            decoder,
        })
    }
}

impl FrameSource for CommandVideo {
    fn video_id(&self) -> &str {
        &self.video_id
    }

    fn duration(&self) -> Seconds {
        self.duration
    }

    fn frames(&self, times: &[Seconds]) -> Result<Vec<FrameRef>, VideoError> {
        check_range(times, self.duration)?;
        if times.is_empty() {
            return Ok(vec![]);
        }
        let dir = tempfile::tempdir().map_err(|source| VideoError::Io {
            path: std::env::temp_dir(),
            source,
        })?;
        let stamps = times.iter().map(|t| format!("{t:.3}")).collect::<Vec<_>>().join(",");
        run(&substitute(
            &self.decoder.extract_command,
            &self.path,
            &stamps,
            dir.path(),
        ))?;
        let mime = crate::types::mime_for_path(Path::new(&frame_file_name(0, &self.decoder.frame_ext)));
        times
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let p = dir.path().join(frame_file_name(i, &self.decoder.frame_ext));
                let bytes = std::fs::read(&p)
                    .map_err(|_| VideoError::Decoder(format!("decoder did not produce {}", p.display())))?;
                Ok(FrameRef {
                    video_id: self.video_id.clone(),
                    timestamp: t,
                    image: ImageHandle::inline(mime, bytes),
                })
            })
            .collect()
    }
}

/// Opens a synthetic manifest or a real video file.
pub fn open_video(path: &Path, decoder: &DecoderConfig) -> Result<Box<dyn FrameSource>, VideoError> {
    if path.to_string_lossy().ends_with(SYNTHETIC_SUFFIX) {
        Ok(Box::new(SyntheticVideo::load(path)?))
    } else {
        Ok(Box::new(CommandVideo::open(path, decoder.clone())?))
    }
}

/// Finds the video for `video_id` inside `dir`: `<id>.synth.json` first,
/// then any `<id>.<ext>` file.
pub fn find_video(dir: &Path, video_id: &str) -> Result<PathBuf, VideoError> {
    let synth = dir.join(format!("{video_id}{SYNTHETIC_SUFFIX}"));
    if synth.is_file() {
        return Ok(synth);
    }
    let entries = std::fs::read_dir(dir).map_err(|source| VideoError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut hits: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.is_file() && p.file_stem().and_then(|s| s.to_str()) == Some(video_id))
        .collect();
    hits.sort();
    hits.into_iter()
        .next()
        .ok_or_else(|| VideoError::NotFound(video_id.to_string()))
}

/// Video id implied by a path: the manifest's id, or the file stem.
pub fn video_id_for(path: &Path) -> Option<String> {
    let name = path.file_name()?.to_str()?;
    match name.strip_suffix(SYNTHETIC_SUFFIX) {
        Some(stem) => SyntheticVideo::load(path)
            .map(|v| v.video_id)
            .ok()
            .or_else(|| Some(stem.to_string())),
        None => path.file_stem().and_then(|s| s.to_str()).map(str::to_string),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_frames_are_deterministic_pngs() {
        let v = SyntheticVideo::new("synth", 60.0);
        let a = v.frames(&[0.0, 12.5]).unwrap();
        let b = v.frames(&[0.0, 12.5]).unwrap();
        assert_eq!(a, b);
        let (mime, bytes) = a[1].image.load().unwrap();
        assert_eq!(mime, "image/png");
        assert_eq!(&bytes[1..4], b"PNG");
        assert_ne!(a[0].image, a[1].image);
        assert!(matches!(v.frames(&[61.0]), Err(VideoError::OutOfRange { .. })));
    }

    fn fake_decoder(body: &str) -> DecoderConfig {
        DecoderConfig {
            probe_command: vec!["sh".into(), "-c".into(), "echo 42.5".into()],
            extract_command: vec![
                "sh".into(),
                "-c".into(),
                body.into(),
                "{video}".into(),
                "{timestamps}".into(),
                "{outdir}".into(),
            ],
            frame_ext: "jpg".into(),
        }
    }

    #[test]
    fn command_decoder_collects_one_file_per_timestamp() {
        let dec = fake_decoder(
            "i=0; for t in $(echo \"$1\" | tr , ' '); do printf \"$t\" > \"$2/$(printf 'frame_%05d.jpg' $i)\"; i=$((i+1)); done",
        );
        let v = CommandVideo::open(Path::new("/videos/clip01.mp4"), dec).unwrap();
        assert_eq!(v.video_id(), "clip01");
        assert_eq!(v.duration(), 42.5);
        let frames = v.frames(&[1.0, 2.5]).unwrap();
        assert_eq!(frames.len(), 2);
        let (mime, bytes) = frames[1].image.load().unwrap();
        assert_eq!(mime, "image/jpeg");
        assert_eq!(bytes.as_slice(), b"2.500");
    }

    #[test]
    fn missing_output_or_bad_exit_fails_the_unit() {
        let dec = fake_decoder("exit 0");
        let v = CommandVideo::open(Path::new("x.mp4"), dec).unwrap();
        assert!(matches!(v.frames(&[1.0]), Err(VideoError::Decoder(_))));

        let dec = fake_decoder("exit 3");
        let v = CommandVideo::open(Path::new("x.mp4"), dec).unwrap();
        assert!(matches!(v.frames(&[1.0]), Err(VideoError::Decoder(_))));
    }

    #[test]
    fn find_video_prefers_manifest() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("abc.mp4"), b"").unwrap();
        assert_eq!(find_video(dir.path(), "abc").unwrap(), dir.path().join("abc.mp4"));
        let manifest = dir.path().join("abc.synth.json");
        std::fs::write(
            &manifest,
            serde_json::to_string(&SyntheticVideo::new("abc", 10.0)).unwrap(),
        )
        .unwrap();
        assert_eq!(find_video(dir.path(), "abc").unwrap(), manifest);
        assert_eq!(video_id_for(&manifest).as_deref(), Some("abc"));
        assert!(matches!(find_video(dir.path(), "zzz"), Err(VideoError::NotFound(_))));
    }
}
