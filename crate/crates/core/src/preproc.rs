//! Video representation, key-frame / chunk extraction, and branch geometry.
//!
//! Videos are stored as raw frame directories: a `meta.txt` with
//! `width=`, `height=`, `fps=`, `frames=` lines and one `frame_%06d.rgb`
//! file per frame holding `height * width * 3` interleaved RGB bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// One 8-bit RGB frame, row-major, interleaved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Frame {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Geometry(format!("zero-sized frame {width}x{height}")));
        }
        if data.len() != width * height * 3 {
            return Err(Error::Geometry(format!(
                "frame buffer has {} bytes, expected {}",
                data.len(),
                width * height * 3
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Copies the `w`x`h` window with top-left corner `(x0, y0)`.
    pub fn window(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Frame> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(Error::Geometry(format!(
                "window {w}x{h}+{x0}+{y0} outside {}x{} frame",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h * 3);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * 3;
            data.extend_from_slice(&self.data[start..start + w * 3]);
        }
        Frame::new(w, h, data)
    }
}

/// A decoded video: frames plus geometry and an integer frame rate.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoFrames {
    frames: Vec<Frame>,
    width: usize,
    height: usize,
    frame_rate: u32,
}

impl VideoFrames {
    pub fn new(frames: Vec<Frame>, frame_rate: u32) -> Result<Self> {
        if frame_rate == 0 {
            return Err(Error::Metadata("frame rate must be at least 1".into()));
        }
        let first = frames
            .first()
            .ok_or_else(|| Error::Metadata("video has no frames".into()))?;
        let (width, height) = (first.width, first.height);
        if let Some((i, f)) = frames
            .iter()
            .enumerate()
            .find(|(_, f)| f.width != width || f.height != height)
        {
            return Err(Error::Metadata(format!(
                "frame {i} is {}x{}, expected {width}x{height}",
                f.width, f.height
            )));
        }
        if frames.len() < frame_rate as usize {
            return Err(Error::TooShort {
                frames: frames.len(),
                fps: frame_rate,
            });
        }
        Ok(Self {
            frames,
            width,
            height,
            frame_rate,
        })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn frame_rate(&self) -> u32 {
        self.frame_rate
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    /// Number of complete one-second segments.
    pub fn keyframe_count(&self) -> usize {
        self.frames.len() / self.frame_rate as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KeyFrameSet {
    pub frames: Vec<Frame>,
    pub source_indices: Vec<usize>,
}

impl KeyFrameSet {
    pub fn count(&self) -> usize {
        self.frames.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Chunk {
    pub start: usize,
    pub frames: Vec<Frame>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChunkSet {
    pub chunks: Vec<Chunk>,
}

impl ChunkSet {
    pub fn count(&self) -> usize {
        self.chunks.len()
    }
}

const META_FILE: &str = "meta.txt";

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.rgb")
}

fn parse_meta(text: &str) -> Result<(usize, usize, u32, usize)> {
    let mut width = None;
    let mut height = None;
    let mut fps = None;
    let mut frames = None;
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Metadata(format!("malformed line {line:?}")))?;
        let value = value.trim();
        let parse_usize = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| Error::Metadata(format!("{key} must be a non-negative integer, got {v:?}")))
        };
        match key.trim() {
            "width" => width = Some(parse_usize(value)?),
            "height" => height = Some(parse_usize(value)?),
            "frames" => frames = Some(parse_usize(value)?),
            "fps" => {
                fps = Some(value.parse::<u32>().map_err(|_| {
                    Error::Metadata(format!("fps must be a positive integer, got {value:?}"))
                })?)
            }
            other => return Err(Error::Metadata(format!("unknown key {other:?}"))),
        }
    }
    let missing = |k: &str| Error::Metadata(format!("missing {k}="));
    let width = width.ok_or_else(|| missing("width"))?;
    let height = height.ok_or_else(|| missing("height"))?;
    let fps = fps.ok_or_else(|| missing("fps"))?;
    let frames = frames.ok_or_else(|| missing("frames"))?;
    if width == 0 || height == 0 {
        return Err(Error::Metadata(format!("zero-sized geometry {width}x{height}")));
    }
    if fps == 0 {
        return Err(Error::Metadata("fps must be at least 1".into()));
    }
    Ok((width, height, fps, frames))
}

/// Returns true when `dir` looks like a raw video directory.
pub fn is_raw_video_dir(dir: &Path) -> bool {
    dir.join(META_FILE).is_file()
}

pub fn load_raw_video(dir: &Path) -> Result<VideoFrames> {
    let meta_path = dir.join(META_FILE);
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let (width, height, fps, count) = parse_meta(&text)?;
    let expected = width * height * 3;
    let mut frames = Vec::with_capacity(count);
    for index in 0..count {
        let path = dir.join(frame_file_name(index));
        let data = match fs::read(&path) {
            Ok(d) => d,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::FrameMissing { index })
            }
            Err(e) => return Err(Error::io(path, e)),
        };
        if data.len() != expected {
            return Err(Error::FrameShort {
                index,
                expected,
                found: data.len(),
            });
        }
        frames.push(Frame::new(width, height, data)?);
    }
    VideoFrames::new(frames, fps)
}

pub fn save_raw_video(video: &VideoFrames, dir: &Path) -> Result<()> {
    save_frames(video.frames(), video.frame_rate(), dir)
}

/// Writes an arbitrary frame sequence in the raw directory layout. Unlike
/// [`save_raw_video`] this does not require a full second of frames, so it
/// can dump key-frame sets and fragment volumes.
pub fn save_frames(frames: &[Frame], fps: u32, dir: &Path) -> Result<()> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidInput("no frames to save".into()))?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut meta = String::new();
    let _ = writeln!(meta, "width={}", first.width);
    let _ = writeln!(meta, "height={}", first.height);
    let _ = writeln!(meta, "fps={fps}");
    let _ = writeln!(meta, "frames={}", frames.len());
    let meta_path = dir.join(META_FILE);
    fs::write(&meta_path, meta).map_err(|e| Error::io(&meta_path, e))?;
    for (i, f) in frames.iter().enumerate() {
        let path = dir.join(frame_file_name(i));
        fs::write(&path, &f.data).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn extract_key_frames(video: &VideoFrames) -> Result<KeyFrameSet> {
    let r = video.frame_rate as usize;
    let count = video.keyframe_count();
    if count == 0 {
        return Err(Error::TooShort {
            frames: video.frame_count(),
            fps: video.frame_rate,
        });
    }
    let source_indices: Vec<usize> = (0..count).map(|i| i * r).collect();
    let frames = source_indices
        .iter()
        .map(|&i| video.frames[i].clone())
        .collect();
    Ok(KeyFrameSet {
        frames,
        source_indices,
    })
}

pub fn extract_chunks(video: &VideoFrames) -> Result<ChunkSet> {
    let r = video.frame_rate as usize;
    let count = video.keyframe_count();
    if count == 0 {
        return Err(Error::TooShort {
            frames: video.frame_count(),
            fps: video.frame_rate,
        });
    }
    let chunks = video.frames[..count * r]
        .chunks_exact(r)
        .enumerate()
        .map(|(i, frames)| Chunk {
            start: i * r,
            frames: frames.to_vec(),
        })
        .collect();
    Ok(ChunkSet { chunks })
}

/// Bilinear resample with half-pixel centre alignment and edge clamping.
fn bilinear(frame: &Frame, w: usize, h: usize) -> Frame {
    if w == frame.width && h == frame.height {
        return frame.clone();
    }
    let sx = frame.width as f64 / w as f64;
    let sy = frame.height as f64 / h as f64;
    let max_x = (frame.width - 1) as f64;
    let max_y = (frame.height - 1) as f64;
    // Per-axis source taps are shared by every row/column.
    let taps = |n: usize, scale: f64, max: f64| -> Vec<(usize, usize, f64)> {
        (0..n)
            .map(|o| {
                let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, max);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(max as usize);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let xt = taps(w, sx, max_x);
    let yt = taps(h, sy, max_y);
    let src = &frame.data;
    let stride = frame.width * 3;
    let mut out = Vec::with_capacity(w * h * 3);
    for &(y0, y1, fy) in &yt {
        for &(x0, x1, fx) in &xt {
            for c in 0..3 {
                let p00 = src[y0 * stride + x0 * 3 + c] as f64;
                let p01 = src[y0 * stride + x1 * 3 + c] as f64;
                let p10 = src[y1 * stride + x0 * 3 + c] as f64;
                let p11 = src[y1 * stride + x1 * 3 + c] as f64;
                let top = p00 + (p01 - p00) * fx;
                let bottom = p10 + (p11 - p10) * fx;
                let v = top + (bottom - top) * fy;
                out.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Frame {
        width: w,
        height: h,
        data: out,
    }
}

/// Output size for a min-side resize: the short side becomes `target`, the
/// long side is scaled by the same ratio and rounded half-up in exact
/// integer arithmetic.
pub fn min_side_dims(width: usize, height: usize, target: usize) -> (usize, usize) {
    let scale = |long: usize, short: usize| (2 * long * target + short) / (2 * short);
    if width <= height {
        (target, scale(height, width))
    } else {
        (scale(width, height), target)
    }
}

pub fn resize_min_side(frame: &Frame, target: usize) -> Result<Frame> {
    if target == 0 {
        return Err(Error::Geometry("resize target must be at least 1".into()));
    }
    let (w, h) = min_side_dims(frame.width, frame.height, target);
    Ok(bilinear(frame, w, h))
}

pub fn resize_exact(frame: &Frame, w: usize, h: usize) -> Result<Frame> {
    if w == 0 || h == 0 {
        return Err(Error::Geometry(format!("zero resize target {w}x{h}")));
    }
    Ok(bilinear(frame, w, h))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CropMode {
    Center,
    Random,
}

/// Top-left corner of a `size`x`size` crop window.
pub fn crop_origin(
    width: usize,
    height: usize,
    size: usize,
    mode: CropMode,
    seed: u64,
) -> Result<(usize, usize)> {
    if size == 0 || width < size || height < size {
        return Err(Error::Geometry(format!(
            "cannot crop {size}x{size} from {width}x{height} frame"
        )));
    }
    Ok(match mode {
        CropMode::Center => ((width - size) / 2, (height - size) / 2),
        CropMode::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rng.random_range(0..=width - size);
            let y = rng.random_range(0..=height - size);
            (x, y)
        }
    })
}

pub fn crop(frame: &Frame, size: usize, mode: CropMode, seed: u64) -> Result<Frame> {
    let (x0, y0) = crop_origin(frame.width, frame.height, size, mode, seed)?;
    frame.window(x0, y0, size, size)
}

/// Resize / crop settings applied before frames reach a feature branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BranchGeometry {
    pub keyframe_min_side: usize,
    pub keyframe_crop: usize,
    pub chunk_size: usize,
}

impl Default for BranchGeometry {
    fn default() -> Self {
        Self {
            keyframe_min_side: 384,
            keyframe_crop: 384,
            chunk_size: 224,
        }
    }
}

impl BranchGeometry {
    /// Key-frame branch: min-side resize then square crop.
    pub fn key_frame(&self, frame: &Frame, mode: CropMode, seed: u64) -> Result<Frame> {
        let resized = resize_min_side(frame, self.keyframe_min_side)?;
        crop(&resized, self.keyframe_crop, mode, seed)
    }

    /// Chunk branch: exact square resize, aspect ratio discarded.
    pub fn chunk_frame(&self, frame: &Frame) -> Result<Frame> {
        resize_exact(frame, self.chunk_size, self.chunk_size)
    }
}
