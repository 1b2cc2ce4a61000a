//! Feature sources and per-video feature bundles.
//!
//! A source is either external (values arrive through RQVF sidecar files
//! written by some backbone model) or one of the built-in toy extractors.
//! Sidecars override toys of the same name.

pub mod sidecar;
pub mod toy;

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::gms::{make_plan, sample_fragments, DEFAULT_GRID_COUNT, DEFAULT_PATCH_SIZE};
use crate::preproc::{extract_chunks, extract_key_frames, BranchGeometry, CropMode, VideoFrames};

pub use sidecar::{load_sidecar, load_sidecar_for, save_sidecar, Sidecar};

/// Dimension of the LIQE probability vector: 9 scenes x 11 distortions x 5 levels.
pub const LIQE_DIM: usize = 495;
pub const QALIGN_DIM: usize = 4096;
pub const SWIN_B_DIM: usize = 1024;
pub const SWIN_B_TOKENS: usize = 144;
pub const SLOWFAST_FAST_DIM: usize = 256;
pub const FAST_VQA_DIM: usize = 768;

pub const LIQE_PROMPT: &str =
    "a photo of a(n) {s} with {d} artifacts, which is of {c} quality";
pub const QALIGN_PROMPT: &str =
    "How is the quality of this image? <|image|> The quality of the image is [SCORE_TOKEN]";

const PROBABILITY_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Granularity {
    KeyFrame,
    Tokens,
    Chunk,
    Video,
}

impl Granularity {
    pub fn code(self) -> u8 {
        match self {
            Granularity::KeyFrame => 0,
            Granularity::Tokens => 1,
            Granularity::Chunk => 2,
            Granularity::Video => 3,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => Granularity::KeyFrame,
            1 => Granularity::Tokens,
            2 => Granularity::Chunk,
            3 => Granularity::Video,
            other => {
                return Err(Error::InvalidInput(format!("unknown granularity code {other}")))
            }
        })
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "keyframe" => Granularity::KeyFrame,
            "tokens" => Granularity::Tokens,
            "chunk" => Granularity::Chunk,
            "video" => Granularity::Video,
            other => return Err(Error::Config(format!("unknown granularity {other:?}"))),
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::KeyFrame => "keyframe",
            Granularity::Tokens => "tokens",
            Granularity::Chunk => "chunk",
            Granularity::Video => "video",
        }
    }
}

/// Position of a source in the fused feature vector. Variants are listed in
/// concatenation order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    Spatial,
    Temporal,
    Liqe,
    QAlign,
    Spatiotemporal,
}

impl Role {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => Role::Spatial,
            1 => Role::Temporal,
            2 => Role::Liqe,
            3 => Role::QAlign,
            4 => Role::Spatiotemporal,
            other => return Err(Error::InvalidInput(format!("unknown role code {other}"))),
        })
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "spatial" => Role::Spatial,
            "temporal" => Role::Temporal,
            "liqe" => Role::Liqe,
            "qalign" => Role::QAlign,
            "spatiotemporal" => Role::Spatiotemporal,
            other => return Err(Error::Config(format!("unknown role {other:?}"))),
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Spatial => "spatial",
            Role::Temporal => "temporal",
            Role::Liqe => "liqe",
            Role::QAlign => "qalign",
            Role::Spatiotemporal => "spatiotemporal",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Producer {
    /// Values must come from a sidecar.
    External,
    PixelStats,
    MotionStats,
    FragmentStats,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSource {
    pub name: String,
    pub granularity: Granularity,
    pub dim: usize,
    /// Tokens per key frame; 0 unless `granularity` is `Tokens`.
    pub token_count: usize,
    pub role: Role,
    pub producer: Producer,
    /// Rows are validated as probability vectors when set.
    pub probability: bool,
    /// Inert text prompt associated with the producing model.
    pub prompt_template: Option<String>,
}

impl FeatureSource {
    pub fn external(name: &str, granularity: Granularity, dim: usize) -> Self {
        let role = match granularity {
            Granularity::Chunk => Role::Temporal,
            Granularity::Video => Role::Spatiotemporal,
            _ => Role::Spatial,
        };
        Self {
            name: name.to_string(),
            granularity,
            dim,
            token_count: 0,
            role,
            producer: Producer::External,
            probability: false,
            prompt_template: None,
        }
    }

    pub fn pixelstats() -> Self {
        Self {
            producer: Producer::PixelStats,
            ..Self::external("pixelstats", Granularity::KeyFrame, toy::PIXELSTATS_DIM)
        }
    }

    pub fn motionstats() -> Self {
        Self {
            producer: Producer::MotionStats,
            ..Self::external("motionstats", Granularity::Chunk, toy::MOTIONSTATS_DIM)
        }
    }

    pub fn fragmentstats() -> Self {
        Self {
            producer: Producer::FragmentStats,
            ..Self::external("fragmentstats", Granularity::Video, toy::FRAGMENTSTATS_DIM)
        }
    }

    /// LIQE-style per-key-frame probability vector.
    pub fn liqe() -> Self {
        Self {
            role: Role::Liqe,
            probability: true,
            prompt_template: Some(LIQE_PROMPT.to_string()),
            ..Self::external("liqe", Granularity::KeyFrame, LIQE_DIM)
        }
    }

    pub fn qalign() -> Self {
        Self {
            role: Role::QAlign,
            prompt_template: Some(QALIGN_PROMPT.to_string()),
            ..Self::external("qalign", Granularity::KeyFrame, QALIGN_DIM)
        }
    }

    pub fn swin_tokens() -> Self {
        Self {
            token_count: SWIN_B_TOKENS,
            ..Self::external("swin", Granularity::Tokens, SWIN_B_DIM)
        }
    }

    pub fn slowfast() -> Self {
        Self::external("slowfast", Granularity::Chunk, SLOWFAST_FAST_DIM)
    }

    pub fn fast_vqa() -> Self {
        Self::external("fastvqa", Granularity::Video, FAST_VQA_DIM)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\', ',']) {
            return Err(Error::Config(format!("invalid source name {:?}", self.name)));
        }
        if self.dim == 0 {
            return Err(Error::Config(format!("source {}: dim must be >= 1", self.name)));
        }
        match (self.granularity, self.token_count) {
            (Granularity::Tokens, 0) => Err(Error::Config(format!(
                "source {}: token granularity needs token_count >= 1",
                self.name
            ))),
            (Granularity::Tokens, _) | (_, 0) => Ok(()),
            _ => Err(Error::Config(format!(
                "source {}: token_count only applies to token granularity",
                self.name
            ))),
        }?;
        let expected = match self.producer {
            Producer::External => None,
            Producer::PixelStats => Some((Granularity::KeyFrame, toy::PIXELSTATS_DIM)),
            Producer::MotionStats => Some((Granularity::Chunk, toy::MOTIONSTATS_DIM)),
            Producer::FragmentStats => Some((Granularity::Video, toy::FRAGMENTSTATS_DIM)),
        };
        if let Some((g, d)) = expected {
            if (g, d) != (self.granularity, self.dim) {
                return Err(Error::Config(format!(
                    "source {}: toy producer {:?} yields {}x{d}",
                    self.name,
                    self.producer,
                    g.as_str()
                )));
            }
        }
        Ok(())
    }
}

/// Immutable set of sources keyed by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Registry {
    sources: BTreeMap<String, FeatureSource>,
}

impl Registry {
    pub fn new(sources: impl IntoIterator<Item = FeatureSource>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for s in sources {
            s.validate()?;
            if map.contains_key(&s.name) {
                return Err(Error::Config(format!("duplicate source name {:?}", s.name)));
            }
            map.insert(s.name.clone(), s);
        }
        if map.is_empty() {
            return Err(Error::Config("registry has no sources".into()));
        }
        Ok(Self { sources: map })
    }

    /// The three built-in toy extractors.
    pub fn toy() -> Self {
        Self::new([
            FeatureSource::pixelstats(),
            FeatureSource::motionstats(),
            FeatureSource::fragmentstats(),
        ])
        .expect("toy registry is valid")
    }

    pub fn get(&self, name: &str) -> Option<&FeatureSource> {
        self.sources.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &FeatureSource> {
        self.sources.values()
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }
}

/// Dense row-major f32 matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                values.len()
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    /// Rows `start..start+n` as one contiguous slice.
    pub fn rows_slice(&self, start: usize, n: usize) -> &[f32] {
        &self.values[start * self.cols..(start + n) * self.cols]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBundle {
    pub video_id: String,
    /// Number of key frames / chunks (N_z).
    pub keyframe_count: usize,
    pub sources: BTreeMap<String, FeatureMatrix>,
}

impl FeatureBundle {
    pub fn get(&self, name: &str) -> Option<&FeatureMatrix> {
        self.sources.get(name)
    }

    /// Checks shapes, finiteness and probability rows against a registry.
    pub fn validate(&self, registry: &Registry) -> Result<()> {
        let missing: Vec<String> = registry
            .iter()
            .filter(|s| !self.sources.contains_key(&s.name))
            .map(|s| s.name.clone())
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingSources(missing));
        }
        for source in registry.iter() {
            let m = &self.sources[&source.name];
            if m.cols != source.dim {
                return Err(Error::DimMismatch {
                    source_name: source.name.clone(),
                    expected: source.dim,
                    found: m.cols,
                });
            }
            let expected_rows = match source.granularity {
                Granularity::KeyFrame | Granularity::Chunk => self.keyframe_count,
                Granularity::Tokens => self.keyframe_count * source.token_count,
                Granularity::Video => 1,
            };
            if m.rows != expected_rows {
                return Err(Error::CountMismatch {
                    source_name: source.name.clone(),
                    expected: expected_rows,
                    found: m.rows,
                });
            }
            if let Some(pos) = m.values.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "source {} entry {pos} of video {}",
                    source.name, self.video_id
                )));
            }
            if source.probability {
                for r in 0..m.rows {
                    let row = m.row(r);
                    let sum: f64 = row.iter().map(|&v| v as f64).sum();
                    if row.iter().any(|&v| v < 0.0) || (sum - 1.0).abs() > PROBABILITY_TOLERANCE {
                        return Err(Error::NotProbability {
                            source_name: source.name.clone(),
                            row: r,
                            sum,
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Frames feeding the fragment extractor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FragmentFrames {
    KeyFrames,
    AllFrames,
}

/// Settings for the toy extractors.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtractConfig {
    pub gms_grid: usize,
    pub gms_patch: usize,
    pub gms_seed: u64,
    pub fragment_frames: FragmentFrames,
    /// When set, key frames and chunk frames are resized / cropped with this
    /// geometry before the toy extractors see them.
    pub geometry: Option<BranchGeometry>,
    pub crop_seed: u64,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            gms_grid: DEFAULT_GRID_COUNT,
            gms_patch: DEFAULT_PATCH_SIZE,
            gms_seed: 0,
            fragment_frames: FragmentFrames::KeyFrames,
            geometry: None,
            crop_seed: 0,
        }
    }
}

fn to_matrix(rows: Vec<Vec<f64>>, cols: usize) -> FeatureMatrix {
    let n = rows.len();
    let values = rows.into_iter().flatten().map(|v| v as f32).collect();
    FeatureMatrix::new(n, cols, values).expect("extractor rows have fixed width")
}

fn run_toy(source: &FeatureSource, video: &VideoFrames, cfg: &ExtractConfig) -> Result<FeatureMatrix> {
    match source.producer {
        Producer::PixelStats => {
            let keys = extract_key_frames(video)?;
            let rows = keys
                .frames
                .iter()
                .map(|f| match &cfg.geometry {
                    Some(g) => g
                        .key_frame(f, CropMode::Center, cfg.crop_seed)
                        .map(|f| toy::pixel_stats(&f).to_vec()),
                    None => Ok(toy::pixel_stats(f).to_vec()),
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(to_matrix(rows, source.dim))
        }
        Producer::MotionStats => {
            let chunks = extract_chunks(video)?;
            let rows = chunks
                .chunks
                .iter()
                .map(|c| match &cfg.geometry {
                    Some(g) => {
                        let frames = c
                            .frames
                            .iter()
                            .map(|f| g.chunk_frame(f))
                            .collect::<Result<Vec<_>>>()?;
                        toy::motion_stats(&frames).map(|s| s.to_vec())
                    }
                    None => toy::motion_stats(&c.frames).map(|s| s.to_vec()),
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(to_matrix(rows, source.dim))
        }
        Producer::FragmentStats => {
            let plan = make_plan(
                video.width(),
                video.height(),
                cfg.gms_grid,
                cfg.gms_patch,
                cfg.gms_seed,
            )?;
            let volume = match cfg.fragment_frames {
                FragmentFrames::KeyFrames => {
                    sample_fragments(&extract_key_frames(video)?.frames, &plan)?
                }
                FragmentFrames::AllFrames => sample_fragments(video.frames(), &plan)?,
            };
            Ok(to_matrix(vec![toy::fragment_stats(&volume).to_vec()], source.dim))
        }
        Producer::External => unreachable!("external sources have no toy producer"),
    }
}

fn sidecar_path(dir: &Path, name: &str) -> std::path::PathBuf {
    dir.join(format!("{name}.{}", sidecar::EXTENSION))
}

/// Builds and validates the bundle for one video. `video` may be absent when
/// every source is served by a sidecar; N_z is then read from the sidecars.
pub fn assemble_bundle(
    video_id: &str,
    video: Option<&VideoFrames>,
    registry: &Registry,
    sidecar_dir: Option<&Path>,
    cfg: &ExtractConfig,
) -> Result<FeatureBundle> {
    let mut loaded = BTreeMap::new();
    let mut missing = Vec::new();
    let mut pending_toys = Vec::new();
    for source in registry.iter() {
        let path = sidecar_dir.map(|d| sidecar_path(d, &source.name));
        match path.filter(|p| p.is_file()) {
            Some(p) => {
                let s = load_sidecar_for(&p, source)?;
                loaded.insert(source.name.clone(), s);
            }
            None if source.producer != Producer::External && video.is_some() => {
                pending_toys.push(source)
            }
            None => missing.push(source.name.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingSources(missing));
    }

    let keyframe_count = match video {
        Some(v) => v.keyframe_count(),
        None => loaded
            .values()
            .find(|s| s.granularity != Granularity::Video)
            .map(|s| s.count)
            .ok_or_else(|| {
                Error::InvalidInput(format!(
                    "video {video_id}: cannot infer key-frame count without frames or a per-frame sidecar"
                ))
            })?,
    };

    let mut sources = BTreeMap::new();
    for (name, s) in loaded {
        let expected = match s.granularity {
            Granularity::Video => 1,
            _ => keyframe_count,
        };
        if s.count != expected {
            return Err(Error::CountMismatch {
                source_name: name,
                expected,
                found: s.count,
            });
        }
        let rows = s.rows();
        sources.insert(name, FeatureMatrix::new(rows, s.dim, s.values)?);
    }
    if let Some(v) = video {
        for source in pending_toys {
            sources.insert(source.name.clone(), run_toy(source, v, cfg)?);
        }
    }
    let bundle = FeatureBundle {
        video_id: video_id.to_string(),
        keyframe_count,
        sources,
    };
    bundle.validate(registry)?;
    Ok(bundle)
}

/// Splits one bundle matrix back into a sidecar for the named source.
pub fn bundle_sidecar(bundle: &FeatureBundle, source: &FeatureSource) -> Result<Sidecar> {
    let m = bundle
        .get(&source.name)
        .ok_or_else(|| Error::MissingSources(vec![source.name.clone()]))?;
    let count = match source.granularity {
        Granularity::Video => 1,
        _ => bundle.keyframe_count,
    };
    Ok(Sidecar {
        name: source.name.clone(),
        granularity: source.granularity,
        count,
        token_count: source.token_count,
        dim: source.dim,
        values: m.values.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preproc::Frame;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn video(seconds: usize, fps: u32, seed: u64) -> VideoFrames {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = (0..seconds * fps as usize)
            .map(|_| Frame::new(32, 32, (0..32 * 32 * 3).map(|_| rng.random()).collect()).unwrap())
            .collect();
        VideoFrames::new(frames, fps).unwrap()
    }

    fn small_cfg() -> ExtractConfig {
        ExtractConfig {
            gms_grid: 2,
            gms_patch: 8,
            ..ExtractConfig::default()
        }
    }

    #[test]
    fn toy_bundle_shapes() {
        let v = video(3, 4, 1);
        let b = assemble_bundle("v", Some(&v), &Registry::toy(), None, &small_cfg()).unwrap();
        assert_eq!(b.keyframe_count, 3);
        assert_eq!((b.get("pixelstats").unwrap().rows, b.get("pixelstats").unwrap().cols), (3, 16));
        assert_eq!((b.get("motionstats").unwrap().rows, b.get("motionstats").unwrap().cols), (3, 8));
        assert_eq!((b.get("fragmentstats").unwrap().rows, b.get("fragmentstats").unwrap().cols), (1, 16));
    }

    #[test]
    fn registry_order_does_not_matter() {
        let v = video(2, 4, 2);
        let a = Registry::new([
            FeatureSource::fragmentstats(),
            FeatureSource::pixelstats(),
            FeatureSource::motionstats(),
        ])
        .unwrap();
        let b = Registry::toy();
        assert_eq!(a, b);
        let ba = assemble_bundle("v", Some(&v), &a, None, &small_cfg()).unwrap();
        let bb = assemble_bundle("v", Some(&v), &b, None, &small_cfg()).unwrap();
        assert_eq!(ba, bb);
    }

    #[test]
    fn duplicate_names_rejected() {
        assert!(Registry::new([FeatureSource::pixelstats(), FeatureSource::pixelstats()]).is_err());
    }

    #[test]
    fn missing_external_sources_listed() {
        let v = video(2, 4, 3);
        let reg = Registry::new([FeatureSource::liqe(), FeatureSource::fast_vqa(), FeatureSource::pixelstats()])
            .unwrap();
        match assemble_bundle("v", Some(&v), &reg, None, &small_cfg()) {
            Err(Error::MissingSources(names)) => assert_eq!(names, vec!["fastvqa", "liqe"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sidecar_overrides_toy_and_counts_checked() {
        let dir = tempfile::tempdir().unwrap();
        let v = video(3, 4, 4);
        let s = Sidecar {
            name: "pixelstats".into(),
            granularity: Granularity::KeyFrame,
            count: 3,
            token_count: 0,
            dim: 16,
            values: vec![0.25; 48],
        };
        save_sidecar(&s, &dir.path().join("pixelstats.rqvf")).unwrap();
        let b = assemble_bundle("v", Some(&v), &Registry::toy(), Some(dir.path()), &small_cfg()).unwrap();
        assert!(b.get("pixelstats").unwrap().values.iter().all(|&x| x == 0.25));

        let short = Sidecar {
            count: 2,
            values: vec![0.25; 32],
            ..s
        };
        save_sidecar(&short, &dir.path().join("pixelstats.rqvf")).unwrap();
        assert!(matches!(
            assemble_bundle("v", Some(&v), &Registry::toy(), Some(dir.path()), &small_cfg()),
            Err(Error::CountMismatch { expected: 3, found: 2, .. })
        ));
    }

    #[test]
    fn liqe_rows_must_be_distributions() {
        let dir = tempfile::tempdir().unwrap();
        let mut src = FeatureSource::liqe();
        src.dim = 4;
        let reg = Registry::new([src]).unwrap();
        let mut values = vec![0.25f32; 12];
        values[4..8].copy_from_slice(&[0.3, 0.3, 0.2, 0.1]);
        let s = Sidecar {
            name: "liqe".into(),
            granularity: Granularity::KeyFrame,
            count: 3,
            token_count: 0,
            dim: 4,
            values,
        };
        save_sidecar(&s, &dir.path().join("liqe.rqvf")).unwrap();
        let err = assemble_bundle("v", None, &reg, Some(dir.path()), &small_cfg()).unwrap_err();
        assert!(matches!(err, Error::NotProbability { row: 1, .. }));
        assert!(err.to_string().starts_with("probability rows must sum to 1"));

        let mut reg_src = FeatureSource::liqe();
        reg_src.dim = 4;
        reg_src.probability = false;
        let reg = Registry::new([reg_src]).unwrap();
        assert!(assemble_bundle("v", None, &reg, Some(dir.path()), &small_cfg()).is_ok());
    }

    #[test]
    fn bundle_round_trips_through_sidecars() {
        let dir = tempfile::tempdir().unwrap();
        let v = video(2, 4, 5);
        let reg = Registry::toy();
        let b = assemble_bundle("v", Some(&v), &reg, None, &small_cfg()).unwrap();
        for s in reg.iter() {
            let sc = bundle_sidecar(&b, s).unwrap();
            save_sidecar(&sc, &dir.path().join(format!("{}.rqvf", s.name))).unwrap();
        }
        let back = assemble_bundle("v", None, &reg, Some(dir.path()), &small_cfg()).unwrap();
        assert_eq!(back, b);
    }
}
