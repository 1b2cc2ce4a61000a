//! Procedural corpus: moving noise-textured scenes with seeded blur, temporal noise
//! and blockiness. Every scene contributes one pristine clip plus degraded
//! variants, each with a single distortion type.
//!
//! `mos = 5 - 4 * (0.5 * blur + 0.3 * noise + 0.2 * block)` with levels in [0, 1].
//! Blur is Gaussian with `sigma = 2.5 * blur`, noise is i.i.d. Gaussian with
//! standard deviation `40 * noise` grey levels, and blockiness mixes each
//! pixel towards its 8x8 block mean with weight `block`.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::manifest::{DatasetManifest, Record};
use super::split::derive_seed;
use crate::error::{Error, Result};
use crate::preproc::{save_raw_video, Frame, VideoFrames};

pub const MIN_VIDEOS: usize = 20;
pub const MAX_BLUR_SIGMA: f64 = 2.5;
pub const MAX_NOISE_STD: f64 = 40.0;
pub const BLOCK_SIZE: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DistortionKind {
    Blur,
    Noise,
    Block,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Levels {
    pub blur: f64,
    pub noise: f64,
    pub block: f64,
}

impl Levels {
    pub fn mos(&self) -> f64 {
        5.0 - 4.0 * (0.5 * self.blur + 0.3 * self.noise + 0.2 * self.block)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthOptions {
    pub width: usize,
    pub height: usize,
    pub fps: u32,
    pub seconds: usize,
    /// Clips per scene including the pristine one.
    pub variants_per_scene: usize,
    /// Distortion types assigned to degraded variants in rotation.
    pub kinds: Vec<DistortionKind>,
    /// Degraded levels are drawn uniformly from `[min_level, 1]`.
    pub min_level: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            width: 48,
            height: 48,
            fps: 4,
            seconds: 2,
            variants_per_scene: 6,
            kinds: vec![DistortionKind::Blur, DistortionKind::Noise, DistortionKind::Block],
            min_level: 0.1,
        }
    }
}

/// Random appearance of one pristine scene: a toroidal filtered-noise
/// texture translated by whole pixels each frame, plus a drifting smooth
/// colour gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    texture: Vec<f64>,
    width: usize,
    height: usize,
    velocity: (isize, isize),
    gradient: (f64, f64),
    base: [f64; 3],
    gain: [f64; 3],
    grad_gain: [f64; 3],
}

/// Texture standard deviation in grey levels.
pub const TEXTURE_AMPLITUDE: f64 = 40.0;

fn wrap_blur(plane: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (wi, hi) = (w as isize, h as isize);
    let mut tmp = vec![0.0; plane.len()];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * plane[y * w + (x as isize + j as isize - r).rem_euclid(wi) as usize])
                .sum();
        }
    }
    let mut out = vec![0.0; plane.len()];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * tmp[(y as isize + j as isize - r).rem_euclid(hi) as usize * w + x])
                .sum();
        }
    }
    out
}

fn standardize(v: &mut [f64]) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt().max(1e-12);
    v.iter_mut().for_each(|x| *x = (*x - m) / sd);
}

impl Scene {
    pub fn random(seed: u64, width: usize, height: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let white: Vec<f64> = (0..width * height).map(|_| normal.sample(&mut rng)).collect();
        let mut fine = wrap_blur(&white, width, height, 1.0);
        let mut coarse = wrap_blur(&white, width, height, 4.0);
        standardize(&mut fine);
        standardize(&mut coarse);
        let mut texture: Vec<f64> = fine.iter().zip(&coarse).map(|(f, c)| f + 0.5 * c).collect();
        standardize(&mut texture);
        let mut velocity = (0, 0);
        while velocity == (0, 0) {
            velocity = (rng.random_range(-2i32..=2) as isize, rng.random_range(-2i32..=2) as isize);
        }
        Self {
            texture,
            width,
            height,
            velocity,
            gradient: (rng.random_range(0.0..TAU), rng.random_range(0.05..0.2)),
            base: std::array::from_fn(|_| rng.random_range(100.0..155.0)),
            gain: std::array::from_fn(|_| rng.random_range(0.8..1.0)),
            grad_gain: std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
        }
    }

    /// Pristine frames as interleaved floating-point RGB planes.
    fn render(&self, opts: &SynthOptions) -> Vec<Vec<f64>> {
        let (w, h) = (self.width, self.height);
        let period = w.max(h) as f64;
        let (theta, speed) = self.gradient;
        (0..opts.fps as usize * opts.seconds)
            .map(|f| {
                let t = f as f64 / opts.fps as f64;
                let (dx, dy) = (self.velocity.0 * f as isize, self.velocity.1 * f as isize);
                let mut out = vec![0.0; w * h * 3];
                for y in 0..h {
                    let sy = (y as isize + dy).rem_euclid(h as isize) as usize;
                    for x in 0..w {
                        let sx = (x as isize + dx).rem_euclid(w as isize) as usize;
                        let tex = self.texture[sy * w + sx];
                        let g = (TAU * (0.5 * (x as f64 * theta.cos() + y as f64 * theta.sin()) / period + speed * t))
                            .sin();
                        let o = (y * w + x) * 3;
                        for c in 0..3 {
                            out[o + c] =
                                self.base[c] + TEXTURE_AMPLITUDE * self.gain[c] * tex + 25.0 * self.grad_gain[c] * g;
                        }
                    }
                }
                out
            })
            .collect()
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur with clamped borders on an interleaved RGB plane.
pub fn gaussian_blur(data: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return data.to_vec();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut dst = vec![0.0; src.len()];
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let mut acc = 0.0;
                    for (j, kv) in k.iter().enumerate() {
                        let d = j as isize - r;
                        let (sx, sy) = if horizontal {
                            ((x as isize + d).clamp(0, w as isize - 1) as usize, y)
                        } else {
                            (x, (y as isize + d).clamp(0, h as isize - 1) as usize)
                        };
                        acc += kv * src[(sy * w + sx) * 3 + c];
                    }
                    dst[(y * w + x) * 3 + c] = acc;
                }
            }
        }
        dst
    };
    pass(&pass(data, true), false)
}

fn blockify(data: &mut [f64], w: usize, h: usize, weight: f64) {
    for by in (0..h).step_by(BLOCK_SIZE) {
        for bx in (0..w).step_by(BLOCK_SIZE) {
            let (ey, ex) = ((by + BLOCK_SIZE).min(h), (bx + BLOCK_SIZE).min(w));
            let n = ((ey - by) * (ex - bx)) as f64;
            for c in 0..3 {
                let mut mean = 0.0;
                for y in by..ey {
                    for x in bx..ex {
                        mean += data[(y * w + x) * 3 + c];
                    }
                }
                mean /= n;
                for y in by..ey {
                    for x in bx..ex {
                        let p = &mut data[(y * w + x) * 3 + c];
                        *p = (1.0 - weight) * *p + weight * mean;
                    }
                }
            }
        }
    }
}

/// Renders `scene` under `levels`. `noise_seed` drives the temporal noise.
pub fn render_video(scene: &Scene, levels: Levels, opts: &SynthOptions, noise_seed: u64) -> Result<VideoFrames> {
    let (w, h) = (scene.width, scene.height);
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let frames = scene
        .render(opts)
        .into_iter()
        .map(|plane| {
            let mut p = gaussian_blur(&plane, w, h, MAX_BLUR_SIGMA * levels.blur);
            if levels.block > 0.0 {
                blockify(&mut p, w, h, levels.block);
            }
            if levels.noise > 0.0 {
                let sd = MAX_NOISE_STD * levels.noise;
                for v in p.iter_mut() {
                    *v += sd * normal.sample(&mut rng);
                }
            }
            Frame::new(w, h, p.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    VideoFrames::new(frames, opts.fps)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthVideo {
    pub video_id: String,
    pub scene_id: String,
    pub scene_seed: u64,
    pub noise_seed: u64,
    pub levels: Levels,
}

/// Deterministic corpus layout: ids, scenes, seeds and distortion levels.
pub fn plan_corpus(n_videos: usize, seed: u64, opts: &SynthOptions) -> Result<Vec<SynthVideo>> {
    if n_videos < MIN_VIDEOS {
        return Err(Error::InvalidInput(format!(
            "synthetic corpus needs at least {MIN_VIDEOS} videos, got {n_videos}"
        )));
    }
    if opts.variants_per_scene < 2 || opts.kinds.is_empty() || !(0.0..=1.0).contains(&opts.min_level) {
        return Err(Error::InvalidInput(
            "need >= 2 variants per scene, at least one distortion kind and min_level in [0, 1]".into(),
        ));
    }
    let mut level_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 12, 0));
    let mut out = Vec::with_capacity(n_videos);
    for i in 0..n_videos {
        let scene = i / opts.variants_per_scene;
        let variant = i % opts.variants_per_scene;
        let mut levels = Levels::default();
        if variant > 0 {
            let level = level_rng.random_range(opts.min_level..=1.0);
            match opts.kinds[(variant - 1 + scene) % opts.kinds.len()] {
                DistortionKind::Blur => levels.blur = level,
                DistortionKind::Noise => levels.noise = level,
                DistortionKind::Block => levels.block = level,
            }
        }
        out.push(SynthVideo {
            video_id: format!("s{scene:03}_v{variant}"),
            scene_id: format!("scene{scene:03}"),
            scene_seed: derive_seed(seed, 10, scene as u32),
            noise_seed: derive_seed(seed, 11, i as u32),
            levels,
        });
    }
    Ok(out)
}

/// Config text suited to the generated resolution.
pub fn corpus_config_text(opts: &SynthOptions) -> String {
    let side = opts.width.min(opts.height);
    let grid = 4;
    let patch = (side / grid).clamp(1, 16);
    format!("# generated alongside the synthetic corpus\ngms_grid = {grid}\ngms_patch = {patch}\n")
}

/// Writes `videos/<id>/` raw directories, `manifest.csv`, `levels.csv` and
/// `corpus.conf` under `out_dir`.
pub fn make_synthetic_corpus(out_dir: &Path, n_videos: usize, seed: u64, opts: &SynthOptions) -> Result<DatasetManifest> {
    let plan = plan_corpus(n_videos, seed, opts)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let videos_dir = out_dir.join("videos");
    plan.par_iter()
        .map(|v| {
            let video = render_video(&Scene::random(v.scene_seed, opts.width, opts.height), v.levels, opts, v.noise_seed)?;
            save_raw_video(&video, &videos_dir.join(&v.video_id))
        })
        .collect::<Result<Vec<()>>>()?;
    let manifest = DatasetManifest::new(
        plan.iter()
            .map(|v| Record {
                video_id: v.video_id.clone(),
                path: videos_dir.join(&v.video_id),
                mos: v.levels.mos(),
                scene_id: v.scene_id.clone(),
            })
            .collect(),
    )?;
    manifest.save(&out_dir.join("manifest.csv"))?;
    let mut levels = String::from("video_id,blur,noise,block\n");
    for v in &plan {
        levels.push_str(&format!("{},{},{},{}\n", v.video_id, v.levels.blur, v.levels.noise, v.levels.block));
    }
    let p = out_dir.join("levels.csv");
    fs::write(&p, levels).map_err(|e| Error::io(&p, e))?;
    let p = out_dir.join("corpus.conf");
    fs::write(&p, corpus_config_text(opts)).map_err(|e| Error::io(&p, e))?;
    Ok(manifest)
}
