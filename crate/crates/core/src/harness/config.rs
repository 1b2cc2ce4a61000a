//! `key = value` run configuration. Blank lines and `#` comments are ignored.
//! Sources are listed with `sources = a,b,c`; built-in names
//! (`pixelstats`, `motionstats`, `fragmentstats`, `liqe`, `qalign`, `swin`,
//! `slowfast`, `fastvqa`) start from their presets and any field can be
//! overridden with `source.<name>.<field> = value`, where field is one of
//! `granularity`, `dim`, `tokens`, `role`, `probability`, `producer`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::split::Grouping;
use crate::error::{Error, Result};
use crate::features::{
    ExtractConfig, FeatureSource, FragmentFrames, Granularity, Producer, Registry, Role,
};
use crate::fusion::{Activation, HeadConfig, LossKind, TrainConfig};
use crate::preproc::BranchGeometry;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Combiner {
    Mean,
    Median,
}

impl Combiner {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Combiner::Mean),
            "median" => Ok(Combiner::Median),
            other => Err(Error::Config(format!("unknown combiner {other:?}"))),
        }
    }

    pub fn combine(self, values: &mut [f64]) -> f64 {
        match self {
            Combiner::Mean => values.iter().sum::<f64>() / values.len() as f64,
            Combiner::Median => {
                values.sort_by(f64::total_cmp);
                let n = values.len();
                if n % 2 == 1 {
                    values[n / 2]
                } else {
                    0.5 * (values[n / 2 - 1] + values[n / 2])
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub head: HeadConfig,
    pub registry: Registry,
    pub extract: ExtractConfig,
    pub split_ratio: f64,
    pub grouping: Grouping,
    pub repeats: usize,
    pub ensemble_k: usize,
    pub combiner: Combiner,
    /// Root of all derived split / training seeds.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            head: HeadConfig::default(),
            registry: Registry::toy(),
            extract: ExtractConfig::default(),
            split_ratio: 0.8,
            grouping: Grouping::ByScene,
            repeats: 5,
            ensemble_k: 10,
            combiner: Combiner::Mean,
            seed: 0,
        }
    }
}

fn preset(name: &str) -> Option<FeatureSource> {
    Some(match name {
        "pixelstats" => FeatureSource::pixelstats(),
        "motionstats" => FeatureSource::motionstats(),
        "fragmentstats" => FeatureSource::fragmentstats(),
        "liqe" => FeatureSource::liqe(),
        "qalign" => FeatureSource::qalign(),
        "swin" => FeatureSource::swin_tokens(),
        "slowfast" => FeatureSource::slowfast(),
        "fastvqa" => FeatureSource::fast_vqa(),
        _ => return None,
    })
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {v:?}"))),
    }
}

/// Splits `key = value` lines into ordered pairs.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_pairs(&parse_pairs(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Later pairs override earlier ones.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut source_names: Option<Vec<String>> = None;
        let mut source_fields: BTreeMap<String, Vec<(String, String)>> = BTreeMap::new();
        let mut geometry = BranchGeometry::default();
        let mut toy_geometry = false;
        let mut mhsa_heads = 0usize;

        for (key, v) in pairs {
            let k = key.as_str();
            let v = v.as_str();
            match k {
                "learning_rate" => cfg.train.learning_rate = num(k, v)?,
                "batch_size" => cfg.train.batch_size = num(k, v)?,
                "epochs" => cfg.train.epochs = num(k, v)?,
                "lr_decay_factor" => cfg.train.lr_decay_factor = num(k, v)?,
                "lr_decay_epoch" => cfg.train.lr_decay_epoch = num(k, v)?,
                "adam_beta1" => cfg.train.adam.beta1 = num(k, v)?,
                "adam_beta2" => cfg.train.adam.beta2 = num(k, v)?,
                "adam_eps" => cfg.train.adam.eps = num(k, v)?,
                "loss" => cfg.train.loss = LossKind::parse(v)?,
                "seed" => cfg.seed = num(k, v)?,
                "hidden" => cfg.head.hidden = num(k, v)?,
                "activation" => cfg.head.activation = Activation::parse(v)?,
                "mhsa_heads" => mhsa_heads = num(k, v)?,
                "standardize" => cfg.head.standardize = boolean(k, v)?,
                "sources" => {
                    source_names = Some(
                        v.split(',')
                            .map(|s| s.trim().to_string())
                            .filter(|s| !s.is_empty())
                            .collect(),
                    )
                }
                "gms_grid" => cfg.extract.gms_grid = num(k, v)?,
                "gms_patch" => cfg.extract.gms_patch = num(k, v)?,
                "gms_seed" => cfg.extract.gms_seed = num(k, v)?,
                "fragment_frames" => {
                    cfg.extract.fragment_frames = match v {
                        "keyframes" => FragmentFrames::KeyFrames,
                        "all" => FragmentFrames::AllFrames,
                        _ => return Err(Error::Config(format!("{k}: expected keyframes|all, got {v:?}"))),
                    }
                }
                "crop_seed" => cfg.extract.crop_seed = num(k, v)?,
                "toy_geometry" => {
                    toy_geometry = match v {
                        "native" => false,
                        "branch" => true,
                        _ => return Err(Error::Config(format!("{k}: expected native|branch, got {v:?}"))),
                    }
                }
                "keyframe_min_side" => geometry.keyframe_min_side = num(k, v)?,
                "keyframe_crop" => geometry.keyframe_crop = num(k, v)?,
                "chunk_size" => geometry.chunk_size = num(k, v)?,
                "split_ratio" => cfg.split_ratio = num(k, v)?,
                "grouping" => cfg.grouping = Grouping::parse(v)?,
                "repeats" => cfg.repeats = num(k, v)?,
                "ensemble_k" => cfg.ensemble_k = num(k, v)?,
                "ensemble_combiner" => cfg.combiner = Combiner::parse(v)?,
                _ => match k.strip_prefix("source.").and_then(|r| r.split_once('.')) {
                    Some((name, field)) => source_fields
                        .entry(name.to_string())
                        .or_default()
                        .push((field.to_string(), v.to_string())),
                    None => return Err(Error::Config(format!("unknown key {k:?}"))),
                },
            }
        }

        cfg.train.seed = cfg.seed;
        cfg.head.mhsa_heads = (mhsa_heads > 0).then_some(mhsa_heads);
        if toy_geometry {
            cfg.extract.geometry = Some(geometry);
        }
        if source_names.is_some() || !source_fields.is_empty() {
            let names = source_names.unwrap_or_else(|| cfg.registry.iter().map(|s| s.name.clone()).collect());
            for extra in source_fields.keys() {
                if !names.contains(extra) {
                    return Err(Error::Config(format!("source.{extra}.* given but {extra} is not in sources")));
                }
            }
            let mut sources = Vec::new();
            for name in &names {
                sources.push(build_source(name, source_fields.get(name).map(Vec::as_slice).unwrap_or(&[]))?);
            }
            cfg.registry = Registry::new(sources)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.head.hidden == 0 {
            return Err(Error::Config("hidden must be at least 1".into()));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Config("split_ratio must lie in (0, 1)".into()));
        }
        if self.repeats == 0 || self.ensemble_k == 0 {
            return Err(Error::Config("repeats and ensemble_k must be at least 1".into()));
        }
        if self.extract.gms_grid == 0 || self.extract.gms_patch == 0 {
            return Err(Error::Config("gms_grid and gms_patch must be at least 1".into()));
        }
        Ok(())
    }

    /// Canonical `key = value` text that parses back to this config.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let mut lines = vec![
            format!("learning_rate = {}", t.learning_rate),
            format!("batch_size = {}", t.batch_size),
            format!("epochs = {}", t.epochs),
            format!("lr_decay_factor = {}", t.lr_decay_factor),
            format!("lr_decay_epoch = {}", t.lr_decay_epoch),
            format!("adam_beta1 = {}", t.adam.beta1),
            format!("adam_beta2 = {}", t.adam.beta2),
            format!("adam_eps = {}", t.adam.eps),
            format!("loss = {}", t.loss.as_str()),
            format!("seed = {}", self.seed),
            format!("hidden = {}", self.head.hidden),
            format!("activation = {}", self.head.activation.as_str()),
            format!("mhsa_heads = {}", self.head.mhsa_heads.unwrap_or(0)),
            format!("standardize = {}", self.head.standardize),
            format!(
                "sources = {}",
                self.registry.iter().map(|s| s.name.as_str()).collect::<Vec<_>>().join(",")
            ),
        ];
        for s in self.registry.iter() {
            let n = &s.name;
            lines.push(format!("source.{n}.granularity = {}", s.granularity.as_str()));
            lines.push(format!("source.{n}.dim = {}", s.dim));
            lines.push(format!("source.{n}.tokens = {}", s.token_count));
            lines.push(format!("source.{n}.role = {}", s.role.as_str()));
            lines.push(format!("source.{n}.probability = {}", s.probability));
            lines.push(format!("source.{n}.producer = {}", producer_name(s.producer)));
        }
        let e = &self.extract;
        lines.push(format!("gms_grid = {}", e.gms_grid));
        lines.push(format!("gms_patch = {}", e.gms_patch));
        lines.push(format!("gms_seed = {}", e.gms_seed));
        lines.push(format!(
            "fragment_frames = {}",
            match e.fragment_frames {
                FragmentFrames::KeyFrames => "keyframes",
                FragmentFrames::AllFrames => "all",
            }
        ));
        lines.push(format!("crop_seed = {}", e.crop_seed));
        let g = e.geometry.unwrap_or_default();
        lines.push(format!("toy_geometry = {}", if e.geometry.is_some() { "branch" } else { "native" }));
        lines.push(format!("keyframe_min_side = {}", g.keyframe_min_side));
        lines.push(format!("keyframe_crop = {}", g.keyframe_crop));
        lines.push(format!("chunk_size = {}", g.chunk_size));
        lines.push(format!("split_ratio = {}", self.split_ratio));
        lines.push(format!(
            "grouping = {}",
            match self.grouping {
                Grouping::ByScene => "scene",
                Grouping::ByVideo => "video",
            }
        ));
        lines.push(format!("repeats = {}", self.repeats));
        lines.push(format!("ensemble_k = {}", self.ensemble_k));
        lines.push(format!(
            "ensemble_combiner = {}",
            match self.combiner {
                Combiner::Mean => "mean",
                Combiner::Median => "median",
            }
        ));
        lines.join("\n") + "\n"
    }
}

fn producer_name(p: Producer) -> &'static str {
    match p {
        Producer::External => "external",
        Producer::PixelStats => "pixelstats",
        Producer::MotionStats => "motionstats",
        Producer::FragmentStats => "fragmentstats",
    }
}

fn build_source(name: &str, fields: &[(String, String)]) -> Result<FeatureSource> {
    let mut s = match preset(name) {
        Some(s) => s,
        None => {
            let g = fields
                .iter()
                .rev()
                .find(|(f, _)| f == "granularity")
                .ok_or_else(|| Error::Config(format!("source {name}: custom sources need a granularity")))?;
            if !fields.iter().any(|(f, _)| f == "dim") {
                return Err(Error::Config(format!("source {name}: custom sources need a dim")));
            }
            FeatureSource::external(name, Granularity::parse(&g.1)?, 0)
        }
    };
    for (field, v) in fields {
        let key = format!("source.{name}.{field}");
        match field.as_str() {
            "granularity" => s.granularity = Granularity::parse(v)?,
            "dim" => s.dim = num(&key, v)?,
            "tokens" => s.token_count = num(&key, v)?,
            "role" => s.role = Role::parse(v)?,
            "probability" => s.probability = boolean(&key, v)?,
            "producer" => {
                s.producer = match v.as_str() {
                    "external" => Producer::External,
                    "pixelstats" => Producer::PixelStats,
                    "motionstats" => Producer::MotionStats,
                    "fragmentstats" => Producer::FragmentStats,
                    _ => return Err(Error::Config(format!("{key}: unknown producer {v:?}"))),
                }
            }
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
    }
    s.validate()?;
    Ok(s)
}
