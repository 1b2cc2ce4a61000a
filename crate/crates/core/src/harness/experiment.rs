//! Feature extraction over manifests, split experiments, ensembles and
//! checkpoint inference.
//!
//! Seeds derive from the master seed with [`derive_seed`]: stream 1 / 2
//! for the split and training seeds of experiment repeat `k`, stream 3 / 4
//! for ensemble member `k`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::config::{Combiner, RunConfig};
use super::manifest::{DatasetManifest, Record};
use super::split::{derive_seed, split, SplitPlan};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::features::{assemble_bundle, sidecar, ExtractConfig, FeatureBundle, Registry};
use crate::fusion::{train, Checkpoint, ConcatLayout, FusionModel, Sample, TrainConfig, TrainOutcome, VideoInput};
use crate::preproc::{is_raw_video_dir, load_raw_video};

pub const STREAM_SPLIT: u32 = 1;
pub const STREAM_TRAIN: u32 = 2;
pub const STREAM_ENSEMBLE_SPLIT: u32 = 3;
pub const STREAM_ENSEMBLE_TRAIN: u32 = 4;

/// Builds the feature bundle for one manifest record. Sidecars in the
/// record directory take precedence; frames are only decoded when some
/// source still needs a toy extractor.
pub fn load_bundle(record: &Record, registry: &Registry, extract: &ExtractConfig) -> Result<FeatureBundle> {
    if !record.path.is_dir() {
        return Err(Error::io(
            &record.path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "video directory not found"),
        ));
    }
    let needs_frames = registry
        .iter()
        .any(|s| !record.path.join(format!("{}.{}", s.name, sidecar::EXTENSION)).is_file());
    let video = if needs_frames && is_raw_video_dir(&record.path) {
        Some(load_raw_video(&record.path)?)
    } else {
        None
    };
    assemble_bundle(&record.video_id, video.as_ref(), registry, Some(&record.path), extract)
}

/// Extracted model inputs for a manifest, in manifest order.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub layout: ConcatLayout,
    pub ids: Vec<String>,
    pub mos: Vec<f64>,
    pub scenes: Vec<String>,
    pub inputs: Vec<VideoInput>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn manifest(&self) -> DatasetManifest {
        DatasetManifest {
            records: self
                .ids
                .iter()
                .zip(&self.mos)
                .zip(&self.scenes)
                .map(|((id, &mos), scene)| Record {
                    video_id: id.clone(),
                    path: Default::default(),
                    mos,
                    scene_id: scene.clone(),
                })
                .collect(),
        }
    }

    fn indices(&self, ids: &[String]) -> Vec<usize> {
        let pos: std::collections::HashMap<&str, usize> =
            self.ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        ids.iter().map(|id| pos[id.as_str()]).collect()
    }
}

pub fn extract_dataset(manifest: &DatasetManifest, registry: &Registry, extract: &ExtractConfig) -> Result<Dataset> {
    let layout = ConcatLayout::from_registry(registry)?;
    let inputs = manifest
        .records
        .par_iter()
        .map(|r| VideoInput::from_bundle(&load_bundle(r, registry, extract)?, &layout))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        layout,
        ids: manifest.records.iter().map(|r| r.video_id.clone()).collect(),
        mos: manifest.records.iter().map(|r| r.mos).collect(),
        scenes: manifest.records.iter().map(|r| r.scene_id.clone()).collect(),
        inputs,
    })
}

/// Trains on the given rows of `data` with training seed `seed`.
pub fn train_subset(data: &Dataset, rows: &[usize], cfg: &RunConfig, seed: u64) -> Result<TrainOutcome> {
    let samples: Vec<Sample> = rows
        .iter()
        .map(|&i| Sample {
            input: &data.inputs[i],
            mos: data.mos[i],
        })
        .collect();
    let tc = TrainConfig { seed, ..cfg.train.clone() };
    train(&samples, &data.layout, &cfg.head, &tc)
}

pub fn predict_inputs(model: &FusionModel, inputs: &[VideoInput]) -> Result<Vec<f64>> {
    inputs.iter().map(|x| model.video_score(x)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitRow {
    pub index: usize,
    pub split_seed: u64,
    pub train_seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub report: EvalReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<SplitRow>,
    pub mean_srcc: f64,
    pub mean_plcc_raw: f64,
    pub mean_plcc_4pl: f64,
}

impl ExperimentReport {
    fn from_rows(rows: Vec<SplitRow>) -> Self {
        let n = rows.len() as f64;
        let mean = |f: fn(&EvalReport) -> f64| rows.iter().map(|r| f(&r.report)).sum::<f64>() / n;
        Self {
            mean_srcc: mean(|r| r.srcc),
            mean_plcc_raw: mean(|r| r.plcc_raw),
            mean_plcc_4pl: mean(|r| r.plcc_4pl),
            rows,
        }
    }

    /// CSV with one row per split and a final `mean` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("split,split_seed,train_seed,n_train,n_test,srcc,plcc_raw,plcc_4pl\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{:.6},{:.6},{:.6}",
                r.index, r.split_seed, r.train_seed, r.n_train, r.n_test, r.report.srcc, r.report.plcc_raw, r.report.plcc_4pl
            );
        }
        let _ = writeln!(
            s,
            "mean,,,,,{:.6},{:.6},{:.6}",
            self.mean_srcc, self.mean_plcc_raw, self.mean_plcc_4pl
        );
        s
    }
}

/// Trains and evaluates one seeded split of `data`.
pub fn run_split(data: &Dataset, cfg: &RunConfig, index: usize) -> Result<(SplitRow, SplitPlan)> {
    let split_seed = derive_seed(cfg.seed, STREAM_SPLIT, index as u32);
    let train_seed = derive_seed(cfg.seed, STREAM_TRAIN, index as u32);
    let plan = split(&data.manifest(), cfg.split_ratio, cfg.grouping, split_seed)?;
    let train_rows = data.indices(&plan.train_ids);
    let test_rows = data.indices(&plan.test_ids);
    let outcome = train_subset(data, &train_rows, cfg, train_seed)?;
    let test_inputs: Vec<VideoInput> = test_rows.iter().map(|&i| data.inputs[i].clone()).collect();
    let pred = predict_inputs(&outcome.model, &test_inputs)?;
    let mos: Vec<f64> = test_rows.iter().map(|&i| data.mos[i]).collect();
    let report = evaluate(&pred, &mos)?;
    Ok((
        SplitRow {
            index,
            split_seed,
            train_seed,
            n_train: train_rows.len(),
            n_test: test_rows.len(),
            report,
        },
        plan,
    ))
}

/// Repeats seeded splits in parallel on already extracted features.
pub fn run_experiment_on(data: &Dataset, cfg: &RunConfig, repeats: usize) -> Result<ExperimentReport> {
    if repeats == 0 {
        return Err(Error::Config("repeats must be at least 1".into()));
    }
    let rows = (0..repeats)
        .into_par_iter()
        .map(|k| run_split(data, cfg, k).map(|(row, _)| row))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport::from_rows(rows))
}

pub fn run_experiment(manifest: &DatasetManifest, cfg: &RunConfig, repeats: usize) -> Result<ExperimentReport> {
    let data = extract_dataset(manifest, &cfg.registry, &cfg.extract)?;
    run_experiment_on(&data, cfg, repeats)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleResult {
    pub video_ids: Vec<String>,
    /// `per_model[j][i]` is member `j`'s score for target video `i`.
    pub per_model: Vec<Vec<f64>>,
    pub scores: Vec<f64>,
}

/// Combines member predictions video by video.
pub fn combine_predictions(per_model: &[Vec<f64>], combiner: Combiner) -> Result<Vec<f64>> {
    let n = per_model.first().map_or(0, Vec::len);
    if per_model.is_empty() || per_model.iter().any(|p| p.len() != n) {
        return Err(Error::Shape("ensemble members must score the same videos".into()));
    }
    Ok((0..n)
        .map(|i| {
            let mut col: Vec<f64> = per_model.iter().map(|p| p[i]).collect();
            combiner.combine(&mut col)
        })
        .collect())
}

/// Trains `k` members on seeded splits of `train_data` (each on its
/// training side) and scores `target`.
pub fn ensemble_on(train_data: &Dataset, target: &Dataset, cfg: &RunConfig, k: usize) -> Result<EnsembleResult> {
    if k < 2 {
        return Err(Error::Config(format!("ensemble needs k >= 2, got {k}")));
    }
    if train_data.layout != target.layout {
        return Err(Error::LayoutMismatch {
            expected: train_data.layout.describe(),
            found: target.layout.describe(),
        });
    }
    let manifest = train_data.manifest();
    let per_model = (0..k)
        .into_par_iter()
        .map(|j| {
            let plan = split(
                &manifest,
                cfg.split_ratio,
                cfg.grouping,
                derive_seed(cfg.seed, STREAM_ENSEMBLE_SPLIT, j as u32),
            )?;
            let rows = train_data.indices(&plan.train_ids);
            let outcome = train_subset(
                train_data,
                &rows,
                cfg,
                derive_seed(cfg.seed, STREAM_ENSEMBLE_TRAIN, j as u32),
            )?;
            predict_inputs(&outcome.model, &target.inputs)
        })
        .collect::<Result<Vec<_>>>()?;
    let scores = combine_predictions(&per_model, cfg.combiner)?;
    Ok(EnsembleResult {
        video_ids: target.ids.clone(),
        per_model,
        scores,
    })
}

pub fn ensemble_predict(
    train_manifest: &DatasetManifest,
    target_manifest: &DatasetManifest,
    cfg: &RunConfig,
    k: usize,
) -> Result<EnsembleResult> {
    let train_data = extract_dataset(train_manifest, &cfg.registry, &cfg.extract)?;
    let target = extract_dataset(target_manifest, &cfg.registry, &cfg.extract)?;
    ensemble_on(&train_data, &target, cfg, k)
}

/// Scores every manifest video with a checkpoint. The registry must yield
/// exactly the checkpoint's layout.
pub fn predict(checkpoint: &Checkpoint, manifest: &DatasetManifest, cfg: &RunConfig) -> Result<Vec<(String, f64)>> {
    let layout = ConcatLayout::from_registry(&cfg.registry)?;
    if layout != checkpoint.model.layout {
        return Err(Error::LayoutMismatch {
            expected: checkpoint.model.layout.describe(),
            found: layout.describe(),
        });
    }
    let data = extract_dataset(manifest, &cfg.registry, &cfg.extract)?;
    let scores = predict_inputs(&checkpoint.model, &data.inputs)?;
    Ok(data.ids.into_iter().zip(scores).collect())
}

pub fn predictions_csv(rows: &[(String, f64)]) -> String {
    let mut s = String::from("video_id,score\n");
    for (id, q) in rows {
        let _ = writeln!(s, "{id},{q:.6}");
    }
    s
}

pub fn write_predictions(path: &Path, rows: &[(String, f64)]) -> Result<()> {
    fs::write(path, predictions_csv(rows)).map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<(String, f64)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["video_id", "score"] {
        return Err(Error::Csv("prediction header must be video_id,score".into()));
    }
    reader
        .records()
        .map(|row| {
            let row = row?;
            let q = row[1]
                .parse()
                .map_err(|_| Error::Csv(format!("bad score {:?}", &row[1])))?;
            Ok((row[0].to_string(), q))
        })
        .collect()
}
