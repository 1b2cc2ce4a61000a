use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rqvqa::eval::evaluate;
use rqvqa::features::{bundle_sidecar, save_sidecar, sidecar};
use rqvqa::fusion::Checkpoint;
use rqvqa::gms::{make_plan, sample_fragments};
use rqvqa::harness::config::parse_pairs;
use rqvqa::harness::synth::SynthOptions;
use rqvqa::harness::{
    ensemble_predict, extract_dataset, load_bundle, make_synthetic_corpus, predict, read_predictions,
    run_experiment, train_subset, write_predictions, DatasetManifest, Record, RunConfig,
};
use rqvqa::preproc::{extract_chunks, extract_key_frames, load_raw_video, save_frames, CropMode};
use rqvqa::{Error, Result};

#[derive(Parser)]
#[command(name = "rqvqa", version, about = "Blind video quality assessment toolkit")]
struct Cli {
    /// key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key (repeatable), e.g. --set epochs=5.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write branch-ready key frames and chunks of a raw video.
    Preprocess(IoArgs),
    /// Write the GMS fragment volume of a raw video as a raw video.
    #[command(alias = "gms-dump")]
    Gms(GmsArgs),
    /// Extract every registered source into per-video sidecars.
    Features(ManifestOut),
    /// Train a head on a whole manifest and save a checkpoint.
    Train(TrainArgs),
    /// Score a manifest with a checkpoint.
    Predict(PredictArgs),
    /// Correlation report for predictions against MOS.
    Eval(EvalArgs),
    /// Train k members on seeded splits and average their predictions.
    Ensemble(EnsembleArgs),
    /// Generate the synthetic corpus.
    Synth(SynthArgs),
    /// Repeated seeded split experiment.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct IoArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct GmsArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Sample every frame instead of key frames only.
    #[arg(long)]
    all_frames: bool,
}

#[derive(Args)]
struct ManifestOut {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Optional per-epoch loss trace (CSV).
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Two-column CSV of prediction, MOS (header optional).
    #[arg(long, conflicts_with_all = ["predictions", "manifest"])]
    input: Option<PathBuf>,
    /// Prediction CSV (video_id,score), joined with --manifest.
    #[arg(long, requires = "manifest")]
    predictions: Option<PathBuf>,
    #[arg(long, requires = "predictions")]
    manifest: Option<PathBuf>,
    /// Report file; stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EnsembleArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Number of members; defaults to ensemble_k from the config.
    #[arg(long)]
    k: Option<usize>,
    /// Optional per-member predictions (CSV, one column per member).
    #[arg(long)]
    members: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 240)]
    videos: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    fps: Option<u32>,
    #[arg(long)]
    seconds: Option<usize>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Report CSV; stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Defaults to repeats from the config.
    #[arg(long)]
    repeats: Option<usize>,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut pairs = match &cli.config {
        Some(p) => parse_pairs(&fs::read_to_string(p).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        })?)?,
        None => Vec::new(),
    };
    for o in &cli.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {o:?}")))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    RunConfig::from_pairs(&pairs)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::Io {
            path: parent.to_path_buf(),
            source: e,
        })?;
    }
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn emit(output: Option<&Path>, text: &str) -> Result<()> {
    match output {
        Some(p) => write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn preprocess(cfg: &RunConfig, args: &IoArgs) -> Result<()> {
    let geometry = cfg.extract.geometry.unwrap_or_default();
    let video = load_raw_video(&args.input)?;
    let keys = extract_key_frames(&video)?;
    let frames = keys
        .frames
        .iter()
        .map(|f| geometry.key_frame(f, CropMode::Center, cfg.extract.crop_seed))
        .collect::<Result<Vec<_>>>()?;
    save_frames(&frames, 1, &args.output.join("keyframes"))?;
    for (i, chunk) in extract_chunks(&video)?.chunks.iter().enumerate() {
        let frames = chunk
            .frames
            .iter()
            .map(|f| geometry.chunk_frame(f))
            .collect::<Result<Vec<_>>>()?;
        save_frames(&frames, video.frame_rate(), &args.output.join(format!("chunks/{i:04}")))?;
    }
    Ok(())
}

fn gms(cfg: &RunConfig, args: &GmsArgs) -> Result<()> {
    let video = load_raw_video(&args.input)?;
    let e = &cfg.extract;
    let plan = make_plan(video.width(), video.height(), e.gms_grid, e.gms_patch, e.gms_seed)?;
    let (frames, fps) = if args.all_frames {
        (video.frames().to_vec(), video.frame_rate())
    } else {
        (extract_key_frames(&video)?.frames, 1)
    };
    let volume = sample_fragments(&frames, &plan)?;
    save_frames(&volume.frames, fps, &args.output)
}

fn features(cfg: &RunConfig, args: &ManifestOut) -> Result<()> {
    let manifest = DatasetManifest::load(&args.manifest)?;
    let mut records = Vec::with_capacity(manifest.len());
    for r in &manifest.records {
        let bundle = load_bundle(r, &cfg.registry, &cfg.extract)?;
        let dir = args.output.join(&r.video_id);
        for source in cfg.registry.iter() {
            let path = dir.join(format!("{}.{}", source.name, sidecar::EXTENSION));
            save_sidecar(&bundle_sidecar(&bundle, source)?, &path)?;
        }
        records.push(Record {
            path: dir,
            ..r.clone()
        });
    }
    DatasetManifest::new(records)?.save(&args.output.join("manifest.csv"))
}

fn train_cmd(cfg: &RunConfig, args: &TrainArgs) -> Result<()> {
    let manifest = DatasetManifest::load(&args.manifest)?;
    let data = extract_dataset(&manifest, &cfg.registry, &cfg.extract)?;
    let rows: Vec<usize> = (0..data.len()).collect();
    let outcome = train_subset(&data, &rows, cfg, cfg.seed)?;
    let checkpoint = Checkpoint {
        model: outcome.model,
        head: cfg.head.clone(),
        train: cfg.train.clone(),
    };
    checkpoint.save(&args.output)?;
    if let Some(p) = &args.trace {
        let mut s = String::from("epoch,lr,mean_loss,batches,skipped\n");
        for e in &outcome.trace {
            s += &format!("{},{:e},{:.9},{},{}\n", e.epoch, e.lr, e.mean_loss, e.batches, e.skipped);
        }
        write_text(p, &s)?;
    }
    Ok(())
}

fn predict_cmd(cfg: &RunConfig, args: &PredictArgs) -> Result<()> {
    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let manifest = DatasetManifest::load(&args.manifest)?;
    write_predictions(&args.output, &predict(&checkpoint, &manifest, cfg)?)
}

fn read_pairs(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let (mut pred, mut mos) = (Vec::new(), Vec::new());
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        if row.len() != 2 {
            return Err(Error::Csv(format!("row {}: expected 2 columns, found {}", i + 1, row.len())));
        }
        match (row[0].parse::<f64>(), row[1].parse::<f64>()) {
            (Ok(p), Ok(m)) => {
                pred.push(p);
                mos.push(m);
            }
            _ if i == 0 => continue,
            _ => return Err(Error::Csv(format!("row {}: non-numeric value", i + 1))),
        }
    }
    Ok((pred, mos))
}

fn eval_cmd(args: &EvalArgs) -> Result<()> {
    let (pred, mos) = match (&args.input, &args.predictions, &args.manifest) {
        (Some(input), _, _) => read_pairs(input)?,
        (None, Some(p), Some(m)) => {
            let manifest = DatasetManifest::load(m)?;
            let mut pred = Vec::new();
            let mut mos = Vec::new();
            for (id, q) in read_predictions(p)? {
                let r = manifest
                    .get(&id)
                    .ok_or_else(|| Error::InvalidInput(format!("video {id} not in manifest")))?;
                pred.push(q);
                mos.push(r.mos);
            }
            (pred, mos)
        }
        _ => return Err(Error::Config("eval needs --input or --predictions with --manifest".into())),
    };
    emit(args.output.as_deref(), &evaluate(&pred, &mos)?.to_key_values())
}

fn ensemble_cmd(cfg: &RunConfig, args: &EnsembleArgs) -> Result<()> {
    let train = DatasetManifest::load(&args.train)?;
    let target = DatasetManifest::load(&args.target)?;
    let result = ensemble_predict(&train, &target, cfg, args.k.unwrap_or(cfg.ensemble_k))?;
    let rows: Vec<(String, f64)> = result.video_ids.iter().cloned().zip(result.scores.iter().copied()).collect();
    write_predictions(&args.output, &rows)?;
    if let Some(p) = &args.members {
        let mut s = String::from("video_id");
        for j in 0..result.per_model.len() {
            s += &format!(",model{j}");
        }
        s.push('\n');
        for (i, id) in result.video_ids.iter().enumerate() {
            s += id;
            for m in &result.per_model {
                s += &format!(",{:.6}", m[i]);
            }
            s.push('\n');
        }
        write_text(p, &s)?;
    }
    Ok(())
}

fn synth_cmd(args: &SynthArgs) -> Result<()> {
    let d = SynthOptions::default();
    let opts = SynthOptions {
        width: args.width.unwrap_or(d.width),
        height: args.height.unwrap_or(d.height),
        fps: args.fps.unwrap_or(d.fps),
        seconds: args.seconds.unwrap_or(d.seconds),
        ..d
    };
    make_synthetic_corpus(&args.output, args.videos, args.seed, &opts).map(|_| ())
}

fn experiment_cmd(cfg: &RunConfig, args: &ExperimentArgs) -> Result<()> {
    let manifest = DatasetManifest::load(&args.manifest)?;
    let report = run_experiment(&manifest, cfg, args.repeats.unwrap_or(cfg.repeats))?;
    emit(args.output.as_deref(), &report.to_csv())
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Preprocess(a) => preprocess(&cfg, a),
        Command::Gms(a) => gms(&cfg, a),
        Command::Features(a) => features(&cfg, a),
        Command::Train(a) => train_cmd(&cfg, a),
        Command::Predict(a) => predict_cmd(&cfg, a),
        Command::Eval(a) => eval_cmd(a),
        Command::Ensemble(a) => ensemble_cmd(&cfg, a),
        Command::Synth(a) => synth_cmd(a),
        Command::Experiment(a) => experiment_cmd(&cfg, a),
    }
}

fn quote(msg: &str) -> String {
    msg.replace('\\', "\\\\").replace('"', "\\\"").replace('\n', "\\n")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: kind=usage msg=\"{}\"", quote(first));
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: kind={} msg=\"{}\"", e.kind(), quote(&e.to_string()));
            ExitCode::FAILURE
        }
    }
}
