use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rqvqa::error::Error;
use rqvqa::eval::spearman;
use rqvqa::features::{bundle_sidecar, save_sidecar, sidecar, toy, Registry};
use rqvqa::fusion::Checkpoint;
use rqvqa::harness::synth::{plan_corpus, render_video, Scene};
use rqvqa::harness::{
    combine_predictions, derive_seed, ensemble_on, extract_dataset, load_bundle, make_synthetic_corpus, predict,
    predictions_csv, run_experiment, split, train_subset, Combiner, DatasetManifest, Grouping,
    Levels, RunConfig, SynthOptions,
};
use rqvqa::preproc::extract_key_frames;

fn corpus(dir: &Path, n: usize, seed: u64) -> (DatasetManifest, RunConfig) {
    let m = make_synthetic_corpus(dir, n, seed, &SynthOptions::default()).unwrap();
    let cfg = RunConfig::load(&dir.join("corpus.conf")).unwrap();
    (m, cfg)
}

fn quick(cfg: RunConfig) -> RunConfig {
    let mut c = cfg;
    c.train.learning_rate = 1e-3;
    c.train.epochs = 6;
    c.train.lr_decay_epoch = 4;
    c
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            for (k, v) in tree(&p) {
                out.insert(format!("{}/{k}", p.file_name().unwrap().to_string_lossy()), v);
            }
        } else {
            out.insert(p.file_name().unwrap().to_string_lossy().into(), fs::read(&p).unwrap());
        }
    }
    out
}

#[test]
fn synthetic_corpus_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ma, _) = corpus(a.path(), 20, 5);
    corpus(b.path(), 20, 5);
    assert_eq!(ma.len(), 20);
    assert_eq!(tree(a.path()), tree(b.path()));
    let c = tempfile::tempdir().unwrap();
    corpus(c.path(), 20, 6);
    assert_ne!(tree(a.path()), tree(c.path()));
}

#[test]
fn pristine_clip_has_the_top_mos_of_its_scene() {
    let dir = tempfile::tempdir().unwrap();
    let (m, _) = corpus(dir.path(), 40, 1);
    let mut best: BTreeMap<&str, (f64, &str)> = BTreeMap::new();
    for r in &m.records {
        let e = best.entry(&r.scene_id).or_insert((f64::MIN, ""));
        if r.mos > e.0 {
            *e = (r.mos, &r.video_id);
        }
    }
    for (scene, (mos, id)) in best {
        assert!(id.ends_with("_v0"), "{scene}: best clip {id}");
        assert_eq!(mos, 5.0);
    }
    assert!(m.records.iter().all(|r| (1.0..=5.0).contains(&r.mos)));
}

#[test]
fn laplacian_energy_falls_with_blur() {
    let opts = SynthOptions::default();
    for v in plan_corpus(30, 2, &opts).unwrap().iter().step_by(6) {
        let scene = Scene::random(v.scene_seed, opts.width, opts.height);
        let energy: Vec<f64> = (0..=8)
            .map(|k| {
                let levels = Levels {
                    blur: k as f64 / 8.0,
                    ..Levels::default()
                };
                let video = render_video(&scene, levels, &opts, v.noise_seed).unwrap();
                let keys = extract_key_frames(&video).unwrap();
                keys.frames.iter().map(|f| toy::pixel_stats(f)[6]).sum::<f64>() / keys.count() as f64
            })
            .collect();
        assert!(energy.windows(2).all(|w| w[1] < w[0]), "{}: {energy:?}", v.scene_id);
    }
}

#[test]
fn experiment_rows_and_mean() {
    let dir = tempfile::tempdir().unwrap();
    let (m, cfg) = corpus(dir.path(), 60, 3);
    let cfg = quick(cfg);
    let report = run_experiment(&m, &cfg, 5).unwrap();
    assert_eq!(report.rows.len(), 5);
    let mean = report.rows.iter().map(|r| r.report.srcc).sum::<f64>() / 5.0;
    assert!((report.mean_srcc - mean).abs() <= 1e-12);
    let mean = report.rows.iter().map(|r| r.report.plcc_4pl).sum::<f64>() / 5.0;
    assert!((report.mean_plcc_4pl - mean).abs() <= 1e-12);
    let csv = report.to_csv();
    assert_eq!(csv.lines().count(), 7);
    assert!(csv.lines().last().unwrap().starts_with("mean,"));
    assert_eq!(run_experiment(&m, &cfg, 5).unwrap(), report);
    for (k, r) in report.rows.iter().enumerate() {
        assert_eq!(r.split_seed, derive_seed(cfg.seed, 1, k as u32));
        assert_eq!(r.n_train + r.n_test, 60);
    }
}

#[test]
fn ensemble_combines_members() {
    let dir = tempfile::tempdir().unwrap();
    let (m, cfg) = corpus(dir.path(), 48, 4);
    let cfg = quick(cfg);
    let data = extract_dataset(&m, &cfg.registry, &cfg.extract).unwrap();
    let e = ensemble_on(&data, &data, &cfg, 3).unwrap();
    assert_eq!(e.per_model.len(), 3);
    for i in 0..data.len() {
        let mean = e.per_model.iter().map(|p| p[i]).sum::<f64>() / 3.0;
        assert!((e.scores[i] - mean).abs() < 1e-12);
    }
    // Identical members reproduce the single model.
    let single = e.per_model[0].clone();
    let same = combine_predictions(&[single.clone(), single.clone(), single.clone()], Combiner::Mean).unwrap();
    for (a, b) in same.iter().zip(&single) {
        assert!((a - b).abs() <= 1e-15 * b.abs().max(1.0));
    }
    assert_eq!(combine_predictions(&[vec![3.0], vec![4.0]], Combiner::Mean).unwrap(), vec![3.5]);
    assert!(ensemble_on(&data, &data, &cfg, 1).is_err());
}

#[test]
fn ensemble_tracks_its_best_member() {
    let dir = tempfile::tempdir().unwrap();
    let (m, mut cfg) = corpus(dir.path(), 600, 9);
    cfg.train.learning_rate = 1e-3;
    let data = extract_dataset(&m, &cfg.registry, &cfg.extract).unwrap();
    let plan = split(&m, 0.8, Grouping::ByScene, 77).unwrap();
    let train = extract_dataset(&m.subset(&plan.train_ids), &cfg.registry, &cfg.extract).unwrap();
    let target = extract_dataset(&m.subset(&plan.test_ids), &cfg.registry, &cfg.extract).unwrap();
    assert_eq!(train.len() + target.len(), data.len());
    let e = ensemble_on(&train, &target, &cfg, 5).unwrap();
    let best = e
        .per_model
        .iter()
        .map(|p| spearman(p, &target.mos).unwrap())
        .fold(f64::MIN, f64::max);
    let ens = spearman(&e.scores, &target.mos).unwrap();
    assert!(ens >= best - 0.02, "ensemble {ens} vs best member {best}");
}

#[test]
fn predict_is_deterministic_and_checks_layout() {
    let dir = tempfile::tempdir().unwrap();
    let (m, cfg) = corpus(dir.path(), 24, 2);
    let cfg = quick(cfg);
    let data = extract_dataset(&m, &cfg.registry, &cfg.extract).unwrap();
    let rows: Vec<usize> = (0..data.len()).collect();
    let model = train_subset(&data, &rows, &cfg, 1).unwrap().model;
    let ck = Checkpoint {
        model,
        head: cfg.head.clone(),
        train: cfg.train.clone(),
    };
    let a = predictions_csv(&predict(&ck, &m, &cfg).unwrap());
    let b = predictions_csv(&predict(&ck, &m, &cfg).unwrap());
    assert_eq!(a, b);
    assert_eq!(a.lines().count(), 25);

    let mut reduced = cfg.clone();
    reduced.registry = Registry::new(cfg.registry.iter().filter(|s| s.name != "motionstats").cloned()).unwrap();
    match predict(&ck, &m, &reduced) {
        Err(Error::LayoutMismatch { expected, found }) => {
            assert!(expected.contains("motionstats:chunkx8"));
            assert!(!found.contains("motionstats"));
        }
        other => panic!("expected layout mismatch, got {other:?}"),
    }
}

#[test]
fn single_key_frame_video_scores_its_only_index() {
    let dir = tempfile::tempdir().unwrap();
    let opts = SynthOptions {
        seconds: 1,
        ..SynthOptions::default()
    };
    let m = make_synthetic_corpus(dir.path(), 20, 1, &opts).unwrap();
    let cfg = quick(RunConfig::load(&dir.path().join("corpus.conf")).unwrap());
    let data = extract_dataset(&m, &cfg.registry, &cfg.extract).unwrap();
    let rows: Vec<usize> = (0..data.len()).collect();
    let model = train_subset(&data, &rows, &cfg, 0).unwrap().model;
    for x in &data.inputs {
        assert_eq!(x.keyframe_count(), 1);
        assert_eq!(model.video_score(x).unwrap(), model.index_scores(x).unwrap()[0]);
    }
}

#[test]
fn sidecars_take_precedence_and_missing_sources_error() {
    let dir = tempfile::tempdir().unwrap();
    let (m, cfg) = corpus(dir.path(), 20, 8);
    let r = &m.records[0];
    let bundle = load_bundle(r, &cfg.registry, &cfg.extract).unwrap();
    let pix = cfg.registry.get("pixelstats").unwrap();
    let mut sc = bundle_sidecar(&bundle, pix).unwrap();
    sc.values.iter_mut().for_each(|v| *v = 0.25);
    save_sidecar(&sc, &r.path.join(format!("pixelstats.{}", sidecar::EXTENSION))).unwrap();
    let again = load_bundle(r, &cfg.registry, &cfg.extract).unwrap();
    assert!(again.get("pixelstats").unwrap().values.iter().all(|&v| v == 0.25));
    assert_eq!(again.get("motionstats"), bundle.get("motionstats"));

    let mut with_liqe = cfg.clone();
    with_liqe.registry = Registry::new(cfg.registry.iter().cloned().chain([rqvqa::features::FeatureSource::liqe()]))
        .unwrap();
    match load_bundle(r, &with_liqe.registry, &cfg.extract) {
        Err(Error::MissingSources(names)) => assert_eq!(names, vec!["liqe".to_string()]),
        other => panic!("expected missing source, got {other:?}"),
    }
}
