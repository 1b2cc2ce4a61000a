use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rqvqa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rqvqa")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = rqvqa(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn error_line(out: &Output) -> String {
    let err = String::from_utf8_lossy(&out.stderr).into_owned();
    assert!(!out.status.success());
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: kind="), "{err}");
    err
}

#[test]
fn synth_train_predict_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let corpus = d.join("corpus");
    ok(&["synth", "--output", p(&corpus), "--videos", "30", "--seed", "3"]);
    let manifest = corpus.join("manifest.csv");
    let conf = corpus.join("corpus.conf");
    let set = ["--config", p(&conf), "--set", "epochs=3", "--set", "lr_decay_epoch=2", "--set", "learning_rate=1e-3"];

    let ck = d.join("model.ck");
    let trace = d.join("trace.csv");
    let mut args = vec!["train", "--manifest", p(&manifest), "--output", p(&ck), "--trace", p(&trace)];
    args.extend(set);
    ok(&args);
    assert_eq!(fs::read_to_string(&trace).unwrap().lines().count(), 4);

    let mut outputs = Vec::new();
    for name in ["a.csv", "b.csv"] {
        let out = d.join(name);
        let mut args = vec!["predict", "--checkpoint", p(&ck), "--manifest", p(&manifest), "--output", p(&out)];
        args.extend(set);
        ok(&args);
        outputs.push(fs::read(&out).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let text = String::from_utf8(outputs[0].clone()).unwrap();
    assert_eq!(text.lines().count(), 31);

    let report = ok(&["eval", "--predictions", p(&d.join("a.csv")), "--manifest", p(&manifest)]);
    let report = String::from_utf8(report.stdout).unwrap();
    for key in ["srcc=", "plcc_raw=", "plcc_4pl="] {
        assert!(report.lines().any(|l| l.starts_with(key)), "{report}");
    }

    // Sidecars written by `features` reproduce the same predictions.
    let feats = d.join("feats");
    let mut args = vec!["features", "--manifest", p(&manifest), "--output", p(&feats)];
    args.extend(set);
    ok(&args);
    let from_sidecars = d.join("c.csv");
    let feats_manifest = feats.join("manifest.csv");
    let mut args = vec!["predict", "--checkpoint", p(&ck), "--manifest", p(&feats_manifest)];
    args.extend(["--output", p(&from_sidecars)]);
    args.extend(set);
    ok(&args);
    assert_eq!(fs::read(&from_sidecars).unwrap(), outputs[0]);
}

#[test]
fn eval_reads_pair_files() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = dir.path().join("pairs.csv");
    fs::write(&pairs, "pred,mos\n1,1\n2,2.5\n3,2\n4,4\n").unwrap();
    let out = String::from_utf8(ok(&["eval", "--input", p(&pairs)]).stdout).unwrap();
    assert!(out.contains("srcc=0.800000"), "{out}");
}

#[test]
fn gms_dump_alias_and_preprocess() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--output", p(&d.join("c")), "--videos", "20"]);
    let video = d.join("c/videos/s000_v0");
    let conf = d.join("c/corpus.conf");
    ok(&["--config", p(&conf), "gms-dump", "--input", p(&video), "--output", p(&d.join("g1"))]);
    ok(&["--config", p(&conf), "gms", "--input", p(&video), "--output", p(&d.join("g2"))]);
    let listing = |dir: &Path| {
        let mut v: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name()).collect();
        v.sort();
        v
    };
    assert_eq!(listing(&d.join("g1")), listing(&d.join("g2")));
    ok(&["preprocess", "--input", p(&video), "--output", p(&d.join("pre"))]);
    assert!(d.join("pre/keyframes").is_dir());
    assert!(d.join("pre/chunks/0000").is_dir());
}

#[test]
fn errors_are_single_lines() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let out = rqvqa(&["eval", "--input", p(&missing)]);
    assert!(error_line(&out).starts_with("error: kind=io"));
    assert_eq!(out.status.code(), Some(1));

    let out = rqvqa(&["train", "--manifest"]);
    assert!(error_line(&out).starts_with("error: kind=usage"));
    assert_eq!(out.status.code(), Some(2));

    let out = rqvqa(&["--set", "epochs=zero", "synth", "--output", p(dir.path())]);
    assert!(error_line(&out).starts_with("error: kind=config"));

    let out = rqvqa(&["synth", "--output", p(&dir.path().join("s")), "--videos", "3"]);
    error_line(&out);

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "1,2,3\n").unwrap();
    assert!(error_line(&rqvqa(&["eval", "--input", p(&bad)])).starts_with("error: kind=csv"));

    assert!(rqvqa(&["--help"]).status.success());
}
