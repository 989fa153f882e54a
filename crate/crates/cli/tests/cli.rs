use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tae_core::enhancement::AlphaSource;
use tae_core::training::{load_checkpoint, TaeModel};

fn tae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tae")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = tae(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small synthetic dataset plus a config describing it.
fn fixture(dir: &Path, epochs: usize) -> (PathBuf, PathBuf) {
    let cfg = dir.join("cfg.toml");
    fs::write(
        &cfg,
        format!(
            "seed = 3\n[train]\nepochs = {epochs}\nbatch_size = 4\ninput_size = 16\nframe_stride = 3\n\
             [synth]\ntrain_sequences = 2\ntest_sequences = 2\nframes = 9\nwidth = 24\nheight = 20\ntarget_size = 5\n"
        ),
    )
    .unwrap();
    let data = dir.join("data");
    ok(&["synth", "--out", s(&data), "--config", s(&cfg)]);
    (cfg, data)
}

#[test]
fn oracle_eval_reports_full_success_curve() {
    let dir = tempfile::tempdir().unwrap();
    let (_, data) = fixture(dir.path(), 0);
    let report = dir.path().join("out").join("oracle.json");
    ok(&["eval", "--dataset", s(&data), "--tracker", "oracle", "--report", s(&report)]);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let r = &json["rows"][0]["report"];
    assert!((r["s_auc"].as_f64().unwrap() - 20.0 / 21.0).abs() < 1e-9);
    assert_eq!(r["precision_at"].as_f64(), Some(1.0));
    assert_eq!(r["norm_precision_auc"].as_f64(), Some(1.0));
    let csv = fs::read_to_string(dir.path().join("out").join("oracle.csv")).unwrap();
    assert!(csv.starts_with("condition,S_AUC,dS_AUC,P,dP,NormP,dNormP\nnone,95.24,"));
    let tsv = fs::read_to_string(dir.path().join("out").join("oracle_none_success.tsv")).unwrap();
    let lines: Vec<&str> = tsv.lines().collect();
    assert_eq!(lines[0], "threshold\tvalue");
    assert_eq!(lines.len(), 22);
    assert_eq!(lines[21], "1\t0");
    for kind in ["precision", "norm_precision"] {
        assert!(dir.path().join("out").join(format!("oracle_none_{kind}.tsv")).is_file());
    }
}

#[test]
fn train_with_zero_epochs_writes_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = fixture(dir.path(), 0);
    let ck = dir.path().join("ck");
    ok(&["train", "--config", s(&cfg), "--out", s(&ck), "--dataset", s(&data)]);
    let loaded = load_checkpoint(&ck.join("model.tae")).unwrap();
    assert_eq!(loaded.model, TaeModel::init(3, AlphaSource::Predicted));
    assert!(loaded.optimizer.m.iter().flatten().all(|&v| v == 0.0));
    assert_eq!(fs::read_to_string(ck.join("losses.csv")).unwrap(), "epoch,loc,exp,color,tv,total\n");
}

#[test]
fn training_and_enhancement_are_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = fixture(dir.path(), 2);
    let run = |name: &str| {
        let ck = dir.path().join(name);
        ok(&["--jobs", "2", "train", "--config", s(&cfg), "--out", s(&ck), "--dataset", s(&data)]);
        let enh = dir.path().join(format!("{name}_enh"));
        let frames = data.join("test_002").join("img");
        ok(&["--jobs", "3", "enhance", "--ckpt", s(&ck.join("model.tae")), "--in", s(&frames), "--out", s(&enh), "--dump-mask"]);
        let rep = dir.path().join(format!("{name}_eval.json"));
        ok(&["eval", "--dataset", s(&data), "--enhance", s(&ck.join("model.tae")), "--report", s(&rep)]);
        let mut files = Vec::new();
        for d in [&ck, &enh] {
            let mut names: Vec<_> = fs::read_dir(d).unwrap().map(|e| e.unwrap().path()).collect();
            names.sort();
            files.extend(names.into_iter().map(|p| (p.file_name().unwrap().to_owned(), fs::read(&p).unwrap())));
        }
        files.push(("eval".into(), fs::read(&rep).unwrap()));
        files
    };
    let (a, b) = (run("a"), run("b"));
    assert_eq!(a, b);
    let names: Vec<String> = a.iter().map(|f| f.0.to_string_lossy().into_owned()).collect();
    assert!(names.contains(&"epoch_001.tae".to_string()) && names.contains(&"epoch_002.tae".to_string()));
    assert!(names.contains(&"0001_objectness.png".to_string()) && names.contains(&"0001_mask_b.png".to_string()));
    let losses = String::from_utf8(a.iter().find(|f| f.0 == "losses.csv").unwrap().1.clone()).unwrap();
    assert_eq!(losses.lines().count(), 3);
}

#[test]
fn enhance_writes_one_output_per_image() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = fixture(dir.path(), 0);
    let ck = dir.path().join("ck");
    ok(&["train", "--config", s(&cfg), "--out", s(&ck), "--dataset", s(&data)]);
    let frames = data.join("train_000").join("img");
    let out = dir.path().join("enh");
    for mode in ["baseline", "TA", "TA+MC"] {
        ok(&["enhance", "--ckpt", s(&ck.join("model.tae")), "--in", s(&frames), "--out", s(&out), "--mode", mode]);
        let mut inputs: Vec<_> = fs::read_dir(&frames).unwrap().map(|e| e.unwrap().file_name()).collect();
        let mut outputs: Vec<_> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name()).collect();
        inputs.sort();
        outputs.sort();
        assert_eq!(inputs, outputs);
        for name in &outputs {
            let dims = tae_core::io::image::image_dimensions(&out.join(name)).unwrap();
            assert_eq!(dims, (24, 20));
        }
    }
}

#[test]
fn errors_use_a_single_prefixed_line() {
    let dir = tempfile::tempdir().unwrap();
    let (missing, bad_cfg) = (dir.path().join("missing.tae"), dir.path().join("bad.toml"));
    let cases: [(&[&str], &str); 3] = [
        (&["eval", "--dataset", "/nonexistent/tae", "--report", "r.json"], "io"),
        (&["enhance", "--ckpt", s(&missing), "--in", ".", "--out", "o"], "io"),
        (&["synth", "--out", "x", "--config", s(&bad_cfg)], "config"),
    ];
    fs::write(&bad_cfg, "[train]\nepoch = 1\n").unwrap();
    for (args, kind) in cases {
        let out = tae(args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        let err = String::from_utf8(out.stderr).unwrap();
        let lines: Vec<&str> = err.lines().filter(|l| !l.contains(" WARN ")).collect();
        assert_eq!(lines.len(), 1, "{err}");
        assert!(lines[0].starts_with(&format!("tae: error[{kind}]: ")), "{err}");
    }
    let bad = dir.path().join("bad.tae");
    fs::write(&bad, b"TAE1garbage-garbage").unwrap();
    let out = tae(&["enhance", "--ckpt", s(&bad), "--in", ".", "--out", "o"]);
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("tae: error[checkpoint]: "));
}
