use std::path::Path;
use std::process::{Command, Output};

fn sercct(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sercct")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = sercct(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: &str = r#"
epochs = 2
batch_size = 16
learning_rate = 1e-3
clip_seconds = 0.3
[model]
image_height = 8
image_width = 8
conv_hidden = 4
conv_layers = 1
encoder_layers = 1
model_dim = 8
fusion = "end_to_end"
"#;

#[test]
fn desk_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let corpus = d.join("corpus");
    let manifest = corpus.join("manifest.csv");
    ok(&["gen-desk-corpus", "--out-dir", p(&corpus), "--speakers", "3", "--per-class", "3"]);
    assert!(manifest.exists());

    let wav = corpus.join("desk/desk_s0_A00.wav");
    ok(&["spectrogram", p(&wav), "--out", p(&d.join("s.png")), "--matrix", p(&d.join("s.bin")), "--height", "32", "--width", "32"]);
    assert!(d.join("s.png").exists() && d.join("s.bin").exists());

    ok(&["embed", "--manifest", p(&manifest), "--out", p(&d.join("emb.bin"))]);
    ok(&["pca-fit", "--store", p(&d.join("emb.bin")), "--k", "4", "--out", p(&d.join("pca.bin")), "--model-out", p(&d.join("pca.json"))]);
    ok(&["mds", "--store", p(&d.join("pca.bin")), "--manifest", p(&manifest), "--out-dir", p(&d.join("mds"))]);
    let csv = std::fs::read_to_string(d.join("mds/mds.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 4 * 3);

    let cfg = d.join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let run = d.join("run");
    let stdout = ok(&["train", "--config", p(&cfg), "--seed", "3", "--manifest", p(&manifest), "--test-speaker", "desk_s1", "--out-dir", p(&run)]);
    assert!(stdout.contains("test: acc"));
    for f in ["checkpoint_best.ckpt", "checkpoint_final.ckpt", "result.json", "batch_log.csv", "curves.csv", "test_metrics.csv", "test_confusion.png"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let ev = d.join("eval");
    let stdout = ok(&["eval", "--checkpoint", p(&run.join("checkpoint_best.ckpt")), "--manifest", p(&manifest), "--speaker", "desk_s1", "--out-dir", p(&ev)]);
    assert!(stdout.contains("eval: acc"));
    assert!(ev.join("eval_predictions.csv").exists());

    std::fs::remove_file(run.join("test_metrics.csv")).unwrap();
    ok(&["report", p(&run)]);
    assert!(run.join("test_metrics.csv").exists());

    let aug = d.join("aug");
    ok(&["augment", "--manifest", p(&manifest), "--out-dir", p(&aug)]);
    let lines = std::fs::read_to_string(aug.join("manifest.csv")).unwrap().lines().count();
    assert_eq!(lines, 1 + 36 * 6);
}

#[test]
fn exit_codes() {
    assert_eq!(sercct(&[]).status.code(), Some(2));
    assert_eq!(sercct(&["train", "--bogus"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "epochs = 0").unwrap();
    let out = sercct(&["loso", "--config", p(&bad), "--manifest", "m.csv", "--out-dir", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let out = sercct(&["embed", "--manifest", p(&dir.path().join("missing.csv")), "--out", "x"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}
