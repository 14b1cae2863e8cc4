use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pasic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pasic")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, schemes: &str) -> String {
    let path = dir.join("exp.toml");
    let text = format!(
        "corpus = \"corpus\"\nn_val = 4\neval_images = 2\nh_values = [0.0, 1.0]\nseeds = [3]\nschemes = [{schemes}]\ncheckpoint = \"missing.ckpt\"\noutput_dir = \"out\"\n"
    );
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn eval_is_byte_reproducible_and_plots_regenerate() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let status = pasic(&["gen-corpus", "--out", corpus.to_str().unwrap(), "--count", "8", "--width", "64", "--height", "64", "--seed", "1"]);
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let cfg = write_config(dir.path(), "\"orthogonal\", \"tin\"");
    let mut results = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let o = pasic(&["eval", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        results.push(fs::read(out.join("results.csv")).unwrap());
        assert!(out.join("psnr_vs_h_E16_P4.svg").exists());
    }
    assert_eq!(results[0], results[1]);
    let text = String::from_utf8(results[0].clone()).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 2);

    let a = dir.path().join("a");
    fs::remove_file(a.join("psnr_vs_h_E16_P4.svg")).unwrap();
    assert!(pasic(&["plot", "--out", a.to_str().unwrap()]).status.success());
    assert!(a.join("psnr_vs_h_E16_P4.svg").exists());

    let o = pasic(&["eval", "--config", &cfg, "--scheme", "sic", "--h", "2", "--seed", "9", "--out", dir.path().join("c").to_str().unwrap()]);
    assert!(o.status.success());
    let text = fs::read_to_string(dir.path().join("c/results.csv")).unwrap();
    assert!(text.lines().nth(1).unwrap().starts_with("sic,2.0,16,4,3,"), "{text}");
}

#[test]
fn learned_scheme_without_checkpoint_fails_with_named_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "\"deeppasic\"");
    let o = pasic(&["eval", "--config", &cfg]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("MissingArtifact"));
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "feature_layers = \"x\"\n").unwrap();
    assert!(!pasic(&["eval", "--config", bad.to_str().unwrap()]).status.success());
}
