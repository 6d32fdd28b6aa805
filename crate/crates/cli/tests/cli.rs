use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn plume(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_plume")).args(args).output().unwrap()
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn shipped_default_config_is_valid() {
    let cfg = repo_root().join("configs/default.toml");
    let o = plume(&["validate-config", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = plume(&["validate-config"]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn bad_flags_and_configs_exit_2() {
    assert_eq!(plume(&["gen-data", "--frobnicate"]).status.code(), Some(2));
    assert_eq!(plume(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(plume(&["infer", "--id", "abc"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(&p, "seed = 1\n\n[model]\nlevles = 2\n").unwrap();
    let o = plume(&["validate-config", "--config", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 4"), "{}", stderr(&o));

    let missing = dir.path().join("missing.toml");
    assert_eq!(plume(&["validate-config", "--config", missing.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = plume(&["train", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("error:"));
}

const TINY: &str = r#"
[grid]
nx = 32
nz = 32

[dataset]
n_total = 20
resolution = [32, 32]

[model]
steps_per_level = 1
hidden_channels = 4

[training]
epochs = 1
batch_size = 8
split = [12, 4, 4]

[posterior]
samples = 3
"#;

#[test]
fn full_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let out = dir.path().join("run");
    let common = ["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "3"];
    for cmd in ["gen-data", "train", "infer", "report"] {
        let mut args = vec![cmd];
        args.extend_from_slice(&common);
        let o = plume(&args);
        assert_eq!(o.status.code(), Some(0), "{cmd}: {}", stderr(&o));
    }
    assert!(out.join("dataset/manifest.json").exists());
    assert!(out.join("model.ckpt").exists());
    assert!(out.join("loss.csv").exists());
    let eval = std::fs::read_to_string(out.join("infer/eval.csv")).unwrap();
    assert_eq!(eval.lines().count(), 5);
    let pngs = std::fs::read_dir(out.join("report")).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png")).count();
    assert_eq!(pngs, 4);

    let mut args = vec!["infer", "--id", "0"];
    args.extend_from_slice(&common);
    let o = plume(&args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(out.join("infer/000000.f32").exists());
    let eval = std::fs::read_to_string(out.join("infer/eval.csv")).unwrap();
    assert_eq!(eval.lines().count(), 2);
}
