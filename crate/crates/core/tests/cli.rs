use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn bgnn(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bgnn")).args(args).current_dir(dir).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const SMALL: &str = "seed = 1\n[model]\nembed_dim = 8\nentity_dim = 12\npredicate_dim = 12\nrce_hidden = 12\n[train]\nsteps = 12\ncheckpoint_every = 6\nlog_every = 3\n[synth]\nn_images = 24\n";

#[test]
fn train_eval_round_trip() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let cfg = write(d, "run.toml", SMALL);
    let out = bgnn(&["gen-synth", "--config", &cfg, "--out", "m.json"], d);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let out = bgnn(&["train", "--config", &cfg, "--manifest", "m.json", "--out", "model.ckpt"], d);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["model.ckpt", "model.ckpt.log.json", "model.ckpt.step6", "model.ckpt.step12"] {
        assert!(d.join(f).exists(), "{f} missing");
    }
    let final_bytes = std::fs::read(d.join("model.ckpt")).unwrap();
    assert_eq!(final_bytes, std::fs::read(d.join("model.ckpt.step12")).unwrap());
    assert_eq!(&final_bytes[..4], b"BGNN");
    let log: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("model.ckpt.log.json")).unwrap()).unwrap();
    assert_eq!(log.as_array().map(Vec::len), Some(4));

    let out = bgnn(&["train", "--config", &cfg, "--manifest", "m.json", "--out", "again.ckpt"], d);
    assert_eq!(code(&out), 0);
    assert_eq!(final_bytes, std::fs::read(d.join("again.ckpt")).unwrap());

    for mode in ["predcls", "sgcls", "sggen"] {
        let report = format!("{mode}.json");
        let out = bgnn(&["eval", "--checkpoint", "model.ckpt", "--manifest", "m.json", "--mode", mode, "--out", &report, "--predictions", "dump.json"], d);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stdout).contains("R@"));
        let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join(&report)).unwrap()).unwrap();
        assert_eq!(r["mode"], mode);
    }
    let first = std::fs::read(d.join("sgcls.json")).unwrap();
    let out = bgnn(&["eval", "--checkpoint", "model.ckpt", "--manifest", "m.json", "--mode", "sgcls", "--out", "sgcls2.json"], d);
    assert_eq!(code(&out), 0);
    assert_eq!(first, std::fs::read(d.join("sgcls2.json")).unwrap());
}

#[test]
fn audit_and_gradcheck_commands() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let cfg = write(d, "run.toml", SMALL);
    assert_eq!(code(&bgnn(&["gen-synth", "--config", &cfg, "--seed", "4", "--out", "m.json"], d)), 0);
    let out = bgnn(&["audit-sampler", "--config", &cfg, "--manifest", "m.json", "--epochs", "2000", "--out", "audit.json"], d);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let audit: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("audit.json")).unwrap()).unwrap();
    assert_eq!(audit["epochs"], 2000);

    let out = bgnn(&["gradcheck", "--out", "gc.json"], d);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("PASS"));
    let out = bgnn(&["gradcheck", "--inject-bug"], d);
    assert_eq!(code(&out), 1);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.starts_with("FAIL") && text.contains("offending"));
}

#[test]
fn usage_and_config_errors_exit_2() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    assert_eq!(code(&bgnn(&["train"], d)), 2);
    assert_eq!(code(&bgnn(&["frobnicate"], d)), 2);
    let bad = write(d, "bad.toml", "[model]\nno_such_key = 1\n");
    assert_eq!(code(&bgnn(&["gen-synth", "--config", &bad, "--out", "m.json"], d)), 2);
    let cfg = write(d, "run.toml", SMALL);
    assert_eq!(code(&bgnn(&["train", "--config", &cfg, "--out", "x.ckpt"], d)), 2, "no manifest anywhere");
    assert_eq!(code(&bgnn(&["eval", "--checkpoint", "missing.ckpt", "--manifest", "m.json"], d)), 2);
    assert_eq!(code(&bgnn(&["eval", "--checkpoint", "x", "--mode", "detection"], d)), 2);

    // A checkpoint evaluated against a manifest with another vocabulary.
    assert_eq!(code(&bgnn(&["gen-synth", "--config", &cfg, "--out", "m.json"], d)), 0);
    assert_eq!(code(&bgnn(&["train", "--config", &cfg, "--manifest", "m.json", "--out", "model.ckpt"], d)), 0);
    let other = write(d, "other.toml", "[synth]\nn_images = 24\nnum_predicate_classes = 5\n");
    assert_eq!(code(&bgnn(&["gen-synth", "--config", &other, "--out", "other.json"], d)), 0);
    let out = bgnn(&["eval", "--checkpoint", "model.ckpt", "--manifest", "other.json"], d);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn diverging_training_exits_3() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let cfg = write(d, "run.toml", &SMALL.replace("checkpoint_every = 6", "lr = 1e300"));
    assert_eq!(code(&bgnn(&["gen-synth", "--config", &cfg, "--out", "m.json"], d)), 0);
    let out = bgnn(&["train", "--config", &cfg, "--manifest", "m.json", "--out", "x.ckpt"], d);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!d.join("x.ckpt").exists());
}
