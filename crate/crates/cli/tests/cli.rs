use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn mfdmc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfdmc"))
        .args(args)
        .current_dir(dir)
        .env("MFDMC_DATA_DIR", dir)
        .env_remove("RUST_LOG")
        .output()
        .expect("run mfdmc")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Small planted dataset plus a config that trains on it in well under a second.
fn fixture() -> (TempDir, PathBuf) {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let synth = mfdmc(
        dir,
        &[
            "synth",
            "--output",
            "toy",
            "--set",
            "synthetic.users=30",
            "--set",
            "synthetic.items=25",
            "--set",
            "synthetic.density=0.6",
            "--set",
            "synthetic.noise_sigma=0.1",
        ],
    );
    assert!(synth.status.success(), "{}", stderr(&synth));
    let config = serde_json::json!({
        "dataset": {"name": "toy", "path": "toy/ratings.csv", "format": "generic_csv"},
        "model": {
            "views": 2, "centers": 4, "center_dim": 2, "latent_dim": 4, "prune_after": 3,
            "optimizer": {"epochs": 6, "batch_size": 64, "learning_rate": 1.0, "center_learning_rate": 0.05}
        },
        "baseline": {"epochs": 5},
        "gradcheck": {"coordinates": 150},
        "output_dir": "run"
    });
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    (tmp, path)
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

fn json(path: impl AsRef<Path>) -> serde_json::Value {
    serde_json::from_str(&read(path)).unwrap()
}

#[test]
fn train_writes_checkpoint_log_and_summary() {
    let (tmp, cfg) = fixture();
    let out = mfdmc(tmp.path(), &["train", "-c", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let fields: Vec<String> = stdout(&out).trim().split('\t').map(str::to_owned).collect();
    assert_eq!(&fields[..5], ["toy", "4", "2", "2", "4"]);
    let rmse: f64 = fields[5].parse().unwrap();
    let run = tmp.path().join("run");
    assert!(run.join("checkpoint.json").is_file());
    let log = read(run.join("train_log.jsonl"));
    assert_eq!(log.lines().count(), 6);
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    for key in ["epoch", "losses", "live_centers", "valid_rmse", "eta", "gamma"] {
        assert!(first.get(key).is_some(), "log row lacks {key}");
    }
    let metrics = json(run.join("metrics.json"));
    assert!((metrics["test_rmse"].as_f64().unwrap() - rmse).abs() < 1e-6);

    let eval = mfdmc(tmp.path(), &["evaluate", "-c", cfg.to_str().unwrap(), "--checkpoint", "run/checkpoint.json"]);
    assert!(eval.status.success(), "{}", stderr(&eval));
    assert_eq!(stdout(&eval), stdout(&out));
}

#[test]
fn invalid_config_exits_2_without_outputs() {
    let (tmp, cfg) = fixture();
    let out = mfdmc(tmp.path(), &["train", "-c", cfg.to_str().unwrap(), "--set", "model.latent_dim=5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("must equal views"), "{}", stderr(&out));
    assert!(!tmp.path().join("run").exists());

    let out = mfdmc(tmp.path(), &["train", "-c", cfg.to_str().unwrap(), "--set", "model.nonsense=1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!tmp.path().join("run").exists());

    let out = mfdmc(tmp.path(), &["train", "-c", cfg.to_str().unwrap(), "--set", "split.valid=0.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!tmp.path().join("run").exists());
}

#[test]
fn ablation_flag_pins_weights_and_is_logged() {
    let (tmp, cfg) = fixture();
    let out = mfdmc(tmp.path(), &["train", "-c", cfg.to_str().unwrap(), "--ablation", "-o", "abl"]);
    assert!(out.status.success(), "{}", stderr(&out));
    for line in read(tmp.path().join("abl/train_log.jsonl")).lines() {
        let row: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(row["ablation"], true);
        assert_eq!(row["eta"], 0.0);
        assert_eq!(row["gamma"], 0.0);
    }
}

#[test]
fn baselines_share_the_split_and_reject_unknown_kinds() {
    let (tmp, cfg) = fixture();
    let c = cfg.to_str().unwrap();
    assert!(mfdmc(tmp.path(), &["train", "-c", c]).status.success());
    let out = mfdmc(tmp.path(), &["baseline", "-c", c, "--kind", "funkmf", "-o", "funk"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out).trim().split('\t').count(), 6);
    assert_eq!(json(tmp.path().join("run/split.json")), json(tmp.path().join("funk/split.json")));
    assert!(mfdmc(tmp.path(), &["baseline", "-c", c, "--kind", "biasedmf", "-o", "bias"]).status.success());
    assert_eq!(json(tmp.path().join("bias/metrics.json"))["model_kind"], "biasedmf");

    let out = mfdmc(tmp.path(), &["baseline", "-c", c, "--kind", "pmf", "-o", "pmf"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!tmp.path().join("pmf").exists());
}

#[test]
fn gradcheck_passes_and_negative_control_fails() {
    let (tmp, cfg) = fixture();
    let c = cfg.to_str().unwrap();
    let out = mfdmc(tmp.path(), &["gradcheck", "-c", c]);
    assert!(out.status.success(), "{}", stdout(&out));
    assert_eq!(stdout(&out).lines().filter(|l| l.contains("[view")).count(), 8);

    let out = mfdmc(tmp.path(), &["gradcheck", "-c", c, "--corrupt-gradient", "0.01"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stdout(&out).contains("FAILED blocks"));
    assert!(stdout(&out).contains("user.logits[view 0]"));

    let out = mfdmc(tmp.path(), &["gradcheck", "-c", c, "--set", "gradcheck.eta=0", "--set", "gradcheck.gamma=0"]);
    assert!(out.status.success(), "{}", stdout(&out));
}

#[test]
fn export_with_and_without_metadata() {
    let (tmp, cfg) = fixture();
    let dir = tmp.path();
    assert!(mfdmc(dir, &["train", "-c", cfg.to_str().unwrap()]).status.success());
    let mut meta = String::from("item,category\n");
    for i in 0..25 {
        meta.push_str(&format!("i{i},{}\n", if i % 2 == 0 { "even" } else { "odd" }));
    }
    std::fs::write(dir.join("meta.csv"), meta).unwrap();

    let out = mfdmc(dir, &["export", "--checkpoint", "run/checkpoint.json", "--metadata", "meta.csv", "-o", "ex"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.join("ex/assignments.csv").is_file());
    let report = json(dir.join("ex/interpretability.json"));
    assert_eq!(report["metadata_coverage"], 1.0);

    let out = mfdmc(dir, &["export", "--checkpoint", "run/checkpoint.json", "-o", "bare"]);
    assert!(out.status.success());
    assert!(stderr(&out).contains("warning"));
    assert!(dir.join("bare/assignments.csv").is_file());
    assert!(!dir.join("bare/interpretability.json").exists());

    let text = read(dir.join("run/checkpoint.json"));
    std::fs::write(dir.join("bad.json"), &text[..text.len() / 3]).unwrap();
    let out = mfdmc(dir, &["export", "--checkpoint", "bad.json", "-o", "never"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("version"), "{}", stderr(&out));
}

#[test]
fn reruns_are_byte_identical() {
    let (tmp, cfg) = fixture();
    let c = cfg.to_str().unwrap();
    assert!(mfdmc(tmp.path(), &["train", "-c", c, "-o", "a"]).status.success());
    assert!(mfdmc(tmp.path(), &["train", "-c", c, "-o", "b"]).status.success());
    for file in ["train_log.jsonl", "checkpoint.json", "metrics.json", "split.json"] {
        assert_eq!(read(tmp.path().join("a").join(file)), read(tmp.path().join("b").join(file)), "{file}");
    }
}

#[test]
fn missing_dataset_is_an_io_failure() {
    let tmp = TempDir::new().unwrap();
    let out = mfdmc(tmp.path(), &["train", "--set", "dataset.path=nowhere.data"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("nowhere.data"));
}
