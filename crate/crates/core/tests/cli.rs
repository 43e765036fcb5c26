//! End-to-end checks of the `crossmetric` binary: synth → train → eval →
//! report on a small synthetic dataset, plus error-path exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn crossmetric(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crossmetric"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn assert_success(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

const TINY_CONFIG: &str = r#"
seed = 5

[dataset.synthetic]
classes = 4
docs_per_class = 25
latent_dim = 4
image_dim = 8
text_dim = 8
cluster_spread = 1.0
modality_noise = 0.3
seed = 5

[pretrain]
learning_rate = 0.01
batch_size = 8
iterations = 15

[finetune]
learning_rate = 0.01
batch_size = 8
iterations = 15

[metric]
learning_rate = 0.01
batch_size = 8
iterations = 15
"#;

#[test]
fn synth_train_eval_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::write(root.join("cfg.toml"), TINY_CONFIG).unwrap();

    let out = crossmetric(&["synth", "--config", "cfg.toml", "--out", "data"], root);
    assert_success(&out, "synth");
    for file in [
        "images.features",
        "texts.features",
        "splits.csv",
        "dataset.toml",
    ] {
        assert!(
            root.join("data").join(file).is_file(),
            "missing data/{file}"
        );
    }

    // train/eval from the generated on-disk dataset via its manifest
    let manifest_config = format!(
        "seed = 5\npair_count = 300\n\n[dataset]\nmanifest = \"data/dataset.toml\"\n{}",
        TINY_CONFIG
            .lines()
            .skip_while(|l| !l.starts_with("[pretrain]"))
            .collect::<Vec<_>>()
            .join("\n")
    );
    fs::write(root.join("cfg_manifest.toml"), manifest_config).unwrap();

    let out = crossmetric(
        &["train", "--config", "cfg_manifest.toml", "--out", "runs/a"],
        root,
    );
    assert_success(&out, "train");
    for file in [
        "pathway_pretrained.ckpt",
        "pathway.ckpt",
        "metric.ckpt",
        "pretrain_loss.csv",
        "finetune_loss.csv",
        "metric_loss.csv",
        "run_manifest.toml",
    ] {
        assert!(
            root.join("runs/a").join(file).is_file(),
            "missing runs/a/{file}"
        );
    }

    let out = crossmetric(
        &["eval", "--config", "cfg_manifest.toml", "--out", "runs/a"],
        root,
    );
    assert_success(&out, "eval");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        stdout.contains("Average"),
        "eval summary missing Average row: {stdout}"
    );
    assert!(root.join("runs/a/eval/map_summary.txt").is_file());

    let out = crossmetric(&["report", "--out", "runs"], root);
    assert_success(&out, "report");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        stdout.contains("cosine"),
        "report missing cosine column: {stdout}"
    );
}

#[test]
fn seed_flag_overrides_config_seed() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::write(root.join("cfg.toml"), TINY_CONFIG).unwrap();
    for (out_dir, seed) in [("a", "5"), ("b", "99")] {
        let out = crossmetric(
            &[
                "train", "--config", "cfg.toml", "--out", out_dir, "--seed", seed,
            ],
            root,
        );
        assert_success(&out, "train");
    }
    let a = fs::read(root.join("a/pathway.ckpt")).unwrap();
    let b = fs::read(root.join("b/pathway.ckpt")).unwrap();
    assert_ne!(a, b, "different seeds must give different checkpoints");
}

#[test]
fn invalid_config_fails_with_error() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::write(root.join("bad.toml"), "seed = \"not a number\"\n").unwrap();
    let out = crossmetric(&["train", "--config", "bad.toml", "--out", "run"], root);
    assert!(!out.status.success(), "train must fail on a bad config");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error:"), "unexpected stderr: {stderr}");
}

#[test]
fn eval_without_checkpoints_fails() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::write(root.join("cfg.toml"), TINY_CONFIG).unwrap();
    let out = crossmetric(&["eval", "--config", "cfg.toml", "--out", "empty"], root);
    assert!(!out.status.success(), "eval must fail without checkpoints");
}
