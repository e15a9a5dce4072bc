use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use valleyscope::datasets::{label_spins, save_patterns, PatternRecord, PIXEL_UNITS};
use valleyscope_cli::config::schema_json;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_valleyscope"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

#[test]
fn published_schema_is_current() {
    let published =
        std::fs::read_to_string(repo_root().join("schema/experiment-config.schema.json")).unwrap();
    assert_eq!(published.trim_end(), schema_json().trim_end());
    let out = run(&["schema"]);
    assert!(out.status.success());
    assert_eq!(stdout(&out).trim_end(), schema_json().trim_end());
}

#[test]
fn shipped_configs_parse() {
    for entry in std::fs::read_dir(repo_root().join("configs")).unwrap() {
        let path = entry.unwrap().path();
        valleyscope_cli::ExperimentConfig::load(&path)
            .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
}

#[test]
fn unknown_config_fields_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"seed": 1, "sede": 2}"#).unwrap();
    let out = run(&["--config", cfg.to_str().unwrap(), "train"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("sede"));
}

#[test]
fn unknown_backend_fails_cleanly() {
    let out = run(&["--backend", "quantum", "train"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

fn write_fixture(dir: &Path) -> PathBuf {
    let patterns = |n: usize, shift: usize| -> Vec<PatternRecord> {
        (0..n)
            .map(|k| {
                let class = (k % 8) as u8;
                let mut visible: Vec<i8> = (0..PIXEL_UNITS)
                    .map(|j| {
                        if (j + shift + usize::from(class)) % 5 < 2 {
                            1
                        } else {
                            -1
                        }
                    })
                    .collect();
                visible.extend(label_spins(class));
                PatternRecord { visible, class }
            })
            .collect()
    };
    save_patterns(dir.join("train.txt"), &patterns(16, 0)).unwrap();
    save_patterns(dir.join("test.txt"), &patterns(8, 1)).unwrap();
    let cfg = dir.join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{
  "dataset": {"kind": "patterns", "train_path": "train.txt", "test_path": "test.txt"},
  "model": {"hidden_units": 4},
  "train": {"epochs": 2},
  "embedding": {"rows": 1, "cols": 16, "scales": [1.0, 2.0]},
  "backend": {"schedule": {"sweeps": 30}},
  "task_reads": 3,
  "sampling_reads": 20,
  "mcmc": {"sweeps": 5},
  "compare": {"max_characterized": 1, "escape": {"trials": 2, "max_jumps": 2000}, "width_traces": 1},
  "seed": 3
}"#,
    )
    .unwrap();
    cfg
}

#[test]
fn command_sequence_writes_reports_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_fixture(dir.path());
    let out_dir = dir.path().join("out");
    let base = [
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ];
    let step = |extra: &[&str]| {
        let args: Vec<&str> = base.iter().copied().chain(extra.iter().copied()).collect();
        let out = run(&args);
        assert!(
            out.status.success(),
            "{extra:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        stdout(&out)
    };

    let train = step(&["train"]);
    let summary: serde_json::Value = serde_json::from_str(&train).unwrap();
    assert_eq!(summary["epochs"], 2);
    assert_eq!(summary["train_patterns"], 16);

    let classify = step(&["classify"]);
    assert!(classify.contains("annealer: error") && classify.contains("mcmc: error"));
    step(&["reconstruct"]);
    let generated = step(&["generate", "--class", "2", "--k", "1"]);
    assert_eq!(generated.trim(), "1 images written");
    step(&["compare"]);
    step(&["sweep-scale"]);

    let csv = out_dir.join("train/metrics.csv");
    let head = std::fs::read_to_string(&csv).unwrap();
    assert!(head.starts_with("# valleyscope "));
    let svg = dir.path().join("metrics.svg");
    step(&[
        "plot",
        "--csv",
        csv.to_str().unwrap(),
        "--x",
        "epoch",
        "--y",
        "reconstruction_error",
        "--output",
        svg.to_str().unwrap(),
    ]);
    assert!(std::fs::read_to_string(&svg).unwrap().starts_with("<svg"));

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap())
            .unwrap();
    let files = manifest["files"].as_array().unwrap();
    for f in files {
        let path = out_dir.join(f["path"].as_str().unwrap());
        assert_eq!(
            std::fs::metadata(&path).unwrap().len(),
            f["bytes"].as_u64().unwrap()
        );
    }
    for expected in [
        "compare/compare.json",
        "sweep-scale/scale.csv",
        "generate/generated.svg",
    ] {
        assert!(
            files.iter().any(|f| f["path"] == expected),
            "{expected} not in manifest"
        );
    }
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_fixture(dir.path());
    let model = |seed: &str, out: &str| {
        let out_dir = dir.path().join(out);
        let status = run(&[
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--seed",
            seed,
            "train",
        ]);
        assert!(status.status.success());
        std::fs::read(out_dir.join("train/model.json")).unwrap()
    };
    assert_eq!(model("9", "a"), model("9", "b"));
    assert_ne!(model("9", "a"), model("10", "c"));
}
