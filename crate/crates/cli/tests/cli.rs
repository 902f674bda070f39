use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ocularage_core::dataman::read_manifest;
use ocularage_core::eval::EvalDocument;
use ocularage_core::preproc::GrayImage;

const SMALL: &str = r#"
workspace = "ws"

[synth]
subject_count = 16
sessions_per_subject = 3
sensor_b_fraction = 0.5

[train]
epochs = 1
batch_size = 16

[bench]
warmup = 3
iterations = 25
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ocularage"));
    c.env_remove("OCULARAGE_WORKSPACE");
    c
}

fn run(config: &Path, args: &[&str]) -> Output {
    bin().args(args).arg("--config").arg(config).output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[track_caller]
fn assert_ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), stderr(o));
}

#[track_caller]
fn assert_fails(o: &Output, code: i32, prefix: &str) {
    assert_eq!(o.status.code(), Some(code), "stderr: {}", stderr(o));
    let err = stderr(o);
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 1, "expected one line, got {err:?}");
    assert!(lines[0].starts_with(&format!("{prefix}: ")), "{err:?}");
}

/// File name to contents for every file under `dir`.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[train]\nepochs = 3\nlearning_rte = 0.1\n");
    assert_fails(&run(&cfg, &["synth"]), 2, "E_CONFIG");
    assert!(!dir.path().join("workspace").exists());
}

#[test]
fn wrongly_typed_field_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[train]\nbatch_size = \"big\"\n");
    assert_fails(&run(&cfg, &["train"]), 2, "E_CONFIG");
}

#[test]
fn missing_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_fails(&run(&dir.path().join("absent.toml"), &["split"]), 2, "E_CONFIG");
}

#[test]
fn missing_manifest_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    assert_fails(&run(&cfg, &["preprocess"]), 3, "E_DATA");
}

#[test]
fn unwritable_workspace_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("ws"), "not a directory").unwrap();
    let cfg = write_config(dir.path(), SMALL);
    assert_fails(&run(&cfg, &["synth"]), 3, "E_DATA");
}

#[test]
fn workspace_env_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("elsewhere");
    let cfg = write_config(dir.path(), "workspace = \"ignored\"\n[synth]\nsubject_count = 2\nsessions_per_subject = 1\n");
    let o = bin()
        .args(["synth", "--config"])
        .arg(&cfg)
        .env("OCULARAGE_WORKSPACE", &target)
        .output()
        .unwrap();
    assert_ok(&o);
    assert!(target.join("manifest.csv").exists());
    assert!(!dir.path().join("ignored").exists());
}

#[test]
fn synth_row_count_and_rerun_checksum() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[synth]\nsubject_count = 3\nsessions_per_subject = 2\n");
    assert_ok(&run(&cfg, &["synth"]));
    let manifest = dir.path().join("workspace/manifest.csv");
    assert_eq!(read_manifest(&manifest).unwrap().len(), 3 * 2 * 2);
    let first = std::fs::read(&manifest).unwrap();
    assert_ok(&run(&cfg, &["synth"]));
    assert_eq!(std::fs::read(&manifest).unwrap(), first);
}

#[test]
fn eval_without_checkpoint_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    assert_fails(&run(&cfg, &["eval"]), 5, "E_EVAL");
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let ws = dir.path().join("ws");

    assert_ok(&run(&cfg, &["synth"]));
    let records = read_manifest(&ws.join("manifest.csv")).unwrap();
    assert_eq!(records.len(), 16 * 3 * 2);

    let blank = &records[5];
    let frame = GrayImage::load_png(&ws.join(&blank.image_path)).unwrap();
    GrayImage::from_fn(frame.width(), frame.height(), |_, _| 0.5)
        .save_png(&ws.join(&blank.image_path))
        .unwrap();

    assert_ok(&run(&cfg, &["preprocess"]));
    let exclusions = std::fs::read_to_string(ws.join("exclusions.csv")).unwrap();
    assert!(exclusions.starts_with("id,subject_id,image_path,reason\n"));
    assert!(
        exclusions.lines().skip(1).any(|l| l.starts_with(&format!("{},", blank.id()))),
        "{exclusions}"
    );
    let cache = snapshot(&ws.join("cache"));
    assert_ok(&run(&cfg, &["preprocess"]));
    assert_eq!(snapshot(&ws.join("cache")), cache);
    assert_eq!(std::fs::read_to_string(ws.join("exclusions.csv")).unwrap(), exclusions);

    assert_ok(&run(&cfg, &["split"]));
    let split: serde_json::Value = serde_json::from_slice(&std::fs::read(ws.join("split.json")).unwrap()).unwrap();
    assert!(!split["assignment"]["test"].as_array().unwrap().is_empty());

    assert_ok(&run(&cfg, &["train"]));
    let eye_model = ws.join("models/eye/model.ocag");
    assert!(eye_model.exists());
    let history = std::fs::read_to_string(ws.join("models/eye/history.csv")).unwrap();
    assert_eq!(history.lines().count(), 2);

    assert_ok(&run(&cfg, &["train", "--modality", "iris"]));
    assert!(ws.join("models/iris/model.ocag").exists());
    assert_ok(&run(&cfg, &["eval", "--modality", "iris"]));

    let o = run(&cfg, &["eval", "--cross-sensor"]);
    assert_ok(&o);
    let reports = ws.join("reports/eye");
    let doc = EvalDocument::from_json(&std::fs::read_to_string(reports.join("report.json")).unwrap()).unwrap();
    let x = doc.cross_sensor.expect("paired reports");
    assert_eq!(x.same_sensor, doc.report);
    assert!(x.delta.mae_increase.is_finite());
    for f in [
        "metrics.csv",
        "age_bins.csv",
        "confidence.csv",
        "other_sensor_metrics.csv",
        "sensor_delta.csv",
        "confidence.svg",
        "age_bin_mae.svg",
    ] {
        assert!(reports.join(f).exists(), "missing {f}");
    }
    assert!(std::fs::read_dir(reports.join("saliency")).unwrap().count() > 0);

    assert_fails(&run(&cfg, &["eval", "--modality", "iris", "--checkpoint", eye_model.to_str().unwrap()]), 2, "E_CONFIG");

    assert_ok(&run(&cfg, &["bench"]));
    let bench: serde_json::Value = serde_json::from_slice(&std::fs::read(reports.join("bench.json")).unwrap()).unwrap();
    for variant in ["fp32", "fp16"] {
        let r = &bench[variant];
        assert_eq!(r["iterations"], 25);
        assert_eq!(r["batch_size"], 1);
        assert!(r["p95_ms"].as_f64().unwrap() >= r["median_ms"].as_f64().unwrap());
        assert!(r["cv"].as_f64().unwrap() >= 0.0);
    }
    assert_eq!(
        bench["fp16"]["size_bytes_fp16"].as_u64().unwrap() * 2,
        bench["fp32"]["size_bytes_fp32"].as_u64().unwrap()
    );

    let mut bytes = std::fs::read(&eye_model).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x5a;
    let tampered = dir.path().join("tampered.ocag");
    std::fs::write(&tampered, bytes).unwrap();
    assert_fails(&run(&cfg, &["eval", "--checkpoint", tampered.to_str().unwrap()]), 5, "E_EVAL");

    let reseeded = write_config(dir.path(), &SMALL.replace("[train]\n", "[train]\nseed = 7\n"));
    assert_ok(&run(&reseeded, &["train"]));
    assert_ne!(std::fs::read_to_string(ws.join("models/eye/history.csv")).unwrap(), history);
}
