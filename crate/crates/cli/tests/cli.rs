use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::{json, Value};

use posture_cli::{file_stem, loss_csv_path, AssessmentIndex, INDEX_FILE};
use posture_core::io::{load_report, read_json};
use posture_core::report::RangeScore;
use posture_core::skeleton::JointId;
use posture_core::transformer::{load_checkpoint, TransformerConfig, TransformerModel};

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn posture(args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_posture"))
        .args(args)
        .output()
        .unwrap();
    Run {
        code: out.status.code().unwrap(),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_json(path: &Path, value: &Value) {
    fs::write(path, serde_json::to_string_pretty(value).unwrap()).unwrap();
}

fn files_in(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = match fs::read_dir(dir) {
        Ok(rd) => rd
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect(),
        Err(_) => vec![],
    };
    v.sort();
    v
}

/// Runs `synth` and returns the keypoint file; `name` is the output stem.
fn synth(dir: &Path, name: &str, spec: Value, seed: u64, emit_config: bool) -> PathBuf {
    let spec_path = dir.join(format!("{name}.spec.json"));
    write_json(&spec_path, &spec);
    let out = dir.join("data");
    let seed = seed.to_string();
    let mut args = vec![
        "synth",
        "--spec",
        s(&spec_path),
        "--seed",
        &seed,
        "--out",
        s(&out),
        "--name",
        name,
    ];
    if emit_config {
        args.push("--emit-config");
    }
    let r = posture(&args);
    assert_eq!(r.code, 0, "{}", r.stderr);
    out.join(format!("{name}.keypoints.json"))
}

fn squat(extra: Value) -> Value {
    let mut spec = json!({"template": "squat", "n_frames": 30, "fps": 30.0, "noise_std": 0.5});
    spec.as_object_mut()
        .unwrap()
        .extend(extra.as_object().unwrap().clone());
    spec
}

#[test]
fn synth_writes_two_deterministic_files() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    write_json(&spec, &squat(json!({})));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let r = posture(&["synth", "--spec", s(&spec), "--seed", "7", "--out", s(out)]);
        assert_eq!(r.code, 0, "{}", r.stderr);
    }
    assert_eq!(
        files_in(&a),
        ["squat.annotation.json", "squat.keypoints.json"]
    );
    for f in files_in(&a) {
        assert_eq!(
            fs::read(a.join(&f)).unwrap(),
            fs::read(b.join(&f)).unwrap(),
            "{f}"
        );
    }
    let c = dir.path().join("c");
    posture(&["synth", "--spec", s(&spec), "--seed", "8", "--out", s(&c)]);
    assert_ne!(
        fs::read(a.join("squat.keypoints.json")).unwrap(),
        fs::read(c.join("squat.keypoints.json")).unwrap()
    );
}

#[test]
fn synth_rejects_short_spec() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    write_json(&spec, &squat(json!({"n_frames": 4})));
    let out = dir.path().join("out");
    let r = posture(&["synth", "--spec", s(&spec), "--out", s(&out)]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("n_frames"), "{}", r.stderr);
    assert!(files_in(&out).is_empty());
}

#[test]
fn self_assessment_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let seq = synth(dir.path(), "ref", squat(json!({"noise_std": 0.0})), 1, true);
    let config = dir.path().join("data/ref.config.json");
    let out = dir.path().join("out");
    let r = posture(&[
        "assess",
        "--candidate",
        s(&seq),
        "--reference",
        s(&seq),
        "--config",
        s(&config),
        "--out",
        s(&out),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(files_in(&out), [INDEX_FILE, "ref_report.json"]);
    let report = load_report(out.join("ref_report.json")).unwrap();
    assert_eq!((report.joint, report.pace), (100.0, 100.0));
    assert_eq!(report.range, RangeScore::Score(100.0));
    assert!(report.correction.is_empty());
    let index: AssessmentIndex = read_json(&out.join(INDEX_FILE)).unwrap();
    assert_eq!(index.entries.len(), 1);
    assert!(index.entries[0].aids.is_empty());
}

#[test]
fn truncated_knees_score_half_range_with_knee_aids() {
    let dir = tempfile::tempdir().unwrap();
    let reference = synth(dir.path(), "ref", squat(json!({})), 1, true);
    let errors = json!({"injected_errors": [
        {"joint": "left_knee", "type": "rom_truncation_fraction", "magnitude": 0.5},
        {"joint": "right_knee", "type": "rom_truncation_fraction", "magnitude": 0.5},
    ]});
    let cand = synth(dir.path(), "shallow", squat(errors), 2, false);

    // Ranges declared for the knees only.
    let config_path = dir.path().join("data/ref.config.json");
    let mut config: Value =
        serde_json::from_str(&fs::read_to_string(&config_path).unwrap()).unwrap();
    config["reference_angles"]
        .as_object_mut()
        .unwrap()
        .retain(|k, _| k.ends_with("knee"));
    write_json(&config_path, &config);

    let out = dir.path().join("out");
    let r = posture(&[
        "assess",
        "--candidate",
        s(&cand),
        "--reference",
        s(&reference),
        "--config",
        s(&config_path),
        "--out",
        s(&out),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let report = load_report(out.join("shallow_report.json")).unwrap();
    let RangeScore::Score(range) = report.range else {
        panic!("range not applicable")
    };
    assert!((45.0..=55.0).contains(&range), "{range}");
    assert_eq!(report.class, posture_core::config::BodyRegion::Lower);
    assert!(report.name.ends_with("(W)"), "{}", report.name);

    let index: AssessmentIndex = read_json(&out.join(INDEX_FILE)).unwrap();
    let aids = &index.entries[0].aids;
    assert!(!aids.is_empty());
    let knees = [JointId::LeftKnee, JointId::RightKnee];
    assert!(report.correction.iter().any(|c| knees.contains(&c.joint)));
    for aid in aids {
        let svg = fs::read_to_string(out.join(aid)).unwrap();
        assert!(svg.contains("<svg") && svg.contains("marker-end"), "{aid}");
        let frame = aid
            .strip_prefix("shallow_")
            .unwrap()
            .strip_suffix("_aid.svg")
            .unwrap();
        assert!(
            report
                .correction
                .iter()
                .any(|c| c.frames.iter().any(|f| f == frame)),
            "{aid}"
        );
    }
}

#[test]
fn batch_assessment_writes_every_candidate() {
    let dir = tempfile::tempdir().unwrap();
    let reference = synth(dir.path(), "ref", squat(json!({})), 1, true);
    let config = dir.path().join("data/ref.config.json");
    let offset = json!({"injected_errors": [{"joint": "left_knee", "type": "angle_offset_deg", "magnitude": 20.0}]});
    let a = synth(dir.path(), "a", squat(offset), 2, false);
    let b = synth(dir.path(), "b", squat(json!({"n_frames": 45})), 3, false);
    let out = dir.path().join("out");
    let r = posture(&[
        "assess",
        "--candidate",
        s(&a),
        "--candidate",
        s(&b),
        "--reference",
        s(&reference),
        "--config",
        s(&config),
        "--out",
        s(&out),
        "--jobs",
        "2",
        "--format",
        "json",
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let index: AssessmentIndex = read_json(&out.join(INDEX_FILE)).unwrap();
    let reports: Vec<&str> = index.entries.iter().map(|e| e.report.as_str()).collect();
    assert_eq!(reports, ["a_report.json", "b_report.json"]);
    assert!(!index.entries[0].aids.is_empty());
    let ra = load_report(out.join("a_report.json")).unwrap();
    let rb = load_report(out.join("b_report.json")).unwrap();
    assert!(ra.joint < rb.joint, "{} vs {}", ra.joint, rb.joint);
    for e in &index.entries {
        for f in std::iter::once(&e.report).chain(&e.aids) {
            assert!(out.join(f).is_file(), "{f}");
        }
    }
}

#[test]
fn failures_leave_no_output() {
    let dir = tempfile::tempdir().unwrap();
    let reference = synth(dir.path(), "ref", squat(json!({})), 1, true);
    let config = dir.path().join("data/ref.config.json");
    let out = dir.path().join("out");

    let r = posture(&[
        "assess",
        "--candidate",
        s(&reference),
        "--reference",
        s(&reference),
        "--config",
        s(&dir.path().join("missing.json")),
        "--out",
        s(&out),
    ]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("missing.json"), "{}", r.stderr);

    let broken = dir.path().join("broken.keypoints.json");
    fs::write(&broken, "{\"exercise_id\": \"x\"").unwrap();
    let r = posture(&[
        "assess",
        "--candidate",
        s(&reference),
        "--candidate",
        s(&broken),
        "--reference",
        s(&reference),
        "--config",
        s(&config),
        "--out",
        s(&out),
    ]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("broken.keypoints.json"), "{}", r.stderr);

    let r = posture(&[
        "assess",
        "--candidate",
        s(&reference),
        "--candidate",
        s(&reference),
        "--reference",
        s(&reference),
        "--config",
        s(&config),
        "--out",
        s(&out),
    ]);
    assert_eq!(r.code, 2);
    assert!(files_in(&out).is_empty());
}

#[test]
fn degenerate_skeletons_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let reference = synth(dir.path(), "ref", squat(json!({})), 1, true);
    let config = dir.path().join("data/ref.config.json");
    let frames: Vec<Value> = (0..10)
        .map(|k| json!({"id": k.to_string(), "t": k as f64 / 30.0, "keypoints": vec![[100.0, 100.0, 1.0]; 17]}))
        .collect();
    let flat = dir.path().join("flat.keypoints.json");
    write_json(
        &flat,
        &json!({"exercise_id": "squat", "class": "wrong", "fps": 30.0, "frames": frames}),
    );
    let out = dir.path().join("out");
    let r = posture(&[
        "assess",
        "--candidate",
        s(&flat),
        "--reference",
        s(&reference),
        "--config",
        s(&config),
        "--out",
        s(&out),
    ]);
    assert_eq!(r.code, 3, "{}", r.stderr);
    assert!(
        r.stderr.contains("flat.keypoints.json") && r.stderr.contains("torso"),
        "{}",
        r.stderr
    );
    assert!(files_in(&out).is_empty());
}

fn small_model() -> Value {
    json!({"d_model": 8, "n_heads": 2, "spatial_layers": 1, "temporal_layers": 1, "seq_len": 12, "mlp_hidden": 16, "seed": 0})
}

fn dataset(dir: &Path) -> PathBuf {
    for k in 0..8u64 {
        let errors = if k % 2 == 1 {
            json!({"injected_errors": [{"joint": "left_knee", "type": "angle_offset_deg", "magnitude": 30.0}]})
        } else {
            json!({})
        };
        synth(dir, &format!("ex{k}"), squat(errors), k, false);
    }
    dir.join("data")
}

fn train(dir: &Path, data: &Path, name: &str, train: Value) -> (Run, PathBuf) {
    let config = dir.join(format!("{name}.train.json"));
    write_json(&config, &json!({"model": small_model(), "train": train}));
    let ckpt = dir.join("models").join(format!("{name}.json"));
    let r = posture(&[
        "train",
        "--dataset",
        s(data),
        "--config",
        s(&config),
        "--out",
        s(&ckpt),
        "--seed",
        "3",
    ]);
    (r, ckpt)
}

#[test]
fn training_is_deterministic_and_scores_reports() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let settings = json!({"epochs": 10, "lr": 0.01, "batch_size": 4});
    let (r, first) = train(dir.path(), &data, "first", settings.clone());
    assert_eq!(r.code, 0, "{}", r.stderr);
    let (_, second) = train(dir.path(), &data, "second", settings);
    assert_eq!(fs::read(&first).unwrap(), fs::read(&second).unwrap());

    let csv = fs::read_to_string(loss_csv_path(&first)).unwrap();
    let losses: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(losses.len(), 10);
    for w in losses[2..].windows(2) {
        assert!(w[1] <= 1.1 * w[0], "{losses:?}");
    }

    // Assess with the model inline, then score an existing report.
    let reference = data.join("ex0.keypoints.json");
    let cand = data.join("ex1.keypoints.json");
    let config = dir.path().join("config.json");
    write_json(
        &config,
        &serde_json::to_value(posture_core::synth::Template::Squat.exercise_config()).unwrap(),
    );
    let out = dir.path().join("out");
    let r = posture(&[
        "assess",
        "--candidate",
        s(&cand),
        "--reference",
        s(&reference),
        "--config",
        s(&config),
        "--out",
        s(&out),
        "--aux-model",
        s(&first),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let report_path = out.join("ex1_report.json");
    let report = load_report(&report_path).unwrap();
    let aux = report.detail.auxiliary.expect("auxiliary scores");
    assert!([aux.joint, aux.pace, aux.range]
        .iter()
        .all(|v| (0.0..=100.0).contains(v)));

    let r = posture(&[
        "score-model",
        "--aux-model",
        s(&first),
        "--candidate",
        s(&cand),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let printed: posture_core::skeleton::ScoreTriple = serde_json::from_str(&r.stdout).unwrap();
    assert_eq!(printed, aux);

    let mut plain = report.clone();
    plain.detail.auxiliary = None;
    let plain_path = dir.path().join("plain.json");
    posture_core::io::save_report(&plain, &plain_path).unwrap();
    let extended = dir.path().join("extended.json");
    let r = posture(&[
        "score-model",
        "--aux-model",
        s(&first),
        "--candidate",
        s(&cand),
        "--report",
        s(&plain_path),
        "--out",
        s(&extended),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(load_report(&extended).unwrap(), report);
}

#[test]
fn zero_learning_rate_keeps_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let (r, ckpt) = train(dir.path(), &data, "frozen", json!({"epochs": 2, "lr": 0.0}));
    assert_eq!(r.code, 0, "{}", r.stderr);
    let mut config: TransformerConfig = serde_json::from_value(small_model()).unwrap();
    config.seed = 3;
    assert_eq!(
        load_checkpoint(&ckpt).unwrap(),
        TransformerModel::new(config).unwrap()
    );
}

#[test]
fn divergence_exits_4_without_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let (r, ckpt) = train(dir.path(), &data, "wild", json!({"epochs": 3, "lr": 1e300}));
    assert_eq!(r.code, 4, "{}", r.stderr);
    assert!(r.stderr.contains("epoch"), "{}", r.stderr);
    assert!(!ckpt.exists() && !loss_csv_path(&ckpt).exists());
}

#[test]
fn training_needs_annotations() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("empty");
    fs::create_dir_all(&data).unwrap();
    let (r, _) = train(dir.path(), &data, "none", json!({}));
    assert_eq!(r.code, 2, "{}", r.stderr);
    synth(dir.path(), "lonely", squat(json!({})), 0, false);
    fs::remove_file(dir.path().join("data/lonely.annotation.json")).unwrap();
    let (r, _) = train(dir.path(), &dir.path().join("data"), "none", json!({}));
    assert_eq!(r.code, 2, "{}", r.stderr);
    assert!(r.stderr.contains("lonely.annotation.json"), "{}", r.stderr);
}

#[test]
fn output_names() {
    assert_eq!(
        file_stem(Path::new("/x/squat_01.keypoints.json")),
        "squat_01"
    );
    assert_eq!(file_stem(Path::new("run.json")), "run");
    assert_eq!(file_stem(Path::new("raw")), "raw");
    assert_eq!(
        loss_csv_path(Path::new("m/model.json")),
        Path::new("m/model.loss.csv")
    );
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(posture(&["assess"]).code, 2);
    assert_eq!(
        posture(&["synth", "--spec", "x", "--out", "y", "--format", "xml"]).code,
        2
    );
}
