use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pixcue_core::io::container::{write_tensor, Tensor};
use pixcue_core::io::png::{read_label_png, write_gray_png, write_label_png};
use pixcue_core::io::DatasetManifest;
use pixcue_core::{LabelMap, ScoreMap, ScoreVolume};

fn pixcue(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pixcue"))
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&path).unwrap(),
                );
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn synth(dir: &Path, count: &str, extra: &[&str]) -> PathBuf {
    let mut args = vec![
        "gen-synth",
        "--out",
        s(dir),
        "--count",
        count,
        "--seed",
        "5",
    ];
    args.extend_from_slice(extra);
    let out = pixcue(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    dir.join("manifest.json")
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&pixcue(&["frobnicate"])), 1);
    assert_eq!(code(&pixcue(&["pipeline", "--gamma", "lots"])), 1);
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&pixcue(&[
            "gen-synth",
            "--out",
            s(dir.path()),
            "--count",
            "0"
        ])),
        1
    );
    assert_eq!(code(&pixcue(&["saliency", "--out", s(dir.path())])), 1);
    assert_eq!(code(&pixcue(&["--help"])), 0);
}

#[test]
fn missing_manifest_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out = pixcue(&[
        "eval",
        "--manifest",
        s(&missing),
        "--out",
        s(dir.path()),
        "--pred-dir",
        s(dir.path()),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn gen_synth_prints_manifest_path_and_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let out = pixcue(&[
        "gen-synth",
        "--out",
        s(a.path()),
        "--count",
        "5",
        "--seed",
        "3",
    ]);
    assert_eq!(
        String::from_utf8_lossy(&out.stdout).trim(),
        s(&a.path().join("manifest.json"))
    );
    pixcue(&[
        "gen-synth",
        "--out",
        s(b.path()),
        "--count",
        "5",
        "--seed",
        "3",
    ]);
    assert_eq!(tree(a.path()), tree(b.path()));
}

#[test]
fn paired_pipeline_is_deterministic_and_gains() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&dir.path().join("data"), "24", &["--two-shape"]);
    let run = |name: &str, workers: &str| {
        let out_dir = dir.path().join(name);
        let out = pixcue(&[
            "pipeline",
            "--manifest",
            s(&manifest),
            "--out",
            s(&out_dir),
            "--detector",
            "oracle",
            "--rounds",
            "2",
            "--paired",
            "--workers",
            workers,
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        out_dir
    };
    let (one, many) = (run("one", "1"), run("many", "4"));
    assert_eq!(tree(&one), tree(&many));
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(one.join("summary.json")).unwrap()).unwrap();
    assert!(summary["miou_delta"].as_f64().unwrap() > 0.0);
    assert!(one
        .join("hierarchical/saliency/scene_0000_s2.dct")
        .is_file());
    assert!(!one.join("single/saliency/scene_0000_s2.dct").exists());
}

#[test]
fn flags_override_config_and_combiners_run() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&dir.path().join("data"), "4", &[]);
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        format!(
            r#"{{"config_version":1,"manifest":{:?},"out":{:?},"gamma":0.9,"combiner":"geometric"}}"#,
            s(&manifest),
            s(&dir.path().join("run"))
        ),
    )
    .unwrap();
    let out = pixcue(&["pipeline", "--config", s(&cfg), "--gamma", "0.3"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("run/summary.json")).unwrap())
            .unwrap();
    assert!((summary["parameters"]["gamma"].as_f64().unwrap() - 0.3).abs() < 1e-6);
    assert_eq!(summary["parameters"]["combiner"], "geometric");
    for c in ["arithmetic", "geometric", "harmonic"] {
        let out = pixcue(&[
            "pipeline",
            "--config",
            s(&cfg),
            "--combiner",
            c,
            "--out",
            s(&dir.path().join(c)),
        ]);
        assert_eq!(code(&out), 0);
    }
    std::fs::write(&cfg, r#"{"config_version":2}"#).unwrap();
    assert_eq!(
        code(&pixcue(&[
            "pipeline",
            "--config",
            s(&cfg),
            "--manifest",
            s(&manifest),
            "--out",
            "x"
        ])),
        1
    );
}

#[test]
fn saliency_rounds_flag() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&dir.path().join("data"), "3", &["--two-shape"]);
    let out_dir = dir.path().join("sal");
    let out = pixcue(&[
        "saliency",
        "--manifest",
        s(&manifest),
        "--out",
        s(&out_dir),
        "--detector",
        "oracle",
        "--rounds",
        "1",
        "--thresholds",
        "0.5,0.6",
    ]);
    assert_eq!(code(&out), 0);
    assert!(out_dir.join("scene_0000_s1.dct").is_file());
    assert!(!out_dir.join("scene_0000_s2.dct").exists());
    assert_eq!(
        std::fs::read(out_dir.join("scene_0000_s1.dct")).unwrap(),
        std::fs::read(out_dir.join("scene_0000.dct")).unwrap()
    );
}

#[test]
fn eval_of_ground_truth_is_perfect_and_mismatches_fail() {
    let dir = tempfile::tempdir().unwrap();
    let manifest_path = synth(&dir.path().join("data"), "3", &[]);
    let out = pixcue(&[
        "eval",
        "--manifest",
        s(&manifest_path),
        "--out",
        s(&dir.path().join("ev")),
        "--pred-dir",
        s(&dir.path().join("data/ground_truth")),
    ]);
    assert_eq!(code(&out), 0);
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("ev/report.json")).unwrap()).unwrap();
    assert_eq!(report["miou"].as_f64(), Some(1.0));

    let bad = dir.path().join("bad");
    let m = DatasetManifest::load(&manifest_path).unwrap();
    for r in &m.records {
        write_label_png(
            &bad.join(format!("{}.png", r.id)),
            &LabelMap::filled(2, 2, 0).unwrap(),
        )
        .unwrap();
    }
    let out = pixcue(&[
        "eval",
        "--manifest",
        s(&manifest_path),
        "--out",
        s(&dir.path().join("ev2")),
        "--pred-dir",
        s(&bad),
    ]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("scene_0001"));
}

#[test]
fn cues_with_silent_saliency_are_background() {
    let dir = tempfile::tempdir().unwrap();
    let manifest_path = synth(&dir.path().join("data"), "3", &[]);
    let mut m = DatasetManifest::load(&manifest_path).unwrap();
    let zeros = ScoreMap::zeros(64, 64).unwrap();
    for i in 0..m.records.len() {
        let rel = PathBuf::from(format!("zeros/{}.png", m.records[i].id));
        write_gray_png(&m.resolve(&rel), &zeros).unwrap();
        m.records[i].saliency = Some(rel);
    }
    m.save(&manifest_path).unwrap();
    let cue_dir = dir.path().join("cues");
    let out = pixcue(&[
        "cues",
        "--manifest",
        s(&manifest_path),
        "--out",
        s(&cue_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for r in &m.records {
        let cues = read_label_png(&cue_dir.join(format!("{}.png", r.id))).unwrap();
        assert!(cues.data().iter().all(|&l| l == 0));
    }
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(cue_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["pixels"]["background"].as_u64(), Some(3 * 64 * 64));
}

#[test]
fn adapt_reproduces_one_hot_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let manifest_path = synth(&dir.path().join("data"), "4", &[]);
    let m = DatasetManifest::load(&manifest_path).unwrap();
    let preds = dir.path().join("pred");
    for r in &m.records {
        let gt = read_label_png(&m.resolve(r.ground_truth.as_ref().unwrap())).unwrap();
        let plane = gt.data().len();
        let mut data = vec![0f32; 4 * plane];
        for (i, &l) in gt.data().iter().enumerate() {
            data[l as usize * plane + i] = 1.0;
        }
        let v = ScoreVolume::from_channel_major(gt.width(), gt.height(), 0, &data).unwrap();
        write_tensor(
            &preds.join(format!("{}.dct", r.id)),
            &Tensor::from_volume(&v),
        )
        .unwrap();
    }
    let out_dir = dir.path().join("adapted");
    let out = pixcue(&[
        "adapt",
        "--manifest",
        s(&manifest_path),
        "--out",
        s(&out_dir),
        "--pred-dir",
        s(&preds),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for r in &m.records {
        let gt = read_label_png(&m.resolve(r.ground_truth.as_ref().unwrap())).unwrap();
        assert_eq!(
            read_label_png(&out_dir.join(format!("{}.png", r.id))).unwrap(),
            gt
        );
    }

    let short = ScoreVolume::from_channel_major(64, 64, 0, &vec![0.5; 2 * 64 * 64]).unwrap();
    write_tensor(&preds.join("scene_0000.dct"), &Tensor::from_volume(&short)).unwrap();
    let out = pixcue(&[
        "adapt",
        "--manifest",
        s(&manifest_path),
        "--out",
        s(&out_dir),
        "--pred-dir",
        s(&preds),
    ]);
    assert_eq!(code(&out), 3);
}

#[test]
fn train_head_with_zero_rate_keeps_init() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&dir.path().join("data"), "6", &[]);
    let out_dir = dir.path().join("head");
    let out = pixcue(&[
        "train-head",
        "--manifest",
        s(&manifest),
        "--out",
        s(&out_dir),
        "--lr",
        "0",
        "--steps",
        "3",
        "--seed",
        "2",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("losses.csv")).unwrap();
    let losses: Vec<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap())
        .collect();
    assert_eq!(losses.len(), 4);
    assert!(losses.iter().all(|l| *l == losses[0]));
    let bank = pixcue_core::io::read_tensor(&out_dir.join("bank.dct"))
        .unwrap()
        .to_filter_bank()
        .unwrap();
    let init = pixcue_core::head::ClassFilterBank::init_gaussian(vec![1, 2, 3], 3, 2).unwrap();
    assert_eq!(bank, init);
}
