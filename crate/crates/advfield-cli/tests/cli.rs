//! End-to-end checks of the binary: the full pipeline on a miniature
//! corpus, replay determinism, the per-class exit codes, and the export
//! format.

use advfield::data::{read_cloud, read_labels, read_manifest, write_cloud};
use advfield::detector::{write_params, ScorerParams};
use advfield::geometry::{GtObject, OrientedBox3, PointCloud, SceneFrame, Vec3};
use advfield::metrics::read_report;
use advfield::vfield::{deform_object, DeformationConfig, GridShape, VectorFieldGrid};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn advfield_cmd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_advfield"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) -> String {
    let out = advfield_cmd(args);
    assert!(
        out.status.success(),
        "command {:?} failed\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn run_err(args: &[&str]) -> (i32, String) {
    let out = advfield_cmd(args);
    assert!(!out.status.success(), "command {args:?} unexpectedly succeeded");
    (
        out.status.code().expect("exit code"),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

/// Generates a miniature corpus and returns its manifest path.
fn tiny_corpus(dir: &Path, seed: &str) -> PathBuf {
    run_ok(&[
        "gen-data",
        "--out",
        &s(dir),
        "--seed",
        seed,
        "--scenes",
        "6",
        "--beams",
        "24",
        "--points-min",
        "120",
        "--points-max",
        "180",
        "--ground-points",
        "150",
        "--objects-max",
        "3",
    ]);
    dir.join("manifest.txt")
}

#[test]
fn pipeline_smoke() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();

    let manifest = tiny_corpus(&root.join("data"), "7");
    let m = read_manifest(&manifest).unwrap();
    assert_eq!(m.train.len() + m.val.len(), 12, "6 scenes, paired frames");
    assert!(root.join("data/run_config.toml").is_file());

    let scorer_dir = root.join("scorer");
    let out = run_ok(&[
        "train-scorer",
        "--manifest",
        &s(&manifest),
        "--out",
        &s(&scorer_dir),
        "--seed",
        "7",
        "--hidden",
        "16",
        "--epochs",
        "15",
        "--min-accuracy",
        "0.5",
    ]);
    assert!(out.contains("holdout accuracy"));
    let scorer = scorer_dir.join("scorer.params");
    assert!(scorer.is_file());

    let field_dir = root.join("field");
    run_ok(&[
        "train-field",
        "--manifest",
        &s(&manifest),
        "--scorer",
        &s(&scorer),
        "--out",
        &s(&field_dir),
        "--seed",
        "7",
        "--steps",
        "2",
        "--groups",
        "3",
        "--variants",
        "2",
    ]);
    let bank = field_dir.join("bank.bin");
    assert!(bank.is_file());
    let log = std::fs::read_to_string(field_dir.join("train_log.txt")).unwrap();
    let rows = log.lines().filter(|l| !l.starts_with('#')).count();
    assert_eq!(rows, 2, "one log row per epoch");

    let attacked_dir = root.join("attacked");
    run_ok(&[
        "attack",
        "--manifest",
        &s(&manifest),
        "--mode",
        "field",
        "--bank",
        &s(&bank),
        "--out",
        &s(&attacked_dir),
        "--seed",
        "7",
    ]);
    let am = read_manifest(&attacked_dir.join("manifest.txt")).unwrap();
    assert_eq!(am.val.len(), m.val.len());

    let augmented_dir = root.join("augmented");
    run_ok(&[
        "augment",
        "--manifest",
        &s(&manifest),
        "--bank",
        &s(&bank),
        "--out",
        &s(&augmented_dir),
        "--seed",
        "7",
    ]);
    let prov = std::fs::read_to_string(augmented_dir.join("provenance.txt")).unwrap();
    assert_eq!(
        prov.lines().filter(|l| !l.starts_with('#')).count(),
        12,
        "fraction defaults to 1.0: every frame augmented"
    );

    let eval_dir = root.join("eval");
    run_ok(&[
        "eval",
        "--clean",
        &s(&manifest),
        "--modified",
        &s(&attacked_dir.join("manifest.txt")),
        "--scorer",
        &s(&scorer),
        "--out",
        &s(&eval_dir),
    ]);
    let report = read_report(&eval_dir.join("report.txt")).unwrap();
    assert_eq!(report.iou_threshold, 0.7);
    assert!(report.mean_chamfer.is_some());

    // Clean against itself: nothing flips, ASR is exactly zero.
    let self_dir = root.join("eval_self");
    run_ok(&[
        "eval",
        "--clean",
        &s(&manifest),
        "--modified",
        &s(&manifest),
        "--scorer",
        &s(&scorer),
        "--out",
        &s(&self_dir),
    ]);
    let self_report = read_report(&self_dir.join("report.txt")).unwrap();
    assert_eq!(self_report.asr_percent, Some(0.0));
    assert_eq!(self_report.mean_chamfer, Some(0.0));
}

#[test]
fn zero_scenes_is_an_empty_success() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("empty");
    run_ok(&["gen-data", "--out", &s(&dir), "--seed", "1", "--scenes", "0"]);
    let m = read_manifest(&dir.join("manifest.txt")).unwrap();
    assert!(m.train.is_empty() && m.val.is_empty());
}

#[test]
fn generation_replays_byte_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    tiny_corpus(&a, "99");
    tiny_corpus(&b, "99");
    let mut paths: Vec<PathBuf> = walk(&a);
    paths.sort();
    assert!(!paths.is_empty());
    for pa in paths {
        let rel = pa.strip_prefix(&a).unwrap();
        if rel == Path::new("run_config.toml") {
            continue; // echoes the out dir path, which differs by design
        }
        let pb = b.join(rel);
        assert_eq!(
            std::fs::read(&pa).unwrap(),
            std::fs::read(&pb).unwrap(),
            "{} differs between replays",
            rel.display()
        );
    }
}

fn walk(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out
}

#[test]
fn removal_mode_deletes_a_tenth_per_object() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest_path = tiny_corpus(&tmp.path().join("data"), "31");
    let manifest = read_manifest(&manifest_path).unwrap();
    let scorer_path = tmp.path().join("scorer.params");
    write_params(&scorer_path, &ScorerParams::init(16, 5)).unwrap();

    let out_dir = tmp.path().join("removed");
    run_ok(&[
        "attack",
        "--manifest",
        &s(&manifest_path),
        "--mode",
        "removal",
        "--scorer",
        &s(&scorer_path),
        "--out",
        &s(&out_dir),
        "--seed",
        "3",
        "--split",
        "val",
    ]);

    for entry in &manifest.val {
        let scene = manifest.load_frame(entry).unwrap();
        let expected_removed: usize = scene
            .objects
            .iter()
            .map(|o| scene.cloud.indices_in_box(&o.bbox, 0.0).len())
            .filter(|&n| n >= 10)
            .map(|n| n / 10)
            .sum();
        let attacked = read_cloud(&out_dir.join(&entry.cloud)).unwrap();
        assert_eq!(attacked.len(), scene.cloud.len() - expected_removed);
        let labels_a = std::fs::read(manifest.root.join(&entry.labels)).unwrap();
        let labels_b = std::fs::read(out_dir.join(&entry.labels)).unwrap();
        assert_eq!(labels_a, labels_b);
    }
    // Train frames pass through untouched.
    for entry in &manifest.train {
        let a = std::fs::read(manifest.root.join(&entry.cloud)).unwrap();
        let b = std::fs::read(out_dir.join(&entry.cloud)).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn export_ply_emits_the_exact_single_point_displacement() {
    // The hand-computed case: one point near one lattice root holding
    // v = 0.1 * ray direction, k = 1, distance aggregation. The shift is
    // exactly 0.1 * d along the ray; the emitted scalar must match it up
    // to f32 storage rounding.
    let shape = GridShape::default_car();
    let dims = shape.default_box();
    let bbox = OrientedBox3::new(Vec3::new(12.0, 0.0, 0.0), dims.width, dims.height, dims.length, 0.0);
    let root_flat = shape.flat_index(4, 3, 11);
    let root_world = shape.root(4, 3, 11) + bbox.center;
    let p = root_world + Vec3::new(0.05, 0.02, 0.01);
    let ray_dir = p.normalized().unwrap();
    let mut field = VectorFieldGrid::zeros(shape);
    field.vectors_mut()[root_flat] = ray_dir * 0.1;
    let mut cloud = PointCloud::new();
    cloud.push(p, 1.0);
    let scene = SceneFrame {
        cloud,
        sensor_origin: Vec3::ZERO,
        objects: vec![GtObject {
            id: 0,
            kind: "Car".into(),
            bbox,
        }],
    };
    let cfg = DeformationConfig {
        k: 1,
        ..DeformationConfig::default()
    };
    let deformed = deform_object(&scene, &bbox, &field, &cfg).unwrap();
    let d = (p - root_world).norm();

    let tmp = tempfile::tempdir().unwrap();
    let clean_path = tmp.path().join("clean.bin");
    let moved_path = tmp.path().join("moved.bin");
    write_cloud(&clean_path, &scene.cloud).unwrap();
    write_cloud(&moved_path, &deformed.cloud).unwrap();

    let out_dir = tmp.path().join("ply");
    run_ok(&[
        "export-ply",
        "--cloud",
        &s(&moved_path),
        "--baseline",
        &s(&clean_path),
        "--out",
        &s(&out_dir),
        "--seed",
        "0",
    ]);
    let text = std::fs::read_to_string(out_dir.join("cloud.ply")).unwrap();
    assert!(text.starts_with("ply\nformat ascii 1.0\n"));
    assert!(text.contains("element vertex 1\n"));
    assert!(text.contains("property float displacement\n"));
    let last = text.lines().last().unwrap();
    let scalar: f64 = last.split_whitespace().last().unwrap().parse().unwrap();
    assert!(
        (scalar - 0.1 * d).abs() < 1e-5,
        "emitted {scalar}, hand-computed {}",
        0.1 * d
    );
}

#[test]
fn zero_displacement_pair_exports_zero_scalars() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cloud = PointCloud::new();
    cloud.push(Vec3::new(1.0, 2.0, 3.0), 0.5);
    cloud.push(Vec3::new(-4.0, 0.5, 2.0), 0.25);
    let path = tmp.path().join("c.bin");
    write_cloud(&path, &cloud).unwrap();
    let out_dir = tmp.path().join("ply");
    run_ok(&[
        "export-ply",
        "--cloud",
        &s(&path),
        "--baseline",
        &s(&path),
        "--out",
        &s(&out_dir),
    ]);
    let text = std::fs::read_to_string(out_dir.join("cloud.ply")).unwrap();
    for line in text.lines().skip_while(|l| *l != "end_header").skip(1) {
        assert_eq!(line.split_whitespace().last(), Some("0"));
    }
}

#[test]
fn error_classes_map_to_distinct_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();

    // Config: unknown attack mode.
    let manifest = tiny_corpus(&root.join("data"), "55");
    let (code, msg) = run_err(&[
        "attack",
        "--manifest",
        &s(&manifest),
        "--mode",
        "bogus",
        "--out",
        &s(&root.join("x1")),
    ]);
    assert_eq!(code, 10, "{msg}");

    // Config: mode needs a scorer.
    let (code, msg) = run_err(&[
        "attack",
        "--manifest",
        &s(&manifest),
        "--mode",
        "removal",
        "--out",
        &s(&root.join("x2")),
    ]);
    assert_eq!(code, 10, "{msg}");
    assert!(msg.contains("--scorer"), "actionable: {msg}");

    // Io: scorer file does not exist.
    let (code, msg) = run_err(&[
        "train-field",
        "--manifest",
        &s(&manifest),
        "--scorer",
        &s(&root.join("nope.params")),
        "--out",
        &s(&root.join("x3")),
    ]);
    assert_eq!(code, 17, "{msg}");

    // Malformed: cloud byte length not a multiple of the record size.
    let bad = root.join("bad.bin");
    std::fs::write(&bad, [0u8; 7]).unwrap();
    let (code, msg) = run_err(&["export-ply", "--cloud", &s(&bad), "--out", &s(&root.join("x4"))]);
    assert_eq!(code, 15, "{msg}");

    // Geometry: displacement pair with mismatched cardinality.
    let mut one = PointCloud::new();
    one.push(Vec3::new(1.0, 0.0, 0.0), 0.5);
    let mut two = one.clone();
    two.push(Vec3::new(2.0, 0.0, 0.0), 0.5);
    let one_path = root.join("one.bin");
    let two_path = root.join("two.bin");
    write_cloud(&one_path, &one).unwrap();
    write_cloud(&two_path, &two).unwrap();
    let (code, msg) = run_err(&[
        "export-ply",
        "--cloud",
        &s(&one_path),
        "--baseline",
        &s(&two_path),
        "--out",
        &s(&root.join("x5")),
    ]);
    assert_eq!(code, 11, "{msg}");

    // Parse: label file with the wrong column count, planted in a train
    // frame so train-scorer trips over it while loading.
    let m = read_manifest(&manifest).unwrap();
    let some_label = m.root.join(&m.train[0].labels);
    std::fs::write(&some_label, "Car 1 2 3\n").unwrap();
    assert!(read_labels(&some_label).is_err());
    let (code, msg) = run_err(&[
        "train-scorer",
        "--manifest",
        &s(&manifest),
        "--out",
        &s(&root.join("x6")),
        "--epochs",
        "1",
    ]);
    assert_eq!(code, 16, "{msg}");
}

#[test]
fn config_file_layers_under_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let cfg_path = root.join("run.toml");
    std::fs::write(
        &cfg_path,
        "seed = 5\n[gen_data]\nscenes = 2\nbeams = 24\npoints_min = 120\npoints_max = 180\nground_points = 150\n",
    )
    .unwrap();

    // File values apply when no flag is given.
    let a_dir = root.join("a");
    run_ok(&["gen-data", "--config", &s(&cfg_path), "--out", &s(&a_dir)]);
    let a = read_manifest(&a_dir.join("manifest.txt")).unwrap();
    assert_eq!(a.train.len() + a.val.len(), 4);

    // An explicit flag overrides the file.
    let b_dir = root.join("b");
    run_ok(&[
        "gen-data",
        "--config",
        &s(&cfg_path),
        "--out",
        &s(&b_dir),
        "--scenes",
        "3",
    ]);
    let b = read_manifest(&b_dir.join("manifest.txt")).unwrap();
    assert_eq!(b.train.len() + b.val.len(), 6);

    // The frozen echo loads back as a config file and replays the run.
    let frozen = a_dir.join("run_config.toml");
    let c_dir = root.join("c");
    run_ok(&["gen-data", "--config", &s(&frozen), "--out", &s(&c_dir)]);
    for entry in a.train.iter().chain(&a.val) {
        let x = std::fs::read(a_dir.join(&entry.cloud)).unwrap();
        let y = std::fs::read(c_dir.join(&entry.cloud)).unwrap();
        assert_eq!(x, y, "frozen config replay must be bit-exact");
    }
}
