//! One function per subcommand. Each resolves its layered options into a
//! concrete config, runs the library operation, freezes the config into
//! the output directory, and prints where the artifacts went.

use crate::config::{freeze, layer, require, resolve_out, FileConfig};
use crate::ply;
use advfield::attack::{
    chamfer_attack, deform_scene_with_bank, format_train_log, generation_attack, iter_grad_l2,
    removal_attack, train_field_bank, AttackConfig,
};
use advfield::augment::{augment_dataset, AugmentPolicy};
use advfield::data::{
    generate_corpus, random_point_noise, read_cloud, read_manifest, write_cloud, write_manifest,
    DatasetManifest, GeneratorConfig, Split, MIN_OBJECT_POINTS,
};
use advfield::detector::{detect, read_params, train_scorer, write_params, ScorerParams, ScorerTrainConfig};
use advfield::exec;
use advfield::geometry::{SceneFrame, Vec3};
use advfield::metrics::{
    asr, chamfer_distance, detection_flags, match_detections, write_report, CategoryCounts,
    EvalReport,
};
use advfield::vfield::{
    read_bank, write_bank, Aggregation, ConstraintMode, DeformationConfig, FieldBank, GridShape,
    GroupingKey,
};
use advfield::{Error, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Intensity assigned to points the generation attack injects.
const INJECTED_INTENSITY: f32 = 0.5;

// ---------------------------------------------------------------- gen-data

#[derive(Args, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDataOpts {
    /// Scenes to generate; each emits a clean and a damaged frame.
    #[arg(long)]
    scenes: Option<usize>,
    #[arg(long)]
    objects_min: Option<usize>,
    #[arg(long)]
    objects_max: Option<usize>,
    /// Closest object distance from the sensor, meters.
    #[arg(long)]
    radial_min: Option<f64>,
    #[arg(long)]
    radial_max: Option<f64>,
    /// Half-width of the forward azimuth fan, radians.
    #[arg(long)]
    azimuth_half_range: Option<f64>,
    /// Elevation channels of the simulated sensor.
    #[arg(long)]
    beams: Option<usize>,
    #[arg(long)]
    points_min: Option<usize>,
    #[arg(long)]
    points_max: Option<usize>,
    #[arg(long)]
    ground_points: Option<usize>,
    /// Probability that a scene's damaged twin actually differs.
    #[arg(long)]
    damage_probability: Option<f64>,
    #[arg(long)]
    dent_min: Option<f64>,
    #[arg(long)]
    dent_max: Option<f64>,
    /// Fraction of scenes assigned to the validation split.
    #[arg(long)]
    val_fraction: Option<f64>,
}

#[derive(Debug, Serialize)]
struct GenDataConfig {
    scenes: usize,
    objects_min: usize,
    objects_max: usize,
    radial_min: f64,
    radial_max: f64,
    azimuth_half_range: f64,
    beams: usize,
    points_min: usize,
    points_max: usize,
    ground_points: usize,
    damage_probability: f64,
    dent_min: f64,
    dent_max: f64,
    val_fraction: f64,
}

pub fn gen_data(flags: GenDataOpts, file: &FileConfig, seed: u64, out: Option<PathBuf>) -> Result<()> {
    let f: GenDataOpts = file.section("gen-data")?;
    let d = GeneratorConfig::default();
    let cfg = GenDataConfig {
        scenes: layer(flags.scenes, f.scenes).unwrap_or(d.scenes),
        objects_min: layer(flags.objects_min, f.objects_min).unwrap_or(d.objects_per_scene.0),
        objects_max: layer(flags.objects_max, f.objects_max).unwrap_or(d.objects_per_scene.1),
        radial_min: layer(flags.radial_min, f.radial_min).unwrap_or(d.radial_range.0),
        radial_max: layer(flags.radial_max, f.radial_max).unwrap_or(d.radial_range.1),
        azimuth_half_range: layer(flags.azimuth_half_range, f.azimuth_half_range)
            .unwrap_or(d.azimuth_half_range),
        beams: layer(flags.beams, f.beams).unwrap_or(d.beams),
        points_min: layer(flags.points_min, f.points_min).unwrap_or(d.points_per_object.0),
        points_max: layer(flags.points_max, f.points_max).unwrap_or(d.points_per_object.1),
        ground_points: layer(flags.ground_points, f.ground_points).unwrap_or(d.ground_points),
        damage_probability: layer(flags.damage_probability, f.damage_probability)
            .unwrap_or(d.damage_probability),
        dent_min: layer(flags.dent_min, f.dent_min).unwrap_or(d.dent_magnitude.0),
        dent_max: layer(flags.dent_max, f.dent_max).unwrap_or(d.dent_magnitude.1),
        val_fraction: layer(flags.val_fraction, f.val_fraction).unwrap_or(d.val_fraction),
    };
    let out = resolve_out(out, file.out.clone())?;
    ensure_dir(&out)?;

    let gcfg = GeneratorConfig {
        out_dir: out.clone(),
        scenes: cfg.scenes,
        objects_per_scene: (cfg.objects_min, cfg.objects_max),
        radial_range: (cfg.radial_min, cfg.radial_max),
        azimuth_half_range: cfg.azimuth_half_range,
        beams: cfg.beams,
        points_per_object: (cfg.points_min, cfg.points_max),
        ground_points: cfg.ground_points,
        damage_probability: cfg.damage_probability,
        dent_magnitude: (cfg.dent_min, cfg.dent_max),
        val_fraction: cfg.val_fraction,
        rng_seed: seed,
    };
    let manifest = generate_corpus(&gcfg)?;
    freeze(&out, "gen-data", seed, &cfg)?;
    println!("manifest {}", out.join("manifest.txt").display());
    println!(
        "scenes {} train frames {} val frames {}",
        cfg.scenes,
        manifest.train.len(),
        manifest.val.len()
    );
    Ok(())
}

// ------------------------------------------------------------ train-scorer

#[derive(Args, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainScorerOpts {
    /// Dataset manifest to train on (its train split is used).
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    jitters_per_object: Option<usize>,
    #[arg(long)]
    negatives_per_scene: Option<usize>,
    #[arg(long)]
    hard_negatives_per_object: Option<usize>,
    /// Lower bound of the side-face inset for hard negatives.
    #[arg(long)]
    hard_negative_inset_min: Option<f64>,
    /// Upper bound of the side-face inset for hard negatives.
    #[arg(long)]
    hard_negative_inset_max: Option<f64>,
    #[arg(long)]
    residual_weight: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    label_smoothing: Option<f64>,
    #[arg(long)]
    holdout_fraction: Option<f64>,
    /// Required holdout accuracy; training fails below it.
    #[arg(long)]
    min_accuracy: Option<f64>,
}

#[derive(Debug, Serialize)]
struct TrainScorerConfig {
    manifest: PathBuf,
    hidden: usize,
    epochs: usize,
    lr: f64,
    jitters_per_object: usize,
    negatives_per_scene: usize,
    hard_negatives_per_object: usize,
    hard_negative_inset_min: f64,
    hard_negative_inset_max: f64,
    residual_weight: f64,
    weight_decay: f64,
    label_smoothing: f64,
    holdout_fraction: f64,
    min_accuracy: f64,
}

pub fn cmd_train_scorer(
    flags: TrainScorerOpts,
    file: &FileConfig,
    seed: u64,
    out: Option<PathBuf>,
) -> Result<()> {
    let f: TrainScorerOpts = file.section("train-scorer")?;
    let d = ScorerTrainConfig::default();
    let cfg = TrainScorerConfig {
        manifest: require(layer(flags.manifest, f.manifest), "a dataset manifest", "--manifest")?,
        hidden: layer(flags.hidden, f.hidden).unwrap_or(d.hidden),
        epochs: layer(flags.epochs, f.epochs).unwrap_or(d.epochs),
        lr: layer(flags.lr, f.lr).unwrap_or(d.lr),
        jitters_per_object: layer(flags.jitters_per_object, f.jitters_per_object)
            .unwrap_or(d.jitters_per_object),
        negatives_per_scene: layer(flags.negatives_per_scene, f.negatives_per_scene)
            .unwrap_or(d.negatives_per_scene),
        hard_negatives_per_object: layer(flags.hard_negatives_per_object, f.hard_negatives_per_object)
            .unwrap_or(d.hard_negatives_per_object),
        hard_negative_inset_min: layer(flags.hard_negative_inset_min, f.hard_negative_inset_min)
            .unwrap_or(d.hard_negative_inset.0),
        hard_negative_inset_max: layer(flags.hard_negative_inset_max, f.hard_negative_inset_max)
            .unwrap_or(d.hard_negative_inset.1),
        residual_weight: layer(flags.residual_weight, f.residual_weight)
            .unwrap_or(d.residual_weight),
        weight_decay: layer(flags.weight_decay, f.weight_decay).unwrap_or(d.weight_decay),
        label_smoothing: layer(flags.label_smoothing, f.label_smoothing)
            .unwrap_or(d.label_smoothing),
        holdout_fraction: layer(flags.holdout_fraction, f.holdout_fraction)
            .unwrap_or(d.holdout_fraction),
        min_accuracy: layer(flags.min_accuracy, f.min_accuracy).unwrap_or(d.min_accuracy),
    };
    let out = resolve_out(out, file.out.clone())?;
    ensure_dir(&out)?;

    let manifest = read_manifest(&cfg.manifest)?;
    let scenes = manifest.load_split(Split::Train)?;
    let tcfg = ScorerTrainConfig {
        hidden: cfg.hidden,
        epochs: cfg.epochs,
        lr: cfg.lr,
        jitters_per_object: cfg.jitters_per_object,
        negatives_per_scene: cfg.negatives_per_scene,
        hard_negatives_per_object: cfg.hard_negatives_per_object,
        hard_negative_inset: (cfg.hard_negative_inset_min, cfg.hard_negative_inset_max),
        residual_weight: cfg.residual_weight,
        weight_decay: cfg.weight_decay,
        label_smoothing: cfg.label_smoothing,
        holdout_fraction: cfg.holdout_fraction,
        min_accuracy: cfg.min_accuracy,
        min_points: MIN_OBJECT_POINTS,
        seed,
    };
    let report = train_scorer(&scenes, &tcfg)?;
    let params_path = out.join("scorer.params");
    write_params(&params_path, &report.params)?;
    freeze(&out, "train-scorer", seed, &cfg)?;
    println!(
        "holdout accuracy {:.4} over {} crops ({} train crops)",
        report.holdout_accuracy, report.holdout_crops, report.train_crops
    );
    println!("params {}", params_path.display());
    Ok(())
}

// ------------------------------------------------------------- train-field

#[derive(Args, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFieldOpts {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Trained scorer parameters (the attack target).
    #[arg(long)]
    scorer: Option<PathBuf>,
    /// Per-component clamp of field vectors, meters.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    /// Training epochs over the corpus.
    #[arg(long)]
    steps: Option<usize>,
    /// Lattice neighbors blended per point.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    groups: Option<usize>,
    #[arg(long)]
    variants: Option<usize>,
    /// distance | average | sum
    #[arg(long)]
    aggregation: Option<String>,
    /// full | ray_only | unleash | no_learn
    #[arg(long)]
    constraint: Option<String>,
    /// relative_rotation | distance | num_points
    #[arg(long)]
    grouping: Option<String>,
    #[arg(long)]
    s_rel: Option<f64>,
    /// Uniform init range of fresh field vectors, meters.
    #[arg(long)]
    init_range: Option<f64>,
    /// Lattice spacing, meters.
    #[arg(long)]
    spacing: Option<f64>,
}

#[derive(Debug, Serialize)]
struct TrainFieldConfig {
    manifest: PathBuf,
    scorer: PathBuf,
    epsilon: f64,
    lr: f64,
    steps: usize,
    k: usize,
    groups: usize,
    variants: usize,
    aggregation: String,
    constraint: String,
    grouping: String,
    s_rel: f64,
    init_range: f64,
    spacing: f64,
}

pub fn cmd_train_field(
    flags: TrainFieldOpts,
    file: &FileConfig,
    seed: u64,
    out: Option<PathBuf>,
) -> Result<()> {
    let f: TrainFieldOpts = file.section("train-field")?;
    let d = AttackConfig::default();
    let cfg = TrainFieldConfig {
        manifest: require(layer(flags.manifest, f.manifest), "a dataset manifest", "--manifest")?,
        scorer: require(layer(flags.scorer, f.scorer), "scorer parameters", "--scorer")?,
        epsilon: layer(flags.epsilon, f.epsilon).unwrap_or(d.epsilon),
        lr: layer(flags.lr, f.lr).unwrap_or(d.lr),
        steps: layer(flags.steps, f.steps).unwrap_or(d.steps),
        k: layer(flags.k, f.k).unwrap_or(d.k),
        groups: layer(flags.groups, f.groups).unwrap_or(d.groups),
        variants: layer(flags.variants, f.variants).unwrap_or(d.variants),
        aggregation: layer(flags.aggregation, f.aggregation)
            .unwrap_or_else(|| d.aggregation.name().into()),
        constraint: layer(flags.constraint, f.constraint)
            .unwrap_or_else(|| d.constraint.name().into()),
        grouping: layer(flags.grouping, f.grouping).unwrap_or_else(|| d.grouping.name().into()),
        s_rel: layer(flags.s_rel, f.s_rel).unwrap_or(d.s_rel),
        init_range: layer(flags.init_range, f.init_range).unwrap_or(d.init_range),
        spacing: layer(flags.spacing, f.spacing).unwrap_or(d.shape.step),
    };
    let out = resolve_out(out, file.out.clone())?;
    ensure_dir(&out)?;

    let manifest = read_manifest(&cfg.manifest)?;
    let scorer = read_params(&cfg.scorer)?;
    let scenes = manifest.load_split(Split::Train)?;
    let acfg = AttackConfig {
        epsilon: cfg.epsilon,
        lr: cfg.lr,
        steps: cfg.steps,
        k: cfg.k,
        groups: cfg.groups,
        variants: cfg.variants,
        aggregation: Aggregation::parse(&cfg.aggregation)?,
        constraint: ConstraintMode::parse(&cfg.constraint)?,
        grouping: GroupingKey::parse(&cfg.grouping)?,
        lambda_chamfer: d.lambda_chamfer,
        s_rel: cfg.s_rel,
        rng_seed: seed,
        shape: GridShape::new(d.shape.width, d.shape.height, d.shape.length, cfg.spacing)?,
        init_range: cfg.init_range,
    };
    let outcome = train_field_bank(&scenes, &scorer, &acfg)?;
    let bank_path = out.join("bank.bin");
    write_bank(&bank_path, &outcome.bank)?;
    let log_path = out.join("train_log.txt");
    fs::write(&log_path, format_train_log(&outcome.log)).map_err(|e| Error::io(&log_path, e))?;
    freeze(&out, "train-field", seed, &cfg)?;
    println!("bank {}", bank_path.display());
    println!("log {}", log_path.display());
    if let Some(last) = outcome.log.last() {
        println!(
            "epochs {} final mean loss {:.6} max |v| {:.4} m",
            outcome.log.len(),
            last.mean_loss,
            last.max_abs_component
        );
    } else {
        println!("epochs 0 (bank left at initialization)");
    }
    Ok(())
}

// ------------------------------------------------------------------ attack

#[derive(Args, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackOpts {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// field | iter_l2 | chamfer | removal | generation | noise
    #[arg(long)]
    mode: Option<String>,
    /// Scorer parameters; required by every mode except field and noise.
    #[arg(long)]
    scorer: Option<PathBuf>,
    /// Trained field bank; required by mode field.
    #[arg(long)]
    bank: Option<PathBuf>,
    /// Which split to attack; the other split is copied unchanged.
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    /// Chamfer penalty weight (mode chamfer).
    #[arg(long)]
    lambda: Option<f64>,
    /// Fraction of object points added (mode noise).
    #[arg(long)]
    add_fraction: Option<f64>,
    /// Fraction of object points removed (mode noise).
    #[arg(long)]
    remove_fraction: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    /// distance | average | sum (mode field)
    #[arg(long)]
    aggregation: Option<String>,
    /// full | ray_only | unleash | no_learn (mode field)
    #[arg(long)]
    constraint: Option<String>,
}

#[derive(Debug, Serialize)]
struct AttackCmdConfig {
    manifest: PathBuf,
    mode: String,
    scorer: Option<PathBuf>,
    bank: Option<PathBuf>,
    split: String,
    epsilon: f64,
    lr: f64,
    steps: usize,
    lambda: f64,
    add_fraction: f64,
    remove_fraction: f64,
    k: usize,
    aggregation: String,
    constraint: String,
}

enum AttackMode {
    Field,
    IterL2,
    Chamfer,
    Removal,
    Generation,
    Noise,
}

impl AttackMode {
    fn parse(s: &str) -> Result<AttackMode> {
        match s {
            "field" => Ok(AttackMode::Field),
            "iter_l2" => Ok(AttackMode::IterL2),
            "chamfer" => Ok(AttackMode::Chamfer),
            "removal" => Ok(AttackMode::Removal),
            "generation" => Ok(AttackMode::Generation),
            "noise" => Ok(AttackMode::Noise),
            other => Err(Error::Config(format!("unknown attack mode '{other}'"))),
        }
    }

    fn needs_scorer(&self) -> bool {
        matches!(
            self,
            AttackMode::IterL2 | AttackMode::Chamfer | AttackMode::Removal | AttackMode::Generation
        )
    }
}

pub fn cmd_attack(flags: AttackOpts, file: &FileConfig, seed: u64, out: Option<PathBuf>) -> Result<()> {
    let f: AttackOpts = file.section("attack")?;
    let d = AttackConfig::default();
    let cfg = AttackCmdConfig {
        manifest: require(layer(flags.manifest, f.manifest), "a dataset manifest", "--manifest")?,
        mode: layer(flags.mode, f.mode).unwrap_or_else(|| "field".into()),
        scorer: layer(flags.scorer, f.scorer),
        bank: layer(flags.bank, f.bank),
        split: layer(flags.split, f.split).unwrap_or_else(|| "val".into()),
        epsilon: layer(flags.epsilon, f.epsilon).unwrap_or(d.epsilon),
        lr: layer(flags.lr, f.lr).unwrap_or(d.lr),
        steps: layer(flags.steps, f.steps).unwrap_or(d.steps),
        lambda: layer(flags.lambda, f.lambda).unwrap_or(d.lambda_chamfer),
        add_fraction: layer(flags.add_fraction, f.add_fraction).unwrap_or(0.10),
        remove_fraction: layer(flags.remove_fraction, f.remove_fraction).unwrap_or(0.10),
        k: layer(flags.k, f.k).unwrap_or(d.k),
        aggregation: layer(flags.aggregation, f.aggregation)
            .unwrap_or_else(|| d.aggregation.name().into()),
        constraint: layer(flags.constraint, f.constraint)
            .unwrap_or_else(|| d.constraint.name().into()),
    };
    let out = resolve_out(out, file.out.clone())?;
    ensure_dir(&out.join("clouds"))?;
    ensure_dir(&out.join("labels"))?;

    let mode = AttackMode::parse(&cfg.mode)?;
    let split = Split::parse(&cfg.split)?;
    let manifest = read_manifest(&cfg.manifest)?;
    let scorer = match (&cfg.scorer, mode.needs_scorer()) {
        (Some(path), _) => Some(read_params(path)?),
        (None, false) => None,
        (None, true) => {
            return Err(Error::Config(format!(
                "mode {} needs scorer parameters; pass --scorer",
                cfg.mode
            )))
        }
    };
    let bank = match (&cfg.bank, &mode) {
        (Some(path), _) => Some(read_bank(path)?),
        (None, AttackMode::Field) => {
            return Err(Error::Config("mode field needs a field bank; pass --bank".into()))
        }
        (None, _) => None,
    };
    let dcfg = DeformationConfig {
        k: cfg.k,
        epsilon: cfg.epsilon,
        aggregation: Aggregation::parse(&cfg.aggregation)?,
        constraint: ConstraintMode::parse(&cfg.constraint)?,
    };

    // Each frame writes its own cloud/label pair, so frames process in
    // parallel; summary counters are reduced afterwards.
    let frames: Vec<(Split, usize)> = (0..manifest.train.len())
        .map(|i| (Split::Train, i))
        .chain((0..manifest.val.len()).map(|i| (Split::Val, i)))
        .collect();
    let results: Vec<Result<(usize, usize)>> = exec::map_range(frames.len(), |fi| {
        let (frame_split, idx) = frames[fi];
        let entry = &manifest.frames(frame_split)[idx];
        let src_labels = manifest.root.join(&entry.labels);
        let dst_labels = out.join(&entry.labels);
        fs::copy(&src_labels, &dst_labels).map_err(|e| Error::io(&dst_labels, e))?;
        let dst_cloud = out.join(&entry.cloud);
        if frame_split != split {
            let src_cloud = manifest.root.join(&entry.cloud);
            fs::copy(&src_cloud, &dst_cloud).map_err(|e| Error::io(&dst_cloud, e))?;
            return Ok((0, 0));
        }
        let scene = manifest.load_frame(entry)?;
        let frame_seed = exec::derive_seed(seed, fi as u64);
        let (attacked, touched, skipped) = attack_frame(
            &scene,
            &mode,
            scorer.as_ref(),
            bank.as_ref(),
            &dcfg,
            &cfg,
            frame_seed,
        )?;
        write_cloud(&dst_cloud, &attacked.cloud)?;
        Ok((touched, skipped))
    });
    let mut touched = 0;
    let mut skipped = 0;
    for r in results {
        let (t, s) = r?;
        touched += t;
        skipped += s;
    }

    let out_manifest = DatasetManifest {
        root: out.clone(),
        train: manifest.train.clone(),
        val: manifest.val.clone(),
        sensor_origin: manifest.sensor_origin,
    };
    write_manifest(&out.join("manifest.txt"), &out_manifest)?;
    freeze(&out, "attack", seed, &cfg)?;
    println!("manifest {}", out.join("manifest.txt").display());
    println!(
        "attacked {} objects across the {} split ({} too small to attack)",
        touched,
        split.name(),
        skipped
    );
    Ok(())
}

/// Applies one attack mode to one frame. Returns the attacked frame plus
/// (objects touched, objects skipped as too small).
fn attack_frame(
    scene: &SceneFrame,
    mode: &AttackMode,
    scorer: Option<&ScorerParams>,
    bank: Option<&FieldBank>,
    dcfg: &DeformationConfig,
    cfg: &AttackCmdConfig,
    frame_seed: u64,
) -> Result<(SceneFrame, usize, usize)> {
    match mode {
        AttackMode::Field => {
            let bank = bank.expect("field mode loads a bank");
            let attacked = deform_scene_with_bank(scene, bank, dcfg, frame_seed)?;
            let touched = scene
                .objects
                .iter()
                .filter(|o| !scene.cloud.indices_in_box(&o.bbox, 0.0).is_empty())
                .count();
            Ok((attacked, touched, 0))
        }
        AttackMode::Noise => Ok((
            random_point_noise(scene, cfg.add_fraction, cfg.remove_fraction, frame_seed),
            scene.objects.len(),
            0,
        )),
        AttackMode::IterL2 | AttackMode::Chamfer => {
            let scorer = scorer.expect("mode loads a scorer");
            let mut attacked = scene.clone();
            let mut touched = 0;
            for obj in &scene.objects {
                let idx = scene.cloud.indices_in_box(&obj.bbox, 0.0);
                if idx.is_empty() {
                    continue;
                }
                let pts: Vec<Vec3> = idx.iter().map(|&i| scene.cloud.points[i]).collect();
                let shifts = match mode {
                    AttackMode::IterL2 => {
                        iter_grad_l2(&pts, scorer, &obj.bbox, cfg.epsilon, cfg.lr, cfg.steps)?
                    }
                    _ => chamfer_attack(
                        &pts,
                        scorer,
                        &obj.bbox,
                        cfg.epsilon,
                        cfg.lambda,
                        cfg.lr,
                        cfg.steps,
                    )?,
                };
                for (&i, m) in idx.iter().zip(&shifts) {
                    attacked.cloud.points[i] += *m;
                }
                touched += 1;
            }
            Ok((attacked, touched, 0))
        }
        AttackMode::Removal => {
            let scorer = scorer.expect("mode loads a scorer");
            let mut drop = vec![false; scene.cloud.len()];
            let mut touched = 0;
            let mut skipped = 0;
            for obj in &scene.objects {
                let idx = scene.cloud.indices_in_box(&obj.bbox, 0.0);
                if idx.len() < 10 {
                    skipped += 1;
                    continue;
                }
                let pts: Vec<Vec3> = idx.iter().map(|&i| scene.cloud.points[i]).collect();
                let outcome = removal_attack(&pts, scorer, &obj.bbox)?;
                for local in outcome.removed {
                    drop[idx[local]] = true;
                }
                touched += 1;
            }
            let mut attacked = scene.clone();
            attacked.cloud.points.clear();
            attacked.cloud.intensity.clear();
            for i in 0..scene.cloud.len() {
                if !drop[i] {
                    attacked.cloud.push(scene.cloud.points[i], scene.cloud.intensity[i]);
                }
            }
            Ok((attacked, touched, skipped))
        }
        AttackMode::Generation => {
            let scorer = scorer.expect("mode loads a scorer");
            let mut attacked = scene.clone();
            let mut touched = 0;
            let mut skipped = 0;
            for obj in &scene.objects {
                let idx = scene.cloud.indices_in_box(&obj.bbox, 0.0);
                if idx.len() < 10 {
                    skipped += 1;
                    continue;
                }
                let pts: Vec<Vec3> = idx.iter().map(|&i| scene.cloud.points[i]).collect();
                let combined =
                    generation_attack(&pts, scorer, &obj.bbox, cfg.epsilon, cfg.lr, cfg.steps)?;
                for &p in &combined[pts.len()..] {
                    attacked.cloud.push(p, INJECTED_INTENSITY);
                }
                touched += 1;
            }
            Ok((attacked, touched, skipped))
        }
    }
}

// ----------------------------------------------------------------- augment

#[derive(Args, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentOpts {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Trained field bank driving the deformations.
    #[arg(long)]
    bank: Option<PathBuf>,
    /// Fraction of frames to augment.
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    /// distance | average | sum
    #[arg(long)]
    aggregation: Option<String>,
    /// full | ray_only | unleash | no_learn
    #[arg(long)]
    constraint: Option<String>,
    /// Objects with fewer interior points are never selected.
    #[arg(long)]
    min_points: Option<usize>,
}

#[derive(Debug, Serialize)]
struct AugmentConfig {
    manifest: PathBuf,
    bank: PathBuf,
    fraction: f64,
    epsilon: f64,
    k: usize,
    aggregation: String,
    constraint: String,
    min_points: usize,
}

pub fn cmd_augment(flags: AugmentOpts, file: &FileConfig, seed: u64, out: Option<PathBuf>) -> Result<()> {
    let f: AugmentOpts = file.section("augment")?;
    let d = DeformationConfig::default();
    let cfg = AugmentConfig {
        manifest: require(layer(flags.manifest, f.manifest), "a dataset manifest", "--manifest")?,
        bank: require(layer(flags.bank, f.bank), "a field bank", "--bank")?,
        fraction: layer(flags.fraction, f.fraction).unwrap_or(1.0),
        epsilon: layer(flags.epsilon, f.epsilon).unwrap_or(d.epsilon),
        k: layer(flags.k, f.k).unwrap_or(d.k),
        aggregation: layer(flags.aggregation, f.aggregation)
            .unwrap_or_else(|| d.aggregation.name().into()),
        constraint: layer(flags.constraint, f.constraint)
            .unwrap_or_else(|| d.constraint.name().into()),
        min_points: layer(flags.min_points, f.min_points).unwrap_or(MIN_OBJECT_POINTS),
    };
    let out = resolve_out(out, file.out.clone())?;
    ensure_dir(&out)?;

    let manifest = read_manifest(&cfg.manifest)?;
    let bank = read_bank(&cfg.bank)?;
    let policy = AugmentPolicy {
        bank,
        deformation: DeformationConfig {
            k: cfg.k,
            epsilon: cfg.epsilon,
            aggregation: Aggregation::parse(&cfg.aggregation)?,
            constraint: ConstraintMode::parse(&cfg.constraint)?,
        },
        min_points: cfg.min_points,
        rng_seed: seed,
    };
    let out_manifest = augment_dataset(&manifest, &policy, &out, cfg.fraction)?;
    freeze(&out, "augment", seed, &cfg)?;
    println!("manifest {}", out.join("manifest.txt").display());
    println!("provenance {}", out.join("provenance.txt").display());
    println!(
        "frames {} (train {} val {})",
        out_manifest.train.len() + out_manifest.val.len(),
        out_manifest.train.len(),
        out_manifest.val.len()
    );
    Ok(())
}

// -------------------------------------------------------------------- eval

#[derive(Args, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalOpts {
    /// Manifest of the clean (reference) dataset.
    #[arg(long)]
    clean: Option<PathBuf>,
    /// Manifest of the attacked or augmented dataset.
    #[arg(long)]
    modified: Option<PathBuf>,
    #[arg(long)]
    scorer: Option<PathBuf>,
    /// Which split to evaluate.
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    iou_threshold: Option<f64>,
    #[arg(long)]
    score_threshold: Option<f64>,
}

#[derive(Debug, Serialize)]
struct EvalConfig {
    clean: PathBuf,
    modified: PathBuf,
    scorer: PathBuf,
    split: String,
    iou_threshold: f64,
    score_threshold: f64,
}

pub fn cmd_eval(flags: EvalOpts, file: &FileConfig, seed: u64, out: Option<PathBuf>) -> Result<()> {
    let f: EvalOpts = file.section("eval")?;
    let cfg = EvalConfig {
        clean: require(layer(flags.clean, f.clean), "a clean manifest", "--clean")?,
        modified: require(layer(flags.modified, f.modified), "a modified manifest", "--modified")?,
        scorer: require(layer(flags.scorer, f.scorer), "scorer parameters", "--scorer")?,
        split: layer(flags.split, f.split).unwrap_or_else(|| "val".into()),
        iou_threshold: layer(flags.iou_threshold, f.iou_threshold).unwrap_or(0.7),
        score_threshold: layer(flags.score_threshold, f.score_threshold).unwrap_or(0.5),
    };
    let out = resolve_out(out, file.out.clone())?;
    ensure_dir(&out)?;

    let split = Split::parse(&cfg.split)?;
    let clean = read_manifest(&cfg.clean)?;
    let modified = read_manifest(&cfg.modified)?;
    let scorer = read_params(&cfg.scorer)?;
    let cf = clean.frames(split);
    let mf = modified.frames(split);
    if cf.len() != mf.len() {
        return Err(Error::Config(format!(
            "evaluation needs paired frame lists; {} split has {} clean vs {} modified frames",
            split.name(),
            cf.len(),
            mf.len()
        )));
    }

    let mut clean_flags = Vec::new();
    let mut mod_flags = Vec::new();
    let mut chamfer_sum = 0.0;
    let mut chamfer_n = 0usize;
    let mut counts: BTreeMap<String, CategoryCounts> = BTreeMap::new();
    for (ce, me) in cf.iter().zip(mf) {
        let cs = clean.load_frame(ce)?;
        let ms = modified.load_frame(me)?;
        clean_flags.extend(detection_flags(&cs, &scorer, cfg.iou_threshold, cfg.score_threshold));
        mod_flags.extend(detection_flags(&ms, &scorer, cfg.iou_threshold, cfg.score_threshold));
        if !ms.cloud.is_empty() && !cs.cloud.is_empty() {
            chamfer_sum += chamfer_distance(&ms.cloud.points, &cs.cloud.points)?;
            chamfer_n += 1;
        }
        tally_frame(&ms, &scorer, cfg.iou_threshold, cfg.score_threshold, &mut counts);
    }

    let mut report = EvalReport::new(cfg.iou_threshold, cfg.score_threshold);
    report.categories = counts.into_values().collect();
    report.asr_percent = asr(&clean_flags, &mod_flags);
    report.mean_chamfer = if chamfer_n > 0 {
        Some(chamfer_sum / chamfer_n as f64)
    } else {
        None
    };
    let report_path = out.join("report.txt");
    write_report(&report, &report_path)?;
    freeze(&out, "eval", seed, &cfg)?;
    print!("{}", advfield::metrics::format_report(&report));
    println!("report {}", report_path.display());
    Ok(())
}

/// Adds one modified frame's TP/FP/FN to the per-kind tally. Candidates
/// are the gt boxes; proposals keep candidate order minus empty crops, so
/// the surviving-candidate list gives each proposal its source kind.
fn tally_frame(
    scene: &SceneFrame,
    scorer: &ScorerParams,
    iou_threshold: f64,
    score_threshold: f64,
    counts: &mut BTreeMap<String, CategoryCounts>,
) {
    let candidates: Vec<_> = scene.objects.iter().map(|o| o.bbox).collect();
    let proposals = detect(scene, scorer, &candidates);
    let surviving: Vec<usize> = (0..scene.objects.len())
        .filter(|&i| !scene.cloud.indices_in_box(&scene.objects[i].bbox, 0.0).is_empty())
        .collect();
    debug_assert_eq!(surviving.len(), proposals.len());
    let gt: Vec<_> = scene.objects.iter().map(|o| o.bbox).collect();
    let outcome = match_detections(&proposals, &gt, iou_threshold, score_threshold);

    fn entry<'a>(
        counts: &'a mut BTreeMap<String, CategoryCounts>,
        kind: &str,
    ) -> &'a mut CategoryCounts {
        counts.entry(kind.to_string()).or_insert_with(|| CategoryCounts {
            category: kind.to_string(),
            tp: 0,
            fp: 0,
            fn_: 0,
        })
    }
    let mut matched_gts = vec![false; gt.len()];
    let mut matched_props = vec![false; proposals.len()];
    for &(pi, gi) in &outcome.matches {
        matched_gts[gi] = true;
        matched_props[pi] = true;
        entry(counts, &scene.objects[gi].kind).tp += 1;
    }
    for (gi, obj) in scene.objects.iter().enumerate() {
        if !matched_gts[gi] {
            entry(counts, &obj.kind).fn_ += 1;
        }
    }
    for (pi, p) in proposals.iter().enumerate() {
        if !matched_props[pi] && p.score >= score_threshold {
            let kind = &scene.objects[surviving[pi]].kind;
            entry(counts, kind).fp += 1;
        }
    }
}

// -------------------------------------------------------------- export-ply

#[derive(Args, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportPlyOpts {
    /// Cloud to export.
    #[arg(long)]
    cloud: Option<PathBuf>,
    /// Optional undeformed counterpart; adds a per-point displacement
    /// scalar channel.
    #[arg(long)]
    baseline: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct ExportPlyConfig {
    cloud: PathBuf,
    baseline: Option<PathBuf>,
}

pub fn cmd_export_ply(
    flags: ExportPlyOpts,
    file: &FileConfig,
    seed: u64,
    out: Option<PathBuf>,
) -> Result<()> {
    let f: ExportPlyOpts = file.section("export-ply")?;
    let cfg = ExportPlyConfig {
        cloud: require(layer(flags.cloud, f.cloud), "a cloud file", "--cloud")?,
        baseline: layer(flags.baseline, f.baseline),
    };
    let out = resolve_out(out, file.out.clone())?;
    ensure_dir(&out)?;

    let cloud = read_cloud(&cfg.cloud)?;
    let baseline = cfg.baseline.as_ref().map(|p| read_cloud(p)).transpose()?;
    let ply_path = out.join("cloud.ply");
    ply::export_ply(&ply_path, &cloud, baseline.as_ref())?;
    freeze(&out, "export-ply", seed, &cfg)?;
    println!("{} vertices {}", cloud.len(), ply_path.display());
    Ok(())
}
