//! Cloud and label file I/O, dataset manifests, and a procedural scene
//! generator.
//!
//! The generator builds box-shaped vehicle shells and a ground plane, then
//! keeps only the first hit per angular cell as seen from the sensor, so
//! occlusion and ray structure are genuine rather than painted on. Every
//! scene is emitted twice with shared poses: a clean frame and a damaged
//! twin whose objects carry procedural dents.
//!
//! File formats:
//! * cloud: headerless binary, little-endian f32 quads (x, y, z, intensity)
//! * labels: KITTI-style 15-column text; camera-only columns (truncated,
//!   occluded, alpha, 2D bbox) are zeroed; dimensions are h w l, location
//!   is the box center, rotation_y is the yaw
//! * manifest: line-delimited text index, one `sensor x y z` line then one
//!   `split cloud_path label_path` line per frame, paths relative to the
//!   manifest's directory

use crate::error::{Error, Result};
use crate::exec;
use crate::geometry::{
    box_frame_inverse, iou_3d, GtObject, OrientedBox3, PointCloud, SceneFrame, Vec3,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 16 != 0 {
        return Err(Error::malformed(
            path,
            format!("{} bytes is not a whole number of 16-byte points", bytes.len()),
        ));
    }
    let mut cloud = PointCloud::with_capacity(bytes.len() / 16);
    for quad in bytes.chunks_exact(16) {
        let f = |i: usize| f32::from_le_bytes(quad[i..i + 4].try_into().unwrap());
        cloud.push(Vec3::new(f(0) as f64, f(4) as f64, f(8) as f64), f(12));
    }
    Ok(cloud)
}

pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut bytes = Vec::with_capacity(cloud.len() * 16);
    for (p, &i) in cloud.points.iter().zip(&cloud.intensity) {
        bytes.extend_from_slice(&(p.x as f32).to_le_bytes());
        bytes.extend_from_slice(&(p.y as f32).to_le_bytes());
        bytes.extend_from_slice(&(p.z as f32).to_le_bytes());
        bytes.extend_from_slice(&i.to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: &Path) -> Result<Vec<GtObject>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text, path)
}

fn parse_labels(text: &str, path: &Path) -> Result<Vec<GtObject>> {
    let mut objects = Vec::new();
    for (li, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 15 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: li + 1,
                reason: format!("expected 15 columns, found {}", cols.len()),
            });
        }
        let num = |i: usize| -> Result<f64> {
            cols[i].parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: li + 1,
                reason: format!("column {} is not a number: {:?}", i + 1, cols[i]),
            })
        };
        let h = num(8)?;
        let w = num(9)?;
        let l = num(10)?;
        let center = Vec3::new(num(11)?, num(12)?, num(13)?);
        let yaw = num(14)?;
        objects.push(GtObject {
            id: objects.len(),
            kind: cols[0].to_string(),
            bbox: OrientedBox3::new(center, w, h, l, yaw),
        });
    }
    Ok(objects)
}

pub fn write_labels(path: &Path, objects: &[GtObject]) -> Result<()> {
    std::fs::write(path, format_labels(objects)).map_err(|e| Error::io(path, e))
}

fn format_labels(objects: &[GtObject]) -> String {
    let mut out = String::new();
    for o in objects {
        let b = &o.bbox;
        writeln!(
            out,
            "{} 0 0 0 0 0 0 0 {} {} {} {} {} {} {}",
            o.kind, b.height, b.width, b.length, b.center.x, b.center.y, b.center.z, b.yaw
        )
        .unwrap();
    }
    out
}

/// One frame of a dataset: cloud and label files, relative to the
/// manifest root.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameEntry {
    pub cloud: PathBuf,
    pub labels: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub train: Vec<FrameEntry>,
    pub val: Vec<FrameEntry>,
    pub sensor_origin: Vec3,
}

impl DatasetManifest {
    pub fn empty(root: &Path) -> DatasetManifest {
        DatasetManifest {
            root: root.to_path_buf(),
            train: Vec::new(),
            val: Vec::new(),
            sensor_origin: Vec3::ZERO,
        }
    }

    pub fn frames(&self, split: Split) -> &[FrameEntry] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
        }
    }

    /// Loads one frame into memory (cloud + labels + sensor origin).
    pub fn load_frame(&self, entry: &FrameEntry) -> Result<SceneFrame> {
        let cloud = read_cloud(&self.root.join(&entry.cloud))?;
        let objects = read_labels(&self.root.join(&entry.labels))?;
        Ok(SceneFrame {
            cloud,
            sensor_origin: self.sensor_origin,
            objects,
        })
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<SceneFrame>> {
        self.frames(split).iter().map(|e| self.load_frame(e)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }

    pub fn parse(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            other => Err(Error::Config(format!("unknown split '{other}'"))),
        }
    }
}

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let mut out = String::new();
    writeln!(
        out,
        "sensor {} {} {}",
        manifest.sensor_origin.x, manifest.sensor_origin.y, manifest.sensor_origin.z
    )
    .unwrap();
    for (split, entries) in [(Split::Train, &manifest.train), (Split::Val, &manifest.val)] {
        for e in entries {
            writeln!(
                out,
                "{} {} {}",
                split.name(),
                e.cloud.display(),
                e.labels.display()
            )
            .unwrap();
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a manifest; the root becomes the manifest file's directory.
/// Listed files are required to exist.
pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut manifest = DatasetManifest::empty(&root);
    let mut saw_sensor = false;
    for (li, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |reason: String| Error::Parse {
            path: path.to_path_buf(),
            line: li + 1,
            reason,
        };
        let cols: Vec<&str> = line.split_whitespace().collect();
        match cols[0] {
            "sensor" => {
                if cols.len() != 4 {
                    return Err(parse_err(format!(
                        "sensor line needs 4 columns, found {}",
                        cols.len()
                    )));
                }
                let num = |i: usize| -> Result<f64> {
                    cols[i]
                        .parse()
                        .map_err(|_| parse_err(format!("bad sensor coordinate {:?}", cols[i])))
                };
                manifest.sensor_origin = Vec3::new(num(1)?, num(2)?, num(3)?);
                saw_sensor = true;
            }
            "train" | "val" => {
                if cols.len() != 3 {
                    return Err(parse_err(format!(
                        "frame line needs 3 columns, found {}",
                        cols.len()
                    )));
                }
                let entry = FrameEntry {
                    cloud: PathBuf::from(cols[1]),
                    labels: PathBuf::from(cols[2]),
                };
                for rel in [&entry.cloud, &entry.labels] {
                    if !manifest.root.join(rel).is_file() {
                        return Err(parse_err(format!("listed file missing: {}", rel.display())));
                    }
                }
                if cols[0] == "train" {
                    manifest.train.push(entry);
                } else {
                    manifest.val.push(entry);
                }
            }
            other => return Err(parse_err(format!("unknown row kind {other:?}"))),
        }
    }
    if !saw_sensor {
        return Err(Error::malformed(path, "no sensor line"));
    }
    Ok(manifest)
}

// Scene generation.

/// Elevation field of view of the simulated sensor, radians.
const ELEVATION_MIN: f64 = -25.0 * PI / 180.0;
const ELEVATION_MAX: f64 = 5.0 * PI / 180.0;
/// Azimuth cell width, radians (0.2 degrees, bearing-grade for desk scale).
const AZIMUTH_CELL: f64 = 0.2 * PI / 180.0;
/// Ground plane height relative to the sensor.
const GROUND_Z: f64 = -1.6;
/// Objects with fewer interior points than this force a scene re-roll;
/// the augmentation policy reuses it as its eligibility floor.
pub const MIN_OBJECT_POINTS: usize = 5;

#[derive(Clone, Debug)]
pub struct GeneratorConfig {
    pub out_dir: PathBuf,
    pub scenes: usize,
    /// Inclusive object count range per scene.
    pub objects_per_scene: (usize, usize),
    /// Radial placement range, meters.
    pub radial_range: (f64, f64),
    /// Objects are placed within +- this azimuth, radians.
    pub azimuth_half_range: f64,
    /// Elevation channels across the sensor's vertical field of view.
    pub beams: usize,
    /// Inclusive surface-sample count range per object (before culling).
    pub points_per_object: (usize, usize),
    /// Ground-plane samples per scene (before culling).
    pub ground_points: usize,
    /// Probability that an object in the damaged twin gets a dent.
    pub damage_probability: f64,
    /// Dent depth range, meters.
    pub dent_magnitude: (f64, f64),
    /// Fraction of scenes routed to the validation split.
    pub val_fraction: f64,
    pub rng_seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            out_dir: PathBuf::from("corpus"),
            scenes: 200,
            objects_per_scene: (1, 5),
            radial_range: (10.0, 40.0),
            azimuth_half_range: PI / 2.0,
            beams: 64,
            points_per_object: (260, 520),
            ground_points: 900,
            damage_probability: 1.0,
            dent_magnitude: (0.08, 0.25),
            val_fraction: 0.3,
            rng_seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let ok_range = |r: (f64, f64)| r.0 <= r.1;
        if self.objects_per_scene.0 > self.objects_per_scene.1 || self.objects_per_scene.0 == 0 {
            return Err(Error::Config(format!(
                "objects_per_scene range {:?} is empty",
                self.objects_per_scene
            )));
        }
        if !ok_range(self.radial_range) || self.radial_range.0 <= 0.0 {
            return Err(Error::Config(format!(
                "radial_range {:?} must be non-empty with positive minimum",
                self.radial_range
            )));
        }
        if self.points_per_object.0 > self.points_per_object.1 || self.points_per_object.0 == 0 {
            return Err(Error::Config(format!(
                "points_per_object range {:?} is empty",
                self.points_per_object
            )));
        }
        if !ok_range(self.dent_magnitude) || self.dent_magnitude.0 < 0.0 {
            return Err(Error::Config(format!(
                "dent_magnitude range {:?} invalid",
                self.dent_magnitude
            )));
        }
        if !(0.0..=1.0).contains(&self.damage_probability) {
            return Err(Error::Config(format!(
                "damage_probability {} outside [0,1]",
                self.damage_probability
            )));
        }
        if !(0.0..=1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!(
                "val_fraction {} outside [0,1]",
                self.val_fraction
            )));
        }
        if self.beams == 0 {
            return Err(Error::Config("beams must be positive".into()));
        }
        Ok(())
    }
}

/// A surface or ground sample awaiting the first-hit cull, tagged with its
/// owning object (None for ground).
struct Candidate {
    p: Vec3,
    owner: Option<usize>,
}

/// Keeps, per angular cell, only the candidate nearest to the sensor.
/// Candidates outside the angular field of view are dropped. Ties keep the
/// earlier candidate, so the outcome is order-deterministic.
fn first_hit_cull(candidates: &[Candidate], sensor: Vec3, beams: usize) -> Vec<usize> {
    use std::collections::HashMap;
    let del = (ELEVATION_MAX - ELEVATION_MIN) / beams as f64;
    let mut best: HashMap<(i64, i64), (f64, usize)> = HashMap::new();
    for (idx, c) in candidates.iter().enumerate() {
        let d = c.p - sensor;
        let horiz = (d.x * d.x + d.y * d.y).sqrt();
        let range = d.norm();
        if range < 1e-9 {
            continue;
        }
        let az = d.y.atan2(d.x);
        let el = d.z.atan2(horiz);
        if !(ELEVATION_MIN..ELEVATION_MAX).contains(&el) {
            continue;
        }
        let cell = (
            (az / AZIMUTH_CELL).floor() as i64,
            ((el - ELEVATION_MIN) / del).floor() as i64,
        );
        match best.get_mut(&cell) {
            Some(slot) if slot.0 <= range => {}
            Some(slot) => *slot = (range, idx),
            None => {
                best.insert(cell, (range, idx));
            }
        }
    }
    let mut keep: Vec<usize> = best.values().map(|&(_, idx)| idx).collect();
    keep.sort_unstable();
    keep
}

/// In-memory result of generating one scene: the clean frame, the damaged
/// twin (same poses), and the shared labels.
pub struct GeneratedScene {
    pub clean: SceneFrame,
    pub damaged: SceneFrame,
}

fn sample_box_surface(bbox: &OrientedBox3, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
    // Five sampled faces: two long sides, two ends, the top. The bottom
    // face can never be seen from above ground.
    let (l, w, h) = (bbox.length, bbox.width, bbox.height);
    let areas = [l * h, l * h, w * h, w * h, l * w];
    let total: f64 = areas.iter().sum();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut pick = rng.gen_range(0.0..total);
        let mut face = 0;
        for (i, a) in areas.iter().enumerate() {
            if pick < *a {
                face = i;
                break;
            }
            pick -= a;
        }
        let u = rng.gen_range(-0.5..0.5);
        let v = rng.gen_range(-0.5..0.5);
        let local = match face {
            0 => Vec3::new(u * l, -w / 2.0, v * h),
            1 => Vec3::new(u * l, w / 2.0, v * h),
            2 => Vec3::new(-l / 2.0, u * w, v * h),
            3 => Vec3::new(l / 2.0, u * w, v * h),
            _ => Vec3::new(u * l, v * w, h / 2.0),
        };
        out.push(box_frame_inverse(local, bbox));
    }
    out
}

/// Inward cosine-squared dent: surface points within `radius` of the dent
/// center move toward the box center by up to `depth`.
fn apply_dent(points: &mut [Vec3], bbox: &OrientedBox3, center: Vec3, radius: f64, depth: f64) {
    for p in points.iter_mut() {
        let dist = (*p - center).norm();
        if dist >= radius {
            continue;
        }
        let Some(inward) = (bbox.center - *p).normalized() else {
            continue;
        };
        let t = (PI / 2.0 * dist / radius).cos();
        *p += inward * (depth * t * t);
    }
}

fn place_objects(cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Result<Vec<OrientedBox3>> {
    let n = rng.gen_range(cfg.objects_per_scene.0..=cfg.objects_per_scene.1);
    let mut placed: Vec<OrientedBox3> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut ok = None;
        for _attempt in 0..60 {
            let r = rng.gen_range(cfg.radial_range.0..=cfg.radial_range.1);
            let az = rng.gen_range(-cfg.azimuth_half_range..=cfg.azimuth_half_range);
            let yaw = rng.gen_range(-PI..PI);
            let length = rng.gen_range(3.6..4.8);
            let width = rng.gen_range(1.6..2.0);
            let height = rng.gen_range(1.4..1.7);
            let center = Vec3::new(r * az.cos(), r * az.sin(), GROUND_Z + height / 2.0);
            let cand = OrientedBox3::new(center, width, height, length, yaw);
            // Conservative separation: circumradius sum plus clearance, so
            // boxes never touch and crops never alias across objects.
            let clear = placed.iter().all(|b| {
                let min_sep = 0.5
                    + 0.5 * (b.length.hypot(b.width) + cand.length.hypot(cand.width));
                (b.center - cand.center).norm() >= min_sep
            });
            if clear {
                ok = Some(cand);
                break;
            }
        }
        match ok {
            Some(b) => placed.push(b),
            None => {
                return Err(Error::Geometry(
                    "unsatisfiable object placement: overlap retry limit exceeded".into(),
                ))
            }
        }
    }
    debug_assert!(placed
        .iter()
        .enumerate()
        .all(|(i, a)| placed[..i].iter().all(|b| iou_3d(a, b) == 0.0)));
    Ok(placed)
}

/// Builds one clean/damaged scene pair. Re-rolls the whole scene (new
/// derived seed) when culling starves any object below the minimum point
/// count, so every labeled object is observable in both twins.
pub fn generate_scene(cfg: &GeneratorConfig, scene_seed: u64) -> Result<GeneratedScene> {
    let sensor = Vec3::ZERO;
    for attempt in 0..40u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(exec::derive_seed(scene_seed, attempt));
        let boxes = match place_objects(cfg, &mut rng) {
            Ok(b) => b,
            Err(_) => continue,
        };

        let mut clean_cands: Vec<Candidate> = Vec::new();
        let mut damaged_cands: Vec<Candidate> = Vec::new();
        for (oi, bbox) in boxes.iter().enumerate() {
            let n = rng.gen_range(cfg.points_per_object.0..=cfg.points_per_object.1);
            let samples = sample_box_surface(bbox, n, &mut rng);
            let mut dented = samples.clone();
            if rng.gen::<f64>() < cfg.damage_probability {
                let dent_center = samples[rng.gen_range(0..samples.len())];
                let radius = rng.gen_range(0.35..0.7);
                let depth = rng.gen_range(cfg.dent_magnitude.0..=cfg.dent_magnitude.1);
                apply_dent(&mut dented, bbox, dent_center, radius, depth);
            }
            clean_cands.extend(samples.into_iter().map(|p| Candidate { p, owner: Some(oi) }));
            damaged_cands.extend(dented.into_iter().map(|p| Candidate { p, owner: Some(oi) }));
        }
        // Ground annulus reaching a little past the farthest object; radius
        // sampled sqrt-uniform so density is uniform per unit area. The
        // 4 m inner edge keeps the ground inside the elevation window.
        let ground_r2 = (16.0, cfg.radial_range.1 * cfg.radial_range.1 + 25.0);
        for _ in 0..cfg.ground_points {
            let r = rng.gen_range(ground_r2.0..ground_r2.1).sqrt();
            let az = rng.gen_range(-cfg.azimuth_half_range..=cfg.azimuth_half_range);
            let p = Vec3::new(r * az.cos(), r * az.sin(), GROUND_Z);
            clean_cands.push(Candidate { p, owner: None });
            damaged_cands.push(Candidate { p, owner: None });
        }

        let objects: Vec<GtObject> = boxes
            .iter()
            .enumerate()
            .map(|(id, bbox)| GtObject {
                id,
                kind: "Car".to_string(),
                bbox: *bbox,
            })
            .collect();

        let build = |cands: &[Candidate]| -> (PointCloud, Vec<usize>) {
            let keep = first_hit_cull(cands, sensor, cfg.beams);
            let mut cloud = PointCloud::with_capacity(keep.len());
            let mut per_object = vec![0usize; boxes.len()];
            for &i in &keep {
                cloud.push(cands[i].p, 0.5);
                if let Some(oi) = cands[i].owner {
                    per_object[oi] += 1;
                }
            }
            (cloud, per_object)
        };
        let (clean_cloud, clean_counts) = build(&clean_cands);
        let (damaged_cloud, damaged_counts) = build(&damaged_cands);
        let starved = clean_counts
            .iter()
            .chain(&damaged_counts)
            .any(|&c| c < MIN_OBJECT_POINTS);
        if starved {
            continue;
        }
        return Ok(GeneratedScene {
            clean: SceneFrame {
                cloud: clean_cloud,
                sensor_origin: sensor,
                objects: objects.clone(),
            },
            damaged: SceneFrame {
                cloud: damaged_cloud,
                sensor_origin: sensor,
                objects,
            },
        });
    }
    Err(Error::Geometry(
        "scene generation retry limit exceeded (placement overlap or starved objects); \
         widen the config ranges"
            .into(),
    ))
}

/// Generates the corpus on disk and returns (and writes) its manifest.
/// Scene builds run in parallel with per-scene derived seeds; file layout
/// and manifest order depend only on the config.
pub fn generate_corpus(cfg: &GeneratorConfig) -> Result<DatasetManifest> {
    cfg.validate()?;
    let clouds_dir = cfg.out_dir.join("clouds");
    let labels_dir = cfg.out_dir.join("labels");
    std::fs::create_dir_all(&clouds_dir).map_err(|e| Error::io(&clouds_dir, e))?;
    std::fs::create_dir_all(&labels_dir).map_err(|e| Error::io(&labels_dir, e))?;

    let scenes: Vec<Result<GeneratedScene>> = exec::map_range(cfg.scenes, |si| {
        generate_scene(cfg, exec::derive_seed(cfg.rng_seed, si as u64))
    });

    let mut manifest = DatasetManifest::empty(&cfg.out_dir);
    let train_scenes = ((1.0 - cfg.val_fraction) * cfg.scenes as f64).ceil() as usize;
    for (si, scene) in scenes.into_iter().enumerate() {
        let scene = scene?;
        let split = if si < train_scenes { Split::Train } else { Split::Val };
        for (tag, frame) in [("clean", &scene.clean), ("damaged", &scene.damaged)] {
            let cloud_rel = PathBuf::from(format!("clouds/scene{si:04}_{tag}.bin"));
            let label_rel = PathBuf::from(format!("labels/scene{si:04}_{tag}.txt"));
            write_cloud(&cfg.out_dir.join(&cloud_rel), &frame.cloud)?;
            write_labels(&cfg.out_dir.join(&label_rel), &frame.objects)?;
            let entry = FrameEntry {
                cloud: cloud_rel,
                labels: label_rel,
            };
            match split {
                Split::Train => manifest.train.push(entry),
                Split::Val => manifest.val.push(entry),
            }
        }
    }
    write_manifest(&cfg.out_dir.join("manifest.txt"), &manifest)?;
    Ok(manifest)
}

/// Adds and removes points inside each labeled box: removes
/// floor(remove_fraction * n) of the box's points uniformly, adds
/// floor(add_fraction * n) uniform in the box volume, where n is the
/// box's point count in the input scene. Out-of-box points are untouched.
pub fn random_point_noise(
    scene: &SceneFrame,
    add_fraction: f64,
    remove_fraction: f64,
    rng_seed: u64,
) -> SceneFrame {
    debug_assert!(add_fraction >= 0.0 && remove_fraction >= 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut removed = vec![false; scene.cloud.len()];
    let mut added = PointCloud::new();
    for obj in &scene.objects {
        let mut inside = scene.cloud.indices_in_box(&obj.bbox, 0.0);
        let n = inside.len();
        let n_remove = (remove_fraction * n as f64).floor() as usize;
        // Partial Fisher-Yates: the first n_remove entries are a uniform
        // sample without replacement.
        for i in 0..n_remove.min(n) {
            let j = rng.gen_range(i..n);
            inside.swap(i, j);
            removed[inside[i]] = true;
        }
        let n_add = (add_fraction * n as f64).floor() as usize;
        let b = &obj.bbox;
        for _ in 0..n_add {
            let local = Vec3::new(
                rng.gen_range(-0.5..0.5) * b.length,
                rng.gen_range(-0.5..0.5) * b.width,
                rng.gen_range(-0.5..0.5) * b.height,
            );
            added.push(box_frame_inverse(local, b), 0.5);
        }
    }
    let mut cloud = PointCloud::with_capacity(scene.cloud.len() + added.len());
    for i in 0..scene.cloud.len() {
        if !removed[i] {
            cloud.push(scene.cloud.points[i], scene.cloud.intensity[i]);
        }
    }
    for i in 0..added.len() {
        cloud.push(added.points[i], added.intensity[i]);
    }
    SceneFrame {
        cloud,
        sensor_origin: scene.sensor_origin,
        objects: scene.objects.clone(),
    }
}
