//! Offline augmentation: deform exactly one object per frame with a
//! field drawn from the trained bank, copy everything else through
//! untouched, and record where each deformation came from so a run can
//! be replayed.

use crate::data::{write_cloud, write_manifest, DatasetManifest, Split, MIN_OBJECT_POINTS};
use crate::error::{Error, Result};
use crate::exec;
use crate::geometry::SceneFrame;
use crate::vfield::{apply_trace, build_trace, group_for_object, DeformationConfig, FieldBank};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

/// Salt for the frame-selection shuffle, distinct from per-frame seeds.
const PICK_SALT: u64 = 0x9E33_79B9;

#[derive(Clone, Debug)]
pub struct AugmentPolicy {
    pub bank: FieldBank,
    pub deformation: DeformationConfig,
    /// Objects with fewer interior points are exempt from selection.
    pub min_points: usize,
    pub rng_seed: u64,
}

impl AugmentPolicy {
    pub fn new(bank: FieldBank, deformation: DeformationConfig, rng_seed: u64) -> AugmentPolicy {
        AugmentPolicy {
            bank,
            deformation,
            min_points: MIN_OBJECT_POINTS,
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.deformation.validate()
    }
}

/// Where one augmented frame's deformation came from; enough to replay
/// it without the rng.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Provenance {
    pub object_id: usize,
    pub group: usize,
    pub variant: usize,
    pub seed: u64,
}

/// Deforms one object of the scene, chosen uniformly among those with at
/// least `min_points` interior points, with a variant chosen uniformly
/// from the object's group. A scene with no eligible objects passes
/// through unchanged with no provenance.
pub fn augment_scene(
    scene: &SceneFrame,
    policy: &AugmentPolicy,
) -> Result<(SceneFrame, Option<Provenance>)> {
    augment_scene_seeded(scene, policy, policy.rng_seed)
}

fn augment_scene_seeded(
    scene: &SceneFrame,
    policy: &AugmentPolicy,
    seed: u64,
) -> Result<(SceneFrame, Option<Provenance>)> {
    policy.validate()?;
    let counts: Vec<usize> = scene
        .objects
        .iter()
        .map(|o| scene.cloud.indices_in_box(&o.bbox, 0.0).len())
        .collect();
    let eligible: Vec<usize> = (0..scene.objects.len())
        .filter(|&i| counts[i] >= policy.min_points)
        .collect();
    if eligible.is_empty() {
        return Ok((scene.clone(), None));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let oi = eligible[rng.gen_range(0..eligible.len())];
    let variant = rng.gen_range(0..policy.bank.variants());
    let obj = &scene.objects[oi];
    let group = group_for_object(
        policy.bank.grouping(),
        policy.bank.groups(),
        scene.sensor_origin,
        &obj.bbox,
        counts[oi],
    )?;
    let field = policy.bank.field(group, variant);
    let trace = build_trace(scene, &obj.bbox, field, &policy.deformation)?;
    let cloud = apply_trace(&scene.cloud, &trace, field, &policy.deformation);
    Ok((
        SceneFrame {
            cloud,
            sensor_origin: scene.sensor_origin,
            objects: scene.objects.clone(),
        },
        Some(Provenance {
            object_id: obj.id,
            group,
            variant,
            seed,
        }),
    ))
}

/// Augments `floor(fraction * frames)` frames of the dataset, chosen by a
/// seeded shuffle over the concatenated train and val lists, and copies
/// the rest byte-identically. Labels are never rewritten. Writes the new
/// manifest plus `provenance.txt` (one row per augmented frame, in frame
/// order) under `out_path` and returns the new manifest.
pub fn augment_dataset(
    manifest: &DatasetManifest,
    policy: &AugmentPolicy,
    out_path: &Path,
    fraction: f64,
) -> Result<DatasetManifest> {
    policy.validate()?;
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Config(format!("fraction {fraction} outside [0, 1]")));
    }
    for sub in ["clouds", "labels"] {
        let dir = out_path.join(sub);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }

    let frames: Vec<(Split, usize)> = (0..manifest.train.len())
        .map(|i| (Split::Train, i))
        .chain((0..manifest.val.len()).map(|i| (Split::Val, i)))
        .collect();
    let take = (fraction * frames.len() as f64).floor() as usize;
    let mut order: Vec<usize> = (0..frames.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(exec::derive_seed(
        policy.rng_seed,
        PICK_SALT,
    )));
    let mut chosen = vec![false; frames.len()];
    for &i in order.iter().take(take) {
        chosen[i] = true;
    }

    // Each frame writes only its own files, so the map runs in parallel;
    // provenance rows are appended afterwards in frame order.
    let results: Vec<Result<Option<Provenance>>> = exec::map_range(frames.len(), |fi| {
        let (split, idx) = frames[fi];
        let entry = &manifest.frames(split)[idx];
        let src_labels = manifest.root.join(&entry.labels);
        let dst_labels = out_path.join(&entry.labels);
        fs::copy(&src_labels, &dst_labels).map_err(|e| Error::io(&dst_labels, e))?;
        let src_cloud = manifest.root.join(&entry.cloud);
        let dst_cloud = out_path.join(&entry.cloud);
        if !chosen[fi] {
            fs::copy(&src_cloud, &dst_cloud).map_err(|e| Error::io(&dst_cloud, e))?;
            return Ok(None);
        }
        let scene = manifest.load_frame(entry)?;
        let seed = exec::derive_seed(policy.rng_seed, fi as u64);
        let (augmented, provenance) = augment_scene_seeded(&scene, policy, seed)?;
        write_cloud(&dst_cloud, &augmented.cloud)?;
        Ok(provenance)
    });

    let mut index = String::from("# split cloud object group variant seed\n");
    for (fi, res) in results.into_iter().enumerate() {
        let Some(p) = res? else { continue };
        let (split, idx) = frames[fi];
        let entry = &manifest.frames(split)[idx];
        writeln!(
            index,
            "{} {} {} {} {} {}",
            split.name(),
            entry.cloud.display(),
            p.object_id,
            p.group,
            p.variant,
            p.seed
        )
        .unwrap();
    }
    let index_path = out_path.join("provenance.txt");
    fs::write(&index_path, index).map_err(|e| Error::io(&index_path, e))?;

    let out = DatasetManifest {
        root: out_path.to_path_buf(),
        train: manifest.train.clone(),
        val: manifest.val.clone(),
        sensor_origin: manifest.sensor_origin,
    };
    write_manifest(&out_path.join("manifest.txt"), &out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_corpus, GeneratorConfig};
    use crate::geometry::{box_frame_inverse, GtObject, OrientedBox3, PointCloud, Vec3};
    use crate::vfield::{GridShape, GroupingKey};
    use std::collections::HashMap;

    /// A bar of `objects` boxes along y, each holding a small interior
    /// grid of points, plus some clutter that belongs to nobody.
    fn multi_object_scene(objects: usize) -> SceneFrame {
        let mut cloud = PointCloud::new();
        let mut gts = Vec::new();
        for oi in 0..objects {
            let bbox = OrientedBox3::new(
                Vec3::new(14.0, -8.0 + 4.0 * oi as f64, -0.8),
                1.8,
                1.6,
                4.6,
                0.3 * oi as f64,
            );
            for a in 0..2 {
                for b in 0..2 {
                    for c in 0..2 {
                        let local = Vec3::new(
                            (a as f64 - 0.5) * 1.5,
                            (b as f64 - 0.5) * 0.5,
                            (c as f64 - 0.5) * 0.5,
                        );
                        cloud.push(box_frame_inverse(local, &bbox), 0.4);
                    }
                }
            }
            gts.push(GtObject {
                id: oi,
                kind: "Car".into(),
                bbox,
            });
        }
        for i in 0..30 {
            cloud.push(Vec3::new(25.0 + 0.1 * i as f64, 6.0, -1.6), 0.2);
        }
        SceneFrame {
            cloud,
            sensor_origin: Vec3::ZERO,
            objects: gts,
        }
    }

    fn policy(init_range: f64, seed: u64) -> AugmentPolicy {
        let bank = FieldBank::init(
            GridShape::default_car(),
            GroupingKey::RelativeRotation,
            4,
            3,
            init_range,
            seed,
        );
        AugmentPolicy::new(bank, DeformationConfig::default(), seed)
    }

    #[test]
    fn zero_field_bank_passes_scene_through() {
        let scene = multi_object_scene(3);
        let (out, prov) = augment_scene(&scene, &policy(0.0, 3)).unwrap();
        assert!(prov.is_some());
        assert_eq!(out.cloud.points, scene.cloud.points);
        assert_eq!(out.cloud.intensity, scene.cloud.intensity);
        assert_eq!(out.objects, scene.objects);
    }

    #[test]
    fn exactly_one_object_moves_and_the_rest_stay_bit_identical() {
        let scene = multi_object_scene(4);
        let (out, prov) = augment_scene(&scene, &policy(0.01, 7)).unwrap();
        let prov = prov.unwrap();
        let mut moved_objects = 0;
        for obj in &scene.objects {
            let idx = scene.cloud.indices_in_box(&obj.bbox, 0.0);
            let changed = idx
                .iter()
                .any(|&i| out.cloud.points[i] != scene.cloud.points[i]);
            if changed {
                moved_objects += 1;
                assert_eq!(obj.id, prov.object_id);
            } else {
                for &i in &idx {
                    assert_eq!(
                        out.cloud.points[i].x.to_bits(),
                        scene.cloud.points[i].x.to_bits()
                    );
                }
            }
        }
        assert_eq!(moved_objects, 1);
        assert_eq!(out.objects, scene.objects, "labels are never touched");
        assert!(prov.variant < 3);
        assert!(prov.group < 4);
    }

    #[test]
    fn no_objects_means_passthrough_without_provenance() {
        let mut scene = multi_object_scene(1);
        scene.objects.clear();
        let (out, prov) = augment_scene(&scene, &policy(0.01, 5)).unwrap();
        assert!(prov.is_none());
        assert_eq!(out.cloud.points, scene.cloud.points);
    }

    #[test]
    fn starved_objects_are_exempt_from_selection() {
        let mut scene = multi_object_scene(2);
        // Strip object 1 below the eligibility floor.
        let idx = scene.cloud.indices_in_box(&scene.objects[1].bbox, 0.0);
        for (removed, &i) in idx.iter().enumerate().take(4) {
            scene.cloud.points.remove(i - removed);
            scene.cloud.intensity.remove(i - removed);
        }
        let pol = policy(0.01, 11);
        for seed in 0..20 {
            let (_, prov) = augment_scene_seeded(&scene, &pol, seed).unwrap();
            assert_eq!(prov.unwrap().object_id, 0);
        }
    }

    #[test]
    fn object_selection_is_uniform() {
        let scene = multi_object_scene(5);
        let pol = policy(0.01, 13);
        let mut counts: HashMap<usize, usize> = HashMap::new();
        for seed in 0..10_000u64 {
            let (_, prov) = augment_scene_seeded(&scene, &pol, seed).unwrap();
            *counts.entry(prov.unwrap().object_id).or_default() += 1;
        }
        assert_eq!(counts.len(), 5);
        for (&id, &n) in &counts {
            // Binomial(10^4, 1/5) is 2000 +- 40; 150 is well over 3 sigma.
            assert!(
                (n as i64 - 2000).abs() <= 150,
                "object {id} selected {n} times"
            );
        }
    }

    fn tiny_corpus(dir: &Path, seed: u64) -> DatasetManifest {
        let cfg = GeneratorConfig {
            out_dir: dir.to_path_buf(),
            scenes: 4,
            objects_per_scene: (1, 3),
            points_per_object: (120, 200),
            ground_points: 150,
            rng_seed: seed,
            ..GeneratorConfig::default()
        };
        generate_corpus(&cfg).unwrap()
    }

    fn dir_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
        let mut files = Vec::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(d) = stack.pop() {
            for e in std::fs::read_dir(&d).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    let rel = p.strip_prefix(root).unwrap().display().to_string();
                    files.push((rel, std::fs::read(&p).unwrap()));
                }
            }
        }
        files.sort();
        files
    }

    #[test]
    fn fraction_zero_copies_everything_byte_identically() {
        let tmp = tempfile::tempdir().unwrap();
        let manifest = tiny_corpus(&tmp.path().join("src"), 19);
        let out_dir = tmp.path().join("out");
        let out = augment_dataset(&manifest, &policy(0.01, 19), &out_dir, 0.0).unwrap();
        assert_eq!(out.train, manifest.train);
        assert_eq!(out.val, manifest.val);
        let prov = std::fs::read_to_string(out_dir.join("provenance.txt")).unwrap();
        assert_eq!(prov.lines().count(), 1, "header only");
        for entry in manifest.train.iter().chain(&manifest.val) {
            for rel in [&entry.cloud, &entry.labels] {
                let a = std::fs::read(manifest.root.join(rel)).unwrap();
                let b = std::fs::read(out_dir.join(rel)).unwrap();
                assert_eq!(a, b, "{}", rel.display());
            }
        }
    }

    #[test]
    fn fraction_one_augments_every_frame_and_replays_byte_identically() {
        let tmp = tempfile::tempdir().unwrap();
        let manifest = tiny_corpus(&tmp.path().join("src"), 23);
        let n_frames = manifest.train.len() + manifest.val.len();
        let pol = policy(0.01, 23);

        let out_a = tmp.path().join("a");
        augment_dataset(&manifest, &pol, &out_a, 1.0).unwrap();
        let prov = std::fs::read_to_string(out_a.join("provenance.txt")).unwrap();
        assert_eq!(prov.lines().count(), 1 + n_frames);

        // Labels come through byte-identical even on augmented frames.
        for entry in manifest.train.iter().chain(&manifest.val) {
            let a = std::fs::read(manifest.root.join(&entry.labels)).unwrap();
            let b = std::fs::read(out_a.join(&entry.labels)).unwrap();
            assert_eq!(a, b);
        }

        let out_b = tmp.path().join("b");
        augment_dataset(&manifest, &pol, &out_b, 1.0).unwrap();
        let a = dir_bytes(&out_a);
        let b = dir_bytes(&out_b);
        assert_eq!(a, b, "same seed must replay byte-identically");
    }

    #[test]
    fn half_fraction_augments_floor_of_frames() {
        let tmp = tempfile::tempdir().unwrap();
        let manifest = tiny_corpus(&tmp.path().join("src"), 29);
        let n_frames = manifest.train.len() + manifest.val.len();
        let out_dir = tmp.path().join("out");
        augment_dataset(&manifest, &policy(0.01, 29), &out_dir, 0.5).unwrap();
        let prov = std::fs::read_to_string(out_dir.join("provenance.txt")).unwrap();
        // Every generated frame has an eligible object, so rows = frames
        // chosen.
        assert_eq!(prov.lines().count(), 1 + n_frames / 2);
    }
}
