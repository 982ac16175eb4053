//! Adversarial optimization against the point-set scorer: the proposal
//! suppression loss, PGD-with-Adam training of vector-field banks under
//! the per-component clamp, and the per-sample baseline attacks
//! (iterative L2, Chamfer-penalized, point removal, point generation).
//!
//! The deformation is linear in the field vectors (neighbor weights and
//! ray projections do not depend on them), so the loss gradient with
//! respect to a field is the exact chain through deform -> crop -> scorer,
//! with two documented stop-gradients: the IoU weight in the loss and the
//! relevant-set membership, both frozen at their forward values.

use crate::detector::{apply_residual, score_backward, score_forward, Forward, Proposal, ScorerParams};
use crate::error::{Error, Result};
use crate::exec;
use crate::geometry::{
    candidate_frame, candidate_frame_grad_to_world, iou_3d, GtObject, OrientedBox3, PointCloud,
    SceneFrame, Vec3,
};
use crate::optim::Adam;
use crate::vfield::{
    build_trace, group_for_object, trace_shift, Aggregation, ConstraintMode, DeformTrace,
    DeformationConfig, FieldBank, GridShape, GroupingKey, VectorFieldGrid,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

/// Scores at or below this are never clamped; above it the log term in the
/// loss would overflow.
pub const SCORE_CLAMP: f64 = 1.0 - 1e-12;
/// Default relevance threshold: proposals scoring at or below it are
/// ignored by the loss.
pub const DEFAULT_S_REL: f64 = 0.1;
/// Internal settings for the critical-point ranking pass.
const CRITICAL_LR: f64 = 0.05;
const CRITICAL_STEPS: usize = 10;
/// Share of points the removal and generation baselines touch.
const BASELINE_FRACTION: f64 = 0.10;

#[derive(Clone, Debug)]
pub struct AttackConfig {
    /// Per-component field clamp (and per-point budget for the baselines),
    /// meters.
    pub epsilon: f64,
    pub lr: f64,
    /// Training epochs over the corpus (one optimizer step per scene).
    pub steps: usize,
    /// Lattice neighbors blended per point.
    pub k: usize,
    pub groups: usize,
    pub variants: usize,
    pub aggregation: Aggregation,
    pub constraint: ConstraintMode,
    pub grouping: GroupingKey,
    pub lambda_chamfer: f64,
    pub s_rel: f64,
    pub rng_seed: u64,
    pub shape: GridShape,
    /// Uniform init range for fresh field vectors, meters.
    pub init_range: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            epsilon: 0.30,
            lr: 0.05,
            steps: 12,
            k: 2,
            groups: 12,
            variants: 6,
            aggregation: Aggregation::Distance,
            constraint: ConstraintMode::Full,
            grouping: GroupingKey::RelativeRotation,
            lambda_chamfer: 0.1,
            s_rel: DEFAULT_S_REL,
            rng_seed: 0,
            shape: GridShape::default_car(),
            init_range: 0.01,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epsilon <= 0.0 {
            return Err(Error::Config(format!("epsilon {} must be > 0", self.epsilon)));
        }
        if self.lr <= 0.0 {
            return Err(Error::Config(format!("lr {} must be > 0", self.lr)));
        }
        if !(0.0..1.0).contains(&self.s_rel) {
            return Err(Error::Config(format!("s_rel {} outside [0, 1)", self.s_rel)));
        }
        if self.groups == 0 || self.variants == 0 {
            return Err(Error::Config("groups and variants must be >= 1".into()));
        }
        if self.lambda_chamfer < 0.0 {
            return Err(Error::Config(format!(
                "lambda_chamfer {} must be >= 0",
                self.lambda_chamfer
            )));
        }
        self.deformation().validate()
    }

    pub fn deformation(&self) -> DeformationConfig {
        DeformationConfig {
            k: self.k,
            epsilon: self.epsilon,
            aggregation: self.aggregation,
            constraint: self.constraint,
        }
    }
}

/// Proposal-suppression loss: sum over proposals scoring above `s_rel` of
/// -IoU(gt, proposal) * log(1 - s). The IoU acts as a constant quality
/// weight; scores numerically at 1 are clamped to 1 - 1e-12 before the
/// log.
pub fn adv_loss(proposals: &[Proposal], gt: &OrientedBox3, s_rel: f64) -> f64 {
    let mut loss = 0.0;
    for p in proposals {
        if p.score <= s_rel {
            continue;
        }
        let w = iou_3d(gt, &p.bbox);
        if w == 0.0 {
            continue;
        }
        loss -= w * (1.0 - p.score.min(SCORE_CLAMP)).ln();
    }
    loss
}

/// One scored gt candidate of a scene, with everything the backward pass
/// needs to route gradients to the cropped cloud points.
struct ScoredCandidate {
    obj_idx: usize,
    crop: Vec<usize>,
    fwd: Forward,
    proposal: Proposal,
}

/// Scores every populated gt box of the (possibly deformed) cloud.
/// Candidates with empty crops are silently absent, mirroring detect.
fn score_gt_candidates(
    cloud: &PointCloud,
    objects: &[GtObject],
    params: &ScorerParams,
) -> Result<Vec<ScoredCandidate>> {
    let mut out = Vec::with_capacity(objects.len());
    for (obj_idx, obj) in objects.iter().enumerate() {
        let crop = cloud.indices_in_box(&obj.bbox, 0.0);
        if crop.is_empty() {
            continue;
        }
        let local: Vec<Vec3> = crop
            .iter()
            .map(|&i| candidate_frame(cloud.points[i], &obj.bbox))
            .collect();
        let fwd = score_forward(&local, params)?;
        let proposal = Proposal {
            bbox: apply_residual(&obj.bbox, &fwd.residual),
            score: fwd.score,
        };
        out.push(ScoredCandidate {
            obj_idx,
            crop,
            fwd,
            proposal,
        });
    }
    Ok(out)
}

/// Total scene loss: each object's gt box plays the q* role against every
/// proposal. Cross terms vanish whenever boxes are far apart.
fn scene_loss(scored: &[ScoredCandidate], objects: &[GtObject], s_rel: f64) -> f64 {
    let proposals: Vec<Proposal> = scored.iter().map(|c| c.proposal.clone()).collect();
    objects
        .iter()
        .map(|o| adv_loss(&proposals, &o.bbox, s_rel))
        .sum()
}

/// d(scene loss)/d(cloud point), world frame, for every point in some
/// relevant crop. Relevance and the IoU weights are stop-gradients.
fn scene_upstream(
    scored: &[ScoredCandidate],
    objects: &[GtObject],
    params: &ScorerParams,
    s_rel: f64,
) -> Result<HashMap<usize, Vec3>> {
    let mut upstream: HashMap<usize, Vec3> = HashMap::new();
    for cand in scored {
        let s = cand.proposal.score;
        if s <= s_rel {
            continue;
        }
        let weight: f64 = objects
            .iter()
            .map(|o| iou_3d(&o.bbox, &cand.proposal.bbox))
            .sum();
        if weight == 0.0 {
            continue;
        }
        let dls = weight / (1.0 - s.min(SCORE_CLAMP));
        let bbox = &objects[cand.obj_idx].bbox;
        let local_grads = score_backward(params, &cand.fwd)?;
        for (ci, &cloud_idx) in cand.crop.iter().enumerate() {
            let g = candidate_frame_grad_to_world(local_grads[ci], bbox) * dls;
            *upstream.entry(cloud_idx).or_insert(Vec3::ZERO) += g;
        }
    }
    Ok(upstream)
}

/// Routes upstream point gradients through one object's deformation trace
/// into per-cell field gradients (box frame). The shift is linear in the
/// field, so this is exact: coefficient d/k, 1/k, or 1 per neighbor, the
/// ray projection applied to the upstream vector (projections are
/// symmetric), then the rotation into the box frame.
fn accumulate_trace_grad(
    trace: &DeformTrace,
    cfg: &DeformationConfig,
    upstream: &HashMap<usize, Vec3>,
    grad: &mut [Vec3],
) {
    let agg = cfg.effective_aggregation();
    for entry in &trace.points {
        let Some(&g) = upstream.get(&entry.index) else {
            continue;
        };
        // aggregate_shift normalizes by the realized neighbor count.
        let k = entry.neighbors.len() as f64;
        let gw = if cfg.projects_onto_ray() {
            entry.ray_dir * entry.ray_dir.dot(g)
        } else {
            g
        };
        let gb = gw.rotated_z(-trace.yaw);
        for &(flat, d) in &entry.neighbors {
            let c = match agg {
                Aggregation::Distance => d / k,
                Aggregation::Average => 1.0 / k,
                Aggregation::Sum => 1.0,
            };
            grad[flat] += gb * c;
        }
    }
}

#[derive(Clone, Debug)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Exponential moving average of the mean loss (alpha 0.3).
    pub smoothed_loss: f64,
    /// Mean per-point displacement magnitude over the epoch, meters.
    pub mean_displacement: f64,
    /// Largest absolute vector component in the bank after the epoch.
    pub max_abs_component: f64,
}

pub struct BankTrainOutcome {
    pub bank: FieldBank,
    pub log: Vec<EpochStats>,
}

/// Delimited training log, one row per epoch.
pub fn format_train_log(log: &[EpochStats]) -> String {
    let mut out = String::from("# epoch mean_loss smoothed_loss mean_displacement max_abs_component\n");
    for row in log {
        writeln!(
            out,
            "{} {} {} {} {}",
            row.epoch, row.mean_loss, row.smoothed_loss, row.mean_displacement, row.max_abs_component
        )
        .unwrap();
    }
    out
}

/// Static per-object attack metadata for one scene: group, the geometric
/// trace, and the point count (traces never change across epochs because
/// deformations always start from the clean cloud).
struct SceneMeta {
    objects: Vec<ObjMeta>,
}

struct ObjMeta {
    group: usize,
    trace: DeformTrace,
}

/// Trains a field bank by PGD with Adam: per epoch, per scene, deform
/// every object with its group's round-robin variant, score the gt
/// candidates, and step the touched fields on the exact loss gradient,
/// clamping every component into [-epsilon, epsilon] after each step.
/// Groups that never see a training object keep their initialization and
/// are reported with a warning.
pub fn train_field_bank(
    corpus: &[SceneFrame],
    scorer: &ScorerParams,
    cfg: &AttackConfig,
) -> Result<BankTrainOutcome> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Train("cannot train a field bank on an empty corpus".into()));
    }
    let dcfg = cfg.deformation();
    let mut bank = FieldBank::init(
        cfg.shape,
        cfg.grouping,
        cfg.groups,
        cfg.variants,
        cfg.init_range,
        cfg.rng_seed,
    );
    let cells = cfg.shape.vector_count();

    let metas: Vec<SceneMeta> = {
        let probe = bank.field(0, 0);
        let built: Vec<Result<SceneMeta>> = exec::map_collect(corpus, |scene| {
            let mut objects = Vec::new();
            for obj in &scene.objects {
                let trace = build_trace(scene, &obj.bbox, probe, &dcfg)?;
                if trace.points.is_empty() {
                    continue;
                }
                let group = group_for_object(
                    cfg.grouping,
                    cfg.groups,
                    scene.sensor_origin,
                    &obj.bbox,
                    trace.points.len(),
                )?;
                objects.push(ObjMeta { group, trace });
            }
            Ok(SceneMeta { objects })
        });
        built.into_iter().collect::<Result<Vec<_>>>()?
    };

    let mut group_counts = vec![0usize; cfg.groups];
    for meta in &metas {
        for om in &meta.objects {
            group_counts[om.group] += 1;
        }
    }
    for (g, &count) in group_counts.iter().enumerate() {
        if count == 0 {
            log::warn!("group {g} has no training objects; its fields stay at initialization");
        }
    }

    let mut adams: Vec<Adam> = (0..cfg.groups * cfg.variants)
        .map(|_| Adam::new(cells * 3, cfg.lr))
        .collect();
    let mut uses = vec![0usize; cfg.groups];
    let mut log_rows: Vec<EpochStats> = Vec::with_capacity(cfg.steps);
    let mut smoothed = f64::NAN;

    for epoch in 0..cfg.steps {
        let mut loss_sum = 0.0;
        let mut disp_sum = 0.0;
        let mut disp_n = 0usize;
        for (scene, meta) in corpus.iter().zip(&metas) {
            // Pick this step's variant per object and deform from clean.
            let mut cloud = scene.cloud.clone();
            let mut picks = Vec::with_capacity(meta.objects.len());
            for om in &meta.objects {
                let variant = uses[om.group] % cfg.variants;
                uses[om.group] += 1;
                let field = bank.field(om.group, variant);
                for entry in &om.trace.points {
                    let shift = trace_shift(entry, om.trace.yaw, field, &dcfg);
                    cloud.points[entry.index] += shift;
                    disp_sum += shift.norm();
                    disp_n += 1;
                }
                picks.push(variant);
            }

            let scored = score_gt_candidates(&cloud, &scene.objects, scorer)?;
            loss_sum += scene_loss(&scored, &scene.objects, cfg.s_rel);
            let upstream = scene_upstream(&scored, &scene.objects, scorer, cfg.s_rel)?;
            if upstream.is_empty() {
                continue;
            }

            let mut grads: BTreeMap<(usize, usize), Vec<Vec3>> = BTreeMap::new();
            for (om, &variant) in meta.objects.iter().zip(&picks) {
                let grad = grads
                    .entry((om.group, variant))
                    .or_insert_with(|| vec![Vec3::ZERO; cells]);
                accumulate_trace_grad(&om.trace, &dcfg, &upstream, grad);
            }
            for ((group, variant), grad) in grads {
                if grad.iter().all(|g| *g == Vec3::ZERO) {
                    continue;
                }
                let field = bank.field_mut(group, variant);
                let mut flat: Vec<f64> = field
                    .vectors()
                    .iter()
                    .flat_map(|v| [v.x, v.y, v.z])
                    .collect();
                let grad_flat: Vec<f64> = grad.iter().flat_map(|g| [g.x, g.y, g.z]).collect();
                adams[group * cfg.variants + variant].step(&mut flat, &grad_flat);
                for (cell, c) in field.vectors_mut().iter_mut().zip(flat.chunks_exact(3)) {
                    *cell = Vec3::new(c[0], c[1], c[2]);
                }
                field.clamp_components(cfg.epsilon);
            }
        }
        let mean_loss = loss_sum / corpus.len() as f64;
        smoothed = if smoothed.is_nan() {
            mean_loss
        } else {
            0.7 * smoothed + 0.3 * mean_loss
        };
        let stats = EpochStats {
            epoch,
            mean_loss,
            smoothed_loss: smoothed,
            mean_displacement: if disp_n == 0 { 0.0 } else { disp_sum / disp_n as f64 },
            max_abs_component: bank.max_abs_component(),
        };
        log::info!(
            "field bank epoch {}: mean loss {:.6}, mean displacement {:.4} m, max |v| {:.4} m",
            stats.epoch,
            stats.mean_loss,
            stats.mean_displacement,
            stats.max_abs_component
        );
        log_rows.push(stats);
    }
    Ok(BankTrainOutcome {
        bank,
        log: log_rows,
    })
}

/// One training-gradient evaluation, opened up for auditing.
pub struct GradAudit {
    /// Scene suppression loss with `obj_idx` deformed.
    pub loss: f64,
    /// d(loss)/d(cell vector), box frame, one entry per lattice cell.
    pub grad: Vec<Vec3>,
    /// The stop-gradient snapshot: (object index, deformed-cloud crop,
    /// summed IoU weight) for every candidate the loss kept. A reference
    /// loss built from these probes exactly the differentiated path.
    pub frozen: Vec<(usize, Vec<usize>, f64)>,
}

/// Deforms one object with `field`, rescores every ground-truth candidate
/// on the deformed cloud, and returns the loss together with its exact
/// gradient with respect to the field vectors. This is the same chain the
/// trainer steps on, exposed so external checks (and debugging sessions)
/// can difference it against the analytic gradient.
pub fn audit_field_grad(
    scene: &SceneFrame,
    obj_idx: usize,
    field: &VectorFieldGrid,
    dcfg: &DeformationConfig,
    scorer: &ScorerParams,
    s_rel: f64,
) -> Result<GradAudit> {
    let obj = scene.objects.get(obj_idx).ok_or_else(|| {
        Error::Attack(format!(
            "object index {obj_idx} out of range ({} objects)",
            scene.objects.len()
        ))
    })?;
    let trace = build_trace(scene, &obj.bbox, field, dcfg)?;
    let mut cloud = scene.cloud.clone();
    for entry in &trace.points {
        cloud.points[entry.index] += trace_shift(entry, trace.yaw, field, dcfg);
    }
    let scored = score_gt_candidates(&cloud, &scene.objects, scorer)?;
    let loss = scene_loss(&scored, &scene.objects, s_rel);
    let upstream = scene_upstream(&scored, &scene.objects, scorer, s_rel)?;
    let mut grad = vec![Vec3::ZERO; field.len()];
    accumulate_trace_grad(&trace, dcfg, &upstream, &mut grad);
    let frozen = scored
        .iter()
        .filter(|c| c.proposal.score > s_rel)
        .map(|c| {
            let w: f64 = scene
                .objects
                .iter()
                .map(|o| iou_3d(&o.bbox, &c.proposal.bbox))
                .sum();
            (c.obj_idx, c.crop.clone(), w)
        })
        .filter(|(_, _, w)| *w > 0.0)
        .collect();
    Ok(GradAudit { loss, grad, frozen })
}

/// Deforms every populated object of a scene with its group's field, the
/// variant drawn uniformly per object from the seed. Labels and
/// out-of-box points pass through untouched.
pub fn deform_scene_with_bank(
    scene: &SceneFrame,
    bank: &FieldBank,
    dcfg: &DeformationConfig,
    rng_seed: u64,
) -> Result<SceneFrame> {
    let mut cloud = scene.cloud.clone();
    for (oi, obj) in scene.objects.iter().enumerate() {
        let n_inside = scene.cloud.indices_in_box(&obj.bbox, 0.0).len();
        if n_inside == 0 {
            continue;
        }
        let group = group_for_object(
            bank.grouping(),
            bank.groups(),
            scene.sensor_origin,
            &obj.bbox,
            n_inside,
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(exec::derive_seed(rng_seed, oi as u64));
        let variant = rng.gen_range(0..bank.variants());
        let field = bank.field(group, variant);
        let trace = build_trace(scene, &obj.bbox, field, dcfg)?;
        for entry in &trace.points {
            cloud.points[entry.index] += trace_shift(entry, trace.yaw, field, dcfg);
        }
    }
    Ok(SceneFrame {
        cloud,
        sensor_origin: scene.sensor_origin,
        objects: scene.objects.clone(),
    })
}

/// Loss and world-frame point gradients of one free-standing object crop
/// (all given points, in the gt frame). The gradient is None when no
/// proposal clears the relevance threshold or the IoU weight is zero, in
/// which case the loss is exactly zero and the attack has converged.
fn object_adv_state(
    deformed: &[Vec3],
    scorer: &ScorerParams,
    gt: &OrientedBox3,
) -> Result<(f64, Option<Vec<Vec3>>)> {
    let local: Vec<Vec3> = deformed
        .iter()
        .map(|&p| candidate_frame(p, gt))
        .collect();
    let fwd = score_forward(&local, scorer)?;
    let proposal = Proposal {
        bbox: apply_residual(gt, &fwd.residual),
        score: fwd.score,
    };
    let loss = adv_loss(std::slice::from_ref(&proposal), gt, DEFAULT_S_REL);
    if proposal.score <= DEFAULT_S_REL {
        return Ok((loss, None));
    }
    let w = iou_3d(gt, &proposal.bbox);
    if w == 0.0 {
        return Ok((loss, None));
    }
    let dls = w / (1.0 - proposal.score.min(SCORE_CLAMP));
    let local_grads = score_backward(scorer, &fwd)?;
    let grads = local_grads
        .into_iter()
        .map(|g| candidate_frame_grad_to_world(g, gt) * dls)
        .collect();
    Ok((loss, Some(grads)))
}

fn clamp_l2(v: Vec3, budget: f64) -> Vec3 {
    let n = v.norm();
    if n > budget {
        v * (budget / n)
    } else {
        v
    }
}

/// Per-point (sample-specific) gradient descent on the suppression loss,
/// re-projecting every shift into the L2 ball of radius epsilon after
/// each step. Returns the shifts, not the moved points.
pub fn iter_grad_l2(
    points: &[Vec3],
    scorer: &ScorerParams,
    gt: &OrientedBox3,
    epsilon: f64,
    lr: f64,
    steps: usize,
) -> Result<Vec<Vec3>> {
    let mut shifts = vec![Vec3::ZERO; points.len()];
    if points.is_empty() {
        return Ok(shifts);
    }
    for _ in 0..steps {
        let deformed: Vec<Vec3> = points.iter().zip(&shifts).map(|(&p, &m)| p + m).collect();
        let (_, grads) = object_adv_state(&deformed, scorer, gt)?;
        let Some(grads) = grads else { break };
        for (m, g) in shifts.iter_mut().zip(&grads) {
            *m = clamp_l2(*m - *g * lr, epsilon);
        }
    }
    Ok(shifts)
}

/// One-sided Chamfer term of the deformed points against the originals,
/// plus each deformed point's nearest original. O(n^2), fine at object
/// scale.
fn chamfer_to_original(deformed: &[Vec3], original: &[Vec3]) -> (f64, Vec<Vec3>) {
    let nearest: Vec<Vec3> = exec::map_collect(deformed, |&q| {
        let mut best = f64::INFINITY;
        let mut arg = original[0];
        for &o in original {
            let d = (q - o).norm_sq();
            if d < best {
                best = d;
                arg = o;
            }
        }
        arg
    });
    let mean = deformed
        .iter()
        .zip(&nearest)
        .map(|(&q, &o)| (q - o).norm())
        .sum::<f64>()
        / deformed.len() as f64;
    (mean, nearest)
}

/// Chamfer-penalized attack: gradient step on the suppression loss, then
/// the proximal step of lambda times the one-sided Chamfer distance
/// (each point slides toward its nearest original by at most
/// lr * lambda / n, snapping onto it when closer than that). If the
/// Chamfer distance still exceeds epsilon, all shifts are uniformly
/// scaled back until it complies, so the constraint holds at return.
pub fn chamfer_attack(
    points: &[Vec3],
    scorer: &ScorerParams,
    gt: &OrientedBox3,
    epsilon: f64,
    lambda: f64,
    lr: f64,
    steps: usize,
) -> Result<Vec<Vec3>> {
    let n = points.len();
    let mut shifts = vec![Vec3::ZERO; n];
    if n == 0 {
        return Ok(shifts);
    }
    let tau = lr * lambda / n as f64;
    for _ in 0..steps {
        let deformed: Vec<Vec3> = points.iter().zip(&shifts).map(|(&p, &m)| p + m).collect();
        if let (_, Some(grads)) = object_adv_state(&deformed, scorer, gt)? {
            for (m, g) in shifts.iter_mut().zip(&grads) {
                *m -= *g * lr;
            }
        }
        let deformed: Vec<Vec3> = points.iter().zip(&shifts).map(|(&p, &m)| p + m).collect();
        let (_, nearest) = chamfer_to_original(&deformed, points);
        for ((m, &q), &o) in shifts.iter_mut().zip(&deformed).zip(&nearest) {
            let delta = q - o;
            let d = delta.norm();
            if d > 0.0 {
                *m -= delta * (tau.min(d) / d);
            }
        }
        // Uniform scale-back onto the constraint set. Shrinking the shifts
        // shrinks every deformed-to-original distance bound, and zero
        // shifts give Chamfer zero, so this terminates.
        for _ in 0..200 {
            let deformed: Vec<Vec3> =
                points.iter().zip(&shifts).map(|(&p, &m)| p + m).collect();
            if chamfer_to_original(&deformed, points).0 <= epsilon {
                break;
            }
            for m in shifts.iter_mut() {
                *m = *m * 0.8;
            }
        }
    }
    Ok(shifts)
}

/// Indices of the top floor(fraction * n) points by iterative-L2 shift
/// magnitude, descending; ties broken toward the lower index.
pub fn critical_points(
    points: &[Vec3],
    scorer: &ScorerParams,
    gt: &OrientedBox3,
    fraction: f64,
) -> Result<Vec<usize>> {
    debug_assert!(fraction > 0.0 && fraction < 1.0);
    let shifts = iter_grad_l2(points, scorer, gt, 0.30, CRITICAL_LR, CRITICAL_STEPS)?;
    let take = (fraction * points.len() as f64).floor() as usize;
    Ok(rank_by_magnitude(&shifts, take))
}

fn rank_by_magnitude(shifts: &[Vec3], take: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..shifts.len()).collect();
    order.sort_by(|&a, &b| {
        shifts[b]
            .norm()
            .partial_cmp(&shifts[a].norm())
            .unwrap()
            .then(a.cmp(&b))
    });
    order.truncate(take);
    order
}

pub struct RemovalOutcome {
    /// Surviving points, input order preserved.
    pub points: Vec<Vec3>,
    /// Removed indices into the input, ascending.
    pub removed: Vec<usize>,
}

/// Deletes the 10% most attack-sensitive points.
pub fn removal_attack(
    points: &[Vec3],
    scorer: &ScorerParams,
    gt: &OrientedBox3,
) -> Result<RemovalOutcome> {
    if points.len() < 10 {
        return Err(Error::Attack(format!(
            "removal needs at least 10 points, got {}",
            points.len()
        )));
    }
    let mut removed = critical_points(points, scorer, gt, BASELINE_FRACTION)?;
    removed.sort_unstable();
    let mut gone = vec![false; points.len()];
    for &i in &removed {
        gone[i] = true;
    }
    let kept = points
        .iter()
        .enumerate()
        .filter(|&(i, _)| !gone[i])
        .map(|(_, &p)| p)
        .collect();
    Ok(RemovalOutcome {
        points: kept,
        removed,
    })
}

/// Appends 10% new points at the critical locations and runs the
/// iterative-L2 optimization on the appended points only. The original
/// points come back bit-identical, first, in order.
pub fn generation_attack(
    points: &[Vec3],
    scorer: &ScorerParams,
    gt: &OrientedBox3,
    epsilon: f64,
    lr: f64,
    steps: usize,
) -> Result<Vec<Vec3>> {
    let n = points.len();
    if n < 10 {
        return Err(Error::Attack(format!(
            "generation needs at least 10 points, got {n}"
        )));
    }
    let seeds = critical_points(points, scorer, gt, BASELINE_FRACTION)?;
    let anchors: Vec<Vec3> = seeds.iter().map(|&i| points[i]).collect();
    let mut shifts = vec![Vec3::ZERO; anchors.len()];
    for _ in 0..steps {
        let combined: Vec<Vec3> = points
            .iter()
            .copied()
            .chain(anchors.iter().zip(&shifts).map(|(&a, &m)| a + m))
            .collect();
        let (_, grads) = object_adv_state(&combined, scorer, gt)?;
        let Some(grads) = grads else { break };
        for (ai, m) in shifts.iter_mut().enumerate() {
            *m = clamp_l2(*m - grads[n + ai] * lr, epsilon);
        }
    }
    let mut out = points.to_vec();
    out.extend(anchors.iter().zip(&shifts).map(|(&a, &m)| a + m));
    Ok(out)
}
