//! A miniature differentiable point-set scorer standing in for the 3D
//! detector under attack. Architecture: shared per-point MLP (3 -> H -> H,
//! tanh), feature-wise max-pool over the points, a logistic score head and
//! a linear box-residual head (dx, dy, dl, dyaw in the candidate frame).
//!
//! Forward and backward passes are written out by hand; the backward pass
//! is exact reverse-mode differentiation, which is the whole point: the
//! attack needs trustworthy d(score)/d(point). Points feed in already
//! expressed in the candidate box frame, which makes the scorer
//! translation- and yaw-invariant by construction.

use crate::error::{Error, Result};
use crate::exec;
use crate::geometry::{candidate_frame, wrap_angle, OrientedBox3, SceneFrame, Vec3};
use crate::optim::Adam;
use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

/// Pre-activation clamp for the logistic head; keeps the score strictly
/// inside (0, 1) in f64 arithmetic no matter how the weights evolve.
const SCORE_PREACT_LIMIT: f64 = 30.0;

fn sigmoid(z: f64) -> f64 {
    let z = z.clamp(-SCORE_PREACT_LIMIT, SCORE_PREACT_LIMIT);
    1.0 / (1.0 + (-z).exp())
}

/// Scorer weights. Flat layout, also the file payload order:
/// w1 (H x 3, row-major), b1 (H), w2 (H x H, row-major out-in), b2 (H),
/// ws (H), bs, wr (4 x H, row-major), br (4).
#[derive(Clone, Debug, PartialEq)]
pub struct ScorerParams {
    hidden: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    ws: Vec<f64>,
    bs: f64,
    wr: Vec<f64>,
    br: [f64; 4],
}

impl ScorerParams {
    pub fn zeros(hidden: usize) -> ScorerParams {
        assert!(hidden >= 4);
        ScorerParams {
            hidden,
            w1: vec![0.0; hidden * 3],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden * hidden],
            b2: vec![0.0; hidden],
            ws: vec![0.0; hidden],
            bs: 0.0,
            wr: vec![0.0; 4 * hidden],
            br: [0.0; 4],
        }
    }

    /// Uniform init scaled by 1/sqrt(fan_in), biases zero. Weight draw
    /// order is flat-layout order, so (hidden, seed) pins every bit.
    pub fn init(hidden: usize, seed: u64) -> ScorerParams {
        let mut p = ScorerParams::zeros(hidden);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |w: &mut [f64], fan_in: usize| {
            let r = 1.0 / (fan_in as f64).sqrt();
            for x in w {
                *x = r * (2.0 * rng.gen::<f64>() - 1.0);
            }
        };
        fill(&mut p.w1, 3);
        fill(&mut p.w2, hidden);
        fill(&mut p.ws, hidden);
        fill(&mut p.wr, hidden);
        p
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn param_count(&self) -> usize {
        let h = self.hidden;
        h * h + 10 * h + 5
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        out.extend_from_slice(&self.w1);
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(&self.w2);
        out.extend_from_slice(&self.b2);
        out.extend_from_slice(&self.ws);
        out.push(self.bs);
        out.extend_from_slice(&self.wr);
        out.extend_from_slice(&self.br);
        out
    }

    pub fn set_from_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count());
        let h = self.hidden;
        let mut off = 0;
        let mut take = |n: usize| {
            let s = &flat[off..off + n];
            off += n;
            s
        };
        self.w1.copy_from_slice(take(h * 3));
        self.b1.copy_from_slice(take(h));
        self.w2.copy_from_slice(take(h * h));
        self.b2.copy_from_slice(take(h));
        self.ws.copy_from_slice(take(h));
        self.bs = take(1)[0];
        self.wr.copy_from_slice(take(4 * h));
        self.br.copy_from_slice(take(4));
    }

    /// FNV-1a over the flat parameter bytes; used to detect stale caches.
    fn digest(&self) -> u64 {
        let mut acc: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                acc ^= b as u64;
                acc = acc.wrapping_mul(0x100_0000_01b3);
            }
        };
        eat(&(self.hidden as u64).to_le_bytes());
        for x in self.to_flat() {
            eat(&x.to_le_bytes());
        }
        acc
    }
}

/// One scored candidate. The score is strictly inside (0, 1).
#[derive(Clone, Debug)]
pub struct Proposal {
    pub bbox: OrientedBox3,
    pub score: f64,
}

/// Forward-pass result plus the activations the backward pass needs.
pub struct Forward {
    pub score: f64,
    /// (dx, dy, dl, dyaw) in the candidate frame.
    pub residual: [f64; 4],
    points: Vec<Vec3>,
    a1: Vec<f64>,
    a2: Vec<f64>,
    /// Winning point index per pooled channel; ties go to the lowest index.
    argmax: Vec<usize>,
    g: Vec<f64>,
    zs: f64,
    digest: u64,
}

/// Runs the scorer on a crop (points in the candidate box frame).
pub fn score_forward(points: &[Vec3], params: &ScorerParams) -> Result<Forward> {
    if points.is_empty() {
        return Err(Error::Model("score_forward on an empty point set".into()));
    }
    let h = params.hidden;
    let n = points.len();
    let mut a1 = vec![0.0; n * h];
    let mut a2 = vec![0.0; n * h];
    for (i, p) in points.iter().enumerate() {
        let row1 = &mut a1[i * h..(i + 1) * h];
        for c in 0..h {
            let z = params.w1[c * 3] * p.x
                + params.w1[c * 3 + 1] * p.y
                + params.w1[c * 3 + 2] * p.z
                + params.b1[c];
            row1[c] = z.tanh();
        }
        let row1 = &a1[i * h..(i + 1) * h];
        let row2 = &mut a2[i * h..(i + 1) * h];
        for c in 0..h {
            let mut z = params.b2[c];
            let wrow = &params.w2[c * h..(c + 1) * h];
            for (w, a) in wrow.iter().zip(row1) {
                z += w * a;
            }
            row2[c] = z.tanh();
        }
    }

    let mut g = vec![f64::NEG_INFINITY; h];
    let mut argmax = vec![0usize; h];
    for i in 0..n {
        for c in 0..h {
            let v = a2[i * h + c];
            if v > g[c] {
                g[c] = v;
                argmax[c] = i;
            }
        }
    }

    let mut zs = params.bs;
    for c in 0..h {
        zs += params.ws[c] * g[c];
    }
    let score = sigmoid(zs);

    let mut residual = [0.0; 4];
    for (r, out) in residual.iter_mut().enumerate() {
        let mut z = params.br[r];
        for c in 0..h {
            z += params.wr[r * h + c] * g[c];
        }
        *out = z;
    }

    Ok(Forward {
        score,
        residual,
        points: points.to_vec(),
        a1,
        a2,
        argmax,
        g,
        zs,
        digest: params.digest(),
    })
}

/// Exact d(score)/d(point) for every input point of a forward pass. Points
/// that win no pooling channel get an exactly zero gradient.
pub fn score_backward(params: &ScorerParams, fwd: &Forward) -> Result<Vec<Vec3>> {
    if fwd.digest != params.digest() {
        return Err(Error::Model(
            "stale forward cache: params changed since score_forward".into(),
        ));
    }
    let h = params.hidden;
    let n = fwd.points.len();
    let dzs = fwd.score * (1.0 - fwd.score) * sigmoid_clamp_factor(fwd.zs);

    // d(score)/d(a1) rows, populated only for pooling winners.
    let mut da1 = vec![0.0; n * h];
    for c in 0..h {
        let i = fwd.argmax[c];
        let dz2 = dzs * params.ws[c] * (1.0 - fwd.a2[i * h + c] * fwd.a2[i * h + c]);
        let wrow = &params.w2[c * h..(c + 1) * h];
        let row = &mut da1[i * h..(i + 1) * h];
        for (d, w) in row.iter_mut().zip(wrow) {
            *d += dz2 * w;
        }
    }

    let mut grads = vec![Vec3::ZERO; n];
    for i in 0..n {
        let row = &da1[i * h..(i + 1) * h];
        let a1row = &fwd.a1[i * h..(i + 1) * h];
        let mut acc = Vec3::ZERO;
        let mut touched = false;
        for c in 0..h {
            if row[c] != 0.0 {
                touched = true;
                let dz1 = row[c] * (1.0 - a1row[c] * a1row[c]);
                acc.x += dz1 * params.w1[c * 3];
                acc.y += dz1 * params.w1[c * 3 + 1];
                acc.z += dz1 * params.w1[c * 3 + 2];
            }
        }
        if touched {
            grads[i] = acc;
        }
    }
    Ok(grads)
}

/// 1 inside the logistic clamp, 0 where the pre-activation saturates; the
/// clamp is a hard stop, so its outside gradient is exactly zero.
fn sigmoid_clamp_factor(zs: f64) -> f64 {
    if zs.abs() < SCORE_PREACT_LIMIT {
        1.0
    } else {
        0.0
    }
}

/// Accumulates d(loss)/d(params) for one crop into `grads` (flat layout),
/// given upstream d(loss)/d(score) and d(loss)/d(residual).
fn backward_params(
    params: &ScorerParams,
    fwd: &Forward,
    d_score: f64,
    d_res: &[f64; 4],
    grads: &mut [f64],
) {
    let h = params.hidden;
    let n = fwd.points.len();
    let dzs = d_score * fwd.score * (1.0 - fwd.score) * sigmoid_clamp_factor(fwd.zs);

    // Flat offsets mirror to_flat.
    let (o_w1, o_b1) = (0, h * 3);
    let o_w2 = o_b1 + h;
    let o_b2 = o_w2 + h * h;
    let o_ws = o_b2 + h;
    let o_bs = o_ws + h;
    let o_wr = o_bs + 1;
    let o_br = o_wr + 4 * h;

    grads[o_bs] += dzs;
    for c in 0..h {
        grads[o_ws + c] += dzs * fwd.g[c];
    }
    for r in 0..4 {
        grads[o_br + r] += d_res[r];
        for c in 0..h {
            grads[o_wr + r * h + c] += d_res[r] * fwd.g[c];
        }
    }

    let mut dg = vec![0.0; h];
    for c in 0..h {
        let mut v = dzs * params.ws[c];
        for r in 0..4 {
            v += d_res[r] * params.wr[r * h + c];
        }
        dg[c] = v;
    }

    let mut da1 = vec![0.0; n * h];
    for c in 0..h {
        let i = fwd.argmax[c];
        let dz2 = dg[c] * (1.0 - fwd.a2[i * h + c] * fwd.a2[i * h + c]);
        grads[o_b2 + c] += dz2;
        let a1row = &fwd.a1[i * h..(i + 1) * h];
        for ci in 0..h {
            grads[o_w2 + c * h + ci] += dz2 * a1row[ci];
            da1[i * h + ci] += dz2 * params.w2[c * h + ci];
        }
    }

    for i in 0..n {
        let row = &da1[i * h..(i + 1) * h];
        let a1row = &fwd.a1[i * h..(i + 1) * h];
        let p = fwd.points[i];
        for c in 0..h {
            if row[c] != 0.0 {
                let dz1 = row[c] * (1.0 - a1row[c] * a1row[c]);
                grads[o_w1 + c * 3] += dz1 * p.x;
                grads[o_w1 + c * 3 + 1] += dz1 * p.y;
                grads[o_w1 + c * 3 + 2] += dz1 * p.z;
                grads[o_b1 + c] += dz1;
            }
        }
    }
}

/// Applies the residual head output to a candidate box: xy shift in the
/// candidate frame, length delta (floored at 0.1 m), yaw delta. Width and
/// height pass through.
pub fn apply_residual(cand: &OrientedBox3, r: &[f64; 4]) -> OrientedBox3 {
    let center = cand.center + Vec3::new(r[0], r[1], 0.0).rotated_z(cand.yaw);
    OrientedBox3::new(
        center,
        cand.width,
        cand.height,
        (cand.length + r[2]).max(0.1),
        wrap_angle(cand.yaw + r[3]),
    )
}

/// Scores each candidate box against the scene cloud. Candidates whose
/// crop is empty are skipped with a debug diagnostic; this artifact scores
/// proposals, it does not generate them.
pub fn detect(
    scene: &SceneFrame,
    params: &ScorerParams,
    candidates: &[OrientedBox3],
) -> Vec<Proposal> {
    let scored = exec::map_collect(candidates, |cand| {
        let inside = scene.cloud.indices_in_box(cand, 0.0);
        if inside.is_empty() {
            return None;
        }
        let crop: Vec<Vec3> = inside
            .iter()
            .map(|&i| candidate_frame(scene.cloud.points[i], cand))
            .collect();
        let fwd = score_forward(&crop, params).expect("non-empty crop");
        Some(Proposal {
            bbox: apply_residual(cand, &fwd.residual),
            score: fwd.score,
        })
    });
    scored
        .into_iter()
        .enumerate()
        .filter_map(|(i, p)| {
            if p.is_none() {
                log::debug!("candidate {i} has no interior points, skipped");
            }
            p
        })
        .collect()
}

// Training.

#[derive(Clone, Debug)]
pub struct ScorerTrainConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Jittered positive crops per object (residual regression targets).
    pub jitters_per_object: usize,
    /// Random non-object crops per scene.
    pub negatives_per_scene: usize,
    /// Hard negatives per object: the object's own crop with both side
    /// faces pinched inward. Clutter boxes alone put the decision boundary
    /// so far from the positives that no subtle deformation can cross it;
    /// these pull it in to surface-deformation scale, which is the regime
    /// the score gradients are consumed in. A double-sided width deficit
    /// is the one coherent signature no positive can wear: candidate
    /// jitter never varies width, and a dent recedes a single patch.
    pub hard_negatives_per_object: usize,
    /// Inset range for each pinched side face, in meters.
    pub hard_negative_inset: (f64, f64),
    /// Weight of the residual L2 term against the score BCE.
    pub residual_weight: f64,
    /// L2 penalty on all parameters. Crop classes separate cleanly, so
    /// unregularized BCE drives the tanh stack into saturation where
    /// d(score)/d(point) underflows to zero; the decay keeps that surface
    /// alive for gradient consumers.
    pub weight_decay: f64,
    /// BCE target smoothing: positives train toward 1-ls, negatives toward
    /// ls. Caps the converged logit near ln((1-ls)/ls) so scores stay off
    /// the saturated ends without moving the 0.5 decision boundary.
    pub label_smoothing: f64,
    /// Fraction of crops held out for the accuracy gate.
    pub holdout_fraction: f64,
    /// Required holdout crop-classification accuracy.
    pub min_accuracy: f64,
    /// Objects with fewer interior points than this produce no crop.
    pub min_points: usize,
    pub seed: u64,
}

impl Default for ScorerTrainConfig {
    fn default() -> Self {
        ScorerTrainConfig {
            hidden: 32,
            epochs: 40,
            lr: 0.01,
            jitters_per_object: 2,
            negatives_per_scene: 4,
            hard_negatives_per_object: 2,
            hard_negative_inset: (0.06, 0.30),
            residual_weight: 0.25,
            weight_decay: 3e-4,
            label_smoothing: 0.1,
            holdout_fraction: 0.2,
            min_accuracy: 0.95,
            min_points: 5,
            seed: 0,
        }
    }
}

struct Crop {
    points: Vec<Vec3>,
    label: f64,
    residual_target: Option<[f64; 4]>,
}

pub struct ScorerTrainReport {
    pub params: ScorerParams,
    pub holdout_accuracy: f64,
    pub train_crops: usize,
    pub holdout_crops: usize,
}

fn crop_in_candidate_frame(
    scene: &SceneFrame,
    cand: &OrientedBox3,
    min_points: usize,
) -> Option<Vec<Vec3>> {
    let inside = scene.cloud.indices_in_box(cand, 0.0);
    if inside.len() < min_points {
        return None;
    }
    Some(
        inside
            .iter()
            .map(|&i| candidate_frame(scene.cloud.points[i], cand))
            .collect(),
    )
}

/// Positive, jittered-positive, and negative crops for one scene.
fn build_scene_crops(scene: &SceneFrame, cfg: &ScorerTrainConfig, rng: &mut ChaCha8Rng) -> Vec<Crop> {
    let mut crops = Vec::new();
    for obj in &scene.objects {
        let Some(points) = crop_in_candidate_frame(scene, &obj.bbox, cfg.min_points) else {
            continue;
        };
        crops.push(Crop {
            points: points.clone(),
            label: 1.0,
            residual_target: Some([0.0; 4]),
        });
        for _ in 0..cfg.jitters_per_object {
            // Sample the residual target, then build the candidate that the
            // residual maps back onto the ground truth.
            let rx = rng.gen_range(-0.4..0.4);
            let ry = rng.gen_range(-0.3..0.3);
            let rl = rng.gen_range(-0.4..0.4);
            let ryaw = rng.gen_range(-0.25..0.25);
            let yaw = wrap_angle(obj.bbox.yaw - ryaw);
            let length = (obj.bbox.length - rl).max(0.5);
            let cand = OrientedBox3::new(
                obj.bbox.center - Vec3::new(rx, ry, 0.0).rotated_z(yaw),
                obj.bbox.width,
                obj.bbox.height,
                length,
                yaw,
            );
            let target = [rx, ry, obj.bbox.length - length, ryaw];
            if let Some(points) = crop_in_candidate_frame(scene, &cand, cfg.min_points) {
                crops.push(Crop {
                    points,
                    label: 1.0,
                    residual_target: Some(target),
                });
            }
        }
        for _ in 0..cfg.hard_negatives_per_object {
            let (lo, hi) = cfg.hard_negative_inset;
            let hw = obj.bbox.width / 2.0;
            let inset_pos = rng.gen_range(lo..=hi) / hw;
            let inset_neg = rng.gen_range(lo..=hi) / hw;
            // A point counts as face material within this band of the
            // wall (meters, converted to the candidate frame).
            let band = 0.08 / hw;
            let pinched: Vec<Vec3> = points
                .iter()
                .map(|p| {
                    let mut q = *p;
                    if 1.0 - q.y <= band {
                        q.y -= inset_pos;
                    } else if 1.0 + q.y <= band {
                        q.y += inset_neg;
                    }
                    q
                })
                .collect();
            crops.push(Crop {
                points: pinched,
                label: 0.0,
                residual_target: None,
            });
        }
    }
    if scene.cloud.is_empty() {
        return crops;
    }
    let mut placed = 0;
    let mut attempts = 0;
    while placed < cfg.negatives_per_scene && attempts < 20 * cfg.negatives_per_scene {
        attempts += 1;
        let anchor = scene.cloud.points[rng.gen_range(0..scene.cloud.len())];
        let cand = OrientedBox3::new(
            anchor
                + Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-0.2..0.2),
                ),
            rng.gen_range(1.6..2.0),
            rng.gen_range(1.3..1.8),
            rng.gen_range(3.5..4.8),
            rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
        );
        if scene
            .objects
            .iter()
            .any(|o| crate::geometry::iou_3d(&cand, &o.bbox) >= 0.3)
        {
            continue;
        }
        let inside = scene.cloud.indices_in_box(&cand, 0.0);
        if inside.is_empty() {
            continue;
        }
        crops.push(Crop {
            points: inside
                .iter()
                .map(|&i| candidate_frame(scene.cloud.points[i], &cand))
                .collect(),
            label: 0.0,
            residual_target: None,
        });
        placed += 1;
    }
    crops
}

/// Trains the scorer: BCE on the score head over positive and negative
/// crops, L2 residual regression on (jittered) positives, Adam, one crop
/// per step. Fails if the corpus lacks positives or negatives, or if the
/// held-out crop accuracy ends below the configured gate.
pub fn train_scorer(corpus: &[SceneFrame], cfg: &ScorerTrainConfig) -> Result<ScorerTrainReport> {
    let mut crops = Vec::new();
    for (si, scene) in corpus.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(exec::derive_seed(cfg.seed, si as u64));
        crops.extend(build_scene_crops(scene, cfg, &mut rng));
    }
    let positives = crops.iter().filter(|c| c.label > 0.5).count();
    let negatives = crops.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Train(format!(
            "corpus produced {positives} positive and {negatives} negative crops; both must be nonzero"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(exec::derive_seed(cfg.seed, 0xC0FFEE));
    let mut order: Vec<usize> = (0..crops.len()).collect();
    order.shuffle(&mut rng);
    let holdout_n = ((crops.len() as f64) * cfg.holdout_fraction).ceil() as usize;
    let holdout_n = holdout_n.clamp(1, crops.len() - 1);
    let (holdout_idx, train_idx) = order.split_at(holdout_n);

    let mut params = ScorerParams::init(cfg.hidden, exec::derive_seed(cfg.seed, 0x5EED));
    let mut flat = params.to_flat();
    let mut adam = Adam::new(flat.len(), cfg.lr);
    let mut grads = vec![0.0; flat.len()];
    let mut epoch_order: Vec<usize> = train_idx.to_vec();

    for epoch in 0..cfg.epochs {
        epoch_order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for &ci in &epoch_order {
            let crop = &crops[ci];
            let fwd = score_forward(&crop.points, &params)?;
            let s = fwd.score;
            let y = crop.label * (1.0 - cfg.label_smoothing)
                + (1.0 - crop.label) * cfg.label_smoothing;
            let bce = -(y * s.ln() + (1.0 - y) * (1.0 - s).ln());
            let d_score = (s - y) / (s * (1.0 - s));
            let mut d_res = [0.0; 4];
            let mut res_loss = 0.0;
            if let Some(target) = &crop.residual_target {
                for r in 0..4 {
                    let e = fwd.residual[r] - target[r];
                    res_loss += cfg.residual_weight * e * e;
                    d_res[r] = 2.0 * cfg.residual_weight * e;
                }
            }
            loss_sum += bce + res_loss;
            grads.iter_mut().for_each(|g| *g = 0.0);
            backward_params(&params, &fwd, d_score, &d_res, &mut grads);
            if cfg.weight_decay > 0.0 {
                for (g, p) in grads.iter_mut().zip(&flat) {
                    *g += cfg.weight_decay * p;
                }
            }
            adam.step(&mut flat, &grads);
            params.set_from_flat(&flat);
        }
        log::debug!(
            "scorer epoch {epoch}: mean loss {:.6}",
            loss_sum / epoch_order.len().max(1) as f64
        );
    }

    let mut correct = 0usize;
    for &ci in holdout_idx {
        let crop = &crops[ci];
        let fwd = score_forward(&crop.points, &params)?;
        if (fwd.score >= 0.5) == (crop.label > 0.5) {
            correct += 1;
        }
    }
    let holdout_accuracy = correct as f64 / holdout_idx.len() as f64;
    if holdout_accuracy < cfg.min_accuracy {
        return Err(Error::Train(format!(
            "holdout crop accuracy {holdout_accuracy:.3} below required {:.3}",
            cfg.min_accuracy
        )));
    }
    Ok(ScorerTrainReport {
        params,
        holdout_accuracy,
        train_crops: train_idx.len(),
        holdout_crops: holdout_idx.len(),
    })
}

// Params file, version 1: magic "ADVSCORERPRM", LE u32 version, LE u32
// hidden width, then the flat parameter vector as LE f64.

const PARAMS_MAGIC: &[u8; 12] = b"ADVSCORERPRM";
const PARAMS_VERSION: u32 = 1;

pub fn serialize_params(params: &ScorerParams) -> Vec<u8> {
    let flat = params.to_flat();
    let mut out = Vec::with_capacity(20 + flat.len() * 8);
    out.extend_from_slice(PARAMS_MAGIC);
    out.extend_from_slice(&PARAMS_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.hidden as u32).to_le_bytes());
    for x in flat {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn deserialize_params(bytes: &[u8], path: &Path) -> Result<ScorerParams> {
    if bytes.len() < 20 {
        return Err(Error::malformed(path, "header truncated"));
    }
    if &bytes[..12] != PARAMS_MAGIC {
        return Err(Error::malformed(path, "bad magic, not a scorer params file"));
    }
    let version = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
    if version != PARAMS_VERSION {
        return Err(Error::malformed(
            path,
            format!("unsupported version {version}, expected {PARAMS_VERSION}"),
        ));
    }
    let hidden = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
    if hidden < 4 {
        return Err(Error::malformed(path, format!("hidden width {hidden} < 4")));
    }
    let mut params = ScorerParams::zeros(hidden);
    let expect = params.param_count() * 8;
    if bytes.len() - 20 != expect {
        return Err(Error::malformed(
            path,
            format!(
                "payload is {} bytes, expected {expect} for hidden width {hidden}",
                bytes.len() - 20
            ),
        ));
    }
    let flat: Vec<f64> = bytes[20..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    params.set_from_flat(&flat);
    Ok(params)
}

pub fn write_params(path: &Path, params: &ScorerParams) -> Result<()> {
    std::fs::write(path, serialize_params(params)).map_err(|e| Error::io(path, e))
}

pub fn read_params(path: &Path) -> Result<ScorerParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    deserialize_params(&bytes, path)
}
