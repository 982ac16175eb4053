//! Evaluation: one-sided Chamfer distance, greedy detection matching,
//! attack success rate, and report files.

use crate::error::{Error, Result};
use crate::exec;
use crate::geometry::{iou_3d, OrientedBox3, Vec3};
use crate::detector::Proposal;
use std::fmt::Write as _;
use std::path::Path;

/// One-sided Chamfer distance: mean over x in X of the distance to the
/// nearest y in Y. Deliberately NOT symmetrized.
pub fn chamfer_distance(x: &[Vec3], y: &[Vec3]) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::Geometry(
            "chamfer_distance needs non-empty point sets".into(),
        ));
    }
    let mins = exec::map_collect(x, |p| {
        y.iter()
            .map(|q| (*p - *q).norm_sq())
            .fold(f64::INFINITY, f64::min)
            .sqrt()
    });
    Ok(mins.iter().sum::<f64>() / x.len() as f64)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MatchResult {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// (proposal index, gt index) pairs for the true positives.
    pub matches: Vec<(usize, usize)>,
}

/// Greedy matching by descending score (ties by lower proposal index).
/// A proposal below the score threshold is not a detection at all; a
/// scoring proposal is a true positive iff it overlaps an unmatched gt
/// with IoU above the threshold, otherwise a false positive. Each gt
/// matches at most once; unmatched gt are false negatives, so
/// tp + fn_ always equals gt.len().
pub fn match_detections(
    proposals: &[Proposal],
    gt: &[OrientedBox3],
    iou_threshold: f64,
    score_threshold: f64,
) -> MatchResult {
    debug_assert!((0.0..1.0).contains(&iou_threshold) && iou_threshold > 0.0);
    debug_assert!((0.0..1.0).contains(&score_threshold) && score_threshold > 0.0);
    let mut order: Vec<usize> = (0..proposals.len())
        .filter(|&i| proposals[i].score >= score_threshold)
        .collect();
    order.sort_by(|&a, &b| {
        proposals[b]
            .score
            .partial_cmp(&proposals[a].score)
            .unwrap()
            .then(a.cmp(&b))
    });

    let mut gt_taken = vec![false; gt.len()];
    let mut result = MatchResult::default();
    for pi in order {
        let mut best: Option<(f64, usize)> = None;
        for (gi, g) in gt.iter().enumerate() {
            if gt_taken[gi] {
                continue;
            }
            let iou = iou_3d(&proposals[pi].bbox, g);
            if iou > iou_threshold && best.map_or(true, |(b, _)| iou > b) {
                best = Some((iou, gi));
            }
        }
        match best {
            Some((_, gi)) => {
                gt_taken[gi] = true;
                result.tp += 1;
                result.matches.push((pi, gi));
            }
            None => result.fp += 1,
        }
    }
    result.fn_ = gt.len() - result.tp;
    result
}

/// Attack success rate in percent: among objects detected on the clean
/// input, the share no longer detected after the attack. Objects missed
/// on clean input are excluded; if nothing was detected cleanly the rate
/// is undefined and `None` is returned.
pub fn asr(clean_detected: &[bool], attacked_detected: &[bool]) -> Option<f64> {
    assert_eq!(
        clean_detected.len(),
        attacked_detected.len(),
        "asr inputs must cover the same object set"
    );
    let denom = clean_detected.iter().filter(|&&d| d).count();
    if denom == 0 {
        return None;
    }
    let flipped = clean_detected
        .iter()
        .zip(attacked_detected)
        .filter(|&(&c, &a)| c && !a)
        .count();
    Some(100.0 * flipped as f64 / denom as f64)
}

/// Per-object detection flags for one scene when the candidates are the
/// ground-truth boxes themselves: object i is detected iff the greedy
/// matcher pairs it with a scoring proposal.
pub fn detection_flags(
    scene: &crate::geometry::SceneFrame,
    params: &crate::detector::ScorerParams,
    iou_threshold: f64,
    score_threshold: f64,
) -> Vec<bool> {
    let candidates: Vec<OrientedBox3> = scene.objects.iter().map(|o| o.bbox).collect();
    let proposals = crate::detector::detect(scene, params, &candidates);
    let m = match_detections(&proposals, &candidates, iou_threshold, score_threshold);
    let mut flags = vec![false; candidates.len()];
    for &(_, gi) in &m.matches {
        flags[gi] = true;
    }
    flags
}

#[derive(Clone, Debug, PartialEq)]
pub struct CategoryCounts {
    pub category: String,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub categories: Vec<CategoryCounts>,
    pub asr_percent: Option<f64>,
    pub mean_chamfer: Option<f64>,
    pub iou_threshold: f64,
    pub score_threshold: f64,
}

impl EvalReport {
    pub fn new(iou_threshold: f64, score_threshold: f64) -> EvalReport {
        EvalReport {
            categories: Vec::new(),
            asr_percent: None,
            mean_chamfer: None,
            iou_threshold,
            score_threshold,
        }
    }
}

fn opt_num(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => "n/a".to_string(),
    }
}

pub fn format_report(report: &EvalReport) -> String {
    let mut out = String::new();
    writeln!(out, "# detection evaluation").unwrap();
    writeln!(out, "iou_threshold {}", report.iou_threshold).unwrap();
    writeln!(out, "score_threshold {}", report.score_threshold).unwrap();
    for c in &report.categories {
        writeln!(
            out,
            "category {} tp {} fp {} fn {}",
            c.category, c.tp, c.fp, c.fn_
        )
        .unwrap();
    }
    writeln!(out, "asr_percent {}", opt_num(report.asr_percent)).unwrap();
    writeln!(out, "mean_chamfer_m {}", opt_num(report.mean_chamfer)).unwrap();
    out
}

pub fn write_report(report: &EvalReport, path: &Path) -> Result<()> {
    std::fs::write(path, format_report(report)).map_err(|e| Error::io(path, e))
}

pub fn parse_report(text: &str, path: &Path) -> Result<EvalReport> {
    let mut report = EvalReport::new(f64::NAN, f64::NAN);
    for (li, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: String| Error::Parse {
            path: path.to_path_buf(),
            line: li + 1,
            reason,
        };
        let cols: Vec<&str> = line.split_whitespace().collect();
        let num = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| err(format!("not a number: {s:?}")))
        };
        let opt = |s: &str| -> Result<Option<f64>> {
            if s == "n/a" {
                Ok(None)
            } else {
                num(s).map(Some)
            }
        };
        let count = |s: &str| -> Result<usize> {
            s.parse().map_err(|_| err(format!("not a count: {s:?}")))
        };
        match (cols[0], cols.len()) {
            ("iou_threshold", 2) => report.iou_threshold = num(cols[1])?,
            ("score_threshold", 2) => report.score_threshold = num(cols[1])?,
            ("asr_percent", 2) => report.asr_percent = opt(cols[1])?,
            ("mean_chamfer_m", 2) => report.mean_chamfer = opt(cols[1])?,
            ("category", 8) => {
                if cols[2] != "tp" || cols[4] != "fp" || cols[6] != "fn" {
                    return Err(err("malformed category row".into()));
                }
                report.categories.push(CategoryCounts {
                    category: cols[1].to_string(),
                    tp: count(cols[3])?,
                    fp: count(cols[5])?,
                    fn_: count(cols[7])?,
                });
            }
            (k, n) => return Err(err(format!("unknown row {k:?} with {n} columns"))),
        }
    }
    if report.iou_threshold.is_nan() || report.score_threshold.is_nan() {
        return Err(Error::malformed(path, "missing threshold rows"));
    }
    Ok(report)
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_report(&text, path)
}
