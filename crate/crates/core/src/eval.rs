//! Class-agnostic evaluation: average recall and precision over IoU
//! thresholds 0.50:0.05:0.95 with area buckets, and the point-prompt
//! MaxIoU / OracleIoU protocol.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mask::iou;
use crate::postprocess::AnnotationSet;
use crate::scored::{ranked_indices, ScoredMask};

/// The ten thresholds 0.50, 0.55, ..., 0.95.
pub fn iou_thresholds() -> Vec<f64> {
    (0..10).map(|i| f64::from(50 + 5 * i) / 100.0).collect()
}

/// Ground-truth area bucket. Boundaries are 32² and 96² pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AreaRange {
    All,
    Small,
    Medium,
    Large,
}

impl AreaRange {
    pub fn contains(self, area: u64) -> bool {
        match self {
            AreaRange::All => true,
            AreaRange::Small => area < 32 * 32,
            AreaRange::Medium => (32 * 32..=96 * 96).contains(&area),
            AreaRange::Large => area > 96 * 96,
        }
    }
}

/// One image's predictions (top `max_dets` in rank order) and the ground
/// truth inside the area bucket, with their IoU matrix.
struct ImagePair<'a> {
    preds: Vec<&'a ScoredMask>,
    ious: Vec<Vec<f64>>,
    n_gt: usize,
}

fn pair_images<'a>(
    preds: &'a [AnnotationSet],
    gts: &'a [AnnotationSet],
) -> Result<Vec<(&'a AnnotationSet, &'a AnnotationSet)>> {
    let mut p: BTreeMap<&str, &AnnotationSet> = BTreeMap::new();
    let mut g: BTreeMap<&str, &AnnotationSet> = BTreeMap::new();
    for s in preds {
        if p.insert(&s.image_id, s).is_some() {
            return Err(Error::param("preds", format!("image `{}` listed twice", s.image_id)));
        }
    }
    for s in gts {
        if g.insert(&s.image_id, s).is_some() {
            return Err(Error::param("gts", format!("image `{}` listed twice", s.image_id)));
        }
    }
    let pk: BTreeSet<&str> = p.keys().copied().collect();
    let gk: BTreeSet<&str> = g.keys().copied().collect();
    let unmatched: Vec<String> = pk.symmetric_difference(&gk).map(|s| s.to_string()).collect();
    if !unmatched.is_empty() {
        return Err(Error::UnmatchedImages(unmatched));
    }
    let mut out = Vec::with_capacity(g.len());
    for (id, gt) in g {
        let pr = p[id];
        if (pr.height, pr.width) != (gt.height, gt.width) {
            return Err(Error::DimensionMismatch {
                left_h: pr.height,
                left_w: pr.width,
                right_h: gt.height,
                right_w: gt.width,
            });
        }
        out.push((pr, gt));
    }
    Ok(out)
}

fn prepare<'a>(
    pred: &'a AnnotationSet,
    gt: &'a AnnotationSet,
    max_dets: usize,
    range: AreaRange,
) -> Result<ImagePair<'a>> {
    let preds: Vec<&ScoredMask> = ranked_indices(&pred.masks)
        .into_iter()
        .take(max_dets)
        .map(|i| &pred.masks[i])
        .collect();
    let gt_in: Vec<&ScoredMask> = gt.masks.iter().filter(|m| range.contains(m.area())).collect();
    let ious = preds
        .iter()
        .map(|p| gt_in.iter().map(|g| iou(&p.mask, &g.mask)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok(ImagePair {
        preds,
        ious,
        n_gt: gt_in.len(),
    })
}

/// Greedy matching at one threshold: predictions in order, each taking the
/// unmatched ground truth of highest IoU (lowest index on ties) among those
/// at or above `threshold`. Returns, per prediction, the matched GT index.
pub fn greedy_match(ious: &[Vec<f64>], n_gt: usize, threshold: f64) -> Vec<Option<usize>> {
    let mut taken = vec![false; n_gt];
    ious.iter()
        .map(|row| {
            let mut best: Option<(usize, f64)> = None;
            for (g, &v) in row.iter().enumerate() {
                if !taken[g] && v >= threshold && best.map_or(true, |(_, b)| v > b) {
                    best = Some((g, v));
                }
            }
            best.map(|(g, _)| {
                taken[g] = true;
                g
            })
        })
        .collect()
}

fn check_max_dets(max_dets: usize) -> Result<()> {
    if max_dets == 0 {
        return Err(Error::param("max_dets", "must be at least 1"));
    }
    Ok(())
}

/// Recall at each threshold of [`iou_thresholds`], pooled over images.
/// `None` when no ground truth falls in the bucket.
pub fn recall_curve(
    preds: &[AnnotationSet],
    gts: &[AnnotationSet],
    max_dets: usize,
    range: AreaRange,
) -> Result<Option<Vec<f64>>> {
    check_max_dets(max_dets)?;
    let pairs = pair_images(preds, gts)?;
    let images = pairs
        .into_iter()
        .map(|(p, g)| prepare(p, g, max_dets, range))
        .collect::<Result<Vec<_>>>()?;
    let total: usize = images.iter().map(|im| im.n_gt).sum();
    if total == 0 {
        return Ok(None);
    }
    let curve = iou_thresholds()
        .into_iter()
        .map(|t| {
            let matched: usize = images
                .iter()
                .map(|im| greedy_match(&im.ious, im.n_gt, t).iter().flatten().count())
                .sum();
            matched as f64 / total as f64
        })
        .collect();
    Ok(Some(curve))
}

/// Mean of [`recall_curve`] over the ten thresholds.
pub fn average_recall(
    preds: &[AnnotationSet],
    gts: &[AnnotationSet],
    max_dets: usize,
    range: AreaRange,
) -> Result<Option<f64>> {
    Ok(recall_curve(preds, gts, max_dets, range)?.map(|c| c.iter().sum::<f64>() / c.len() as f64))
}

/// 101-point interpolated precision averaged over `thresholds`. Detections
/// from all images are ranked jointly by score. `None` without ground truth.
pub fn average_precision(
    preds: &[AnnotationSet],
    gts: &[AnnotationSet],
    thresholds: &[f64],
    max_dets: usize,
) -> Result<Option<f64>> {
    check_max_dets(max_dets)?;
    if thresholds.is_empty() || thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::param("iou_thresholds", "need at least one value in [0, 1]"));
    }
    let pairs = pair_images(preds, gts)?;
    let images = pairs
        .into_iter()
        .map(|(p, g)| prepare(p, g, max_dets, AreaRange::All))
        .collect::<Result<Vec<_>>>()?;
    let total: usize = images.iter().map(|im| im.n_gt).sum();
    if total == 0 {
        return Ok(None);
    }
    // Joint order: score descending; ties keep image order then rank order.
    let mut order: Vec<(usize, usize)> = images
        .iter()
        .enumerate()
        .flat_map(|(i, im)| (0..im.preds.len()).map(move |k| (i, k)))
        .collect();
    order.sort_by(|&(ia, ka), &(ib, kb)| {
        images[ib].preds[kb]
            .score
            .total_cmp(&images[ia].preds[ka].score)
    });

    let mut sum = 0.0;
    for &t in thresholds {
        let matches: Vec<Vec<Option<usize>>> =
            images.iter().map(|im| greedy_match(&im.ious, im.n_gt, t)).collect();
        let mut tp = 0usize;
        let mut recall = Vec::with_capacity(order.len());
        let mut precision = Vec::with_capacity(order.len());
        for (n, &(i, k)) in order.iter().enumerate() {
            if matches[i][k].is_some() {
                tp += 1;
            }
            recall.push(tp as f64 / total as f64);
            precision.push(tp as f64 / (n + 1) as f64);
        }
        for n in (1..precision.len()).rev() {
            precision[n - 1] = precision[n - 1].max(precision[n]);
        }
        let mut ap = 0.0;
        for r in 0..=100 {
            let r = f64::from(r) / 100.0;
            let at = recall.partition_point(|&v| v < r);
            ap += precision.get(at).copied().unwrap_or(0.0);
        }
        sum += ap / 101.0;
    }
    Ok(Some(sum / thresholds.len() as f64))
}

/// Point-prompt scores for one image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PointPromptScore {
    pub max_iou: f64,
    pub oracle_iou: f64,
    /// Ground-truth masks averaged over.
    pub gt_count: usize,
}

/// For each ground-truth mask, prompts at its center point and ranks the
/// predicted masks containing that pixel; keeps the top `k`. MaxIoU scores
/// the first candidate and OracleIoU the best one. Means over the image's
/// ground truth; an image without ground truth scores 0 with count 0.
pub fn point_prompt_eval(hier: &AnnotationSet, gts: &AnnotationSet, k: usize) -> Result<PointPromptScore> {
    if k == 0 {
        return Err(Error::param("k_point", "must be at least 1"));
    }
    if hier.image_id != gts.image_id {
        return Err(Error::ImageIdMismatch {
            left: hier.image_id.clone(),
            right: gts.image_id.clone(),
        });
    }
    let ranked = ranked_indices(&hier.masks);
    let (mut max_sum, mut oracle_sum) = (0.0, 0.0);
    for g in &gts.masks {
        let (x, y) = g.mask.center_point()?;
        let mut first = None;
        let mut best = 0.0f64;
        let mut seen = 0;
        for &i in &ranked {
            let m = &hier.masks[i].mask;
            m.same_shape(&g.mask)?;
            if !m.get(x, y) {
                continue;
            }
            let v = iou(m, &g.mask)?;
            first.get_or_insert(v);
            best = best.max(v);
            seen += 1;
            if seen == k {
                break;
            }
        }
        max_sum += first.unwrap_or(0.0);
        oracle_sum += best;
    }
    let n = gts.masks.len();
    let mean = |s: f64| if n == 0 { 0.0 } else { s / n as f64 };
    Ok(PointPromptScore {
        max_iou: mean(max_sum),
        oracle_iou: mean(oracle_sum),
        gt_count: n,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecallPoint {
    pub iou: f64,
    pub recall: Option<f64>,
}

/// Metrics are `None` when nothing was available to measure (no ground
/// truth in the bucket, or no ground truth at all for point prompts).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub max_dets: usize,
    pub ar_1000: Option<f64>,
    pub ar_s: Option<f64>,
    pub ar_m: Option<f64>,
    pub ar_l: Option<f64>,
    pub ap: Option<f64>,
    pub recall_curve: Vec<RecallPoint>,
    pub k_point: usize,
    pub max_iou: Option<f64>,
    pub oracle_iou: Option<f64>,
    pub images: usize,
    pub gt_masks: usize,
    pub pred_masks: usize,
}

/// Full report. Point-prompt means are pooled over all ground-truth masks.
pub fn evaluate(preds: &[AnnotationSet], gts: &[AnnotationSet], max_dets: usize, k_point: usize) -> Result<EvalReport> {
    let curve = recall_curve(preds, gts, max_dets, AreaRange::All)?;
    let mean = |c: &Vec<f64>| c.iter().sum::<f64>() / c.len() as f64;
    let ar_s = average_recall(preds, gts, max_dets, AreaRange::Small)?;
    let ar_m = average_recall(preds, gts, max_dets, AreaRange::Medium)?;
    let ar_l = average_recall(preds, gts, max_dets, AreaRange::Large)?;
    let ap = average_precision(preds, gts, &iou_thresholds(), max_dets)?;

    let pairs = pair_images(preds, gts)?;
    let (mut mx, mut or, mut n) = (0.0, 0.0, 0usize);
    for (p, g) in &pairs {
        let s = point_prompt_eval(p, g, k_point)?;
        mx += s.max_iou * s.gt_count as f64;
        or += s.oracle_iou * s.gt_count as f64;
        n += s.gt_count;
    }
    let pooled = |s: f64| (n > 0).then(|| s / n as f64);

    let recall_curve = iou_thresholds()
        .into_iter()
        .enumerate()
        .map(|(i, t)| RecallPoint {
            iou: t,
            recall: curve.as_ref().map(|c| c[i]),
        })
        .collect();
    Ok(EvalReport {
        max_dets,
        ar_1000: curve.as_ref().map(mean),
        ar_s,
        ar_m,
        ar_l,
        ap,
        recall_curve,
        k_point,
        max_iou: pooled(mx),
        oracle_iou: pooled(or),
        images: pairs.len(),
        gt_masks: n,
        pred_masks: preds.iter().map(|p| p.masks.len()).sum(),
    })
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let f = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{:.4}", 100.0 * v));
        let mut s = String::new();
        let _ = writeln!(s, "images {}  gt masks {}  pred masks {}", self.images, self.gt_masks, self.pred_masks);
        let _ = writeln!(s, "{:<14}{:>10}", "metric", "value");
        let rows = [
            (format!("AR@{}", self.max_dets), self.ar_1000),
            ("AR_S".into(), self.ar_s),
            ("AR_M".into(), self.ar_m),
            ("AR_L".into(), self.ar_l),
            ("AP".into(), self.ap),
            (format!("MaxIoU@{}", self.k_point), self.max_iou),
            (format!("OracleIoU@{}", self.k_point), self.oracle_iou),
        ];
        for (name, v) in rows {
            let _ = writeln!(s, "{name:<14}{:>10}", f(v));
        }
        for p in &self.recall_curve {
            let _ = writeln!(s, "{:<14}{:>10}", format!("R@{:.2}", p.iou), f(p.recall));
        }
        s
    }
}
