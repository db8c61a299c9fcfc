//! Per-image mask-set operations: duplicate suppression, refinement
//! filtering, pseudo-label assembly, and the two label-merging rules.

use std::collections::HashSet;

use crate::conquer::Hierarchy;
use crate::error::{Error, Result};
use crate::mask::{iou, BinaryMask};
use crate::scored::{provenance, ranked_indices, MaskId, ScoredMask};

#[derive(Clone, Debug, PartialEq)]
pub struct AnnotationSet {
    pub image_id: String,
    pub height: u32,
    pub width: u32,
    pub masks: Vec<ScoredMask>,
}

impl AnnotationSet {
    pub fn new(image_id: impl Into<String>, height: u32, width: u32) -> Self {
        AnnotationSet {
            image_id: image_id.into(),
            height,
            width,
            masks: Vec::new(),
        }
    }

    pub fn with_masks(mut self, masks: Vec<ScoredMask>) -> Self {
        self.masks = masks;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for m in &self.masks {
            if m.mask.height() != self.height || m.mask.width() != self.width {
                return Err(Error::DimensionMismatch {
                    left_h: m.mask.height(),
                    left_w: m.mask.width(),
                    right_h: self.height,
                    right_w: self.width,
                });
            }
            if !seen.insert(m.id) {
                return Err(Error::DuplicateMaskId(m.id.0));
            }
            m.validate()?;
        }
        Ok(())
    }

    fn same_image(&self, other: &AnnotationSet) -> Result<()> {
        if self.image_id != other.image_id {
            return Err(Error::ImageIdMismatch {
                left: self.image_id.clone(),
                right: other.image_id.clone(),
            });
        }
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::DimensionMismatch {
                left_h: self.height,
                left_w: self.width,
                right_h: other.height,
                right_w: other.width,
            });
        }
        Ok(())
    }

    fn next_id(&self) -> u64 {
        self.masks.iter().map(|m| m.id.0 + 1).max().unwrap_or(0)
    }
}

/// Greedy non-maximum suppression. Masks are visited by score (then larger
/// area, then smaller id); a mask survives if its IoU with every survivor so
/// far is below `iou_thresh`. Survivors come back in visiting order.
pub fn nms(masks: &[ScoredMask], iou_thresh: f64) -> Result<Vec<ScoredMask>> {
    if !(iou_thresh > 0.0 && iou_thresh <= 1.0) {
        return Err(Error::param("nms_iou", format!("{iou_thresh} not in (0, 1]")));
    }
    let mut kept: Vec<&ScoredMask> = Vec::new();
    for i in ranked_indices(masks) {
        let m = &masks[i];
        let mut suppressed = false;
        for k in &kept {
            if iou(&m.mask, &k.mask)? >= iou_thresh {
                suppressed = true;
                break;
            }
        }
        if !suppressed {
            kept.push(m);
        }
    }
    Ok(kept.into_iter().cloned().collect())
}

/// Mask-to-mask edge refinement (CRF, CascadePSP, ...). Must return a mask
/// of the input's size.
pub trait Refiner {
    fn refine(&self, mask: &BinaryMask) -> BinaryMask;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityRefiner;

impl Refiner for IdentityRefiner {
    fn refine(&self, mask: &BinaryMask) -> BinaryMask {
        mask.clone()
    }
}

impl<F: Fn(&BinaryMask) -> BinaryMask> Refiner for F {
    fn refine(&self, mask: &BinaryMask) -> BinaryMask {
        self(mask)
    }
}

/// Replaces each mask by its refinement and drops those whose IoU between
/// the two versions is below `delta_thresh`. Unchanged masks always pass.
pub fn refinement_filter(
    masks: &[ScoredMask],
    refiner: &dyn Refiner,
    delta_thresh: f64,
) -> Result<Vec<ScoredMask>> {
    if !(0.0..=1.0).contains(&delta_thresh) {
        return Err(Error::param("refine_delta", format!("{delta_thresh} not in [0, 1]")));
    }
    let mut out = Vec::with_capacity(masks.len());
    for m in masks {
        let refined = refiner.refine(&m.mask);
        m.mask.same_shape(&refined)?;
        if refined == m.mask || iou(&m.mask, &refined)? >= delta_thresh {
            out.push(ScoredMask {
                mask: refined,
                ..m.clone()
            });
        }
    }
    Ok(out)
}

/// Divide-stage masks plus every part mask of every hierarchy mapped back to
/// image coordinates, without duplicate suppression. Part masks get fresh ids
/// after the largest divide id, in hierarchy, level, and cluster order.
pub fn collect_pseudo_labels(
    image_id: &str,
    height: u32,
    width: u32,
    divide_masks: &[ScoredMask],
    hierarchies: &[Hierarchy],
    min_area: u64,
) -> Result<AnnotationSet> {
    let mut set = AnnotationSet::new(image_id, height, width).with_masks(divide_masks.to_vec());
    let mut next = set.next_id();
    for h in hierarchies {
        h.parent.mask.same_shape(&BinaryMask::empty(height, width))?;
        for part in h.part_masks() {
            let global = h.geometry.to_global(&part.mask, height, width)?;
            let global = global.intersect(&h.parent.mask)?;
            set.masks.push(
                ScoredMask::new(MaskId(next), global, part.score)
                    .with_parent(part.level, h.parent.id)
                    .with_provenance(provenance::CONQUER),
            );
            next += 1;
        }
    }
    set.masks.retain(|m| m.area() >= min_area);
    set.validate()?;
    Ok(set)
}

/// [`collect_pseudo_labels`] followed by [`nms`].
pub fn assemble_pseudo_labels(
    image_id: &str,
    height: u32,
    width: u32,
    divide_masks: &[ScoredMask],
    hierarchies: &[Hierarchy],
    nms_thresh: f64,
    min_area: u64,
) -> Result<AnnotationSet> {
    let mut set = collect_pseudo_labels(image_id, height, width, divide_masks, hierarchies, min_area)?;
    set.masks = nms(&set.masks, nms_thresh)?;
    Ok(set)
}

/// Appends `extra` to `base`, renumbering any extra mask whose id collides.
fn append_renumbered(base: &mut AnnotationSet, extra: Vec<ScoredMask>) {
    let mut taken: HashSet<MaskId> = base.masks.iter().map(|m| m.id).collect();
    let mut next = base
        .next_id()
        .max(extra.iter().map(|m| m.id.0 + 1).max().unwrap_or(0));
    for mut m in extra {
        if taken.contains(&m.id) {
            m.id = MaskId(next);
            next += 1;
        }
        taken.insert(m.id);
        base.masks.push(m);
    }
}

/// High-confidence predictions become labels; pseudo labels that duplicate
/// one of them (IoU above `dedup_iou`) are dropped. Output lists the kept
/// predictions first, then the surviving pseudo labels.
pub fn self_train_merge(
    pseudo: &AnnotationSet,
    predictions: &AnnotationSet,
    tau_self: f64,
    dedup_iou: f64,
) -> Result<AnnotationSet> {
    pseudo.same_image(predictions)?;
    if !(0.0..=1.0).contains(&tau_self) {
        return Err(Error::param("tau_self_train", format!("{tau_self} not in [0, 1]")));
    }
    if !(dedup_iou > 0.0 && dedup_iou <= 1.0) {
        return Err(Error::param("selftrain_dedup_iou", format!("{dedup_iou} not in (0, 1]")));
    }
    let kept: Vec<ScoredMask> = predictions
        .masks
        .iter()
        .filter(|p| p.score > tau_self)
        .map(|p| {
            let mut p = p.clone();
            p.provenance.get_or_insert_with(|| provenance::PREDICTION.to_owned());
            p
        })
        .collect();
    let mut survivors = Vec::new();
    'pseudo: for m in &pseudo.masks {
        for p in &kept {
            if iou(&m.mask, &p.mask)? > dedup_iou {
                continue 'pseudo;
            }
        }
        survivors.push(m.clone());
    }
    if kept.is_empty() {
        return Ok(AnnotationSet {
            masks: survivors,
            ..pseudo.clone()
        });
    }
    let mut out = AnnotationSet::new(pseudo.image_id.clone(), pseudo.height, pseudo.width);
    out.masks = kept;
    append_renumbered(&mut out, survivors);
    Ok(out)
}

/// Ground truth plus every unsupervised mask whose best IoU against the
/// ground truth is at most `tau_plus`. Ground-truth masks pass through
/// untouched; added masks keep their scores and are tagged `unsupervised`.
pub fn unsam_plus_fuse(gt: &AnnotationSet, unsup: &AnnotationSet, tau_plus: f64) -> Result<AnnotationSet> {
    gt.same_image(unsup)?;
    if !(0.0..=1.0).contains(&tau_plus) {
        return Err(Error::param("tau_plus", format!("{tau_plus} not in [0, 1]")));
    }
    let mut added = Vec::new();
    for m in &unsup.masks {
        let mut best = 0.0f64;
        for g in &gt.masks {
            best = best.max(iou(&m.mask, &g.mask)?);
            if best > tau_plus {
                break;
            }
        }
        if best <= tau_plus {
            let mut m = m.clone();
            m.provenance.get_or_insert_with(|| provenance::UNSUPERVISED.to_owned());
            added.push(m);
        }
    }
    let mut out = gt.clone();
    append_renumbered(&mut out, added);
    Ok(out)
}
