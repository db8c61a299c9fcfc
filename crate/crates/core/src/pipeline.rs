//! End-to-end per-image run: divide, conquer every coarse mask, assemble.

use rayon::prelude::*;

use crate::config::PipelineConfig;
use crate::conquer::{conquer, Hierarchy};
use crate::divide::{divide_stage, DivideInput};
use crate::error::{Error, Result};
use crate::grid::FeatureGrid;
use crate::postprocess::{collect_pseudo_labels, nms, refinement_filter, AnnotationSet, IdentityRefiner, Refiner};
use crate::scored::{MaskId, ScoredMask};

/// Inputs for one image. `crop` supplies the local grid for a coarse mask
/// when one was extracted; otherwise the global grid is resampled.
pub struct ImageJob<'a> {
    pub image_id: String,
    pub grid: FeatureGrid,
    pub proposals: Option<AnnotationSet>,
    pub crop: Box<dyn Fn(MaskId) -> Result<Option<FeatureGrid>> + Send + Sync + 'a>,
}

impl<'a> ImageJob<'a> {
    pub fn new(image_id: impl Into<String>, grid: FeatureGrid) -> Self {
        ImageJob {
            image_id: image_id.into(),
            grid,
            proposals: None,
            crop: Box::new(|_| Ok(None)),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ImageOutput {
    pub set: AnnotationSet,
    pub divide: Vec<ScoredMask>,
    pub hierarchies: Vec<Hierarchy>,
    /// Coarse masks covering too few local patches to conquer.
    pub skipped: Vec<MaskId>,
}

/// Coarse masks of one image above `cfg.tau`.
pub fn divide_image(job: &ImageJob<'_>, cfg: &PipelineConfig) -> Result<Vec<ScoredMask>> {
    let (h, w) = (job.grid.pixel_height(), job.grid.pixel_width());
    match &job.proposals {
        Some(set) => {
            if set.image_id != job.image_id {
                return Err(Error::ImageIdMismatch {
                    left: set.image_id.clone(),
                    right: job.image_id.clone(),
                });
            }
            if (set.height, set.width) != (h, w) {
                return Err(Error::DimensionMismatch {
                    left_h: set.height,
                    left_w: set.width,
                    right_h: h,
                    right_w: w,
                });
            }
            set.validate()?;
            divide_stage(DivideInput::Proposals(set), cfg.tau)
        }
        None => divide_stage(DivideInput::Features(&job.grid, &cfg.maskcut_options()), cfg.tau),
    }
}

/// Hierarchies for each coarse mask, in input order.
pub fn conquer_image(
    job: &ImageJob<'_>,
    coarse: &[ScoredMask],
    cfg: &PipelineConfig,
) -> Result<(Vec<Hierarchy>, Vec<MaskId>)> {
    let mut hierarchies = Vec::new();
    let mut skipped = Vec::new();
    for parent in coarse {
        let local = match (job.crop)(parent.id)? {
            Some(g) => g,
            None => job.grid.crop(&parent.mask.bbox()?, cfg.crop_side, cfg.crop_patch_size)?,
        };
        match conquer(parent, &local, &cfg.thetas) {
            Ok(h) => hierarchies.push(h),
            Err(Error::MaskTooSmall { .. }) => skipped.push(parent.id),
            Err(e) => return Err(e),
        }
    }
    Ok((hierarchies, skipped))
}

pub fn run_image(job: &ImageJob<'_>, cfg: &PipelineConfig, refiner: &dyn Refiner) -> Result<ImageOutput> {
    cfg.validate()?;
    let divide = divide_image(job, cfg)?;
    let (hierarchies, skipped) = conquer_image(job, &divide, cfg)?;
    let (h, w) = (job.grid.pixel_height(), job.grid.pixel_width());
    let mut set = collect_pseudo_labels(&job.image_id, h, w, &divide, &hierarchies, cfg.min_area)?;
    set.masks = if cfg.refine_before_nms {
        nms(&refinement_filter(&set.masks, refiner, cfg.refine_delta)?, cfg.nms_iou)?
    } else {
        refinement_filter(&nms(&set.masks, cfg.nms_iou)?, refiner, cfg.refine_delta)?
    };
    Ok(ImageOutput {
        set,
        divide,
        hierarchies,
        skipped,
    })
}

/// Runs every job on a pool of `cfg.workers` threads. Results keep job order.
pub fn run_images(jobs: &[ImageJob<'_>], cfg: &PipelineConfig) -> Result<Vec<ImageOutput>> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::param("workers", e.to_string()))?;
    pool.install(|| {
        jobs.par_iter()
            .map(|job| run_image(job, cfg, &IdentityRefiner))
            .collect()
    })
}
