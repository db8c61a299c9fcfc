//! Hierarchical pseudo-mask generation from precomputed patch feature grids:
//! a top-down normalised-cut stage, a bottom-up merging stage, mask-set
//! post-processing, and class-agnostic evaluation.

pub mod config;
pub mod conquer;
pub mod divide;
pub mod eval;
pub mod error;
pub mod grid;
pub mod io;
pub mod mask;
pub mod pipeline;
pub mod postprocess;
pub mod scored;

pub use conquer::{conquer, CropGeometry, Hierarchy, PartMask};
pub use divide::{divide_stage, maskcut, DivideInput, MaskCutOptions};
pub use error::{Error, Result};
pub use grid::FeatureGrid;
pub use mask::{iou, BBox, BinaryMask};
pub use postprocess::{
    assemble_pseudo_labels, nms, refinement_filter, self_train_merge, unsam_plus_fuse, AnnotationSet,
    IdentityRefiner, Refiner,
};
pub use scored::{rank_order, MaskId, ScoredMask};
