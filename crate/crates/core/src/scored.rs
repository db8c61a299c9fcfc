use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MaskId(pub u64);

impl fmt::Display for MaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Provenance tags written by the pipeline.
pub mod provenance {
    pub const DIVIDE: &str = "divide";
    pub const CONQUER: &str = "conquer";
    pub const PREDICTION: &str = "prediction";
    pub const UNSUPERVISED: &str = "unsupervised";
}

/// A mask with a confidence score and its place in a hierarchy.
///
/// Level 0 masks come from the divide stage and have no parent; part masks
/// at level `t >= 1` point back at the divide-stage mask they refine.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredMask {
    pub id: MaskId,
    pub mask: BinaryMask,
    pub score: f64,
    pub level: u32,
    pub parent_id: Option<MaskId>,
    pub provenance: Option<String>,
}

impl ScoredMask {
    pub fn new(id: MaskId, mask: BinaryMask, score: f64) -> Self {
        ScoredMask {
            id,
            mask,
            score,
            level: 0,
            parent_id: None,
            provenance: None,
        }
    }

    pub fn with_parent(mut self, level: u32, parent: MaskId) -> Self {
        self.level = level;
        self.parent_id = Some(parent);
        self
    }

    pub fn with_provenance(mut self, tag: &str) -> Self {
        self.provenance = Some(tag.to_owned());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::param("score", format!("{} not in [0, 1]", self.score)));
        }
        match (self.level, self.parent_id) {
            (0, Some(_)) => Err(Error::param("parent_id", "level 0 masks have no parent")),
            (l, None) if l > 0 => Err(Error::param("parent_id", "part masks need a parent")),
            _ => Ok(()),
        }
    }

    pub fn area(&self) -> u64 {
        self.mask.area()
    }
}

/// Ranking used wherever masks compete: score descending, then larger area,
/// then smaller id.
pub fn rank_order(a: &ScoredMask, b: &ScoredMask) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| b.area().cmp(&a.area()))
        .then_with(|| a.id.cmp(&b.id))
}

/// Sorts indices of `masks` by [`rank_order`], caching areas.
pub(crate) fn ranked_indices(masks: &[ScoredMask]) -> Vec<usize> {
    let areas: Vec<u64> = masks.iter().map(ScoredMask::area).collect();
    let mut idx: Vec<usize> = (0..masks.len()).collect();
    idx.sort_by(|&i, &j| {
        masks[j]
            .score
            .total_cmp(&masks[i].score)
            .then_with(|| areas[j].cmp(&areas[i]))
            .then_with(|| masks[i].id.cmp(&masks[j].id))
    });
    idx
}
