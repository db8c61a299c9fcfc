//! Top-down stage: coarse masks from iterated normalised cuts on the patch
//! affinity graph, or from an external proposal set.

mod affinity;
mod eigen;

pub use affinity::{cosine_affinity, mask_affinity, AffinityMatrix};
pub use eigen::{generalized_residual, ncut_second_eigvec, ncut_second_eigvec_with, EigenOptions, Fiedler};

use crate::error::{Error, Result};
use crate::grid::FeatureGrid;
use crate::mask::BinaryMask;
use crate::postprocess::AnnotationSet;
use crate::scored::{provenance, MaskId, ScoredMask};

/// Patch-level split of an eigenvector: threshold at the mean and keep the
/// side holding the largest-magnitude entry.
pub fn bipartition_patches(x: &[f64]) -> Result<Vec<bool>> {
    if x.is_empty() {
        return Err(Error::DegenerateEigenvector);
    }
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let scale = lo.abs().max(hi.abs());
    if hi - lo <= 1e-12 * scale || scale == 0.0 {
        return Err(Error::DegenerateEigenvector);
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let seed = argmax_abs(x.iter().copied().enumerate()).expect("non-empty");
    let upper = x[seed] > mean;
    let fg: Vec<bool> = x.iter().map(|&v| (v > mean) == upper).collect();
    if fg.iter().all(|&b| b) {
        return Err(Error::DegenerateEigenvector);
    }
    Ok(fg)
}

/// [`bipartition_patches`] upsampled to pixels, each patch covering
/// `patch_size x patch_size` pixels.
pub fn bipartition(x: &[f64], gh: usize, gw: usize, patch_size: u32) -> Result<BinaryMask> {
    if x.len() != gh * gw {
        return Err(Error::param(
            "eigenvector",
            format!("length {} for a {gh}x{gw} grid", x.len()),
        ));
    }
    let fg = bipartition_patches(x)?;
    Ok(patches_to_mask(&fg, gh, gw, patch_size))
}

pub(crate) fn patches_to_mask(fg: &[bool], gh: usize, gw: usize, patch_size: u32) -> BinaryMask {
    let ps = patch_size;
    BinaryMask::from_fn(gh as u32 * ps, gw as u32 * ps, |x, y| {
        fg[(y / ps) as usize * gw + (x / ps) as usize]
    })
}

fn argmax_abs(values: impl Iterator<Item = (usize, f64)>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values {
        if best.map_or(true, |(_, b)| v.abs() > b) {
            best = Some((i, v.abs()));
        }
    }
    best.map(|(i, _)| i)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskCutOptions {
    pub t_max: usize,
    pub tau_ncut: f64,
    pub epsilon: f64,
    /// Cuts with fewer patches are discarded (their patches are still
    /// removed from the graph).
    pub min_patches: usize,
    pub eigen: EigenOptions,
}

impl Default for MaskCutOptions {
    fn default() -> Self {
        MaskCutOptions {
            t_max: 3,
            tau_ncut: 0.15,
            epsilon: 1e-5,
            min_patches: 2,
            eigen: EigenOptions::default(),
        }
    }
}

/// Per-iteration view handed to [`maskcut_traced`].
pub struct CutStep<'a> {
    pub iteration: usize,
    pub affinity: &'a AffinityMatrix,
    pub excluded_before: &'a [usize],
    pub fiedler: &'a Fiedler,
    /// Patches removed from the graph by this iteration.
    pub taken: &'a [usize],
    pub emitted: bool,
}

pub fn maskcut(grid: &FeatureGrid, opts: &MaskCutOptions) -> Result<Vec<ScoredMask>> {
    maskcut_traced(grid, opts, |_| {})
}

/// Iterated normalised cut. Each iteration cuts the current graph, applies
/// the corner prior, keeps the 4-connected component around the strongest
/// eigenvector entry, and masks those patches out of the affinity before the
/// next cut. Stops early once no admissible cut remains.
pub fn maskcut_traced(
    grid: &FeatureGrid,
    opts: &MaskCutOptions,
    mut observe: impl FnMut(&CutStep<'_>),
) -> Result<Vec<ScoredMask>> {
    if opts.t_max == 0 {
        return Err(Error::param("t_max", "must be at least 1"));
    }
    let (gh, gw) = (grid.gh(), grid.gw());
    let n = grid.len();
    if !(opts.epsilon > 0.0 && opts.epsilon < opts.tau_ncut && opts.tau_ncut < 1.0) {
        return Err(Error::param("tau_ncut", "need 0 < epsilon < tau_ncut < 1"));
    }
    let unit = grid.normalized()?;
    let mut w = affinity::binarize(&affinity::raw_cosines(&unit), n, opts.tau_ncut, opts.epsilon);

    let corners = [0, gw - 1, (gh - 1) * gw, n - 1];
    let mut excluded = vec![false; n];
    let mut excluded_list: Vec<usize> = Vec::new();
    let mut out = Vec::new();

    for iteration in 0..opts.t_max {
        if excluded.iter().filter(|&&e| !e).count() < 2 {
            break;
        }
        let fiedler = ncut_second_eigvec_with(&w, &opts.eigen)?;
        // A graph whose best normalised cut is no better than that of a
        // uniform complete graph has nothing to separate.
        if fiedler.value >= 1.0 - 1e-9 {
            break;
        }
        let x = &fiedler.vector;
        let side = match bipartition_patches(x) {
            Ok(s) => s,
            Err(Error::DegenerateEigenvector) => break,
            Err(e) => return Err(e),
        };
        let mut fg: Vec<bool> = side.iter().zip(&excluded).map(|(&s, &e)| s && !e).collect();
        if corners.iter().filter(|&&c| fg[c]).count() >= 3 {
            fg = side.iter().zip(&excluded).map(|(&s, &e)| !s && !e).collect();
            if corners.iter().filter(|&&c| fg[c]).count() >= 3 {
                break;
            }
        }
        let Some(seed) = argmax_abs((0..n).filter(|&i| fg[i]).map(|i| (i, x[i]))) else {
            break;
        };
        let component = connected_component(&fg, gh, gw, seed);

        let emitted = component.len() >= opts.min_patches.max(1);
        if emitted {
            let mut members = vec![false; n];
            component.iter().for_each(|&i| members[i] = true);
            let score = mean_pairwise_cosine(&unit, &component).clamp(0.0, 1.0);
            let mask = patches_to_mask(&members, gh, gw, grid.patch_size());
            out.push(
                ScoredMask::new(MaskId(out.len() as u64), mask, score)
                    .with_provenance(provenance::DIVIDE),
            );
        }
        observe(&CutStep {
            iteration,
            affinity: &w,
            excluded_before: &excluded_list,
            fiedler: &fiedler,
            taken: &component,
            emitted,
        });
        for &i in &component {
            excluded[i] = true;
        }
        excluded_list.extend_from_slice(&component);
        w.mask_in_place(&component, opts.epsilon)?;
    }
    Ok(out)
}

fn connected_component(fg: &[bool], gh: usize, gw: usize, seed: usize) -> Vec<usize> {
    let mut seen = vec![false; fg.len()];
    let mut stack = vec![seed];
    seen[seed] = true;
    let mut out = Vec::new();
    while let Some(i) = stack.pop() {
        out.push(i);
        let (r, c) = (i / gw, i % gw);
        let mut visit = |j: usize| {
            if fg[j] && !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        };
        if r > 0 {
            visit(i - gw);
        }
        if r + 1 < gh {
            visit(i + gw);
        }
        if c > 0 {
            visit(i - 1);
        }
        if c + 1 < gw {
            visit(i + 1);
        }
    }
    out.sort_unstable();
    out
}

/// Mean cosine over distinct member pairs, via `|sum u|^2 = m + 2 sum_{i<j} u_i.u_j`.
fn mean_pairwise_cosine(unit: &[Vec<f64>], members: &[usize]) -> f64 {
    let m = members.len();
    if m < 2 {
        return 1.0;
    }
    let dim = unit[members[0]].len();
    let mut sum = vec![0.0; dim];
    for &i in members {
        for (s, v) in sum.iter_mut().zip(&unit[i]) {
            *s += v;
        }
    }
    let sq: f64 = sum.iter().map(|v| v * v).sum();
    (sq - m as f64) / (m as f64 * (m as f64 - 1.0))
}

/// Source of divide-stage masks.
pub enum DivideInput<'a> {
    Features(&'a FeatureGrid, &'a MaskCutOptions),
    Proposals(&'a AnnotationSet),
}

/// Coarse masks scoring strictly above `tau`.
pub fn divide_stage(input: DivideInput<'_>, tau: f64) -> Result<Vec<ScoredMask>> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::param("tau", format!("{tau} not in [0, 1]")));
    }
    let masks = match input {
        DivideInput::Features(grid, opts) => maskcut(grid, opts)?,
        DivideInput::Proposals(set) => set
            .masks
            .iter()
            .map(|m| {
                let mut m = m.clone();
                m.level = 0;
                m.parent_id = None;
                m.provenance.get_or_insert_with(|| provenance::DIVIDE.to_owned());
                m
            })
            .collect(),
    };
    Ok(masks.into_iter().filter(|m| m.score > tau).collect())
}
