//! Bottom-up stage: agglomerative merging of the patches inside one coarse
//! mask under a descending cosine-similarity ladder.
//!
//! Each merge joins the adjacent cluster pair with the highest cosine
//! similarity between cluster features; the merged feature is the
//! size-weighted mean of the two, which keeps every cluster feature equal to
//! the plain mean of its member patches. A pass at threshold `theta` stops
//! once the best pair falls below `theta`, and the next (smaller) threshold
//! resumes from that state. Ties go to the pair with the smallest
//! `(min_id, max_id)`; a merged cluster keeps the smaller id, so a cluster's
//! id is always its smallest patch index.

mod crop;

pub use crop::CropGeometry;

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};

use crate::error::{Error, Result};
use crate::grid::FeatureGrid;
use crate::mask::BinaryMask;
use crate::scored::ScoredMask;

#[derive(Clone, Debug, PartialEq)]
pub struct Cluster {
    /// Smallest member patch index.
    pub id: usize,
    /// Sorted local patch indices.
    pub patches: Vec<usize>,
    pub feature: Vec<f64>,
}

impl Cluster {
    pub fn size(&self) -> usize {
        self.patches.len()
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[derive(Clone, Copy, Debug)]
struct Candidate {
    sim: f64,
    a: usize,
    b: usize,
    stamp_a: u32,
    stamp_b: u32,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    // Max-heap order: higher similarity first, then smaller ids.
    fn cmp(&self, other: &Self) -> Ordering {
        self.sim
            .total_cmp(&other.sim)
            .then_with(|| other.a.cmp(&self.a))
            .then_with(|| other.b.cmp(&self.b))
            .then_with(|| self.stamp_a.cmp(&other.stamp_a))
            .then_with(|| self.stamp_b.cmp(&other.stamp_b))
    }
}

/// Mutable clustering over the in-mask patches of a local grid. Slots are
/// indexed by patch; a slot is live while it is the id of some cluster.
#[derive(Clone, Debug)]
pub struct ClusterState {
    gh: usize,
    gw: usize,
    live: Vec<bool>,
    members: Vec<Vec<usize>>,
    features: Vec<Vec<f64>>,
    stamps: Vec<u32>,
    neighbors: Vec<BTreeSet<usize>>,
    heap: BinaryHeap<Candidate>,
}

impl ClusterState {
    pub fn grid_shape(&self) -> (usize, usize) {
        (self.gh, self.gw)
    }

    pub fn len(&self) -> usize {
        self.live.iter().filter(|&&l| l).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Live clusters ordered by id.
    pub fn clusters(&self) -> Vec<Cluster> {
        (0..self.live.len())
            .filter(|&i| self.live[i])
            .map(|i| {
                let mut patches = self.members[i].clone();
                patches.sort_unstable();
                Cluster {
                    id: i,
                    patches,
                    feature: self.features[i].clone(),
                }
            })
            .collect()
    }

    /// Adjacent cluster pairs `(a, b)` with `a < b`.
    pub fn adjacency(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (a, ns) in self.neighbors.iter().enumerate() {
            if self.live[a] {
                out.extend(ns.iter().filter(|&&b| b > a).map(|&b| (a, b)));
            }
        }
        out
    }

    fn push_pair(&mut self, x: usize, y: usize) {
        let (a, b) = if x < y { (x, y) } else { (y, x) };
        self.heap.push(Candidate {
            sim: cosine(&self.features[a], &self.features[b]),
            a,
            b,
            stamp_a: self.stamps[a],
            stamp_b: self.stamps[b],
        });
    }

    fn is_current(&self, c: &Candidate) -> bool {
        self.live[c.a] && self.live[c.b] && self.stamps[c.a] == c.stamp_a && self.stamps[c.b] == c.stamp_b
    }

    /// Best live pair, discarding stale heap entries.
    fn peek_best(&mut self) -> Option<Candidate> {
        while let Some(top) = self.heap.peek() {
            if self.is_current(top) {
                return Some(*top);
            }
            self.heap.pop();
        }
        None
    }

    fn merge(&mut self, a: usize, b: usize) {
        let (size_a, size_b) = (self.members[a].len() as f64, self.members[b].len() as f64);
        let fb = std::mem::take(&mut self.features[b]);
        for (x, y) in self.features[a].iter_mut().zip(&fb) {
            *x = (size_a * *x + size_b * y) / (size_a + size_b);
        }
        let mb = std::mem::take(&mut self.members[b]);
        self.members[a].extend(mb);
        self.live[b] = false;
        self.stamps[a] += 1;

        let nb = std::mem::take(&mut self.neighbors[b]);
        for &z in &nb {
            self.neighbors[z].remove(&b);
            if z != a {
                self.neighbors[z].insert(a);
                self.neighbors[a].insert(z);
            }
        }
        self.neighbors[a].remove(&b);
        self.neighbors[a].remove(&a);
        let ns: Vec<usize> = self.neighbors[a].iter().copied().collect();
        for z in ns {
            self.push_pair(a, z);
        }
    }
}

/// Raster of the parent on the local crop and the patches whose centre
/// pixel falls on it.
fn in_mask_patches(local_parent: &BinaryMask, grid: &FeatureGrid) -> Vec<bool> {
    let ps = grid.patch_size();
    let bits = local_parent.to_bitmap();
    let w = local_parent.width() as usize;
    (0..grid.len())
        .map(|i| {
            let (r, c) = ((i / grid.gw()) as u32, (i % grid.gw()) as u32);
            let (x, y) = (c * ps + ps / 2, r * ps + ps / 2);
            bits[y as usize * w + x as usize]
        })
        .collect()
}

fn local_geometry(parent: &ScoredMask, grid: &FeatureGrid) -> Result<CropGeometry> {
    let bbox = parent.mask.bbox()?;
    CropGeometry::new(bbox, grid.pixel_width(), grid.pixel_height())
}

/// One singleton cluster per in-mask patch, 4-adjacency among them.
pub fn init_clusters(parent: &ScoredMask, grid: &FeatureGrid) -> Result<ClusterState> {
    let geometry = local_geometry(parent, grid)?;
    let local_parent = geometry.to_local(&parent.mask)?;
    init_from_raster(&local_parent, grid)
}

fn init_from_raster(local_parent: &BinaryMask, grid: &FeatureGrid) -> Result<ClusterState> {
    let (gh, gw) = (grid.gh(), grid.gw());
    let inside = in_mask_patches(local_parent, grid);
    let count = inside.iter().filter(|&&b| b).count();
    if count < 2 {
        return Err(Error::MaskTooSmall { patches: count });
    }
    let n = grid.len();
    let mut features = vec![Vec::new(); n];
    for i in (0..n).filter(|&i| inside[i]) {
        let f: Vec<f64> = grid.feature(i).iter().map(|&v| f64::from(v)).collect();
        if f.iter().all(|&v| v == 0.0) {
            return Err(Error::ZeroNormPatch {
                index: i,
                row: i / gw,
                col: i % gw,
            });
        }
        features[i] = f;
    }
    let mut neighbors = vec![BTreeSet::new(); n];
    for i in (0..n).filter(|&i| inside[i]) {
        let (r, c) = (i / gw, i % gw);
        if c + 1 < gw && inside[i + 1] {
            neighbors[i].insert(i + 1);
            neighbors[i + 1].insert(i);
        }
        if r + 1 < gh && inside[i + gw] {
            neighbors[i].insert(i + gw);
            neighbors[i + gw].insert(i);
        }
    }
    let mut state = ClusterState {
        gh,
        gw,
        live: inside.clone(),
        members: (0..n).map(|i| if inside[i] { vec![i] } else { Vec::new() }).collect(),
        features,
        stamps: vec![0; n],
        neighbors,
        heap: BinaryHeap::new(),
    };
    for (a, b) in state.adjacency() {
        state.push_pair(a, b);
    }
    Ok(state)
}

/// Merges until the best adjacent pair falls below `theta`. Returns the
/// number of merges performed.
pub fn merge_pass(state: &mut ClusterState, theta: f64) -> Result<usize> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::param("theta", format!("{theta} not in (0, 1)")));
    }
    let mut merges = 0;
    while let Some(best) = state.peek_best() {
        if best.sim < theta {
            break;
        }
        state.heap.pop();
        state.merge(best.a, best.b);
        merges += 1;
    }
    Ok(merges)
}

pub fn validate_ladder(thetas: &[f64]) -> Result<()> {
    let in_range = thetas.iter().all(|&t| t > 0.0 && t < 1.0);
    let descending = thetas.windows(2).all(|p| p[0] > p[1]);
    if thetas.is_empty() || !in_range || !descending {
        return Err(Error::InvalidLadder(thetas.to_vec()));
    }
    Ok(())
}

/// A part mask on the local crop.
#[derive(Clone, Debug, PartialEq)]
pub struct PartMask {
    pub level: u32,
    pub cluster_id: usize,
    pub mask: BinaryMask,
    pub score: f64,
}

/// Nested partitions of one coarse mask. `levels[0]` is the whole mask;
/// `levels[t]` for `t >= 1` is the partition after merging at
/// `thetas[thetas.len() - t]`, so the last level is the finest.
#[derive(Clone, Debug)]
pub struct Hierarchy {
    pub parent: ScoredMask,
    pub geometry: CropGeometry,
    pub thetas: Vec<f64>,
    pub levels: Vec<Vec<Cluster>>,
    local_parent: BinaryMask,
    grid: FeatureGrid,
}

impl Hierarchy {
    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn local_parent(&self) -> &BinaryMask {
        &self.local_parent
    }

    /// Local masks for every cluster at levels `1..=depth`, each the union of
    /// its patches intersected with the parent raster.
    pub fn part_masks(&self) -> Vec<PartMask> {
        let (gw, ps) = (self.grid.gw(), self.grid.patch_size());
        let (h, w) = (self.local_parent.height(), self.local_parent.width());
        let parent_bits = self.local_parent.to_bitmap();
        let mut owner = vec![usize::MAX; self.grid.len()];
        let mut out = Vec::new();
        for (t, level) in self.levels.iter().enumerate().skip(1) {
            for cluster in level {
                for &p in &cluster.patches {
                    owner[p] = cluster.id;
                }
                let mask = BinaryMask::from_fn(h, w, |x, y| {
                    let (c, r) = ((x / ps) as usize, (y / ps) as usize);
                    r < self.grid.gh()
                        && c < gw
                        && owner[r * gw + c] == cluster.id
                        && parent_bits[(y * w + x) as usize]
                });
                for &p in &cluster.patches {
                    owner[p] = usize::MAX;
                }
                out.push(PartMask {
                    level: t as u32,
                    cluster_id: cluster.id,
                    mask,
                    score: self.cluster_score(cluster),
                });
            }
        }
        out
    }

    /// Mean cosine between member patch features and the cluster mean.
    pub fn cluster_score(&self, cluster: &Cluster) -> f64 {
        if cluster.size() == 1 {
            return 1.0;
        }
        let total: f64 = cluster
            .patches
            .iter()
            .map(|&p| {
                let f: Vec<f64> = self.grid.feature(p).iter().map(|&v| f64::from(v)).collect();
                cosine(&f, &cluster.feature)
            })
            .sum();
        (total / cluster.size() as f64).clamp(0.0, 1.0)
    }
}

/// Builds the hierarchy of `parent` from the feature grid of its crop. The
/// grid is taken to cover the parent's bounding box.
pub fn conquer(parent: &ScoredMask, grid: &FeatureGrid, thetas: &[f64]) -> Result<Hierarchy> {
    validate_ladder(thetas)?;
    let geometry = local_geometry(parent, grid)?;
    let local_parent = geometry.to_local(&parent.mask)?;
    let mut state = init_from_raster(&local_parent, grid)?;

    let mut snapshots = Vec::with_capacity(thetas.len());
    for &theta in thetas {
        merge_pass(&mut state, theta)?;
        snapshots.push(state.clusters());
    }

    let all: Vec<usize> = snapshots[0].iter().flat_map(|c| c.patches.iter().copied()).collect();
    let mut all = all;
    all.sort_unstable();
    let dim = grid.dim();
    let mut mean = vec![0.0; dim];
    for &p in &all {
        for (m, &v) in mean.iter_mut().zip(grid.feature(p)) {
            *m += f64::from(v);
        }
    }
    mean.iter_mut().for_each(|m| *m /= all.len() as f64);
    let root = Cluster {
        id: all[0],
        patches: all,
        feature: mean,
    };

    let mut levels = vec![vec![root]];
    levels.extend(snapshots.into_iter().rev());
    Ok(Hierarchy {
        parent: parent.clone(),
        geometry,
        thetas: thetas.to_vec(),
        levels,
        local_parent,
        grid: grid.clone(),
    })
}
