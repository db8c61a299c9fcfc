#![allow(dead_code)]

use hiermask::{BinaryMask, FeatureGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRID: usize = 64;
pub const PATCH: u32 = 16;
pub const DIM: usize = 32;

/// A coarse block as patch rows/cols, split into sub-blocks.
pub struct Block {
    pub rows: (usize, usize),
    pub cols: (usize, usize),
    pub subs: Vec<((usize, usize), (usize, usize))>,
}

pub fn planted_blocks() -> Vec<Block> {
    vec![
        Block {
            rows: (6, 30),
            cols: (4, 28),
            subs: vec![((6, 30), (4, 12)), ((6, 30), (12, 28))],
        },
        Block {
            rows: (8, 24),
            cols: (36, 60),
            subs: vec![((8, 13), (36, 60)), ((13, 18), (36, 60)), ((18, 24), (36, 60))],
        },
        Block {
            rows: (40, 56),
            cols: (16, 48),
            subs: vec![
                ((40, 48), (16, 32)),
                ((40, 48), (32, 48)),
                ((48, 56), (16, 32)),
                ((48, 56), (32, 48)),
            ],
        },
    ]
}

pub struct Planted {
    pub grid: FeatureGrid,
    pub blocks: Vec<BinaryMask>,
    pub subs: Vec<BinaryMask>,
}

impl Planted {
    pub fn regions(&self) -> Vec<BinaryMask> {
        self.blocks.iter().chain(&self.subs).cloned().collect()
    }
}

fn rect_mask(rows: (usize, usize), cols: (usize, usize)) -> BinaryMask {
    let side = GRID as u32 * PATCH;
    BinaryMask::from_fn(side, side, |x, y| {
        let (r, c) = ((y / PATCH) as usize, (x / PATCH) as usize);
        r >= rows.0 && r < rows.1 && c >= cols.0 && c < cols.1
    })
}

/// Background along axis 0, block `k` along axis `1 + k`, and each
/// sub-block adds its own axis: feature = sqrt(0.45) a_k + sqrt(0.55) b_ks,
/// plus Gaussian-ish noise of amplitude `noise`.
pub fn planted(seed: u64, noise: f32) -> Planted {
    let blocks = planted_blocks();
    let mut owner = vec![None; GRID * GRID];
    let mut axis = 1 + blocks.len();
    for (k, b) in blocks.iter().enumerate() {
        for (s, &(rows, cols)) in b.subs.iter().enumerate() {
            for r in rows.0..rows.1 {
                for c in cols.0..cols.1 {
                    owner[r * GRID + c] = Some((k, s, axis + s));
                }
            }
        }
        axis += b.subs.len();
    }
    assert!(axis <= DIM);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, bw) = (0.45f32.sqrt(), 0.55f32.sqrt());
    let grid = FeatureGrid::from_fn(GRID, GRID, DIM, PATCH, |r, c| {
        let mut v = vec![0.0f32; DIM];
        match owner[r * GRID + c] {
            None => v[0] = 1.0,
            Some((k, _, ax)) => {
                v[1 + k] = a;
                v[ax] = bw;
            }
        }
        for x in &mut v {
            *x += noise * (rng.gen::<f32>() - 0.5);
        }
        v
    })
    .expect("valid grid");
    Planted {
        grid,
        blocks: blocks.iter().map(|b| rect_mask(b.rows, b.cols)).collect(),
        subs: blocks
            .iter()
            .flat_map(|b| b.subs.iter().map(|&(r, c)| rect_mask(r, c)))
            .collect(),
    }
}

/// Random mask on an `h x w` canvas: a union of up to three rectangles,
/// sometimes empty.
pub fn random_mask(rng: &mut ChaCha8Rng, h: u32, w: u32) -> BinaryMask {
    let k = rng.gen_range(0..=3);
    let rects: Vec<(u32, u32, u32, u32)> = (0..k)
        .map(|_| {
            let (x0, y0) = (rng.gen_range(0..w), rng.gen_range(0..h));
            (x0, y0, rng.gen_range(x0 + 1..=w), rng.gen_range(y0 + 1..=h))
        })
        .collect();
    BinaryMask::from_fn(h, w, |x, y| rects.iter().any(|&(x0, y0, x1, y1)| x >= x0 && x < x1 && y >= y0 && y < y1))
}

/// Random mask with each pixel on with probability `p`.
pub fn noise_mask(rng: &mut ChaCha8Rng, h: u32, w: u32, p: f64) -> BinaryMask {
    let bits: Vec<bool> = (0..h * w).map(|_| rng.gen_bool(p)).collect();
    BinaryMask::from_bitmap(h, w, &bits).expect("sized bitmap")
}

/// Scores drawn from a small set so ties are common.
pub fn coarse_score(rng: &mut ChaCha8Rng) -> f64 {
    f64::from(rng.gen_range(0..=10u32)) / 10.0
}
