//! Binary masks stored as run-length encodings.
//!
//! Runs are counted in column-major order (pixel `(x, y)` has linear index
//! `x * height + y`) and alternate background/foreground, starting with a
//! background run that may be zero. This is the uncompressed RLE used by COCO
//! tooling, so encoded counts can be fed to it directly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-open pixel box `[x1, x2) x [y1, y2)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x1: u32,
    pub y1: u32,
    pub x2: u32,
    pub y2: u32,
}

impl BBox {
    pub fn new(x1: u32, y1: u32, x2: u32, y2: u32) -> Result<Self> {
        if x1 >= x2 || y1 >= y2 {
            return Err(Error::InvalidBBox([x1, y1, x2, y2]));
        }
        Ok(BBox { x1, y1, x2, y2 })
    }

    pub fn width(&self) -> u32 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> u32 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> u64 {
        u64::from(self.width()) * u64::from(self.height())
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x1 && x < self.x2 && y >= self.y1 && y < self.y2
    }

    pub fn fits_in(&self, width: u32, height: u32) -> bool {
        self.x2 <= width && self.y2 <= height
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: u32,
    width: u32,
    counts: Vec<u32>,
}

impl BinaryMask {
    /// All-background mask.
    pub fn empty(height: u32, width: u32) -> Self {
        let n = height * width;
        BinaryMask {
            height,
            width,
            counts: vec![n],
        }
    }

    pub fn full(height: u32, width: u32) -> Self {
        BinaryMask {
            height,
            width,
            counts: vec![0, height * width],
        }
    }

    /// Encodes a row-major boolean grid (`bitmap[y * width + x]`).
    pub fn from_bitmap(height: u32, width: u32, bitmap: &[bool]) -> Result<Self> {
        let (h, w) = (height as usize, width as usize);
        if h == 0 || w == 0 {
            return Err(Error::InvalidRle(format!("empty {height}x{width} grid")));
        }
        if bitmap.len() != h * w {
            return Err(Error::InvalidRle(format!(
                "bitmap has {} pixels, expected {}",
                bitmap.len(),
                h * w
            )));
        }
        Ok(Self::from_fn(height, width, |x, y| {
            bitmap[y as usize * w + x as usize]
        }))
    }

    /// Encodes the mask whose pixel `(x, y)` is `f(x, y)`.
    pub fn from_fn(height: u32, width: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for x in 0..width {
            for y in 0..height {
                let v = f(x, y);
                if v != current {
                    counts.push(run);
                    run = 0;
                    current = v;
                }
                run += 1;
            }
        }
        counts.push(run);
        BinaryMask {
            height,
            width,
            counts,
        }
    }

    /// Builds a mask from foreground runs `(start, len)` given in column-major
    /// linear indices. Runs must be sorted and non-overlapping.
    pub(crate) fn from_runs(height: u32, width: u32, runs: &[(u32, u32)]) -> Self {
        let total = height * width;
        let mut counts = Vec::with_capacity(runs.len() * 2 + 1);
        let mut pos = 0u32;
        for &(start, len) in runs {
            if len == 0 {
                continue;
            }
            debug_assert!(start >= pos);
            if start == pos && !counts.is_empty() {
                // Adjacent run: extend the previous foreground count.
                *counts.last_mut().unwrap() += len;
            } else {
                counts.push(start - pos);
                counts.push(len);
            }
            pos = start + len;
        }
        if counts.is_empty() {
            counts.push(total);
        } else if pos < total {
            counts.push(total - pos);
        }
        BinaryMask {
            height,
            width,
            counts,
        }
    }

    /// Validates raw counts and returns the canonical mask (zero-length
    /// interior runs folded into their neighbours).
    pub fn from_counts(height: u32, width: u32, counts: &[u32]) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidRle(format!("empty {height}x{width} grid")));
        }
        let total: u64 = counts.iter().map(|&c| u64::from(c)).sum();
        let expected = u64::from(height) * u64::from(width);
        if total != expected {
            return Err(Error::InvalidRle(format!(
                "run lengths sum to {total}, expected {expected}"
            )));
        }
        for (i, pair) in counts.windows(2).enumerate() {
            if i > 0 && pair[0] == 0 && pair[1] == 0 {
                return Err(Error::InvalidRle(format!(
                    "consecutive zero-length runs at {i}"
                )));
            }
        }
        let mut runs = Vec::new();
        let mut pos = 0u32;
        for (i, &c) in counts.iter().enumerate() {
            if i % 2 == 1 {
                runs.push((pos, c));
            }
            pos += c;
        }
        Ok(Self::from_runs(height, width, &runs))
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn same_shape(&self, other: &BinaryMask) -> Result<()> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::DimensionMismatch {
                left_h: self.height,
                left_w: self.width,
                right_h: other.height,
                right_w: other.width,
            });
        }
        Ok(())
    }

    /// Foreground runs as `(start, len)` in column-major linear indices.
    pub fn runs(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let mut pos = 0u32;
        self.counts.iter().enumerate().filter_map(move |(i, &c)| {
            let start = pos;
            pos += c;
            (i % 2 == 1 && c > 0).then_some((start, c))
        })
    }

    pub fn area(&self) -> u64 {
        self.runs().map(|(_, len)| u64::from(len)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    /// Row-major bitmap.
    pub fn to_bitmap(&self) -> Vec<bool> {
        let (h, w) = (self.height as usize, self.width as usize);
        let mut out = vec![false; h * w];
        for (start, len) in self.runs() {
            for idx in start..start + len {
                let (x, y) = (idx as usize / h, idx as usize % h);
                out[y * w + x] = true;
            }
        }
        out
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        let idx = x * self.height + y;
        let mut pos = 0u32;
        for (i, &c) in self.counts.iter().enumerate() {
            if idx < pos + c {
                return i % 2 == 1;
            }
            pos += c;
        }
        false
    }

    pub fn contains_point(&self, x: u32, y: u32) -> Result<bool> {
        if x >= self.width || y >= self.height {
            return Err(Error::PointOutOfBounds {
                x,
                y,
                width: self.width,
                height: self.height,
            });
        }
        Ok(self.get(x, y))
    }

    pub fn intersection_area(&self, other: &BinaryMask) -> Result<u64> {
        self.same_shape(other)?;
        let mut total = 0u64;
        let mut a = self.runs().peekable();
        let mut b = other.runs().peekable();
        while let (Some(&(sa, la)), Some(&(sb, lb))) = (a.peek(), b.peek()) {
            let (ea, eb) = (sa + la, sb + lb);
            let lo = sa.max(sb);
            let hi = ea.min(eb);
            if hi > lo {
                total += u64::from(hi - lo);
            }
            if ea <= eb {
                a.next();
            } else {
                b.next();
            }
        }
        Ok(total)
    }

    pub fn intersect(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.same_shape(other)?;
        let mut runs = Vec::new();
        let mut a = self.runs().peekable();
        let mut b = other.runs().peekable();
        while let (Some(&(sa, la)), Some(&(sb, lb))) = (a.peek(), b.peek()) {
            let (ea, eb) = (sa + la, sb + lb);
            let lo = sa.max(sb);
            let hi = ea.min(eb);
            if hi > lo {
                runs.push((lo, hi - lo));
            }
            if ea <= eb {
                a.next();
            } else {
                b.next();
            }
        }
        Ok(BinaryMask::from_runs(self.height, self.width, &runs))
    }

    /// Tightest half-open box around the foreground.
    pub fn bbox(&self) -> Result<BBox> {
        let h = self.height;
        let (mut x1, mut y1, mut x2, mut y2) = (u32::MAX, u32::MAX, 0u32, 0u32);
        let mut any = false;
        for (start, len) in self.runs() {
            any = true;
            let end = start + len - 1;
            let (c0, c1) = (start / h, end / h);
            x1 = x1.min(c0);
            x2 = x2.max(c1 + 1);
            if c0 == c1 {
                y1 = y1.min(start % h);
                y2 = y2.max(end % h + 1);
            } else {
                y1 = 0;
                y2 = h;
            }
        }
        if !any {
            return Err(Error::EmptyMask);
        }
        BBox::new(x1, y1, x2, y2)
    }

    /// Prompt location for a mask: the rounded centroid when it lands on the
    /// foreground, otherwise the foreground pixel farthest (chessboard
    /// distance) from any background pixel, ties broken by smallest `(y, x)`.
    pub fn center_point(&self) -> Result<(u32, u32)> {
        let mut n = 0u64;
        let (mut sx, mut sy) = (0u64, 0u64);
        let h = self.height;
        for (start, len) in self.runs() {
            for idx in start..start + len {
                sx += u64::from(idx / h);
                sy += u64::from(idx % h);
            }
            n += u64::from(len);
        }
        if n == 0 {
            return Err(Error::EmptyMask);
        }
        let cx = (sx as f64 / n as f64).round() as u32;
        let cy = (sy as f64 / n as f64).round() as u32;
        if self.get(cx, cy) {
            return Ok((cx, cy));
        }
        let dist = self.chessboard_depth();
        let w = self.width as usize;
        let mut best = (0u32, 0u32);
        let mut best_d = 0u32;
        for (i, &d) in dist.iter().enumerate() {
            // Row-major scan visits (y, x) lexicographically, so a strict
            // comparison keeps the first maximiser.
            if d > best_d {
                best_d = d;
                best = ((i % w) as u32, (i / w) as u32);
            }
        }
        Ok(best)
    }

    /// Row-major chessboard distance from each foreground pixel to the nearest
    /// background pixel; pixels beyond the image border count as background.
    pub(crate) fn chessboard_depth(&self) -> Vec<u32> {
        let (h, w) = (self.height as usize, self.width as usize);
        let bitmap = self.to_bitmap();
        let mut d: Vec<u32> = bitmap.iter().map(|&b| if b { u32::MAX } else { 0 }).collect();
        let at = |d: &Vec<u32>, x: isize, y: isize| -> u32 {
            if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
                0
            } else {
                d[y as usize * w + x as usize]
            }
        };
        for y in 0..h as isize {
            for x in 0..w as isize {
                let i = y as usize * w + x as usize;
                if d[i] == 0 {
                    continue;
                }
                let m = at(&d, x - 1, y)
                    .min(at(&d, x - 1, y - 1))
                    .min(at(&d, x, y - 1))
                    .min(at(&d, x + 1, y - 1));
                d[i] = d[i].min(m.saturating_add(1));
            }
        }
        for y in (0..h as isize).rev() {
            for x in (0..w as isize).rev() {
                let i = y as usize * w + x as usize;
                if d[i] == 0 {
                    continue;
                }
                let m = at(&d, x + 1, y)
                    .min(at(&d, x + 1, y + 1))
                    .min(at(&d, x, y + 1))
                    .min(at(&d, x - 1, y + 1));
                d[i] = d[i].min(m.saturating_add(1));
            }
        }
        d
    }
}

/// Intersection over union; zero when both masks are empty.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let inter = a.intersection_area(b)?;
    let union = a.area() + b.area() - inter;
    if union == 0 {
        return Ok(0.0);
    }
    Ok(inter as f64 / union as f64)
}
