use crate::error::{Error, Result};
use crate::mask::BBox;

/// Patch features laid out row-major by `(row, col, channel)`.
///
/// Shape and finiteness are checked on construction. Zero-norm vectors are
/// rejected by the stages that normalise features (`check_norms`), so the
/// error can name the offending patch.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGrid {
    gh: usize,
    gw: usize,
    dim: usize,
    patch_size: u32,
    data: Vec<f32>,
}

impl FeatureGrid {
    pub fn new(gh: usize, gw: usize, dim: usize, patch_size: u32, data: Vec<f32>) -> Result<Self> {
        if gh * gw < 4 {
            return Err(Error::InvalidGrid(format!(
                "{gh}x{gw} grid has fewer than 4 patches"
            )));
        }
        if dim == 0 || patch_size == 0 {
            return Err(Error::InvalidGrid(format!(
                "dim {dim} and patch size {patch_size} must be positive"
            )));
        }
        if data.len() != gh * gw * dim {
            return Err(Error::InvalidGrid(format!(
                "{} values for a {gh}x{gw}x{dim} grid",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidGrid(format!("non-finite value at index {i}")));
        }
        Ok(FeatureGrid {
            gh,
            gw,
            dim,
            patch_size,
            data,
        })
    }

    /// Builds a grid from a per-patch function `f(row, col) -> feature`.
    pub fn from_fn(
        gh: usize,
        gw: usize,
        dim: usize,
        patch_size: u32,
        mut f: impl FnMut(usize, usize) -> Vec<f32>,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(gh * gw * dim);
        for r in 0..gh {
            for c in 0..gw {
                let v = f(r, c);
                if v.len() != dim {
                    return Err(Error::InvalidGrid(format!(
                        "patch ({r}, {c}) has {} channels, expected {dim}",
                        v.len()
                    )));
                }
                data.extend_from_slice(&v);
            }
        }
        Self::new(gh, gw, dim, patch_size, data)
    }

    pub fn gh(&self) -> usize {
        self.gh
    }

    pub fn gw(&self) -> usize {
        self.gw
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn patch_size(&self) -> u32 {
        self.patch_size
    }

    pub fn len(&self) -> usize {
        self.gh * self.gw
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn feature(&self, index: usize) -> &[f32] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn pixel_height(&self) -> u32 {
        self.gh as u32 * self.patch_size
    }

    pub fn pixel_width(&self) -> u32 {
        self.gw as u32 * self.patch_size
    }

    /// Unit-normalised features in f64, or the first zero-norm patch.
    pub fn normalized(&self) -> Result<Vec<Vec<f64>>> {
        (0..self.len())
            .map(|i| {
                let v: Vec<f64> = self.feature(i).iter().map(|&x| f64::from(x)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm == 0.0 || !norm.is_finite() {
                    return Err(Error::ZeroNormPatch {
                        index: i,
                        row: i / self.gw,
                        col: i % self.gw,
                    });
                }
                Ok(v.into_iter().map(|x| x / norm).collect())
            })
            .collect()
    }

    pub fn check_norms(&self) -> Result<()> {
        self.normalized().map(|_| ())
    }

    /// Resamples the features under `bbox` (global pixels) onto a local
    /// `side x side` crop with `local_patch`-pixel patches, taking for each
    /// local patch the global patch under its centre (nearest neighbour).
    pub fn crop(&self, bbox: &BBox, side: u32, local_patch: u32) -> Result<FeatureGrid> {
        if !bbox.fits_in(self.pixel_width(), self.pixel_height()) {
            return Err(Error::InvalidBBox([bbox.x1, bbox.y1, bbox.x2, bbox.y2]));
        }
        if local_patch == 0 || side % local_patch != 0 {
            return Err(Error::param(
                "crop_patch_size",
                format!("{local_patch} does not divide crop side {side}"),
            ));
        }
        let lg = (side / local_patch) as usize;
        let ps = u64::from(self.patch_size);
        let sample = |offset: u32, extent: u32, cell: usize| -> usize {
            // Centre of local cell in crop pixels, times 2 to stay integral.
            let centre2 = (2 * cell as u64 + 1) * u64::from(local_patch);
            let global = u64::from(offset) + centre2 * u64::from(extent) / (2 * u64::from(side));
            (global / ps) as usize
        };
        FeatureGrid::from_fn(lg, lg, self.dim, local_patch, |r, c| {
            let gr = sample(bbox.y1, bbox.height(), r).min(self.gh - 1);
            let gc = sample(bbox.x1, bbox.width(), c).min(self.gw - 1);
            self.feature(gr * self.gw + gc).to_vec()
        })
    }
}
