use crate::error::{Error, Result};
use crate::mask::{BBox, BinaryMask};

/// Nearest-neighbour correspondence between a global-image box and a local
/// crop of `local_width x local_height` pixels. Pixel centres map to pixel
/// centres in both directions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropGeometry {
    pub bbox: BBox,
    pub local_width: u32,
    pub local_height: u32,
}

impl CropGeometry {
    pub fn new(bbox: BBox, local_width: u32, local_height: u32) -> Result<Self> {
        if local_width == 0 || local_height == 0 {
            return Err(Error::param("crop_side", "local crop must be non-empty"));
        }
        Ok(CropGeometry {
            bbox,
            local_width,
            local_height,
        })
    }

    fn to_global_axis(origin: u32, extent: u32, local: u32, l: u32) -> u32 {
        let v = (2 * u64::from(l) + 1) * u64::from(extent) / (2 * u64::from(local));
        origin + v as u32
    }

    fn to_local_axis(origin: u32, extent: u32, local: u32, g: u32) -> u32 {
        let v = (2 * u64::from(g - origin) + 1) * u64::from(local) / (2 * u64::from(extent));
        v as u32
    }

    pub fn local_to_global(&self, lx: u32, ly: u32) -> (u32, u32) {
        let b = &self.bbox;
        (
            Self::to_global_axis(b.x1, b.width(), self.local_width, lx),
            Self::to_global_axis(b.y1, b.height(), self.local_height, ly),
        )
    }

    /// Defined for pixels inside the box.
    pub fn global_to_local(&self, gx: u32, gy: u32) -> (u32, u32) {
        let b = &self.bbox;
        (
            Self::to_local_axis(b.x1, b.width(), self.local_width, gx),
            Self::to_local_axis(b.y1, b.height(), self.local_height, gy),
        )
    }

    /// Samples a global mask onto the local crop.
    pub fn to_local(&self, global: &BinaryMask) -> Result<BinaryMask> {
        if !self.bbox.fits_in(global.width(), global.height()) {
            let b = self.bbox;
            return Err(Error::InvalidBBox([b.x1, b.y1, b.x2, b.y2]));
        }
        let bits = global.to_bitmap();
        let w = global.width() as usize;
        Ok(BinaryMask::from_fn(self.local_height, self.local_width, |lx, ly| {
            let (gx, gy) = self.local_to_global(lx, ly);
            bits[gy as usize * w + gx as usize]
        }))
    }

    /// Upsamples a local mask back into the box and pastes it into an
    /// `image_height x image_width` canvas.
    pub fn to_global(&self, local: &BinaryMask, image_height: u32, image_width: u32) -> Result<BinaryMask> {
        if local.width() != self.local_width || local.height() != self.local_height {
            return Err(Error::DimensionMismatch {
                left_h: local.height(),
                left_w: local.width(),
                right_h: self.local_height,
                right_w: self.local_width,
            });
        }
        if !self.bbox.fits_in(image_width, image_height) {
            let b = self.bbox;
            return Err(Error::InvalidBBox([b.x1, b.y1, b.x2, b.y2]));
        }
        let bits = local.to_bitmap();
        let lw = self.local_width as usize;
        Ok(BinaryMask::from_fn(image_height, image_width, |gx, gy| {
            if !self.bbox.contains(gx, gy) {
                return false;
            }
            let (lx, ly) = self.global_to_local(gx, gy);
            bits[ly as usize * lw + lx as usize]
        }))
    }
}
