use super::{EmbeddingProvider, PatchFeatureMap, ProviderId};
use crate::error::{Error, Result};
use crate::raster::RasterImage;

/// Features per patch produced by the reference backend.
pub const REFERENCE_DIM: usize = 4;

/// Hand-auditable patch features, one vector per `P x P` pixel block:
///
/// 0. mean intensity
/// 1. vertical centroid of dark pixels, as a fraction of block height (0.5 if none)
/// 2. fraction of dark pixels
/// 3. vertical spread (population std of dark-pixel rows, same scale as 1)
///
/// Every feature depends only on the pixels inside its block and on row
/// positions, so a horizontal flip mirrors the grid and shifting the line by
/// one block shifts the grid by one column.
pub fn reference_embed(image: &RasterImage, p: usize) -> Result<PatchFeatureMap> {
    let (w, h) = (image.width(), image.height());
    if p == 0 || w % p != 0 || h % p != 0 {
        return Err(Error::invalid_arg(format!(
            "raster {w}x{h} not divisible into a {p}x{p} patch grid"
        )));
    }
    let (bw, bh) = (w / p, h / p);
    let row_scale = if bh > 1 { (bh - 1) as f64 } else { 1.0 };
    let area = (bw * bh) as f64;

    let mut data = Vec::with_capacity(p * p * REFERENCE_DIM);
    for br in 0..p {
        for bc in 0..p {
            let mut sum = 0.0;
            let mut dark = 0usize;
            let mut row_sum = 0.0;
            let mut row_sq = 0.0;
            for y in 0..bh {
                for x in 0..bw {
                    let (px, py) = (bc * bw + x, br * bh + y);
                    sum += image.intensity(px, py);
                    if image.is_dark(px, py) {
                        dark += 1;
                        row_sum += y as f64;
                        row_sq += (y * y) as f64;
                    }
                }
            }
            let (centroid, spread) = if dark == 0 {
                (0.5, 0.0)
            } else {
                let n = dark as f64;
                let mean = row_sum / n;
                let var = (row_sq / n - mean * mean).max(0.0);
                (mean / row_scale, var.sqrt() / row_scale)
            };
            data.extend_from_slice(&[sum / area, centroid, dark as f64 / area, spread]);
        }
    }
    PatchFeatureMap::new(p, REFERENCE_DIM, data)
}

/// Deterministic in-process provider built on [`reference_embed`].
#[derive(Debug, Clone)]
pub struct ReferenceProvider {
    id: ProviderId,
}

impl ReferenceProvider {
    pub fn new(p: usize, input_side: usize) -> Result<Self> {
        Ok(ReferenceProvider {
            id: ProviderId::new("reference", p, REFERENCE_DIM, input_side)?,
        })
    }
}

impl EmbeddingProvider for ReferenceProvider {
    fn id(&self) -> &ProviderId {
        &self.id
    }

    fn embed_raw(&self, image: &RasterImage) -> Result<PatchFeatureMap> {
        reference_embed(image, self.id.p)
    }
}
