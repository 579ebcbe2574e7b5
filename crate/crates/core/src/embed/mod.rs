//! Patch-level feature maps behind a uniform provider contract.
//!
//! A provider turns a square raster into a `P x P x D` grid of embeddings.
//! Everything downstream depends on providers only through
//! [`PatchFeatureMap`], so backbones are swapped by configuration.

mod cache;
mod reference;
mod remote;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::RasterImage;

pub use cache::{CachedProvider, FeatureCache, StoreProvider};
pub use reference::{reference_embed, ReferenceProvider, REFERENCE_DIM};
pub use remote::{RemoteConfig, RemoteProvider};

/// A `P x P` grid of `D`-dimensional vectors, row-major with the feature
/// dimension innermost. Row 0 is the top patch row.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchFeatureMap {
    p: usize,
    d: usize,
    data: Vec<f64>,
}

impl PatchFeatureMap {
    pub fn new(p: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if p < 1 || d < 1 {
            return Err(Error::invalid_arg(format!(
                "feature map {p}x{p}x{d} is empty"
            )));
        }
        if data.len() != p * p * d {
            return Err(Error::invalid_arg(format!(
                "feature map {p}x{p}x{d} needs {} values, got {}",
                p * p * d,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "non-finite feature at offset {i}"
            )));
        }
        Ok(PatchFeatureMap { p, d, data })
    }

    pub fn side(&self) -> usize {
        self.p
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Feature vector of the patch at `(row, col)`.
    pub fn vector(&self, row: usize, col: usize) -> &[f64] {
        let off = (row * self.p + col) * self.d;
        &self.data[off..off + self.d]
    }
}

/// Identifies a backbone and its output geometry.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProviderId {
    pub name: String,
    /// Patch-grid side `P`.
    pub p: usize,
    /// Embedding dimension `D`.
    pub d: usize,
    /// Expected raster side in pixels.
    pub input_side: usize,
}

impl ProviderId {
    pub fn new(name: impl Into<String>, p: usize, d: usize, input_side: usize) -> Result<Self> {
        let id = ProviderId {
            name: name.into(),
            p,
            d,
            input_side,
        };
        id.validate()?;
        Ok(id)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 2 || self.d < 1 {
            return Err(Error::Config(format!(
                "provider {} has invalid geometry P={} D={}",
                self.name, self.p, self.d
            )));
        }
        if self.input_side % self.p != 0 {
            return Err(Error::Config(format!(
                "provider {} input side {} not divisible by P={}",
                self.name, self.input_side, self.p
            )));
        }
        Ok(())
    }

    /// Pixels per patch along each axis.
    pub fn patch_pixels(&self) -> usize {
        self.input_side / self.p
    }
}

pub trait EmbeddingProvider: Send + Sync {
    fn id(&self) -> &ProviderId;

    /// Produces the raw feature map. Callers should go through [`embed`],
    /// which validates geometry on both sides.
    fn embed_raw(&self, image: &RasterImage) -> Result<PatchFeatureMap>;
}

impl<T: EmbeddingProvider + ?Sized> EmbeddingProvider for Box<T> {
    fn id(&self) -> &ProviderId {
        (**self).id()
    }

    fn embed_raw(&self, image: &RasterImage) -> Result<PatchFeatureMap> {
        (**self).embed_raw(image)
    }
}

/// Embeds `image`, checking the raster fits the provider and the reply
/// matches the advertised `(P, D)`.
pub fn embed(image: &RasterImage, provider: &dyn EmbeddingProvider) -> Result<PatchFeatureMap> {
    let id = provider.id();
    if image.width() != id.input_side || image.height() != id.input_side {
        return Err(Error::invalid_arg(format!(
            "raster {}x{} does not match provider {} input side {}",
            image.width(),
            image.height(),
            id.name,
            id.input_side
        )));
    }
    let map = provider.embed_raw(image)?;
    check_geometry(id, map.side(), map.dim())?;
    Ok(map)
}

pub(crate) fn check_geometry(id: &ProviderId, p: usize, d: usize) -> Result<()> {
    if p != id.p || d != id.d {
        return Err(Error::Protocol(format!(
            "provider {} advertised P={} D={} but returned P={p} D={d}",
            id.name, id.p, id.d
        )));
    }
    Ok(())
}
