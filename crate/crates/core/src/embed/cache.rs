use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use sha2::{Digest, Sha256};

use super::{check_geometry, EmbeddingProvider, PatchFeatureMap, ProviderId};
use crate::error::{Error, Result};
use crate::raster::RasterImage;

const MAGIC: &[u8; 4] = b"PFM1";
const HEADER_LEN: usize = 12;

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Content-addressed on-disk store of feature maps.
///
/// Entries live at `<root>/<provider>-<P>x<D>-<side>/<sha256 of raster>.pfm`.
/// Writes go to a temporary file and are renamed into place, so readers
/// never observe a partial entry written by this process.
#[derive(Debug, Clone)]
pub struct FeatureCache {
    root: PathBuf,
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

impl FeatureCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        FeatureCache { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn key(image: &RasterImage) -> String {
        let mut h = Sha256::new();
        h.update((image.width() as u64).to_le_bytes());
        h.update((image.height() as u64).to_le_bytes());
        h.update(image.levels());
        hex::encode(h.finalize())
    }

    pub fn entry_path(&self, image: &RasterImage, provider: &ProviderId) -> PathBuf {
        let dir = format!(
            "{}-{}x{}-{}",
            sanitize(&provider.name),
            provider.p,
            provider.d,
            provider.input_side
        );
        self.root
            .join(dir)
            .join(format!("{}.pfm", Self::key(image)))
    }

    /// Looks up a map. Unreadable or corrupt entries are reported as misses.
    pub fn get(&self, image: &RasterImage, provider: &ProviderId) -> Option<PatchFeatureMap> {
        let path = self.entry_path(image, provider);
        let bytes = fs::read(&path).ok()?;
        match decode(&bytes, provider) {
            Ok(map) => Some(map),
            Err(e) => {
                log::warn!("ignoring corrupt cache entry {}: {e}", path.display());
                None
            }
        }
    }

    pub fn put(
        &self,
        image: &RasterImage,
        provider: &ProviderId,
        map: &PatchFeatureMap,
    ) -> Result<()> {
        let path = self.entry_path(image, provider);
        let dir = path.parent().expect("entry has a parent");
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let tmp = dir.join(format!(
            ".tmp-{}-{}",
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        fs::write(&tmp, encode(map)).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }
}

fn encode(map: &PatchFeatureMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + map.data().len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(map.side() as u32).to_le_bytes());
    out.extend_from_slice(&(map.dim() as u32).to_le_bytes());
    for v in map.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode(bytes: &[u8], provider: &ProviderId) -> Result<PatchFeatureMap> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::Protocol("bad header".into()));
    }
    let p = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let d = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    check_geometry(provider, p, d)?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != p * p * d * 8 {
        return Err(Error::Protocol(format!(
            "expected {} payload bytes, found {}",
            p * p * d * 8,
            body.len()
        )));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    PatchFeatureMap::new(p, d, data)
}

/// Serves from the cache and falls back to `inner` on a miss, storing the
/// fresh result.
pub struct CachedProvider<P> {
    inner: P,
    cache: FeatureCache,
}

impl<P: EmbeddingProvider> CachedProvider<P> {
    pub fn new(inner: P, cache: FeatureCache) -> Self {
        CachedProvider { inner, cache }
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for CachedProvider<P> {
    fn id(&self) -> &ProviderId {
        self.inner.id()
    }

    fn embed_raw(&self, image: &RasterImage) -> Result<PatchFeatureMap> {
        if let Some(map) = self.cache.get(image, self.inner.id()) {
            return Ok(map);
        }
        let map = self.inner.embed_raw(image)?;
        if let Err(e) = self.cache.put(image, self.inner.id(), &map) {
            log::warn!("could not write feature cache: {e}");
        }
        Ok(map)
    }
}

/// Read-only provider over a populated cache; a miss is an error.
pub struct StoreProvider {
    id: ProviderId,
    cache: FeatureCache,
}

impl StoreProvider {
    pub fn new(id: ProviderId, cache: FeatureCache) -> Result<Self> {
        id.validate()?;
        Ok(StoreProvider { id, cache })
    }
}

impl EmbeddingProvider for StoreProvider {
    fn id(&self) -> &ProviderId {
        &self.id
    }

    fn embed_raw(&self, image: &RasterImage) -> Result<PatchFeatureMap> {
        self.cache
            .get(image, &self.id)
            .ok_or_else(|| Error::NotCached(FeatureCache::key(image)))
    }
}
