use std::collections::BTreeMap;

use crate::embed::PatchFeatureMap;
use crate::error::{Error, Result};

/// Pooling kernel sizes. Always contains 1, the unpooled base map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScaleSet(Vec<usize>);

impl ScaleSet {
    pub fn new(mut kernels: Vec<usize>) -> Result<Self> {
        kernels.sort_unstable();
        kernels.dedup();
        if kernels.first() != Some(&1) {
            return Err(Error::invalid_arg(format!(
                "scale set {kernels:?} must include kernel 1"
            )));
        }
        Ok(ScaleSet(kernels))
    }

    pub fn kernels(&self) -> &[usize] {
        &self.0
    }

    pub fn max(&self) -> usize {
        *self.0.last().expect("non-empty")
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for ScaleSet {
    fn default() -> Self {
        ScaleSet(vec![1, 2, 3])
    }
}

/// The `(P-k+1)^2 x D` row matrix of one pooled map, with each row's
/// Euclidean norm precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct FlattenedGrid {
    k: usize,
    side: usize,
    dim: usize,
    data: Vec<f64>,
    norms: Vec<f64>,
}

impl FlattenedGrid {
    pub fn from_rows(k: usize, side: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != side * side * dim {
            return Err(Error::invalid_arg(format!(
                "grid {side}x{side}x{dim} needs {} values, got {}",
                side * side * dim,
                data.len()
            )));
        }
        let norms = data
            .chunks_exact(dim)
            .map(|row| row.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        Ok(FlattenedGrid {
            k,
            side,
            dim,
            data,
            norms,
        })
    }

    pub fn kernel(&self) -> usize {
        self.k
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.side * self.side
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn norm(&self, i: usize) -> f64 {
        self.norms[i]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Average pooling with a `k x k` kernel and stride 1.
pub fn pool(map: &PatchFeatureMap, k: usize) -> Result<FlattenedGrid> {
    let (p, d) = (map.side(), map.dim());
    if k == 0 || k > p {
        return Err(Error::invalid_arg(format!(
            "kernel {k} invalid for a {p}x{p} grid"
        )));
    }
    let side = p - k + 1;
    if k == 1 {
        return FlattenedGrid::from_rows(1, p, d, map.data().to_vec());
    }
    let scale = 1.0 / (k * k) as f64;
    let mut data = vec![0.0; side * side * d];
    for i in 0..side {
        for j in 0..side {
            let out = &mut data[(i * side + j) * d..(i * side + j + 1) * d];
            for u in 0..k {
                for v in 0..k {
                    for (o, x) in out.iter_mut().zip(map.vector(i + u, j + v)) {
                        *o += x;
                    }
                }
            }
            out.iter_mut().for_each(|o| *o *= scale);
        }
    }
    FlattenedGrid::from_rows(k, side, d, data)
}

/// Pools `map` at every kernel in `scales`.
pub fn pool_multiscale(
    map: &PatchFeatureMap,
    scales: &ScaleSet,
) -> Result<BTreeMap<usize, FlattenedGrid>> {
    if scales.max() > map.side() {
        return Err(Error::invalid_arg(format!(
            "largest kernel {} exceeds patch grid side {}",
            scales.max(),
            map.side()
        )));
    }
    scales
        .kernels()
        .iter()
        .map(|&k| Ok((k, pool(map, k)?)))
        .collect()
}
