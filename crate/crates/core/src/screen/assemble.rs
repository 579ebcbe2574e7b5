use crate::error::{Error, Result};
use crate::raster::WindowSpec;

/// The `P x T` patch-row by time-step anomaly map. Each cell keeps the sum
/// and count of its contributions; cells nobody covered have no value.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyMap2D {
    rows: usize,
    cols: usize,
    sum: Vec<f64>,
    count: Vec<u32>,
}

impl AnomalyMap2D {
    pub fn new(rows: usize, cols: usize) -> Self {
        AnomalyMap2D {
            rows,
            cols,
            sum: vec![0.0; rows * cols],
            count: vec![0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    fn add(&mut self, row: usize, t: usize, v: f64) {
        let i = row * self.cols + t;
        self.sum[i] += v;
        self.count[i] += 1;
    }

    /// Averaged value, or `None` for an uncovered cell.
    pub fn get(&self, row: usize, t: usize) -> Option<f64> {
        let i = row * self.cols + t;
        (self.count[i] > 0).then(|| self.sum[i] / f64::from(self.count[i]))
    }

    pub fn count(&self, row: usize, t: usize) -> u32 {
        self.count[row * self.cols + t]
    }

    /// Valid values of column `t`, top row first.
    pub fn column(&self, t: usize) -> Vec<f64> {
        (0..self.rows).filter_map(|r| self.get(r, t)).collect()
    }

    /// Row-major dense values with uncovered cells as NaN.
    pub fn to_dense(&self) -> Vec<f64> {
        (0..self.rows * self.cols)
            .map(|i| {
                if self.count[i] > 0 {
                    self.sum[i] / f64::from(self.count[i])
                } else {
                    f64::NAN
                }
            })
            .collect()
    }
}

/// First time offset (inside a window of length `l`) covered by patch column `c` of `p`.
pub fn patch_column_start(c: usize, l: usize, p: usize) -> usize {
    c * l / p
}

/// Maps each window's fused `P x P` map back onto the time axis.
///
/// Patch column `c` of the window at `w` covers `[w + c*L/P, w + (c+1)*L/P)`;
/// every covered step in patch row `r` receives that patch's score. Steps
/// past the end of the series (padding) are dropped.
pub fn assemble_map(fused: &[Vec<f64>], spec: &WindowSpec, p: usize) -> Result<AnomalyMap2D> {
    if fused.len() != spec.count() {
        return Err(Error::invalid_arg(format!(
            "{} fused maps for {} windows",
            fused.len(),
            spec.count()
        )));
    }
    let l = spec.window_length;
    let mut map = AnomalyMap2D::new(p, spec.series_len);
    for (grid, &start) in fused.iter().zip(&spec.starts) {
        if grid.len() != p * p {
            return Err(Error::invalid_arg(format!(
                "fused map has {} cells, expected {}",
                grid.len(),
                p * p
            )));
        }
        let valid = spec.valid_len(start);
        for c in 0..p {
            let lo = patch_column_start(c, l, p);
            let hi = patch_column_start(c + 1, l, p).min(valid);
            for off in lo..hi {
                for r in 0..p {
                    map.add(r, start + off, grid[r * p + c]);
                }
            }
        }
    }
    Ok(map)
}
