//! Visual screening: rasterize rolling windows, embed them, compare patches
//! across windows at several pooling scales, and turn the fused map into a
//! per-step score and candidate intervals.

mod assemble;
mod fuse;
mod pool;
mod post;
mod score;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::embed::{embed, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::ingest::TimeSeries;
use crate::interval::DetectionSet;
use crate::par::{self, Parallelism};
use crate::raster::{default_stride, make_windows, render_window, RasterImage, WindowSpec};

pub use assemble::{assemble_map, patch_column_start, AnomalyMap2D};
pub use fuse::{fuse_scales, harmonic_mean, upsample_bilinear, HARMONIC_EPS};
pub use pool::{pool, pool_multiscale, FlattenedGrid, ScaleSet};
pub use post::{
    collapse, extract_intervals, inverse_normal_cdf, mean_std, quantile, smooth_ewma, threshold,
    upper_tail_z,
};
pub use score::{
    median_reference, score_against_reference, score_all_pairs, score_median_reference,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Compare against one slot-wise median grid per scale.
    #[default]
    MedianReference,
    /// Compare against every other window, then take the median.
    AllPairs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScreenConfig {
    pub window_length: usize,
    /// Defaults to a quarter window.
    pub stride: Option<usize>,
    pub scales: Vec<usize>,
    pub quantile_q: f64,
    pub variant: Variant,
    /// Leave window `i` out of its own median reference.
    pub exclude_self: bool,
    /// EWMA span applied to the collapsed score; 1 disables smoothing.
    pub ewma_span: usize,
    pub alpha_list: Vec<f64>,
    /// Operating point used for the proposals handed to verification.
    pub proposal_alpha: f64,
    pub gap_merge: usize,
}

impl Default for ScreenConfig {
    fn default() -> Self {
        ScreenConfig {
            window_length: 224,
            stride: None,
            scales: vec![1, 2, 3],
            quantile_q: 0.25,
            variant: Variant::MedianReference,
            exclude_self: false,
            ewma_span: 10,
            alpha_list: vec![0.10, 0.01, 0.001],
            proposal_alpha: 0.10,
            gap_merge: 0,
        }
    }
}

impl ScreenConfig {
    pub fn stride(&self) -> usize {
        self.stride
            .unwrap_or_else(|| default_stride(self.window_length))
    }

    pub fn scale_set(&self) -> Result<ScaleSet> {
        ScaleSet::new(self.scales.clone())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.window_length < 8 {
            return bad(format!("window_length {} below 8", self.window_length));
        }
        if self.stride() == 0 {
            return bad("stride must be at least 1".into());
        }
        self.scale_set().map_err(|e| Error::Config(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.quantile_q) {
            return bad(format!("quantile_q {} outside [0, 1]", self.quantile_q));
        }
        if self.ewma_span == 0 {
            return bad("ewma_span must be at least 1".into());
        }
        if self.alpha_list.is_empty() {
            return bad("alpha_list is empty".into());
        }
        for &a in self.alpha_list.iter().chain([&self.proposal_alpha]) {
            if !(a > 0.0 && a < 0.5) {
                return bad(format!("alpha {a} outside (0, 0.5)"));
            }
        }
        Ok(())
    }
}

/// Everything the screening stage computes for one series.
#[derive(Debug, Clone)]
pub struct ScreenOutput {
    pub windows: WindowSpec,
    pub y_limits: (f64, f64),
    pub map: AnomalyMap2D,
    /// Collapsed score before smoothing.
    pub raw_scores: Vec<f64>,
    /// Score after EWMA smoothing, the input to thresholding.
    pub scores: Vec<f64>,
    pub tau: f64,
    pub proposals: DetectionSet,
}

/// Shared y-limits for every window: the series range, widened by 0.5 on
/// each side when the series is flat.
pub fn series_limits(series: &TimeSeries) -> (f64, f64) {
    let (lo, hi) = series.range();
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

/// Window samples, right-padded with the last value when the series is
/// shorter than one window.
pub fn window_segment(series: &TimeSeries, spec: &WindowSpec, start: usize) -> Vec<f64> {
    let valid = spec.valid_len(start);
    let mut seg = series.values()[start..start + valid].to_vec();
    let last = *seg.last().expect("window holds at least one sample");
    seg.resize(spec.window_length, last);
    seg
}

/// Renders every window of `series` under shared y-limits.
pub fn render_windows(
    series: &TimeSeries,
    spec: &WindowSpec,
    mode: Parallelism,
) -> Result<Vec<RasterImage>> {
    let limits = series_limits(series);
    par::map(&spec.starts, mode, |&start| {
        render_window(
            &window_segment(series, spec, start),
            limits,
            spec.window_length,
        )
    })
    .into_iter()
    .collect()
}

/// Per-scale score vectors for every window.
pub fn score_windows(
    by_scale: &BTreeMap<usize, Vec<FlattenedGrid>>,
    variant: Variant,
    exclude_self: bool,
    mode: Parallelism,
) -> Result<Vec<BTreeMap<usize, Vec<f64>>>> {
    let n = by_scale.values().next().map_or(0, Vec::len);
    if n < 2 {
        return Err(Error::InsufficientWindows { n });
    }
    let mut per_window: Vec<BTreeMap<usize, Vec<f64>>> = vec![BTreeMap::new(); n];
    for (&k, grids) in by_scale {
        let scores: Vec<Result<Vec<f64>>> = match (variant, exclude_self) {
            (Variant::AllPairs, _) => par::map_range(n, mode, |i| score_all_pairs(grids, i)),
            (Variant::MedianReference, true) => {
                par::map_range(n, mode, |i| score_median_reference(grids, i, true))
            }
            (Variant::MedianReference, false) => {
                let reference = median_reference(grids, None)?;
                par::map(grids, mode, |g| Ok(score_against_reference(g, &reference)))
            }
        };
        for (slot, s) in per_window.iter_mut().zip(scores) {
            slot.insert(k, s?);
        }
    }
    Ok(per_window)
}

/// Runs the whole screening stage on an already preprocessed series.
pub fn screen_series(
    series: &TimeSeries,
    provider: &dyn EmbeddingProvider,
    config: &ScreenConfig,
    mode: Parallelism,
) -> Result<ScreenOutput> {
    config.validate()?;
    let id = provider.id();
    if id.input_side != config.window_length {
        return Err(Error::Config(format!(
            "provider {} expects {}-pixel rasters but window_length is {}",
            id.name, id.input_side, config.window_length
        )));
    }
    let scales = config.scale_set()?;
    if scales.max() > id.p {
        return Err(Error::Config(format!(
            "largest kernel {} exceeds patch grid side {}",
            scales.max(),
            id.p
        )));
    }

    let windows = make_windows(series.len(), config.window_length, config.stride())?;
    if windows.count() < 2 {
        return Err(Error::InsufficientWindows { n: windows.count() });
    }
    let y_limits = series_limits(series);

    let pooled: Vec<BTreeMap<usize, FlattenedGrid>> = par::map(&windows.starts, mode, |&start| {
        let seg = window_segment(series, &windows, start);
        let img = render_window(&seg, y_limits, windows.window_length)?;
        let features = embed(&img, provider)?;
        pool_multiscale(&features, &scales)
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let mut by_scale: BTreeMap<usize, Vec<FlattenedGrid>> = BTreeMap::new();
    for window in pooled {
        for (k, grid) in window {
            by_scale.entry(k).or_default().push(grid);
        }
    }

    let scores = score_windows(&by_scale, config.variant, config.exclude_self, mode)?;
    let fused: Vec<Vec<f64>> = par::map(&scores, mode, |s| fuse_scales(s, id.p))
        .into_iter()
        .collect::<Result<_>>()?;

    let map = assemble_map(&fused, &windows, id.p)?;
    let raw_scores = collapse(&map, config.quantile_q)?;
    let scores = smooth_ewma(&raw_scores, config.ewma_span)?;
    let tau = threshold(&scores, config.proposal_alpha)?;
    let proposals = extract_intervals(&scores, tau, config.gap_merge);

    Ok(ScreenOutput {
        windows,
        y_limits,
        map,
        raw_scores,
        scores,
        tau,
        proposals,
    })
}
