//! Line-plot rasterization.
//!
//! Screening rasters are square, axis-free plots with one pixel column per
//! time step and y-limits shared across every window of a series. The
//! annotated plot is the full series on a single canvas with tick-labelled
//! axes, sized for a multimodal model to read interval boundaries off it.
//!
//! All drawing is integer-only with no anti-aliasing, so output is
//! bit-identical across runs and platforms.

mod font;
mod image;
mod plot;
mod window;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::TimeSeries;

pub use self::font::{draw_text, text_width};
pub use self::image::{RasterImage, INK, PAPER};
pub use self::plot::render_result_plot;
pub use self::window::{default_stride, make_windows, WindowSpec};

/// Maps `value` to a pixel row in `[0, rows - 1]`, row 0 at `hi`.
pub fn value_to_row(value: f64, lo: f64, hi: f64, rows: usize) -> usize {
    let frac = (hi - value) / (hi - lo);
    let r = (frac * (rows - 1) as f64).round();
    r.clamp(0.0, (rows - 1) as f64) as usize
}

/// Renders one window as an `L x L` line plot.
///
/// Sample `c` lands in column `c`. Each column after the first is filled from
/// its own sample's row up to, but excluding, the previous sample's row, so
/// consecutive samples are joined by a one-pixel vertical stroke.
pub fn render_window(segment: &[f64], y_limits: (f64, f64), side: usize) -> Result<RasterImage> {
    if segment.len() != side {
        return Err(Error::invalid_arg(format!(
            "segment has {} samples for a {side}-pixel raster",
            segment.len()
        )));
    }
    let (lo, hi) = y_limits;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::invalid_arg(format!(
            "degenerate y-limits ({lo}, {hi})"
        )));
    }

    let mut img = RasterImage::blank(side, side);
    let mut prev: Option<usize> = None;
    for (c, &v) in segment.iter().enumerate() {
        let row = value_to_row(v, lo, hi, side);
        match prev {
            Some(p) if p > row => img.vline(c, row, p - 1, INK),
            Some(p) if p < row => img.vline(c, p + 1, row, INK),
            _ => img.set(c, row, INK),
        }
        prev = Some(row);
    }
    Ok(img)
}

/// Geometry of the annotated full-series plot. `width` and `height` are the
/// plotting area; axis labels are drawn in margins outside it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnnotatedPlotSpec {
    pub width: usize,
    pub height: usize,
    pub ticks: usize,
    pub y_precision: usize,
}

impl Default for AnnotatedPlotSpec {
    fn default() -> Self {
        AnnotatedPlotSpec {
            width: 1024,
            height: 512,
            ticks: 11,
            y_precision: 2,
        }
    }
}

impl AnnotatedPlotSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width < 64 || self.height < 64 {
            return Err(Error::invalid_arg(format!(
                "annotated canvas {}x{} smaller than 64x64",
                self.width, self.height
            )));
        }
        if self.ticks < 2 {
            return Err(Error::invalid_arg("need at least 2 x-axis ticks"));
        }
        Ok(())
    }

    /// Evenly spaced tick indices with the first at 0 and the last at `T-1`.
    pub fn tick_positions(&self, series_len: usize) -> Vec<usize> {
        let n = self.ticks.max(2);
        let last = (series_len - 1) as f64;
        let mut ticks: Vec<usize> = (0..n)
            .map(|i| (i as f64 * last / (n - 1) as f64).round() as usize)
            .collect();
        ticks.dedup();
        ticks
    }
}

/// Where things were placed on an annotated canvas.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedLayout {
    /// Top-left corner of the plotting area.
    pub origin: (usize, usize),
    pub canvas: (usize, usize),
    /// `(time index, canvas column, label)` per x tick.
    pub x_ticks: Vec<(usize, usize, String)>,
    /// `(canvas row, label)` for min, mid, and max.
    pub y_labels: Vec<(usize, String)>,
    pub y_limits: (f64, f64),
}

const MARGIN_TOP: usize = 8;
const MARGIN_GAP: usize = 6;
const TICK_LEN: usize = 4;

/// Plot-area column holding sample `t`.
fn sample_column(t: usize, series_len: usize, width: usize) -> usize {
    (t * width / series_len).min(width - 1)
}

fn padded_limits(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

pub fn annotated_layout(series: &TimeSeries, spec: &AnnotatedPlotSpec) -> Result<AnnotatedLayout> {
    spec.validate()?;
    let t_len = series.len();
    let (lo, hi) = padded_limits(series.range().0, series.range().1);
    let mid = (lo + hi) / 2.0;
    let fmt = |v: f64| format!("{:.*}", spec.y_precision, v);
    let y_texts = [fmt(hi), fmt(mid), fmt(lo)];
    let label_w = y_texts.iter().map(|s| text_width(s)).max().unwrap_or(0);

    let ticks = spec.tick_positions(t_len);
    let last_label_w = text_width(&ticks.last().copied().unwrap_or(0).to_string());
    let left = label_w + MARGIN_GAP + TICK_LEN + 2;
    let right = last_label_w / 2 + MARGIN_GAP;
    let bottom = 1 + TICK_LEN + 2 + font::GLYPH_H + MARGIN_GAP;
    let origin = (left, MARGIN_TOP);
    let canvas = (left + spec.width + right, MARGIN_TOP + spec.height + bottom);

    let x_ticks = ticks
        .into_iter()
        .map(|t| (t, left + sample_column(t, t_len, spec.width), t.to_string()))
        .collect();
    let y_labels = [hi, mid, lo]
        .iter()
        .zip(y_texts)
        .map(|(&v, text)| (MARGIN_TOP + value_to_row(v, lo, hi, spec.height), text))
        .collect();
    Ok(AnnotatedLayout {
        origin,
        canvas,
        x_ticks,
        y_labels,
        y_limits: (lo, hi),
    })
}

/// Draws `values` as a polyline into the `width x height` area at `origin`.
///
/// Each sample `t` sits in column `floor(t * width / T)`. Consecutive samples
/// in the same column extend that column's vertical band; a step into a later
/// column is interpolated across the intermediate columns. Every sample's row
/// is always drawn, so series extremes survive down-sampling.
pub(crate) fn draw_polyline(
    img: &mut RasterImage,
    origin: (usize, usize),
    width: usize,
    height: usize,
    values: &[f64],
    y_limits: (f64, f64),
    level: u8,
) {
    let (ox, oy) = origin;
    let (lo, hi) = y_limits;
    let n = values.len();
    let mut prev: Option<(usize, usize)> = None;
    for (t, &v) in values.iter().enumerate() {
        let col = sample_column(t, n, width);
        let row = value_to_row(v, lo, hi, height);
        match prev {
            None => img.set(ox + col, oy + row, level),
            Some((pc, pr)) if pc == col => img.vline(ox + col, oy + pr, oy + row, level),
            Some((pc, pr)) => {
                let span = (col - pc) as f64;
                let mut last_row = pr;
                for x in pc + 1..=col {
                    let frac = (x - pc) as f64 / span;
                    let r = (pr as f64 + (row as f64 - pr as f64) * frac).round() as usize;
                    img.vline(ox + x, oy + last_row, oy + r, level);
                    last_row = r;
                }
            }
        }
        prev = Some((col, row));
    }
}

/// Renders the whole series with x ticks labelled by time index and y labels
/// at the min, midpoint, and max.
pub fn render_full_annotated(series: &TimeSeries, spec: &AnnotatedPlotSpec) -> Result<RasterImage> {
    let layout = annotated_layout(series, spec)?;
    let (ox, oy) = layout.origin;
    let mut img = RasterImage::blank(layout.canvas.0, layout.canvas.1);

    // Axes sit just outside the plotting area.
    let axis_row = oy + spec.height;
    img.vline(ox - 1, oy, axis_row, INK);
    img.hline(axis_row, ox - 1, ox + spec.width - 1, INK);

    for (_, px, label) in &layout.x_ticks {
        img.vline(*px, axis_row + 1, axis_row + TICK_LEN, INK);
        let w = text_width(label);
        let x = px
            .saturating_sub(w / 2)
            .min(layout.canvas.0.saturating_sub(w));
        draw_text(&mut img, x, axis_row + TICK_LEN + 3, label, INK);
    }
    for (row, label) in &layout.y_labels {
        img.hline(*row, ox - 1 - TICK_LEN, ox - 2, INK);
        let w = text_width(label);
        let x = ox - 1 - TICK_LEN - 2 - w;
        let y = row.saturating_sub(font::GLYPH_H / 2);
        draw_text(&mut img, x, y, label, INK);
    }

    draw_polyline(
        &mut img,
        layout.origin,
        spec.width,
        spec.height,
        series.values(),
        layout.y_limits,
        INK,
    );
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dark_rows(img: &RasterImage, x: usize) -> Vec<usize> {
        (0..img.height()).filter(|&y| img.is_dark(x, y)).collect()
    }

    #[test]
    fn constant_at_low_limit_is_bottom_line() {
        let img = render_window(&[0.0; 16], (0.0, 1.0), 16).unwrap();
        for x in 0..16 {
            assert_eq!(dark_rows(&img, x), vec![15]);
        }
    }

    #[test]
    fn two_pixel_trace() {
        // Column 0: row 1 (value lo). Column 1: row 0 (value hi); the fill
        // runs from row 0 up to but excluding row 1, i.e. just row 0.
        let img = render_window(&[0.0, 1.0], (0.0, 1.0), 2).unwrap();
        assert_eq!(dark_rows(&img, 0), vec![1]);
        assert_eq!(dark_rows(&img, 1), vec![0]);
    }

    #[test]
    fn fill_spans_intermediate_rows() {
        let img = render_window(&[0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0], (0.0, 1.0), 8).unwrap();
        assert_eq!(dark_rows(&img, 0), vec![7]);
        assert_eq!(dark_rows(&img, 1), vec![0, 1, 2, 3, 4, 5, 6]);
        assert_eq!(dark_rows(&img, 2), vec![0]);
    }

    #[test]
    fn periodic_windows_render_identically() {
        let period = 20;
        let series: Vec<f64> = (0..200)
            .map(|t| (2.0 * std::f64::consts::PI * (t % period) as f64 / period as f64).sin())
            .collect();
        let a = render_window(&series[10..42], (-1.0, 1.0), 32).unwrap();
        let b = render_window(&series[30..62], (-1.0, 1.0), 32).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_wrong_length_and_limits() {
        assert!(render_window(&[0.0; 7], (0.0, 1.0), 8).is_err());
        assert!(render_window(&[0.0; 8], (1.0, 1.0), 8).is_err());
    }

    #[test]
    fn ticks_pin_endpoints() {
        let spec = AnnotatedPlotSpec::default();
        let ticks = spec.tick_positions(1000);
        assert_eq!(
            ticks,
            vec![0, 100, 200, 300, 400, 500, 599, 699, 799, 899, 999]
        );
    }

    #[test]
    fn small_canvas_rejected() {
        let s = TimeSeries::new("x", vec![0.0, 1.0]).unwrap();
        let spec = AnnotatedPlotSpec {
            width: 63,
            ..Default::default()
        };
        assert!(render_full_annotated(&s, &spec).is_err());
    }
}
