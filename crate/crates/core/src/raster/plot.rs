use super::image::{RasterImage, INK, PAPER};
use super::{draw_polyline, padded_limits, value_to_row};
use crate::interval::{DetectionSet, Interval};

const LABEL_SHADE: u8 = 215;
const DETECTION_SHADE: u8 = 90;
const THRESHOLD_SHADE: u8 = 120;
const MARGIN: usize = 8;
const STRIP: usize = 6;

fn shade_columns(
    img: &mut RasterImage,
    x0: usize,
    y0: usize,
    h: usize,
    cols: (usize, usize),
    level: u8,
) {
    for x in cols.0..=cols.1 {
        for y in y0..y0 + h {
            if img.level(x0 + x, y) == PAPER {
                img.set(x0 + x, y, level);
            }
        }
    }
}

fn interval_columns(iv: &Interval, t_len: usize, width: usize) -> (usize, usize) {
    let a = (iv.start * width / t_len).min(width - 1);
    let b = (iv.end * width / t_len).min(width - 1);
    (a, b)
}

/// Result figure: the series on top and its anomaly score below, with
/// ground-truth intervals shaded light gray in both panels, detections as a
/// dark strip between the panels, and the threshold as a dashed line.
pub fn render_result_plot(
    series: &[f64],
    scores: &[f64],
    threshold: Option<f64>,
    detections: &DetectionSet,
    labels: &[Interval],
    width: usize,
    height: usize,
) -> RasterImage {
    let width = width.max(16);
    let panel_h = (height.max(64) - 3 * MARGIN - STRIP) / 2;
    let canvas_h = 3 * MARGIN + STRIP + 2 * panel_h;
    let mut img = RasterImage::blank(width + 2 * MARGIN, canvas_h);
    let t_len = series.len().max(1);

    let top = (MARGIN, MARGIN);
    let strip_y = MARGIN + panel_h + MARGIN / 2;
    let bottom = (MARGIN, strip_y + STRIP + MARGIN / 2);

    for iv in labels {
        let cols = interval_columns(iv, t_len, width);
        shade_columns(&mut img, MARGIN, top.1, panel_h, cols, LABEL_SHADE);
        shade_columns(&mut img, MARGIN, bottom.1, panel_h, cols, LABEL_SHADE);
    }
    for iv in detections.intervals() {
        let cols = interval_columns(iv, t_len, width);
        shade_columns(&mut img, MARGIN, strip_y, STRIP, cols, DETECTION_SHADE);
    }

    if !series.is_empty() {
        let (lo, hi) = series
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| {
                (l.min(v), h.max(v))
            });
        draw_polyline(
            &mut img,
            top,
            width,
            panel_h,
            series,
            padded_limits(lo, hi),
            INK,
        );
    }
    if !scores.is_empty() {
        let (mut lo, mut hi) = scores
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| {
                (l.min(v), h.max(v))
            });
        if let Some(tau) = threshold {
            lo = lo.min(tau);
            hi = hi.max(tau);
        }
        let limits = padded_limits(lo, hi);
        if let Some(tau) = threshold {
            let row = bottom.1 + value_to_row(tau, limits.0, limits.1, panel_h);
            for x in (0..width).filter(|x| x % 6 < 3) {
                img.set(MARGIN + x, row, THRESHOLD_SHADE);
            }
        }
        draw_polyline(&mut img, bottom, width, panel_h, scores, limits, INK);
    }
    img
}
