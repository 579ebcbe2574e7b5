use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Floor applied to each score before taking its reciprocal, so exact zeros
/// dominate the harmonic mean instead of dividing by zero.
pub const HARMONIC_EPS: f64 = 1e-8;

/// Bilinear upsampling of an `m x m` map (pooled with kernel `k`) onto the
/// `p x p` base grid. Pooled cell `i` is centred on base position
/// `i + (k-1)/2`; positions outside the pooled centres clamp to the edge.
pub fn upsample_bilinear(values: &[f64], m: usize, k: usize, p: usize) -> Vec<f64> {
    debug_assert_eq!(values.len(), m * m);
    if m == p {
        return values.to_vec();
    }
    let offset = (k as f64 - 1.0) / 2.0;
    let coord = |x: usize| -> (usize, usize, f64) {
        let src = (x as f64 - offset).clamp(0.0, (m - 1) as f64);
        let lo = src.floor() as usize;
        let hi = (lo + 1).min(m - 1);
        (lo, hi, src - lo as f64)
    };
    let mut out = Vec::with_capacity(p * p);
    for r in 0..p {
        let (r0, r1, fr) = coord(r);
        for c in 0..p {
            let (c0, c1, fc) = coord(c);
            let top = values[r0 * m + c0] * (1.0 - fc) + values[r0 * m + c1] * fc;
            let bottom = values[r1 * m + c0] * (1.0 - fc) + values[r1 * m + c1] * fc;
            out.push(top * (1.0 - fr) + bottom * fr);
        }
    }
    out
}

/// Harmonic mean with each term floored at [`HARMONIC_EPS`].
pub fn harmonic_mean(values: &[f64]) -> f64 {
    let denom: f64 = values.iter().map(|&v| 1.0 / v.max(HARMONIC_EPS)).sum();
    values.len() as f64 / denom
}

/// Upsamples each scale's score vector to `p x p` and fuses them per patch
/// with the harmonic mean. Keys are kernel sizes.
pub fn fuse_scales(scores: &BTreeMap<usize, Vec<f64>>, p: usize) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::invalid_arg("no scale scores to fuse"));
    }
    let mut upsampled = Vec::with_capacity(scores.len());
    for (&k, s) in scores {
        if k == 0 || k > p {
            return Err(Error::invalid_arg(format!(
                "kernel {k} invalid for side {p}"
            )));
        }
        let m = p - k + 1;
        if s.len() != m * m {
            return Err(Error::invalid_arg(format!(
                "scale {k} has {} scores, expected {}",
                s.len(),
                m * m
            )));
        }
        upsampled.push(upsample_bilinear(s, m, k, p));
    }
    let mut terms = vec![0.0; upsampled.len()];
    Ok((0..p * p)
        .map(|idx| {
            for (t, u) in terms.iter_mut().zip(&upsampled) {
                *t = u[idx];
            }
            harmonic_mean(&terms)
        })
        .collect())
}
