//! From anomaly map to intervals: quantile collapse, EWMA smoothing,
//! Gaussian-quantile thresholding, and run extraction.

use super::assemble::AnomalyMap2D;
use crate::error::{Error, Result};
use crate::interval::{DetectionSet, Interval};

/// Linear-interpolation quantile at position `(n-1) q` of the sorted values.
pub fn quantile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let pos = (n - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    values[lo] + (values[hi] - values[lo]) * frac
}

/// `s(t)` = the `q`-quantile of the valid rows of column `t`. Columns with
/// no coverage score 0.
pub fn collapse(map: &AnomalyMap2D, q: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::invalid_arg(format!("quantile {q} outside [0, 1]")));
    }
    let mut empty = 0usize;
    let s = (0..map.cols())
        .map(|t| {
            let mut col = map.column(t);
            if col.is_empty() {
                empty += 1;
                0.0
            } else {
                quantile(&mut col, q)
            }
        })
        .collect();
    if empty > 0 {
        log::warn!("{empty} time step(s) had no map coverage; scored 0");
    }
    Ok(s)
}

/// Recursive EWMA with weight `2 / (span + 1)`, seeded with the first value.
pub fn smooth_ewma(s: &[f64], span: usize) -> Result<Vec<f64>> {
    if span == 0 {
        return Err(Error::invalid_arg("EWMA span must be at least 1"));
    }
    let w = 2.0 / (span as f64 + 1.0);
    let mut out = Vec::with_capacity(s.len());
    let mut prev: Option<f64> = None;
    for &x in s {
        let y = match prev {
            None => x,
            Some(p) => w * x + (1.0 - w) * p,
        };
        out.push(y);
        prev = Some(y);
    }
    Ok(out)
}

/// Standard normal quantile function (Wichura's AS 241, about 1e-16 relative
/// accuracy).
pub fn inverse_normal_cdf(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    fn poly(c: &[f64], x: f64) -> f64 {
        c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
    }
    const A: [f64; 8] = [
        3.387_132_872_796_366_6,
        133.141_667_891_784_38,
        1_971.590_950_306_551_4,
        13_731.693_765_509_461,
        45_921.953_931_549_87,
        67_265.770_927_008_7,
        33_430.575_583_588_13,
        2_509.080_928_730_122_7,
    ];
    const B: [f64; 8] = [
        1.0,
        42.313_330_701_600_91,
        687.187_007_492_057_9,
        5_394.196_021_424_751,
        21_213.794_301_586_597,
        39_307.895_800_092_71,
        28_729.085_735_721_943,
        5_226.495_278_852_854_5,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_6,
        4.630_337_846_156_545,
        5.769_497_221_460_691,
        3.647_848_324_763_204_5,
        1.270_458_252_452_368_4,
        0.241_780_725_177_450_6,
        0.022_723_844_989_269_184,
        7.745_450_142_783_414e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_759,
        1.676_384_830_183_803_8,
        0.689_767_334_985_1,
        0.148_103_976_427_480_08,
        0.015_198_666_563_616_457,
        5.475_938_084_995_345e-4,
        1.050_750_071_644_416_8e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_104,
        5.463_784_911_164_114,
        1.784_826_539_917_291_3,
        0.296_560_571_828_504_9,
        0.026_532_189_526_576_124,
        0.001_242_660_947_388_078_4,
        2.711_555_568_743_487_6e-5,
        2.010_334_399_292_288_1e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        0.599_832_206_555_887_9,
        0.136_929_880_922_735_8,
        0.014_875_361_290_850_615,
        7.868_691_311_456_133e-4,
        1.846_318_317_510_054_8e-5,
        1.421_511_758_316_446e-7,
        2.044_263_103_389_939_7e-15,
    ];

    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        let r = r - 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        let r = r - 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// Upper-tail standard normal deviate: `P(Z > z) = alpha`.
pub fn upper_tail_z(alpha: f64) -> f64 {
    inverse_normal_cdf(1.0 - alpha)
}

/// Population mean and standard deviation.
pub fn mean_std(s: &[f64]) -> (f64, f64) {
    if s.windows(2).all(|w| w[0] == w[1]) {
        return (s.first().copied().unwrap_or(f64::NAN), 0.0);
    }
    let n = s.len() as f64;
    let mean = s.iter().sum::<f64>() / n;
    let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `tau = mean(s) + z_alpha * std(s)`. A constant series gives `tau = mean`.
pub fn threshold(s: &[f64], alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::invalid_arg(format!(
            "alpha {alpha} outside (0, 0.5)"
        )));
    }
    if s.is_empty() {
        return Err(Error::invalid_arg("cannot threshold an empty score series"));
    }
    let (mean, std) = mean_std(s);
    Ok(mean + upper_tail_z(alpha) * std)
}

/// Maximal runs with `s(t) > tau`; runs separated by at most `gap_merge`
/// sub-threshold steps are joined.
pub fn extract_intervals(s: &[f64], tau: f64, gap_merge: usize) -> DetectionSet {
    let mut runs: Vec<Interval> = Vec::new();
    let mut start: Option<usize> = None;
    for (t, &v) in s.iter().enumerate() {
        match (v > tau, start) {
            (true, None) => start = Some(t),
            (false, Some(st)) => {
                runs.push(Interval::new(st, t - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(st) = start {
        runs.push(Interval::new(st, s.len() - 1));
    }

    let mut merged: Vec<Interval> = Vec::with_capacity(runs.len());
    for run in runs {
        match merged.last_mut() {
            Some(last) if run.start - last.end - 1 <= gap_merge => last.end = run.end,
            _ => merged.push(run),
        }
    }
    DetectionSet::from_intervals(merged)
}
