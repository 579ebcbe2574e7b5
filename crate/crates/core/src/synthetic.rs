//! Seeded synthetic series: a noisy sinusoid with one spike and one level
//! shift injected at random, non-overlapping positions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{LabelSet, TimeSeries};
use crate::interval::Interval;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub length: usize,
    pub period: f64,
    pub amplitude: f64,
    pub noise_std: f64,
    /// Spike height added on top of the signal.
    pub spike_height: f64,
    /// Samples the spike spans.
    pub spike_width: usize,
    pub shift_len: usize,
    pub shift_height: f64,
    /// No anomaly starts within this many steps of either end.
    pub margin: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            length: 2000,
            period: 50.0,
            amplitude: 1.0,
            noise_std: 0.2,
            spike_height: 6.0,
            spike_width: 3,
            shift_len: 50,
            shift_height: 4.0,
            margin: 250,
        }
    }
}

/// A generated series with its ground-truth anomaly intervals.
#[derive(Debug, Clone)]
pub struct SyntheticSeries {
    pub series: TimeSeries,
    pub labels: LabelSet,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        let room = self.length.saturating_sub(2 * self.margin);
        if room < 2 * (self.shift_len + self.spike_width) + 2 {
            return Err(Error::invalid_arg(format!(
                "length {} leaves no room for both anomalies",
                self.length
            )));
        }
        if !(self.noise_std >= 0.0 && self.period > 0.0)
            || self.spike_width == 0
            || self.shift_len == 0
        {
            return Err(Error::invalid_arg("bad synthetic parameters"));
        }
        Ok(())
    }

    /// Series number `index` of the suite seeded by `seed`.
    pub fn generate(&self, seed: u64, index: usize) -> Result<SyntheticSeries> {
        self.validate()?;
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let noise =
            Normal::new(0.0, self.noise_std).map_err(|e| Error::invalid_arg(e.to_string()))?;
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let mut values: Vec<f64> = (0..self.length)
            .map(|t| {
                self.amplitude * (std::f64::consts::TAU * t as f64 / self.period + phase).sin()
                    + noise.sample(&mut rng)
            })
            .collect();

        let lo = self.margin;
        let hi = self.length - self.margin;
        let shift_start = rng.random_range(lo..hi - self.shift_len);
        let shift = Interval::new(shift_start, shift_start + self.shift_len - 1);
        let gap = self.shift_len;
        let spike = loop {
            let s = rng.random_range(lo..hi - self.spike_width);
            let iv = Interval::new(s, s + self.spike_width - 1);
            let padded = Interval::new(shift.start.saturating_sub(gap), shift.end + gap);
            if !iv.overlaps(&padded) {
                break iv;
            }
        };

        for v in &mut values[shift.start..=shift.end] {
            *v += self.shift_height;
        }
        for v in &mut values[spike.start..=spike.end] {
            *v += self.spike_height;
        }
        Ok(SyntheticSeries {
            series: TimeSeries::new(format!("synthetic-{index:03}"), values)?,
            labels: LabelSet::new(vec![spike, shift]),
        })
    }

    /// `n` series from one seed.
    pub fn suite(&self, seed: u64, n: usize) -> Result<Vec<SyntheticSeries>> {
        (0..n).map(|i| self.generate(seed, i)).collect()
    }
}
