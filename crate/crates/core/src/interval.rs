//! Inclusive integer time intervals and ordered detection sets.

use serde::{Deserialize, Serialize};

/// An inclusive `[start, end]` range of time indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Interval {
    pub start: usize,
    pub end: usize,
}

impl Interval {
    /// Builds an interval, swapping the endpoints if they arrive reversed.
    pub fn new(a: usize, b: usize) -> Self {
        Interval {
            start: a.min(b),
            end: a.max(b),
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// True when the two intervals share at least one integer index.
    pub fn overlaps(&self, other: &Interval) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    pub fn contains(&self, t: usize) -> bool {
        self.start <= t && t <= self.end
    }
}

/// Sorted, disjoint intervals with an optional confidence (1..=3) each.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionSet {
    intervals: Vec<Interval>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    confidence: Option<Vec<u8>>,
}

impl DetectionSet {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds a set from arbitrary intervals: sorts and merges overlapping ones.
    pub fn from_intervals(mut intervals: Vec<Interval>) -> Self {
        intervals.sort();
        let mut merged: Vec<Interval> = Vec::with_capacity(intervals.len());
        for iv in intervals {
            match merged.last_mut() {
                Some(last) if iv.start <= last.end => last.end = last.end.max(iv.end),
                _ => merged.push(iv),
            }
        }
        DetectionSet {
            intervals: merged,
            confidence: None,
        }
    }

    /// Builds a set with per-interval confidence. Overlapping intervals are
    /// merged and keep the highest confidence among their parts.
    pub fn with_confidence(pairs: Vec<(Interval, u8)>) -> Self {
        let mut pairs = pairs;
        pairs.sort();
        let mut intervals: Vec<Interval> = Vec::with_capacity(pairs.len());
        let mut conf: Vec<u8> = Vec::with_capacity(pairs.len());
        for (iv, c) in pairs {
            match (intervals.last_mut(), conf.last_mut()) {
                (Some(last), Some(lc)) if iv.start <= last.end => {
                    last.end = last.end.max(iv.end);
                    *lc = (*lc).max(c);
                }
                _ => {
                    intervals.push(iv);
                    conf.push(c);
                }
            }
        }
        DetectionSet {
            intervals,
            confidence: Some(conf),
        }
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn confidence(&self) -> Option<&[u8]> {
        self.confidence.as_deref()
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    /// Drops confidence annotations, keeping only the intervals.
    pub fn without_confidence(&self) -> Self {
        DetectionSet {
            intervals: self.intervals.clone(),
            confidence: None,
        }
    }

    /// Number of time indices covered by the set.
    pub fn point_count(&self) -> usize {
        self.intervals.iter().map(Interval::len).sum()
    }

    pub fn covers(&self, t: usize) -> bool {
        self.intervals.iter().any(|iv| iv.contains(t))
    }
}
