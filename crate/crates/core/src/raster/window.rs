use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rolling-window layout over a series of length `series_len`.
///
/// When the series is shorter than one window there is a single window at 0
/// whose trailing `window_length - series_len` columns are padding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub window_length: usize,
    pub stride: usize,
    pub series_len: usize,
    pub starts: Vec<usize>,
}

impl WindowSpec {
    pub fn count(&self) -> usize {
        self.starts.len()
    }

    /// Number of real (non-padded) samples in the window starting at `start`.
    pub fn valid_len(&self, start: usize) -> usize {
        self.window_length.min(self.series_len - start)
    }

    pub fn is_padded(&self) -> bool {
        self.series_len < self.window_length
    }
}

/// Default stride: a quarter of the window length, at least 1.
pub fn default_stride(window_length: usize) -> usize {
    (window_length / 4).max(1)
}

/// Starts at `0, stride, 2*stride, ...` while the window fits, then one
/// terminal window flush with the end if the regular ones leave a tail.
pub fn make_windows(series_len: usize, window_length: usize, stride: usize) -> Result<WindowSpec> {
    if series_len == 0 {
        return Err(Error::invalid_arg("series length must be positive"));
    }
    if window_length < 8 {
        return Err(Error::invalid_arg(format!(
            "window length {window_length} below minimum of 8"
        )));
    }
    if stride == 0 {
        return Err(Error::invalid_arg("stride must be at least 1"));
    }

    let starts = if series_len <= window_length {
        vec![0]
    } else {
        let last_regular = series_len - window_length;
        let mut starts: Vec<usize> = (0..=last_regular).step_by(stride).collect();
        if *starts.last().expect("at least start 0") != last_regular {
            starts.push(last_regular);
        }
        starts
    };
    Ok(WindowSpec {
        window_length,
        stride,
        series_len,
        starts,
    })
}
