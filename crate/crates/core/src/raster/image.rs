use std::fs;
use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};

/// Gray level of the drawn line.
pub const INK: u8 = 0;
/// Gray level of the empty canvas.
pub const PAPER: u8 = 255;

/// A grayscale raster whose three color channels are identical.
///
/// Pixels are stored once as 8-bit levels (0 = dark, 255 = light), row 0 at
/// the top. [`RasterImage::intensity`] exposes them on the `[0, 1]` scale and
/// [`RasterImage::to_png`] writes the channel-replicated RGB form.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RasterImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl RasterImage {
    pub const CHANNELS: usize = 3;

    /// A canvas filled with the background level.
    pub fn blank(width: usize, height: usize) -> Self {
        RasterImage {
            width,
            height,
            pixels: vec![PAPER; width * height],
        }
    }

    pub fn from_levels(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::invalid_arg(format!(
                "{} pixels for a {width}x{height} raster",
                pixels.len()
            )));
        }
        Ok(RasterImage {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        Self::CHANNELS
    }

    pub fn levels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn level(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn intensity(&self, x: usize, y: usize) -> f64 {
        f64::from(self.level(x, y)) / 255.0
    }

    pub fn is_dark(&self, x: usize, y: usize) -> bool {
        self.level(x, y) < 128
    }

    pub fn set(&mut self, x: usize, y: usize, level: u8) {
        if x < self.width && y < self.height {
            self.pixels[y * self.width + x] = level;
        }
    }

    /// Sets every pixel of column `x` between rows `a` and `b` inclusive.
    pub fn vline(&mut self, x: usize, a: usize, b: usize, level: u8) {
        for y in a.min(b)..=a.max(b) {
            self.set(x, y, level);
        }
    }

    pub fn hline(&mut self, y: usize, a: usize, b: usize, level: u8) {
        for x in a.min(b)..=a.max(b) {
            self.set(x, y, level);
        }
    }

    /// Mirror image across the vertical axis.
    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for y in 0..self.height {
            let row = &mut out.pixels[y * self.width..(y + 1) * self.width];
            row.reverse();
        }
        out
    }

    /// RGB8 PNG with the gray level replicated across channels.
    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut buf, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc.write_header().map_err(|e| Error::Png(e.to_string()))?;
            let rgb: Vec<u8> = self.pixels.iter().flat_map(|&v| [v, v, v]).collect();
            writer
                .write_image_data(&rgb)
                .map_err(|e| Error::Png(e.to_string()))?;
            writer.finish().map_err(|e| Error::Png(e.to_string()))?;
        }
        Ok(buf)
    }

    /// Decodes an 8-bit gray, gray-alpha, RGB, or RGBA PNG; only the first
    /// channel is kept.
    pub fn from_png(bytes: &[u8]) -> Result<Self> {
        let decoder = png::Decoder::new(Cursor::new(bytes));
        let mut reader = decoder.read_info().map_err(|e| Error::Png(e.to_string()))?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| Error::Png("image too large".into()))?;
        let mut buf = vec![0; size];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| Error::Png(e.to_string()))?;
        if info.bit_depth != png::BitDepth::Eight {
            return Err(Error::Png(format!(
                "unsupported bit depth {:?}",
                info.bit_depth
            )));
        }
        let stride = match info.color_type {
            png::ColorType::Grayscale => 1,
            png::ColorType::GrayscaleAlpha => 2,
            png::ColorType::Rgb => 3,
            png::ColorType::Rgba => 4,
            other => return Err(Error::Png(format!("unsupported color type {other:?}"))),
        };
        let (w, h) = (info.width as usize, info.height as usize);
        let mut pixels = Vec::with_capacity(w * h);
        for y in 0..h {
            let line = &buf[y * info.line_size..y * info.line_size + w * stride];
            pixels.extend(line.chunks(stride).map(|px| px[0]));
        }
        RasterImage::from_levels(w, h, pixels)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_png()?).map_err(|e| Error::io(path, e))
    }
}
