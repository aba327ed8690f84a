use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameKind {
    Science = 0,
    Reference = 1,
    Difference = 2,
}

impl FrameKind {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(FrameKind::Science),
            1 => Some(FrameKind::Reference),
            2 => Some(FrameKind::Difference),
            _ => None,
        }
    }
}

/// Single-band image with a row-major `f32` raster.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageFrame {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
    /// Arcseconds per pixel.
    pub pixel_scale: f32,
    /// Magnitude of a source with a total flux of one count.
    pub zero_point: f32,
    pub kind: FrameKind,
}

impl ImageFrame {
    pub const DEFAULT_PIXEL_SCALE: f32 = 1.2;
    pub const DEFAULT_ZERO_POINT: f32 = 25.0;

    pub fn new(width: usize, height: usize, pixels: Vec<f32>, kind: FrameKind) -> Result<Self> {
        Self::with_calibration(
            width,
            height,
            pixels,
            kind,
            Self::DEFAULT_PIXEL_SCALE,
            Self::DEFAULT_ZERO_POINT,
        )
    }

    pub fn with_calibration(
        width: usize,
        height: usize,
        pixels: Vec<f32>,
        kind: FrameKind,
        pixel_scale: f32,
        zero_point: f32,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!("frame size {width}x{height} is empty")));
        }
        if pixels.len() != width * height {
            return Err(Error::shape("frame pixels", width * height, pixels.len()));
        }
        if !(pixel_scale > 0.0) || !pixel_scale.is_finite() {
            return Err(Error::invalid(format!("pixel scale must be positive, got {pixel_scale}")));
        }
        if !zero_point.is_finite() {
            return Err(Error::invalid("zero point must be finite"));
        }
        Ok(ImageFrame {
            width,
            height,
            pixels,
            pixel_scale,
            zero_point,
            kind,
        })
    }

    pub fn zeros(width: usize, height: usize, kind: FrameKind) -> Self {
        ImageFrame::new(width, height, vec![0.0; width * height], kind).expect("valid empty frame")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.pixels[y * self.width + x] = v;
    }

    /// `zero_point - 2.5 log10(flux)`.
    pub fn magnitude(&self, flux: f64) -> f64 {
        self.zero_point as f64 - 2.5 * flux.log10()
    }

    /// Inverse of [`ImageFrame::magnitude`].
    pub fn flux(&self, magnitude: f64) -> f64 {
        10f64.powf((self.zero_point as f64 - magnitude) / 2.5)
    }
}
