//! From image frames to normalized 32x32 stamps.
//!
//! Covers source detection, difference-coordinate (DC) and
//! science-coordinate (SC) cutout extraction, the magnitude-dependent
//! cross-match radius and its fit, and per-stamp normalization.

mod crossmatch;
mod detect;
mod frame;
mod normalize;
mod pipeline;

pub use crossmatch::{
    crossmatch_radius, fit_offset_threshold, BinLimit, OffsetFit, OffsetFitReport, OffsetPair,
    BIN_WIDTH, FIT_MAGNITUDE_LIMIT, UPPER_LIMIT_PERCENTILE,
};
pub use detect::{detect_sources, Detection};
pub use frame::{FrameKind, ImageFrame};
pub use normalize::{normalize_stamp, StampScale};
pub use pipeline::{build_stamp_set, cutout_stamp, ExtractConfig, ExtractionMode, Extraction};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stamp side length in pixels.
pub const STAMP_SIDE: usize = 32;
/// Pixels per stamp.
pub const STAMP_PIXELS: usize = STAMP_SIDE * STAMP_SIDE;

/// Ground-truth (or human) label of a stamp. Discriminants match the STMP encoding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Bogus = 0,
    Real = 1,
    Unlabeled = 255,
}

impl Label {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Label::Bogus),
            1 => Some(Label::Real),
            255 => Some(Label::Unlabeled),
            _ => None,
        }
    }
}

/// Where a stamp was cut from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StampOrigin {
    pub x: f32,
    pub y: f32,
    pub magnitude: f32,
    pub frame_id: u32,
}

/// A normalized 32x32 cutout, row-major, every value in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Stamp {
    pixels: Vec<f32>,
    pub origin: StampOrigin,
    pub label: Label,
}

impl Stamp {
    /// Wraps already-normalized pixels, checking size and range.
    pub fn new(pixels: Vec<f32>, origin: StampOrigin, label: Label) -> Result<Self> {
        check_normalized(&pixels)?;
        Ok(Stamp {
            pixels,
            origin,
            label,
        })
    }

    /// Normalizes a raw 32x32 cutout.
    pub fn from_raw(raw: &[f32], origin: StampOrigin, label: Label) -> Result<Self> {
        Stamp::new(normalize_stamp(raw)?, origin, label)
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    /// Row/column of the brightest pixel (first occurrence in row-major order).
    pub fn peak(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.pixels.iter().enumerate() {
            if v > self.pixels[best] {
                best = i;
            }
        }
        (best / STAMP_SIDE, best % STAMP_SIDE)
    }
}

/// Rejects pixel arrays that are not 32x32 or not within `[0, 1]`.
pub fn check_normalized(pixels: &[f32]) -> Result<()> {
    if pixels.len() != STAMP_PIXELS {
        return Err(Error::shape("stamp pixels", STAMP_PIXELS, pixels.len()));
    }
    if let Some(i) = pixels
        .iter()
        .position(|v| !v.is_finite() || *v < 0.0 || *v > 1.0)
    {
        return Err(Error::invalid(format!(
            "stamp pixel {i} = {} is outside [0, 1]; normalize first",
            pixels[i]
        )));
    }
    Ok(())
}
