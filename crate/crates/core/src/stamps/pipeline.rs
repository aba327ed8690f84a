use serde::{Deserialize, Serialize};

use super::{
    crossmatch_radius, detect_sources, Detection, ImageFrame, Label, OffsetFit, OffsetPair, Stamp,
    StampOrigin, STAMP_PIXELS, STAMP_SIDE,
};
use crate::error::{Error, Result};

const HALF: i64 = (STAMP_SIDE / 2) as i64;

/// Raw 32x32 window `[round(x) - 16, round(x) + 16)` in both axes.
pub fn cutout_stamp(frame: &ImageFrame, x: f64, y: f64) -> Result<Vec<f32>> {
    if !x.is_finite() || !y.is_finite() {
        return Err(Error::invalid(format!("cutout centre ({x}, {y}) is not finite")));
    }
    let x0 = x.round() as i64 - HALF;
    let y0 = y.round() as i64 - HALF;
    let (w, h) = (frame.width() as i64, frame.height() as i64);
    if x0 < 0 || y0 < 0 || x0 + 2 * HALF > w || y0 + 2 * HALF > h {
        return Err(Error::invalid(format!(
            "cutout at ({x:.2}, {y:.2}) leaves the {w}x{h} frame; sources must be at least {HALF} px from every edge"
        )));
    }
    let mut out = Vec::with_capacity(STAMP_PIXELS);
    for row in y0..y0 + 2 * HALF {
        let start = (row * w + x0) as usize;
        out.extend_from_slice(&frame.pixels()[start..start + STAMP_SIDE]);
    }
    Ok(out)
}

/// Which catalog supplies the cutout coordinates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractionMode {
    /// Every detection on the difference frame.
    Dc,
    /// Science detections with a difference-frame counterpart inside the cross-match radius.
    #[default]
    Sc,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractConfig {
    /// Detection threshold in units of the robust noise.
    pub k_sigma: f64,
    /// Detections fainter than this magnitude are dropped.
    pub faint_limit: f64,
    /// Detections closer than this many pixels to any edge are dropped.
    pub edge_margin: f64,
    pub frame_id: u32,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            k_sigma: 5.0,
            faint_limit: 21.0,
            edge_margin: 50.0,
            frame_id: 0,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Extraction {
    /// Normalized, unlabeled stamps sorted by `y`, then `x`.
    pub stamps: Vec<Stamp>,
    /// Every science detection's offset to its nearest difference detection
    /// (SC mode only), the input to [`super::fit_offset_threshold`].
    pub pairs: Vec<OffsetPair>,
    pub n_science: usize,
    pub n_difference: usize,
}

fn nearest<'a>(d: &Detection, catalog: &'a [Detection]) -> Option<(&'a Detection, f64)> {
    catalog
        .iter()
        .map(|c| (c, (c.x - d.x).hypot(c.y - d.y)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
}

/// Detects, cross-matches (SC), filters and normalizes one frame pair.
pub fn build_stamp_set(
    science: &ImageFrame,
    difference: &ImageFrame,
    mode: ExtractionMode,
    fit: &OffsetFit,
    config: &ExtractConfig,
) -> Result<Extraction> {
    if science.width() != difference.width() || science.height() != difference.height() {
        return Err(Error::shape(
            "difference frame",
            format!("{}x{}", science.width(), science.height()),
            format!("{}x{}", difference.width(), difference.height()),
        ));
    }
    fit.validate()?;
    let diff_cat = detect_sources(difference, config.k_sigma);
    let mut out = Extraction {
        n_difference: diff_cat.len(),
        ..Extraction::default()
    };

    let candidates: Vec<Detection> = match mode {
        ExtractionMode::Dc => diff_cat,
        ExtractionMode::Sc => {
            let sci_cat = detect_sources(science, config.k_sigma);
            out.n_science = sci_cat.len();
            let scale = science.pixel_scale as f64;
            let mut kept = Vec::new();
            for d in sci_cat {
                let Some((_, dist)) = nearest(&d, &diff_cat) else {
                    continue;
                };
                let offset = dist * scale;
                out.pairs.push(OffsetPair {
                    magnitude: d.magnitude,
                    offset,
                });
                if offset < crossmatch_radius(d.magnitude, fit) {
                    kept.push(d);
                }
            }
            kept
        }
    };

    let margin = config.edge_margin.max(HALF as f64);
    let (w, h) = (science.width() as f64, science.height() as f64);
    for d in candidates {
        if d.magnitude > config.faint_limit {
            continue;
        }
        if d.x < margin || d.y < margin || w - 1.0 - d.x < margin || h - 1.0 - d.y < margin {
            continue;
        }
        let raw = cutout_stamp(difference, d.x, d.y)?;
        let origin = StampOrigin {
            x: d.x as f32,
            y: d.y as f32,
            magnitude: d.magnitude as f32,
            frame_id: config.frame_id,
        };
        out.stamps.push(Stamp::from_raw(&raw, origin, Label::Unlabeled)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stamps::FrameKind;

    fn delta_frame(w: usize, h: usize, x: usize, y: usize) -> ImageFrame {
        let mut f = ImageFrame::zeros(w, h, FrameKind::Difference);
        f.set(x, y, 10.0);
        f
    }

    #[test]
    fn window_at_the_corner() {
        let f = delta_frame(64, 64, 0, 0);
        let c = cutout_stamp(&f, 16.0, 16.0).unwrap();
        assert_eq!(c[0], 10.0);
        assert_eq!(c.len(), STAMP_PIXELS);
    }

    #[test]
    fn delta_lands_at_centre() {
        let f = delta_frame(100, 80, 40, 30);
        let c = cutout_stamp(&f, 40.2, 29.7).unwrap();
        let peak = c
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!((peak / STAMP_SIDE, peak % STAMP_SIDE), (16, 16));
    }

    #[test]
    fn out_of_bounds_rejected() {
        let f = delta_frame(64, 64, 0, 0);
        assert!(cutout_stamp(&f, 10.0, 30.0).is_err());
        assert!(cutout_stamp(&f, 30.0, 48.6).is_err());
        assert!(cutout_stamp(&f, 48.0, 48.0).is_ok());
    }

    #[test]
    fn mismatched_frames_rejected() {
        let a = ImageFrame::zeros(64, 64, FrameKind::Science);
        let b = ImageFrame::zeros(64, 65, FrameKind::Difference);
        let err = build_stamp_set(&a, &b, ExtractionMode::Sc, &OffsetFit::SURVEY, &ExtractConfig::default());
        assert!(matches!(err, Err(Error::Shape { .. })));
    }
}
