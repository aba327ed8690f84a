use serde::{Deserialize, Serialize};

use super::{FrameKind, ImageFrame};
use crate::stats;

/// One extracted source.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// Flux-weighted centroid, pixel-centre coordinates.
    pub x: f64,
    pub y: f64,
    /// Background-subtracted flux summed over the component.
    pub flux: f64,
    pub magnitude: f64,
    pub n_pixels: usize,
    pub frame_kind: FrameKind,
}

/// Global-threshold source extraction.
///
/// Background is the frame median and noise is `1.4826 * MAD`. Pixels above
/// `background + k_sigma * noise` are grouped into 8-connected components;
/// each component yields its flux-weighted centroid and summed flux. The
/// catalog is sorted by `y`, then `x`.
pub fn detect_sources(frame: &ImageFrame, k_sigma: f64) -> Vec<Detection> {
    let (w, h) = (frame.width(), frame.height());
    let values: Vec<f64> = frame.pixels().iter().map(|&v| v as f64).collect();
    let background = stats::median(&values).unwrap_or(0.0);
    let noise = stats::mad(&values, background).unwrap_or(0.0) * stats::MAD_TO_SIGMA;
    let threshold = background + k_sigma * noise;

    let above: Vec<bool> = values.iter().map(|&v| v > threshold).collect();
    let mut seen = vec![false; w * h];
    let mut stack = Vec::new();
    let mut out = Vec::new();
    for start in 0..w * h {
        if !above[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut sum, mut sx, mut sy, mut n) = (0.0, 0.0, 0.0, 0usize);
        while let Some(p) = stack.pop() {
            let (px, py) = (p % w, p / w);
            let f = values[p] - background;
            sum += f;
            sx += f * px as f64;
            sy += f * py as f64;
            n += 1;
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let (nx, ny) = (px as isize + dx, py as isize + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let q = ny as usize * w + nx as usize;
                    if above[q] && !seen[q] {
                        seen[q] = true;
                        stack.push(q);
                    }
                }
            }
        }
        if sum > 0.0 {
            out.push(Detection {
                x: sx / sum,
                y: sy / sum,
                flux: sum,
                magnitude: frame.magnitude(sum),
                n_pixels: n,
                frame_kind: frame.kind,
            });
        }
    }
    out.sort_by(|a, b| a.y.total_cmp(&b.y).then(a.x.total_cmp(&b.x)));
    out
}
