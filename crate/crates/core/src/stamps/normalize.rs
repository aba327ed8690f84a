use crate::error::{Error, Result};
use crate::stats;

/// Piecewise-linear mapping of one cutout onto `[0, 1]`.
///
/// The median maps to 0.5 and the peak to 1. Pixels below the median are
/// scaled against the 5th percentile of the below-median pixels (mapped to
/// 0) and clamped there, so strongly negative outliers do not stretch the
/// scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StampScale {
    pub median: f64,
    pub max: f64,
    /// 5th percentile of pixels strictly below the median; equals the
    /// median when there are none.
    pub p05: f64,
}

impl StampScale {
    pub fn fit(raw: &[f32]) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::invalid("cannot normalize an empty stamp"));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("raw stamp contains non-finite values"));
        }
        let values: Vec<f64> = raw.iter().map(|&v| v as f64).collect();
        let sorted = stats::sorted(&values);
        let median = stats::median_sorted(&sorted).expect("non-empty");
        let max = *sorted.last().expect("non-empty");
        let below = &sorted[..sorted.partition_point(|&v| v < median)];
        let p05 = stats::percentile_sorted(below, 5.0).unwrap_or(median);
        Ok(StampScale { median, max, p05 })
    }

    pub fn apply(&self, p: f64) -> f64 {
        let v = if p >= self.median {
            if self.max > self.median {
                0.5 + 0.5 * (p - self.median) / (self.max - self.median)
            } else {
                0.5
            }
        } else if self.median > self.p05 {
            0.5 * (1.0 + (-(self.median - p) / (self.median - self.p05)).max(-1.0))
        } else {
            0.5
        };
        v.clamp(0.0, 1.0)
    }
}

/// Normalizes a raw cutout pixel by pixel with its own [`StampScale`].
pub fn normalize_stamp(raw: &[f32]) -> Result<Vec<f32>> {
    let scale = StampScale::fit(raw)?;
    Ok(raw.iter().map(|&p| scale.apply(p as f64) as f32).collect())
}
