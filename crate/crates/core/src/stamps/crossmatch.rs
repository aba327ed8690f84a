use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::stats;

/// Magnitude bin width used when estimating offset upper limits.
pub const BIN_WIDTH: f64 = 0.5;
/// Only bins centred brighter than this magnitude enter the fit.
pub const FIT_MAGNITUDE_LIMIT: f64 = 13.5;
/// Per-bin "2 sigma" upper limit, as a one-sided Gaussian percentile.
pub const UPPER_LIMIT_PERCENTILE: f64 = 97.72;

const MIN_PAIRS: usize = 100;
const MIN_BINS: usize = 5;

/// Magnitude-dependent cross-match radius `max(floor, A exp(-(m - m0)^2 / (2 sigma^2)))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OffsetFit {
    /// Peak radius, arcsec.
    pub a: f64,
    /// Magnitude of the peak.
    pub m0: f64,
    /// Gaussian width in magnitudes.
    pub sigma: f64,
    /// Lower bound on the radius, arcsec.
    pub floor: f64,
}

impl OffsetFit {
    pub const DEFAULT_FLOOR: f64 = 3.0;

    /// Best-fit parameters for GOTO survey data.
    pub const SURVEY: OffsetFit = OffsetFit {
        a: 46.3,
        m0: 3.7,
        sigma: 4.4,
        floor: 3.0,
    };

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !(self.a > self.floor) || !(self.floor >= 0.0) {
            return Err(Error::Config(format!(
                "offset fit needs A > floor >= 0 and sigma > 0, got {self:?}"
            )));
        }
        Ok(())
    }

    /// The Gaussian term without the floor.
    pub fn gaussian(&self, m: f64) -> f64 {
        let u = (m - self.m0) / self.sigma;
        self.a * (-0.5 * u * u).exp()
    }
}

impl Default for OffsetFit {
    fn default() -> Self {
        OffsetFit::SURVEY
    }
}

/// Cross-match radius in arcsec for a science detection of magnitude `m`.
pub fn crossmatch_radius(m: f64, fit: &OffsetFit) -> f64 {
    fit.gaussian(m).max(fit.floor)
}

/// Science-detection magnitude and its offset (arcsec) to the nearest difference detection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OffsetPair {
    pub magnitude: f64,
    pub offset: f64,
}

/// Upper-limit estimate for one magnitude bin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinLimit {
    pub center: f64,
    pub upper: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OffsetFitReport {
    pub fit: OffsetFit,
    /// Root-mean-square residual of the Gaussian against the fitted bins, arcsec.
    pub residual: f64,
    /// Bins used in the fit.
    pub bins: Vec<BinLimit>,
}

fn binned_upper_limits(pairs: &[OffsetPair]) -> Vec<BinLimit> {
    let mut bins: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    for p in pairs {
        let k = (p.magnitude / BIN_WIDTH).floor() as i64;
        bins.entry(k).or_default().push(p.offset);
    }
    bins.into_iter()
        .map(|(k, offsets)| BinLimit {
            center: (k as f64 + 0.5) * BIN_WIDTH,
            upper: stats::percentile(&offsets, UPPER_LIMIT_PERCENTILE).expect("non-empty bin"),
            count: offsets.len(),
        })
        .collect()
}

fn sum_sq(bins: &[BinLimit], a: f64, m0: f64, sigma: f64) -> f64 {
    bins.iter()
        .map(|b| {
            let u = (b.center - m0) / sigma;
            let r = a * (-0.5 * u * u).exp() - b.upper;
            r * r
        })
        .sum()
}

/// Amplitude minimizing the squared residual for fixed (m0, sigma).
fn best_amplitude(bins: &[BinLimit], m0: f64, sigma: f64) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for b in bins {
        let u = (b.center - m0) / sigma;
        let g = (-0.5 * u * u).exp();
        num += g * b.upper;
        den += g * g;
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Fits the cross-match radius to `(magnitude, offset)` pairs.
///
/// Pairs are binned in 0.5 mag bins, each bin's upper limit is its 97.72nd
/// percentile, and `A exp(-(m - m0)^2 / (2 sigma^2))` is least-squares
/// fitted to the limits of bins centred below 13.5 mag: a coarse grid over
/// `(m0, sigma)` with the optimal `A` in closed form, then Gauss–Newton
/// refinement of all three. The floor is fixed at 3 arcsec.
pub fn fit_offset_threshold(pairs: &[OffsetPair]) -> Result<OffsetFitReport> {
    if pairs.len() < MIN_PAIRS {
        return Err(Error::invalid(format!(
            "offset fit needs at least {MIN_PAIRS} pairs, got {}",
            pairs.len()
        )));
    }
    if pairs.iter().any(|p| !p.magnitude.is_finite() || !p.offset.is_finite()) {
        return Err(Error::invalid("offset pairs contain non-finite values"));
    }
    let bins: Vec<BinLimit> = binned_upper_limits(pairs)
        .into_iter()
        .filter(|b| b.center < FIT_MAGNITUDE_LIMIT)
        .collect();
    if bins.len() < MIN_BINS {
        return Err(Error::invalid(format!(
            "offset fit needs {MIN_BINS} magnitude bins below {FIT_MAGNITUDE_LIMIT}, got {}",
            bins.len()
        )));
    }
    let lo = bins.first().expect("bins").center;
    let hi = bins.last().expect("bins").center;
    let span = (hi - lo).max(BIN_WIDTH);
    let sigma_max = 3.0 * span;

    // Coarse grid: m0 across the data +- half a span, sigma log-spaced.
    let mut best = (f64::INFINITY, 0.0, 0.0, 0.0);
    let n_m0 = 121;
    let n_sigma = 60;
    for i in 0..n_m0 {
        let m0 = lo - 0.5 * span + 2.0 * span * i as f64 / (n_m0 - 1) as f64;
        for j in 0..n_sigma {
            let sigma = 0.1 * (sigma_max / 0.1).powf(j as f64 / (n_sigma - 1) as f64);
            let a = best_amplitude(&bins, m0, sigma);
            let s = sum_sq(&bins, a, m0, sigma);
            if s < best.0 {
                best = (s, a, m0, sigma);
            }
        }
    }
    let (mut cost, mut a, mut m0, mut sigma) = best;

    // Gauss–Newton with step halving.
    let mut converged = false;
    for _ in 0..200 {
        let mut jtj = Matrix3::<f64>::zeros();
        let mut jtr = Vector3::<f64>::zeros();
        for b in &bins {
            let u = (b.center - m0) / sigma;
            let g = (-0.5 * u * u).exp();
            let r = a * g - b.upper;
            let j = Vector3::new(g, a * g * u / sigma, a * g * u * u / sigma);
            jtj += j * j.transpose();
            jtr += j * r;
        }
        let Some(step) = jtj.lu().solve(&(-jtr)) else {
            break;
        };
        let mut scale = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let (na, nm, ns) = (a + scale * step[0], m0 + scale * step[1], sigma + scale * step[2]);
            if ns > 0.0 {
                let c = sum_sq(&bins, na, nm, ns);
                if c <= cost {
                    let rel = (cost - c) / cost.max(1e-300);
                    a = na;
                    m0 = nm;
                    sigma = ns;
                    cost = c;
                    improved = true;
                    if rel < 1e-15 || step.norm() * scale < 1e-13 {
                        converged = true;
                    }
                    break;
                }
            }
            scale *= 0.5;
        }
        if !improved || converged || cost < 1e-30 {
            converged = true;
            break;
        }
    }

    let residual = (cost / bins.len() as f64).sqrt();
    if !converged || !a.is_finite() || !m0.is_finite() || !sigma.is_finite() {
        return Err(Error::Fit {
            reason: "Gauss-Newton refinement did not converge".into(),
            residual,
        });
    }
    if sigma > sigma_max {
        return Err(Error::Fit {
            reason: format!(
                "no magnitude trend: width {sigma:.3} mag exceeds {sigma_max:.3} mag bound"
            ),
            residual,
        });
    }
    if a <= OffsetFit::DEFAULT_FLOOR {
        return Err(Error::Fit {
            reason: format!(
                "degenerate fit: amplitude {a:.3} arcsec does not exceed the {} arcsec floor",
                OffsetFit::DEFAULT_FLOOR
            ),
            residual,
        });
    }
    Ok(OffsetFitReport {
        fit: OffsetFit {
            a,
            m0,
            sigma,
            floor: OffsetFit::DEFAULT_FLOOR,
        },
        residual,
        bins,
    })
}
