//! Seeded synthetic frames and stamp corpora.
//!
//! Fields hold circular-Gaussian point sources on a flat sky. Static
//! sources appear in both science and reference frames, transients only in
//! the science frame. The difference frame is the noise-free science minus
//! reference, plus subtraction artifacts, plus fresh Gaussian noise.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::derive_seed;
use crate::stamps::{
    Extraction, FrameKind, ImageFrame, Label, OffsetFit, OffsetPair, Stamp, StampOrigin, STAMP_PIXELS,
    STAMP_SIDE,
};

/// Converts a full width at half maximum to a Gaussian sigma.
pub fn fwhm_to_sigma(fwhm: f64) -> f64 {
    fwhm / (8.0 * 2f64.ln()).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldConfig {
    pub width: usize,
    pub height: usize,
    pub n_static: usize,
    pub n_transient: usize,
    /// Magnitude range sources are drawn from (uniform).
    pub mag_min: f64,
    pub mag_max: f64,
    pub fwhm: f64,
    pub sky: f64,
    pub noise_sigma: f64,
    /// Fraction of static sources that leave a dipole residual.
    pub dipole_rate: f64,
    /// Dipole lobe amplitude as a fraction of the source flux.
    pub dipole_strength: f64,
    /// Masked saturated stars per field.
    pub n_saturation: usize,
    pub n_hot_pixels: usize,
    /// Short bright streaks hugging the frame border.
    pub n_edge_artifacts: usize,
    /// Peak of hot pixels, ring of saturation masks and edge streaks, in noise sigmas.
    pub artifact_amplitude: f64,
    /// Minimum separation between injected objects, pixels.
    pub min_separation: f64,
    pub pixel_scale: f32,
    pub zero_point: f32,
    pub seed: u64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            width: 512,
            height: 512,
            n_static: 40,
            n_transient: 10,
            mag_min: 12.0,
            mag_max: 18.5,
            fwhm: 3.0,
            sky: 100.0,
            noise_sigma: 2.0,
            dipole_rate: 0.3,
            dipole_strength: 0.1,
            n_saturation: 2,
            n_hot_pixels: 5,
            n_edge_artifacts: 2,
            artifact_amplitude: 30.0,
            min_separation: 30.0,
            pixel_scale: ImageFrame::DEFAULT_PIXEL_SCALE,
            zero_point: ImageFrame::DEFAULT_ZERO_POINT,
            seed: 0,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("field config: {m}")));
        if self.width < 2 * STAMP_SIDE || self.height < 2 * STAMP_SIDE {
            return bad("frame must be at least 64x64");
        }
        if !(self.fwhm > 0.0) {
            return bad("fwhm must be positive");
        }
        if !(self.noise_sigma > 0.0) {
            return bad("noise sigma must be positive");
        }
        if !(self.mag_min <= self.mag_max) {
            return bad("mag_min must not exceed mag_max");
        }
        if !(0.0..=1.0).contains(&self.dipole_rate) {
            return bad("dipole rate must be in [0, 1]");
        }
        if !(self.pixel_scale > 0.0) {
            return bad("pixel scale must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectKind {
    Static,
    Transient,
    Dipole,
    SaturationMask,
    HotPixel,
    EdgeArtifact,
}

/// One injected object.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthObject {
    pub kind: ObjectKind,
    pub x: f64,
    pub y: f64,
    /// Source flux in counts (artifact amplitude for artifacts).
    pub flux: f64,
    pub magnitude: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthField {
    pub science: ImageFrame,
    pub reference: ImageFrame,
    pub difference: ImageFrame,
    pub truth: Vec<TruthObject>,
}

struct Raster {
    w: usize,
    h: usize,
    px: Vec<f64>,
}

impl Raster {
    fn new(w: usize, h: usize, fill: f64) -> Self {
        Raster {
            w,
            h,
            px: vec![fill; w * h],
        }
    }

    fn add_gaussian(&mut self, x: f64, y: f64, flux: f64, sigma: f64) {
        let r = (5.0 * sigma).ceil() as i64;
        let norm = flux / (2.0 * PI * sigma * sigma);
        let (cx, cy) = (x.round() as i64, y.round() as i64);
        for py in (cy - r).max(0)..=(cy + r).min(self.h as i64 - 1) {
            for px in (cx - r).max(0)..=(cx + r).min(self.w as i64 - 1) {
                let dx = px as f64 - x;
                let dy = py as f64 - y;
                self.px[py as usize * self.w + px as usize] +=
                    norm * (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            }
        }
    }

    fn to_frame(&self, kind: FrameKind, cfg: &FieldConfig) -> ImageFrame {
        let pixels = self.px.iter().map(|&v| v as f32).collect();
        ImageFrame::with_calibration(self.w, self.h, pixels, kind, cfg.pixel_scale, cfg.zero_point)
            .expect("validated field config")
    }
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn place(rng: &mut ChaCha8Rng, cfg: &FieldConfig, taken: &mut Vec<(f64, f64)>, border: f64) -> (f64, f64) {
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let mut best = (w / 2.0, h / 2.0);
    let mut best_gap = -1.0;
    // Rejection sampling; fall back to the most isolated candidate on crowded fields.
    for _ in 0..200 {
        let p = (
            rng.random_range(border..w - border),
            rng.random_range(border..h - border),
        );
        let gap = taken
            .iter()
            .map(|q| (p.0 - q.0).hypot(p.1 - q.1))
            .fold(f64::INFINITY, f64::min);
        if gap >= cfg.min_separation {
            best = p;
            break;
        }
        if gap > best_gap {
            best_gap = gap;
            best = p;
        }
    }
    taken.push(best);
    best
}

/// Renders one field and its truth catalog. Equal configs give bit-identical output.
pub fn synth_field(cfg: &FieldConfig) -> Result<SynthField> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sigma_psf = fwhm_to_sigma(cfg.fwhm);
    let flux_of = |m: f64| 10f64.powf((cfg.zero_point as f64 - m) / 2.5);
    let (w, h) = (cfg.width, cfg.height);
    // Clean (noise-free) science and reference, plus difference-only artifacts.
    let mut sci = Raster::new(w, h, cfg.sky);
    let mut reference = Raster::new(w, h, cfg.sky);
    let mut artifacts = Raster::new(w, h, 0.0);
    let mut truth = Vec::new();
    let mut taken = Vec::new();
    let border = STAMP_SIDE as f64 / 2.0;

    for _ in 0..cfg.n_static {
        let (x, y) = place(&mut rng, cfg, &mut taken, border);
        let m = rng.random_range(cfg.mag_min..=cfg.mag_max);
        let f = flux_of(m);
        sci.add_gaussian(x, y, f, sigma_psf);
        reference.add_gaussian(x, y, f, sigma_psf);
        truth.push(TruthObject {
            kind: ObjectKind::Static,
            x,
            y,
            flux: f,
            magnitude: m,
        });
        if rng.random::<f64>() < cfg.dipole_rate {
            let sep = rng.random_range(1.0..3.0);
            let angle = rng.random_range(0.0..2.0 * PI);
            let (dx, dy) = (0.5 * sep * angle.cos(), 0.5 * sep * angle.sin());
            let a = cfg.dipole_strength * f;
            artifacts.add_gaussian(x + dx, y + dy, a, sigma_psf);
            artifacts.add_gaussian(x - dx, y - dy, -a, sigma_psf);
            truth.push(TruthObject {
                kind: ObjectKind::Dipole,
                x,
                y,
                flux: a,
                magnitude: m,
            });
        }
    }

    for _ in 0..cfg.n_transient {
        let (x, y) = place(&mut rng, cfg, &mut taken, border);
        let m = rng.random_range(cfg.mag_min..=cfg.mag_max);
        let f = flux_of(m);
        sci.add_gaussian(x, y, f, sigma_psf);
        truth.push(TruthObject {
            kind: ObjectKind::Transient,
            x,
            y,
            flux: f,
            magnitude: m,
        });
    }

    let amp = cfg.artifact_amplitude * cfg.noise_sigma;
    let mut masks = Vec::new();
    for _ in 0..cfg.n_saturation {
        // A saturated star: present in both frames, masked to zero in the science frame.
        let (x, y) = place(&mut rng, cfg, &mut taken, border);
        let m = cfg.mag_min - 1.0;
        let f = flux_of(m);
        sci.add_gaussian(x, y, f, sigma_psf);
        reference.add_gaussian(x, y, f, sigma_psf);
        let radius: f64 = rng.random_range(3.0..6.0);
        masks.push((x, y, radius));
        truth.push(TruthObject {
            kind: ObjectKind::SaturationMask,
            x,
            y,
            flux: f,
            magnitude: m,
        });
    }

    for _ in 0..cfg.n_hot_pixels {
        let (x, y) = place(&mut rng, cfg, &mut taken, border);
        let (x, y) = (x.round(), y.round());
        sci.px[y as usize * w + x as usize] += amp;
        truth.push(TruthObject {
            kind: ObjectKind::HotPixel,
            x,
            y,
            flux: amp,
            magnitude: f64::NAN,
        });
    }

    for _ in 0..cfg.n_edge_artifacts {
        let x = if rng.random::<bool>() {
            rng.random_range(0..6)
        } else {
            w - 1 - rng.random_range(0..6)
        };
        let y0 = rng.random_range(0..h - 20);
        for y in y0..y0 + 20 {
            artifacts.px[y * w + x] += amp;
        }
        truth.push(TruthObject {
            kind: ObjectKind::EdgeArtifact,
            x: x as f64,
            y: y0 as f64 + 9.5,
            flux: amp,
            magnitude: f64::NAN,
        });
    }

    let mut diff = Raster::new(w, h, 0.0);
    for i in 0..w * h {
        diff.px[i] = sci.px[i] - reference.px[i] + artifacts.px[i];
    }
    for &(x, y, radius) in &masks {
        let r = (radius + 2.0).ceil() as i64;
        for py in (y as i64 - r).max(0)..=(y as i64 + r).min(h as i64 - 1) {
            for px in (x as i64 - r).max(0)..=(x as i64 + r).min(w as i64 - 1) {
                let d = (px as f64 - x).hypot(py as f64 - y);
                let i = py as usize * w + px as usize;
                if d < radius {
                    sci.px[i] = 0.0;
                    diff.px[i] = -reference.px[i];
                } else if d < radius + 1.5 {
                    diff.px[i] += amp;
                }
            }
        }
    }

    for v in sci.px.iter_mut() {
        *v += cfg.noise_sigma * gauss(&mut rng);
    }
    for v in reference.px.iter_mut() {
        *v += cfg.noise_sigma * gauss(&mut rng);
    }
    for v in diff.px.iter_mut() {
        *v += cfg.noise_sigma * gauss(&mut rng);
    }

    Ok(SynthField {
        science: sci.to_frame(FrameKind::Science, cfg),
        reference: reference.to_frame(FrameKind::Reference, cfg),
        difference: diff.to_frame(FrameKind::Difference, cfg),
        truth,
    })
}

/// Labels extracted stamps from the truth catalog: real iff a transient lies
/// within `radius` pixels of the cutout centre.
pub fn label_from_truth(stamps: &mut [Stamp], truth: &[TruthObject], radius: f64) {
    for s in stamps {
        let hit = truth.iter().any(|t| {
            t.kind == ObjectKind::Transient
                && (t.x - s.origin.x as f64).hypot(t.y - s.origin.y as f64) <= radius
        });
        s.label = if hit { Label::Real } else { Label::Bogus };
    }
}

/// Transients that survive the faint and edge cuts, and how many of them
/// made it into an extracted stamp set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryAudit {
    pub eligible: usize,
    pub recovered: usize,
    pub lost_fraction: f64,
}

pub fn audit_recovery(
    extraction: &Extraction,
    truth: &[TruthObject],
    width: usize,
    height: usize,
    faint_limit: f64,
    edge_margin: f64,
    radius: f64,
) -> RecoveryAudit {
    let (w, h) = (width as f64, height as f64);
    let eligible: Vec<&TruthObject> = truth
        .iter()
        .filter(|t| t.kind == ObjectKind::Transient && t.magnitude <= faint_limit)
        .filter(|t| {
            t.x >= edge_margin && t.y >= edge_margin && w - 1.0 - t.x >= edge_margin && h - 1.0 - t.y >= edge_margin
        })
        .collect();
    let recovered = eligible
        .iter()
        .filter(|t| {
            extraction
                .stamps
                .iter()
                .any(|s| (t.x - s.origin.x as f64).hypot(t.y - s.origin.y as f64) <= radius)
        })
        .count();
    let lost_fraction = if eligible.is_empty() {
        0.0
    } else {
        1.0 - recovered as f64 / eligible.len() as f64
    };
    RecoveryAudit {
        eligible: eligible.len(),
        recovered,
        lost_fraction,
    }
}

/// What a synthetic stamp depicts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Archetype {
    /// Centred point source.
    Real,
    /// Opposite-sign pair from a PSF mismatch.
    Dipole,
    /// Masked saturated star: dark disk with a bright rim.
    Hole,
    HotPixel,
    /// Background noise only.
    Noise,
}

impl Archetype {
    pub const BOGUS: [Archetype; 4] = [Archetype::Dipole, Archetype::Hole, Archetype::HotPixel, Archetype::Noise];

    pub fn label(self) -> Label {
        if self == Archetype::Real {
            Label::Real
        } else {
            Label::Bogus
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StampSetConfig {
    pub noise_sigma: f64,
    /// PSF FWHM drawn uniformly from this range, pixels.
    pub fwhm_range: (f64, f64),
    /// Real-source peak amplitude range, in noise sigmas.
    pub real_amplitude: (f64, f64),
    /// Artifact peak amplitude, in noise sigmas.
    pub artifact_amplitude: f64,
    /// Max offset of the object from the stamp centre, pixels.
    pub jitter: f64,
    /// Relative weights of dipole, hole, hot-pixel and noise stamps.
    pub mixture: [f64; 4],
}

impl Default for StampSetConfig {
    fn default() -> Self {
        StampSetConfig {
            noise_sigma: 1.0,
            fwhm_range: (2.5, 4.0),
            real_amplitude: (10.0, 30.0),
            artifact_amplitude: 10.0,
            jitter: 1.0,
            mixture: [1.0, 1.0, 1.0, 1.0],
        }
    }
}

impl StampSetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("stamp set config: {m}")));
        if !(self.noise_sigma > 0.0) {
            return bad("noise sigma must be positive");
        }
        if !(self.fwhm_range.0 > 0.0 && self.fwhm_range.0 <= self.fwhm_range.1) {
            return bad("fwhm range must be positive and ordered");
        }
        if !(self.real_amplitude.0 > 0.0 && self.real_amplitude.0 <= self.real_amplitude.1) {
            return bad("real amplitude range must be positive and ordered");
        }
        if !(self.artifact_amplitude > 0.0) {
            return bad("artifact amplitude must be positive");
        }
        if !(self.jitter >= 0.0 && self.jitter < 4.0) {
            return bad("jitter must be in [0, 4)");
        }
        if self.mixture.iter().any(|w| !(*w >= 0.0)) || self.mixture.iter().sum::<f64>() <= 0.0 {
            return bad("mixture weights must be non-negative with a positive sum");
        }
        Ok(())
    }
}

/// Splits `n` into counts proportional to `weights` (largest remainder).
fn apportion(n: usize, weights: &[f64]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| n as f64 * w / total).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    let short = n - counts.iter().sum::<usize>();
    for &k in order.iter().take(short) {
        counts[k] += 1;
    }
    counts
}

fn stamp_gaussian(px: &mut [f64], x: f64, y: f64, peak: f64, sigma: f64) {
    for r in 0..STAMP_SIDE {
        for c in 0..STAMP_SIDE {
            let d2 = (c as f64 - x).powi(2) + (r as f64 - y).powi(2);
            px[r * STAMP_SIDE + c] += peak * (-d2 / (2.0 * sigma * sigma)).exp();
        }
    }
}

/// Raw (unnormalized) 32x32 cutout of one archetype, noise included.
pub fn render_archetype(kind: Archetype, cfg: &StampSetConfig, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let centre = (STAMP_SIDE / 2) as f64;
    let jitter = |rng: &mut ChaCha8Rng| {
        if cfg.jitter > 0.0 {
            rng.random_range(-cfg.jitter..=cfg.jitter)
        } else {
            0.0
        }
    };
    let (x, y) = (centre + jitter(rng), centre + jitter(rng));
    let sigma = fwhm_to_sigma(rng.random_range(cfg.fwhm_range.0..=cfg.fwhm_range.1));
    let amp = cfg.artifact_amplitude * cfg.noise_sigma;
    let mut px = vec![0.0f64; STAMP_PIXELS];
    match kind {
        Archetype::Real => {
            let peak = rng.random_range(cfg.real_amplitude.0..=cfg.real_amplitude.1) * cfg.noise_sigma;
            stamp_gaussian(&mut px, x, y, peak, sigma);
        }
        Archetype::Dipole => {
            let sep = rng.random_range(1.0..3.0);
            let angle = rng.random_range(0.0..2.0 * PI);
            let (dx, dy) = (0.5 * sep * angle.cos(), 0.5 * sep * angle.sin());
            stamp_gaussian(&mut px, x + dx, y + dy, amp, sigma);
            stamp_gaussian(&mut px, x - dx, y - dy, -amp, sigma);
        }
        Archetype::Hole => {
            let radius = rng.random_range(3.0..6.0);
            for r in 0..STAMP_SIDE {
                for c in 0..STAMP_SIDE {
                    let d = (c as f64 - x).hypot(r as f64 - y);
                    if d < radius {
                        px[r * STAMP_SIDE + c] = -amp;
                    } else if d < radius + 1.5 {
                        px[r * STAMP_SIDE + c] = amp;
                    }
                }
            }
        }
        Archetype::HotPixel => {
            let (c, r) = (x.round() as usize, y.round() as usize);
            px[r * STAMP_SIDE + c] = amp;
        }
        Archetype::Noise => {}
    }
    let hole = kind == Archetype::Hole;
    px.iter()
        .map(|&v| {
            // Masked pixels carry no noise.
            let noisy = if hole && v == -amp { v } else { v + cfg.noise_sigma * gauss(rng) };
            noisy as f32
        })
        .collect()
}

/// Labeled stamps plus the archetype each was drawn from, in shuffled order.
pub fn synth_archetype_set(
    cfg: &StampSetConfig,
    n_real: usize,
    n_bogus: usize,
    seed: u64,
) -> Result<Vec<(Stamp, Archetype)>> {
    cfg.validate()?;
    if n_real + n_bogus == 0 {
        return Err(Error::invalid("stamp set must contain at least one stamp"));
    }
    let mut kinds = vec![Archetype::Real; n_real];
    for (k, count) in Archetype::BOGUS.iter().zip(apportion(n_bogus, &cfg.mixture)) {
        kinds.extend(std::iter::repeat_n(*k, count));
    }
    kinds.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 1)));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2));
    kinds
        .into_iter()
        .enumerate()
        .map(|(i, kind)| {
            let raw = render_archetype(kind, cfg, &mut rng);
            let origin = StampOrigin {
                x: (STAMP_SIDE / 2) as f32,
                y: (STAMP_SIDE / 2) as f32,
                magnitude: 0.0,
                frame_id: i as u32,
            };
            Ok((Stamp::from_raw(&raw, origin, kind.label())?, kind))
        })
        .collect()
}

/// `n_real` centred point sources and `n_bogus` artifacts, normalized and labeled.
pub fn synth_stamp_set(cfg: &StampSetConfig, n_real: usize, n_bogus: usize, seed: u64) -> Result<Vec<Stamp>> {
    Ok(synth_archetype_set(cfg, n_real, n_bogus, seed)?
        .into_iter()
        .map(|(s, _)| s)
        .collect())
}

/// One-sided Gaussian quantile at the per-bin upper-limit percentile (97.72 %).
pub const HALF_NORMAL_UPPER: f64 = 2.2777;

/// Cross-match offsets whose per-magnitude 97.72nd percentile follows
/// `fit.gaussian(m)`: `|N(0,1)| / 2.2777` scaled by the curve, times
/// `1 + noise * N(0,1)`. Magnitudes are uniform in `[m_lo, m_hi]`.
pub fn synth_offset_pairs(fit: &OffsetFit, n: usize, m_lo: f64, m_hi: f64, noise: f64, seed: u64) -> Vec<OffsetPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let m = rng.random_range(m_lo..m_hi);
            let z: f64 = gauss(&mut rng);
            let e: f64 = gauss(&mut rng);
            OffsetPair {
                magnitude: m,
                offset: (fit.gaussian(m) * z.abs() / HALF_NORMAL_UPPER * (1.0 + noise * e)).max(0.0),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apportion_is_exact() {
        assert_eq!(apportion(10, &[1.0, 1.0, 1.0, 1.0]), vec![3, 3, 2, 2]);
        assert_eq!(apportion(7, &[1.0, 0.0, 0.0, 0.0]), vec![7, 0, 0, 0]);
        assert_eq!(apportion(0, &[1.0, 2.0]), vec![0, 0]);
    }

    #[test]
    fn fwhm_conversion() {
        assert!((fwhm_to_sigma(2.0 * (2.0 * 2f64.ln()).sqrt()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_configs_rejected() {
        let cfg = FieldConfig {
            noise_sigma: 0.0,
            ..FieldConfig::default()
        };
        assert!(synth_field(&cfg).is_err());
        let cfg = StampSetConfig {
            mixture: [0.0; 4],
            ..StampSetConfig::default()
        };
        assert!(synth_stamp_set(&cfg, 1, 1, 0).is_err());
        assert!(synth_stamp_set(&StampSetConfig::default(), 0, 0, 0).is_err());
    }

    #[test]
    fn hot_pixel_stamp_peaks_in_one_pixel() {
        let cfg = StampSetConfig {
            jitter: 0.0,
            ..StampSetConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let raw = render_archetype(Archetype::HotPixel, &cfg, &mut rng);
        let peak = raw.iter().cloned().fold(f32::MIN, f32::max);
        assert_eq!(raw[16 * STAMP_SIDE + 16], peak);
    }
}
