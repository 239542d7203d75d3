//! Temporal binary patterns and appearance histograms.
//!
//! A pixel (or region) is summarized by a bit vector: bit i of a block
//! with parameters (α, β, θ) is 1 exactly when the color β frames ahead of
//! frame α·i differs by more than θ in RGB Euclidean distance. The full
//! descriptor concatenates a short-range block Δ₁ (α=4, β=4) with a
//! long-range block Δ₂ (α=2, β=⌊N/2⌋). Appearance is summarized by a
//! 24-bin LAB histogram (8 bins per channel).

use crate::color::{rgb_to_lab, LabColor};
use crate::error::{Error, Result};
use crate::video::{fill_invisible, FrameSequence, VisibilityVolume};

/// Default color-change threshold θ.
pub const THETA: f64 = 100.0;
/// Default Δ₁ stride α₁.
pub const ALPHA1: usize = 4;
/// Default Δ₁ look-ahead β₁.
pub const BETA1: usize = 4;
/// Default Δ₂ stride α₂ (its look-ahead is always ⌊N/2⌋).
pub const ALPHA2: usize = 2;

/// Concatenated Δ₁‖Δ₂ temporal change signature.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemporalBinaryPattern {
    bits: Vec<bool>,
    len1: usize,
    len2: usize,
}

impl TemporalBinaryPattern {
    pub fn from_blocks(delta1: Vec<bool>, delta2: Vec<bool>) -> Self {
        let (len1, len2) = (delta1.len(), delta2.len());
        let mut bits = delta1;
        bits.extend(delta2);
        Self { bits, len1, len2 }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn len1(&self) -> usize {
        self.len1
    }

    pub fn len2(&self) -> usize {
        self.len2
    }

    /// The short-range block Δ₁.
    pub fn delta1(&self) -> &[bool] {
        &self.bits[..self.len1]
    }
}

/// Promote an 8-bit color series to f64 (region series are f64 means).
pub fn to_f64(series: &[[u8; 3]]) -> Vec<[f64; 3]> {
    series
        .iter()
        .map(|c| [c[0] as f64, c[1] as f64, c[2] as f64])
        .collect()
}

fn sq_dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dr = a[0] - b[0];
    let dg = a[1] - b[1];
    let db = a[2] - b[2];
    dr * dr + dg * dg + db * db
}

/// One descriptor block: bit i = 1 iff ‖series[α·i+β] − series[α·i]‖₂ > θ,
/// for every i with both samples in range.
pub fn binary_pattern(
    series: &[[f64; 3]],
    alpha: usize,
    beta: usize,
    theta: f64,
) -> Result<Vec<bool>> {
    assert!(alpha >= 1, "alpha must be a positive integer");
    assert!(beta >= 1, "beta must be a positive integer");
    let n = series.len();
    if n <= beta {
        return Err(Error::EmptyPattern { len: n, beta });
    }
    let theta_sq = theta * theta;
    let mut bits = Vec::new();
    let mut i = 0;
    while alpha * i + beta <= n - 1 {
        bits.push(sq_dist(series[alpha * i + beta], series[alpha * i]) > theta_sq);
        i += 1;
    }
    Ok(bits)
}

/// Δ₁‖Δ₂ with explicit parameters; Δ₂'s look-ahead is ⌊N/2⌋.
pub fn descriptor_with_params(
    series: &[[f64; 3]],
    theta: f64,
    alpha1: usize,
    beta1: usize,
    alpha2: usize,
) -> Result<TemporalBinaryPattern> {
    let delta1 = binary_pattern(series, alpha1, beta1, theta)?;
    let delta2 = binary_pattern(series, alpha2, series.len() / 2, theta)?;
    Ok(TemporalBinaryPattern::from_blocks(delta1, delta2))
}

/// Δ₁‖Δ₂ with the default parameters (θ=100, α₁=4, β₁=4, α₂=2).
pub fn full_descriptor(series: &[[f64; 3]]) -> Result<TemporalBinaryPattern> {
    descriptor_with_params(series, THETA, ALPHA1, BETA1, ALPHA2)
}

/// Hamming distance normalized by the bit count; in [0, 1].
pub fn pattern_distance(a: &TemporalBinaryPattern, b: &TemporalBinaryPattern) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::PatternLengthMismatch {
            a: a.len(),
            b: b.len(),
        });
    }
    let differing = a
        .bits
        .iter()
        .zip(&b.bits)
        .filter(|(x, y)| x != y)
        .count();
    Ok(differing as f64 / a.len() as f64)
}

/// Temporal richness γ: fraction of ones in the Δ₁ block only.
pub fn richness(pattern: &TemporalBinaryPattern) -> Result<f64> {
    if pattern.len1 == 0 {
        return Err(Error::EmptyRichnessBlock);
    }
    let ones = pattern.delta1().iter().filter(|&&b| b).count();
    Ok(ones as f64 / pattern.len1 as f64)
}

/// 24-bin LAB histogram: 8 uniform bins per channel over L ∈ [0,100] and
/// a, b ∈ [−128, 128], concatenated L‖a‖b. Counts are integer-valued so
/// that region histograms add exactly under merges.
#[derive(Debug, Clone, PartialEq)]
pub struct LabHistogram {
    pub counts: [f64; 24],
}

fn bin8(value: f64, lo: f64, hi: f64) -> usize {
    let t = (value - lo) / (hi - lo) * 8.0;
    (t.floor() as isize).clamp(0, 7) as usize
}

impl LabHistogram {
    pub fn zero() -> Self {
        Self { counts: [0.0; 24] }
    }

    pub fn add_sample(&mut self, lab: LabColor) {
        self.counts[bin8(lab.l, 0.0, 100.0)] += 1.0;
        self.counts[8 + bin8(lab.a, -128.0, 128.0)] += 1.0;
        self.counts[16 + bin8(lab.b, -128.0, 128.0)] += 1.0;
    }

    /// Accumulate another histogram (exact for integer-valued counts).
    pub fn add(&mut self, other: &LabHistogram) {
        for (c, o) in self.counts.iter_mut().zip(&other.counts) {
            *c += o;
        }
    }

    /// Samples per channel block (identical across the three blocks).
    pub fn total(&self) -> f64 {
        self.counts[..8].iter().sum()
    }
}

/// Histogram of one pixel's visible samples. A pixel with no visible
/// frame falls back to its gap-filled series so that every pixel
/// contributes a nonzero histogram and region histograms stay additive.
pub fn pixel_histogram(
    x: u32,
    y: u32,
    video: &FrameSequence,
    visibility: &VisibilityVolume,
) -> LabHistogram {
    let mut hist = LabHistogram::zero();
    let mut any_visible = false;
    for f in 0..video.len() {
        if visibility.is_visible(f, x, y) {
            let [r, g, b] = video.pixel(f, x, y);
            hist.add_sample(rgb_to_lab(r, g, b));
            any_visible = true;
        }
    }
    if !any_visible {
        let filled = fill_invisible(&video.series(x, y), &visibility.series(x, y));
        for [r, g, b] in filled {
            hist.add_sample(rgb_to_lab(r, g, b));
        }
    }
    hist
}

/// Histogram over all visible (pixel, frame) samples of a region.
pub fn appearance_histogram(
    pixels: &[(u32, u32)],
    video: &FrameSequence,
    visibility: &VisibilityVolume,
) -> Result<LabHistogram> {
    let mut hist = LabHistogram::zero();
    let mut samples = 0usize;
    for &(x, y) in pixels {
        for f in 0..video.len() {
            if visibility.is_visible(f, x, y) {
                let [r, g, b] = video.pixel(f, x, y);
                hist.add_sample(rgb_to_lab(r, g, b));
                samples += 1;
            }
        }
    }
    if samples == 0 {
        return Err(Error::FullyOccluded);
    }
    Ok(hist)
}

/// 1 − normalized cross-correlation of the two 24-vectors; in [0, 2].
pub fn appearance_distance(h1: &LabHistogram, h2: &LabHistogram) -> Result<f64> {
    let dot: f64 = h1.counts.iter().zip(&h2.counts).map(|(a, b)| a * b).sum();
    let n1: f64 = h1.counts.iter().map(|a| a * a).sum::<f64>().sqrt();
    let n2: f64 = h2.counts.iter().map(|a| a * a).sum::<f64>().sqrt();
    if n1 == 0.0 || n2 == 0.0 {
        return Err(Error::ZeroNormHistogram);
    }
    Ok(1.0 - dot / (n1 * n2))
}
