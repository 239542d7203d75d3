//! Per-pixel repetitive-change detection.
//!
//! Each pixel's luma series is scored by the spectral ratio
//! C_rep(i, j) = max_{k>τ}|F_k| / max_{1≤k≤τ}|F_k| maximized over frame
//! intervals [i, j] spanning at least half the video. A pixel joins the
//! repetitive animation mask when its best score exceeds 2.5 and the 80th
//! percentile of its luma exceeds 127.
//!
//! The reference search is exhaustive over all interval endpoints
//! (`stride = 1`); the default restricts endpoints to a stride-8 grid
//! (plus the extremes) as a documented performance dial. Both use the
//! identical per-interval scoring path.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::color::luma;
use crate::error::{Error, Result};
use crate::video::{fill_invisible, FrameSequence, VisibilityVolume};

/// Knobs of the repetitive detector.
#[derive(Debug, Clone, Copy)]
pub struct RepetitiveParams {
    /// Interval-endpoint stride; 1 = exhaustive search.
    pub stride: usize,
    /// Frequency-bin cutoff τ between "low" and "high" bands.
    pub tau: usize,
    /// Animation gate on the best score (strict).
    pub score_gate: f64,
    /// Animation gate on the 80th-percentile luma (strict).
    pub luma_gate: u8,
}

impl Default for RepetitiveParams {
    fn default() -> Self {
        Self {
            stride: 8,
            tau: 4,
            score_gate: 2.5,
            luma_gate: 127,
        }
    }
}

/// Per-pixel detector output.
#[derive(Debug, Clone)]
pub struct RepetitiveField {
    width: u32,
    height: u32,
    n_frames: usize,
    score: Vec<f64>,
    best_interval: Vec<(usize, usize)>,
    mask: Vec<bool>,
}

impl RepetitiveField {
    /// Assemble a field from raster-order per-pixel rows (used by tests
    /// and by callers that load a precomputed field).
    pub fn from_parts(
        width: u32,
        height: u32,
        n_frames: usize,
        score: Vec<f64>,
        best_interval: Vec<(usize, usize)>,
        mask: Vec<bool>,
    ) -> Self {
        let len = (width * height) as usize;
        assert_eq!(score.len(), len);
        assert_eq!(best_interval.len(), len);
        assert_eq!(mask.len(), len);
        Self {
            width,
            height,
            n_frames,
            score,
            best_interval,
            mask,
        }
    }

    fn idx(&self, x: u32, y: u32) -> usize {
        (y * self.width + x) as usize
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn score(&self, x: u32, y: u32) -> f64 {
        self.score[self.idx(x, y)]
    }

    pub fn best_interval(&self, x: u32, y: u32) -> (usize, usize) {
        self.best_interval[self.idx(x, y)]
    }

    pub fn in_mask(&self, x: u32, y: u32) -> bool {
        self.mask[self.idx(x, y)]
    }

    pub fn mask_pixel_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

fn magnitudes_with(fft: &dyn Fft<f64>, window: &[f64]) -> Vec<f64> {
    let m = window.len();
    let mean = window.iter().sum::<f64>() / m as f64;
    let mut buffer: Vec<Complex<f64>> = window
        .iter()
        .map(|&v| Complex::new(v - mean, 0.0))
        .collect();
    fft.process(&mut buffer);
    (1..=m / 2).map(|k| buffer[k].norm()).collect()
}

/// Mean-removed DFT magnitudes |F_k| for k = 1 … ⌊M/2⌋.
pub fn dft_magnitudes(series: &[f64]) -> Result<Vec<f64>> {
    if series.len() < 2 {
        return Err(Error::DftTooShort { len: series.len() });
    }
    let fft = FftPlanner::new().plan_fft_forward(series.len());
    Ok(magnitudes_with(fft.as_ref(), series))
}

/// max_{k>τ} / max_{k≤τ} with the degenerate-denominator rule:
/// 0/0 → 0 and x/0 → +∞ for x > 0.
fn spectral_ratio(mags: &[f64], tau: usize) -> f64 {
    debug_assert!(tau < mags.len());
    let den = mags[..tau].iter().cloned().fold(0.0, f64::max);
    let num = mags[tau..].iter().cloned().fold(0.0, f64::max);
    if den == 0.0 {
        if num > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    } else {
        num / den
    }
}

fn score_with(fft: &dyn Fft<f64>, series: &[f64], i: usize, j: usize, tau: usize) -> f64 {
    let mags = magnitudes_with(fft, &series[i..=j]);
    spectral_ratio(&mags, tau)
}

/// C_rep of the closed interval [i, j] of `series`.
pub fn crep_interval(series: &[f64], i: usize, j: usize, tau: usize) -> Result<f64> {
    assert!(i < j && j < series.len(), "interval out of range");
    let m = j - i + 1;
    if tau >= m / 2 {
        return Err(Error::IntervalTooShort { len: m, tau });
    }
    let fft = FftPlanner::new().plan_fft_forward(m);
    Ok(score_with(fft.as_ref(), series, i, j, tau))
}

/// Candidate closed intervals: endpoints on the stride grid plus the two
/// extremes, spanning at least ⌊N/2⌋ frames and wide enough to score.
fn candidate_intervals(n: usize, stride: usize, tau: usize) -> Vec<(usize, usize)> {
    debug_assert!(stride >= 1);
    let mut endpoints: Vec<usize> = (0..n).step_by(stride).collect();
    if *endpoints.last().unwrap() != n - 1 {
        endpoints.push(n - 1);
    }
    let min_len = n / 2;
    let mut intervals = Vec::new();
    for (a, &i) in endpoints.iter().enumerate() {
        for &j in &endpoints[a + 1..] {
            let m = j - i + 1;
            if m >= min_len && tau < m / 2 {
                intervals.push((i, j));
            }
        }
    }
    intervals
}

struct PlanCache {
    plans: BTreeMap<usize, Arc<dyn Fft<f64>>>,
}

impl PlanCache {
    fn for_intervals(intervals: &[(usize, usize)]) -> Self {
        let mut planner = FftPlanner::new();
        let mut plans = BTreeMap::new();
        for &(i, j) in intervals {
            plans
                .entry(j - i + 1)
                .or_insert_with(|| planner.plan_fft_forward(j - i + 1));
        }
        Self { plans }
    }

    fn get(&self, len: usize) -> &dyn Fft<f64> {
        self.plans[&len].as_ref()
    }
}

fn crep_over(
    series: &[f64],
    intervals: &[(usize, usize)],
    tau: usize,
    cache: &PlanCache,
) -> (f64, (usize, usize)) {
    let n = series.len();
    let mut best_score = 0.0;
    let mut best_interval = (0, n - 1);
    let mut any = false;
    for &(i, j) in intervals {
        let score = score_with(cache.get(j - i + 1), series, i, j, tau);
        // Strict improvement keeps the lexicographically first maximizer.
        if !any || score > best_score {
            best_score = score;
            best_interval = (i, j);
            any = true;
        }
    }
    (best_score, best_interval)
}

/// Maximize C_rep over candidate intervals of `series`; returns the score
/// and its interval. With no scorable candidate the score is 0 over the
/// full range.
pub fn crep(series: &[f64], stride: usize, tau: usize) -> (f64, (usize, usize)) {
    assert!(series.len() >= 8, "need at least 8 frames");
    assert!(stride >= 1);
    let intervals = candidate_intervals(series.len(), stride, tau);
    let cache = PlanCache::for_intervals(&intervals);
    crep_over(series, &intervals, tau, &cache)
}

/// 80th percentile by nearest rank: the ⌈0.8·N⌉-th smallest value.
fn percentile80(values: &[u8]) -> u8 {
    debug_assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let rank = (80 * sorted.len() + 99) / 100; // ceil(0.8 N) in integers
    sorted[rank - 1]
}

/// Gap-filled luma series of one pixel.
fn luma_series(video: &FrameSequence, visibility: &VisibilityVolume, x: u32, y: u32) -> Vec<u8> {
    let filled = fill_invisible(&video.series(x, y), &visibility.series(x, y));
    filled.iter().map(|&[r, g, b]| luma(r, g, b)).collect()
}

/// Score every pixel and apply the two animation gates.
pub fn repetitive_mask(
    video: &FrameSequence,
    visibility: &VisibilityVolume,
    params: &RepetitiveParams,
) -> RepetitiveField {
    let n = video.len();
    assert!(n >= 8, "need at least 8 frames");
    let (w, h) = (video.width(), video.height());
    let intervals = candidate_intervals(n, params.stride, params.tau);
    let cache = PlanCache::for_intervals(&intervals);

    let per_pixel: Vec<(f64, (usize, usize), bool)> = (0..(w as usize * h as usize))
        .into_par_iter()
        .map(|p| {
            let (x, y) = ((p % w as usize) as u32, (p / w as usize) as u32);
            let lumas = luma_series(video, visibility, x, y);
            let series: Vec<f64> = lumas.iter().map(|&v| v as f64).collect();
            let (score, interval) = crep_over(&series, &intervals, params.tau, &cache);
            let animate = score > params.score_gate && percentile80(&lumas) > params.luma_gate;
            (score, interval, animate)
        })
        .collect();

    let mut field = RepetitiveField {
        width: w,
        height: h,
        n_frames: n,
        score: Vec::with_capacity(per_pixel.len()),
        best_interval: Vec::with_capacity(per_pixel.len()),
        mask: Vec::with_capacity(per_pixel.len()),
    };
    for (score, interval, animate) in per_pixel {
        field.score.push(score);
        field.best_interval.push(interval);
        field.mask.push(animate);
    }
    field
}

/// Normalized score heatmap for diagnostics (max score → white).
pub fn score_heatmap(field: &RepetitiveField) -> image::GrayImage {
    let finite_max = field
        .score
        .iter()
        .filter(|s| s.is_finite())
        .cloned()
        .fold(0.0, f64::max);
    image::GrayImage::from_fn(field.width, field.height, |x, y| {
        let s = field.score[(y * field.width + x) as usize];
        let v = if s.is_infinite() {
            255.0
        } else if finite_max > 0.0 {
            s / finite_max * 255.0
        } else {
            0.0
        };
        image::Luma([v.round().clamp(0.0, 255.0) as u8])
    })
}
