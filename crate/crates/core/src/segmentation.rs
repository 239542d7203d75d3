//! Greedy bottom-up 2D segmentation under the combined distance
//! D = D_T + 0.1·D_A.
//!
//! Every pixel starts as its own region. Within a threshold epoch the
//! 4-adjacent pair with the smallest distance merges (ties broken by the
//! lexicographically smallest region-id pair) while that minimum stays at
//! or below the threshold; then the threshold grows by ×1.5 and merging
//! continues until a single region remains. The full merge order is
//! logged, so any percentage level of the hierarchy can be materialized
//! afterwards by replaying a prefix of the log.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::temporal::{
    appearance_distance, descriptor_with_params, pattern_distance, pixel_histogram, to_f64,
    LabHistogram, TemporalBinaryPattern, ALPHA1, ALPHA2, BETA1, THETA,
};
use crate::video::{fill_invisible, FrameSequence, VisibilityVolume};

/// Knobs of the segmentation stage (all defaults follow the pipeline
/// defaults: θ=100, α₁=4, β₁=4, α₂=2, threshold 0.2 ×1.5, weight 0.1).
#[derive(Debug, Clone, Copy)]
pub struct SegmentParams {
    pub theta: f64,
    pub alpha1: usize,
    pub beta1: usize,
    pub alpha2: usize,
    pub initial_threshold: f64,
    pub growth: f64,
    pub appearance_weight: f64,
}

impl Default for SegmentParams {
    fn default() -> Self {
        Self {
            theta: THETA,
            alpha1: ALPHA1,
            beta1: BETA1,
            alpha2: ALPHA2,
            initial_threshold: 0.2,
            growth: 1.5,
            appearance_weight: 0.1,
        }
    }
}

/// Mutable per-region signature carried through the merge loop: the
/// area-weighted mean color series, the descriptor recomputed from it, and
/// the additive LAB histogram.
#[derive(Debug, Clone)]
pub struct RegionState {
    pub area: usize,
    pub series: Vec<[f64; 3]>,
    pub descriptor: TemporalBinaryPattern,
    pub histogram: LabHistogram,
}

impl RegionState {
    /// Leaf state of a single pixel; invisible frames are gap-filled
    /// before the descriptor is computed.
    pub fn from_pixel(
        video: &FrameSequence,
        visibility: &VisibilityVolume,
        x: u32,
        y: u32,
        params: &SegmentParams,
    ) -> Result<Self> {
        let filled = fill_invisible(&video.series(x, y), &visibility.series(x, y));
        let series = to_f64(&filled);
        let descriptor = descriptor_with_params(
            &series,
            params.theta,
            params.alpha1,
            params.beta1,
            params.alpha2,
        )?;
        Ok(Self {
            area: 1,
            series,
            descriptor,
            histogram: pixel_histogram(x, y, video, visibility),
        })
    }

    /// State of the union of two regions: series is the area-weighted
    /// mean, the histogram adds, and the descriptor is recomputed from
    /// the merged series.
    pub fn merged(a: &RegionState, b: &RegionState, params: &SegmentParams) -> Result<Self> {
        debug_assert_eq!(a.series.len(), b.series.len());
        let wa = a.area as f64;
        let wb = b.area as f64;
        let total = wa + wb;
        let series: Vec<[f64; 3]> = a
            .series
            .iter()
            .zip(&b.series)
            .map(|(ca, cb)| {
                [
                    (wa * ca[0] + wb * cb[0]) / total,
                    (wa * ca[1] + wb * cb[1]) / total,
                    (wa * ca[2] + wb * cb[2]) / total,
                ]
            })
            .collect();
        let descriptor = descriptor_with_params(
            &series,
            params.theta,
            params.alpha1,
            params.beta1,
            params.alpha2,
        )?;
        let mut histogram = a.histogram.clone();
        histogram.add(&b.histogram);
        Ok(Self {
            area: a.area + b.area,
            series,
            descriptor,
            histogram,
        })
    }
}

/// D = D_T + w·D_A for two region signatures. Both component distances
/// are total by construction inside the segmentation (equal descriptor
/// lengths, nonzero histograms).
pub fn pair_distance(a: &RegionState, b: &RegionState, appearance_weight: f64) -> f64 {
    let dt = pattern_distance(&a.descriptor, &b.descriptor)
        .expect("descriptors share one video length");
    let da = appearance_distance(&a.histogram, &b.histogram)
        .expect("leaf histograms are never empty");
    dt + appearance_weight * da
}

/// One committed merge. Region ids are the raster index of the region's
/// smallest member pixel at merge time, with `region_a < region_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeRecord {
    pub region_a: usize,
    pub region_b: usize,
    pub distance: f64,
    pub threshold: f64,
}

/// Complete record of a segmentation run.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeHierarchy {
    width: u32,
    height: u32,
    pub merge_log: Vec<MergeRecord>,
}

/// A materialized hierarchy level: dense region ids per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    pub width: u32,
    pub height: u32,
    /// Raster-order region id per pixel, dense in `0..n_regions`.
    pub labels: Vec<u32>,
    pub n_regions: usize,
}

impl LabelMap {
    pub fn label(&self, x: u32, y: u32) -> u32 {
        self.labels[(y * self.width + x) as usize]
    }

    /// Pixels of every region, each list in raster order.
    pub fn region_pixels(&self) -> Vec<Vec<(u32, u32)>> {
        let mut regions = vec![Vec::new(); self.n_regions];
        for y in 0..self.height {
            for x in 0..self.width {
                regions[self.label(x, y) as usize].push((x, y));
            }
        }
        regions
    }
}

/// Regions materialized at one hierarchy level.
#[derive(Debug, Clone)]
pub struct LevelRegions {
    pub percent: f64,
    pub label_map: LabelMap,
    /// `regions[id]` = pixels of the region with dense id `id`.
    pub regions: Vec<Vec<(u32, u32)>>,
}

#[derive(Debug, Clone, PartialEq)]
struct HeapEntry {
    distance: f64,
    a: usize,
    b: usize,
    version_a: u32,
    version_b: u32,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    // Reversed so the std max-heap pops the smallest (distance, a, b).
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .distance
            .total_cmp(&self.distance)
            .then_with(|| other.a.cmp(&self.a))
            .then_with(|| other.b.cmp(&self.b))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Run the full greedy merge on `video` and return the hierarchy.
pub fn segment(
    video: &FrameSequence,
    visibility: &VisibilityVolume,
    params: &SegmentParams,
) -> Result<MergeHierarchy> {
    let w = video.width() as usize;
    let h = video.height() as usize;
    let hw = w * h;

    let mut regions: Vec<Option<RegionState>> = (0..hw)
        .into_par_iter()
        .map(|p| {
            RegionState::from_pixel(
                video,
                visibility,
                (p % w) as u32,
                (p / w) as u32,
                params,
            )
            .map(Some)
        })
        .collect::<Result<_>>()?;

    let mut neighbors: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); hw];
    let mut edges: Vec<(usize, usize)> = Vec::with_capacity(2 * hw);
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            if x + 1 < w {
                edges.push((p, p + 1));
            }
            if y + 1 < h {
                edges.push((p, p + w));
            }
        }
    }
    for &(a, b) in &edges {
        neighbors[a].insert(b);
        neighbors[b].insert(a);
    }

    let mut versions = vec![0u32; hw];
    let entries: Vec<HeapEntry> = edges
        .par_iter()
        .map(|&(a, b)| HeapEntry {
            distance: pair_distance(
                regions[a].as_ref().unwrap(),
                regions[b].as_ref().unwrap(),
                params.appearance_weight,
            ),
            a,
            b,
            version_a: 0,
            version_b: 0,
        })
        .collect();
    let mut heap: BinaryHeap<HeapEntry> = entries.into();

    let mut threshold = params.initial_threshold;
    let mut alive = hw;
    let mut merge_log = Vec::with_capacity(hw.saturating_sub(1));

    while alive > 1 {
        // Peek at the smallest still-valid pair; drop stale entries.
        let top = loop {
            match heap.peek() {
                None => break None,
                Some(e) => {
                    let valid = regions[e.a].is_some()
                        && regions[e.b].is_some()
                        && versions[e.a] == e.version_a
                        && versions[e.b] == e.version_b;
                    if valid {
                        break Some(e.clone());
                    }
                    heap.pop();
                }
            }
        };
        let Some(top) = top else {
            break; // disconnected grid cannot happen, but stay safe
        };
        if top.distance > threshold {
            // Don't consume the entry: it becomes mergeable once the
            // threshold has grown past it.
            threshold *= params.growth;
            continue;
        }
        heap.pop();

        let (lo, hi) = (top.a, top.b);
        let state_a = regions[lo].take().expect("validated above");
        let state_b = regions[hi].take().expect("validated above");
        let merged = RegionState::merged(&state_a, &state_b, params)?;
        regions[lo] = Some(merged);
        versions[lo] += 1;
        versions[hi] += 1;

        let nb_a = std::mem::take(&mut neighbors[lo]);
        let nb_b = std::mem::take(&mut neighbors[hi]);
        let mut merged_nb: BTreeSet<usize> = nb_a.union(&nb_b).copied().collect();
        merged_nb.remove(&lo);
        merged_nb.remove(&hi);
        for &q in &merged_nb {
            neighbors[q].remove(&hi);
            neighbors[q].insert(lo);
            let (a, b) = (lo.min(q), lo.max(q));
            heap.push(HeapEntry {
                distance: pair_distance(
                    regions[a].as_ref().unwrap(),
                    regions[b].as_ref().unwrap(),
                    params.appearance_weight,
                ),
                a,
                b,
                version_a: versions[a],
                version_b: versions[b],
            });
        }
        neighbors[lo] = merged_nb;

        merge_log.push(MergeRecord {
            region_a: lo,
            region_b: hi,
            distance: top.distance,
            threshold,
        });
        alive -= 1;
    }

    Ok(MergeHierarchy {
        width: video.width(),
        height: video.height(),
        merge_log,
    })
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

impl MergeHierarchy {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn initial_region_count(&self) -> usize {
        (self.width * self.height) as usize
    }

    pub fn total_merges(&self) -> usize {
        self.merge_log.len()
    }

    /// Labeling after replaying the first `k` merges of the log. Region
    /// ids are dense, assigned in raster order of each region's smallest
    /// pixel.
    pub fn labeling_after_merges(&self, k: usize) -> LabelMap {
        let hw = self.initial_region_count();
        let mut parent: Vec<usize> = (0..hw).collect();
        for rec in &self.merge_log[..k] {
            let ra = find(&mut parent, rec.region_a);
            let rb = find(&mut parent, rec.region_b);
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            parent[hi] = lo;
        }
        let mut dense: Vec<Option<u32>> = vec![None; hw];
        let mut labels = vec![0u32; hw];
        let mut next = 0u32;
        for p in 0..hw {
            let root = find(&mut parent, p);
            let id = *dense[root].get_or_insert_with(|| {
                let id = next;
                next += 1;
                id
            });
            labels[p] = id;
        }
        LabelMap {
            width: self.width,
            height: self.height,
            labels,
            n_regions: next as usize,
        }
    }

    /// Labeling after the first `floor(percent/100 · M)` merges.
    pub fn level(&self, percent: f64) -> Result<LabelMap> {
        if !(0.0..=100.0).contains(&percent) || !percent.is_finite() {
            return Err(Error::LevelOutOfRange { percent });
        }
        let merges = (percent * self.total_merges() as f64 / 100.0).floor() as usize;
        Ok(self.labeling_after_merges(merges))
    }

    /// Materialize several levels; every pixel belongs to exactly one
    /// region per requested level.
    pub fn regions_at(&self, percents: &[f64]) -> Result<Vec<LevelRegions>> {
        percents
            .iter()
            .map(|&percent| {
                let label_map = self.level(percent)?;
                let regions = label_map.region_pixels();
                Ok(LevelRegions {
                    percent,
                    label_map,
                    regions,
                })
            })
            .collect()
    }
}

/// Render a label map as a 16-bit gray image (debug/CLI export).
pub fn label_map_image(
    map: &LabelMap,
) -> Result<image::ImageBuffer<image::Luma<u16>, Vec<u16>>> {
    if map.n_regions > u16::MAX as usize + 1 {
        return Err(Error::Config(format!(
            "{} regions exceed the 16-bit label export range",
            map.n_regions
        )));
    }
    Ok(image::ImageBuffer::from_fn(map.width, map.height, |x, y| {
        image::Luma([map.label(x, y) as u16])
    }))
}
