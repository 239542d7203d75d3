//! Display-region selection: HoG3D bag-of-words + per-segment features
//! feed a random forest; the per-level verdicts are unioned and the union
//! split into filtered connected components.

pub mod features;
pub mod forest;
pub mod hog3d;
pub mod kmeans;

pub use features::{
    extract_features, label_segments, shape_features, ShapeFeatures, BOW_DIM, FEATURE_DIM,
};
pub use forest::{classify, train_forest, ForestModel, Node, Tree, FEATURE_ORDER};
pub use hog3d::{hog3d_descriptors, GridDescriptor, DESCRIPTOR_DIM};
pub use kmeans::{train_codebook, Hog3dCodebook};

use std::collections::BTreeSet;

use crate::error::Result;
use crate::segmentation::MergeHierarchy;
use crate::video::{FrameSequence, VisibilityVolume};

/// Knobs for the selection stage.
#[derive(Debug, Clone)]
pub struct DisplayParams {
    /// Hierarchy levels (percent of merges) at which segments are classified.
    pub levels: Vec<f64>,
    /// Components smaller than this many pixels are discarded.
    pub min_component_px: usize,
    /// Components covering more than this fraction of the frame are discarded.
    pub max_component_frac: f64,
    /// Spatial stride of the HoG3D grid, in pixels.
    pub grid_stride_xy: u32,
    /// Temporal stride of the HoG3D grid, in frames.
    pub grid_stride_t: usize,
}

impl Default for DisplayParams {
    fn default() -> Self {
        Self {
            levels: vec![60.0, 70.0, 80.0],
            min_component_px: 50,
            max_component_frac: 0.30,
            grid_stride_xy: 8,
            grid_stride_t: 4,
        }
    }
}

/// Codeword assignment of every grid descriptor, computed once per video
/// and shared by all segments at all levels.
#[derive(Debug, Clone)]
pub struct GridAssignments {
    n_words: usize,
    /// (x, y, codeword) per grid point; the temporal coordinate is dropped
    /// because segments are 2D.
    pub points: Vec<(u32, u32, usize)>,
}

impl GridAssignments {
    pub fn compute(
        video: &FrameSequence,
        codebook: &Hog3dCodebook,
        stride_xy: u32,
        stride_t: usize,
    ) -> Result<Self> {
        let descriptors = hog3d_descriptors(video, stride_xy, stride_t)?;
        Ok(Self {
            n_words: codebook.k(),
            points: descriptors
                .iter()
                .map(|d| (d.x, d.y, codebook.assign(&d.vector)))
                .collect(),
        })
    }

    /// Raw codeword counts over the grid points that fall inside `pixels`.
    pub fn bow_counts(&self, pixels: &[(u32, u32)]) -> Vec<f64> {
        let set: BTreeSet<(u32, u32)> = pixels.iter().copied().collect();
        let mut counts = vec![0.0; self.n_words];
        for &(x, y, word) in &self.points {
            if set.contains(&(x, y)) {
                counts[word] += 1.0;
            }
        }
        counts
    }
}

/// 4-connected components of a raster mask, in raster order of their
/// first pixel; each component's pixels are raster-sorted.
pub fn connected_components(mask: &[bool], width: u32, height: u32) -> Vec<Vec<(u32, u32)>> {
    assert_eq!(mask.len(), (width * height) as usize);
    let idx = |x: u32, y: u32| (y * width + x) as usize;
    let mut seen = vec![false; mask.len()];
    let mut components = Vec::new();
    for y in 0..height {
        for x in 0..width {
            if !mask[idx(x, y)] || seen[idx(x, y)] {
                continue;
            }
            let mut queue = std::collections::VecDeque::from([(x, y)]);
            seen[idx(x, y)] = true;
            let mut pixels = Vec::new();
            while let Some((cx, cy)) = queue.pop_front() {
                pixels.push((cx, cy));
                let mut try_push = |nx: u32, ny: u32| {
                    if mask[idx(nx, ny)] && !seen[idx(nx, ny)] {
                        seen[idx(nx, ny)] = true;
                        queue.push_back((nx, ny));
                    }
                };
                if cx > 0 {
                    try_push(cx - 1, cy);
                }
                if cx + 1 < width {
                    try_push(cx + 1, cy);
                }
                if cy > 0 {
                    try_push(cx, cy - 1);
                }
                if cy + 1 < height {
                    try_push(cx, cy + 1);
                }
            }
            pixels.sort_unstable_by_key(|&(px, py)| (py, px));
            components.push(pixels);
        }
    }
    components
}

/// Why a component was discarded by [`partition_components`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    TooSmall,
    TooLarge,
    MostlyInvisible,
}

impl std::fmt::Display for DropReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DropReason::TooSmall => "below the minimum pixel count",
            DropReason::TooLarge => "above the maximum frame fraction",
            DropReason::MostlyInvisible => "mostly invisible",
        })
    }
}

/// Apply the three component filters — minimum size, maximum frame
/// fraction, and the mostly-invisible rule (a pixel counts as mostly
/// invisible when it is invisible in more than half the frames; the
/// component is dropped when more than half its pixels are) — returning
/// the survivors plus the size and reason of every drop.
pub fn partition_components(
    components: Vec<Vec<(u32, u32)>>,
    visibility: &VisibilityVolume,
    params: &DisplayParams,
    width: u32,
    height: u32,
) -> (Vec<Vec<(u32, u32)>>, Vec<(usize, DropReason)>) {
    let frame_area = width as f64 * height as f64;
    let n_frames = visibility.n_frames();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for pixels in components {
        if pixels.len() < params.min_component_px {
            dropped.push((pixels.len(), DropReason::TooSmall));
            continue;
        }
        if pixels.len() as f64 > params.max_component_frac * frame_area {
            dropped.push((pixels.len(), DropReason::TooLarge));
            continue;
        }
        let mostly_invisible = pixels
            .iter()
            .filter(|&&(x, y)| {
                let invisible = (0..n_frames)
                    .filter(|&f| !visibility.is_visible(f, x, y))
                    .count();
                2 * invisible > n_frames
            })
            .count();
        if 2 * mostly_invisible > pixels.len() {
            dropped.push((pixels.len(), DropReason::MostlyInvisible));
            continue;
        }
        kept.push(pixels);
    }
    (kept, dropped)
}

/// [`partition_components`] without the drop records.
pub fn filter_components(
    components: Vec<Vec<(u32, u32)>>,
    visibility: &VisibilityVolume,
    params: &DisplayParams,
    width: u32,
    height: u32,
) -> Vec<Vec<(u32, u32)>> {
    partition_components(components, visibility, params, width, height).0
}

/// Final output of the classification stage.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplaySelection {
    pub width: u32,
    pub height: u32,
    /// Surviving components, raster-ordered by first pixel.
    pub components: Vec<Vec<(u32, u32)>>,
    /// Pixel count and reason of every filtered-out component.
    pub dropped: Vec<(usize, DropReason)>,
}

impl DisplaySelection {
    /// Union mask of all kept components.
    pub fn mask(&self) -> Vec<bool> {
        let mut mask = vec![false; (self.width * self.height) as usize];
        for pixels in &self.components {
            for &(x, y) in pixels {
                mask[(y * self.width + x) as usize] = true;
            }
        }
        mask
    }

    pub fn total_pixels(&self) -> usize {
        self.components.iter().map(Vec::len).sum()
    }
}

/// Classify every segment at every configured level, union the positive
/// ones, and filter the connected components of the union.
pub fn select_display_regions(
    video: &FrameSequence,
    visibility: &VisibilityVolume,
    hierarchy: &MergeHierarchy,
    model: &ForestModel,
    codebook: &Hog3dCodebook,
    params: &DisplayParams,
) -> Result<DisplaySelection> {
    let assignments =
        GridAssignments::compute(video, codebook, params.grid_stride_xy, params.grid_stride_t)?;
    let (width, height) = (video.width(), video.height());
    let mut union = vec![false; (width * height) as usize];
    for level in hierarchy.regions_at(&params.levels)? {
        for pixels in &level.regions {
            let counts = assignments.bow_counts(pixels);
            let feats = extract_features(pixels, video, visibility, &counts)?;
            let (positive, _) = classify(model, &feats)?;
            if positive {
                for &(x, y) in pixels {
                    union[(y * width + x) as usize] = true;
                }
            }
        }
    }
    let components = connected_components(&union, width, height);
    let (components, dropped) =
        partition_components(components, visibility, params, width, height);
    Ok(DisplaySelection {
        width,
        height,
        components,
        dropped,
    })
}
