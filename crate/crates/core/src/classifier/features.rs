//! The 141-dimensional per-segment feature vector, in this fixed block
//! order:
//!
//! | block            | dim | notes                                             |
//! |------------------|-----|---------------------------------------------------|
//! | RGB mean         | 3   | over visible (pixel, frame) samples               |
//! | RGB variance     | 3   | population variance, same samples                 |
//! | LAB histogram    | 24  | 8 bins/channel, each block normalized to sum 1    |
//! | HoG3D BoW        | 100 | normalized histogram of codeword assignments      |
//! | area ratio       | 1   | segment area / frame area                         |
//! | convexity        | 1   | area / convex-hull area (hull of pixel squares)   |
//! | rectangleness    | 1   | area / bounding-box area                          |
//! | aspect ratio     | 1   | bounding-box width / height                       |
//! | edge count       | 1   | vertices of the simplified outer contour          |
//! | centroid         | 2   | pixel-center mean, normalized to [0,1]            |
//! | bounding box     | 4   | (min_x, min_y, max_x+1, max_y+1) / (W,H)          |
//!
//! Shape features use the segment's reference-frame 2D mask; the polygon
//! simplification tolerance is 1% of the smaller frame dimension.

use std::collections::{BTreeMap, BTreeSet};

use crate::color::rgb_to_lab;
use crate::error::{Error, Result};
use crate::temporal::LabHistogram;
use crate::video::{fill_invisible, FrameSequence, VisibilityVolume};

/// Total feature dimension: 3+3+24+100+1+1+1+1+1+2+4.
pub const FEATURE_DIM: usize = 141;
/// Words in the bag-of-words block.
pub const BOW_DIM: usize = 100;

/// Appearance statistics over the visible samples of a pixel set. A pixel
/// with no visible frame contributes its gap-filled series instead, so
/// every segment yields well-defined statistics.
fn appearance_stats(
    pixels: &[(u32, u32)],
    video: &FrameSequence,
    visibility: &VisibilityVolume,
) -> ([f64; 3], [f64; 3], LabHistogram) {
    let mut sum = [0.0; 3];
    let mut sum_sq = [0.0; 3];
    let mut hist = LabHistogram::zero();
    let mut count = 0usize;
    for &(x, y) in pixels {
        let visible = visibility.series(x, y);
        let samples: Vec<[u8; 3]> = if visible.iter().any(|&v| v) {
            (0..video.len())
                .filter(|&f| visible[f])
                .map(|f| video.pixel(f, x, y))
                .collect()
        } else {
            fill_invisible(&video.series(x, y), &visible)
        };
        for [r, g, b] in samples {
            for (c, v) in [r, g, b].into_iter().enumerate() {
                sum[c] += v as f64;
                sum_sq[c] += (v as f64) * (v as f64);
            }
            hist.add_sample(rgb_to_lab(r, g, b));
            count += 1;
        }
    }
    let n = count as f64;
    let mean = [sum[0] / n, sum[1] / n, sum[2] / n];
    let var = [
        sum_sq[0] / n - mean[0] * mean[0],
        sum_sq[1] / n - mean[1] * mean[1],
        sum_sq[2] / n - mean[2] * mean[2],
    ];
    (mean, var, hist)
}

/// Convex-hull area of the union of the segment's pixel squares
/// (monotone chain over the 4 corners of every pixel, shoelace area).
fn hull_area(pixels: &[(u32, u32)]) -> f64 {
    let mut corners: BTreeSet<(i64, i64)> = BTreeSet::new();
    for &(x, y) in pixels {
        let (x, y) = (x as i64, y as i64);
        corners.insert((x, y));
        corners.insert((x + 1, y));
        corners.insert((x, y + 1));
        corners.insert((x + 1, y + 1));
    }
    let points: Vec<(i64, i64)> = corners.into_iter().collect(); // sorted
    if points.len() < 3 {
        return 0.0;
    }
    let cross = |o: (i64, i64), a: (i64, i64), b: (i64, i64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut hull: Vec<(i64, i64)> = Vec::new();
    for &p in &points {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in points.iter().rev().skip(1) {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop(); // the upper chain ends back at the start point
    let mut twice_area = 0i64;
    for k in 0..hull.len() {
        let (x0, y0) = hull[k];
        let (x1, y1) = hull[(k + 1) % hull.len()];
        twice_area += x0 * y1 - x1 * y0;
    }
    (twice_area.abs() as f64) / 2.0
}

/// Outer boundary of a 4-connected pixel set as a closed lattice polygon,
/// collinear runs collapsed. Crack-following walk keeping the region on
/// the right; at pinch vertices the walk takes the right-most turn.
fn outer_contour(pixels: &[(u32, u32)]) -> Vec<(f64, f64)> {
    let set: BTreeSet<(i64, i64)> = pixels.iter().map(|&(x, y)| (x as i64, y as i64)).collect();
    let inside = |x: i64, y: i64| set.contains(&(x, y));

    // Directed boundary edges, clockwise in image coordinates (y down):
    // key = start vertex, value = directions available from it.
    // dir 0 = +x, 1 = +y, 2 = -x, 3 = -y.
    let step = |v: (i64, i64), d: u8| match d {
        0 => (v.0 + 1, v.1),
        1 => (v.0, v.1 + 1),
        2 => (v.0 - 1, v.1),
        _ => (v.0, v.1 - 1),
    };
    let mut edges: BTreeMap<(i64, i64), Vec<u8>> = BTreeMap::new();
    for &(x, y) in &set {
        if !inside(x, y - 1) {
            edges.entry((x, y)).or_default().push(0); // top, left→right
        }
        if !inside(x + 1, y) {
            edges.entry((x + 1, y)).or_default().push(1); // right, down
        }
        if !inside(x, y + 1) {
            edges.entry((x + 1, y + 1)).or_default().push(2); // bottom, right→left
        }
        if !inside(x - 1, y) {
            edges.entry((x, y + 1)).or_default().push(3); // left, up
        }
    }

    // The raster-first pixel always exposes its top edge; start there.
    let &(sx, sy) = set.iter().min_by_key(|&&(x, y)| (y, x)).unwrap();
    let start = (sx, sy);
    let mut walk: Vec<(i64, i64)> = vec![start];
    let mut at = step(start, 0);
    let mut dir = 0u8;
    while at != start {
        walk.push(at);
        let options = &edges[&at];
        // Right turn first, then straight, then left: hugs the region.
        let next_dir = [(dir + 1) % 4, dir, (dir + 3) % 4]
            .into_iter()
            .find(|d| options.contains(d))
            .expect("boundary cycle is closed");
        dir = next_dir;
        at = step(at, dir);
    }

    // Collapse collinear runs into polygon corners.
    let n = walk.len();
    let mut corners = Vec::new();
    for k in 0..n {
        let prev = walk[(k + n - 1) % n];
        let here = walk[k];
        let next = walk[(k + 1) % n];
        let d_in = (here.0 - prev.0, here.1 - prev.1);
        let d_out = (next.0 - here.0, next.1 - here.1);
        if d_in != d_out {
            corners.push((here.0 as f64, here.1 as f64));
        }
    }
    corners
}

fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (abx, aby) = (b.0 - a.0, b.1 - a.1);
    let (apx, apy) = (p.0 - a.0, p.1 - a.1);
    let len_sq = abx * abx + aby * aby;
    if len_sq == 0.0 {
        return (apx * apx + apy * apy).sqrt();
    }
    let t = ((apx * abx + apy * aby) / len_sq).clamp(0.0, 1.0);
    let (dx, dy) = (p.0 - (a.0 + t * abx), p.1 - (a.1 + t * aby));
    (dx * dx + dy * dy).sqrt()
}

fn simplify_chain(points: &[(f64, f64)], tolerance: f64, keep: &mut Vec<(f64, f64)>) {
    if points.len() <= 2 {
        return;
    }
    let (a, b) = (points[0], points[points.len() - 1]);
    let (mut worst, mut worst_d) = (0usize, -1.0);
    for (k, &p) in points.iter().enumerate().skip(1).take(points.len() - 2) {
        let d = point_segment_distance(p, a, b);
        if d > worst_d {
            worst_d = d;
            worst = k;
        }
    }
    if worst_d > tolerance {
        simplify_chain(&points[..=worst], tolerance, keep);
        keep.push(points[worst]);
        simplify_chain(&points[worst..], tolerance, keep);
    }
}

/// Douglas–Peucker on a closed polygon: split at the vertex farthest from
/// the first one, simplify both chains, count surviving vertices.
fn simplified_vertex_count(corners: &[(f64, f64)], tolerance: f64) -> usize {
    if corners.len() <= 4 {
        return corners.len();
    }
    let a = corners[0];
    let far = corners
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, &p)| {
            let (dx, dy) = (p.0 - a.0, p.1 - a.1);
            (k, dx * dx + dy * dy)
        })
        .fold((1usize, -1.0), |acc, (k, d)| if d > acc.1 { (k, d) } else { acc })
        .0;

    let chain1: Vec<(f64, f64)> = corners[..=far].to_vec();
    let mut chain2: Vec<(f64, f64)> = corners[far..].to_vec();
    chain2.push(a);

    let mut kept = vec![a, corners[far]];
    simplify_chain(&chain1, tolerance, &mut kept);
    simplify_chain(&chain2, tolerance, &mut kept);
    kept.len()
}

/// Shape block of the feature vector (computed on the 2D mask).
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeFeatures {
    pub area_ratio: f64,
    pub convexity: f64,
    pub rectangleness: f64,
    pub aspect_ratio: f64,
    pub edge_count: f64,
    pub centroid: [f64; 2],
    pub bbox: [f64; 4],
}

pub fn shape_features(pixels: &[(u32, u32)], width: u32, height: u32) -> ShapeFeatures {
    assert!(!pixels.is_empty());
    let area = pixels.len() as f64;

    let (mut min_x, mut min_y, mut max_x, mut max_y) = (u32::MAX, u32::MAX, 0u32, 0u32);
    let (mut sum_x, mut sum_y) = (0.0f64, 0.0f64);
    for &(x, y) in pixels {
        min_x = min_x.min(x);
        min_y = min_y.min(y);
        max_x = max_x.max(x);
        max_y = max_y.max(y);
        sum_x += x as f64 + 0.5;
        sum_y += y as f64 + 0.5;
    }
    let bbox_w = (max_x - min_x + 1) as f64;
    let bbox_h = (max_y - min_y + 1) as f64;

    let hull = hull_area(pixels);
    let corners = outer_contour(pixels);
    let tolerance = 0.01 * (width.min(height)) as f64;

    ShapeFeatures {
        area_ratio: area / (width as f64 * height as f64),
        convexity: area / hull,
        rectangleness: area / (bbox_w * bbox_h),
        aspect_ratio: bbox_w / bbox_h,
        edge_count: simplified_vertex_count(&corners, tolerance) as f64,
        centroid: [
            sum_x / area / width as f64,
            sum_y / area / height as f64,
        ],
        bbox: [
            min_x as f64 / width as f64,
            min_y as f64 / height as f64,
            (max_x + 1) as f64 / width as f64,
            (max_y + 1) as f64 / height as f64,
        ],
    }
}

/// Assemble the full 141-dim vector. `bow_counts` are the raw codeword
/// counts of descriptors whose grid point lies inside the segment; an
/// all-zero count vector stays zero (recorded, not an error).
pub fn extract_features(
    pixels: &[(u32, u32)],
    video: &FrameSequence,
    visibility: &VisibilityVolume,
    bow_counts: &[f64],
) -> Result<Vec<f64>> {
    if pixels.is_empty() {
        return Err(Error::Config("cannot featurize an empty segment".into()));
    }
    if bow_counts.len() != BOW_DIM {
        return Err(Error::FeatureDimMismatch {
            got: bow_counts.len(),
            want: BOW_DIM,
        });
    }

    let (mean, var, hist) = appearance_stats(pixels, video, visibility);
    let shape = shape_features(pixels, video.width(), video.height());

    let mut v = Vec::with_capacity(FEATURE_DIM);
    v.extend_from_slice(&mean);
    v.extend_from_slice(&var);
    let total = hist.total();
    v.extend(hist.counts.iter().map(|c| c / total));
    let bow_total: f64 = bow_counts.iter().sum();
    if bow_total > 0.0 {
        v.extend(bow_counts.iter().map(|c| c / bow_total));
    } else {
        v.extend(std::iter::repeat(0.0).take(BOW_DIM));
    }
    v.push(shape.area_ratio);
    v.push(shape.convexity);
    v.push(shape.rectangleness);
    v.push(shape.aspect_ratio);
    v.push(shape.edge_count);
    v.extend_from_slice(&shape.centroid);
    v.extend_from_slice(&shape.bbox);
    debug_assert_eq!(v.len(), FEATURE_DIM);
    Ok(v)
}

/// Positive iff strictly more than 80% of the segment's reference-frame
/// pixels are annotated as display (integer-exact comparison).
pub fn label_segments(
    segments: &[Vec<(u32, u32)>],
    annotations: &VisibilityVolume,
    reference_index: usize,
) -> Vec<bool> {
    segments
        .iter()
        .map(|pixels| {
            let inter = pixels
                .iter()
                .filter(|&&(x, y)| annotations.is_visible(reference_index, x, y))
                .count();
            5 * inter > 4 * pixels.len()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Rgb, RgbImage};
    use proptest::prelude::*;

    fn rect_pixels(x0: u32, y0: u32, w: u32, h: u32) -> Vec<(u32, u32)> {
        let mut v = Vec::new();
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                v.push((x, y));
            }
        }
        v
    }

    fn gray_video(w: u32, h: u32, n: usize, v: u8) -> FrameSequence {
        FrameSequence::from_frames(vec![RgbImage::from_pixel(w, h, Rgb([v; 3])); n]).unwrap()
    }

    #[test]
    fn rectangle_geometry_is_exact() {
        let s = shape_features(&rect_pixels(3, 5, 8, 4), 32, 24);
        assert_eq!(s.convexity, 1.0);
        assert_eq!(s.rectangleness, 1.0);
        assert_eq!(s.aspect_ratio, 2.0);
        assert_eq!(s.edge_count, 4.0);
        assert_eq!(s.area_ratio, 32.0 / (32.0 * 24.0));
        assert_eq!(s.bbox, [3.0 / 32.0, 5.0 / 24.0, 11.0 / 32.0, 9.0 / 24.0]);
    }

    #[test]
    fn full_frame_segment_features() {
        let s = shape_features(&rect_pixels(0, 0, 16, 12), 16, 12);
        assert_eq!(s.area_ratio, 1.0);
        assert_eq!(s.convexity, 1.0);
        assert_eq!(s.rectangleness, 1.0);
        assert_eq!(s.edge_count, 4.0);
        assert_eq!(s.centroid, [0.5, 0.5]);
        assert_eq!(s.bbox, [0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn l_shape_has_six_edges_and_low_convexity() {
        // 40×40 square with the 20×20 top-right quadrant removed (well above
        // the 1px simplification tolerance on a 100×100 frame).
        let mut pixels = rect_pixels(0, 0, 20, 40);
        pixels.extend(rect_pixels(20, 20, 20, 20));
        let s = shape_features(&pixels, 100, 100);
        assert_eq!(s.edge_count, 6.0);
        assert!(s.convexity < 1.0);
        assert_eq!(s.rectangleness, 1200.0 / 1600.0);
    }

    #[test]
    fn constant_gray_segment_stats() {
        let video = gray_video(8, 8, 4, 128);
        let vis = VisibilityVolume::all_visible(8, 8, 4);
        let v = extract_features(&rect_pixels(1, 1, 3, 3), &video, &vis, &[0.0; 100]).unwrap();
        assert_eq!(v.len(), FEATURE_DIM);
        assert_eq!(&v[0..3], &[128.0, 128.0, 128.0]);
        assert_eq!(&v[3..6], &[0.0, 0.0, 0.0]);
        // LAB histogram blocks each sum to 1.
        for block in [&v[6..14], &v[14..22], &v[22..30]] {
            assert!((block.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        // Empty BoW stays the zero vector.
        assert!(v[30..130].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn bow_block_normalizes_to_one() {
        let video = gray_video(8, 8, 4, 10);
        let vis = VisibilityVolume::all_visible(8, 8, 4);
        let mut counts = vec![0.0; 100];
        counts[3] = 6.0;
        counts[42] = 2.0;
        let v = extract_features(&rect_pixels(0, 0, 4, 4), &video, &vis, &counts).unwrap();
        assert_eq!(v[30 + 3], 0.75);
        assert_eq!(v[30 + 42], 0.25);
        assert!((v[30..130].iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn labeling_uses_a_strict_80_percent_rule() {
        let mut ann = VisibilityVolume::all_visible(10, 10, 3);
        for y in 0..10 {
            for x in 0..10 {
                ann.set(1, x, y, false); // reference frame: nothing annotated
            }
        }
        // Annotate 8 of a 10-pixel segment -> exactly 0.8 -> negative.
        let segment = rect_pixels(0, 0, 10, 1);
        for x in 0..8 {
            ann.set(1, x, 0, true);
        }
        let labels = label_segments(&[segment.clone()], &ann, 1);
        assert!(!labels[0], "exactly 80% must be negative");

        ann.set(1, 8, 0, true); // 9/10 > 0.8
        let labels = label_segments(&[segment.clone(), rect_pixels(0, 5, 4, 1)], &ann, 1);
        assert!(labels[0]);
        assert!(!labels[1], "disjoint segment is negative");
    }

    proptest! {
        // Translating a mask changes only centroid and bbox.
        #[test]
        fn shape_features_are_translation_invariant(
            w in 1u32..6, h in 1u32..6, dx in 0u32..20, dy in 0u32..20,
            notch in any::<bool>(),
        ) {
            let mut base = rect_pixels(2, 2, w + 1, h + 1);
            if notch {
                base.retain(|&(x, y)| !(x == 2 && y == 2));
            }
            let moved: Vec<(u32, u32)> =
                base.iter().map(|&(x, y)| (x + dx, y + dy)).collect();
            let a = shape_features(&base, 64, 64);
            let b = shape_features(&moved, 64, 64);
            prop_assert_eq!(a.area_ratio, b.area_ratio);
            prop_assert_eq!(a.convexity, b.convexity);
            prop_assert_eq!(a.rectangleness, b.rectangleness);
            prop_assert_eq!(a.aspect_ratio, b.aspect_ratio);
            prop_assert_eq!(a.edge_count, b.edge_count);
            prop_assert!((b.centroid[0] - a.centroid[0] - dx as f64 / 64.0).abs() < 1e-12);
            prop_assert!((b.centroid[1] - a.centroid[1] - dy as f64 / 64.0).abs() < 1e-12);
        }
    }
}
