//! Sparse feature tracking: Shi-Tomasi corner selection on the reference
//! frame followed by bidirectional pyramidal Lucas-Kanade tracking
//! (21×21 window, 10 iterations per level, up to 3 pyramid levels).
//!
//! Tracks may also be read from / written to a plain-text file (one line
//! per track: start frame, then x,y pairs) so rendering can be tested
//! independently of tracker quality.

use std::collections::BTreeSet;
use std::path::Path;

use image::RgbImage;

use crate::color::luma;
use crate::error::{Error, Result};
use crate::video::FrameSequence;

const WINDOW_HALF: i64 = 10; // 21×21 window
const LK_ITERATIONS: usize = 10;
const MAX_PYRAMID_LEVELS: usize = 3;
const QUALITY_LEVEL: f64 = 0.01;
const MIN_CORNER_DISTANCE_SQ: f64 = 64.0; // 8 px
const MAX_CORNERS: usize = 400;

/// One tracked feature: a position in every consecutive frame it survived.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTrack {
    pub start_frame: usize,
    pub positions: Vec<(f64, f64)>,
}

impl FeatureTrack {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn end_frame(&self) -> usize {
        self.start_frame + self.positions.len() - 1
    }

    pub fn position_at(&self, frame: usize) -> Option<(f64, f64)> {
        if frame < self.start_frame || frame > self.end_frame() {
            return None;
        }
        Some(self.positions[frame - self.start_frame])
    }

    /// Population standard deviation of each coordinate axis.
    pub fn coordinate_stddev(&self) -> (f64, f64) {
        let n = self.positions.len() as f64;
        let (mx, my) = self
            .positions
            .iter()
            .fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
        let (mx, my) = (mx / n, my / n);
        let (vx, vy) = self.positions.iter().fold((0.0, 0.0), |a, p| {
            (a.0 + (p.0 - mx).powi(2), a.1 + (p.1 - my).powi(2))
        });
        ((vx / n).sqrt(), (vy / n).sqrt())
    }
}

/// A grayscale grid with its central-difference gradients.
struct Gray {
    w: i64,
    h: i64,
    data: Vec<f64>,
    gx: Vec<f64>,
    gy: Vec<f64>,
}

impl Gray {
    fn from_frame(img: &RgbImage) -> Self {
        let (w, h) = (img.width() as i64, img.height() as i64);
        let data: Vec<f64> = img
            .pixels()
            .map(|p| luma(p.0[0], p.0[1], p.0[2]) as f64)
            .collect();
        Self::from_data(w, h, data)
    }

    fn from_data(w: i64, h: i64, data: Vec<f64>) -> Self {
        let at = |x: i64, y: i64| data[(y.clamp(0, h - 1) * w + x.clamp(0, w - 1)) as usize];
        let mut gx = vec![0.0; data.len()];
        let mut gy = vec![0.0; data.len()];
        for y in 0..h {
            for x in 0..w {
                gx[(y * w + x) as usize] = (at(x + 1, y) - at(x - 1, y)) / 2.0;
                gy[(y * w + x) as usize] = (at(x, y + 1) - at(x, y - 1)) / 2.0;
            }
        }
        Self { w, h, data, gx, gy }
    }

    fn downsample(&self) -> Self {
        let (w, h) = (self.w / 2, self.h / 2);
        let mut data = vec![0.0; (w * h) as usize];
        for y in 0..h {
            for x in 0..w {
                let mut sum = 0.0;
                for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    sum += self.data[((2 * y + dy) * self.w + 2 * x + dx) as usize];
                }
                data[(y * w + x) as usize] = sum / 4.0;
            }
        }
        Self::from_data(w, h, data)
    }

    fn sample(&self, grid: &[f64], x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, (self.w - 1) as f64);
        let y = y.clamp(0.0, (self.h - 1) as f64);
        let (x0, y0) = (x.floor(), y.floor());
        let x1 = (x0 + 1.0).min((self.w - 1) as f64);
        let y1 = (y0 + 1.0).min((self.h - 1) as f64);
        let (fx, fy) = (x - x0, y - y0);
        let at = |px: f64, py: f64| grid[(py as i64 * self.w + px as i64) as usize];
        let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
        let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    fn in_window(&self, x: f64, y: f64) -> bool {
        let half = WINDOW_HALF as f64;
        x >= half && y >= half && x <= (self.w - 1) as f64 - half && y <= (self.h - 1) as f64 - half
    }
}

fn build_pyramid(img: &RgbImage) -> Vec<Gray> {
    let base = Gray::from_frame(img);
    let mut levels = vec![base];
    while levels.len() < MAX_PYRAMID_LEVELS {
        let top = levels.last().unwrap();
        if top.w / 2 < 2 * WINDOW_HALF + 1 || top.h / 2 < 2 * WINDOW_HALF + 1 {
            break;
        }
        levels.push(top.downsample());
    }
    levels
}

/// One pyramid level of iterative LK: refine displacement `d` so that
/// next(p + d) matches prev(p) over the window. Samples are clamped at
/// image borders (coarse levels routinely overlap them); returns None on
/// a rank-deficient window or divergence.
fn lk_refine(prev: &Gray, next: &Gray, p: (f64, f64), mut d: (f64, f64)) -> Option<(f64, f64)> {
    // Structure tensor of the template window (constant across iterations).
    let (mut gxx, mut gxy, mut gyy) = (0.0, 0.0, 0.0);
    for wy in -WINDOW_HALF..=WINDOW_HALF {
        for wx in -WINDOW_HALF..=WINDOW_HALF {
            let (sx, sy) = (p.0 + wx as f64, p.1 + wy as f64);
            let ix = prev.sample(&prev.gx, sx, sy);
            let iy = prev.sample(&prev.gy, sx, sy);
            gxx += ix * ix;
            gxy += ix * iy;
            gyy += iy * iy;
        }
    }
    let det = gxx * gyy - gxy * gxy;
    if det <= 1e-9 {
        return None;
    }

    for _ in 0..LK_ITERATIONS {
        let (mut bx, mut by) = (0.0, 0.0);
        for wy in -WINDOW_HALF..=WINDOW_HALF {
            for wx in -WINDOW_HALF..=WINDOW_HALF {
                let (sx, sy) = (p.0 + wx as f64, p.1 + wy as f64);
                let e = prev.sample(&prev.data, sx, sy)
                    - next.sample(&next.data, sx + d.0, sy + d.1);
                bx += e * prev.sample(&prev.gx, sx, sy);
                by += e * prev.sample(&prev.gy, sx, sy);
            }
        }
        let step = ((gyy * bx - gxy * by) / det, (gxx * by - gxy * bx) / det);
        d = (d.0 + step.0, d.1 + step.1);
        if step.0.abs() < 0.01 && step.1.abs() < 0.01 {
            break;
        }
    }
    if d.0.abs() > 3.0 * WINDOW_HALF as f64 || d.1.abs() > 3.0 * WINDOW_HALF as f64 {
        return None; // diverged
    }
    Some(d)
}

/// Track one point between two consecutive frames, coarse to fine.
fn track_point(prev: &[Gray], next: &[Gray], p: (f64, f64)) -> Option<(f64, f64)> {
    let levels = prev.len().min(next.len());
    let mut g = (0.0, 0.0);
    for level in (0..levels).rev() {
        let scale = (1 << level) as f64;
        let pl = (p.0 / scale, p.1 / scale);
        let d = lk_refine(&prev[level], &next[level], pl, g)?;
        g = if level > 0 { (2.0 * d.0, 2.0 * d.1) } else { d };
    }
    let q = (p.0 + g.0, p.1 + g.1);
    next[0].in_window(q.0, q.1).then_some(q)
}

/// Shi-Tomasi corners of the reference frame restricted to `region`.
fn shi_tomasi_corners(gray: &Gray, region: &BTreeSet<(u32, u32)>) -> Vec<(f64, f64)> {
    let margin = WINDOW_HALF + 1;
    let mut candidates: Vec<(f64, u32, u32)> = Vec::new();
    for &(x, y) in region {
        let (xi, yi) = (x as i64, y as i64);
        if xi < margin || yi < margin || xi >= gray.w - margin || yi >= gray.h - margin {
            continue;
        }
        let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
        for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                let i = ((yi + dy) * gray.w + xi + dx) as usize;
                a += gray.gx[i] * gray.gx[i];
                b += gray.gx[i] * gray.gy[i];
                c += gray.gy[i] * gray.gy[i];
            }
        }
        let min_eig = 0.5 * ((a + c) - ((a - c).powi(2) + 4.0 * b * b).sqrt());
        if min_eig > 0.0 {
            candidates.push((min_eig, x, y));
        }
    }
    let max_response = candidates
        .iter()
        .map(|c| c.0)
        .fold(0.0f64, f64::max);
    if max_response <= 0.0 {
        return Vec::new();
    }
    let threshold = QUALITY_LEVEL * max_response;
    candidates.retain(|c| c.0 >= threshold);
    candidates.sort_by(|l, r| r.0.total_cmp(&l.0).then(l.2.cmp(&r.2)).then(l.1.cmp(&r.1)));

    let mut picked: Vec<(f64, f64)> = Vec::new();
    for (_, x, y) in candidates {
        let p = (x as f64, y as f64);
        let clear = picked
            .iter()
            .all(|q| (q.0 - p.0).powi(2) + (q.1 - p.1).powi(2) >= MIN_CORNER_DISTANCE_SQ);
        if clear {
            picked.push(p);
            if picked.len() >= MAX_CORNERS {
                break;
            }
        }
    }
    picked
}

/// Detect corners in the reference frame (inside `region`) and track each
/// bidirectionally across the whole sequence; a track ends where LK
/// diverges or the window leaves the frame.
pub fn track_features(video: &FrameSequence, region: &[(u32, u32)]) -> Vec<FeatureTrack> {
    let r = video.reference_index();
    let n = video.len();
    let region: BTreeSet<(u32, u32)> = region.iter().copied().collect();
    let pyramids: Vec<Vec<Gray>> = video.frames().iter().map(build_pyramid).collect();
    let corners = shi_tomasi_corners(&pyramids[r][0], &region);

    corners
        .into_iter()
        .filter_map(|corner| {
            let mut forward = Vec::new();
            let mut p = corner;
            for f in r..n.saturating_sub(1) {
                match track_point(&pyramids[f], &pyramids[f + 1], p) {
                    Some(q) => {
                        forward.push(q);
                        p = q;
                    }
                    None => break,
                }
            }
            let mut backward = Vec::new();
            let mut p = corner;
            for f in (1..=r).rev() {
                match track_point(&pyramids[f], &pyramids[f - 1], p) {
                    Some(q) => {
                        backward.push(q);
                        p = q;
                    }
                    None => break,
                }
            }
            let start_frame = r - backward.len();
            let mut positions: Vec<(f64, f64)> = backward.into_iter().rev().collect();
            positions.push(corner);
            positions.extend(forward);
            (!positions.is_empty()).then_some(FeatureTrack {
                start_frame,
                positions,
            })
        })
        .collect()
}

/// Keep tracks that persist for at least 10 frames with per-axis
/// population standard deviation strictly below 2 pixels.
pub fn filter_tracks(tracks: Vec<FeatureTrack>) -> Vec<FeatureTrack> {
    tracks
        .into_iter()
        .filter(|t| {
            if t.len() < 10 {
                return false;
            }
            let (sx, sy) = t.coordinate_stddev();
            sx < 2.0 && sy < 2.0
        })
        .collect()
}

/// Write tracks as plain text: per line, the start frame followed by the
/// x,y pairs of consecutive frames.
pub fn save_tracks(tracks: &[FeatureTrack], path: &Path) -> Result<()> {
    let mut out = String::new();
    for t in tracks {
        out.push_str(&t.start_frame.to_string());
        for &(x, y) in &t.positions {
            out.push_str(&format!(" {x} {y}"));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_tracks(path: &Path) -> Result<Vec<FeatureTrack>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut tracks = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| {
            Error::Config(format!(
                "track file {}: line {}: {what}",
                path.display(),
                lineno + 1
            ))
        };
        let mut fields = line.split_whitespace();
        let start_frame: usize = fields
            .next()
            .unwrap()
            .parse()
            .map_err(|_| bad("start frame is not an integer"))?;
        let coords: Vec<f64> = fields
            .map(|f| f.parse().map_err(|_| bad("coordinate is not a number")))
            .collect::<Result<_>>()?;
        if coords.is_empty() || coords.len() % 2 != 0 {
            return Err(bad("expected a non-empty even list of coordinates"));
        }
        tracks.push(FeatureTrack {
            start_frame,
            positions: coords.chunks(2).map(|c| (c[0], c[1])).collect(),
        });
    }
    Ok(tracks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Rgb, RgbImage};

    fn blob_frame(w: u32, h: u32, shift: f64) -> RgbImage {
        // A few smooth Gaussian blobs: strong corners, friendly to LK.
        let centers = [(14.0, 13.0), (30.0, 20.0), (20.0, 30.0), (38.0, 34.0)];
        RgbImage::from_fn(w, h, |x, y| {
            let mut v = 20.0;
            for &(cx, cy) in &centers {
                let dx = x as f64 - (cx + shift);
                let dy = y as f64 - cy;
                v += 215.0 * (-(dx * dx + dy * dy) / 18.0).exp();
            }
            let v = v.clamp(0.0, 255.0) as u8;
            Rgb([v, v, v])
        })
    }

    fn full_region(w: u32, h: u32) -> Vec<(u32, u32)> {
        (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).collect()
    }

    #[test]
    fn static_video_yields_stationary_tracks() {
        let frames = vec![blob_frame(52, 48, 0.0); 12];
        let video = FrameSequence::from_frames(frames).unwrap();
        let tracks = track_features(&video, &full_region(52, 48));
        assert!(!tracks.is_empty(), "blobs should produce corners");
        for t in &tracks {
            assert_eq!(t.len(), 12, "nothing moves, nothing should be lost");
            let (sx, sy) = t.coordinate_stddev();
            assert_eq!((sx, sy), (0.0, 0.0));
        }
    }

    #[test]
    fn uniform_translation_is_tracked_to_a_tenth_of_a_pixel() {
        let n = 6;
        let frames: Vec<_> = (0..n).map(|f| blob_frame(64, 48, f as f64)).collect();
        let mut video = FrameSequence::from_frames(frames).unwrap();
        video.set_reference_index(0).unwrap();
        let tracks = track_features(&video, &full_region(64, 48));
        let long: Vec<_> = tracks.iter().filter(|t| t.len() == n).collect();
        assert!(!long.is_empty());
        for t in long {
            for k in 1..t.positions.len() {
                let dx = t.positions[k].0 - t.positions[k - 1].0;
                let dy = t.positions[k].1 - t.positions[k - 1].1;
                assert!((dx - 1.0).abs() <= 0.1, "dx = {dx}");
                assert!(dy.abs() <= 0.1, "dy = {dy}");
            }
        }
    }

    #[test]
    fn flat_region_has_no_corners() {
        let frames = vec![RgbImage::from_pixel(48, 48, Rgb([128; 3])); 4];
        let video = FrameSequence::from_frames(frames).unwrap();
        assert!(track_features(&video, &full_region(48, 48)).is_empty());
    }

    fn constant_track(len: usize, x: f64) -> FeatureTrack {
        FeatureTrack {
            start_frame: 0,
            positions: vec![(x, 5.0); len],
        }
    }

    #[test]
    fn filter_applies_both_rules_with_exact_boundaries() {
        let nine = constant_track(9, 1.0);
        let ten = constant_track(10, 1.0);
        let twenty = constant_track(20, 1.0);
        // x alternating between 0 and 6: population stddev exactly 3.
        let wobble_3 = FeatureTrack {
            start_frame: 0,
            positions: (0..20).map(|k| ((6 * (k % 2)) as f64, 0.0)).collect(),
        };
        // x alternating 0/4: stddev exactly 2 — still removed (strict <).
        let wobble_2 = FeatureTrack {
            start_frame: 0,
            positions: (0..20).map(|k| ((4 * (k % 2)) as f64, 0.0)).collect(),
        };
        let kept = filter_tracks(vec![
            nine,
            ten.clone(),
            twenty.clone(),
            wobble_3,
            wobble_2,
        ]);
        assert_eq!(kept, vec![ten, twenty]);
    }

    #[test]
    fn track_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tracks.txt");
        let tracks = vec![
            FeatureTrack {
                start_frame: 3,
                positions: vec![(1.5, 2.25), (1.75, 2.0)],
            },
            FeatureTrack {
                start_frame: 0,
                positions: vec![(10.0, 20.0)],
            },
        ];
        save_tracks(&tracks, &path).unwrap();
        assert_eq!(load_tracks(&path).unwrap(), tracks);

        std::fs::write(&path, "0 1.0\n").unwrap();
        assert!(matches!(load_tracks(&path), Err(Error::Config(_))));
    }
}
