//! Laplacian hole-filling over the space-time grid.
//!
//! Invisible entries of the region are treated as unknowns of the
//! discrete Laplace equation on the 6-connected lattice (4 spatial + 2
//! temporal neighbors); visible entries are Dirichlet boundary values.
//! Invisible entries outside the region take no part in the system.

use std::collections::{BTreeSet, HashMap, VecDeque};

use crate::error::{Error, Result};
use crate::video::{FrameSequence, VisibilityVolume};

const MAX_SWEEPS: usize = 10_000;
const TOLERANCE: f64 = 1e-3;

/// Fill every invisible (pixel, frame) entry of `region` by Gauss-Seidel
/// relaxation until the largest update drops below 1e-3 intensity levels
/// (or 10,000 sweeps). Errors when an invisible component has no visible
/// neighbor anywhere on its boundary.
pub fn inpaint(
    video: &FrameSequence,
    visibility: &VisibilityVolume,
    region: &[(u32, u32)],
) -> Result<FrameSequence> {
    let (w, h, n) = (video.width(), video.height(), video.len());
    let in_region: BTreeSet<(u32, u32)> = region.iter().copied().collect();

    // Unknowns in a fixed (frame, y, x) order so sweeps are deterministic.
    let mut unknowns: Vec<(u32, u32, usize)> = Vec::new();
    for f in 0..n {
        for y in 0..h {
            for x in 0..w {
                if in_region.contains(&(x, y)) && !visibility.is_visible(f, x, y) {
                    unknowns.push((x, y, f));
                }
            }
        }
    }
    let reference_index = video.reference_index();
    let mut frames = video.frames().to_vec();
    if unknowns.is_empty() {
        let mut out = FrameSequence::from_frames(frames)?;
        out.set_reference_index(reference_index)?;
        return Ok(out);
    }

    let index: HashMap<(u32, u32, usize), usize> = unknowns
        .iter()
        .enumerate()
        .map(|(i, &u)| (u, i))
        .collect();

    // For every unknown: fixed Dirichlet neighbor values and links to
    // other unknowns.
    let neighbors = |x: u32, y: u32, f: usize| {
        let mut out: Vec<(u32, u32, usize)> = Vec::with_capacity(6);
        if x > 0 {
            out.push((x - 1, y, f));
        }
        if x + 1 < w {
            out.push((x + 1, y, f));
        }
        if y > 0 {
            out.push((x, y - 1, f));
        }
        if y + 1 < h {
            out.push((x, y + 1, f));
        }
        if f > 0 {
            out.push((x, y, f - 1));
        }
        if f + 1 < n {
            out.push((x, y, f + 1));
        }
        out
    };

    let mut dirichlet_sum: Vec<[f64; 3]> = vec![[0.0; 3]; unknowns.len()];
    let mut dirichlet_count: Vec<usize> = vec![0; unknowns.len()];
    let mut links: Vec<Vec<usize>> = vec![Vec::new(); unknowns.len()];
    for (i, &(x, y, f)) in unknowns.iter().enumerate() {
        for (nx, ny, nf) in neighbors(x, y, f) {
            if visibility.is_visible(nf, nx, ny) {
                let c = video.pixel(nf, nx, ny);
                for ch in 0..3 {
                    dirichlet_sum[i][ch] += c[ch] as f64;
                }
                dirichlet_count[i] += 1;
            } else if let Some(&j) = index.get(&(nx, ny, nf)) {
                links[i].push(j);
            }
            // Invisible entries outside the region are not part of the system.
        }
    }

    // Every connected component of unknowns must touch at least one
    // Dirichlet value, otherwise its subsystem has no unique solution.
    let mut component = vec![usize::MAX; unknowns.len()];
    for start in 0..unknowns.len() {
        if component[start] != usize::MAX {
            continue;
        }
        let mut members = Vec::new();
        let mut queue = VecDeque::from([start]);
        component[start] = start;
        let mut anchored = false;
        while let Some(i) = queue.pop_front() {
            members.push(i);
            anchored |= dirichlet_count[i] > 0;
            for &j in &links[i] {
                if component[j] == usize::MAX {
                    component[j] = start;
                    queue.push_back(j);
                }
            }
        }
        if !anchored {
            let (x, y, f) = unknowns[start];
            return Err(Error::IsolatedInvisible {
                x,
                y,
                frame: f,
                size: members.len(),
            });
        }
    }

    // Gauss-Seidel, warm-started from whatever the warp left in place.
    let mut values: Vec<[f64; 3]> = unknowns
        .iter()
        .map(|&(x, y, f)| {
            let c = video.pixel(f, x, y);
            [c[0] as f64, c[1] as f64, c[2] as f64]
        })
        .collect();
    for _ in 0..MAX_SWEEPS {
        let mut max_update = 0.0f64;
        for i in 0..unknowns.len() {
            let degree = dirichlet_count[i] + links[i].len();
            debug_assert!(degree > 0, "anchored components have neighbors");
            let mut sum = dirichlet_sum[i];
            for &j in &links[i] {
                for ch in 0..3 {
                    sum[ch] += values[j][ch];
                }
            }
            for ch in 0..3 {
                let v = sum[ch] / degree as f64;
                max_update = max_update.max((v - values[i][ch]).abs());
                values[i][ch] = v;
            }
        }
        if max_update < TOLERANCE {
            break;
        }
    }

    for (i, &(x, y, f)) in unknowns.iter().enumerate() {
        let px = image::Rgb([
            values[i][0].round().clamp(0.0, 255.0) as u8,
            values[i][1].round().clamp(0.0, 255.0) as u8,
            values[i][2].round().clamp(0.0, 255.0) as u8,
        ]);
        frames[f].put_pixel(x, y, px);
    }
    let mut out = FrameSequence::from_frames(frames)?;
    out.set_reference_index(reference_index)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Rgb, RgbImage};

    fn constant_video(w: u32, h: u32, n: usize, v: u8) -> FrameSequence {
        FrameSequence::from_frames(vec![RgbImage::from_pixel(w, h, Rgb([v; 3])); n]).unwrap()
    }

    fn full_region(w: u32, h: u32) -> Vec<(u32, u32)> {
        (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).collect()
    }

    #[test]
    fn fully_visible_input_is_returned_unchanged() {
        let video = constant_video(4, 4, 3, 77);
        let vis = VisibilityVolume::all_visible(4, 4, 3);
        let out = inpaint(&video, &vis, &full_region(4, 4)).unwrap();
        for f in 0..3 {
            assert_eq!(out.frame(f), video.frame(f));
        }
        assert_eq!(out.reference_index(), video.reference_index());
    }

    #[test]
    fn single_hole_takes_the_surrounding_constant() {
        let mut frames = vec![RgbImage::from_pixel(5, 5, Rgb([200, 100, 50])); 3];
        frames[1].put_pixel(2, 2, Rgb([0, 0, 0])); // garbage under the hole
        let video = FrameSequence::from_frames(frames).unwrap();
        let mut vis = VisibilityVolume::all_visible(5, 5, 3);
        vis.set(1, 2, 2, false);
        let out = inpaint(&video, &vis, &full_region(5, 5)).unwrap();
        assert_eq!(out.pixel(1, 2, 2), [200, 100, 50]);
    }

    #[test]
    fn temporal_gap_on_a_ramp_is_filled_with_the_ramp() {
        // Every pixel of frame f holds 20·f: the harmonic solution of any
        // interior gap is the ramp itself.
        let n = 11;
        let frames: Vec<RgbImage> = (0..n)
            .map(|f| RgbImage::from_pixel(4, 4, Rgb([(20 * f) as u8; 3])))
            .collect();
        let video = FrameSequence::from_frames(frames).unwrap();
        let mut vis = VisibilityVolume::all_visible(4, 4, n);
        for f in 3..7 {
            vis.set(f, 1, 1, false);
            vis.set(f, 2, 1, false);
        }
        let out = inpaint(&video, &vis, &full_region(4, 4)).unwrap();
        for f in 3..7 {
            assert_eq!(out.pixel(f, 1, 1), [(20 * f) as u8; 3]);
            assert_eq!(out.pixel(f, 2, 1), [(20 * f) as u8; 3]);
        }
    }

    #[test]
    fn isolated_component_is_reported() {
        // The region is one pixel, invisible in every frame; its spatial
        // neighbors are invisible too (and outside the region), so there
        // is no boundary value anywhere.
        let video = constant_video(3, 3, 4, 10);
        let mut vis = VisibilityVolume::all_visible(3, 3, 4);
        for f in 0..4 {
            for y in 0..3 {
                for x in 0..3 {
                    vis.set(f, x, y, false);
                }
            }
        }
        let err = inpaint(&video, &vis, &[(1, 1)]).unwrap_err();
        assert!(err.is_numerical());
        match err {
            Error::IsolatedInvisible { x, y, frame, size } => {
                assert_eq!((x, y, frame), (1, 1, 0));
                assert_eq!(size, 4);
            }
            other => panic!("expected IsolatedInvisible, got {other:?}"),
        }
    }
}
